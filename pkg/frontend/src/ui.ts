// Single-page console: a join screen, then the live session view.
// The participant plays Q; the wizard plays E and also sees the
// knowledge-base records behind the agent's answers.

import { SessionConsole } from './client.js';
import type { ActorId, MoveKind } from './wire.js';

const MOVE_LABELS: Record<MoveKind, string> = {
  begin_question: 'Begin question',
  begin_explanation: 'Begin explanation',
  explain: 'Explain',
  further_explain: 'Further explain',
  affirm: 'Affirm',
  return_question: 'Return question',
  clarify: 'Clarify',
  begin_argument: 'Begin argument',
  affirm_argument: 'Affirm argument',
  counter_argument: 'Counter argument',
  end_argument: 'End argument',
  end_explanation: 'End explanation',
};

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text) node.textContent = text;
  return node;
}

function renderTranscript(console_: SessionConsole, container: HTMLElement): void {
  container.replaceChildren();
  console_.transcript.forEach((move, index) => {
    const row = el('div', `move actor-${move.actor ?? 'none'}`);
    const who = move.actor ?? '—';
    row.append(
      el('span', 'seq', String(index + 1)),
      el('span', 'who', who),
      el('span', 'kind', MOVE_LABELS[move.kind] ?? move.kind),
      el('span', 'text', move.content ?? ''),
    );
    container.append(row);
  });
  container.scrollTop = container.scrollHeight;
}

function renderPalette(
  console_: SessionConsole,
  container: HTMLElement,
  onPick: (kind: MoveKind) => void,
): void {
  container.replaceChildren();
  for (const kind of Object.keys(MOVE_LABELS) as MoveKind[]) {
    const button = el('button', 'palette-btn', MOVE_LABELS[kind]);
    button.disabled = !console_.canSubmit(kind);
    button.addEventListener('click', () => onPick(kind));
    container.append(button);
  }
}

export function mountConsole(root: HTMLElement, console_: SessionConsole): void {
  const status = el('div', 'status');
  const frameBox = el('div', 'frame-indicator');
  const rejectBox = el('div', 'rejection hidden');
  const transcript = el('div', 'transcript');
  const palette = el('div', 'palette');
  const kbPanel = el('div', 'kb-panel');
  const contentInput = el('input', 'content-input') as HTMLInputElement;
  contentInput.placeholder = 'free text for the move';
  const topicInput = el('input', 'topic-input') as HTMLInputElement;
  topicInput.placeholder = 'topic';
  const exportBtn = el('button', 'export-btn', 'Export trace');

  exportBtn.addEventListener('click', async () => {
    const text = await console_.exportTags();
    const blob = new Blob([text], { type: 'text/plain' });
    const link = el('a') as HTMLAnchorElement;
    link.href = URL.createObjectURL(blob);
    link.download = 'trace.tags';
    link.click();
    URL.revokeObjectURL(link.href);
  });

  const submit = async (kind: MoveKind) => {
    const topic = topicInput.value.trim() || undefined;
    const outcome = await console_.submit(kind, contentInput.value.trim() || undefined, topic);
    if (outcome.accepted) {
      contentInput.value = '';
    }
  };

  const redraw = () => {
    status.textContent = console_.closedReason
      ? `session closed (${console_.closedReason})`
      : console_.retryBanner
        ? 'connection lost, retrying…'
        : console_.connected
          ? `connected as ${console_.actor}${console_.terminalEligible ? ' · game may end here' : ''}`
          : 'connecting…';
    const frame = console_.frame;
    frameBox.textContent = frame
      ? `open: ${frame.type} · state ${frame.state} · topic ${frame.topic}`
      : 'no open dialogue';
    if (console_.rejection) {
      rejectBox.textContent = `rejected: ${console_.rejection.error} — ${console_.rejection.message}`;
      rejectBox.classList.remove('hidden');
    } else {
      rejectBox.classList.add('hidden');
    }
    if (!topicInput.value.trim()) topicInput.value = console_.suggestedTopic();
    renderTranscript(console_, transcript);
    renderPalette(console_, palette, submit);
    if (console_.actor === 'E') {
      kbPanel.replaceChildren(el('h3', '', 'Knowledge base'));
      for (const record of console_.kb) {
        kbPanel.append(
          el(
            'div',
            'kb-record',
            `${record.topic}: ${record.prediction}` +
              (record.gaze_evidence ? ` | ${record.gaze_evidence}` : '') +
              (record.causal_history ? ` | ${record.causal_history}` : ''),
          ),
        );
      }
    }
  };

  console_.onChange(redraw);
  root.replaceChildren(status, frameBox, transcript, rejectBox, palette, contentInput, topicInput, exportBtn);
  if (console_.actor === 'E') root.append(kbPanel);
  redraw();
}

export function mountJoinScreen(root: HTMLElement): void {
  const form = el('div', 'join');
  const server = el('input') as HTMLInputElement;
  server.value = `${location.protocol}//${location.hostname}:8040`;
  const sessionId = el('input') as HTMLInputElement;
  sessionId.placeholder = 'session id';
  const credential = el('input') as HTMLInputElement;
  credential.placeholder = 'credential';
  const role = el('select') as HTMLSelectElement;
  for (const [value, label] of [
    ['Q', 'participant (Q)'],
    ['E', 'wizard (E)'],
  ]) {
    const option = el('option') as HTMLOptionElement;
    option.value = value;
    option.textContent = label;
    role.append(option);
  }
  const joinBtn = el('button', '', 'Join session');
  const error = el('div', 'error');
  joinBtn.addEventListener('click', async () => {
    const console_ = new SessionConsole({
      baseUrl: server.value.trim(),
      sessionId: sessionId.value.trim(),
      credential: credential.value.trim(),
      actor: role.value as ActorId,
    });
    try {
      await console_.connect();
      await console_.refreshView();
    } catch (err) {
      error.textContent = `could not join: ${String(err)}`;
      return;
    }
    mountConsole(root, console_);
  });
  form.append(
    el('h2', '', 'Join an explanation dialogue session'),
    server,
    sessionId,
    credential,
    role,
    joinBtn,
    error,
  );
  root.replaceChildren(form);
}

if (typeof document !== 'undefined') {
  const root = document.getElementById('app');
  if (root) mountJoinScreen(root);
}
