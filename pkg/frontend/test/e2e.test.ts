// End-to-end: two consoles (participant Q, wizard E) replay the
// six-move embedded-argument dialogue through the live Python service.
// At every step each console's palette must equal the server's legal
// moves for that role, and the exported trace must validate as a
// complete game through the backend validator CLI.

import { afterAll, beforeAll, describe, expect, it } from 'vitest';
import { spawn, spawnSync, type ChildProcess } from 'node:child_process';
import { mkdtempSync, writeFileSync } from 'node:fs';
import { tmpdir } from 'node:os';
import { join } from 'node:path';
import WebSocket from 'ws';
import { SessionConsole, createSession, type SocketLike } from '../src/client.js';
import type { ActorId, MoveKind, SessionView } from '../src/wire.js';

const PORT = 8410 + (process.pid % 500);
const BASE = `http://127.0.0.1:${PORT}`;
const PYTHON = process.env.EXDIAL_PYTHON ?? 'python3';

let server: ChildProcess;

const socketFactory = (url: string) => new WebSocket(url) as unknown as SocketLike;

async function waitForServer(): Promise<void> {
  for (let attempt = 0; attempt < 100; attempt++) {
    try {
      const response = await fetch(`${BASE}/sessions/probe`);
      if (response.status === 404) return; // service is answering
    } catch {
      // not up yet
    }
    await new Promise((resolve) => setTimeout(resolve, 150));
  }
  throw new Error('service did not come up');
}

beforeAll(async () => {
  const dataDir = mkdtempSync(join(tmpdir(), 'exdial-e2e-'));
  server = spawn(
    PYTHON,
    ['-m', 'exdial.cli', 'serve', '--port', String(PORT), '--data', dataDir],
    { stdio: 'ignore' },
  );
  await waitForServer();
}, 30000);

afterAll(() => {
  server?.kill();
});

const ARGUMENT_GAME: Array<{ actor: ActorId; kind: MoveKind; content?: string }> = [
  { actor: 'E', kind: 'begin_explanation', content: 'Opponent is building toward the coast.' },
  { actor: 'Q', kind: 'return_question', content: 'Are they after the ferry route?' },
  { actor: 'E', kind: 'further_explain', content: 'The long way round, via the junction.' },
  { actor: 'Q', kind: 'begin_argument', content: 'No, they want the northern tunnel.' },
  { actor: 'E', kind: 'affirm_argument', content: 'Right, the tunnel is the new target.' },
  { actor: 'E', kind: 'end_argument' },
];

describe('live WoZ session', () => {
  it('replays the embedded-argument dialogue with palettes mirroring the server', async () => {
    const created = await createSession(BASE, 'woz', [
      { topic: 'cities', prediction: 'Opponent will extend toward Kansas City.' },
    ]);
    const consoles: Record<ActorId, SessionConsole> = {
      Q: new SessionConsole({
        baseUrl: BASE,
        sessionId: created.session_id,
        credential: created.credentials.Q,
        actor: 'Q',
        socketFactory,
        autoReconnect: false,
      }),
      E: new SessionConsole({
        baseUrl: BASE,
        sessionId: created.session_id,
        credential: created.credentials.E,
        actor: 'E',
        socketFactory,
        autoReconnect: false,
      }),
    };
    await consoles.Q.connect();
    await consoles.E.connect();
    await consoles.E.refreshView(); // wizard loads the kb panel
    expect(consoles.E.kb[0].topic).toBe('cities');

    // fresh session: wizard may open, participant may question
    await consoles.Q.waitForSeq(0);
    expect(consoles.E.palette).toEqual(['begin_explanation']);
    expect(consoles.Q.palette).toEqual(['begin_question']);

    let seq = 0;
    for (const step of ARGUMENT_GAME) {
      // both palettes must equal the server's legal move lists, every step
      const view = (await consoles.Q.refreshView()) as SessionView;
      for (const actor of ['Q', 'E'] as ActorId[]) {
        expect(consoles[actor].palette).toEqual(view.legal[actor]);
      }
      expect(consoles[step.actor].canSubmit(step.kind)).toBe(true);
      const outcome = await consoles[step.actor].submit(step.kind, step.content, 'cities');
      expect(outcome).toMatchObject({ accepted: true, seq: seq + 1 });
      seq += 1;
      await consoles.Q.waitForSeq(seq);
      await consoles.E.waitForSeq(seq);
    }

    // both views converged on the same six-move transcript
    const kinds = ARGUMENT_GAME.map((s) => s.kind);
    expect(consoles.Q.transcript.map((m) => m.kind)).toEqual(kinds);
    expect(consoles.E.transcript.map((m) => m.kind)).toEqual(kinds);
    expect(consoles.Q.transcript.map((m) => m.actor)).toEqual([
      'E', 'Q', 'E', 'Q', 'E', null,
    ]);
    expect(consoles.Q.terminalEligible).toBe(true);

    // a forced illegal submission is rejected server-side and rendered
    // inline without touching the transcript
    expect(consoles.Q.canSubmit('clarify')).toBe(false);
    const rejected = await consoles.Q.submit('clarify', 'sneaky', 'cities', { force: true });
    expect(rejected.accepted).toBe(false);
    if (!rejected.accepted) expect(rejected.reason.error).toBe('IllegalMove');
    expect(consoles.Q.rejection?.error).toBe('IllegalMove');
    expect(consoles.Q.transcript).toHaveLength(6);

    // reconnecting mid-session resumes without gaps or duplicates
    consoles.Q.disconnect();
    const late = await consoles.E.submit('end_explanation');
    expect(late).toMatchObject({ accepted: true, seq: 7 });
    await consoles.Q.connect();
    await consoles.Q.waitForSeq(7);
    expect(consoles.Q.transcript.map((m) => m.kind)).toEqual(
      consoles.E.transcript.map((m) => m.kind),
    );

    // the exported tags round-trip through the backend validator as a
    // complete game
    const tags = await consoles.E.exportTags();
    expect(tags).toBe('[BE][RQ][FE][BA][AA][EA][EE]');
    const traceFile = join(mkdtempSync(join(tmpdir(), 'exdial-trace-')), 'trace.tags');
    writeFileSync(traceFile, tags + '\n');
    const result = spawnSync(PYTHON, ['-m', 'exdial.cli', 'validate', traceFile], {
      encoding: 'utf-8',
    });
    expect(result.status).toBe(0);
    const report = JSON.parse(result.stdout.trim());
    expect(report.valid).toBe(true);
    expect(report.complete).toBe(true);

    consoles.Q.disconnect();
    consoles.E.disconnect();
  }, 30000);

  it('surfaces bad credentials as a terminal error', async () => {
    const created = await createSession(BASE, 'woz');
    const console_ = new SessionConsole({
      baseUrl: BASE,
      sessionId: created.session_id,
      credential: 'forged',
      actor: 'Q',
      socketFactory,
      autoReconnect: false,
    });
    await expect(console_.connect()).rejects.toThrow(/credential/);
    expect(console_.fatalError).toMatch(/credential/);
    expect(console_.connected).toBe(false);
    console_.disconnect();
  });

  it('drives an auto-mode session where the machine wizard answers', async () => {
    const created = await createSession(BASE, 'auto', [
      { topic: 'routes', prediction: 'Opponent is hoarding green cards.' },
    ]);
    const participant = new SessionConsole({
      baseUrl: BASE,
      sessionId: created.session_id,
      credential: created.credentials.Q,
      actor: 'Q',
      socketFactory,
      autoReconnect: false,
    });
    await participant.connect();
    const outcome = await participant.submit('begin_question', 'what is happening', 'routes');
    expect(outcome).toMatchObject({ accepted: true, seq: 1 });
    await participant.waitForSeq(2); // the scripted explainer replied in-line
    expect(participant.transcript[1].actor).toBe('E');
    expect(participant.transcript[1].content).toContain('green cards');
    participant.disconnect();
  }, 15000);
});
