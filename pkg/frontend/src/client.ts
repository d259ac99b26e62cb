// Console view model.  All protocol decisions are server-side: the
// palette mirrors the server's last legal_moves event, submissions go
// through POST and rejections are rendered without touching the
// transcript.  Events apply in sequence-number order and reconnecting
// with the last seen sequence number resumes without gaps.

import type {
  ActorId,
  FrameIndicator,
  KbRecord,
  MoveDict,
  MoveKind,
  RejectionReason,
  SessionView,
  WireEvent,
} from './wire.js';

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
}

export interface ConsoleOptions {
  baseUrl: string; // e.g. http://127.0.0.1:8040
  sessionId: string;
  credential: string;
  actor: ActorId;
  socketFactory?: (url: string) => SocketLike;
  fetchImpl?: typeof fetch;
  autoReconnect?: boolean;
  reconnectDelayMs?: number;
}

export type SubmitOutcome =
  | { accepted: true; seq: number }
  | { accepted: false; reason: RejectionReason };

export class SessionConsole {
  readonly actor: ActorId;
  transcript: MoveDict[] = [];
  lastSeq = 0;
  palette: MoveKind[] = [];
  frame: FrameIndicator | null = null;
  terminalEligible = false;
  rejection: RejectionReason | null = null;
  kb: KbRecord[] = [];
  connected = false;
  retryBanner = false;
  closedReason: string | null = null;
  fatalError: string | null = null;

  private readonly options: ConsoleOptions;
  private readonly fetchImpl: typeof fetch;
  private socket: SocketLike | null = null;
  private listeners: Array<() => void> = [];
  private seqWaiters: Array<{ seq: number; resolve: () => void }> = [];
  private stopped = false;

  constructor(options: ConsoleOptions) {
    this.options = options;
    this.actor = options.actor;
    this.fetchImpl = options.fetchImpl ?? fetch.bind(globalThis);
  }

  onChange(listener: () => void): void {
    this.listeners.push(listener);
  }

  private changed(): void {
    for (const listener of this.listeners) listener();
    this.seqWaiters = this.seqWaiters.filter((waiter) => {
      if (this.lastSeq >= waiter.seq) {
        waiter.resolve();
        return false;
      }
      return true;
    });
  }

  private wsUrl(): string {
    const base = this.options.baseUrl.replace(/^http/, 'ws');
    return `${base}/sessions/${this.options.sessionId}/stream`;
  }

  /** Open the stream; resolves once the first legal_moves snapshot arrives. */
  connect(): Promise<void> {
    this.stopped = false;
    const factory =
      this.options.socketFactory ??
      ((url: string) => new WebSocket(url) as unknown as SocketLike);
    return new Promise((resolve, reject) => {
      const socket = factory(this.wsUrl());
      this.socket = socket;
      let settled = false;
      const fail = (message: string) => {
        if (!settled) {
          settled = true;
          reject(new Error(message));
        }
      };
      socket.onopen = () => {
        socket.send(
          JSON.stringify({
            credential: this.options.credential,
            last_seq: this.lastSeq,
          }),
        );
      };
      socket.onmessage = (ev) => {
        const event = JSON.parse(String(ev.data)) as WireEvent;
        if (event.type === 'error') {
          this.fatalError = String(event.payload['message'] ?? 'stream error');
          this.changed();
          fail(this.fatalError);
          return;
        }
        this.apply(event);
        if (!settled && event.type === 'legal_moves') {
          settled = true;
          this.connected = true;
          this.retryBanner = false;
          this.changed();
          resolve();
        }
      };
      socket.onerror = () => fail('connection failed');
      socket.onclose = () => {
        this.connected = false;
        fail('stream closed during handshake');
        if (!this.stopped && this.closedReason === null && this.fatalError === null) {
          this.retryBanner = true;
          this.changed();
          if (this.options.autoReconnect ?? true) {
            setTimeout(() => {
              if (!this.stopped) void this.connect().catch(() => undefined);
            }, this.options.reconnectDelayMs ?? 500);
          }
        }
      };
    });
  }

  disconnect(): void {
    this.stopped = true;
    this.socket?.close();
    this.socket = null;
    this.connected = false;
  }

  apply(event: WireEvent): void {
    switch (event.type) {
      case 'move_accepted': {
        if (event.seq > this.lastSeq) {
          this.transcript.push(event.payload['move'] as MoveDict);
          this.lastSeq = event.seq;
        }
        break;
      }
      case 'legal_moves': {
        const payload = event.payload as {
          legal: Record<ActorId, MoveKind[]>;
          terminal_eligible: boolean;
          frame: FrameIndicator | null;
        };
        this.palette = payload.legal[this.actor] ?? [];
        this.terminalEligible = payload.terminal_eligible;
        this.frame = payload.frame;
        break;
      }
      case 'session_closed': {
        this.closedReason = String(event.payload['reason'] ?? 'closed');
        break;
      }
      default:
        return; // move_rejected arrives via submit(); ping is transport noise
    }
    this.changed();
  }

  canSubmit(kind: MoveKind): boolean {
    return this.palette.includes(kind);
  }

  /** Topic the next submission defaults to: the open dialogue's, else a fresh one. */
  suggestedTopic(): string {
    return this.frame?.topic ?? `t${this.lastSeq + 1}`;
  }

  async submit(
    kind: MoveKind,
    content?: string,
    topic?: string,
    opts?: { force?: boolean },
  ): Promise<SubmitOutcome> {
    if (!opts?.force && !this.canSubmit(kind)) {
      const reason: RejectionReason = {
        error: 'PaletteGuard',
        message: `${kind} is not currently legal for ${this.actor}`,
        kind,
      };
      this.rejection = reason;
      this.changed();
      return { accepted: false, reason };
    }
    const isEnd = kind === 'end_explanation' || kind === 'end_argument';
    const move: MoveDict = {
      actor: isEnd ? null : this.actor,
      kind,
      topic: topic ?? this.suggestedTopic(),
    };
    if (content) move.content = content;
    const response = await this.fetchImpl(
      `${this.options.baseUrl}/sessions/${this.options.sessionId}/moves`,
      {
        method: 'POST',
        headers: { 'content-type': 'application/json' },
        body: JSON.stringify({ credential: this.options.credential, move }),
      },
    );
    if (!response.ok) {
      const detail = await response.text();
      const reason: RejectionReason = {
        error: `HTTP${response.status}`,
        message: detail,
        kind,
      };
      this.rejection = reason;
      this.changed();
      return { accepted: false, reason };
    }
    const event = (await response.json()) as WireEvent;
    if (event.type === 'move_rejected') {
      const reason = (event.payload as { reason: RejectionReason }).reason;
      this.rejection = reason;
      this.changed();
      return { accepted: false, reason };
    }
    this.rejection = null;
    this.changed();
    return { accepted: true, seq: event.seq };
  }

  async refreshView(): Promise<SessionView> {
    const response = await this.fetchImpl(
      `${this.options.baseUrl}/sessions/${this.options.sessionId}`,
    );
    if (!response.ok) throw new Error(`view failed: ${response.status}`);
    const view = (await response.json()) as SessionView;
    this.kb = view.kb;
    this.changed();
    return view;
  }

  async exportTags(): Promise<string> {
    const response = await this.fetchImpl(
      `${this.options.baseUrl}/sessions/${this.options.sessionId}/export?format=tags`,
    );
    if (!response.ok) throw new Error(`export failed: ${response.status}`);
    return response.text();
  }

  /** Resolve once the transcript has caught up to the given sequence number. */
  waitForSeq(seq: number, timeoutMs = 5000): Promise<void> {
    if (this.lastSeq >= seq) return Promise.resolve();
    return new Promise((resolve, reject) => {
      const timer = setTimeout(
        () => reject(new Error(`timed out waiting for seq ${seq} (at ${this.lastSeq})`)),
        timeoutMs,
      );
      this.seqWaiters.push({
        seq,
        resolve: () => {
          clearTimeout(timer);
          resolve();
        },
      });
    });
  }
}

export async function createSession(
  baseUrl: string,
  mode: 'woz' | 'auto',
  kb?: KbRecord[],
  fetchImpl: typeof fetch = fetch.bind(globalThis),
): Promise<import('./wire.js').CreatedSession> {
  const response = await fetchImpl(`${baseUrl}/sessions`, {
    method: 'POST',
    headers: { 'content-type': 'application/json' },
    body: JSON.stringify(kb ? { mode, kb } : { mode }),
  });
  if (!response.ok) throw new Error(`create failed: ${response.status}`);
  return response.json();
}
