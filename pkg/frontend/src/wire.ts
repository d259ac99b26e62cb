// Wire protocol types for the session service.  This file is the only
// coupling between the console and the backend.

export type ActorId = 'Q' | 'E';

export type MoveKind =
  | 'explain'
  | 'further_explain'
  | 'affirm'
  | 'return_question'
  | 'clarify'
  | 'affirm_argument'
  | 'counter_argument'
  | 'begin_question'
  | 'begin_explanation'
  | 'begin_argument'
  | 'end_explanation'
  | 'end_argument';

export interface MoveDict {
  actor: ActorId | null;
  kind: MoveKind;
  topic: string;
  content?: string;
  question_subtype?: 'why' | 'how' | 'what';
  counterfactual?: boolean;
}

export interface FrameIndicator {
  type: 'explanation' | 'argumentation';
  state: string;
  topic: string;
}

export interface LegalMovesPayload {
  legal: { Q: MoveKind[]; E: MoveKind[] };
  terminal_eligible: boolean;
  frame: FrameIndicator | null;
}

export interface RejectionReason {
  error: string;
  message: string;
  kind: MoveKind;
  state?: string;
}

export interface WireEvent {
  type:
    | 'move_accepted'
    | 'move_rejected'
    | 'legal_moves'
    | 'session_closed'
    | 'error'
    | 'ping';
  seq: number;
  payload: Record<string, unknown>;
}

export interface KbRecord {
  topic: string;
  prediction: string;
  gaze_evidence?: string;
  causal_history?: string;
}

export interface SessionView extends LegalMovesPayload {
  session_id: string;
  mode: 'woz' | 'auto';
  seq: number;
  history: MoveDict[];
  completed_dialogues: number;
  closed: boolean;
  kb: KbRecord[];
}

export interface CreatedSession {
  session_id: string;
  mode: string;
  created_at: number;
  credentials: { Q: string; E: string };
}
