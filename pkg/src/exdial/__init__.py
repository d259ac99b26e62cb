"""Explanation dialogue games: engine, trace tools, analytics, agents, service."""

from exdial.protocol import (
    Actor,
    DialogueFrame,
    FrameState,
    FrameType,
    IllegalMove,
    Move,
    MoveKind,
    NotTerminalEligible,
    ProtocolError,
    ProtocolTables,
    QuestionSubtype,
    SessionState,
    StaleTopic,
    TopicMismatch,
    apply_move,
    auto_close,
    initial_session,
    is_terminal_eligible,
    legal_moves,
    protocol_tables,
    replay,
)

__all__ = [
    "Actor",
    "DialogueFrame",
    "FrameState",
    "FrameType",
    "IllegalMove",
    "Move",
    "MoveKind",
    "NotTerminalEligible",
    "ProtocolError",
    "ProtocolTables",
    "QuestionSubtype",
    "SessionState",
    "StaleTopic",
    "TopicMismatch",
    "apply_move",
    "auto_close",
    "initial_session",
    "is_terminal_eligible",
    "legal_moves",
    "protocol_tables",
    "replay",
]
