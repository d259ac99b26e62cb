"""Explanation dialogue game engine.

Two parties play the game: Q (the questioner / explainee) and E (the
explainer).  A session is a stack of at most two open dialogue frames --
an Explanation frame, optionally with one Argumentation frame embedded
on top -- plus the full move history.  All operations are pure: they
take a state and return a new state, never mutating their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Callable, Optional


class Actor(str, Enum):
    """The two dialogue participants."""

    Q = "Q"  # questioner / explainee
    E = "E"  # explainer

    def other(self) -> "Actor":
        return Actor.E if self is Actor.Q else Actor.Q


class QuestionSubtype(str, Enum):
    WHY = "why"
    HOW = "how"
    WHAT = "what"


class MoveKind(str, Enum):
    """Utterance-level locutions plus dialogue control moves."""

    # explanation-dialogue locutions
    EXPLAIN = "explain"
    FURTHER_EXPLAIN = "further_explain"
    AFFIRM = "affirm"
    RETURN_QUESTION = "return_question"
    CLARIFY = "clarify"
    # argumentation-dialogue locutions
    AFFIRM_ARGUMENT = "affirm_argument"
    COUNTER_ARGUMENT = "counter_argument"
    # control moves
    BEGIN_QUESTION = "begin_question"
    BEGIN_EXPLANATION = "begin_explanation"
    BEGIN_ARGUMENT = "begin_argument"
    END_EXPLANATION = "end_explanation"
    END_ARGUMENT = "end_argument"


CONTROL_KINDS = frozenset(
    {
        MoveKind.BEGIN_QUESTION,
        MoveKind.BEGIN_EXPLANATION,
        MoveKind.BEGIN_ARGUMENT,
        MoveKind.END_EXPLANATION,
        MoveKind.END_ARGUMENT,
    }
)

END_KINDS = frozenset({MoveKind.END_EXPLANATION, MoveKind.END_ARGUMENT})

QUESTION_KINDS = frozenset(
    {MoveKind.BEGIN_QUESTION, MoveKind.RETURN_QUESTION, MoveKind.CLARIFY}
)

# Locutions legal inside each dialogue type.  further_explain is the one
# locution shared by both.
EXPLANATION_LOCUTIONS = frozenset(
    {
        MoveKind.EXPLAIN,
        MoveKind.AFFIRM,
        MoveKind.FURTHER_EXPLAIN,
        MoveKind.RETURN_QUESTION,
        MoveKind.CLARIFY,
    }
)
ARGUMENTATION_LOCUTIONS = frozenset(
    {MoveKind.AFFIRM_ARGUMENT, MoveKind.COUNTER_ARGUMENT, MoveKind.FURTHER_EXPLAIN}
)

# Termination rules: a frame may close only while its last locution is in
# this set.
EXPLANATION_TERMINATION = frozenset(
    {MoveKind.AFFIRM, MoveKind.EXPLAIN, MoveKind.FURTHER_EXPLAIN}
)
ARGUMENTATION_TERMINATION = frozenset(
    {MoveKind.AFFIRM_ARGUMENT, MoveKind.COUNTER_ARGUMENT}
)


class FrameType(str, Enum):
    EXPLANATION = "explanation"
    ARGUMENTATION = "argumentation"


class FrameState(str, Enum):
    # explanation frame
    Q_POSED = "q_posed"
    CLARIFY_PENDING = "clarify_pending"
    EXPLAINED = "explained"
    Q_AFFIRMED = "q_affirmed"
    BOTH_AFFIRMED = "both_affirmed"
    # argumentation frame
    A_POSED = "a_posed"
    A_EXPLAINED = "a_explained"
    A_AFFIRMED = "a_affirmed"


class ProtocolError(Exception):
    """Base class for dialogue-rule violations."""


class IllegalMove(ProtocolError):
    """(actor, kind) is not a legal move in the current state."""

    def __init__(self, actor: Optional[Actor], kind: MoveKind, state_desc: str):
        self.actor = actor
        self.kind = kind
        self.state_desc = state_desc
        who = actor.value if actor is not None else "-"
        super().__init__(f"illegal move {kind.value} by {who} in {state_desc}")


class TopicMismatch(ProtocolError):
    """Move topic differs from the open frame's topic."""

    def __init__(self, expected: str, got: str):
        self.expected = expected
        self.got = got
        super().__init__(f"topic {got!r} does not match open dialogue topic {expected!r}")


class StaleTopic(ProtocolError):
    """New dialogue reuses the topic of the dialogue that just closed."""

    def __init__(self, topic: str):
        self.topic = topic
        super().__init__(f"new dialogue must not reuse the just-closed topic {topic!r}")


class NotTerminalEligible(ProtocolError):
    """Session cannot be auto-closed in its current state."""


@dataclass(frozen=True)
class Move:
    """One utterance-level event.

    ``actor`` may be None only for the end_* control moves, which are
    neutral closings rather than utterances by one party.  ``content``
    and the question metadata are carried verbatim and never interpreted
    by the transition rules.
    """

    actor: Optional[Actor]
    kind: MoveKind
    topic: str
    content: Optional[str] = None
    question_subtype: Optional[QuestionSubtype] = None
    counterfactual: Optional[bool] = None

    def __post_init__(self) -> None:
        if not self.topic:
            raise ValueError("move topic must be a non-empty token")
        if self.actor is None and self.kind not in END_KINDS:
            raise ValueError(f"{self.kind.value} requires an actor")
        if self.question_subtype is not None and self.kind not in QUESTION_KINDS:
            raise ValueError("question_subtype is only valid on question moves")
        if self.counterfactual is not None and self.question_subtype not in (
            QuestionSubtype.WHY,
            QuestionSubtype.HOW,
        ):
            raise ValueError("counterfactual flag requires a why/how question")

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "actor": self.actor.value if self.actor is not None else None,
            "kind": self.kind.value,
            "topic": self.topic,
        }
        if self.content is not None:
            d["content"] = self.content
        if self.question_subtype is not None:
            d["question_subtype"] = self.question_subtype.value
        if self.counterfactual is not None:
            d["counterfactual"] = self.counterfactual
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Move":
        subtype = d.get("question_subtype")
        return cls(
            actor=Actor(d["actor"]) if d.get("actor") is not None else None,
            kind=MoveKind(d["kind"]),
            topic=d["topic"],
            content=d.get("content"),
            question_subtype=QuestionSubtype(subtype) if subtype is not None else None,
            counterfactual=d.get("counterfactual"),
        )


@dataclass(frozen=True)
class DialogueFrame:
    """One open dialogue instance and its protocol state.

    ``has_explanation`` records whether an explanation was already given
    in this frame; it gates the explain/further_explain split.
    ``argument_proposer`` is set on argumentation frames only and tracks
    whose argument is currently on the table.
    """

    type: FrameType
    topic: str
    state: FrameState
    last_locution: Optional[MoveKind] = None
    has_explanation: bool = False
    argument_proposer: Optional[Actor] = None

    def termination_set(self) -> frozenset[MoveKind]:
        if self.type is FrameType.EXPLANATION:
            return EXPLANATION_TERMINATION
        return ARGUMENTATION_TERMINATION

    def closeable(self) -> bool:
        """True iff the frame's last locution satisfies its termination rules."""
        return self.last_locution in self.termination_set()


@dataclass(frozen=True)
class SessionState:
    """Full session: open frame stack, move history, completion counters.

    The stack is at most two deep and an argumentation frame only ever
    sits above an explanation frame.  ``last_closed_topic`` is the topic
    of the most recently completed explanation dialogue; the next
    dialogue must pick a different one.
    """

    frames: tuple[DialogueFrame, ...] = ()
    history: tuple[Move, ...] = ()
    completed_dialogues: int = 0
    last_closed_topic: Optional[str] = None

    @property
    def top(self) -> Optional[DialogueFrame]:
        return self.frames[-1] if self.frames else None

    def describe(self) -> str:
        if not self.frames:
            return "no open dialogue"
        return "/".join(f"{f.type.value}:{f.state.value}" for f in self.frames)

    def to_summary(self) -> dict[str, Any]:
        """Deterministic dict form of the state, suitable for replay checks."""
        return {
            "frames": [
                {
                    "type": f.type.value,
                    "topic": f.topic,
                    "state": f.state.value,
                    "last_locution": f.last_locution.value if f.last_locution else None,
                    "has_explanation": f.has_explanation,
                    "argument_proposer": (
                        f.argument_proposer.value if f.argument_proposer else None
                    ),
                }
                for f in self.frames
            ],
            "history": [m.to_dict() for m in self.history],
            "completed_dialogues": self.completed_dialogues,
            "last_closed_topic": self.last_closed_topic,
        }


# --- transition relation -------------------------------------------------
#
# In-frame transitions are data: (frame type, state, actor, kind) -> rule.
# Guards cover the conditions a static key cannot express.  "responder"
# restricts argumentation replies to the non-proposer; the explanation
# guards split the one-time `explain` from later `further_explain`.

GUARDS: dict[str, Callable[[DialogueFrame, Actor], bool]] = {
    "first_explanation": lambda f, a: not f.has_explanation,
    "has_explanation": lambda f, a: f.has_explanation,
    "responder": lambda f, a: a is not f.argument_proposer,
}


@dataclass(frozen=True)
class TransitionRule:
    next_state: FrameState
    guard: Optional[str] = None
    swaps_proposer: bool = False

    def allows(self, frame: DialogueFrame, actor: Actor) -> bool:
        return self.guard is None or GUARDS[self.guard](frame, actor)


TransitionKey = tuple[FrameType, FrameState, Actor, MoveKind]

_E = FrameType.EXPLANATION
_A = FrameType.ARGUMENTATION

TRANSITIONS: dict[TransitionKey, TransitionRule] = {
    # explanation frame
    (_E, FrameState.Q_POSED, Actor.E, MoveKind.EXPLAIN): TransitionRule(
        FrameState.EXPLAINED, guard="first_explanation"
    ),
    (_E, FrameState.Q_POSED, Actor.E, MoveKind.FURTHER_EXPLAIN): TransitionRule(
        FrameState.EXPLAINED, guard="has_explanation"
    ),
    (_E, FrameState.Q_POSED, Actor.E, MoveKind.RETURN_QUESTION): TransitionRule(
        FrameState.CLARIFY_PENDING
    ),
    (_E, FrameState.CLARIFY_PENDING, Actor.Q, MoveKind.CLARIFY): TransitionRule(
        FrameState.Q_POSED
    ),
    (_E, FrameState.EXPLAINED, Actor.Q, MoveKind.AFFIRM): TransitionRule(
        FrameState.Q_AFFIRMED
    ),
    (_E, FrameState.EXPLAINED, Actor.Q, MoveKind.RETURN_QUESTION): TransitionRule(
        FrameState.Q_POSED
    ),
    (_E, FrameState.Q_AFFIRMED, Actor.E, MoveKind.AFFIRM): TransitionRule(
        FrameState.BOTH_AFFIRMED
    ),
    (_E, FrameState.Q_AFFIRMED, Actor.Q, MoveKind.RETURN_QUESTION): TransitionRule(
        FrameState.Q_POSED
    ),
    # argumentation frame
    (_A, FrameState.A_POSED, Actor.Q, MoveKind.AFFIRM_ARGUMENT): TransitionRule(
        FrameState.A_AFFIRMED, guard="responder"
    ),
    (_A, FrameState.A_POSED, Actor.E, MoveKind.AFFIRM_ARGUMENT): TransitionRule(
        FrameState.A_AFFIRMED, guard="responder"
    ),
    (_A, FrameState.A_POSED, Actor.Q, MoveKind.COUNTER_ARGUMENT): TransitionRule(
        FrameState.A_POSED, guard="responder", swaps_proposer=True
    ),
    (_A, FrameState.A_POSED, Actor.E, MoveKind.COUNTER_ARGUMENT): TransitionRule(
        FrameState.A_POSED, guard="responder", swaps_proposer=True
    ),
    (_A, FrameState.A_POSED, Actor.E, MoveKind.FURTHER_EXPLAIN): TransitionRule(
        FrameState.A_EXPLAINED
    ),
    (_A, FrameState.A_EXPLAINED, Actor.Q, MoveKind.AFFIRM_ARGUMENT): TransitionRule(
        FrameState.A_AFFIRMED
    ),
    (_A, FrameState.A_EXPLAINED, Actor.Q, MoveKind.COUNTER_ARGUMENT): TransitionRule(
        FrameState.A_POSED, swaps_proposer=True
    ),
}

# Commencement moves, legal only on an empty frame stack.
COMMENCEMENTS = frozenset(
    {(Actor.Q, MoveKind.BEGIN_QUESTION), (Actor.E, MoveKind.BEGIN_EXPLANATION)}
)

# States of the explanation frame from which an argument may be opened or
# the dialogue explicitly ended: exactly those whose last locution is a
# termination-rule locution.
_EXPLANATION_CLOSEABLE_STATES = frozenset(
    {FrameState.EXPLAINED, FrameState.Q_AFFIRMED, FrameState.BOTH_AFFIRMED}
)


@dataclass(frozen=True)
class ProtocolTables:
    """The static rule tables the engine runs on."""

    locutions: dict[FrameType, frozenset[MoveKind]]
    termination: dict[FrameType, frozenset[MoveKind]]
    commencement: frozenset[tuple[Actor, MoveKind]]
    transitions: dict[TransitionKey, TransitionRule]


def protocol_tables() -> ProtocolTables:
    """Return the locution sets, termination sets and transition relation."""
    return ProtocolTables(
        locutions={
            FrameType.EXPLANATION: EXPLANATION_LOCUTIONS,
            FrameType.ARGUMENTATION: ARGUMENTATION_LOCUTIONS,
        },
        termination={
            FrameType.EXPLANATION: EXPLANATION_TERMINATION,
            FrameType.ARGUMENTATION: ARGUMENTATION_TERMINATION,
        },
        commencement=COMMENCEMENTS,
        transitions=dict(TRANSITIONS),
    )


def initial_session() -> SessionState:
    """Fresh session: no open dialogue, empty history."""
    return SessionState()


def legal_moves(state: SessionState) -> frozenset[tuple[Actor, MoveKind]]:
    """All (actor, kind) pairs that apply_move would accept right now.

    End controls are listed for both actors; apply_move additionally
    accepts them with no actor at all.
    """
    top = state.top
    if top is None:
        return frozenset(COMMENCEMENTS)

    pairs: set[tuple[Actor, MoveKind]] = set()
    for (ftype, fstate, actor, kind), rule in TRANSITIONS.items():
        if ftype is top.type and fstate is top.state and rule.allows(top, actor):
            pairs.add((actor, kind))

    if top.type is FrameType.EXPLANATION:
        if top.state in _EXPLANATION_CLOSEABLE_STATES:
            pairs.add((Actor.Q, MoveKind.BEGIN_ARGUMENT))
            pairs.add((Actor.E, MoveKind.BEGIN_ARGUMENT))
            pairs.add((Actor.Q, MoveKind.END_EXPLANATION))
            pairs.add((Actor.E, MoveKind.END_EXPLANATION))
    elif top.closeable():
        pairs.add((Actor.Q, MoveKind.END_ARGUMENT))
        pairs.add((Actor.E, MoveKind.END_ARGUMENT))
    return frozenset(pairs)


def _check_topic(frame: DialogueFrame, move: Move) -> None:
    if move.topic != frame.topic:
        raise TopicMismatch(frame.topic, move.topic)


def apply_move(state: SessionState, move: Move) -> SessionState:
    """Apply one move, returning the successor state.

    Raises IllegalMove when (actor, kind) is not legal, TopicMismatch
    when the move's topic differs from the open frame's, and StaleTopic
    when a new dialogue reuses the just-closed topic.  The input state
    is never modified.
    """
    kind = move.kind
    top = state.top

    if kind in (MoveKind.BEGIN_QUESTION, MoveKind.BEGIN_EXPLANATION):
        if top is not None or (move.actor, kind) not in COMMENCEMENTS:
            raise IllegalMove(move.actor, kind, state.describe())
        if move.topic == state.last_closed_topic:
            raise StaleTopic(move.topic)
        if kind is MoveKind.BEGIN_QUESTION:
            frame = DialogueFrame(FrameType.EXPLANATION, move.topic, FrameState.Q_POSED)
        else:
            # Commencing with an explanation: the frame opens already
            # explained, so the implied locution is recorded as explain.
            frame = DialogueFrame(
                FrameType.EXPLANATION,
                move.topic,
                FrameState.EXPLAINED,
                last_locution=MoveKind.EXPLAIN,
                has_explanation=True,
            )
        return replace(
            state, frames=state.frames + (frame,), history=state.history + (move,)
        )

    if kind is MoveKind.BEGIN_ARGUMENT:
        # Arguments open only over an explanation frame whose last
        # locution satisfies a termination rule; arguments never nest.
        if (
            top is None
            or top.type is not FrameType.EXPLANATION
            or top.state not in _EXPLANATION_CLOSEABLE_STATES
        ):
            raise IllegalMove(move.actor, kind, state.describe())
        _check_topic(top, move)
        arg = DialogueFrame(
            FrameType.ARGUMENTATION,
            top.topic,
            FrameState.A_POSED,
            argument_proposer=move.actor,
        )
        return replace(
            state, frames=state.frames + (arg,), history=state.history + (move,)
        )

    if kind is MoveKind.END_ARGUMENT:
        if top is None or top.type is not FrameType.ARGUMENTATION or not top.closeable():
            raise IllegalMove(move.actor, kind, state.describe())
        _check_topic(top, move)
        # The closed argument settles the topic back into an explained
        # explanation dialogue.
        parent = replace(state.frames[-2], state=FrameState.EXPLAINED)
        return replace(
            state,
            frames=state.frames[:-2] + (parent,),
            history=state.history + (move,),
        )

    if kind is MoveKind.END_EXPLANATION:
        if (
            top is None
            or top.type is not FrameType.EXPLANATION
            or top.state not in _EXPLANATION_CLOSEABLE_STATES
        ):
            raise IllegalMove(move.actor, kind, state.describe())
        _check_topic(top, move)
        return replace(
            state,
            frames=state.frames[:-1],
            history=state.history + (move,),
            completed_dialogues=state.completed_dialogues + 1,
            last_closed_topic=top.topic,
        )

    # plain locution inside the open frame
    if top is None or move.actor is None:
        raise IllegalMove(move.actor, kind, state.describe())
    rule = TRANSITIONS.get((top.type, top.state, move.actor, kind))
    if rule is None or not rule.allows(top, move.actor):
        raise IllegalMove(move.actor, kind, state.describe())
    _check_topic(top, move)

    frame = replace(
        top,
        state=rule.next_state,
        last_locution=kind,
        has_explanation=top.has_explanation
        or kind in (MoveKind.EXPLAIN, MoveKind.FURTHER_EXPLAIN),
        argument_proposer=move.actor if rule.swaps_proposer else top.argument_proposer,
    )
    return replace(
        state, frames=state.frames[:-1] + (frame,), history=state.history + (move,)
    )


def is_terminal_eligible(state: SessionState) -> bool:
    """True iff the session may legally end here without explicit end moves.

    Every open frame's last locution must satisfy its frame type's
    termination rules; an empty stack is trivially eligible.
    """
    return all(f.closeable() for f in state.frames)


def auto_close(state: SessionState) -> SessionState:
    """Close all open frames innermost-first, as if end moves were issued.

    The synthesized end_argument/end_explanation moves are appended to
    the history so the result still replays deterministically.
    """
    if not is_terminal_eligible(state):
        raise NotTerminalEligible(f"cannot auto-close: {state.describe()}")
    while state.frames:
        frame = state.frames[-1]
        kind = (
            MoveKind.END_ARGUMENT
            if frame.type is FrameType.ARGUMENTATION
            else MoveKind.END_EXPLANATION
        )
        state = apply_move(state, Move(actor=None, kind=kind, topic=frame.topic))
    return state


def replay(moves: list[Move] | tuple[Move, ...]) -> SessionState:
    """Fold a move sequence from the initial session; raises on violations."""
    state = initial_session()
    for move in moves:
        state = apply_move(state, move)
    return state
