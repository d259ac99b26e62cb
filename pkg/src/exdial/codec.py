"""Trace language codec: bracketed tag traces and coded transcripts.

Tag traces look like ``[BQ][E][AF]``: one dialogue game per line, each
tag naming a locution or control move.  Tags carry no actors; the
protocol determines them, so this module resolves actors by walking the
engine state.  Coded transcripts are the ``code|text`` line format used
for hand-coded dialogue corpora.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from enum import IntEnum
from typing import Any, Optional

from exdial import protocol
from exdial.protocol import (
    Actor,
    FrameState,
    FrameType,
    IllegalMove,
    Move,
    MoveKind,
    ProtocolError,
    QuestionSubtype,
    SessionState,
    StaleTopic,
    TopicMismatch,
)

TAG_TO_KIND: dict[str, MoveKind] = {
    "BQ": MoveKind.BEGIN_QUESTION,
    "BE": MoveKind.BEGIN_EXPLANATION,
    "E": MoveKind.EXPLAIN,
    "FE": MoveKind.FURTHER_EXPLAIN,
    "AF": MoveKind.AFFIRM,
    "RQ": MoveKind.RETURN_QUESTION,
    "CL": MoveKind.CLARIFY,
    "BA": MoveKind.BEGIN_ARGUMENT,
    "AA": MoveKind.AFFIRM_ARGUMENT,
    "CA": MoveKind.COUNTER_ARGUMENT,
    "EA": MoveKind.END_ARGUMENT,
    "EE": MoveKind.END_EXPLANATION,
}
KIND_TO_TAG = {kind: tag for tag, kind in TAG_TO_KIND.items()}

# Fallback actor per tag, used only where the engine state does not
# determine one (illegal positions, or the either-party begin_argument --
# explainee-initiated arguments are the common case).
DEFAULT_ACTORS: dict[MoveKind, Optional[Actor]] = {
    MoveKind.BEGIN_QUESTION: Actor.Q,
    MoveKind.BEGIN_EXPLANATION: Actor.E,
    MoveKind.EXPLAIN: Actor.E,
    MoveKind.FURTHER_EXPLAIN: Actor.E,
    MoveKind.AFFIRM: Actor.Q,
    MoveKind.RETURN_QUESTION: Actor.Q,
    MoveKind.CLARIFY: Actor.Q,
    MoveKind.BEGIN_ARGUMENT: Actor.Q,
    MoveKind.AFFIRM_ARGUMENT: Actor.E,
    MoveKind.COUNTER_ARGUMENT: Actor.E,
    MoveKind.END_ARGUMENT: None,
    MoveKind.END_EXPLANATION: None,
}


class CodecError(Exception):
    """Base class for trace/transcript format errors."""


class UnknownTag(CodecError):
    def __init__(self, position: int, token: str):
        self.position = position
        self.token = token
        super().__init__(f"unknown tag {token!r} at position {position}")


class MalformedBracket(CodecError):
    def __init__(self, position: int, detail: str = "unbalanced brackets"):
        self.position = position
        super().__init__(f"{detail} near position {position}")


class UnknownCode(CodecError):
    def __init__(self, line: int, code: str):
        self.line = line
        self.code = code
        super().__init__(f"unknown code {code!r} on line {line}")


class MissingBoundary(CodecError):
    def __init__(self, detail: str):
        super().__init__(detail)


class UnmappableSequence(CodecError):
    """A transcript code has no legal protocol position."""

    def __init__(self, index: int, detail: str):
        self.index = index
        super().__init__(f"segment {index}: {detail}")


@dataclass(frozen=True)
class Tag:
    """One parsed tag: name plus optional explicit actor/topic suffixes."""

    name: str
    actor: Optional[Actor] = None
    topic: Optional[str] = None

    def render(self) -> str:
        if self.topic is not None:
            return f"[{self.name}:{self.actor.value if self.actor else ''}:{self.topic}]"
        if self.actor is not None:
            return f"[{self.name}:{self.actor.value}]"
        return f"[{self.name}]"


@dataclass(frozen=True)
class TagSequence:
    tags: tuple[Tag, ...]

    def render(self) -> str:
        return "".join(t.render() for t in self.tags)

    def __len__(self) -> int:
        return len(self.tags)


_BRACKET_RE = re.compile(r"\[([^\[\]]*)\]")


def parse_tags(text: str) -> TagSequence:
    """Parse a bracketed tag string into a TagSequence.

    Tags are case-insensitive and may carry suffixes: ``[BA:E]`` forces
    the actor, ``[BQ::p]`` or ``[BQ:Q:p]`` forces the topic.  Whitespace
    between brackets is ignored.
    """
    tags: list[Tag] = []
    pos = 0
    for i, match in enumerate(_BRACKET_RE.finditer(text), start=1):
        between = text[pos : match.start()]
        if between.strip():
            raise MalformedBracket(i, f"unexpected text {between.strip()!r}")
        pos = match.end()
        parts = match.group(1).split(":")
        if len(parts) > 3:
            raise MalformedBracket(i, f"too many suffixes in {match.group(0)!r}")
        name = parts[0].strip().upper()
        if name not in TAG_TO_KIND:
            raise UnknownTag(i, parts[0].strip())
        actor: Optional[Actor] = None
        if len(parts) >= 2 and parts[1].strip():
            token = parts[1].strip().upper()
            if token not in ("Q", "E"):
                raise MalformedBracket(i, f"bad actor suffix {parts[1]!r}")
            actor = Actor(token)
        topic: Optional[str] = None
        if len(parts) == 3:
            topic = parts[2].strip()
            if not topic:
                raise MalformedBracket(i, "empty topic suffix")
        tags.append(Tag(name, actor, topic))
    if text[pos:].strip():
        raise MalformedBracket(len(tags) + 1, f"unexpected text {text[pos:].strip()!r}")
    return TagSequence(tuple(tags))


_TOPIC_LETTERS = "pqrstuvwxyzabcdefghijklmno"


def _auto_topic(index: int) -> str:
    letter = _TOPIC_LETTERS[index % len(_TOPIC_LETTERS)]
    round_ = index // len(_TOPIC_LETTERS)
    return letter if round_ == 0 else f"{letter}{round_ + 1}"


def _new_dialogue_topic(state: SessionState) -> str:
    topic = _auto_topic(state.completed_dialogues)
    if topic == state.last_closed_topic:
        topic = _auto_topic(state.completed_dialogues + 1)
    return topic


def _infer_actor(state: SessionState, kind: MoveKind) -> Optional[Actor]:
    """Pick the actor the protocol determines for this kind, else a default."""
    top = state.top
    if top is not None:
        if kind is MoveKind.AFFIRM:
            if top.state is FrameState.EXPLAINED:
                return Actor.Q
            if top.state is FrameState.Q_AFFIRMED:
                return Actor.E
        elif kind is MoveKind.RETURN_QUESTION:
            if top.state is FrameState.Q_POSED:
                return Actor.E
            if top.state in (FrameState.EXPLAINED, FrameState.Q_AFFIRMED):
                return Actor.Q
        elif kind in (MoveKind.AFFIRM_ARGUMENT, MoveKind.COUNTER_ARGUMENT):
            if top.type is FrameType.ARGUMENTATION:
                if top.state is FrameState.A_POSED and top.argument_proposer:
                    return top.argument_proposer.other()
                if top.state is FrameState.A_EXPLAINED:
                    return Actor.Q
    return DEFAULT_ACTORS[kind]


def resolve_moves(tagseq: TagSequence) -> list[Move]:
    """Assign actors and topics to a tag sequence by walking the engine.

    Explicit suffixes win; otherwise the actor is the one the protocol
    determines in the current state (begin_argument defaults to the
    explainee).  The first dialogue gets topic ``p`` and each dialogue
    after a close gets a fresh token.  Resolution is total: tags that
    are illegal where they stand still resolve (with default actors) and
    the walk state simply does not advance there, so validation can
    report the violation later.
    """
    state = protocol.initial_session()
    moves: list[Move] = []
    for tag in tagseq.tags:
        kind = TAG_TO_KIND[tag.name]
        actor = tag.actor if tag.actor is not None else _infer_actor(state, kind)
        if kind in protocol.END_KINDS and tag.actor is None:
            actor = None
        if tag.topic is not None:
            topic = tag.topic
        elif kind in (MoveKind.BEGIN_QUESTION, MoveKind.BEGIN_EXPLANATION):
            topic = _new_dialogue_topic(state)
        elif state.top is not None:
            topic = state.top.topic
        else:
            topic = _new_dialogue_topic(state)
        move = Move(actor=actor, kind=kind, topic=topic)
        moves.append(move)
        try:
            state = protocol.apply_move(state, move)
        except ProtocolError:
            pass  # leave the walk state unchanged; validate_trace reports it
    return moves


def format_tags(moves: list[Move] | tuple[Move, ...]) -> str:
    """Render moves as a canonical bracketed string.

    Actor suffixes are emitted only where resolution would infer a
    different actor (in practice: explainer-initiated begin_argument),
    so parse -> resolve reproduces the (actor, kind) sequence.  Topics
    are never emitted; round-tripping is defined at the (actor, kind)
    level.
    """
    state = protocol.initial_session()
    out: list[str] = []
    for move in moves:
        inferred = _infer_actor(state, move.kind)
        if move.kind in protocol.END_KINDS:
            inferred = None
        name = KIND_TO_TAG[move.kind]
        if move.actor is not None and move.actor is not inferred:
            out.append(f"[{name}:{move.actor.value}]")
        else:
            out.append(f"[{name}]")
        try:
            state = protocol.apply_move(state, move)
        except ProtocolError:
            pass  # keep rendering; the walk state stays put on illegal moves
    return "".join(out)


@dataclass(frozen=True)
class ValidationReport:
    """Verdict of replaying a move sequence through the engine."""

    valid: bool
    failure_index: Optional[int] = None  # 1-based move ordinal
    reason: Optional[str] = None
    complete: bool = False
    dialogues_closed: int = 0

    def to_dict(self, trace: Optional[str] = None) -> dict[str, Any]:
        d: dict[str, Any] = {
            "valid": self.valid,
            "failure_index": self.failure_index,
            "reason": self.reason,
            "complete": self.complete,
            "dialogues_closed": self.dialogues_closed,
        }
        if trace is not None:
            d = {"trace": trace, **d}
        return d


def _reason_for(err: ProtocolError) -> str:
    if isinstance(err, IllegalMove):
        return f"IllegalMove({err.kind.value})"
    if isinstance(err, TopicMismatch):
        return "TopicMismatch"
    if isinstance(err, StaleTopic):
        return "StaleTopic"
    return type(err).__name__


def validate_trace(moves: list[Move] | tuple[Move, ...]) -> ValidationReport:
    """Replay moves from a fresh session and report the verdict.

    Protocol violations are data, not exceptions: the report carries the
    1-based index and reason of the first offending move.  A trace is
    complete when it may legally end where it stops (open frames all
    satisfy their termination rules).
    """
    state = protocol.initial_session()
    for i, move in enumerate(moves, start=1):
        try:
            state = protocol.apply_move(state, move)
        except ProtocolError as err:
            return ValidationReport(
                valid=False,
                failure_index=i,
                reason=_reason_for(err),
                complete=False,
                dialogues_closed=state.completed_dialogues,
            )
    complete = protocol.is_terminal_eligible(state)
    closed = state.completed_dialogues
    if complete:
        closed = protocol.auto_close(state).completed_dialogues
    return ValidationReport(valid=True, complete=complete, dialogues_closed=closed)


def validate_text(text: str) -> ValidationReport:
    """Validate one raw trace line; parse failures become invalid reports."""
    try:
        tags = parse_tags(text)
    except UnknownTag as err:
        return ValidationReport(
            valid=False, failure_index=err.position, reason=f"UnknownTag({err.token})"
        )
    except MalformedBracket as err:
        return ValidationReport(
            valid=False, failure_index=err.position, reason="MalformedBracket"
        )
    return validate_trace(resolve_moves(tags))


def read_trace_lines(text: str) -> list[str]:
    """Split a trace file into trace lines, dropping blanks and # comments."""
    lines = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        lines.append(line)
    return lines


# --- coded transcripts ----------------------------------------------------

class DialogueType(IntEnum):
    """The six corpus dialogue types."""

    HUMAN_HUMAN_STATIC_EXPLAINEE = 1
    HUMAN_HUMAN_STATIC_EXPLAINER = 2
    HUMAN_EXPLAINER_AGENT = 3
    HUMAN_EXPLAINEE_AGENT = 4
    HUMAN_HUMAN_QNA = 5
    HUMAN_HUMAN_MULTIPLE_EXPLAINEE = 6


CODE_NAMES: dict[str, str] = {
    "1.1": "dialogue start",
    "1.2": "dialogue end",
    "2.1": "how question",
    "2.2": "why question",
    "2.3": "what question",
    "3.1": "explanation",
    "3.2": "explainee affirmation",
    "3.3": "explainer affirmation",
    "3.4": "question context",
    "3.5": "counterfactual case",
    "4.1": "argument",
    "4.2": "dialogue-starting argument",
    "4.3": "argument affirmation",
    "4.4": "counter argument",
    "4.5": "argument contrast case",
    "5.1": "explainer return question",
    "5.2": "explainee return question",
}

_QUESTION_SUBTYPES = {
    "2.1": QuestionSubtype.HOW,
    "2.2": QuestionSubtype.WHY,
    "2.3": QuestionSubtype.WHAT,
}


@dataclass(frozen=True)
class CodedSegment:
    code: str
    text: str


@dataclass(frozen=True)
class CodedDialogue:
    segments: tuple[CodedSegment, ...]
    dialogue_type: Optional[DialogueType] = None

    def codes(self) -> list[str]:
        return [s.code for s in self.segments]


def parse_coded_transcript(text: str, strict: bool = False) -> list[CodedDialogue]:
    """Parse ``code|text`` lines into dialogues.

    Dialogues are separated by blank lines; an ``@type: <1-6>`` header
    line sets the dialogue type.  Strict mode requires explicit 1.1/1.2
    boundaries on every dialogue.
    """
    dialogues: list[CodedDialogue] = []
    segments: list[CodedSegment] = []
    dtype: Optional[DialogueType] = None

    def flush() -> None:
        nonlocal segments, dtype
        if segments:
            if strict and (segments[0].code != "1.1" or segments[-1].code != "1.2"):
                raise MissingBoundary(
                    f"dialogue {len(dialogues) + 1} lacks 1.1/1.2 boundaries"
                )
            dialogues.append(CodedDialogue(tuple(segments), dtype))
        segments = []
        dtype = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            flush()
            continue
        if line.startswith("#"):
            continue
        if line.startswith("@type:"):
            value = line.split(":", 1)[1].strip()
            try:
                dtype = DialogueType(int(value))
            except ValueError:
                raise UnknownCode(lineno, value) from None
            continue
        code, _, seg_text = line.partition("|")
        code = code.strip()
        if code not in CODE_NAMES:
            raise UnknownCode(lineno, code)
        segments.append(CodedSegment(code, seg_text.strip()))
    flush()
    return dialogues


def _merge_content(existing: Optional[str], extra: str) -> Optional[str]:
    if not extra:
        return existing
    return f"{existing} {extra}" if existing else extra


def codes_to_moves(dialogue: CodedDialogue) -> list[Move]:
    """Map one coded dialogue onto protocol moves (topic ``p``).

    Boundary codes emit no moves: 1.1 marks the start and 1.2 checks the
    dialogue may end where it does.  Consecutive segments with the same
    code merge into the previous move (coders split long utterances into
    several segments).  When a code belongs to the enclosing explanation
    dialogue while a finished argument is still open, the implicit
    end_argument is inserted, mirroring how transcripts fall back out of
    argumentation without marking it.
    """
    topic = "p"
    state = protocol.initial_session()
    moves: list[Move] = []
    pending_context: list[str] = []
    prev_code: Optional[str] = None

    def emit(move: Move, index: int) -> None:
        nonlocal state
        try:
            state = protocol.apply_move(state, move)
        except ProtocolError as err:
            raise UnmappableSequence(index, str(err)) from err
        moves.append(move)

    def close_argument_if_needed(index: int, code: str) -> None:
        # Codes for the outer explanation dialogue while an argumentation
        # frame is open: pop the argument first if its rules allow.
        top = state.top
        if top is not None and top.type is FrameType.ARGUMENTATION:
            if not top.closeable():
                raise UnmappableSequence(
                    index, f"code {code} while the open argument cannot close"
                )
            emit(Move(actor=None, kind=MoveKind.END_ARGUMENT, topic=topic), index)

    def last_move_index(kinds: frozenset[MoveKind]) -> Optional[int]:
        for i in range(len(moves) - 1, -1, -1):
            if moves[i].kind in kinds:
                return i
        return None

    for index, seg in enumerate(dialogue.segments, start=1):
        code = seg.code

        if code == "1.1":
            if state.top is not None or moves:
                raise UnmappableSequence(index, "dialogue start after moves")
            prev_code = code
            continue

        if code == "1.2":
            if not protocol.is_terminal_eligible(state):
                raise UnmappableSequence(
                    index, f"dialogue cannot end here ({state.describe()})"
                )
            prev_code = code
            continue

        # coding granularity: a run of segments with one code is one move
        if code == prev_code and moves and code not in ("3.4", "3.5", "4.5"):
            moves[-1] = replace(moves[-1], content=_merge_content(moves[-1].content, seg.text))
            continue

        if code in _QUESTION_SUBTYPES:
            subtype = _QUESTION_SUBTYPES[code]
            content = _merge_content(
                " ".join(pending_context) if pending_context else None, seg.text
            )
            pending_context.clear()
            if state.top is None:
                emit(
                    Move(Actor.Q, MoveKind.BEGIN_QUESTION, topic, content, subtype),
                    index,
                )
            else:
                close_argument_if_needed(index, code)
                if state.top.state is FrameState.CLARIFY_PENDING:
                    emit(Move(Actor.Q, MoveKind.CLARIFY, topic, content, subtype), index)
                else:
                    actor = _infer_actor(state, MoveKind.RETURN_QUESTION)
                    emit(
                        Move(actor, MoveKind.RETURN_QUESTION, topic, content, subtype),
                        index,
                    )

        elif code == "3.1":
            if state.top is None:
                emit(Move(Actor.E, MoveKind.BEGIN_EXPLANATION, topic, seg.text), index)
            elif state.top.type is FrameType.ARGUMENTATION:
                emit(Move(Actor.E, MoveKind.FURTHER_EXPLAIN, topic, seg.text), index)
            else:
                kind = (
                    MoveKind.FURTHER_EXPLAIN
                    if state.top.has_explanation
                    else MoveKind.EXPLAIN
                )
                emit(Move(Actor.E, kind, topic, seg.text), index)

        elif code == "3.2":
            close_argument_if_needed(index, code)
            emit(Move(Actor.Q, MoveKind.AFFIRM, topic, seg.text), index)

        elif code == "3.3":
            close_argument_if_needed(index, code)
            emit(Move(Actor.E, MoveKind.AFFIRM, topic, seg.text), index)

        elif code == "3.4":
            # question context: a clarify reply when one is pending,
            # otherwise metadata folded into the nearest question
            if state.top is not None and state.top.state is FrameState.CLARIFY_PENDING:
                emit(Move(Actor.Q, MoveKind.CLARIFY, topic, seg.text), index)
            else:
                i = last_move_index(protocol.QUESTION_KINDS)
                if i is None:
                    pending_context.append(seg.text)
                else:
                    moves[i] = replace(
                        moves[i], content=_merge_content(moves[i].content, seg.text)
                    )

        elif code == "3.5":
            i = last_move_index(protocol.QUESTION_KINDS)
            if i is None or moves[i].question_subtype not in (
                QuestionSubtype.WHY,
                QuestionSubtype.HOW,
            ):
                raise UnmappableSequence(index, "counterfactual without a why/how question")
            moves[i] = replace(
                moves[i],
                content=_merge_content(moves[i].content, seg.text),
                counterfactual=True,
            )

        elif code in ("4.1", "4.2"):
            if state.top is None:
                # an argument that starts the dialogue commences it as an
                # explainer-style assertion
                emit(Move(Actor.E, MoveKind.BEGIN_EXPLANATION, topic, seg.text), index)
            else:
                emit(Move(Actor.Q, MoveKind.BEGIN_ARGUMENT, topic, seg.text), index)

        elif code in ("4.3", "4.4"):
            kind = MoveKind.AFFIRM_ARGUMENT if code == "4.3" else MoveKind.COUNTER_ARGUMENT
            actor = _infer_actor(state, kind)
            emit(Move(actor, kind, topic, seg.text), index)

        elif code == "4.5":
            i = last_move_index(
                frozenset(
                    {
                        MoveKind.BEGIN_ARGUMENT,
                        MoveKind.AFFIRM_ARGUMENT,
                        MoveKind.COUNTER_ARGUMENT,
                    }
                )
            )
            if i is None:
                raise UnmappableSequence(index, "argument contrast without an argument")
            moves[i] = replace(moves[i], content=_merge_content(moves[i].content, seg.text))

        elif code == "5.1":
            emit(Move(Actor.E, MoveKind.RETURN_QUESTION, topic, seg.text), index)

        elif code == "5.2":
            close_argument_if_needed(index, code)
            emit(Move(Actor.Q, MoveKind.RETURN_QUESTION, topic, seg.text), index)

        prev_code = code

    return moves
