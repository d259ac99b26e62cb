"""Machine players: a template-based scripted explainer and a stochastic
protocol-conformant explainee, plus a closed-loop dialogue simulator.

The explainer answers from a small knowledge base of explananda.  Its
reply text follows a fixed template: the prediction, then the available
evidence clauses (gaze first, then causal history).  When it has no
record for the topic it answers with a static failure response on a
termination-rule locution so the dialogue can close.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

from exdial import protocol
from exdial.protocol import (
    Actor,
    FrameState,
    FrameType,
    Move,
    MoveKind,
    QuestionSubtype,
    SessionState,
)

UNABLE_RESPONSE = "I'm unable to answer that"


class AgentError(Exception):
    pass


class NotExplainerTurn(AgentError):
    pass


class NoLegalMove(AgentError):
    pass


class BudgetTooSmall(AgentError):
    pass


@dataclass(frozen=True)
class ExplanandumRecord:
    """One explainable prediction with its optional evidence clauses."""

    topic: str
    prediction: str
    gaze_evidence: Optional[str] = None
    causal_history: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.prediction:
            raise ValueError("prediction must be non-empty")

    def explanation_text(self) -> str:
        parts = [self.prediction]
        if self.gaze_evidence:
            parts.append(self.gaze_evidence)
        if self.causal_history:
            parts.append(self.causal_history)
        return " ".join(parts)

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"topic": self.topic, "prediction": self.prediction}
        if self.gaze_evidence is not None:
            d["gaze_evidence"] = self.gaze_evidence
        if self.causal_history is not None:
            d["causal_history"] = self.causal_history
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ExplanandumRecord":
        return cls(
            topic=d["topic"],
            prediction=d["prediction"],
            gaze_evidence=d.get("gaze_evidence"),
            causal_history=d.get("causal_history"),
        )


@dataclass(frozen=True)
class ExplaineePolicy:
    """Sampling weights over the explainee's legal move kinds."""

    weights: dict[MoveKind, float] = field(default_factory=dict)
    stop_bias: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if not any(w > 0 for w in self.weights.values()):
            raise ValueError("at least one policy weight must be positive")
        if any(w < 0 for w in self.weights.values()):
            raise ValueError("policy weights must be non-negative")
        if not 0.0 <= self.stop_bias <= 1.0:
            raise ValueError("stop_bias must be in [0, 1]")

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ExplaineePolicy":
        return cls(
            weights={MoveKind(k): float(v) for k, v in d.get("weights", {}).items()},
            stop_bias=float(d.get("stop_bias", 0.5)),
            seed=int(d.get("seed", 0)),
        )


def load_kb_file(path: Union[str, Path]) -> list[ExplanandumRecord]:
    data = json.loads(Path(path).read_text())
    return [ExplanandumRecord.from_dict(d) for d in data]


def load_policy_file(path: Union[str, Path]) -> ExplaineePolicy:
    return ExplaineePolicy.from_dict(json.loads(Path(path).read_text()))


class Stop:
    """Sentinel: the explainee chooses to end the session."""

    def __repr__(self) -> str:  # pragma: no cover
        return "STOP"


STOP = Stop()


def _tokens(text: Optional[str]) -> set[str]:
    return set(re.findall(r"[a-z0-9]+", (text or "").lower()))


def _record_for(kb: list[ExplanandumRecord], topic: str) -> Optional[ExplanandumRecord]:
    for record in kb:
        if record.topic == topic:
            return record
    return None


def _near_miss(kb: list[ExplanandumRecord], topic: str) -> Optional[ExplanandumRecord]:
    low = topic.lower()
    for record in kb:
        other = record.topic.lower()
        if other != low and (low in other or other in low):
            return record
    return None


def _already_clarified(state: SessionState) -> bool:
    # Walk back to the opener of the current frame; one clarification
    # request per question is enough.
    for move in reversed(state.history):
        if move.kind in (MoveKind.BEGIN_QUESTION, MoveKind.BEGIN_EXPLANATION):
            return False
        if move.kind is MoveKind.RETURN_QUESTION and move.actor is Actor.E:
            return True
    return False


def _last_questioner_argument(state: SessionState) -> Optional[Move]:
    for move in reversed(state.history):
        if move.kind in (MoveKind.BEGIN_ARGUMENT, MoveKind.COUNTER_ARGUMENT):
            return move
    return None


def scripted_explainer_step(
    state: SessionState,
    kb: list[ExplanandumRecord],
    allow_clarification: bool = True,
) -> Move:
    """Deterministic explainer move for the current state.

    Raises NotExplainerTurn when the explainer has no legal move (or,
    on an empty stack, nothing left in the knowledge base to open with).
    """
    legal = protocol.legal_moves(state)
    if not any(actor is Actor.E for actor, _ in legal):
        raise NotExplainerTurn(f"no explainer move in {state.describe()}")

    top = state.top
    if top is None:
        for record in kb:
            if record.topic != state.last_closed_topic:
                return Move(
                    Actor.E,
                    MoveKind.BEGIN_EXPLANATION,
                    record.topic,
                    record.explanation_text(),
                )
        raise NotExplainerTurn("nothing left to proactively explain")

    if top.type is FrameType.EXPLANATION:
        if top.state is FrameState.Q_POSED:
            kind = (
                MoveKind.FURTHER_EXPLAIN if top.has_explanation else MoveKind.EXPLAIN
            )
            record = _record_for(kb, top.topic)
            if record is not None:
                return Move(Actor.E, kind, top.topic, record.explanation_text())
            near = _near_miss(kb, top.topic)
            if near is not None and allow_clarification and not _already_clarified(state):
                return Move(
                    Actor.E,
                    MoveKind.RETURN_QUESTION,
                    top.topic,
                    f"Did you mean {near.topic}?",
                )
            return Move(Actor.E, kind, top.topic, UNABLE_RESPONSE)
        if top.state is FrameState.Q_AFFIRMED:
            return Move(Actor.E, MoveKind.AFFIRM, top.topic, "Glad that helps.")
        # explained / both affirmed: nothing left to add, close politely
        return Move(None, MoveKind.END_EXPLANATION, top.topic)

    # argumentation frame
    if top.state is FrameState.A_AFFIRMED:
        return Move(None, MoveKind.END_ARGUMENT, top.topic)
    record = _record_for(kb, top.topic)
    if top.state is FrameState.A_POSED and top.argument_proposer is not Actor.E:
        argument = _last_questioner_argument(state)
        matched = None
        if argument is not None:
            arg_tokens = _tokens(argument.content)
            for candidate in kb:
                if candidate.topic.lower() in arg_tokens:
                    matched = candidate
                    break
        if matched is not None:
            return Move(
                Actor.E,
                MoveKind.AFFIRM_ARGUMENT,
                top.topic,
                f"Yes. {matched.explanation_text()}",
            )
        restated = record.prediction if record is not None else UNABLE_RESPONSE
        return Move(Actor.E, MoveKind.COUNTER_ARGUMENT, top.topic, f"No. {restated}")
    # own argument on the table: elaborate it
    text = record.explanation_text() if record is not None else UNABLE_RESPONSE
    return Move(Actor.E, MoveKind.FURTHER_EXPLAIN, top.topic, text)


_SUBTYPES = (QuestionSubtype.WHY, QuestionSubtype.HOW, QuestionSubtype.WHAT)


def _pick_topic(
    rng: random.Random, topic_pool: Optional[list[str]], state: SessionState
) -> str:
    options = [t for t in (topic_pool or []) if t != state.last_closed_topic]
    if options:
        return rng.choice(options)
    index = state.completed_dialogues
    topic = f"t{index + 1}"
    return topic if topic != state.last_closed_topic else f"t{index + 2}"


def _build_q_move(
    state: SessionState,
    kind: MoveKind,
    rng: random.Random,
    topic_pool: Optional[list[str]],
) -> Move:
    if kind is MoveKind.BEGIN_QUESTION:
        return Move(
            Actor.Q,
            kind,
            _pick_topic(rng, topic_pool, state),
            question_subtype=rng.choice(_SUBTYPES),
        )
    assert state.top is not None
    topic = state.top.topic
    if kind is MoveKind.BEGIN_ARGUMENT and topic_pool:
        alternative = rng.choice(topic_pool)
        return Move(Actor.Q, kind, topic, f"No, I believe it is {alternative}.")
    if kind is MoveKind.RETURN_QUESTION:
        return Move(Actor.Q, kind, topic, question_subtype=rng.choice(_SUBTYPES))
    return Move(Actor.Q, kind, topic)


def random_explainee_step(
    state: SessionState,
    policy: ExplaineePolicy,
    rng: Optional[random.Random] = None,
    topic_pool: Optional[list[str]] = None,
    allow_stop: bool = True,
) -> Union[Move, Stop]:
    """Sample one explainee move (or STOP) from the policy.

    A fresh stream seeded from the policy is used when no ``rng`` is
    passed, so the same state and seed always give the same move.
    """
    if rng is None:
        rng = random.Random(policy.seed)
    terminal = protocol.is_terminal_eligible(state)
    if allow_stop and terminal and rng.random() < policy.stop_bias:
        return STOP
    kinds = sorted(
        {kind for actor, kind in protocol.legal_moves(state) if actor is Actor.Q}
    )
    if not kinds:
        if terminal:
            return STOP
        raise NoLegalMove(f"explainee has no move in {state.describe()}")
    weights = [policy.weights.get(kind, 0.0) for kind in kinds]
    if sum(weights) <= 0:
        weights = [1.0] * len(kinds)
    kind = rng.choices(kinds, weights=weights, k=1)[0]
    return _build_q_move(state, kind, rng, topic_pool)


def _moves_to_completion(state: SessionState) -> int:
    """Forced moves needed before the session could legally end."""
    if protocol.is_terminal_eligible(state):
        return 0
    top = state.top
    assert top is not None
    if top.type is FrameType.ARGUMENTATION:
        return 1  # an affirm/counter reply reaches the termination rules
    if top.state is FrameState.Q_POSED:
        return 1  # the explainer's answer
    if top.state is FrameState.CLARIFY_PENDING:
        return 2  # clarify, then the answer
    raise AssertionError(f"unexpected open state {state.describe()}")


def _explainer_duty(state: SessionState) -> bool:
    """True when the flow of conversation requires the explainer to reply."""
    top = state.top
    if top is None:
        return False
    if top.type is FrameType.EXPLANATION:
        return top.state in (FrameState.Q_POSED, FrameState.Q_AFFIRMED)
    if top.state is FrameState.A_AFFIRMED:
        return True
    return top.state is FrameState.A_POSED and top.argument_proposer is not Actor.E


def simulate_dialogue(
    kb: list[ExplanandumRecord],
    policy: ExplaineePolicy,
    max_moves: int,
) -> list[Move]:
    """Run explainee policy against the scripted explainer.

    The episode alternates per conversational duty: the explainee drives
    and the explainer replies whenever the protocol expects it to.  The
    budget guard steers the final moves toward the termination rules, so
    the returned trace always validates as complete.  Deterministic in
    (kb, policy, max_moves).
    """
    if max_moves < 3:
        raise BudgetTooSmall("need a budget of at least 3 moves")
    rng = random.Random(policy.seed)
    topic_pool = [record.topic for record in kb]
    state = protocol.initial_session()

    while len(state.history) < max_moves:
        remaining = max_moves - len(state.history)
        if _explainer_duty(state):
            move = scripted_explainer_step(
                state, kb, allow_clarification=remaining >= 3
            )
            state = protocol.apply_move(state, move)
            continue
        terminal = protocol.is_terminal_eligible(state)
        if terminal and state.history and rng.random() < policy.stop_bias:
            break
        kinds = sorted(
            {kind for actor, kind in protocol.legal_moves(state) if actor is Actor.Q}
        )
        candidates = []
        for kind in kinds:
            move = _build_q_move(state, kind, rng, topic_pool)
            nxt = protocol.apply_move(state, move)
            if 1 + _moves_to_completion(nxt) <= remaining:
                candidates.append((kind, move, nxt))
        if not candidates:
            if terminal:
                break
            raise NoLegalMove(f"cannot finish within budget from {state.describe()}")
        weights = [policy.weights.get(kind, 0.0) for kind, _, _ in candidates]
        if sum(weights) <= 0:
            weights = [1.0] * len(candidates)
        _, move, nxt = rng.choices(candidates, weights=weights, k=1)[0]
        state = nxt

    assert protocol.is_terminal_eligible(state), "simulation left an unfinished game"
    return list(state.history)
