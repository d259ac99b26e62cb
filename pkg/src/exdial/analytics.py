"""Corpus statistics over coded dialogues and tag traces.

All statistics are pure functions of their input corpus, invariant
under reordering, and never fabricate values: rates over empty inputs
are reported as absent rather than zero.
"""

from __future__ import annotations

import csv
import io
import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Optional

from exdial.codec import CodedDialogue, parse_tags, resolve_moves, validate_trace

BOUNDARY_CODES = frozenset({"1.1", "1.2"})

# Termination buckets: endings other than an explanation or an
# affirmation are grouped as "other".
_NAMED_TERMINATIONS = frozenset({"3.1", "3.2", "3.3"})
OTHER_BUCKET = "other"


class AnalyticsError(Exception):
    pass


class EmptyCorpus(AnalyticsError):
    pass


class EmptyDialogue(AnalyticsError):
    def __init__(self, index: int):
        self.index = index
        super().__init__(f"dialogue {index} has no non-boundary codes")


TypeKey = Optional[int]


def _type_key(d: CodedDialogue) -> TypeKey:
    return int(d.dialogue_type) if d.dialogue_type is not None else None


def code_frequency(corpus: list[CodedDialogue]) -> dict[tuple[TypeKey, str], float]:
    """Mean occurrences of each code per dialogue, grouped by dialogue type.

    The denominator is the number of dialogues of that type, so dialogues
    where a code never occurs still pull its average down.  Codes absent
    from an entire type are omitted.
    """
    if not corpus:
        raise EmptyCorpus("code_frequency needs at least one dialogue")
    totals: dict[tuple[TypeKey, str], int] = Counter()
    dialogues_per_type: dict[TypeKey, int] = Counter()
    for d in corpus:
        key = _type_key(d)
        dialogues_per_type[key] += 1
        for seg in d.segments:
            totals[(key, seg.code)] += 1
    return {
        (t, code): count / dialogues_per_type[t] for (t, code), count in totals.items()
    }


def termination_distribution(
    corpus: list[CodedDialogue],
) -> dict[tuple[TypeKey, str], float]:
    """Distribution of the final non-boundary code per dialogue, by type.

    Endings outside explanation/affirmation codes aggregate into the
    "other" bucket.  Each type's proportions sum to 1.
    """
    counts: dict[TypeKey, Counter] = defaultdict(Counter)
    for i, d in enumerate(corpus, start=1):
        content_codes = [s.code for s in d.segments if s.code not in BOUNDARY_CODES]
        if not content_codes:
            raise EmptyDialogue(i)
        last = content_codes[-1]
        bucket = last if last in _NAMED_TERMINATIONS else OTHER_BUCKET
        counts[_type_key(d)][bucket] += 1
    dist: dict[tuple[TypeKey, str], float] = {}
    for t, counter in counts.items():
        total = sum(counter.values())
        for bucket, n in counter.items():
            dist[(t, bucket)] = n / total
    return dist


def game_histogram(
    traces: list[str],
) -> tuple[dict[str, int], Optional[float]]:
    """Count dialogue game shapes and measure the corpus validity rate.

    Traces are canonicalized through the tag parser so spacing and case
    variants of a game collapse into one histogram key; unparseable
    entries keep their raw text as the key.  A trace counts toward the
    validity rate only when it is a complete game: it replays without
    violations and may legally end where it stops.  The rate is absent
    (None) for an empty input.
    """
    histogram: Counter = Counter()
    valid = 0
    for raw in traces:
        try:
            tags = parse_tags(raw)
        except Exception:
            histogram[raw.strip()] += 1
            continue
        histogram[tags.render()] += 1
        if validate_trace(resolve_moves(tags)).complete:
            valid += 1
    if not traces:
        return {}, None
    return dict(histogram), valid / len(traces)


@dataclass(frozen=True)
class CorpusStats:
    """Bundle of the corpus analyses, ready for serialization."""

    per_type_code_avg: dict[tuple[TypeKey, str], float] = field(default_factory=dict)
    termination_dist: dict[tuple[TypeKey, str], float] = field(default_factory=dict)
    game_histogram: dict[str, int] = field(default_factory=dict)
    validity_rate: Optional[float] = None

    def to_json(self) -> str:
        def nest(pairs: dict[tuple[TypeKey, str], float]) -> dict[str, dict[str, float]]:
            out: dict[str, dict[str, float]] = {}
            for (t, key), value in sorted(
                pairs.items(), key=lambda kv: (str(kv[0][0]), kv[0][1])
            ):
                out.setdefault(str(t) if t is not None else "?", {})[key] = value
            return out

        doc = {
            "per_type_code_avg": nest(self.per_type_code_avg),
            "termination_dist": nest(self.termination_dist),
            "game_histogram": dict(sorted(self.game_histogram.items())),
            "validity_rate": self.validity_rate,
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    def to_csv(self) -> str:
        """Fixed-order rows: metric, dialogue_type, key, value."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["metric", "dialogue_type", "key", "value"])
        for (t, code), value in sorted(
            self.per_type_code_avg.items(), key=lambda kv: (str(kv[0][0]), kv[0][1])
        ):
            writer.writerow(["code_avg", t if t is not None else "?", code, f"{value:.6f}"])
        for (t, bucket), value in sorted(
            self.termination_dist.items(), key=lambda kv: (str(kv[0][0]), kv[0][1])
        ):
            writer.writerow(
                ["termination", t if t is not None else "?", bucket, f"{value:.6f}"]
            )
        for game, count in sorted(self.game_histogram.items()):
            writer.writerow(["game_count", "", game, count])
        if self.validity_rate is not None:
            writer.writerow(["validity_rate", "", "", f"{self.validity_rate:.6f}"])
        return buf.getvalue()


def corpus_stats(
    dialogues: list[CodedDialogue], traces: list[str]
) -> CorpusStats:
    """Compute every statistic available for the given inputs."""
    histogram, rate = game_histogram(traces)
    return CorpusStats(
        per_type_code_avg=code_frequency(dialogues) if dialogues else {},
        termination_dist=termination_distribution(dialogues) if dialogues else {},
        game_histogram=histogram,
        validity_rate=rate,
    )
