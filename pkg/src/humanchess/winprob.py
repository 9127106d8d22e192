"""Empirical centipawn -> win-probability table and blunder labels.

Every observation is counted once for each player: white sees ``(cp, o)``
and black sees ``(-cp, 1 - o)``. Draws count as half-wins. The table is
therefore the empirical win rate of *a player* standing at a given
evaluation, which makes ``P(black) = 1 - P(white)`` hold bucket for bucket.
"""

from __future__ import annotations

import bisect
import csv
import io
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, NamedTuple, Optional, Tuple

from .core import WHITE
from .errors import EmptyInput, MissingEval
from .score import MATE_CP

BUCKET_WIDTH = 10
MAX_BUCKET = 9990
# absorbs float rounding so a drop of exactly tau counts as a blunder
_TAU_SLACK = 1e-12


class EvalObservation(NamedTuple):
    cp: int
    outcome_for_white: float


@dataclass(frozen=True)
class BlunderThreshold:
    tau: float = 0.10

    def __post_init__(self):
        if not 0 < self.tau < 1:
            raise ValueError("tau must be in (0, 1)")


def bucket_of(cp: float) -> int:
    """Nearest multiple of 10, halves rounded away from zero."""
    mag = int(math.floor(abs(cp) / BUCKET_WIDTH + 0.5)) * BUCKET_WIDTH
    mag = min(mag, MAX_BUCKET)
    return -mag if cp < 0 else mag


class WinProbTable:
    def __init__(self, counts: Dict[int, Tuple[float, int]], min_samples: int = 1):
        # counts: bucket -> (wins incl. half draws, total)
        self.bucket_width = BUCKET_WIDTH
        self.min_samples = min_samples
        self.buckets: Dict[int, Tuple[float, int, float]] = {
            b: (w, n, w / n) for b, (w, n) in sorted(counts.items()) if n > 0
        }
        self._populated = [b for b, (_, n, _) in self.buckets.items() if n >= min_samples]
        if not self._populated:
            raise EmptyInput("no bucket reaches min_samples")

    def probability(self, bucket: int) -> float:
        return self.buckets[bucket][2]

    def _nearest(self, b: int) -> Tuple[int, ...]:
        pop = self._populated
        i = bisect.bisect_left(pop, b)
        if i < len(pop) and pop[i] == b:
            return (b,)
        if i == 0:
            return (pop[0],)
        if i == len(pop):
            return (pop[-1],)
        lo, hi = pop[i - 1], pop[i]
        dlo, dhi = b - lo, hi - b
        if dlo != dhi:
            return (lo if dlo < dhi else hi,)
        # equidistant: prefer the bucket nearer zero; at zero itself use both
        if abs(lo) == abs(hi):
            return (lo, hi)
        return (lo if abs(lo) < abs(hi) else hi,)

    def lookup(self, cp: int) -> float:
        if cp >= MATE_CP:
            return 1.0
        if cp <= -MATE_CP:
            return 0.0
        near = self._nearest(bucket_of(cp))
        if len(near) == 2:
            return (self.buckets[near[0]][2] + self.buckets[near[1]][2]) / 2.0
        return self.buckets[near[0]][2]

    # -- serialization --------------------------------------------------------

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["bucket_center_cp", "wins", "total", "probability"])
        for b, (wins, n, p) in self.buckets.items():
            w.writerow([b, repr(wins), n, repr(p)])
        return out.getvalue()

    def save(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())

    @classmethod
    def from_csv(cls, text: str, min_samples: int = 1) -> "WinProbTable":
        rows = list(csv.DictReader(io.StringIO(text)))
        counts = {int(r["bucket_center_cp"]): (float(r["wins"]), int(r["total"])) for r in rows}
        table = cls(counts, min_samples)
        for r in rows:
            stored = table.buckets[int(r["bucket_center_cp"])][2]
            if float(r["probability"]) != stored:
                raise ValueError(f"probability column disagrees with wins/total in bucket {r['bucket_center_cp']}")
        return table

    @classmethod
    def load(cls, path, min_samples: int = 1) -> "WinProbTable":
        with open(path, newline="") as fh:
            return cls.from_csv(fh.read(), min_samples)

    def __eq__(self, other):
        return isinstance(other, WinProbTable) and self.buckets == other.buckets and self.min_samples == other.min_samples


class TableBuilder:
    """Accumulates bucket counts; partial builders merge associatively."""

    def __init__(self):
        self.counts: Dict[int, List[float]] = {}

    def add(self, cp: int, outcome_for_white: float) -> None:
        if abs(cp) >= MATE_CP:
            return
        for bucket, outcome in ((bucket_of(cp), outcome_for_white), (bucket_of(-cp), 1.0 - outcome_for_white)):
            slot = self.counts.setdefault(bucket, [0.0, 0])
            slot[0] += outcome
            slot[1] += 1

    def merge(self, other: "TableBuilder") -> "TableBuilder":
        for b, (w, n) in other.counts.items():
            slot = self.counts.setdefault(b, [0.0, 0])
            slot[0] += w
            slot[1] += n
        return self

    def build(self, min_samples: int = 1) -> WinProbTable:
        if not self.counts:
            raise EmptyInput("no observations")
        return WinProbTable({b: (w, n) for b, (w, n) in self.counts.items()}, min_samples)


def build_table(obs: Iterable[EvalObservation], min_samples: int = 1) -> WinProbTable:
    builder = TableBuilder()
    seen = False
    for o in obs:
        seen = True
        builder.add(o.cp, o.outcome_for_white)
    if not seen:
        raise EmptyInput("no observations")
    return builder.build(min_samples)


def lookup(table: WinProbTable, cp: int) -> float:
    return table.lookup(cp)


def win_prob_for_mover(table: WinProbTable, cp_white: int, mover: bool) -> float:
    """Mover's win probability; for black this is the lookup of the negated score."""
    return table.lookup(cp_white if mover == WHITE else -cp_white)


def label_blunder(inst, table: WinProbTable, thr: BlunderThreshold = BlunderThreshold()) -> bool:
    if inst.eval_before is None or inst.eval_after is None:
        raise MissingEval("blunder labelling needs eval_before and eval_after")
    mover = inst.history.current.turn
    before = win_prob_for_mover(table, inst.eval_before, mover)
    after = win_prob_for_mover(table, inst.eval_after, mover)
    return before - after >= thr.tau - _TAU_SLACK


def observations_from_instances(instances: Iterable) -> Iterable[EvalObservation]:
    """One observation per annotated position (the evaluation before each move)."""
    for inst in instances:
        if inst.eval_before is None:
            continue
        white_score = inst.result_for_mover if inst.history.current.turn else 1.0 - inst.result_for_mover
        yield EvalObservation(inst.eval_before, white_score)
