"""Move-matching curves, agreement matrices, decompositions and blunder metrics."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, NamedTuple, Optional, Protocol, Sequence, Tuple

import numpy as np

from .core import Move, PositionHistory, apply_move, legal_moves
from .errors import EmptyTestSet, MissingEvals, OneClassOnly
from .pgn import RatingBin


class Predictor(Protocol):
    name: str

    def predict(self, h: PositionHistory) -> Move:
        ...


def predict_all(pred, histories: Sequence[PositionHistory]) -> List[Move]:
    """Predictions for every history, batched when the predictor supports it."""
    many = getattr(pred, "predict_many", None)
    if many is not None:
        return list(many(histories))
    return [pred.predict(h) for h in histories]


class OraclePredictor:
    """Returns the move actually played (identity predictor for harness checks)."""

    def __init__(self, instances: Iterable, name: str = "oracle"):
        self.name = name
        # keep the instances alive so the id() keys stay valid
        self._instances = list(instances)
        self._moves = {id(inst.history): inst.played for inst in self._instances}

    def predict(self, h: PositionHistory) -> Move:
        return self._moves[id(h)]


class RandomLegalPredictor:
    def __init__(self, seed: int = 0, name: str = "random"):
        import random
        self.name = name
        self._rng = random.Random(seed)

    def predict(self, h: PositionHistory) -> Move:
        moves = legal_moves(h.current)
        return moves[self._rng.randrange(len(moves))]


class FunctionPredictor:
    def __init__(self, fn, name: str):
        self.fn = fn
        self.name = name

    def predict(self, h: PositionHistory) -> Move:
        return self.fn(h)


@dataclass
class TestSet:
    bin: Optional[RatingBin]
    instances: list

    __test__ = False  # not a pytest class

    @property
    def label(self) -> str:
        return str(self.bin) if self.bin is not None else "all"

    def histories(self) -> List[PositionHistory]:
        return [inst.history for inst in self.instances]


def _nonempty(ts: TestSet) -> None:
    if not ts.instances:
        raise EmptyTestSet(f"test set {ts.label} is empty")


def match_counts(pred, ts: TestSet) -> Tuple[int, int]:
    _nonempty(ts)
    moves = predict_all(pred, ts.histories())
    return sum(1 for m, inst in zip(moves, ts.instances) if m == inst.played), len(ts.instances)


def move_match(pred, ts: TestSet) -> float:
    matches, n = match_counts(pred, ts)
    return matches / n


def agreement(a, b, ts: TestSet) -> float:
    _nonempty(ts)
    hs = ts.histories()
    pa, pb = predict_all(a, hs), predict_all(b, hs)
    return sum(1 for x, y in zip(pa, pb) if x == y) / len(hs)


def agreement_matrix(preds: Sequence, ts: TestSet) -> Tuple[List[str], np.ndarray]:
    """Pairwise agreement; each predictor is queried once."""
    _nonempty(ts)
    hs = ts.histories()
    moves = [predict_all(p, hs) for p in preds]
    k = len(preds)
    mat = np.eye(k)
    for i in range(k):
        for j in range(i + 1, k):
            mat[i, j] = mat[j, i] = sum(1 for x, y in zip(moves[i], moves[j]) if x == y) / len(hs)
    return [p.name for p in preds], mat


def agreement_csv(names: Sequence[str], mat: np.ndarray) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow([""] + list(names))
    for name, row in zip(names, mat):
        w.writerow([name] + [repr(float(v)) for v in row])
    return out.getvalue()


# ---------------------------------------------------------------------------
# prediction curves


class CurveRow(NamedTuple):
    predictor: str
    bin: int
    n: int
    matches: int

    @property
    def accuracy(self) -> float:
        return self.matches / self.n


@dataclass
class PredictionCurve:
    rows: List[CurveRow] = field(default_factory=list)

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["predictor", "bin", "n", "matches", "accuracy"])
        for r in self.rows:
            w.writerow([r.predictor, r.bin, r.n, r.matches, repr(r.accuracy)])
        return out.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "PredictionCurve":
        rows = [CurveRow(r["predictor"], int(r["bin"]), int(r["n"]), int(r["matches"]))
                for r in csv.DictReader(io.StringIO(text))]
        return cls(rows)


def prediction_curve(preds: Sequence, test_sets: Sequence[TestSet]) -> PredictionCurve:
    curve = PredictionCurve()
    for p in preds:
        for ts in test_sets:
            matches, n = match_counts(p, ts)
            curve.rows.append(CurveRow(p.name, ts.bin.lower if ts.bin else 0, n, matches))
    return curve


class Maximum(NamedTuple):
    predictor: str
    bin: int
    accuracy: float


def model_maxima(curve: PredictionCurve) -> List[Maximum]:
    """Per predictor, the bin of highest accuracy (lowest bin on ties), in first-seen order."""
    best: Dict[str, Maximum] = {}
    for r in curve.rows:
        cur = best.get(r.predictor)
        acc = r.accuracy
        if cur is None or acc > cur.accuracy or (acc == cur.accuracy and r.bin < cur.bin):
            best[r.predictor] = Maximum(r.predictor, r.bin, acc)
    return list(best.values())


# ---------------------------------------------------------------------------
# complexity / quality decomposition


class RefEval(NamedTuple):
    """Mover's win probabilities of the best, second-best and played moves."""

    best: float
    second: Optional[float]
    played: float


class BucketRow(NamedTuple):
    lower: float
    upper: float
    n: int
    matches: int

    @property
    def accuracy(self) -> float:
        return self.matches / self.n if self.n else float("nan")


def _gap(ev: RefEval, mode: str) -> float:
    if mode == "complexity":
        # a forced move has no alternative: it sits in the widest-gap bucket
        gap = 1.0 if ev.second is None else ev.best - ev.second
    elif mode == "quality":
        gap = ev.best - ev.played
    else:
        raise ValueError(f"unknown decomposition mode {mode!r}")
    return min(1.0, max(0.0, gap))


def decompose(pred, ts: TestSet, ref_evals: Sequence[Optional[RefEval]], mode: str = "complexity",
              bin_width: float = 0.05) -> List[BucketRow]:
    """Move-match accuracy bucketed by win-probability gap; every bucket in [0, 1] is listed."""
    _nonempty(ts)
    if len(ref_evals) != len(ts.instances) or any(e is None for e in ref_evals):
        raise MissingEvals("a reference evaluation is required for every instance")
    n_buckets = int(math.ceil(1.0 / bin_width - 1e-9))
    counts = np.zeros((n_buckets, 2), dtype=np.int64)
    moves = predict_all(pred, ts.histories())
    for m, inst, ev in zip(moves, ts.instances, ref_evals):
        b = min(int(math.floor(_gap(ev, mode) / bin_width + 1e-9)), n_buckets - 1)
        counts[b, 0] += 1
        counts[b, 1] += m == inst.played
    return [BucketRow(round(i * bin_width, 10), round(min(1.0, (i + 1) * bin_width), 10), int(n), int(k))
            for i, (n, k) in enumerate(counts)]


def decomposition_csv(rows: Sequence[BucketRow], predictor: str = "") -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["predictor", "gap_lower", "gap_upper", "n", "matches", "accuracy"])
    for r in rows:
        w.writerow([predictor, r.lower, r.upper, r.n, r.matches, "" if not r.n else repr(r.accuracy)])
    return out.getvalue()


def reference_evals(engine, instances: Sequence, table, depth: int = 15) -> List[RefEval]:
    """Win probabilities of the engine's top two moves and the played move, from the mover's side."""
    out = []
    for inst in instances:
        pos = inst.history.current
        res = engine.evaluate(pos, depth=depth, multipv=2)
        if not res.lines:
            raise MissingEvals(f"engine returned no lines for {pos.fen()}")
        probs = {ln.move: table.lookup(ln.score.centipawns()) for ln in res.lines}
        ranked = [table.lookup(ln.score.centipawns()) for ln in res.lines]
        played = probs.get(inst.played)
        if played is None:
            child = apply_move(pos, inst.played)
            if legal_moves(child):
                reply = engine.evaluate(child, depth=max(1, depth - 1), multipv=1)
                played = 1.0 - table.lookup(reply.lines[0].score.centipawns())
            else:
                played = 1.0 if child.is_check() else 0.5
        out.append(RefEval(ranked[0], ranked[1] if len(ranked) > 1 else None, played))
    return out


# ---------------------------------------------------------------------------
# blunder metrics


def _binary(labels) -> np.ndarray:
    y = np.asarray(labels).reshape(-1).astype(bool)
    if y.all() or not y.any():
        raise OneClassOnly("need at least one positive and one negative label")
    return y


def auc(scores, labels) -> float:
    """Rank-based ROC AUC; tied scores share their mid-rank."""
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = _binary(labels)
    if len(s) != len(y):
        raise ValueError("scores and labels differ in length")
    values, inverse, counts = np.unique(s, return_inverse=True, return_counts=True)
    midrank = np.cumsum(counts) - (counts - 1) / 2.0
    ranks = midrank[inverse]
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def accuracy_at(threshold: float, scores, labels) -> float:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1).astype(bool)
    if not len(s):
        raise EmptyTestSet("no scores")
    return float(np.mean((s >= threshold) == y))


def blunder_metrics(name: str, scores, labels, threshold: float = 0.5) -> dict:
    return {"model": name, "n": int(np.size(labels)), "auc": auc(scores, labels),
            "accuracy": accuracy_at(threshold, scores, labels), "threshold": threshold}


def metrics_csv(rows: Sequence[Mapping]) -> str:
    out = io.StringIO()
    if not rows:
        return ""
    w = csv.DictWriter(out, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return out.getvalue()
