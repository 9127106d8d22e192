"""Shard files, streaming shuffle, negative downsampling and collective aggregation.

Shard layout (little-endian)::

    b"MSHD1"  u16 version  u64 record_count
    records, each:
        str root_fen  str fen  u8 n_prior  n_prior x str prior_uci  str played_uci
        u16 mover_rating  u16 opponent_rating  u16 ply
        f32 white_clock  f32 black_clock  i16 eval_before  i16 eval_after
        u8 result (0 loss, 1 draw, 2 win)  u8 blunder (0, 1, 255 unlabeled)

``str`` is a u16 length followed by UTF-8 bytes. The root FEN is the
position before the first prior move; it lets a reader rebuild every
history frame without replaying the whole game.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
import random
import struct
from collections import Counter
from dataclasses import dataclass
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, TypeVar

from .core import PAWN, WHITE, Move, Position, PositionHistory, legal_moves, mirror_color, parse_fen
from .errors import CorruptShard, InsufficientNegatives, IoFailure
from .pgn import MoveInstance

log = logging.getLogger(__name__)
T = TypeVar("T")

MAGIC = b"MSHD1"
VERSION = 1
EVAL_ABSENT = -32768
BLUNDER_UNLABELED = 255
_HEADER = struct.Struct("<5sHQ")
_FIXED = struct.Struct("<HHHffhhBB")


def _f32(x: float) -> float:
    return struct.unpack("<f", struct.pack("<f", x))[0]


def _clamp_i16(cp: Optional[int]) -> int:
    if cp is None:
        return EVAL_ABSENT
    return max(-32767, min(32767, int(cp)))


@dataclass(frozen=True)
class ShardRecord:
    root_fen: str
    fen: str
    prior_moves: Tuple[str, ...]
    played: str
    mover_rating: int
    opponent_rating: int
    ply: int
    white_clock: float
    black_clock: float
    eval_before: Optional[int]
    eval_after: Optional[int]
    result: int
    blunder: Optional[bool]

    @classmethod
    def from_instance(cls, inst: MoveInstance) -> "ShardRecord":
        h = inst.history
        return cls(
            root_fen=h.root.fen(),
            fen=h.current.fen(),
            prior_moves=tuple(m.uci() for m in h.moves),
            played=inst.played.uci(),
            mover_rating=inst.mover_rating,
            opponent_rating=inst.opponent_rating,
            ply=inst.ply,
            white_clock=_f32(inst.white_clock_fraction),
            black_clock=_f32(inst.black_clock_fraction),
            eval_before=None if inst.eval_before is None else _clamp_i16(inst.eval_before),
            eval_after=None if inst.eval_after is None else _clamp_i16(inst.eval_after),
            result=int(round(inst.result_for_mover * 2)),
            blunder=inst.blunder,
        )

    def to_instance(self) -> MoveInstance:
        h = PositionHistory.from_moves(parse_fen(self.root_fen), [Move.from_uci(u) for u in self.prior_moves])
        if h.current.fen() != self.fen:
            raise CorruptShard(f"history does not replay to {self.fen}")
        mover = h.current.turn
        mine, theirs = (self.white_clock, self.black_clock) if mover == WHITE else (self.black_clock, self.white_clock)
        return MoveInstance(
            history=h, played=Move.from_uci(self.played), mover_rating=self.mover_rating,
            mover_clock_fraction=mine, opponent_clock_fraction=theirs,
            eval_before=self.eval_before, eval_after=self.eval_after,
            result_for_mover=self.result / 2, opponent_rating=self.opponent_rating,
            ply=self.ply, blunder=self.blunder,
        )


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def encode_record(rec: ShardRecord) -> bytes:
    if len(rec.prior_moves) > 255:
        raise ValueError("too many prior moves")
    parts = [_pack_str(rec.root_fen), _pack_str(rec.fen), struct.pack("<B", len(rec.prior_moves))]
    parts.extend(_pack_str(u) for u in rec.prior_moves)
    parts.append(_pack_str(rec.played))
    blunder = BLUNDER_UNLABELED if rec.blunder is None else int(rec.blunder)
    eb = EVAL_ABSENT if rec.eval_before is None else rec.eval_before
    ea = EVAL_ABSENT if rec.eval_after is None else rec.eval_after
    parts.append(_FIXED.pack(rec.mover_rating, rec.opponent_rating, rec.ply, rec.white_clock,
                             rec.black_clock, eb, ea, rec.result, blunder))
    return b"".join(parts)


class ShardWriter:
    """Streams records to ``path``; the count in the header is patched on close."""

    def __init__(self, path):
        self.path = os.fspath(path)
        self.count = 0
        self._tmp = self.path + ".tmp"
        try:
            self._fh = open(self._tmp, "wb")
            self._fh.write(_HEADER.pack(MAGIC, VERSION, 0))
        except OSError as exc:
            raise IoFailure(f"cannot write shard {path}: {exc}") from exc

    def write(self, rec) -> None:
        if isinstance(rec, MoveInstance):
            rec = ShardRecord.from_instance(rec)
        self._fh.write(encode_record(rec))
        self.count += 1

    def close(self) -> None:
        try:
            self._fh.seek(0)
            self._fh.write(_HEADER.pack(MAGIC, VERSION, self.count))
            self._fh.close()
            os.replace(self._tmp, self.path)
        except OSError as exc:
            raise IoFailure(f"cannot finish shard {self.path}: {exc}") from exc

    def __enter__(self):
        return self

    def __exit__(self, exc_type, *_):
        if exc_type is None:
            self.close()
        else:
            self._fh.close()
            os.unlink(self._tmp)


def write_shard(records: Iterable, path) -> int:
    with ShardWriter(path) as w:
        for rec in records:
            w.write(rec)
    return w.count


class _Reader:
    def __init__(self, fh):
        self.fh = fh
        self.offset = 0

    def take(self, n: int) -> bytes:
        data = self.fh.read(n)
        if len(data) != n:
            raise CorruptShard(f"truncated shard: wanted {n} bytes at offset {self.offset}", offset=self.offset)
        self.offset += n
        return data

    def string(self) -> str:
        (n,) = struct.unpack("<H", self.take(2))
        start = self.offset
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError:
            raise CorruptShard(f"invalid UTF-8 at offset {start}", offset=start) from None


def iter_shard(fh) -> Iterator[ShardRecord]:
    r = _Reader(fh)
    magic, version, count = _HEADER.unpack(r.take(_HEADER.size))
    if magic != MAGIC:
        raise CorruptShard("bad shard magic", offset=0)
    if version != VERSION:
        raise CorruptShard(f"unsupported shard version {version}", offset=5)
    for _ in range(count):
        start = r.offset
        root = r.string()
        fen = r.string()
        (n_prior,) = struct.unpack("<B", r.take(1))
        prior = tuple(r.string() for _ in range(n_prior))
        played = r.string()
        mr, orat, ply, wc, bc, eb, ea, res, bl = _FIXED.unpack(r.take(_FIXED.size))
        if res > 2 or bl not in (0, 1, BLUNDER_UNLABELED) or not (math.isfinite(wc) and math.isfinite(bc)):
            raise CorruptShard(f"invalid field values in record at offset {start}", offset=start)
        yield ShardRecord(root, fen, prior, played, mr, orat, ply, wc, bc,
                          None if eb == EVAL_ABSENT else eb, None if ea == EVAL_ABSENT else ea,
                          res, None if bl == BLUNDER_UNLABELED else bool(bl))
    if fh.read(1):
        raise CorruptShard(f"trailing bytes after {count} records", offset=r.offset)


def read_shard(path) -> Iterator[ShardRecord]:
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise IoFailure(f"cannot read shard {path}: {exc}") from exc
    with fh:
        yield from iter_shard(fh)


def read_instances(path) -> Iterator[MoveInstance]:
    for rec in read_shard(path):
        yield rec.to_instance()


class ShardSet:
    """Re-iterable view over one or more shards, yielding MoveInstances."""

    def __init__(self, paths: Sequence):
        self.paths = [os.fspath(p) for p in paths]

    def __iter__(self) -> Iterator[MoveInstance]:
        for p in self.paths:
            yield from read_instances(p)


# ---------------------------------------------------------------------------
# streaming transforms


def shuffle_stream(items: Iterable[T], capacity: int, seed: int) -> Iterator[T]:
    """Bounded shuffle buffer: once full, each arrival replaces a random slot that is emitted."""
    if capacity < 1:
        raise ValueError("capacity must be >= 1")
    rng = random.Random(seed)
    buf: List[T] = []
    for item in items:
        if len(buf) < capacity:
            buf.append(item)
            continue
        i = rng.randrange(capacity)
        yield buf[i]
        buf[i] = item
    while buf:
        i = rng.randrange(len(buf))
        buf[i], buf[-1] = buf[-1], buf[i]
        yield buf.pop()


def downsample_negatives(pos: Iterable[T], neg: Iterable[T], ratio: float = 1.5, seed: int = 0) -> List[T]:
    """All positives followed by a seeded uniform sample of floor(ratio * |pos|) negatives.

    When there are too few negatives every one is kept and a warning is logged.
    """
    if ratio < 0:
        raise ValueError("ratio must be non-negative")
    positives = list(pos)
    negatives = list(neg)
    want = math.floor(ratio * len(positives) + 1e-9)
    if want > len(negatives):
        log.warning("%s", InsufficientNegatives(f"wanted {want} negatives, only {len(negatives)} available"))
        kept = negatives
    else:
        rng = random.Random(seed)
        idx = sorted(rng.sample(range(len(negatives)), want))
        kept = [negatives[i] for i in idx]
    return positives + kept


# ---------------------------------------------------------------------------
# collective positions


def _has_ep_capture(pos: Position) -> bool:
    if pos.ep_square is None:
        return False
    return any(m.to_square == pos.ep_square and pos.piece_type_at(m.from_square) == PAWN
               for m in legal_moves(pos))


def collective_key(pos: Position) -> str:
    """Colour-normalized key: white to move, placement, castling, and en passant only if capturable."""
    if pos.turn != WHITE:
        pos = mirror_color(pos)
    parts = pos.fen().split()
    if not _has_ep_capture(pos):
        parts[3] = "-"
    return " ".join(parts[:4])


@dataclass(frozen=True)
class CollectiveRecord:
    key: str
    occurrences: int
    blunders: int
    label: bool


class CollectiveAccumulator:
    """Per-key (occurrences, blunders) counts; partial accumulators merge associatively."""

    def __init__(self):
        self.occurrences: Counter = Counter()
        self.blunders: Counter = Counter()

    def add(self, inst) -> None:
        if inst.blunder is None:
            raise ValueError("collective aggregation needs labelled instances")
        k = collective_key(inst.history.current)
        self.occurrences[k] += 1
        if inst.blunder:
            self.blunders[k] += 1

    def merge(self, other: "CollectiveAccumulator") -> "CollectiveAccumulator":
        self.occurrences.update(other.occurrences)
        self.blunders.update(other.blunders)
        return self

    def records(self, min_occurrences: int = 10, strict: bool = True, rate: float = 0.10) -> List[CollectiveRecord]:
        out = []
        for k in sorted(self.occurrences):
            n = self.occurrences[k]
            if n < min_occurrences or (strict and n == min_occurrences):
                continue
            b = self.blunders[k]
            out.append(CollectiveRecord(k, n, b, b * 1.0 / n > rate))
        return out


def group_collective(instances: Iterable, min_occurrences: int = 10, strict: bool = True,
                     rate: float = 0.10) -> List[CollectiveRecord]:
    """Aggregate labelled instances by normalized position.

    Keys with ``occurrences <= min_occurrences`` are dropped (``< `` when
    ``strict`` is False). A record is labelled when more than ``rate`` of
    its occurrences were blunders.
    """
    acc = CollectiveAccumulator()
    for inst in instances:
        acc.add(inst)
    return acc.records(min_occurrences, strict, rate)


def collective_csv(records: Iterable[CollectiveRecord]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["key_fen", "occurrences", "blunders", "label"])
    for r in records:
        w.writerow([r.key, r.occurrences, r.blunders, int(r.label)])
    return out.getvalue()


def read_collective_csv(text: str) -> List[CollectiveRecord]:
    return [CollectiveRecord(r["key_fen"], int(r["occurrences"]), int(r["blunders"]), r["label"] == "1")
            for r in csv.DictReader(io.StringIO(text))]


def collective_position(key: str) -> Position:
    return parse_fen(key + " 0 1")
