"""Streaming Lichess-style PGN parsing, filtering and rating binning.

The parser reads one game at a time from a byte stream, so memory use does
not depend on the archive size. Games that cannot be parsed are skipped and
counted by reason; :class:`StreamCorrupt` is raised only for damage that
makes game boundaries unrecoverable.
"""

from __future__ import annotations

import datetime as dt
import enum
import logging
import random
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import BinaryIO, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

from . import core
from .core import BLACK, WHITE, Move, Position, PositionHistory
from .errors import AmbiguousSan, IllegalMove, InsufficientGames, NoSuchMove, ReplayFailure, StreamCorrupt
from .score import MATE_CP, Score

log = logging.getLogger(__name__)


class TimeFormat(enum.IntEnum):
    HYPERBULLET = 0
    BULLET = 1
    BLITZ = 2
    RAPID = 3
    CLASSICAL = 4


class SkipReason(str, enum.Enum):
    PARSE_ERROR = "parse_error"
    BAD_HEADER = "bad_header"
    VARIANT = "variant"
    TIME_CONTROL = "time_control"
    RATING_BIN = "rating_bin"
    MISSING_CLOCKS = "missing_clocks"
    MISSING_EVALS = "missing_evals"
    REPLAY_FAILURE = "replay_failure"


@dataclass(frozen=True)
class TimeControl:
    base: int
    increment: int

    @property
    def estimated_duration(self) -> int:
        return self.base + 40 * self.increment

    @classmethod
    def parse(cls, text: str) -> Optional["TimeControl"]:
        """``"180+2"`` -> TimeControl(180, 2); ``"-"`` (correspondence) -> None."""
        if text == "-":
            return None
        base, sep, inc = text.partition("+")
        if not sep or not base.isdigit() or not inc.isdigit():
            raise ValueError(f"bad time control {text!r}")
        return cls(int(base), int(inc))

    def __str__(self) -> str:
        return f"{self.base}+{self.increment}"


def classify_time_control(tc: Optional[TimeControl]) -> TimeFormat:
    if tc is None:
        return TimeFormat.CLASSICAL
    duration = tc.estimated_duration
    if duration < 60:
        return TimeFormat.HYPERBULLET
    if duration < 180:
        return TimeFormat.BULLET
    if duration < 480:
        return TimeFormat.BLITZ
    if duration < 900:
        return TimeFormat.RAPID
    return TimeFormat.CLASSICAL


RESULTS = ("1-0", "1/2-1/2", "0-1")


@dataclass(frozen=True)
class GameHeader:
    white_elo: Optional[int]
    black_elo: Optional[int]
    time_control: Optional[TimeControl]
    result: str
    has_evals: bool
    date: Optional[dt.date]
    tags: Tuple[Tuple[str, str], ...] = ()

    def __post_init__(self):
        # None marks an unrated player ("?" or a missing tag)
        for elo in (self.white_elo, self.black_elo):
            if elo is not None and elo <= 0:
                raise ValueError("ratings must be positive")
        if self.result not in RESULTS:
            raise ValueError(f"unknown result {self.result!r}")

    def tag(self, name: str, default: Optional[str] = None) -> Optional[str]:
        for k, v in self.tags:
            if k == name:
                return v
        return default

    @property
    def white_score(self) -> float:
        return {"1-0": 1.0, "1/2-1/2": 0.5, "0-1": 0.0}[self.result]


@dataclass(frozen=True)
class TimedMove:
    san: str
    clock_after: Optional[float] = None
    eval: Optional[Score] = None


@dataclass(frozen=True)
class GameRecord:
    header: GameHeader
    moves: Tuple[TimedMove, ...]

    @property
    def has_clocks(self) -> bool:
        return bool(self.moves) and all(m.clock_after is not None for m in self.moves)


@dataclass(frozen=True)
class RatingBin:
    lower: int
    width: int = 100

    def __post_init__(self):
        if self.width != 100 or self.lower % 100 or not MIN_BIN <= self.lower <= MAX_BIN:
            raise ValueError(f"bad rating bin {self.lower}+{self.width}")

    def __contains__(self, rating: int) -> bool:
        return self.lower <= rating < self.lower + self.width

    def __str__(self) -> str:
        return str(self.lower)


MIN_BIN, MAX_BIN = 800, 2500


def bin_for_rating(rating: int) -> Optional[RatingBin]:
    lower = rating // 100 * 100
    if lower < MIN_BIN or lower > MAX_BIN:
        return None
    return RatingBin(lower)


def bin_for_game(header: GameHeader) -> Optional[RatingBin]:
    if header.white_elo is None or header.black_elo is None:
        return None
    if header.white_elo // 100 != header.black_elo // 100:
        return None
    return bin_for_rating(header.white_elo)


# ---------------------------------------------------------------------------
# parsing

_TAG_RE = re.compile(r'^\[\s*([A-Za-z0-9_]+)\s+"((?:[^"\\]|\\.)*)"\s*\]\s*$')
_TOKEN_RE = re.compile(
    r"\{[^}]*\}|;[^\n]*|\(|\)|\$\d+|\d+\.+|1-0|0-1|1/2-1/2|\*|[A-Za-z][A-Za-z0-9+#=\-]*[!?]*|0-0(?:-0)?[+#]?[!?]*|\S"
)
_CLK_RE = re.compile(r"\[%clk\s+(\d+):(\d+):(\d+(?:\.\d+)?)\]")
_EVAL_RE = re.compile(r"\[%eval\s+(#?)(-?)(\d+(?:\.\d+)?)(?:,\d+)?\]")


def parse_clock(text: str) -> Optional[float]:
    m = _CLK_RE.search(text)
    if not m:
        return None
    h, mnt, sec = m.groups()
    value = int(h) * 3600 + int(mnt) * 60 + float(sec)
    return int(value) if value == int(value) else value


def parse_eval(text: str) -> Optional[Score]:
    m = _EVAL_RE.search(text)
    if not m:
        return None
    mate, neg, num = m.groups()
    if mate:
        n = int(num)
        return Score.from_mate(-n if neg else n, negative=bool(neg))
    cp = int(round(float(num) * 100))
    return Score.from_cp(-cp if neg else cp)


class ParseStats:
    def __init__(self):
        self.games = 0
        self.skipped: Counter = Counter()

    def skip(self, reason: SkipReason, detail: str = "") -> None:
        self.skipped[reason] += 1
        log.info("skip reason=%s %s", reason.value, detail)


def _iter_raw_games(reader: BinaryIO) -> Iterator[Tuple[List[str], List[str]]]:
    """Split the stream into (header lines, movetext lines) per game."""
    headers: List[str] = []
    movetext: List[str] = []
    in_comment = False
    first = True
    for raw in reader:
        if b"\x00" in raw:
            raise StreamCorrupt("NUL byte in PGN stream")
        line = raw.decode("utf-8", errors="replace")
        if first:
            line = line.lstrip("﻿")
            first = False
        line = line.rstrip("\r\n")
        stripped = line.strip()
        if in_comment:
            movetext.append(line)
            if "}" in line:
                in_comment = line.rfind("{") > line.rfind("}")
            continue
        if stripped.startswith("[") and not movetext:
            headers.append(stripped)
            continue
        if stripped.startswith("[") and movetext and _TAG_RE.match(stripped):
            yield headers, movetext
            headers, movetext = [stripped], []
            continue
        if not stripped:
            continue
        if stripped.startswith("%"):
            continue
        movetext.append(line)
        if line.rfind("{") > line.rfind("}"):
            in_comment = True
    if in_comment:
        raise StreamCorrupt("unterminated comment at end of stream")
    if headers or movetext:
        yield headers, movetext


def _elo(text: Optional[str]) -> Optional[int]:
    if text is None or text.strip() in ("", "?", "-"):
        return None
    return int(text)


def _parse_header(tags: Dict[str, str], has_evals: bool) -> GameHeader:
    date = None
    raw_date = tags.get("UTCDate") or tags.get("Date")
    if raw_date:
        try:
            date = dt.datetime.strptime(raw_date, "%Y.%m.%d").date()
        except ValueError:
            date = None
    try:
        tc = TimeControl.parse(tags.get("TimeControl", "-"))
    except ValueError:
        # "?", multi-stage FIDE controls and the like: treated as untimed
        tc = None
    return GameHeader(
        white_elo=_elo(tags.get("WhiteElo")),
        black_elo=_elo(tags.get("BlackElo")),
        time_control=tc,
        result=tags.get("Result", "*"),
        has_evals=has_evals,
        date=date,
        tags=tuple(tags.items()),
    )


def _parse_movetext(text: str) -> Tuple[List[TimedMove], Optional[str]]:
    moves: List[TimedMove] = []
    depth = 0
    result = None
    pending_san: Optional[str] = None
    clock: Optional[float] = None
    score: Optional[Score] = None

    def flush():
        if pending_san is not None:
            moves.append(TimedMove(pending_san, clock, score))

    for tok in _TOKEN_RE.findall(text):
        if tok == "(":
            depth += 1
            continue
        if tok == ")":
            depth -= 1
            if depth < 0:
                raise ValueError("unbalanced variation")
            continue
        if depth:
            continue
        if tok.startswith("{"):
            if pending_san is not None:
                c = parse_clock(tok)
                e = parse_eval(tok)
                clock = c if c is not None else clock
                score = e if e is not None else score
            continue
        if tok.startswith(";") or tok.startswith("$") or tok[0].isdigit() and tok.endswith("."):
            continue
        if tok in RESULTS or tok == "*":
            result = tok
            continue
        if tok[0].isalpha() or tok.startswith("0-0"):
            flush()
            pending_san, clock, score = tok, None, None
            continue
        raise ValueError(f"unexpected token {tok!r}")
    if depth:
        raise ValueError("unterminated variation")
    flush()
    return moves, result


def parse_pgn_stream(reader: BinaryIO, stats: Optional[ParseStats] = None) -> Iterator[GameRecord]:
    """Yield one :class:`GameRecord` per parseable game in ``reader``."""
    stats = stats if stats is not None else ParseStats()
    for header_lines, movetext_lines in _iter_raw_games(reader):
        stats.games += 1
        tags: Dict[str, str] = {}
        bad = False
        for line in header_lines:
            m = _TAG_RE.match(line)
            if not m:
                bad = True
                break
            tags[m.group(1)] = m.group(2).replace('\\"', '"')
        if bad:
            stats.skip(SkipReason.PARSE_ERROR, "malformed tag line")
            continue
        try:
            moves, result = _parse_movetext("\n".join(movetext_lines))
        except ValueError as exc:
            stats.skip(SkipReason.PARSE_ERROR, str(exc))
            continue
        if "Result" not in tags and result:
            tags["Result"] = result
        has_evals = bool(moves) and any(m.eval is not None for m in moves)
        try:
            header = _parse_header(tags, has_evals)
        except (KeyError, ValueError) as exc:
            stats.skip(SkipReason.BAD_HEADER, repr(exc))
            continue
        yield GameRecord(header, tuple(moves))


# ---------------------------------------------------------------------------
# writing


def _format_clock(seconds: float) -> str:
    whole = int(seconds)
    frac = seconds - whole
    text = f"{whole // 3600}:{whole // 60 % 60:02d}:{whole % 60:02d}"
    if frac:
        text += f"{frac:.1f}"[1:]
    return text


def format_game(game: GameRecord) -> str:
    """Serialize a game in Lichess export style (tags, then annotated movetext)."""
    lines = ['[%s "%s"]' % (k, v.replace('"', '\\"')) for k, v in game.header.tags]
    parts = []
    for i, mv in enumerate(game.moves):
        num = i // 2 + 1
        prefix = f"{num}. " if i % 2 == 0 else f"{num}... "
        annotations = []
        if mv.eval is not None:
            annotations.append(f"[%eval {mv.eval}]")
        if mv.clock_after is not None:
            annotations.append(f"[%clk {_format_clock(mv.clock_after)}]")
        text = prefix + mv.san
        if annotations:
            text += " { " + " ".join(annotations) + " }"
        parts.append(text)
    parts.append(game.header.result)
    return "\n".join(lines) + "\n\n" + " ".join(parts) + "\n\n"


def make_header(white_elo: int, black_elo: int, time_control: Optional[TimeControl], result: str,
                date: Optional[dt.date] = None, has_evals: bool = False, **extra: str) -> GameHeader:
    tags = {"Event": extra.pop("Event", "Rated game"), "Site": extra.pop("Site", "?")}
    if date is not None:
        tags["UTCDate"] = date.strftime("%Y.%m.%d")
    tags.update({
        "White": extra.pop("White", "?"), "Black": extra.pop("Black", "?"), "Result": result,
        "WhiteElo": str(white_elo), "BlackElo": str(black_elo),
        "TimeControl": str(time_control) if time_control else "-",
    })
    tags.update(extra)
    return GameHeader(white_elo, black_elo, time_control, result, has_evals, date, tuple(tags.items()))


# ---------------------------------------------------------------------------
# filtering and instance extraction


@dataclass(frozen=True)
class FilterPolicy:
    min_estimated_duration: int = 180
    min_clock: float = 30
    skip_opening_ply: int = 10
    require_same_bin: bool = True
    require_evals: bool = False
    require_clocks: bool = True
    # "mover": drop moves where the mover's clock is at or below min_clock (test sets)
    # "game": drop the rest of the game once either clock is at or below min_clock (training)
    clock_rule: str = "mover"

    def __post_init__(self):
        if self.min_estimated_duration < 0 or self.min_clock < 0 or self.skip_opening_ply < 0:
            raise ValueError("filter thresholds must be >= 0")
        if self.clock_rule not in ("mover", "game"):
            raise ValueError(f"unknown clock_rule {self.clock_rule!r}")


@dataclass(frozen=True)
class MoveInstance:
    history: PositionHistory
    played: Move
    mover_rating: int
    mover_clock_fraction: float
    opponent_clock_fraction: float
    eval_before: Optional[int] = None
    eval_after: Optional[int] = None
    result_for_mover: float = 0.5
    opponent_rating: int = 0
    ply: int = 0
    blunder: Optional[bool] = None

    @property
    def position(self) -> Position:
        return self.history.current

    @property
    def mover(self) -> bool:
        return self.history.current.turn

    @property
    def white_clock_fraction(self) -> float:
        return self.mover_clock_fraction if self.mover else self.opponent_clock_fraction

    @property
    def black_clock_fraction(self) -> float:
        return self.opponent_clock_fraction if self.mover else self.mover_clock_fraction

    @property
    def white_rating(self) -> int:
        return self.mover_rating if self.mover else self.opponent_rating

    @property
    def black_rating(self) -> int:
        return self.opponent_rating if self.mover else self.mover_rating


def game_skip_reason(game: GameRecord, policy: FilterPolicy) -> Optional[SkipReason]:
    """Game-level exclusion rules; None when the game is admissible."""
    h = game.header
    variant = h.tag("Variant", "Standard")
    if variant not in ("Standard", "From Position") or h.tag("FEN") or h.tag("SetUp") == "1":
        return SkipReason.VARIANT
    tc = h.time_control
    if tc is not None and tc.estimated_duration < policy.min_estimated_duration:
        return SkipReason.TIME_CONTROL
    if policy.require_same_bin and bin_for_game(h) is None:
        return SkipReason.RATING_BIN
    if policy.require_clocks and not game.has_clocks:
        return SkipReason.MISSING_CLOCKS
    if policy.require_evals and not h.has_evals:
        return SkipReason.MISSING_EVALS
    return None


def _fraction(clock: Optional[float], base: float) -> float:
    if clock is None:
        return 1.0
    if base <= 0:
        return 1.0 if clock > 0 else 0.0
    return min(1.0, max(0.0, clock / base))


def replay(game: GameRecord) -> List[Tuple[PositionHistory, Move]]:
    """(history before the move, move) for every ply; raises ReplayFailure."""
    h = PositionHistory.start()
    out = []
    for i, tm in enumerate(game.moves):
        try:
            move = core.san_to_move(tm.san, h.current)
        except (NoSuchMove, AmbiguousSan, IllegalMove) as exc:
            raise ReplayFailure(f"ply {i + 1}: {exc}") from exc
        out.append((h, move))
        h = h.push(move)
    return out


def extract_instances(game: GameRecord, policy: FilterPolicy) -> List[MoveInstance]:
    header = game.header
    plies = replay(game)
    tc = header.time_control
    base = float(tc.base) if tc is not None else 0.0
    clocks = {WHITE: float(base) if tc is not None else None, BLACK: float(base) if tc is not None else None}
    last_eval: Optional[int] = None
    white_score = header.white_score
    out: List[MoveInstance] = []

    for i, ((hist, move), tm) in enumerate(zip(plies, game.moves)):
        ply = i + 1
        mover = hist.current.turn
        mover_clock = clocks[mover]
        opp_clock = clocks[not mover]
        eval_after = tm.eval.centipawns() if tm.eval is not None else None
        eval_before = last_eval

        stop = False
        keep = ply > policy.skip_opening_ply
        if policy.min_clock > 0 or mover_clock is not None:
            mover_low = mover_clock is not None and mover_clock <= policy.min_clock
            opp_low = opp_clock is not None and opp_clock <= policy.min_clock
            if policy.clock_rule == "game" and (mover_low or opp_low):
                stop = True
            if mover_low:
                keep = False
        if stop:
            break
        if keep:
            out.append(MoveInstance(
                history=hist,
                played=move,
                mover_rating=(header.white_elo if mover else header.black_elo) or 0,
                opponent_rating=(header.black_elo if mover else header.white_elo) or 0,
                mover_clock_fraction=_fraction(mover_clock, base),
                opponent_clock_fraction=_fraction(opp_clock, base),
                eval_before=eval_before,
                eval_after=eval_after,
                result_for_mover=white_score if mover else 1.0 - white_score,
                ply=ply,
            ))
        if tm.clock_after is not None:
            clocks[mover] = float(tm.clock_after)
        last_eval = eval_after
    return out


@dataclass
class IngestStats:
    games_seen: int = 0
    games_used: int = 0
    instances: int = 0
    skipped: Counter = field(default_factory=Counter)
    per_bin_games: Counter = field(default_factory=Counter)
    per_bin_instances: Counter = field(default_factory=Counter)


def ingest(games: Iterable[GameRecord], policy: FilterPolicy, stats: Optional[IngestStats] = None,
           ) -> Iterator[Tuple[GameRecord, List[MoveInstance]]]:
    """Apply game filters and extract instances; skip reasons accumulate in ``stats``."""
    stats = stats if stats is not None else IngestStats()
    for game in games:
        stats.games_seen += 1
        reason = game_skip_reason(game, policy)
        if reason is not None:
            stats.skipped[reason.value] += 1
            log.info("skip reason=%s", reason.value)
            continue
        try:
            instances = extract_instances(game, policy)
        except ReplayFailure as exc:
            stats.skipped[SkipReason.REPLAY_FAILURE.value] += 1
            log.info("skip reason=%s %s", SkipReason.REPLAY_FAILURE.value, exc)
            continue
        stats.games_used += 1
        stats.instances += len(instances)
        b = bin_for_game(game.header)
        key = str(b) if b is not None else "none"
        stats.per_bin_games[key] += 1
        stats.per_bin_instances[key] += len(instances)
        yield game, instances


# ---------------------------------------------------------------------------
# block split


@dataclass(frozen=True)
class Block:
    year: int
    index: int  # ordinal of the block within its year
    size: int

    def covers(self, year: int, ordinal: int) -> bool:
        return year == self.year and self.index * self.size <= ordinal < (self.index + 1) * self.size


@dataclass
class SplitPlan:
    block_size: int
    blocks: List[Block]
    train: List[Block]
    validation: List[Block]
    unused: List[Block]
    leftover: Dict[int, int]
    warnings: List[str]

    def role_of(self, year: int, ordinal: int) -> Optional[str]:
        """Role of the ``ordinal``-th game (0-based, input order) of ``year``."""
        key = (year, ordinal // self.block_size)
        for role, blocks in (("train", self.train), ("validation", self.validation)):
            if any((b.year, b.index) == key for b in blocks):
                return role
        return None


def _year_of(g) -> Optional[int]:
    header = g.header if hasattr(g, "header") else g
    return header.date.year if header.date is not None else None


def build_blocks(games: Iterable, block_size: int = 200_000, per_year: int = 20, seed: int = 0,
                 validation_blocks: int = 3) -> SplitPlan:
    """Partition games into per-year fixed-size blocks and assign roles.

    Games of one year fill that year's blocks in input order; a trailing
    partial block is left over. The last ``validation_blocks`` blocks of the
    final year are held out for validation, and ``per_year`` of the
    remaining blocks of each year are drawn (seeded) for training.
    """
    if block_size < 1:
        raise ValueError("block_size must be >= 1")
    counts: Counter = Counter()
    for g in games:
        year = _year_of(g)
        if year is not None:
            counts[year] += 1

    warnings: List[str] = []
    years = sorted(counts)
    by_year = {y: [Block(y, i, block_size) for i in range(counts[y] // block_size)] for y in years}
    for y in years:
        if not by_year[y]:
            msg = f"year {y}: {counts[y]} games, fewer than one block of {block_size}"
            warnings.append(msg)
            log.warning("%s: %s", InsufficientGames.__name__, msg)
    leftover = {y: counts[y] % block_size for y in years}
    blocks = [b for y in years for b in by_year[y]]

    validation: List[Block] = []
    if years and validation_blocks:
        validation = by_year[years[-1]][-validation_blocks:]
    rng = random.Random(seed)
    train: List[Block] = []
    for y in years:
        pool = [b for b in by_year[y] if b not in validation]
        if len(pool) < per_year:
            if pool:
                warnings.append(f"year {y}: only {len(pool)} blocks available for {per_year} requested")
            chosen = list(pool)
        else:
            chosen = sorted(rng.sample(pool, per_year), key=lambda b: b.index)
        train.extend(chosen)
    unused = [b for b in blocks if b not in train and b not in validation]
    return SplitPlan(block_size, blocks, train, validation, unused, leftover, warnings)


def assign_roles(games: Iterable, plan: SplitPlan) -> Iterator[Tuple[object, Optional[str]]]:
    """Second pass over the same games, pairing each with its role (or None)."""
    ordinals: Counter = Counter()
    for g in games:
        year = _year_of(g)
        if year is None:
            yield g, None
            continue
        role = plan.role_of(year, ordinals[year])
        ordinals[year] += 1
        yield g, role
