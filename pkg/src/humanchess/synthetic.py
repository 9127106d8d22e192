"""Scripted move policies, self-play game generation and random positions.

These stand in for human populations where real data is unavailable or a
known ground truth is needed. Each policy has a seeded "style table"
scoring (piece type, destination square); among equally valued moves the
one with the highest style score is chosen, so a policy is deterministic
apart from its explicit epsilon noise.
"""

from __future__ import annotations

import datetime as dt
import random
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence, Tuple

from .core import (
    BISHOP, KING, KNIGHT, PAWN, QUEEN, ROOK, WHITE, Move, Position, PositionHistory, apply_move, legal_moves,
    move_to_san, popcount, starting_position,
)
from .pgn import GameRecord, MoveInstance, TimeControl, TimedMove, make_header
from .score import MATE_CP, Score

PIECE_VALUES = {PAWN: 1, KNIGHT: 3, BISHOP: 3, ROOK: 5, QUEEN: 9, KING: 0}
_MATE = 1000


def material(pos: Position, color: bool) -> int:
    occ = pos.occ[color]
    return sum(v * popcount(pos.bb[pt] & occ) for pt, v in PIECE_VALUES.items())


def material_cp(pos: Position) -> int:
    """White-minus-black material in centipawns."""
    return 100 * (material(pos, WHITE) - material(pos, not WHITE))


def _gain(pos: Position, move: Move) -> int:
    """Immediate material gain for the mover: capture value plus promotion bonus."""
    gain = 0
    victim = pos.piece_type_at(move.to_square)
    if victim:
        gain += PIECE_VALUES[victim]
    elif pos.piece_type_at(move.from_square) == PAWN and move.to_square == pos.ep_square:
        gain += 1
    if move.promotion:
        gain += PIECE_VALUES[move.promotion] - 1
    return gain


class Policy:
    name = "policy"

    def __init__(self, style_seed: int = 0, epsilon: float = 0.0):
        srng = random.Random(style_seed)
        self.style = [[srng.random() for _ in range(64)] for _ in range(7)]
        self.epsilon = epsilon

    def values(self, pos: Position, moves: Sequence[Move]) -> List[float]:
        return [0.0] * len(moves)

    def choose(self, pos: Position, rng: random.Random) -> Move:
        moves = legal_moves(pos)
        if not moves:
            raise ValueError("no legal moves")
        if self.epsilon and rng.random() < self.epsilon:
            return moves[rng.randrange(len(moves))]
        return self.best(pos, moves)

    def best(self, pos: Position, moves: Optional[Sequence[Move]] = None) -> Move:
        moves = legal_moves(pos) if moves is None else moves
        vals = self.values(pos, moves)
        style = self.style

        def key(i):
            m = moves[i]
            return (vals[i], style[pos.piece_type_at(m.from_square)][m.to_square ^ (0 if pos.turn else 56)])

        return moves[max(range(len(moves)), key=key)]


class RandomPolicy(Policy):
    name = "random"

    def __init__(self, style_seed: int = 0):
        super().__init__(style_seed, epsilon=1.0)


class GreedyPolicy(Policy):
    """One ply: maximize immediate material gain; checkmate beats everything."""

    name = "greedy"

    def __init__(self, style_seed: int = 1, epsilon: float = 0.3):
        super().__init__(style_seed, epsilon)

    def values(self, pos, moves):
        out = []
        for m in moves:
            v = _gain(pos, m)
            child = apply_move(pos, m)
            if not legal_moves(child) and child.is_check():
                v = _MATE
            out.append(v)
        return out


class MinimaxPolicy(Policy):
    """Two ply: own gain minus the opponent's best immediate gain in reply."""

    name = "minimax"

    def __init__(self, style_seed: int = 2, epsilon: float = 0.1):
        super().__init__(style_seed, epsilon)

    def values(self, pos, moves):
        out = []
        for m in moves:
            child = apply_move(pos, m)
            replies = legal_moves(child)
            if not replies:
                out.append(_MATE if child.is_check() else 0)
                continue
            reply = max(_gain(child, r) for r in replies)
            out.append(_gain(pos, m) - reply)
        return out


POLICIES = {"random": RandomPolicy, "greedy": GreedyPolicy, "minimax": MinimaxPolicy}


def make_policy(name: str, **kw) -> Policy:
    try:
        return POLICIES[name](**kw)
    except KeyError:
        raise ValueError(f"unknown policy {name!r}; choose from {sorted(POLICIES)}") from None


# ---------------------------------------------------------------------------
# self-play


def _insufficient(pos: Position) -> bool:
    heavy = pos.bb[PAWN] | pos.bb[ROOK] | pos.bb[QUEEN]
    return not heavy and popcount(pos.bb[KNIGHT] | pos.bb[BISHOP]) <= 1


@dataclass
class PlayedGame:
    moves: List[Move]
    histories: List[PositionHistory]
    result: str
    final: Position


def play_game(white: Policy, black: Policy, rng: random.Random, max_plies: int = 200,
              start: Optional[Position] = None) -> PlayedGame:
    h = PositionHistory.start(start or starting_position())
    moves, hists = [], []
    result = "1/2-1/2"
    while len(moves) < max_plies:
        pos = h.current
        if not legal_moves(pos):
            if pos.is_check():
                result = "0-1" if pos.turn == WHITE else "1-0"
            break
        if pos.halfmove_clock >= 100 or _insufficient(pos):
            break
        mover = white if pos.turn == WHITE else black
        m = mover.choose(pos, rng)
        hists.append(h)
        moves.append(m)
        h = h.push(m)
    else:
        pos = h.current
        if not legal_moves(pos) and pos.is_check():
            result = "0-1" if pos.turn == WHITE else "1-0"
    return PlayedGame(moves, hists, result, h.current)


def game_record(game: PlayedGame, white_elo: int, black_elo: int, rng: random.Random,
                time_control: TimeControl = TimeControl(600, 0), date: Optional[dt.date] = None,
                with_evals: bool = True, **tags) -> GameRecord:
    """Annotate a played game with clocks and material evaluations, Lichess style."""
    clocks = [float(time_control.base)] * 2
    timed = []
    for h, m in zip(game.histories, game.moves):
        pos = h.current
        side = 0 if pos.turn == WHITE else 1
        clocks[side] = max(0.0, clocks[side] - rng.randint(1, 6) + time_control.increment)
        child = apply_move(pos, m)
        score = None
        if with_evals:
            if not legal_moves(child) and child.is_check():
                score = Score.from_mate(0, negative=child.turn == WHITE)
            else:
                score = Score.from_cp(max(-MATE_CP + 1, min(MATE_CP - 1, material_cp(child))))
        timed.append(TimedMove(move_to_san(pos, m), float(clocks[side]), score))
    header = make_header(white_elo, black_elo, time_control, game.result, date=date or dt.date(2019, 1, 1),
                         has_evals=with_evals, **tags)
    return GameRecord(header, tuple(timed))


def generate_games(policy: Policy, n_games: int, seed: int, elo: int = 1500, max_plies: int = 200,
                   opponent: Optional[Policy] = None, **kw) -> Iterator[GameRecord]:
    rng = random.Random(seed)
    for i in range(n_games):
        g = play_game(policy, opponent or policy, rng, max_plies)
        yield game_record(g, elo, elo, rng, Site=f"synthetic/{policy.name}/{seed}/{i}", **kw)


def population_instances(policy: Policy, n_moves: int, seed: int, elo: int = 1500, max_plies: int = 120,
                         skip_opening_ply: int = 0) -> List[MoveInstance]:
    """Moves of self-play games, as instances, until ``n_moves`` are collected."""
    rng = random.Random(seed)
    out: List[MoveInstance] = []
    while len(out) < n_moves:
        g = play_game(policy, policy, rng, max_plies)
        score = {"1-0": 1.0, "0-1": 0.0}.get(g.result, 0.5)
        for ply, (h, m) in enumerate(zip(g.histories, g.moves), start=1):
            if ply <= skip_opening_ply:
                continue
            mover = h.current.turn
            out.append(MoveInstance(h, m, elo, 1.0, 1.0, result_for_mover=score if mover else 1 - score,
                                    opponent_rating=elo, ply=ply))
            if len(out) == n_moves:
                break
    return out


# ---------------------------------------------------------------------------
# random positions


def random_history(rng: random.Random, max_plies: int = 80, min_plies: int = 0) -> PositionHistory:
    """History reached by uniformly random legal moves from the start (stops early at game end)."""
    target = rng.randint(min_plies, max_plies)
    h = PositionHistory.start()
    for _ in range(target):
        moves = legal_moves(h.current)
        if not moves:
            break
        h = h.push(moves[rng.randrange(len(moves))])
    return h


def random_positions(n: int, seed: int, max_plies: int = 80, min_plies: int = 0,
                     require_moves: bool = False) -> List[Position]:
    rng = random.Random(seed)
    out = []
    while len(out) < n:
        pos = random_history(rng, max_plies, min_plies).current
        if require_moves and not legal_moves(pos):
            continue
        out.append(pos)
    return out


def queen_attacked(pos: Position) -> Optional[bool]:
    """Whether any queen of the side to move is attacked; None without a queen."""
    queens = pos.bb[QUEEN] & pos.occ[pos.turn]
    if not queens:
        return None
    return any(pos.is_attacked_by(not pos.turn, s) for s in range(64) if queens >> s & 1)
