"""A small deterministic UCI engine: material evaluation, fixed-depth alpha-beta, MultiPV.

It exists so the UCI client, the engine predictor and the decomposition
harness can run without a third-party engine. Run it with
``python -m humanchess.refengine``.
"""

from __future__ import annotations

import sys
from typing import IO, List, Tuple

from .core import STARTING_FEN, Move, Position, PositionHistory, apply_move, legal_moves, parse_fen
from .errors import HumanChessError
from .synthetic import PIECE_VALUES, material

MATE_SCORE = 100_000


def evaluate_static(pos: Position) -> int:
    """Material from the side to move's perspective, in centipawns."""
    return 100 * (material(pos, pos.turn) - material(pos, not pos.turn))


def _ordered(pos: Position) -> List[Move]:
    moves = legal_moves(pos)
    # captures first, most valuable victim first; stable so ties keep legal order
    return sorted(moves, key=lambda m: -PIECE_VALUES.get(pos.piece_type_at(m.to_square), 0))


def negamax(pos: Position, depth: int, alpha: int, beta: int, ply: int = 0) -> int:
    moves = _ordered(pos)
    if not moves:
        return -(MATE_SCORE - ply) if pos.is_check() else 0
    if depth == 0:
        return evaluate_static(pos)
    best = -MATE_SCORE - 1
    for m in moves:
        score = -negamax(apply_move(pos, m), depth - 1, -beta, -alpha, ply + 1)
        if score > best:
            best = score
        if best > alpha:
            alpha = best
        if alpha >= beta:
            break
    return best


def search(pos: Position, depth: int, multipv: int = 1) -> List[Tuple[Move, int]]:
    """Root moves with exact scores, best first (legal order on ties), truncated to ``multipv``."""
    depth = max(1, depth)
    scored = []
    for i, m in enumerate(legal_moves(pos)):
        s = -negamax(apply_move(pos, m), depth - 1, -MATE_SCORE - 1, MATE_SCORE + 1, 1)
        scored.append((-s, i, m))
    scored.sort()
    return [(m, -s) for s, _, m in scored[:multipv]]


def _format_score(s: int) -> str:
    if abs(s) > MATE_SCORE - 1000:
        plies = MATE_SCORE - abs(s)
        n = (plies + 1) // 2
        return f"mate {n if s > 0 else -n}"
    return f"cp {s}"


def run(inp: IO[str], out: IO[str]) -> None:
    h = PositionHistory.start()
    multipv = 1
    for line in inp:
        tokens = line.split()
        if not tokens:
            continue
        cmd = tokens[0]
        try:
            if cmd == "uci":
                out.write("id name refmaterial\nid author humanchess\n"
                          "option name MultiPV type spin default 1 min 1 max 500\nuciok\n")
            elif cmd == "isready":
                out.write("readyok\n")
            elif cmd == "setoption" and len(tokens) >= 5 and tokens[2].lower() == "multipv":
                multipv = max(1, int(tokens[4]))
            elif cmd == "ucinewgame":
                h = PositionHistory.start()
            elif cmd == "position":
                if tokens[1] == "startpos":
                    root, rest = parse_fen(STARTING_FEN), tokens[2:]
                else:
                    k = tokens.index("moves") if "moves" in tokens else len(tokens)
                    root, rest = parse_fen(" ".join(tokens[2:k])), tokens[k:]
                h = PositionHistory.start(root)
                for text in rest[1:]:
                    h = h.push(Move.from_uci(text))
            elif cmd == "go":
                depth = int(tokens[tokens.index("depth") + 1]) if "depth" in tokens else 2
                lines = search(h.current, depth, multipv)
                for k, (m, s) in enumerate(lines, start=1):
                    out.write(f"info depth {depth} multipv {k} score {_format_score(s)} pv {m.uci()}\n")
                out.write(f"bestmove {lines[0][0].uci() if lines else '0000'}\n")
            elif cmd == "quit":
                break
        except (HumanChessError, ValueError, IndexError) as exc:
            out.write(f"info string error {type(exc).__name__}: {exc}\n")
        out.flush()


if __name__ == "__main__":
    run(sys.stdin, sys.stdout)
