"""Fixed-shape tensor encodings of positions, histories, moves and metadata.

Policy input (162 x 8 x 8), mover-relative, flipped vertically when black
is to move::

    planes 12k .. 12k+11   frame k (k=0 current, k=1..12 history, most recent first):
                           mover P N B R Q K, then opponent P N B R Q K
    156..159               castling: mover O-O, mover O-O-O, opponent O-O, opponent O-O-O
    160                    ones when black is to move
    161                    halfmove clock / 100, clamped to 1

Move index (0..4671) = plane * 64 + oriented from-square::

    0..55    queen-like: direction (N NE E SE S SW W NW) * 7 + distance - 1
    56..63   knight: offsets (1,2) (2,1) (2,-1) (1,-2) (-1,-2) (-2,-1) (-2,1) (-1,2)
    64..72   underpromotion: 64 + piece (N B R) * 3 + (forward, capture-left, capture-right)

Queen promotions use the queen-like planes. Blunder input (17 or 22 x 8 x 8)
uses absolute orientation: white P..K, black P..K, castling K Q k q, a
white-to-move plane, then optionally five constant metadata planes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .core import (
    BISHOP, BLACK, CASTLE_BK, CASTLE_BQ, CASTLE_WK, CASTLE_WQ, HISTORY_PLIES, KING, KNIGHT, PAWN, QUEEN, ROOK,
    WHITE, Move, Position, PositionHistory, is_legal, legal_moves, square_file, square_rank,
)
from .errors import NotLegal, UnencodableMove

N_FRAMES = HISTORY_PLIES + 1
POLICY_PLANES = N_FRAMES * 12 + 6
MOVE_PLANES = 73
N_MOVES = MOVE_PLANES * 64
BLUNDER_BOARD_PLANES = 17
BLUNDER_META_PLANES = 22
RATING_NORMALIZER = 3000.0

QUEEN_DIRECTIONS = ((0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1))
KNIGHT_OFFSETS = ((1, 2), (2, 1), (2, -1), (1, -2), (-1, -2), (-2, -1), (-2, 1), (-1, 2))
UNDERPROMOTIONS = (KNIGHT, BISHOP, ROOK)
UNDERPROMO_FILE_DELTAS = (0, -1, 1)


def _sign(x: int) -> int:
    return (x > 0) - (x < 0)


def _orient(sq: int, color: bool) -> int:
    return sq if color == WHITE else sq ^ 56


# ---------------------------------------------------------------------------
# move index


def encode_move(move: Move, pos: Position) -> int:
    us = pos.turn
    fr = _orient(move.from_square, us)
    to = _orient(move.to_square, us)
    df = square_file(to) - square_file(fr)
    dr = square_rank(to) - square_rank(fr)
    if move.promotion in UNDERPROMOTIONS:
        if dr != 1 or df not in (-1, 0, 1):
            raise UnencodableMove(f"bad underpromotion geometry {move.uci()}")
        plane = 64 + UNDERPROMOTIONS.index(move.promotion) * 3 + UNDERPROMO_FILE_DELTAS.index(df)
    elif (df, dr) in KNIGHT_OFFSETS:
        plane = 56 + KNIGHT_OFFSETS.index((df, dr))
    else:
        dist = max(abs(df), abs(dr))
        if dist == 0 or (df and dr and abs(df) != abs(dr)):
            raise UnencodableMove(f"move {move.uci()} is not a queen, knight or promotion move")
        plane = QUEEN_DIRECTIONS.index((_sign(df), _sign(dr))) * 7 + dist - 1
    return plane * 64 + fr


def _build_decode_tables():
    to_sq = np.full(N_MOVES, -1, dtype=np.int64)
    promo = np.zeros(N_MOVES, dtype=np.int64)
    for plane in range(MOVE_PLANES):
        for fr in range(64):
            f, r = square_file(fr), square_rank(fr)
            if plane < 56:
                (df, dr), dist = QUEEN_DIRECTIONS[plane // 7], plane % 7 + 1
                df, dr = df * dist, dr * dist
            elif plane < 64:
                df, dr = KNIGHT_OFFSETS[plane - 56]
            else:
                k = plane - 64
                df, dr = UNDERPROMO_FILE_DELTAS[k % 3], 1
                promo[plane * 64 + fr] = UNDERPROMOTIONS[k // 3]
            if 0 <= f + df < 8 and 0 <= r + dr < 8:
                to_sq[plane * 64 + fr] = (f + df) + 8 * (r + dr)
    return to_sq, promo


_DECODE_TO, _DECODE_PROMO = _build_decode_tables()
_DECODE_FROM = np.tile(np.arange(64, dtype=np.int64), MOVE_PLANES)
_QUEENLIKE = np.arange(N_MOVES) < 56 * 64


def geometric_move(index: int, pos: Position) -> Optional[Move]:
    """The move an index denotes in ``pos`` regardless of legality (None if off-board)."""
    if not 0 <= index < N_MOVES:
        return None
    to_o = int(_DECODE_TO[index])
    if to_o < 0:
        return None
    us = pos.turn
    fr = _orient(index % 64, us)
    to = _orient(to_o, us)
    promo = int(_DECODE_PROMO[index]) or None
    if promo is None and index < 56 * 64 and to_o >= 56 and pos.piece_type_at(fr) == PAWN and pos.occ[us] >> fr & 1:
        promo = QUEEN
    return Move(fr, to, promo)


def decode_move(index: int, pos: Position) -> Move:
    move = geometric_move(index, pos)
    if move is None or not is_legal(pos, move):
        raise NotLegal(f"index {index} is not a legal move in {pos.fen()}")
    return move


def decode_all(pos: Position) -> np.ndarray:
    """Boolean mask over all 4672 indices: which decode to a legal move.

    Vectorized over the geometric decode tables, independent of
    :func:`encode_move`.
    """
    us = pos.turn
    flip = 0 if us == WHITE else 56
    our_pawns = pos.bb[PAWN] & pos.occ[us]
    pawn_from = np.array([(our_pawns >> (sq ^ flip)) & 1 for sq in range(64)], dtype=bool)[_DECODE_FROM]
    valid = _DECODE_TO >= 0
    promo = np.where(
        _DECODE_PROMO > 0, _DECODE_PROMO,
        np.where(_QUEENLIKE & pawn_from & (_DECODE_TO >= 56), QUEEN, 0),
    )
    fr = _DECODE_FROM ^ flip
    to = np.where(valid, _DECODE_TO, 0) ^ flip
    keys = np.where(valid, (fr << 9) | (to << 3) | promo, -1)
    legal = np.fromiter(pos._legal_packed(), dtype=np.int64)
    return np.isin(keys, legal) & valid


def legal_move_indices(pos: Position) -> List[int]:
    return [encode_move(m, pos) for m in legal_moves(pos)]


def legal_mask(pos: Position) -> np.ndarray:
    mask = np.zeros(N_MOVES, dtype=bool)
    mask[legal_move_indices(pos)] = True
    return mask


# ---------------------------------------------------------------------------
# policy input

_PIECE_ORDER = (PAWN, KNIGHT, BISHOP, ROOK, QUEEN, KING)


def _frame_bitboards(pos: Position, us: bool) -> List[int]:
    bb, occ = pos.bb, pos.occ
    return [bb[pt] & occ[us] for pt in _PIECE_ORDER] + [bb[pt] & occ[not us] for pt in _PIECE_ORDER]


def _unpack(boards: List[int], flip: bool) -> np.ndarray:
    arr = np.array(boards, dtype=np.uint64)
    if flip:
        arr = arr.byteswap()
    bits = np.unpackbits(arr.view(np.uint8), bitorder="little")
    return bits.reshape(len(boards), 8, 8)


def encode_policy_input(h: PositionHistory, use_history: bool = True, out: Optional[np.ndarray] = None) -> np.ndarray:
    if out is None:
        out = np.zeros((POLICY_PLANES, 8, 8), dtype=np.float32)
    else:
        out[...] = 0
    cur = h.current
    us = cur.turn
    frames = [cur]
    if use_history:
        frames.extend(p for p, _ in reversed(h.prior))
    boards: List[int] = []
    for pos in frames:
        boards.extend(_frame_bitboards(pos, us))
    out[: len(boards)] = _unpack(boards, flip=us == BLACK)
    c = cur.castling
    mine = (CASTLE_WK, CASTLE_WQ) if us == WHITE else (CASTLE_BK, CASTLE_BQ)
    theirs = (CASTLE_BK, CASTLE_BQ) if us == WHITE else (CASTLE_WK, CASTLE_WQ)
    base = N_FRAMES * 12
    for i, flag in enumerate(mine + theirs):
        if c & flag:
            out[base + i] = 1.0
    if us == BLACK:
        out[base + 4] = 1.0
    out[base + 5] = min(cur.halfmove_clock / 100.0, 1.0)
    return out


def encode_policy_batch(histories: Sequence[PositionHistory], use_history: bool = True) -> np.ndarray:
    out = np.zeros((len(histories), POLICY_PLANES, 8, 8), dtype=np.float32)
    for i, h in enumerate(histories):
        encode_policy_input(h, use_history, out[i])
    return out


# ---------------------------------------------------------------------------
# blunder input


@dataclass(frozen=True)
class MetadataVector:
    white_rating: int
    black_rating: int
    white_time: float
    black_time: float
    cp: Optional[int] = None

    def __post_init__(self):
        if self.white_rating <= 0 or self.black_rating <= 0:
            raise ValueError("ratings must be positive")
        if not (0.0 <= self.white_time <= 1.0 and 0.0 <= self.black_time <= 1.0):
            raise ValueError("time fractions must lie in [0, 1]")

    @classmethod
    def from_instance(cls, inst) -> "MetadataVector":
        return cls(inst.white_rating, inst.black_rating, inst.white_clock_fraction,
                   inst.black_clock_fraction, inst.eval_before)


def normalize_rating(rating: float) -> float:
    return min(rating / RATING_NORMALIZER, 1.0)


def encode_blunder_input(pos: Position, meta: Optional[MetadataVector] = None, table=None,
                         out: Optional[np.ndarray] = None) -> np.ndarray:
    planes = BLUNDER_META_PLANES if meta is not None else BLUNDER_BOARD_PLANES
    if out is None:
        out = np.zeros((planes, 8, 8), dtype=np.float32)
    else:
        out[...] = 0
    bb, occ = pos.bb, pos.occ
    boards = [bb[pt] & occ[WHITE] for pt in _PIECE_ORDER] + [bb[pt] & occ[BLACK] for pt in _PIECE_ORDER]
    out[:12] = _unpack(boards, flip=False)
    for i, flag in enumerate((CASTLE_WK, CASTLE_WQ, CASTLE_BK, CASTLE_BQ)):
        if pos.castling & flag:
            out[12 + i] = 1.0
    if pos.turn == WHITE:
        out[16] = 1.0
    if meta is not None:
        if meta.cp is None:
            cp_prob = 0.5
        elif table is None:
            raise ValueError("metadata encoding needs a win-probability table for the cp channel")
        else:
            cp_prob = table.lookup(meta.cp)
        values = (normalize_rating(meta.white_rating), normalize_rating(meta.black_rating),
                  meta.white_time, meta.black_time, cp_prob)
        for i, v in enumerate(values):
            out[17 + i] = v
    return out
