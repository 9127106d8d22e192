"""Rules-of-chess kernel: bitboard positions, legal move generation, FEN/SAN/UCI.

Squares are numbered ``file + 8 * rank`` (a1 = 0, h8 = 63). Positions are
immutable values; :func:`apply_move` returns a new position.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Dict, Iterator, List, NamedTuple, Optional, Tuple

from .errors import AmbiguousSan, IllegalMove, IllegalPosition, MalformedFen, NoSuchMove

Color = bool
WHITE: Color = True
BLACK: Color = False

PAWN, KNIGHT, BISHOP, ROOK, QUEEN, KING = range(1, 7)
PIECE_TYPES = (PAWN, KNIGHT, BISHOP, ROOK, QUEEN, KING)
PIECE_SYMBOLS = ("", "p", "n", "b", "r", "q", "k")
PROMOTION_PIECES = (KNIGHT, BISHOP, ROOK, QUEEN)

FILE_NAMES = "abcdefgh"
RANK_NAMES = "12345678"
SQUARE_NAMES = [f + r for r in RANK_NAMES for f in FILE_NAMES]

STARTING_FEN = "rnbqkbnr/pppppppp/8/8/8/8/PPPPPPPP/RNBQKBNR w KQkq - 0 1"

# castling right bits
CASTLE_WK, CASTLE_WQ, CASTLE_BK, CASTLE_BQ = 1, 2, 4, 8
_CASTLE_CHARS = (("K", CASTLE_WK), ("Q", CASTLE_WQ), ("k", CASTLE_BK), ("q", CASTLE_BQ))

BB_ALL = (1 << 64) - 1
BB_RANK_1 = 0xFF
BB_RANK_8 = 0xFF << 56
BB_FILE_A = 0x0101010101010101
BB_FILE_H = BB_FILE_A << 7


def square(file: int, rank: int) -> int:
    return file + 8 * rank


def square_file(sq: int) -> int:
    return sq & 7


def square_rank(sq: int) -> int:
    return sq >> 3


def square_name(sq: int) -> str:
    return SQUARE_NAMES[sq]


def parse_square(name: str) -> int:
    try:
        return SQUARE_NAMES.index(name)
    except ValueError:
        raise ValueError(f"invalid square name: {name!r}") from None


def square_mirror(sq: int) -> int:
    return sq ^ 56


def flip_vertical(bb: int) -> int:
    return int.from_bytes(bb.to_bytes(8, "little"), "big")


def popcount(bb: int) -> int:
    return bin(bb).count("1")


def scan(bb: int) -> Iterator[int]:
    while bb:
        low = bb & -bb
        yield low.bit_length() - 1
        bb ^= low


# ---------------------------------------------------------------------------
# attack tables


def _on_board(f: int, r: int) -> bool:
    return 0 <= f < 8 and 0 <= r < 8


def _step_table(deltas) -> List[int]:
    table = []
    for sq in range(64):
        f, r = square_file(sq), square_rank(sq)
        bb = 0
        for df, dr in deltas:
            if _on_board(f + df, r + dr):
                bb |= 1 << square(f + df, r + dr)
        table.append(bb)
    return table


def _ray_attacks(sq: int, occ: int, deltas) -> int:
    bb = 0
    f0, r0 = square_file(sq), square_rank(sq)
    for df, dr in deltas:
        f, r = f0 + df, r0 + dr
        while _on_board(f, r):
            bit = 1 << square(f, r)
            bb |= bit
            if occ & bit:
                break
            f += df
            r += dr
    return bb


def _relevant_mask(sq: int, deltas) -> int:
    """Squares whose occupancy changes the slider's attack set (edges excluded)."""
    bb = 0
    f0, r0 = square_file(sq), square_rank(sq)
    for df, dr in deltas:
        f, r = f0 + df, r0 + dr
        while _on_board(f + df, r + dr):
            bb |= 1 << square(f, r)
            f += df
            r += dr
    return bb


def _subsets(mask: int) -> Iterator[int]:
    subset = 0
    while True:
        yield subset
        subset = (subset - mask) & mask
        if not subset:
            return


def _slider_table(deltas) -> Tuple[List[int], List[Dict[int, int]]]:
    masks, tables = [], []
    for sq in range(64):
        mask = _relevant_mask(sq, deltas)
        masks.append(mask)
        tables.append({occ: _ray_attacks(sq, occ, deltas) for occ in _subsets(mask)})
    return masks, tables


KNIGHT_DELTAS = ((1, 2), (2, 1), (2, -1), (1, -2), (-1, -2), (-2, -1), (-2, 1), (-1, 2))
KING_DELTAS = ((0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1))
ROOK_DELTAS = ((0, 1), (1, 0), (0, -1), (-1, 0))
BISHOP_DELTAS = ((1, 1), (1, -1), (-1, -1), (-1, 1))

KNIGHT_ATTACKS = _step_table(KNIGHT_DELTAS)
KING_ATTACKS = _step_table(KING_DELTAS)
# PAWN_ATTACKS[color][sq]: squares a pawn of ``color`` on ``sq`` attacks
PAWN_ATTACKS = (_step_table(((-1, -1), (1, -1))), _step_table(((-1, 1), (1, 1))))

_RANK_MASKS, _RANK_TABLE = _slider_table(((1, 0), (-1, 0)))
_FILE_MASKS, _FILE_TABLE = _slider_table(((0, 1), (0, -1)))
_DIAG_MASKS, _DIAG_TABLE = _slider_table(BISHOP_DELTAS)

ROOK_PSEUDO = [_ray_attacks(sq, 0, ROOK_DELTAS) for sq in range(64)]
BISHOP_PSEUDO = [_ray_attacks(sq, 0, BISHOP_DELTAS) for sq in range(64)]


def rook_attacks(sq: int, occ: int) -> int:
    return _RANK_TABLE[sq][occ & _RANK_MASKS[sq]] | _FILE_TABLE[sq][occ & _FILE_MASKS[sq]]


def bishop_attacks(sq: int, occ: int) -> int:
    return _DIAG_TABLE[sq][occ & _DIAG_MASKS[sq]]


def _line_tables() -> Tuple[List[List[int]], List[List[int]]]:
    between = [[0] * 64 for _ in range(64)]
    line = [[0] * 64 for _ in range(64)]
    for a in range(64):
        for deltas in (ROOK_DELTAS, BISHOP_DELTAS):
            for df, dr in deltas:
                full = _ray_attacks(a, 0, ((df, dr), (-df, -dr))) | (1 << a)
                f, r = square_file(a) + df, square_rank(a) + dr
                gap = 0
                while _on_board(f, r):
                    b = square(f, r)
                    between[a][b] = gap
                    line[a][b] = full
                    gap |= 1 << b
                    f += df
                    r += dr
    return between, line


BETWEEN, LINE = _line_tables()

# castling rights that survive a move touching each square
_CASTLE_KEEP = [15] * 64
_CASTLE_KEEP[4] = 15 & ~(CASTLE_WK | CASTLE_WQ)
_CASTLE_KEEP[7] = 15 & ~CASTLE_WK
_CASTLE_KEEP[0] = 15 & ~CASTLE_WQ
_CASTLE_KEEP[60] = 15 & ~(CASTLE_BK | CASTLE_BQ)
_CASTLE_KEEP[63] = 15 & ~CASTLE_BK
_CASTLE_KEEP[56] = 15 & ~CASTLE_BQ


# ---------------------------------------------------------------------------
# pieces and moves


class Piece(NamedTuple):
    piece_type: int
    color: Color

    def symbol(self) -> str:
        s = PIECE_SYMBOLS[self.piece_type]
        return s.upper() if self.color else s

    @classmethod
    def from_symbol(cls, symbol: str) -> "Piece":
        return cls(PIECE_SYMBOLS.index(symbol.lower()), symbol.isupper())


class Move(NamedTuple):
    """A move in from/to form. Castling is the king's two-square move."""

    from_square: int
    to_square: int
    promotion: Optional[int] = None

    def uci(self) -> str:
        text = SQUARE_NAMES[self.from_square] + SQUARE_NAMES[self.to_square]
        if self.promotion:
            text += PIECE_SYMBOLS[self.promotion]
        return text

    @classmethod
    def from_uci(cls, text: str) -> "Move":
        if len(text) not in (4, 5):
            raise ValueError(f"invalid uci move: {text!r}")
        try:
            fr = parse_square(text[0:2])
            to = parse_square(text[2:4])
        except ValueError:
            raise ValueError(f"invalid uci move: {text!r}") from None
        promo = None
        if len(text) == 5:
            if text[4] not in "nbrq":
                raise ValueError(f"invalid promotion in uci move: {text!r}")
            promo = PIECE_SYMBOLS.index(text[4])
        if fr == to:
            raise ValueError(f"null displacement in uci move: {text!r}")
        return cls(fr, to, promo)

    def __str__(self) -> str:
        return self.uci()


def _pack(fr: int, to: int, promo: int = 0) -> int:
    # sort order of packed ints == (from, to, promotion) order
    return (fr << 9) | (to << 3) | promo


_MOVE_CACHE: Dict[int, Move] = {}


def _unpack(m: int) -> Move:
    mv = _MOVE_CACHE.get(m)
    if mv is None:
        mv = Move(m >> 9, (m >> 3) & 63, (m & 7) or None)
        _MOVE_CACHE[m] = mv
    return mv


def _pack_move(move: Move) -> int:
    return _pack(move.from_square, move.to_square, move.promotion or 0)


# ---------------------------------------------------------------------------
# position


class Position:
    """Immutable chess position.

    ``bb[piece_type]`` holds the bitboard of that piece type for both colors;
    ``occ[color]`` holds all pieces of one color (indexed by ``BLACK``/``WHITE``).
    """

    __slots__ = ("bb", "occ", "turn", "castling", "ep_square", "halfmove_clock", "fullmove_number", "_legal")

    def __init__(self, bb, occ, turn, castling, ep_square, halfmove_clock, fullmove_number):
        self.bb = tuple(bb)
        self.occ = tuple(occ)
        self.turn = turn
        self.castling = castling
        self.ep_square = ep_square
        self.halfmove_clock = halfmove_clock
        self.fullmove_number = fullmove_number
        self._legal = None

    # -- basic queries ------------------------------------------------------

    def piece_type_at(self, sq: int) -> int:
        mask = 1 << sq
        if not (self.occ[0] | self.occ[1]) & mask:
            return 0
        bb = self.bb
        for pt in PIECE_TYPES:
            if bb[pt] & mask:
                return pt
        return 0

    def piece_at(self, sq: int) -> Optional[Piece]:
        pt = self.piece_type_at(sq)
        if not pt:
            return None
        return Piece(pt, bool(self.occ[WHITE] & (1 << sq)))

    def piece_map(self) -> Dict[int, Piece]:
        return {sq: self.piece_at(sq) for sq in scan(self.occ[0] | self.occ[1])}

    def pieces(self, piece_type: int, color: Color) -> int:
        return self.bb[piece_type] & self.occ[color]

    def king(self, color: Color) -> int:
        return (self.bb[KING] & self.occ[color]).bit_length() - 1

    @property
    def occupied(self) -> int:
        return self.occ[0] | self.occ[1]

    def has_castling_right(self, flag: int) -> bool:
        return bool(self.castling & flag)

    @property
    def castling_rights(self) -> Tuple[bool, bool, bool, bool]:
        """(K, Q, k, q)."""
        c = self.castling
        return bool(c & 1), bool(c & 2), bool(c & 4), bool(c & 8)

    def attackers(self, color: Color, sq: int, occ: Optional[int] = None) -> int:
        if occ is None:
            occ = self.occ[0] | self.occ[1]
        bb = self.bb
        theirs = self.occ[color]
        queens = bb[QUEEN]
        att = KNIGHT_ATTACKS[sq] & bb[KNIGHT]
        att |= KING_ATTACKS[sq] & bb[KING]
        att |= PAWN_ATTACKS[not color][sq] & bb[PAWN]
        att |= rook_attacks(sq, occ) & (bb[ROOK] | queens)
        att |= bishop_attacks(sq, occ) & (bb[BISHOP] | queens)
        return att & theirs

    def is_attacked_by(self, color: Color, sq: int) -> bool:
        return bool(self.attackers(color, sq))

    def is_check(self) -> bool:
        return bool(self.attackers(not self.turn, self.king(self.turn)))

    def is_checkmate(self) -> bool:
        return self.is_check() and not self._legal_packed()

    def is_stalemate(self) -> bool:
        return not self.is_check() and not self._legal_packed()

    # -- value semantics ----------------------------------------------------

    def _key(self):
        return (self.bb, self.occ, self.turn, self.castling, self.ep_square, self.halfmove_clock, self.fullmove_number)

    def __eq__(self, other):
        if not isinstance(other, Position):
            return NotImplemented
        return self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    def __repr__(self) -> str:
        return f"Position({self.fen()!r})"

    def copy_with(self, **changes) -> "Position":
        fields = dict(
            bb=self.bb, occ=self.occ, turn=self.turn, castling=self.castling, ep_square=self.ep_square,
            halfmove_clock=self.halfmove_clock, fullmove_number=self.fullmove_number,
        )
        fields.update(changes)
        return Position(**fields)

    # -- FEN ----------------------------------------------------------------

    def board_fen(self) -> str:
        rows = []
        for rank in range(7, -1, -1):
            row, empty = "", 0
            for file in range(8):
                piece = self.piece_at(square(file, rank))
                if piece is None:
                    empty += 1
                    continue
                if empty:
                    row += str(empty)
                    empty = 0
                row += piece.symbol()
            if empty:
                row += str(empty)
            rows.append(row)
        return "/".join(rows)

    def castling_fen(self) -> str:
        return "".join(ch for ch, flag in _CASTLE_CHARS if self.castling & flag) or "-"

    def fen(self) -> str:
        ep = SQUARE_NAMES[self.ep_square] if self.ep_square is not None else "-"
        return " ".join([
            self.board_fen(), "w" if self.turn else "b", self.castling_fen(), ep,
            str(self.halfmove_clock), str(self.fullmove_number),
        ])

    # -- move generation ----------------------------------------------------

    def _legal_packed(self) -> List[int]:
        """Sorted packed legal moves; cached per position."""
        if self._legal is None:
            moves = self._generate()
            moves.sort()
            self._legal = moves
        return self._legal

    def _generate(self) -> List[int]:
        us = self.turn
        them = not us
        bb = self.bb
        pawns, knights, bishops, rooks, queens, kings = bb[1], bb[2], bb[3], bb[4], bb[5], bb[6]
        occ_us = self.occ[us]
        occ_them = self.occ[them]
        occ = occ_us | occ_them
        king_bb = kings & occ_us
        ksq = king_bb.bit_length() - 1

        their_rq = (rooks | queens) & occ_them
        their_bq = (bishops | queens) & occ_them
        their_n = knights & occ_them
        their_p = pawns & occ_them
        their_k = kings & occ_them
        pawn_att_them = PAWN_ATTACKS[them]

        moves: List[int] = []
        append = moves.append

        # king steps: test each target with the king removed so sliders see through
        occ_nk = occ ^ king_bb
        for to in scan(KING_ATTACKS[ksq] & ~occ_us):
            if KNIGHT_ATTACKS[to] & their_n or PAWN_ATTACKS[us][to] & their_p or KING_ATTACKS[to] & their_k:
                continue
            if rook_attacks(to, occ_nk) & their_rq or bishop_attacks(to, occ_nk) & their_bq:
                continue
            append((ksq << 9) | (to << 3))

        checkers = (
            (KNIGHT_ATTACKS[ksq] & their_n)
            | (PAWN_ATTACKS[us][ksq] & their_p)
            | (rook_attacks(ksq, occ) & their_rq)
            | (bishop_attacks(ksq, occ) & their_bq)
        )
        if checkers & (checkers - 1):
            return moves
        if checkers:
            target = BETWEEN[ksq][checkers.bit_length() - 1] | checkers
        else:
            target = BB_ALL

        # pinned pieces and their lines
        pinned = 0
        pin_line: Dict[int, int] = {}
        snipers = (ROOK_PSEUDO[ksq] & their_rq) | (BISHOP_PSEUDO[ksq] & their_bq)
        for s in scan(snipers):
            blockers = BETWEEN[ksq][s] & occ
            if blockers and not blockers & (blockers - 1) and blockers & occ_us:
                pinned |= blockers
                pin_line[blockers.bit_length() - 1] = LINE[ksq][s]

        not_us = ~occ_us
        dest = target & not_us

        for fr in scan(knights & occ_us & ~pinned):
            base = fr << 9
            for to in scan(KNIGHT_ATTACKS[fr] & dest):
                append(base | (to << 3))

        for fr in scan((bishops | queens) & occ_us):
            att = bishop_attacks(fr, occ) & dest
            if pinned >> fr & 1:
                att &= pin_line[fr]
            base = fr << 9
            for to in scan(att):
                append(base | (to << 3))

        for fr in scan((rooks | queens) & occ_us):
            att = rook_attacks(fr, occ) & dest
            if pinned >> fr & 1:
                att &= pin_line[fr]
            base = fr << 9
            for to in scan(att):
                append(base | (to << 3))

        # pawns
        our_pawns = pawns & occ_us
        empty = ~occ & BB_ALL
        if us:
            single = (our_pawns << 8) & empty
            double = ((single & (0xFF << 16)) << 8) & empty & target
            single &= target
            push, last = 8, BB_RANK_8
        else:
            single = (our_pawns >> 8) & empty
            double = ((single & (0xFF << 40)) >> 8) & empty & target
            single &= target
            push, last = -8, BB_RANK_1

        for to in scan(single):
            fr = to - push
            if pinned >> fr & 1 and not pin_line[fr] >> to & 1:
                continue
            base = (fr << 9) | (to << 3)
            if (1 << to) & last:
                append(base | 2)
                append(base | 3)
                append(base | 4)
                append(base | 5)
            else:
                append(base)
        for to in scan(double):
            fr = to - 2 * push
            if pinned >> fr & 1 and not pin_line[fr] >> to & 1:
                continue
            append((fr << 9) | (to << 3))

        cap_targets = occ_them & target
        pawn_att_us = PAWN_ATTACKS[us]
        for fr in scan(our_pawns):
            att = pawn_att_us[fr] & cap_targets
            if not att:
                continue
            if pinned >> fr & 1:
                att &= pin_line[fr]
            base = fr << 9
            for to in scan(att):
                m = base | (to << 3)
                if (1 << to) & last:
                    append(m | 2)
                    append(m | 3)
                    append(m | 4)
                    append(m | 5)
                else:
                    append(m)

        ep = self.ep_square
        if ep is not None:
            cap_sq = ep - push
            cap_bb = 1 << cap_sq
            if cap_bb & their_p:
                for fr in scan(pawn_att_them[ep] & our_pawns):
                    occ2 = (occ ^ (1 << fr) ^ cap_bb) | (1 << ep)
                    if rook_attacks(ksq, occ2) & their_rq or bishop_attacks(ksq, occ2) & their_bq:
                        continue
                    if KNIGHT_ATTACKS[ksq] & their_n or PAWN_ATTACKS[us][ksq] & their_p & ~cap_bb:
                        continue
                    append((fr << 9) | (ep << 3))

        # castling
        if not checkers and self.castling:
            c = self.castling
            if us:
                k_flag, q_flag, home = CASTLE_WK, CASTLE_WQ, 4
            else:
                k_flag, q_flag, home = CASTLE_BK, CASTLE_BQ, 60
            if ksq == home:
                if c & k_flag and not occ & (0b11 << (home + 1)) and rooks & occ_us & (1 << (home + 3)):
                    if not self._attacked_for_castle(them, home + 1, occ) and not self._attacked_for_castle(them, home + 2, occ):
                        append((home << 9) | ((home + 2) << 3))
                if c & q_flag and not occ & (0b111 << (home - 3)) and rooks & occ_us & (1 << (home - 4)):
                    if not self._attacked_for_castle(them, home - 1, occ) and not self._attacked_for_castle(them, home - 2, occ):
                        append((home << 9) | ((home - 2) << 3))
        return moves

    def _attacked_for_castle(self, color: Color, sq: int, occ: int) -> bool:
        return bool(self.attackers(color, sq, occ))

    def _apply(self, m: int) -> "Position":
        """Apply a packed move assumed legal."""
        fr = m >> 9
        to = (m >> 3) & 63
        promo = m & 7
        us = self.turn
        them = not us
        fb = 1 << fr
        tb = 1 << to
        bb = list(self.bb)
        occ = list(self.occ)

        pt = 1
        while not bb[pt] & fb:
            pt += 1
        half = self.halfmove_clock + 1
        if occ[them] & tb:
            cpt = 1
            while not bb[cpt] & tb:
                cpt += 1
            bb[cpt] ^= tb
            occ[them] ^= tb
            half = 0
        move_bb = fb | tb
        bb[pt] ^= move_bb
        occ[us] ^= move_bb
        ep = None
        if pt == PAWN:
            half = 0
            if to == self.ep_square:
                cap = 1 << (to - 8 if us else to + 8)
                if bb[PAWN] & occ[them] & cap:
                    bb[PAWN] ^= cap
                    occ[them] ^= cap
            elif to - fr == 16 or fr - to == 16:
                ep = (fr + to) >> 1
            if promo:
                bb[PAWN] ^= tb
                bb[promo] ^= tb
        elif pt == KING and (to - fr == 2 or fr - to == 2):
            if to > fr:
                rook_move = (1 << (fr + 3)) | (1 << (fr + 1))
            else:
                rook_move = (1 << (fr - 4)) | (1 << (fr - 1))
            bb[ROOK] ^= rook_move
            occ[us] ^= rook_move
        castling = self.castling & _CASTLE_KEEP[fr] & _CASTLE_KEEP[to]
        return Position(bb, occ, them, castling, ep, half, self.fullmove_number + (not us))


# ---------------------------------------------------------------------------
# public operations


def starting_position() -> Position:
    return parse_fen(STARTING_FEN)


_FEN_PLACEMENT = re.compile(r"^[pnbrqkPNBRQK1-8/]+$")


def parse_fen(text: str) -> Position:
    fields = text.split()
    if len(fields) != 6:
        raise MalformedFen(f"expected 6 fields, got {len(fields)}: {text!r}")
    placement, side, castling_text, ep_text, half_text, full_text = fields

    if not _FEN_PLACEMENT.match(placement):
        raise MalformedFen(f"bad characters in placement: {placement!r}")
    rows = placement.split("/")
    if len(rows) != 8:
        raise MalformedFen(f"expected 8 ranks: {placement!r}")
    bb = [0] * 7
    occ = [0, 0]
    for i, row in enumerate(rows):
        rank = 7 - i
        file = 0
        prev_digit = False
        for ch in row:
            if ch.isdigit():
                if prev_digit:
                    raise MalformedFen(f"consecutive digits in rank: {row!r}")
                file += int(ch)
                prev_digit = True
                continue
            prev_digit = False
            if file > 7:
                raise MalformedFen(f"rank too long: {row!r}")
            piece = Piece.from_symbol(ch)
            bit = 1 << square(file, rank)
            bb[piece.piece_type] |= bit
            occ[piece.color] |= bit
            file += 1
        if file != 8:
            raise MalformedFen(f"rank does not have 8 files: {row!r}")

    if side not in ("w", "b"):
        raise MalformedFen(f"bad side to move: {side!r}")
    turn = side == "w"

    castling = 0
    if castling_text != "-":
        for ch in castling_text:
            flag = dict(_CASTLE_CHARS).get(ch)
            if flag is None or castling & flag:
                raise MalformedFen(f"bad castling field: {castling_text!r}")
            castling |= flag

    if ep_text == "-":
        ep = None
    else:
        try:
            ep = parse_square(ep_text)
        except ValueError:
            raise MalformedFen(f"bad en-passant field: {ep_text!r}") from None

    try:
        half = int(half_text)
        full = int(full_text)
    except ValueError:
        raise MalformedFen(f"bad move counters: {half_text!r} {full_text!r}") from None
    if half < 0 or full < 1:
        raise MalformedFen(f"move counters out of range: {half} {full}")

    pos = Position(bb, occ, turn, castling, ep, half, full)
    validate(pos)
    return pos


def validate(pos: Position) -> None:
    """Raise :class:`IllegalPosition` unless every position invariant holds."""
    bb, occ = pos.bb, pos.occ
    for color in (WHITE, BLACK):
        if popcount(bb[KING] & occ[color]) != 1:
            raise IllegalPosition(f"{'white' if color else 'black'} must have exactly one king")
    if bb[PAWN] & (BB_RANK_1 | BB_RANK_8):
        raise IllegalPosition("pawns on first or last rank")
    if pos.ep_square is not None:
        ep = pos.ep_square
        want_rank = 5 if pos.turn else 2
        if square_rank(ep) != want_rank:
            raise IllegalPosition(f"en-passant square {SQUARE_NAMES[ep]} on wrong rank")
        pushed = ep - 8 if pos.turn else ep + 8
        origin = ep + 8 if pos.turn else ep - 8
        if not (bb[PAWN] & occ[not pos.turn]) >> pushed & 1 or pos.occupied >> ep & 1 or pos.occupied >> origin & 1:
            raise IllegalPosition(f"en-passant square {SQUARE_NAMES[ep]} without a double-pushed pawn")
    for flag, king_sq, rook_sq in ((CASTLE_WK, 4, 7), (CASTLE_WQ, 4, 0), (CASTLE_BK, 60, 63), (CASTLE_BQ, 60, 56)):
        if pos.castling & flag:
            color = flag in (CASTLE_WK, CASTLE_WQ)
            if not (bb[KING] & occ[color]) >> king_sq & 1 or not (bb[ROOK] & occ[color]) >> rook_sq & 1:
                raise IllegalPosition("castling right without king and rook on home squares")
    them = not pos.turn
    if pos.attackers(pos.turn, pos.king(them)):
        raise IllegalPosition("side not to move is in check")


def to_fen(pos: Position) -> str:
    return pos.fen()


def legal_moves(pos: Position) -> List[Move]:
    """All legal moves, sorted by (from, to, promotion)."""
    return [_unpack(m) for m in pos._legal_packed()]


def is_legal(pos: Position, move: Move) -> bool:
    packed = _pack_move(move)
    return packed in pos._legal_packed()


def apply_move(pos: Position, move: Move) -> Position:
    packed = _pack_move(move)
    if packed not in pos._legal_packed():
        raise IllegalMove(f"{move.uci()} is not legal in {pos.fen()}")
    return pos._apply(packed)


def perft(pos: Position, depth: int) -> int:
    if depth < 0:
        raise ValueError("depth must be >= 0")
    if depth == 0:
        return 1
    return _perft(pos, depth)


def _perft(pos: Position, depth: int) -> int:
    moves = pos._generate()
    if depth == 1:
        return len(moves)
    total = 0
    apply = pos._apply
    for m in moves:
        total += _perft(apply(m), depth - 1)
    return total


def mirror_color(pos: Position) -> Position:
    """Flip the board vertically and swap colors, castling rights and side to move."""
    bb = [flip_vertical(b) for b in pos.bb]
    occ = [flip_vertical(pos.occ[WHITE]), flip_vertical(pos.occ[BLACK])]
    c = pos.castling
    castling = ((c & 3) << 2) | (c >> 2)
    ep = pos.ep_square ^ 56 if pos.ep_square is not None else None
    return Position(bb, occ, not pos.turn, castling, ep, pos.halfmove_clock, pos.fullmove_number)


def mirror_move(move: Move) -> Move:
    return Move(move.from_square ^ 56, move.to_square ^ 56, move.promotion)


# ---------------------------------------------------------------------------
# SAN

_SAN_RE = re.compile(r"^([NBRQK])?([a-h])?([1-8])?(x)?([a-h][1-8])(?:=?([NBRQnbrq]))?$")


def san_to_move(san: str, pos: Position) -> Move:
    text = san.strip().rstrip("+#!?")
    if text in ("O-O", "0-0", "O-O-O", "0-0-0"):
        home = 4 if pos.turn else 60
        to = home + 2 if text in ("O-O", "0-0") else home - 2
        move = Move(home, to)
        if pos.piece_type_at(home) != KING or not is_legal(pos, move):
            raise NoSuchMove(f"{san!r} is not legal in {pos.fen()}")
        return move

    match = _SAN_RE.match(text)
    if not match:
        raise NoSuchMove(f"unparseable SAN {san!r}")
    piece_letter, from_file, from_rank, _, to_name, promo_letter = match.groups()
    piece_type = PIECE_SYMBOLS.index(piece_letter.lower()) if piece_letter else PAWN
    to = parse_square(to_name)
    promo = PIECE_SYMBOLS.index(promo_letter.lower()) if promo_letter else None

    candidates = []
    for m in legal_moves(pos):
        if m.to_square != to or pos.piece_type_at(m.from_square) != piece_type:
            continue
        if m.promotion != promo:
            continue
        if from_file and FILE_NAMES[square_file(m.from_square)] != from_file:
            continue
        if from_rank and RANK_NAMES[square_rank(m.from_square)] != from_rank:
            continue
        candidates.append(m)
    if not candidates:
        raise NoSuchMove(f"{san!r} is not legal in {pos.fen()}")
    if len(candidates) > 1:
        raise AmbiguousSan(f"{san!r} is ambiguous in {pos.fen()}")
    return candidates[0]


def move_to_san(pos: Position, move: Move) -> str:
    if not is_legal(pos, move):
        raise IllegalMove(f"{move.uci()} is not legal in {pos.fen()}")
    pt = pos.piece_type_at(move.from_square)
    fr, to = move.from_square, move.to_square
    if pt == KING and abs(to - fr) == 2:
        san = "O-O" if to > fr else "O-O-O"
    else:
        capture = bool(pos.occupied >> to & 1) or (pt == PAWN and to == pos.ep_square)
        if pt == PAWN:
            san = (FILE_NAMES[square_file(fr)] + "x" if capture else "") + SQUARE_NAMES[to]
            if move.promotion:
                san += "=" + PIECE_SYMBOLS[move.promotion].upper()
        else:
            others = [
                m.from_square for m in legal_moves(pos)
                if m.to_square == to and m.from_square != fr and pos.piece_type_at(m.from_square) == pt
            ]
            disambig = ""
            if others:
                if all(square_file(o) != square_file(fr) for o in others):
                    disambig = FILE_NAMES[square_file(fr)]
                elif all(square_rank(o) != square_rank(fr) for o in others):
                    disambig = RANK_NAMES[square_rank(fr)]
                else:
                    disambig = SQUARE_NAMES[fr]
            san = PIECE_SYMBOLS[pt].upper() + disambig + ("x" if capture else "") + SQUARE_NAMES[to]
    after = pos._apply(_pack_move(move))
    if after.is_check():
        san += "#" if not after._legal_packed() else "+"
    return san


# ---------------------------------------------------------------------------
# history

HISTORY_PLIES = 12


@dataclass(frozen=True)
class PositionHistory:
    """The current position plus up to 12 preceding (position, move) pairs, oldest first."""

    current: Position
    prior: Tuple[Tuple[Position, Move], ...] = ()

    def __post_init__(self):
        if len(self.prior) > HISTORY_PLIES:
            raise ValueError(f"history holds at most {HISTORY_PLIES} plies")

    @classmethod
    def start(cls, pos: Optional[Position] = None) -> "PositionHistory":
        return cls(pos if pos is not None else starting_position())

    @classmethod
    def from_moves(cls, root: Position, moves) -> "PositionHistory":
        h = cls(root)
        for m in moves:
            h = h.push(m)
        return h

    def push(self, move: Move) -> "PositionHistory":
        nxt = apply_move(self.current, move)
        prior = (self.prior + ((self.current, move),))[-HISTORY_PLIES:]
        return PositionHistory(nxt, prior)

    def positions_recent_first(self) -> List[Position]:
        return [self.current] + [p for p, _ in reversed(self.prior)]

    @property
    def root(self) -> Position:
        return self.prior[0][0] if self.prior else self.current

    @property
    def moves(self) -> List[Move]:
        return [m for _, m in self.prior]

    def mirrored(self) -> "PositionHistory":
        return PositionHistory(
            mirror_color(self.current),
            tuple((mirror_color(p), mirror_move(m)) for p, m in self.prior),
        )
