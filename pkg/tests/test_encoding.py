import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from humanchess.core import (
    Move, PositionHistory, legal_moves, mirror_color, mirror_move, parse_fen, parse_square, starting_position,
)
from humanchess.encoding import (
    N_MOVES, POLICY_PLANES, MetadataVector, decode_all, decode_move, encode_blunder_input, encode_move,
    encode_policy_batch, encode_policy_input, legal_mask, normalize_rating,
)
from humanchess.errors import NotLegal, UnencodableMove
from humanchess.synthetic import random_history, random_positions
from humanchess.winprob import WinProbTable


def test_policy_input_at_start():
    x = encode_policy_input(PositionHistory.start())
    assert x.shape == (POLICY_PLANES, 8, 8) == (162, 8, 8)
    assert x[:12].sum() == 32
    assert x[12:156].sum() == 0
    assert x[156:160].sum() == 4 * 64 and x[160].sum() == 0 and x[161].sum() == 0


def test_black_to_move_is_flipped():
    h = PositionHistory.start().push(Move.from_uci("e2e4"))
    x = encode_policy_input(h)
    # mover (black) pawns on the mover's second rank, i.e. array row 1
    assert x[0, 1].sum() == 8
    # white pawns: home rank 2 becomes row 6, e4 (rank index 3) becomes row 4
    opp_pawns = x[6]
    assert opp_pawns[4, 4] == 1 and opp_pawns[6].sum() == 7
    assert x[160].sum() == 64


def test_full_history_has_thirteen_frames():
    h = random_history(random.Random(1), 40, 40)
    assert len(h.prior) == 12
    x = encode_policy_input(h)
    frames = [x[12 * k:12 * k + 12].sum() for k in range(13)]
    assert all(f > 0 for f in frames)
    assert encode_policy_input(h, use_history=False)[12:156].sum() == 0


def test_batch_matches_single():
    hs = [random_history(random.Random(s), 30) for s in range(5)]
    batch = encode_policy_batch(hs)
    for i, h in enumerate(hs):
        assert np.array_equal(batch[i], encode_policy_input(h))


def test_e2e4_index():
    assert encode_move(Move.from_uci("e2e4"), starting_position()) == 1 * 64 + 12 == 76


def test_underpromotion_planes():
    pos = parse_fen("8/4P3/8/8/8/8/k7/4K3 w - - 0 1")
    idx = encode_move(Move(parse_square("e7"), parse_square("e8"), 2), pos)  # knight
    assert 64 * 64 <= idx < 73 * 64
    queen = encode_move(Move(parse_square("e7"), parse_square("e8"), 5), pos)
    assert queen < 56 * 64
    assert decode_move(queen, pos).promotion == 5


def test_startpos_decodes_exactly_twenty():
    assert decode_all(starting_position()).sum() == 20
    legal = [i for i in range(N_MOVES) if _decodes(i, starting_position())]
    assert len(legal) == 20


def _decodes(i, pos):
    try:
        decode_move(i, pos)
        return True
    except NotLegal:
        return False


def test_null_displacement_never_decodes():
    pos = starting_position()
    with pytest.raises(NotLegal):
        decode_move(0 * 64 + 56, pos)  # one step north of a8 leaves the board
    with pytest.raises((UnencodableMove, NotLegal)):
        encode_move(Move(0, 0), pos)
    with pytest.raises(NotLegal):
        decode_move(N_MOVES, pos)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_round_trip_on_random_positions(seed):
    for pos in random_positions(25, seed=seed):
        moves = legal_moves(pos)
        indices = [encode_move(m, pos) for m in moves]
        assert len(set(indices)) == len(moves)
        for m, i in zip(moves, indices):
            assert decode_move(i, pos) == m
        mask = decode_all(pos)
        assert mask.sum() == len(moves)
        assert np.array_equal(mask, legal_mask(pos))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_mirror_equivariance(seed):
    h = random_history(random.Random(seed), 50)
    m = h.mirrored()
    a, b = encode_policy_input(h), encode_policy_input(m)
    assert np.array_equal(np.delete(a, 160, axis=0), np.delete(b, 160, axis=0))
    assert np.array_equal(encode_policy_input(m.mirrored()), a)
    for mv in legal_moves(h.current):
        assert encode_move(mv, h.current) == encode_move(mirror_move(mv), m.current)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_entries_lie_in_unit_interval(seed):
    h = random_history(random.Random(seed), 120)
    x = encode_policy_input(h)
    assert x.min() >= 0 and x.max() <= 1


def test_blunder_input_shapes_and_metadata():
    pos = starting_position()
    assert encode_blunder_input(pos).shape == (17, 8, 8)
    table = WinProbTable({0: (1.0, 2), 100: (3.0, 4)})
    meta = MetadataVector(1500, 3300, 0.25, 1.0, cp=100)
    x = encode_blunder_input(pos, meta, table)
    assert x.shape == (22, 8, 8)
    assert np.all(x[17] == 0.5) and np.all(x[18] == 1.0)
    assert np.all(x[19] == 0.25) and np.all(x[20] == 1.0) and np.all(x[21] == 0.75)
    assert np.array_equal(x[:17], encode_blunder_input(pos))
    assert normalize_rating(1500) == 0.5
    with pytest.raises(ValueError):
        encode_blunder_input(pos, meta)  # cp given without a table


def test_blunder_input_is_absolute():
    pos = parse_fen("rnbqkbnr/pppppppp/8/8/4P3/8/PPPP1PPP/RNBQKBNR b KQkq e3 0 1")
    x = encode_blunder_input(pos)
    assert x[0, 3, 4] == 1  # white pawn on e4, rank index 3
    assert x[16].sum() == 0  # black to move
    assert encode_blunder_input(starting_position())[16].sum() == 64


def test_metadata_rejects_bad_values():
    with pytest.raises(ValueError):
        MetadataVector(0, 1500, 0.5, 0.5)
    with pytest.raises(ValueError):
        MetadataVector(1500, 1500, 1.5, 0.5)


def test_encodings_are_pure():
    h = random_history(random.Random(5), 30)
    fen = h.current.fen()
    assert np.array_equal(encode_policy_input(h), encode_policy_input(h))
    assert h.current.fen() == fen
    assert mirror_color(mirror_color(h.current)) == h.current
