import random

import pytest
from hypothesis import given, settings, strategies as st

from humanchess.core import BLACK, WHITE, PositionHistory, legal_moves, mirror_move, parse_fen
from humanchess.errors import EmptyInput, MissingEval
from humanchess.pgn import MoveInstance
from humanchess.synthetic import random_history
from humanchess.winprob import (
    BlunderThreshold, EvalObservation, TableBuilder, WinProbTable, bucket_of, build_table,
    label_blunder, lookup, win_prob_for_mover,
)

# bucket -> wins out of 100; deliberately not monotone around +60
WINS = {-300: 10, -200: 20, -100: 35, -50: 44, 0: 50, 20: 55, 60: 46, 100: 65, 200: 80, 300: 90}
TABLE = WinProbTable({b: (float(w), 100) for b, w in WINS.items()})

W, B = WHITE, BLACK
# (eval_before, eval_after, mover, blunder) worked out by hand against TABLE
FIXTURE = [
    (20, -50, W, True), (20, 60, W, False), (9999, -9999, W, True), (300, 200, W, True),
    (200, 100, W, True), (100, 0, W, True), (0, -50, W, False), (0, -100, W, True),
    (-100, -200, W, True), (-200, -300, W, True), (-300, -9999, W, True), (9999, 300, W, True),
    (300, 300, W, False), (-50, 300, W, False), (20, 0, W, False), (60, 20, W, False),
    (100, 60, W, True), (100, 20, W, True), (140, 100, W, False), (150, 100, W, False),
    (160, 100, W, True), (250, 200, W, False), (251, 200, W, False), (256, 200, W, True),
    (5000, 100, W, True), (-5000, -9999, W, True), (-5000, -300, W, False), (4, -4, W, False),
    (5, -5, W, False), (15, -45, W, True), (14, -45, W, False),
    (-20, 50, B, True), (-20, -60, B, False), (-9999, 9999, B, True), (9999, -9999, B, False),
    (-300, -200, B, True), (0, 100, B, True), (0, 50, B, False), (100, 200, B, True),
    (300, 9999, B, True), (-100, -100, B, False), (-150, -100, B, False), (-160, -100, B, True),
    (200, 100, B, False), (-100, -20, B, True), (-60, -20, B, False), (-5000, -100, B, True),
    (-15, 45, B, True), (-14, 45, B, False), (9999, 300, B, False),
]

WHITE_TO_MOVE = PositionHistory.start()
BLACK_TO_MOVE = PositionHistory.start(parse_fen("rnbqkbnr/pppppppp/8/8/4P3/8/PPPP1PPP/RNBQKBNR b KQkq e3 0 1"))


def instance(before, after, mover):
    h = WHITE_TO_MOVE if mover == WHITE else BLACK_TO_MOVE
    return MoveInstance(h, legal_moves(h.current)[0], 1500, 1.0, 1.0, eval_before=before, eval_after=after)


def test_fixture_size_and_coverage():
    assert len(FIXTURE) == 50
    assert {c[2] for c in FIXTURE} == {W, B}
    assert any(abs(c[0]) == 9999 or abs(c[1]) == 9999 for c in FIXTURE)


@pytest.mark.parametrize("before,after,mover,expected", FIXTURE)
def test_label_fixture(before, after, mover, expected):
    assert label_blunder(instance(before, after, mover), TABLE) is expected


def test_threshold_is_configurable():
    inst = instance(0, -50, W)  # drop of 0.06
    assert label_blunder(inst, TABLE, BlunderThreshold(0.05))
    assert not label_blunder(inst, TABLE, BlunderThreshold(0.07))
    with pytest.raises(ValueError):
        BlunderThreshold(0.0)


def test_missing_eval():
    with pytest.raises(MissingEval):
        label_blunder(instance(None, 10, W), TABLE)


def test_bucketing():
    assert bucket_of(14) == 10
    assert bucket_of(15) == 20 and bucket_of(-15) == -20
    assert bucket_of(-4) == 0
    assert bucket_of(123456) == 9990


def test_two_observations_at_zero():
    t = build_table([EvalObservation(0, 1.0), EvalObservation(0, 0.0)])
    assert lookup(t, 0) == 0.5


def test_observation_lands_in_its_bucket():
    t = build_table([EvalObservation(14, 1.0)])
    # counted for both players: +10 for white and -10 from black's side
    assert set(t.buckets) == {10, -10}
    assert t.buckets[10] == (1.0, 1, 1.0) and t.buckets[-10] == (0.0, 1, 0.0)


def test_lookup_is_exact_and_clamped():
    assert lookup(TABLE, 9999) == 1.0 and lookup(TABLE, -9999) == 0.0
    assert lookup(TABLE, 100) == 65 / 100
    assert lookup(TABLE, 60) == 0.46  # no smoothing of the dip
    assert lookup(TABLE, 9000) == 0.9 and lookup(TABLE, -9000) == 0.1


def test_min_samples_skips_sparse_buckets():
    t = WinProbTable({0: (5.0, 10), 100: (1.0, 1), 200: (16.0, 20)}, min_samples=5)
    assert lookup(t, 100) == 0.5  # equidistant, the bucket nearer zero wins
    assert lookup(t, 110) == 0.8
    with pytest.raises(EmptyInput):
        WinProbTable({0: (1.0, 2)}, min_samples=3)


def test_empty_input():
    with pytest.raises(EmptyInput):
        build_table([])
    with pytest.raises(EmptyInput):
        build_table([EvalObservation(9999, 1.0)])  # mates are not tabulated


def test_win_prob_for_black_is_the_complement():
    t = build_table([EvalObservation(100, 1.0), EvalObservation(100, 0.5), EvalObservation(-30, 0.0)])
    assert win_prob_for_mover(t, 100, BLACK) == 1 - lookup(t, 100)
    sym = build_table([EvalObservation(0, 1.0), EvalObservation(0, 0.0)])
    assert win_prob_for_mover(sym, 0, WHITE) == win_prob_for_mover(sym, 0, BLACK) == 0.5


observations = st.lists(
    st.tuples(st.integers(-2000, 2000), st.sampled_from([0.0, 0.5, 1.0])).map(lambda t: EvalObservation(*t)),
    min_size=1, max_size=200)


@settings(max_examples=100, deadline=None)
@given(observations, st.lists(st.integers(-12000, 12000), min_size=1, max_size=30))
def test_color_complement_holds_everywhere(obs, cps):
    t = build_table(obs)
    for cp in cps:
        white, black = win_prob_for_mover(t, cp, WHITE), win_prob_for_mover(t, cp, BLACK)
        assert 0.0 <= white <= 1.0
        assert white + black == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(observations)
def test_rebuild_and_csv_round_trip_are_exact(obs):
    t = build_table(obs)
    assert build_table(obs) == t
    assert WinProbTable.from_csv(t.to_csv()) == t
    assert WinProbTable.from_csv(t.to_csv()).to_csv() == t.to_csv()


@settings(max_examples=50, deadline=None)
@given(observations, st.integers(0, 2**31))
def test_partial_builders_merge(obs, seed):
    cut = random.Random(seed).randint(0, len(obs))
    a, b, whole = TableBuilder(), TableBuilder(), TableBuilder()
    for o in obs[:cut]:
        a.add(*o)
    for o in obs[cut:]:
        b.add(*o)
    for o in obs:
        whole.add(*o)
    assert a.merge(b).build() == whole.build()


def test_tampered_csv_is_rejected():
    text = TABLE.to_csv().replace("0.65", "0.66")
    with pytest.raises(ValueError):
        WinProbTable.from_csv(text)


@settings(max_examples=60, deadline=None)
@given(observations, st.integers(0, 2**31), st.integers(-3000, 3000), st.integers(-3000, 3000))
def test_label_is_mirror_invariant(obs, seed, before, after):
    t = build_table(obs)
    h = random_history(random.Random(seed), 40)
    moves = legal_moves(h.current)
    if not moves:
        return
    m = moves[0]
    inst = MoveInstance(h, m, 1500, 1.0, 1.0, eval_before=before, eval_after=after)
    mirrored = MoveInstance(h.mirrored(), mirror_move(m), 1500, 1.0, 1.0, eval_before=-before, eval_after=-after)
    assert label_blunder(inst, t) == label_blunder(mirrored, t)
