import datetime as dt
import io
import random
import tracemalloc
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from humanchess import pgn
from humanchess.core import legal_moves, move_to_san, starting_position, apply_move
from humanchess.errors import ReplayFailure, StreamCorrupt
from humanchess.pgn import (
    FilterPolicy, GameRecord, IngestStats, ParseStats, RatingBin, SkipReason, TimeControl, TimedMove,
    TimeFormat, bin_for_game, build_blocks, classify_time_control, extract_instances, format_game,
    ingest, make_header, parse_clock, parse_eval, parse_pgn_stream, replay,
)
from humanchess.score import MATE_CP
from humanchess.synthetic import GreedyPolicy, RandomPolicy, game_record, generate_games, play_game

DATA = Path(__file__).parent / "data"
STANDARD_FILES = [
    "kasparov-deep-blue-1997.pgn", "molinari-bordais-1979.pgn", "nepomniachtchi-liren-game1.pgn",
    "stockfish-learning.pgn", "chessbase-empty-line.pgn",
]


def parse_text(text, stats=None):
    return list(parse_pgn_stream(io.BytesIO(text.encode()), stats))


def scripted_game(clocks, tc=TimeControl(300, 0), white_elo=1500, black_elo=1550, result="1-0"):
    """A random-move game whose clock_after values are given per ply."""
    rng = random.Random(7)
    pos = starting_position()
    moves = []
    for c in clocks:
        m = rng.choice(legal_moves(pos))
        moves.append(TimedMove(move_to_san(pos, m), c))
        pos = apply_move(pos, m)
    header = make_header(white_elo, black_elo, tc, result, date=dt.date(2019, 3, 1))
    return GameRecord(header, tuple(moves))


# -- annotations and headers -------------------------------------------------

def test_clock_annotation():
    assert parse_clock("{ [%clk 0:02:30] }") == 150
    assert parse_clock("{ [%clk 1:00:00.5] }") == 3600.5
    assert parse_clock("{ no clock here }") is None


def test_eval_annotation():
    assert parse_eval("{ [%eval -1.3] }").centipawns() == -130
    assert parse_eval("{ [%eval 0.25] [%clk 0:01:00] }").centipawns() == 25
    mate = parse_eval("{ [%eval #3] }")
    assert mate.is_mate and mate.mate == 3 and mate.centipawns() == MATE_CP
    assert parse_eval("{ [%eval #-2] }").centipawns() == -MATE_CP


@pytest.mark.parametrize("text,fmt", [
    ("60+0", TimeFormat.BULLET), ("180+0", TimeFormat.BLITZ), ("30+0", TimeFormat.HYPERBULLET),
    ("120+1", TimeFormat.BULLET), ("300+3", TimeFormat.BLITZ), ("600+0", TimeFormat.RAPID),
    ("900+15", TimeFormat.CLASSICAL), ("-", TimeFormat.CLASSICAL),
])
def test_classify_time_control(text, fmt):
    assert classify_time_control(TimeControl.parse(text)) == fmt


@pytest.mark.parametrize("w,b,expected", [(1150, 1180, 1100), (1150, 1250, None), (1999, 1900, 1900),
                                          (700, 750, None), (2550, 2599, 2500)])
def test_bin_for_game(w, b, expected):
    got = bin_for_game(make_header(w, b, TimeControl(300, 0), "1-0"))
    assert (got.lower if got else None) == expected


def test_rating_bin_validates():
    with pytest.raises(ValueError):
        RatingBin(850)
    with pytest.raises(ValueError):
        RatingBin(2600)


def test_header_invariants():
    with pytest.raises(ValueError):
        make_header(0, 1500, None, "1-0")
    with pytest.raises(ValueError):
        make_header(1500, 1500, None, "2-0")


def test_lichess_style_game_parses():
    text = (
        '[Event "Rated Blitz game"]\n[Site "https://lichess.org/abc"]\n[White "a"]\n[Black "b"]\n'
        '[Result "0-1"]\n[UTCDate "2019.05.01"]\n[WhiteElo "1512"]\n[BlackElo "1566"]\n'
        '[TimeControl "180+2"]\n\n'
        '1. e4 { [%eval 0.2] [%clk 0:03:00] } 1... e5 { [%eval 0.25] [%clk 0:02:59] } '
        '2. Qh5?! { [%eval -0.1] [%clk 0:02:58] } (2. Nf3 Nc6) 2... Nc6 { [%eval -0.05] [%clk 0:02:55] } '
        '3. Bc4 $1 { [%eval 0.0] [%clk 0:02:50] } 3... Nf6?? { [%eval #1] [%clk 0:02:40] } '
        '4. Qxf7# { [%eval #0] [%clk 0:02:45] } 1-0\n\n'
    )
    [g] = parse_text(text)
    assert g.header.white_elo == 1512 and g.header.time_control == TimeControl(180, 2)
    assert g.header.date == dt.date(2019, 5, 1) and g.header.has_evals
    assert [m.san for m in g.moves] == ["e4", "e5", "Qh5?!", "Nc6", "Bc4", "Nf6??", "Qxf7#"]
    assert g.moves[1].clock_after == 179 and g.moves[5].eval.centipawns() == MATE_CP
    assert len(replay(g)) == 7


def test_unknown_ratings_and_odd_time_controls_are_tolerated():
    text = ('[Event "x"]\n[WhiteElo "?"]\n[Result "1/2-1/2"]\n[Date "1997.??.??"]\n'
            '[TimeControl "40/7200:3600"]\n\n1. e4 e5 1/2-1/2\n')
    [g] = parse_text(text)
    assert g.header.white_elo is None and g.header.black_elo is None
    assert g.header.time_control is None and g.header.date is None
    assert bin_for_game(g.header) is None


def test_stream_corruption():
    with pytest.raises(StreamCorrupt):
        list(parse_pgn_stream(io.BytesIO(b'[Event "x"]\n\n1. e4 \x00 e5 *\n')))
    with pytest.raises(StreamCorrupt):
        list(parse_pgn_stream(io.BytesIO(b'[Event "x"]\n[Result "1-0"]\n\n1. e4 { never closed\n')))


def test_bad_games_are_skipped_and_counted():
    good = '[Event "ok"]\n[WhiteElo "1500"]\n[BlackElo "1500"]\n[Result "1-0"]\n\n1. e4 e5 1-0\n\n'
    text = ('[Event "bad"]\n[Result "1-0"]\n\n1. e4 ) e5 1-0\n\n'
            + good
            + '[Event "unfinished"]\n[Result "*"]\n\n1. d4 *\n\n'
            + '[Event "weird token"]\n[Result "1-0"]\n\n1. e4 @@ 1-0\n\n'
            + good)
    stats = ParseStats()
    games = parse_text(text, stats)
    assert len(games) == 2 and stats.games == 5
    assert stats.skipped == {SkipReason.PARSE_ERROR: 2, SkipReason.BAD_HEADER: 1}


# -- real games ----------------------------------------------------------------

@pytest.mark.parametrize("name", STANDARD_FILES)
def test_real_games_parse_replay_and_reserialize(name):
    games = list(parse_pgn_stream(open(DATA / name, "rb")))
    assert games
    for g in games:
        plies = replay(g)
        assert len(plies) == len(g.moves)
        again = parse_text(format_game(g))
        assert again == [g]
        policy = FilterPolicy(skip_opening_ply=0, min_clock=0, require_same_bin=False, require_clocks=False)
        for inst in extract_instances(g, policy):
            assert inst.played in legal_moves(inst.history.current)


def test_null_move_game_is_a_replay_failure():
    [g] = parse_pgn_stream(open(DATA / "anastasian-lewis.pgn", "rb"))
    with pytest.raises(ReplayFailure):
        replay(g)
    stats = IngestStats()
    policy = FilterPolicy(require_same_bin=False, require_clocks=False)
    assert list(ingest([g], policy, stats)) == []
    assert stats.skipped == {"replay_failure": 1}


def test_bom_file_and_unfinished_games():
    stats = ParseStats()
    assert list(parse_pgn_stream(open(DATA / "utf8-bom.pgn", "rb"), stats)) == []
    assert stats.games == 2 and stats.skipped == {SkipReason.BAD_HEADER: 2}


def test_variant_games_are_skipped_by_ingest():
    games = list(parse_pgn_stream(open(DATA / "cutechess-fischerrandom.pgn", "rb")))
    assert games
    stats = IngestStats()
    assert list(ingest(games, FilterPolicy(require_same_bin=False, require_clocks=False), stats)) == []
    assert stats.skipped == {"variant": len(games)}


# -- instance extraction -------------------------------------------------------

def test_forty_ply_game_defaults():
    g = scripted_game([300 - i for i in range(40)])
    out = extract_instances(g, FilterPolicy())
    assert len(out) == 30
    assert [i.ply for i in out] == list(range(11, 41))


def test_low_clock_move_is_excluded():
    clocks = [300.0] * 20
    clocks[0] = 25.0  # white starts ply 3 with 25 s left
    g = scripted_game(clocks)
    out = extract_instances(g, FilterPolicy(skip_opening_ply=0))
    plies = {i.ply for i in out}
    assert 3 not in plies and all(p in plies for p in (1, 2, 4, 6))
    game_rule = extract_instances(g, FilterPolicy(skip_opening_ply=0, clock_rule="game"))
    assert [i.ply for i in game_rule] == [1]


def test_exactly_min_clock_is_excluded():
    g = scripted_game([30.0] + [300.0] * 5)
    assert 3 not in {i.ply for i in extract_instances(g, FilterPolicy(skip_opening_ply=0))}


def test_no_op_policy_keeps_every_ply():
    g = scripted_game([5.0] * 33)
    assert len(extract_instances(g, FilterPolicy(skip_opening_ply=0, min_clock=0))) == 33


def test_clock_fractions_and_results():
    g = scripted_game([150.0, 75.0, 150.0, 75.0], result="0-1")
    out = extract_instances(g, FilterPolicy(skip_opening_ply=0))
    assert out[0].mover_clock_fraction == 1.0
    assert out[2].mover_clock_fraction == 0.5 and out[2].opponent_clock_fraction == 0.25
    assert out[3].mover_clock_fraction == 0.25 and out[3].opponent_clock_fraction == 0.5
    assert [i.result_for_mover for i in out] == [0.0, 1.0, 0.0, 1.0]
    assert out[0].mover_rating == 1500 and out[1].mover_rating == 1550


def test_bullet_games_are_skipped():
    rng = random.Random(0)
    games = [game_record(play_game(RandomPolicy(), RandomPolicy(), rng, 30), 1500, 1500, rng,
                         time_control=TimeControl(60, 0)) for _ in range(5)]
    stats = IngestStats()
    assert list(ingest(games, FilterPolicy(), stats)) == []
    assert stats.skipped == {"time_control": 5}


def test_mixed_bins_are_skipped():
    rng = random.Random(0)
    g = game_record(play_game(RandomPolicy(), RandomPolicy(), rng, 30), 1450, 1550, rng)
    stats = IngestStats()
    assert list(ingest([g], FilterPolicy(), stats)) == []
    assert stats.skipped == {"rating_bin": 1}
    assert len(list(ingest([g], FilterPolicy(require_same_bin=False)))) == 1


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 20), st.sampled_from([0, 30, 290, 596]),
       st.sampled_from(["mover", "game"]))
def test_extraction_invariants(seed, skip, min_clock, rule):
    policy = FilterPolicy(skip_opening_ply=skip, min_clock=min_clock, clock_rule=rule)
    rng = random.Random(seed)
    g = game_record(play_game(GreedyPolicy(), RandomPolicy(), rng, 80), 1500, 1500, rng)
    clocks = {True: 600.0, False: 600.0}
    before = {}
    for i, ((h, _), tm) in enumerate(zip(replay(g), g.moves)):
        before[i + 1] = clocks[h.current.turn]
        clocks[h.current.turn] = tm.clock_after
    out = extract_instances(g, policy)
    assert len(out) <= max(0, len(g.moves) - skip)
    for inst in out:
        assert inst.played in legal_moves(inst.history.current)
        assert inst.ply > skip
        assert before[inst.ply] > min_clock
        assert 0 <= inst.mover_clock_fraction <= 1 and 0 <= inst.opponent_clock_fraction <= 1
        assert len(inst.history.prior) == min(12, inst.ply - 1)


def test_ingest_is_deterministic():
    text = "".join(format_game(g) for g in generate_games(GreedyPolicy(), 5, seed=9))
    a = [(g, [(i.history.current.fen(), i.played) for i in insts])
         for g, insts in ingest(parse_text(text), FilterPolicy())]
    b = [(g, [(i.history.current.fen(), i.played) for i in insts])
         for g, insts in ingest(parse_text(text), FilterPolicy())]
    assert a == b and a


def test_parsing_memory_is_bounded():
    one = "".join(format_game(g) for g in generate_games(RandomPolicy(), 3, seed=1, max_plies=60)).encode()

    def peak(copies):
        class Repeat(io.RawIOBase):
            def __init__(self):
                self.left = copies
                self.buf = b""

            def readable(self):
                return True

            def readinto(self, b):
                while not self.buf and self.left:
                    self.buf, self.left = one, self.left - 1
                n = min(len(b), len(self.buf))
                b[:n], self.buf = self.buf[:n], self.buf[n:]
                return n

        tracemalloc.start()
        count = sum(1 for _ in parse_pgn_stream(io.BufferedReader(Repeat())))
        _, top = tracemalloc.get_traced_memory()
        tracemalloc.stop()
        return count, top

    n_small, small = peak(20)
    n_large, large = peak(400)
    assert (n_small, n_large) == (60, 1200)
    assert large < 2 * small + 200_000


# -- block split -------------------------------------------------------------

class _Dated:
    def __init__(self, year):
        self.header = make_header(1500, 1500, None, "1-0", date=dt.date(year, 6, 1))


def test_blocks_count():
    games = [_Dated(2018)] * 600_000
    plan = build_blocks(games, block_size=200_000, per_year=20)
    assert len(plan.blocks) == 3


def test_desk_scale_split():
    games = [_Dated(2019)] * 10_000
    plan = build_blocks(games, block_size=1_000, per_year=2, seed=5)
    assert len(plan.blocks) == 10 and len(plan.train) == 2
    assert [b.index for b in plan.validation] == [7, 8, 9]
    assert plan == build_blocks(games, block_size=1_000, per_year=2, seed=5)


def test_short_year_warns():
    games = [_Dated(2017)] * 50 + [_Dated(2018)] * 2_500
    plan = build_blocks(games, block_size=1_000, per_year=1, validation_blocks=1)
    assert any("2017" in w for w in plan.warnings)
    assert [(b.year, b.index) for b in plan.validation] == [(2018, 1)]
    assert [(b.year, b.index) for b in plan.train] == [(2018, 0)]
    roles = [r for _, r in pgn.assign_roles(games, plan)]
    assert roles.count("train") == 1000 and roles.count("validation") == 1000 and roles[0] is None
