import io
import sys
import textwrap

import pytest

from humanchess.core import PositionHistory, is_legal, legal_moves, parse_fen
from humanchess.errors import EngineDied, HandshakeTimeout, ParseError, SpawnFailure
from humanchess.models.policy import MaiaConfig, PolicyNet, train_policy
from humanchess.nn import save_checkpoint
from humanchess.refengine import search
from humanchess.score import Score
from humanchess.synthetic import GreedyPolicy, population_instances
from humanchess.uci import UciSession, parse_info, spawn, uci_serve, value_to_cp

SERVE = [sys.executable, "-m", "humanchess", "uci-serve"]
REFERENCE = [sys.executable, "-m", "humanchess", "uci-reference"]


@pytest.fixture(scope="module")
def desk_ckpt(tmp_path_factory):
    insts = population_instances(GreedyPolicy(), 300, seed=1)
    net = train_policy(insts, None, MaiaConfig.desk(steps=40, batch_size=32), seed=0).net
    path = tmp_path_factory.mktemp("ckpt") / "desk.ckpt"
    save_checkpoint(net, path)
    return path


def fake_engine(tmp_path, body):
    script = tmp_path / "engine.py"
    script.write_text(textwrap.dedent(body))
    return [sys.executable, str(script)]


def test_parse_info_lines():
    info = parse_info("info depth 12 seldepth 18 multipv 2 score mate -3 nodes 1000 pv e2e4 e7e5")
    assert info["multipv"] == 2 and info["score"] == Score.from_mate(-3)
    assert info["pv"] == ["e2e4", "e7e5"] and info["depth"] == 12
    assert parse_info("info depth 3 score cp 15 lowerbound pv d2d4")["bound"]
    assert parse_info("info string hello") is None
    assert parse_info("info depth 1 currmove e2e4") is None


def test_self_play_over_the_wire(desk_ckpt):
    with spawn(SERVE + [str(desk_ckpt)]) as eng:
        assert eng.name == "desk"
        h = PositionHistory.start()
        full = [h.current]
        for _ in range(300):
            if not legal_moves(h.current):
                break
            mv = eng.bestmove(h)
            assert is_legal(h.current, mv)
            h = h.push(mv)
            full.append(h.current)
        assert len(full) > 1


def test_identical_transcripts_give_identical_bestmoves(desk_ckpt):
    transcript = ["uci", "isready", "position startpos moves e2e4 e7e5 g1f3", "go depth 1",
                  "setoption name MultiPV value 3", "position fen 8/8/8/8/8/2k5/8/K1Q5 w - - 0 1", "go", "quit"]

    def run():
        out = io.StringIO()
        from humanchess.nn import load_checkpoint
        uci_serve(load_checkpoint(desk_ckpt), io.StringIO("\n".join(transcript) + "\n"), out)
        return out.getvalue().splitlines()

    a, b = run(), run()
    assert a == b
    best = [ln for ln in a if ln.startswith("bestmove")]
    assert len(best) == 2
    assert sum(1 for ln in a if " multipv " in ln) == 1 + 3


def test_session_errors_do_not_kill_the_loop():
    s = UciSession(PolicyNet(1, 8, 4, 8))
    assert s.handle("position startpos moves e2e5")[0].startswith("info string error IllegalMove")
    assert s.handle("position fen not a fen")[0].startswith("info string error")
    assert s.handle("frobnicate")[0] == "info string error unknown command frobnicate"
    assert s.handle("isready") == ["readyok"]
    s.handle("position fen 7k/5QQ1/8/8/8/8/8/K7 b - - 0 1")  # stalemate: no legal moves
    assert s.handle("go")[-1] == "bestmove 0000"


def test_value_to_cp():
    assert value_to_cp(0.0) == 0
    assert value_to_cp(0.5) == -value_to_cp(-0.5) > 0
    assert abs(value_to_cp(1.0)) < 2000


def test_reference_engine_finds_mate_and_material():
    mate = parse_fen("6k1/5ppp/8/8/8/8/8/R5K1 w - - 0 1")
    (mv, score), = search(mate, 2)
    assert mv.uci() == "a1a8" and score > 10_000
    hanging = parse_fen("4k3/8/8/3q4/8/8/8/3RK3 w - - 0 1")
    assert search(hanging, 1)[0][0].uci() == "d1d5"


def test_reference_engine_over_uci():
    with spawn(REFERENCE) as eng:
        res = eng.evaluate(parse_fen("6k1/5ppp/8/8/8/8/8/R5K1 w - - 0 1"), depth=2, multipv=2)
        assert res.bestmove.uci() == "a1a8" and res.best.score.is_mate
        assert len(res.lines) == 2
        again = eng.evaluate(parse_fen("6k1/5ppp/8/8/8/8/8/R5K1 w - - 0 1"), depth=2, multipv=2)
        assert again == res


def test_scripted_engine_mate_scores(tmp_path):
    cmd = fake_engine(tmp_path, """
        import sys
        for line in sys.stdin:
            cmd = line.split()[0] if line.strip() else ""
            if cmd == "uci":
                print("id name fake"); print("option name MultiPV type spin default 1 min 1 max 9"); print("uciok")
            elif cmd == "isready":
                print("readyok")
            elif cmd == "go":
                print("info depth 1 multipv 1 score cp 20 pv e2e4")
                print("info depth 5 multipv 1 score cp 90 upperbound pv d2d4")
                print("info depth 5 multipv 1 score mate 2 pv g1f3 g8f6")
                print("info depth 5 multipv 2 score cp -15 pv a2a3")
                print("bestmove g1f3")
            elif cmd == "quit":
                break
            sys.stdout.flush()
    """)
    with spawn(cmd) as eng:
        res = eng.evaluate(PositionHistory.start(), depth=5, multipv=2)
    assert res.bestmove.uci() == "g1f3"
    assert res.lines[0].score == Score.from_mate(2) and res.lines[0].score.centipawns() == 9999
    assert [ln.move.uci() for ln in res.lines] == ["g1f3", "a2a3"]


def test_engine_sending_illegal_moves(tmp_path):
    cmd = fake_engine(tmp_path, """
        import sys
        for line in sys.stdin:
            cmd = line.split()[0] if line.strip() else ""
            if cmd == "uci":
                print("uciok")
            elif cmd == "isready":
                print("readyok")
            elif cmd == "go":
                print("bestmove e2e5")
            sys.stdout.flush()
    """)
    with spawn(cmd) as eng:
        with pytest.raises(ParseError):
            eng.bestmove(PositionHistory.start())


def test_spawn_failures(tmp_path):
    with pytest.raises(SpawnFailure):
        spawn(str(tmp_path / "no-such-engine"))
    silent = fake_engine(tmp_path, "import time\ntime.sleep(30)\n")
    with pytest.raises(HandshakeTimeout):
        spawn(silent, timeout=0.5)


def test_engine_dying_mid_search(tmp_path):
    cmd = fake_engine(tmp_path, """
        import sys
        for line in sys.stdin:
            cmd = line.split()[0] if line.strip() else ""
            if cmd == "uci":
                print("uciok")
            elif cmd == "isready":
                print("readyok")
            elif cmd == "go":
                sys.exit(3)
            sys.stdout.flush()
    """)
    with spawn(cmd) as eng:
        with pytest.raises(EngineDied):
            eng.bestmove(PositionHistory.start())
