"""UCI client for external engines and a UCI server around a policy network."""

from __future__ import annotations

import logging
import math
import os
import queue
import shlex
import subprocess
import threading
import time
from dataclasses import dataclass, field
from typing import IO, Dict, List, Optional, Sequence, Union

import numpy as np

from .core import STARTING_FEN, Move, Position, PositionHistory, is_legal, legal_moves, parse_fen
from .errors import (
    EngineDied, HandshakeTimeout, HumanChessError, IllegalMove, MalformedFen, ParseError, SearchTimeout,
    SpawnFailure,
)
from .score import Score

log = logging.getLogger(__name__)

DEFAULT_HANDSHAKE_TIMEOUT = 10.0
DEFAULT_SEARCH_TIMEOUT = 120.0


@dataclass(frozen=True)
class EvalLine:
    move: Move
    score: Score
    pv: tuple = ()
    depth: int = 0


@dataclass
class EvalResult:
    lines: List[EvalLine] = field(default_factory=list)
    bestmove: Optional[Move] = None

    @property
    def best(self) -> EvalLine:
        return self.lines[0]


def parse_info(line: str) -> Optional[dict]:
    """Fields of an ``info`` line that carries a score and a pv; None for other info lines."""
    tokens = line.split()
    if not tokens or tokens[0] != "info":
        return None
    out: dict = {"multipv": 1}
    i = 1
    try:
        while i < len(tokens):
            t = tokens[i]
            if t in ("depth", "seldepth", "multipv", "nodes", "nps", "time", "hashfull", "tbhits", "currmovenumber"):
                out[t] = int(tokens[i + 1])
                i += 2
            elif t == "score":
                kind, value = tokens[i + 1], int(tokens[i + 2])
                out["score"] = Score.from_cp(value) if kind == "cp" else Score.from_mate(value)
                i += 3
                if i < len(tokens) and tokens[i] in ("lowerbound", "upperbound"):
                    out["bound"] = tokens[i]
                    i += 1
            elif t == "pv":
                out["pv"] = tokens[i + 1:]
                break
            elif t == "string":
                return None
            else:
                i += 1
    except (IndexError, ValueError) as exc:
        raise ParseError(f"malformed info line {line!r}: {exc}") from None
    if "score" not in out or not out.get("pv"):
        return None
    return out


class EngineHandle:
    """A running UCI engine. One search at a time; not thread-safe."""

    def __init__(self, proc: subprocess.Popen, timeout: float = DEFAULT_HANDSHAKE_TIMEOUT):
        self.proc = proc
        self.timeout = timeout
        self.name: Optional[str] = None
        self.options: Dict[str, str] = {}
        self._multipv = 1
        self._lines: "queue.Queue[Optional[str]]" = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()

    def _pump(self) -> None:
        for raw in self.proc.stdout:
            self._lines.put(raw.rstrip("\r\n"))
        self._lines.put(None)

    def send(self, line: str) -> None:
        if self.proc.poll() is not None:
            raise EngineDied(f"engine exited with code {self.proc.returncode}")
        try:
            self.proc.stdin.write(line + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise EngineDied(f"engine pipe closed: {exc}") from None

    def read_line(self, deadline: float, timeout_exc=SearchTimeout) -> str:
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            raise timeout_exc("timed out waiting for the engine")
        try:
            line = self._lines.get(timeout=remaining)
        except queue.Empty:
            raise timeout_exc("timed out waiting for the engine") from None
        if line is None:
            self._lines.put(None)
            raise EngineDied(f"engine closed its output (exit code {self.proc.poll()})")
        return line

    def _handshake(self) -> None:
        deadline = time.monotonic() + self.timeout
        self.send("uci")
        while True:
            line = self.read_line(deadline, HandshakeTimeout)
            if line.startswith("id name "):
                self.name = line[8:].strip()
            elif line.startswith("option name "):
                rest = line[12:]
                name = rest.split(" type ")[0].strip()
                self.options[name.lower()] = rest
            elif line.strip() == "uciok":
                break
        self.is_ready()

    def is_ready(self, timeout: Optional[float] = None) -> None:
        deadline = time.monotonic() + (timeout or self.timeout)
        self.send("isready")
        while self.read_line(deadline, HandshakeTimeout).strip() != "readyok":
            pass

    def set_option(self, name: str, value) -> None:
        self.send(f"setoption name {name} value {value}")

    def _position_command(self, target: Union[Position, PositionHistory]) -> str:
        if isinstance(target, PositionHistory):
            root = target.root.fen()
            moves = " ".join(m.uci() for m in target.moves)
        else:
            root, moves = target.fen(), ""
        cmd = "position startpos" if root == STARTING_FEN else f"position fen {root}"
        return cmd + (f" moves {moves}" if moves else "")

    def evaluate(self, target: Union[Position, PositionHistory], depth: int = 1, multipv: int = 1,
                 timeout: float = DEFAULT_SEARCH_TIMEOUT) -> EvalResult:
        pos = target.current if isinstance(target, PositionHistory) else target
        if multipv != self._multipv:
            self.set_option("MultiPV", multipv)
            self._multipv = multipv
        self.send(self._position_command(target))
        self.send(f"go depth {depth}")
        deadline = time.monotonic() + timeout
        latest: Dict[int, EvalLine] = {}
        while True:
            line = self.read_line(deadline)
            if line.startswith("bestmove"):
                parts = line.split()
                best = None
                if len(parts) >= 2 and parts[1] not in ("(none)", "0000"):
                    best = self._legal(pos, parts[1])
                break
            info = parse_info(line)
            if info is None or info.get("bound"):
                continue
            k = info["multipv"]
            if k > multipv:
                continue
            mv = self._legal(pos, info["pv"][0])
            d = info.get("depth", 0)
            if k not in latest or d >= latest[k].depth:
                latest[k] = EvalLine(mv, info["score"], tuple(info["pv"]), d)
        lines = [latest[k] for k in sorted(latest)]
        if best is not None and lines and lines[0].move != best:
            # engines may report the bestmove differently from the last multipv 1 line
            lines = [ln for ln in lines if ln.move == best] + [ln for ln in lines if ln.move != best]
        elif best is not None and not lines:
            lines = [EvalLine(best, Score.from_cp(0))]
        return EvalResult(lines, best)

    @staticmethod
    def _legal(pos: Position, text: str) -> Move:
        try:
            mv = Move.from_uci(text)
        except ValueError:
            raise ParseError(f"engine sent unparsable move {text!r}") from None
        if not is_legal(pos, mv):
            raise ParseError(f"engine sent illegal move {text} for {pos.fen()}")
        return mv

    def bestmove(self, target, depth: int = 1) -> Move:
        res = self.evaluate(target, depth, self._multipv if self._multipv == 1 else 1)
        if res.bestmove is None:
            raise ParseError("engine returned no move")
        return res.bestmove

    def close(self) -> None:
        if self.proc.poll() is None:
            try:
                self.send("quit")
                self.proc.wait(timeout=5)
            except (EngineDied, subprocess.TimeoutExpired):
                self.proc.kill()
                self.proc.wait()
        for fh in (self.proc.stdin, self.proc.stdout):
            try:
                fh.close()
            except OSError:
                pass

    def __enter__(self):
        return self

    def __exit__(self, *_):
        self.close()


def spawn(command: Union[str, Sequence[str]], options: Optional[Dict[str, object]] = None,
          timeout: float = DEFAULT_HANDSHAKE_TIMEOUT, threads: int = 1, hash_mb: int = 16) -> EngineHandle:
    """Start an engine and complete the handshake.

    ``command`` is an executable path or an argv list. Single search thread
    and a fixed hash size are requested when the engine offers them so that
    fixed-depth searches repeat exactly.
    """
    argv = [command] if isinstance(command, (str, os.PathLike)) else list(command)
    try:
        proc = subprocess.Popen([os.fspath(a) for a in argv], stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                stderr=subprocess.DEVNULL, text=True, bufsize=1)
    except OSError as exc:
        raise SpawnFailure(f"cannot start engine {argv[0]}: {exc}") from None
    handle = EngineHandle(proc, timeout)
    try:
        handle._handshake()
        if "threads" in handle.options:
            handle.set_option("Threads", threads)
        if "hash" in handle.options:
            handle.set_option("Hash", hash_mb)
        for k, v in (options or {}).items():
            handle.set_option(k, v)
        handle.is_ready()
    except HumanChessError:
        handle.close()
        raise
    if "multipv" in handle.options:
        handle.set_option("MultiPV", 1)
    return handle


class EnginePredictor:
    def __init__(self, handle: EngineHandle, depth: int, name: Optional[str] = None):
        self.handle = handle
        self.depth = depth
        self.name = name or f"{handle.name or 'engine'}-d{depth}"

    def predict(self, h: PositionHistory) -> Move:
        return self.handle.bestmove(h, self.depth)


def engine_predictor(handle: EngineHandle, depth: int, name: Optional[str] = None) -> EnginePredictor:
    return EnginePredictor(handle, depth, name)


# ---------------------------------------------------------------------------
# server


def value_to_cp(v: float) -> int:
    """Map a tanh value in [-1, 1] to centipawns with the usual 400-point logistic scale."""
    p = min(max((v + 1) / 2, 1e-4), 1 - 1e-4)
    return int(round(400 * math.log10(p / (1 - p))))


class UciSession:
    """Protocol state for one served engine; ``handle`` maps one input line to output lines."""

    def __init__(self, net, name: str = "humanchess"):
        self.net = net
        self.name = name
        self.history = PositionHistory.start()
        self.multipv = 1
        self.done = False

    def handle(self, line: str) -> List[str]:
        tokens = line.strip().split()
        if not tokens:
            return []
        cmd, args = tokens[0], tokens[1:]
        try:
            if cmd == "uci":
                return [f"id name {self.name}", "id author humanchess",
                        "option name MultiPV type spin default 1 min 1 max 500", "uciok"]
            if cmd == "isready":
                return ["readyok"]
            if cmd == "ucinewgame":
                self.history = PositionHistory.start()
                return []
            if cmd == "setoption":
                return self._setoption(args)
            if cmd == "position":
                self.history = self._position(args)
                return []
            if cmd == "go":
                return self._go()
            if cmd in ("stop", "ponderhit", "debug", "register"):
                return []
            if cmd == "quit":
                self.done = True
                return []
            return [f"info string error unknown command {cmd}"]
        except (HumanChessError, ValueError) as exc:
            return [f"info string error {type(exc).__name__}: {exc}"]

    def _setoption(self, args: List[str]) -> List[str]:
        text = " ".join(args)
        if not text.startswith("name "):
            raise ValueError("setoption needs 'name'")
        name, _, value = text[5:].partition(" value ")
        if name.strip().lower() == "multipv":
            n = int(value)
            if n < 1:
                raise ValueError("MultiPV must be >= 1")
            self.multipv = n
            return []
        return [f"info string error unsupported option {name.strip()}"]

    @staticmethod
    def _position(args: List[str]) -> PositionHistory:
        if not args:
            raise ValueError("position needs startpos or fen")
        if args[0] == "startpos":
            root, rest = parse_fen(STARTING_FEN), args[1:]
        elif args[0] == "fen":
            if "moves" in args:
                k = args.index("moves")
                fen, rest = " ".join(args[1:k]), args[k:]
            else:
                fen, rest = " ".join(args[1:]), []
            root = parse_fen(fen)
        else:
            raise ValueError(f"bad position argument {args[0]!r}")
        h = PositionHistory.start(root)
        if rest:
            if rest[0] != "moves":
                raise ValueError(f"expected 'moves', got {rest[0]!r}")
            for text in rest[1:]:
                mv = Move.from_uci(text)
                if not is_legal(h.current, mv):
                    raise IllegalMove(f"{text} is illegal in {h.current.fen()}")
                h = h.push(mv)  # push keeps only the last 12 plies
        return h

    def _go(self) -> List[str]:
        from .models.policy import predict_batch

        if not legal_moves(self.history.current):
            return ["info string error no legal moves", "bestmove 0000"]
        [(best, dist)], values = predict_batch(self.net, [self.history], with_value=True)
        cp = value_to_cp(float(values[0]))
        ranked = sorted(dist.items(), key=lambda kv: -kv[1])
        # keep the argmax (first in legal order on ties) as line 1
        ranked = [(best, dist[best])] + [kv for kv in ranked if kv[0] != best]
        out = [f"info depth 1 multipv {k} score cp {cp} pv {m.uci()}"
               for k, (m, _) in enumerate(ranked[: self.multipv], start=1)]
        return out + [f"bestmove {best.uci()}"]


def uci_serve(net, inp: IO[str], out: IO[str], name: str = "humanchess") -> None:
    """Run the UCI loop until ``quit`` or end of input."""
    session = UciSession(net, name)
    for line in inp:
        for reply in session.handle(line):
            out.write(reply + "\n")
        out.flush()
        if session.done:
            break
