"""Exception hierarchy shared across the package.

Every error carries an ``exit_code`` used by the command-line front end:
2 usage, 3 data, 4 engine/IO, 5 internal fault.
"""


class HumanChessError(Exception):
    exit_code = 5


class DataError(HumanChessError):
    exit_code = 3


class IoError(HumanChessError):
    exit_code = 4


class UsageError(HumanChessError):
    exit_code = 2


# chess-core
class MalformedFen(DataError, ValueError):
    pass


class IllegalPosition(DataError, ValueError):
    pass


class IllegalMove(DataError, ValueError):
    pass


class AmbiguousSan(DataError, ValueError):
    pass


class NoSuchMove(DataError, ValueError):
    pass


# pgn-ingest
class StreamCorrupt(DataError):
    pass


class ReplayFailure(DataError):
    pass


class InsufficientGames(DataError):
    pass


# winprob
class EmptyInput(DataError):
    pass


class MissingEval(DataError):
    pass


# encoding
class UnencodableMove(HumanChessError):
    pass


class NotLegal(DataError, ValueError):
    pass


# tensor-nn
class ShapeMismatch(HumanChessError, ValueError):
    pass


class GraphStateError(HumanChessError, RuntimeError):
    pass


class VersionMismatch(DataError):
    pass


class CorruptCheckpoint(DataError):
    pass


class IoFailure(IoError):
    pass


# models
class EmptyStream(DataError):
    pass


class DivergenceDetected(HumanChessError):
    pass


class OneClassOnly(DataError, ValueError):
    pass


class NoLegalMoves(DataError):
    pass


class DegenerateFeatures(DataError):
    pass


# datasets
class CorruptShard(DataError):
    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


class InsufficientNegatives(DataError):
    pass


# eval
class EmptyTestSet(DataError, ValueError):
    pass


class MissingEvals(DataError):
    pass


# engine-io
class SpawnFailure(IoError):
    pass


class HandshakeTimeout(IoError):
    pass


class EngineDied(IoError):
    pass


class ParseError(IoError):
    pass


class SearchTimeout(IoError):
    pass
