"""Human move prediction for chess: a bitboard move generator, PGN ingestion,
win-probability tables, tensor encodings, a numpy neural-network engine, and
the training/evaluation pipeline built on them."""

__version__ = "0.1.0"
