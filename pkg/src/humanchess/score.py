from __future__ import annotations

from typing import NamedTuple, Optional

MATE_CP = 9999


class Score(NamedTuple):
    """Engine score: centipawns, or a signed mate distance.

    ``mate`` is positive when the side the score is expressed for delivers
    mate. ``mate_negative`` records the sign of ``#-0``.
    """

    cp: Optional[int] = None
    mate: Optional[int] = None
    mate_negative: bool = False

    @classmethod
    def from_cp(cls, cp: int) -> "Score":
        return cls(cp=int(cp))

    @classmethod
    def from_mate(cls, n: int, negative: bool = False) -> "Score":
        return cls(mate=int(n), mate_negative=negative or n < 0)

    @property
    def is_mate(self) -> bool:
        return self.mate is not None

    def centipawns(self) -> int:
        """Centipawn value with mates clamped to the +/-9999 sentinels."""
        if self.mate is not None:
            return -MATE_CP if self.mate_negative else MATE_CP
        return max(-MATE_CP, min(MATE_CP, self.cp))

    def __neg__(self) -> "Score":
        if self.mate is not None:
            return Score(mate=-self.mate, mate_negative=not self.mate_negative)
        return Score(cp=-self.cp)

    def __str__(self) -> str:
        if self.mate is not None:
            return f"#{'-' if self.mate_negative else ''}{abs(self.mate)}"
        return f"{self.cp / 100:.2f}"
