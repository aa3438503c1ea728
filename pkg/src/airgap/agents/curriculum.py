"""Curriculum zone controller.

The goal-sampling region starts at the innermost zone and expands once the
success fraction over a full rolling window of the latest 1000 episodes
strictly exceeds one half. Advancing clears the window and asks the trainer
to checkpoint; the zone index never decreases.
"""

from __future__ import annotations

from collections import deque

WINDOW = 1000
ADVANCE_FRACTION = 0.5
MAX_ZONE = 2


class CurriculumState:
    def __init__(self, current_zone: int = 0, window=None):
        if not 0 <= current_zone <= MAX_ZONE:
            raise ValueError("zone out of range")
        self.current_zone = current_zone
        self.window = deque(window or (), maxlen=WINDOW)

    def success_fraction(self) -> float:
        if not self.window:
            return 0.0
        return sum(self.window) / len(self.window)

    def to_dict(self) -> dict:
        return {"current_zone": self.current_zone, "window": list(self.window)}

    @classmethod
    def from_dict(cls, raw: dict) -> "CurriculumState":
        return cls(raw["current_zone"], raw["window"])


def curriculum_advance(state: CurriculumState, episode_success: bool) -> tuple[CurriculumState, bool]:
    """Record one episode outcome; returns (state, advanced).

    Advances only when the window is full, the success fraction strictly
    exceeds 0.5, and there is a zone left to unlock.
    """
    state.window.append(1 if episode_success else 0)
    if (len(state.window) == WINDOW
            and state.success_fraction() > ADVANCE_FRACTION
            and state.current_zone < MAX_ZONE):
        state.current_zone += 1
        state.window.clear()
        return state, True
    return state, False
