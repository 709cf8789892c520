"""Replay attacker on the occupancy sensor output.

The attacker sits between the loop detector and everything downstream. It
watches the target channel from t = 0, remembers the smallest value seen so
far, and from ``start_time`` on replaces every sample with that minimum. The
controller then sees a falling occupancy and shortens the green time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass
class ReplayAttackState:
    start_time: float = math.inf
    target_pair: int = 0
    ras: float = math.inf
    active: bool = False

    def record(self, occupancy: float) -> "ReplayAttackState":
        """Fold one observed sample into the running minimum."""
        if occupancy < self.ras:
            self.ras = occupancy
        return self

    def inject(self, occupancy_true: float, sim_time: float) -> float:
        """Value forwarded to the controller for this sample."""
        self.active = sim_time >= self.start_time
        if self.active:
            return self.ras
        return occupancy_true

    def process(self, occupancy: float, sim_time: float) -> float:
        return self.record(occupancy).inject(occupancy, sim_time)


def difference_condition(o_t: float, o_prev: float, ras: float) -> bool:
    """Update test written as a difference of consecutive samples.

    ``o_t - o_prev < ras - o_prev``; algebraically the same as ``o_t < ras``.
    """
    return o_t - o_prev < ras - o_prev
