"""Primary-user activity: exponential ON/OFF processes and the closed-form
probability that a link is interrupted within a time window."""
from __future__ import annotations

import math
import random
from dataclasses import dataclass

ON = "ON"
OFF = "OFF"

DEFAULT_INTERFERENCE_RADIUS = 250.0


def sample_dwell(state: str, rate: float, rng: random.Random) -> float:
    """Draw an exponential dwell time for the given state parameter (1/seconds)."""
    if rate <= 0:
        raise ValueError(f"dwell rate must be positive, got {rate}")
    return rng.expovariate(rate)


def p_active(lambdas: list[float], tau: float) -> float:
    """Probability that at least one of the given PUs activates within a window
    of tau seconds: 1 - exp(-tau * sum(lambdas))."""
    if tau < 0:
        raise ValueError(f"tau must be nonnegative, got {tau}")
    for lam in lambdas:
        if lam < 0:
            raise ValueError(f"activity rates must be nonnegative, got {lam}")
    return 1.0 - math.exp(-tau * sum(lambdas))


@dataclass
class PuProcess:
    """One primary user: a two-state ON/OFF process bound to a channel and a
    disk-shaped interference region. `lam` governs the ON dwell, `mu` the OFF
    dwell."""

    index: int
    channel: int
    position: tuple[float, float]
    lam: float
    mu: float
    interference_radius: float = DEFAULT_INTERFERENCE_RADIUS
    state: str = OFF
    next_toggle_at: float = 0.0

    def __post_init__(self) -> None:
        if self.lam <= 0 or self.mu <= 0:
            raise ValueError("PU dwell rates must be positive")

    def schedule_first_toggle(self, now: float, rng: random.Random) -> None:
        rate = self.lam if self.state == ON else self.mu
        self.next_toggle_at = now + sample_dwell(self.state, rate, rng)

    def toggle(self, now: float, rng: random.Random) -> str:
        """Flip state and draw the next dwell; returns the new state."""
        self.state = OFF if self.state == ON else ON
        rate = self.lam if self.state == ON else self.mu
        self.next_toggle_at = now + sample_dwell(self.state, rate, rng)
        return self.state

    def covers(self, position: tuple[float, float]) -> bool:
        dx = position[0] - self.position[0]
        dy = position[1] - self.position[1]
        return dx * dx + dy * dy <= self.interference_radius**2


def pus_affecting_link(
    sender: tuple[float, float],
    receiver: tuple[float, float],
    channel: int,
    all_pus: list[PuProcess],
) -> list[PuProcess]:
    """PUs on the same channel whose interference disk contains the sender or
    the receiver of a link."""
    return [
        pu
        for pu in all_pus
        if pu.channel == channel and (pu.covers(sender) or pu.covers(receiver))
    ]
