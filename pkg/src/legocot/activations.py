"""Smoothed ReLU activations.

``main`` variant, with even ``q`` and width ``rho``::

    rho / q                        x <= -rho
    x**q / (rho**(q-1) * q)        -rho < x <= rho
    x - rho * (1 - 1/q)            x > rho

``modified`` variant adds a leaky negative side of slope ``-varpi`` with a
quadratic joint, and saturates at ``cap``::

    varpi*cap - varpi**2/2         x <= -cap
    -varpi*x - varpi**2/2          -cap < x <= -varpi
    x**2 / 2                       -varpi < x <= 0
    x**q / (rho**(q-1) * q)        0 < x <= rho
    x - rho * (1 - 1/q)            rho < x <= cap
    cap - rho * (1 - 1/q)          x > cap

The ``-varpi**2/2`` offset on the two leftmost pieces makes the function
continuous at ``-varpi`` (without it the pieces disagree by ``varpi**2/2``).

Derivatives are taken from the piece that owns the point, so at a breakpoint
the value is the left piece's one-sided derivative.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

MAIN = "main"
MODIFIED = "modified"


@dataclass(frozen=True)
class SReluConfig:
    q: int = 4
    rho: float = 0.1
    variant: str = MAIN
    varpi: float | None = None
    cap: float | None = None

    def __post_init__(self):
        if self.q < 4 or self.q % 2:
            raise ValueError(f"q must be an even integer >= 4, got {self.q}")
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if self.variant == MODIFIED:
            if self.varpi is None or self.cap is None:
                raise ValueError("modified sReLU needs varpi and cap")
            if not self.varpi > 0:
                raise ValueError(f"varpi must be positive, got {self.varpi}")
            if not self.cap > max(self.rho, self.varpi):
                raise ValueError("cap must exceed both rho and varpi")
        elif self.variant != MAIN:
            raise ValueError(f"unknown sReLU variant {self.variant!r}")

    def breakpoints(self) -> tuple[float, ...]:
        if self.variant == MAIN:
            return (-self.rho, self.rho)
        return (-self.cap, -self.varpi, 0.0, self.rho, self.cap)

    def lambda_ref(self, d: int) -> float:
        """``(d - 1) / (d - 1 + e^cap)``, the smallest achievable ``1 - softmax`` mass."""
        if self.cap is None:
            raise ValueError("lambda_ref needs a cap")
        return (d - 1) / (d - 1 + math.exp(self.cap))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "SReluConfig":
        return cls(**obj)


def srelu(x, cfg: SReluConfig):
    x = np.asarray(x, dtype=float)
    q, rho = cfg.q, cfg.rho
    poly = x**q / (rho ** (q - 1) * q)
    lin = x - rho * (1.0 - 1.0 / q)
    if cfg.variant == MAIN:
        out = np.where(x <= -rho, rho / q, np.where(x <= rho, poly, lin))
    else:
        w, cap = cfg.varpi, cfg.cap
        out = np.select(
            [x <= -cap, x <= -w, x <= 0.0, x <= rho, x <= cap],
            [w * cap - 0.5 * w * w, -w * x - 0.5 * w * w, 0.5 * x * x, poly, lin],
            default=cap - rho * (1.0 - 1.0 / q),
        )
    return out[()] if out.ndim == 0 else out


def srelu_prime(x, cfg: SReluConfig):
    x = np.asarray(x, dtype=float)
    q, rho = cfg.q, cfg.rho
    dpoly = (x / rho) ** (q - 1)
    if cfg.variant == MAIN:
        out = np.where(x <= -rho, 0.0, np.where(x <= rho, dpoly, 1.0))
    else:
        w, cap = cfg.varpi, cfg.cap
        out = np.select(
            [x <= -cap, x <= -w, x <= 0.0, x <= rho, x <= cap],
            [0.0, -w, x, dpoly, 1.0],
            default=0.0,
        )
    return out[()] if out.ndim == 0 else out


def srelu_and_prime(x: np.ndarray, cfg: SReluConfig) -> tuple[np.ndarray, np.ndarray]:
    """Both at once for the main variant on large arrays (one pass of masks)."""
    if cfg.variant != MAIN:
        return srelu(x, cfg), srelu_prime(x, cfg)
    q, rho = cfg.q, cfg.rho
    lo = x <= -rho
    hi = x > rho
    t = x / rho
    tq1 = t ** (q - 1)
    val = tq1 * x / q
    val[lo] = rho / q
    val[hi] = x[hi] - rho * (1.0 - 1.0 / q)
    der = tq1
    der[lo] = 0.0
    der[hi] = 1.0
    return val, der
