"""A-priori bound on the expected broadcast time under the envelope constraint.

If every window meets the per-node constraint, the expected number of
non-informed nodes decays at least as fast as ``(n - s0) exp(-r t)``
sampled on window boundaries.  ``tau1`` is the first boundary where that
envelope drops to one node; past it the completion-time tail is a
geometric series over whole windows, summed in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


def _check(n: int, s0: int, r: float, dt: float | None = None) -> None:
    if int(n) != n or int(s0) != s0:
        raise ValueError("n and s0 must be integers")
    if not 1 <= s0 <= n:
        raise ValueError(f"need 1 <= s0 <= n, got s0={s0}, n={n}")
    if not r > 0:
        raise ValueError(f"r must be positive, got {r}")
    if dt is not None and not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")


def decay_envelope(n: int, s0: int, r: float, t: float) -> float:
    """Guaranteed ceiling ``(n - s0) exp(-r t)`` on the expected non-informed count."""
    _check(n, s0, r)
    if t < 0:
        raise ValueError("t must be nonnegative")
    return (n - s0) * math.exp(-r * t)


def _windows_to_tau1(n: int, s0: int, r: float, dt: float) -> int:
    deficit = n - s0
    if deficit <= 1:
        return 0
    k = max(0, math.ceil(math.log(deficit) / (r * dt)))
    # guard the ceiling against rounding either way
    while k > 0 and deficit * math.exp(-r * (k - 1) * dt) <= 1.0:
        k -= 1
    while deficit * math.exp(-r * k * dt) > 1.0:
        k += 1
    return k


def compute_tau1(n: int, s0: int, r: float, dt: float) -> float:
    """First window boundary ``k dt`` where the envelope is at most one node."""
    _check(n, s0, r, dt)
    return _windows_to_tau1(n, s0, r, dt) * dt


def expected_broadcast_upper_bound(n: int, s0: int, r: float, dt: float) -> float:
    """``tau1 + (n - s0) dt exp(-r tau1) / (1 - exp(-r dt))``."""
    _check(n, s0, r, dt)
    if s0 == n:
        return 0.0
    tau1 = compute_tau1(n, s0, r, dt)
    tail = (n - s0) * dt * math.exp(-r * tau1) / -math.expm1(-r * dt)
    return tau1 + tail


@dataclass(frozen=True)
class BroadcastBound:
    tau1: float
    bound: float
    n: int
    s0: int
    r: float
    dt: float

    @classmethod
    def compute(cls, n: int, s0: int, r: float, dt: float) -> "BroadcastBound":
        return cls(
            compute_tau1(n, s0, r, dt), expected_broadcast_upper_bound(n, s0, r, dt), n, s0, r, dt
        )

    def __post_init__(self):
        if self.tau1 < 0 or self.bound < self.tau1:
            raise ValueError(f"inconsistent bound: tau1={self.tau1}, bound={self.bound}")
