"""Bounded-error neighbor clock estimates and per-edge protocol constants."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from enum import Enum

from .core_time import ContractViolation


class NoiseMode(str, Enum):
    ZERO = "zero"
    MAX_POSITIVE = "max_positive"
    MAX_NEGATIVE = "max_negative"
    WIDEN_SKEW = "widen_skew"
    SEEDED_RANDOM = "seeded_random"


class NotANeighbor(LookupError):
    pass


@dataclass(frozen=True)
class NoisePolicy:
    mode: NoiseMode = NoiseMode.ZERO
    seed: int = 0
    # seeded_random redraws once per period (fixed-point time units)
    period: int = 1_000_000_000

    def error(self, u, v, t: int, eps: int, own: int | None = None, truth: int | None = None) -> int:
        """Signed estimate error in fixed point; always within [-eps, eps]."""
        mode = self.mode
        if mode is NoiseMode.ZERO:
            return 0
        if mode is NoiseMode.MAX_POSITIVE:
            return eps
        if mode is NoiseMode.MAX_NEGATIVE:
            return -eps
        if mode is NoiseMode.WIDEN_SKEW:
            if own is None or truth is None:
                raise ContractViolation("widen_skew needs both clock values")
            # push the estimate further away from the observer's own clock
            if own > truth:
                return -eps
            if own < truth:
                return eps
            return 0
        return _keyed_uniform(self.seed, u, v, t // self.period, eps)


def _keyed_uniform(seed: int, u, v, epoch: int, eps: int) -> int:
    key = repr((seed, u, v, epoch)).encode()
    x = struct.unpack("<Q", hashlib.blake2b(key, digest_size=8).digest())[0]
    return (x % (2 * eps + 1)) - eps if eps > 0 else 0


def estimate(
    u,
    v,
    t: int,
    truth: int,
    policy: NoisePolicy,
    eps: int,
    neighbors=None,
    own: int | None = None,
) -> int:
    """Estimate of v's logical clock as seen by u at time t."""
    if neighbors is not None and v not in neighbors:
        raise NotANeighbor(f"{v!r} is not a neighbor of {u!r} at {t}")
    return truth + policy.error(u, v, t, eps, own=own, truth=truth)


@dataclass(frozen=True)
class EdgeConstants:
    kappa: float
    delta: float


def edge_constants(
    eps: float,
    tau_up: float,
    mu: float,
    kappa_slack: float = 0.0,
    delta_fraction: float = 1.0,
) -> EdgeConstants:
    if eps < 0 or tau_up < 0 or kappa_slack < 0:
        raise ContractViolation("eps, tau_up and kappa_slack must be non-negative")
    if not 0 < delta_fraction <= 1:
        raise ContractViolation("delta_fraction must lie in (0, 1]")
    if eps + mu * tau_up <= 0:
        raise ContractViolation("eps + mu * tau_up must be positive")
    kappa = 4 * eps + 8 * mu * tau_up + kappa_slack
    delta = delta_fraction * (kappa - 4 * eps - 4 * mu * tau_up) / 6
    if delta <= 1e-12:
        raise ContractViolation("delta would be zero; set kappa_slack > 0 when tau_up is 0")
    return EdgeConstants(kappa, delta)
