"""Per-node state machine of the gradient synchronization algorithm.

Covers the round schedule with its neighbor level sets, the handshake
messages, the fast and slow mode rules, the max estimate, and the rate
multiplier choice. Clock quantities are fixed-point integers; the rules
compare doubled values so that half-kappa terms stay exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

from .core_time import ContractViolation, to_fixed


class ScheduleError(AssertionError):
    """A round schedule violates the spacing its analysis depends on."""


class MutualExclusionViolation(AssertionError):
    pass


class MsgKind(str, Enum):
    NEW_NEIGHBOR = "new_neighbor"
    NEIGHBOR_REMOVED = "neighbor_removed"
    FLOOD_MAX = "flood_max"


@dataclass(frozen=True)
class ProtocolMessage:
    kind: MsgKind
    sender: object
    dest: object
    round: int = 0
    payload: int = 0
    flood_id: tuple = ()


@dataclass(frozen=True)
class EdgeFixed:
    """Per-edge constants in fixed point, as used by the mode rules."""

    kappa: int
    delta: int
    eps: int
    two_mu_tau: int


def compute_sigma(rho: float, mu: float) -> float:
    if not 0 < rho < 1:
        raise ContractViolation("rho must lie in (0, 1)")
    if mu <= 4 * rho / (1 - rho):
        raise ContractViolation(f"mu={mu} must exceed 4*rho/(1-rho)={4 * rho / (1 - rho):.6g}")
    return (1 - rho) * mu / (4 * rho)


def compute_smax(G_hat: float, sigma: float, neighbor_kappas) -> int:
    if G_hat <= 0 or sigma <= 1:
        raise ContractViolation("need G_hat > 0 and sigma > 1")
    kappas = list(neighbor_kappas)
    if not kappas:
        return 3
    k_min = min(kappas)
    s = 1
    while not 2 * G_hat / sigma ** (s - 2) < k_min:
        s += 1
    return max(3, s)


def delta_s(s: int, G_hat: float, mu: float, sigma: float) -> float:
    return (2 + (6 * s + 8) * mu) * G_hat / (mu * sigma ** max(s - 2, 0))


def nabla_s(s: int, G_hat: float, rho: float, mu: float, sigma: float) -> float:
    return 4 * (1 + mu) * G_hat / ((1 - rho) * mu * sigma ** max(s - 2, 0))


@dataclass
class RoundSchedule:
    r: int
    s_max: int
    G_hat: float
    # level -> logical-clock threshold (fixed point); level 1 is the next round start
    thresholds: dict[int, int]
    offsets: dict[int, float] = field(default_factory=dict)

    @property
    def t_inf(self) -> int:
        """Last level threshold of the round, after which all levels are settled."""
        return self.thresholds[self.s_max]


def schedule_offsets(G_hat: float, rho: float, mu: float, sigma: float, s_max: int) -> dict[int, float]:
    """Threshold offsets from the round start, in clock units."""
    if s_max < 3:
        raise ContractViolation("s_max must be at least 3")
    G = G_hat
    off = {2: G + (1 + rho) * G / mu}
    off[3] = off[2] + (8 * (1 + mu) / ((1 - rho) * mu) + (4 + (12 * s_max + 16) * mu) / mu) * G
    for s in range(4, s_max + 1):
        step = 8 * (1 + mu) / ((1 - rho) * mu * sigma ** (s - 4))
        step += (2 + (6 * s + 2) * mu) * (sigma + 1) / (mu * sigma ** (s - 3))
        off[s] = off[s - 1] + step * G
    tail = 8 * (1 + mu) / ((1 - rho) * mu) + (2 + (6 * s_max + 2) * mu) * (sigma + 1) / (mu * sigma)
    off[1] = off[3] + sigma / (sigma - 1) * tail * G + G
    return off


def check_gaps(off: dict[int, float], G_hat: float, rho: float, mu: float, sigma: float, s_max: int) -> None:
    for s in range(2, s_max):
        need = 2 * nabla_s(s - 1, G_hat, rho, mu, sigma)
        need += delta_s(s - 1, G_hat, mu, sigma) + delta_s(s, G_hat, mu, sigma)
        if not off[s + 1] - off[s] > need:
            raise ScheduleError(f"gap T{s + 1}-T{s}={off[s + 1] - off[s]:.6g} <= {need:.6g}")
    if not off[s_max] < off[1]:
        raise ScheduleError(f"T{s_max} does not precede the next round start")


def compute_round_schedule(
    L_now: int, G_hat: float, rho: float, mu: float, sigma: float, s_max: int, r: int = 1
) -> RoundSchedule:
    off = schedule_offsets(G_hat, rho, mu, sigma, s_max)
    check_gaps(off, G_hat, rho, mu, sigma, s_max)
    thresholds = {s: L_now + to_fixed(x) for s, x in off.items()}
    return RoundSchedule(r, s_max, G_hat, thresholds, off)


@dataclass
class NodeState:
    id: object
    G_hat: float
    rho: float
    mu: float
    sigma: float
    kappas: dict = field(default_factory=dict)  # neighbor -> kappa (clock units)
    round: int = 0
    s_max: int = 3
    pending: dict[int, int] = field(default_factory=lambda: {1: 0})
    schedule: RoundSchedule | None = None
    levels: list[set] = field(default_factory=lambda: [set() for _ in range(4)])
    known: set = field(default_factory=set)
    new: set = field(default_factory=set)
    heard_new: dict[int, set] = field(default_factory=dict)
    heard_removed: dict[int, set] = field(default_factory=dict)
    failed_in: dict = field(default_factory=dict)  # neighbor -> round of last failure
    # max estimate: base value at a hardware reading, grown at the floor rate since
    max_base: int = 0
    max_base_hw: int = 0
    multiplier: float = 1.0

    def level_of(self, v) -> int:
        s = 0
        while s + 1 < len(self.levels) and v in self.levels[s + 1]:
            s += 1
        return s

    def next_threshold(self) -> tuple[int, int]:
        """(level, value) of the smallest pending threshold."""
        s = min(self.pending, key=lambda k: (self.pending[k], k))
        return s, self.pending[s]


def _start_round(state: NodeState, L_now: int) -> None:
    state.round += 1
    kappas = [state.kappas[v] for v in state.known if v in state.kappas]
    s_max = compute_smax(state.G_hat, state.sigma, kappas)
    base = state.levels[1]
    levels = [set(), base] + [set(base) for _ in range(2, s_max + 1)]
    state.levels = levels
    state.s_max = s_max
    state.schedule = compute_round_schedule(
        L_now, state.G_hat, state.rho, state.mu, state.sigma, s_max, state.round
    )
    state.pending = dict(state.schedule.thresholds)
    for old in [k for k in state.heard_new if k < state.round]:
        del state.heard_new[old]
    for old in [k for k in state.heard_removed if k < state.round]:
        del state.heard_removed[old]


def on_threshold(state: NodeState, s: int, L_now: int) -> tuple[NodeState, list[ProtocolMessage]]:
    """The logical clock reached the level-``s`` threshold."""
    if s not in state.pending:
        raise ContractViolation(f"threshold T{s} is not pending at node {state.id!r}")
    del state.pending[s]
    if not state.pending:
        _start_round(state, L_now)
    msgs: list[ProtocolMessage] = []
    r = state.round
    if s == 1:
        state.new = state.known - state.levels[1]
        state.levels[1] |= state.new
        for v in sorted(state.new, key=repr):
            msgs.append(ProtocolMessage(MsgKind.NEW_NEIGHBOR, state.id, v, r))
    elif s == 2:
        heard = state.heard_new.get(r, set())
        removed = state.heard_removed.get(r, set())
        state.levels[1] -= {v for v in state.new if v in removed or v not in heard}
        state.levels[2] = set(state.levels[1])
    else:
        state.levels[s] = set(state.levels[s - 1])
    return state, msgs


def on_edge_change(state: NodeState, v, appeared: bool) -> tuple[NodeState, list[ProtocolMessage]]:
    msgs: list[ProtocolMessage] = []
    if not appeared:
        state.known.discard(v)
        for lvl in state.levels:
            lvl.discard(v)
        state.failed_in[v] = state.round
        return state, msgs
    state.known.add(v)
    if v in state.new and state.failed_in.get(v) == state.round:
        msgs.append(ProtocolMessage(MsgKind.NEIGHBOR_REMOVED, state.id, v, state.round))
    return state, msgs


def on_handshake(state: NodeState, msg: ProtocolMessage) -> None:
    book = state.heard_new if msg.kind is MsgKind.NEW_NEIGHBOR else state.heard_removed
    book.setdefault(msg.round, set()).add(msg.sender)


def level_members(state: NodeState) -> list[tuple[int, list]]:
    """Non-empty levels as (s, members), s = 1..s_max."""
    out = []
    for s in range(1, state.s_max + 1):
        if s < len(state.levels) and state.levels[s]:
            out.append((s, sorted(state.levels[s], key=repr)))
    return out


def _levels(state: NodeState):
    for s in range(1, min(state.s_max + 1, len(state.levels))):
        if state.levels[s]:
            yield s, state.levels[s]


def fast_mode_rule(state: NodeState, L_u: int, estimates: dict, consts: dict) -> bool:
    for s, members in _levels(state):
        trigger = False
        ok = True
        for v in members:
            c = consts[v]
            d = estimates[v] - L_u
            if d >= s * c.kappa - c.eps:
                trigger = True
            if -d > s * c.kappa + c.eps + c.two_mu_tau:
                ok = False
                break
        if trigger and ok:
            return True
    return False


def slow_mode_rule(state: NodeState, L_u: int, estimates: dict, consts: dict) -> bool:
    for s, members in _levels(state):
        trigger = False
        ok = True
        for v in members:
            c = consts[v]
            d2 = 2 * (estimates[v] - L_u)
            if d2 > (2 * s + 1) * c.kappa + 2 * c.delta + 2 * c.eps:
                ok = False
                break
            if -d2 >= (2 * s + 1) * c.kappa - 2 * c.delta - 2 * c.eps:
                trigger = True
        if trigger and ok:
            return True
    return False


def choose_multiplier(
    state: NodeState, L_u: int, M_u: int, estimates: dict, consts: dict
) -> tuple[float, str]:
    """Rate multiplier and the reason it was chosen."""
    fast = fast_mode_rule(state, L_u, estimates, consts)
    slow = slow_mode_rule(state, L_u, estimates, consts)
    if fast and slow:
        raise MutualExclusionViolation(f"fast and slow rules both hold at node {state.id!r}")
    if fast:
        return 1 + state.mu, "fast"
    if slow:
        return 1.0, "slow"
    if L_u >= M_u and all(estimates[v] <= L_u + consts[v].eps for v in estimates):
        return 1.0, "max"
    if L_u < M_u:
        return 1 + state.mu, "catchup"
    return 1.0, "idle"


def max_floor_rate(rho: float) -> float:
    return (1 - rho) / (1 + rho)


def current_max_estimate(state: NodeState, hw_now: int, L_u: int, lower: int | None = None) -> int:
    grown = state.max_base + math.floor(max_floor_rate(state.rho) * (hw_now - state.max_base_hw))
    m = max(grown, L_u)
    return m if lower is None else max(m, lower)


def update_max_estimate(
    state: NodeState,
    hw_now: int,
    L_u: int,
    payloads=(),
    neighbor_lows=(),
) -> int:
    """Fold flood payloads and neighbor lower bounds into M_u.

    ``neighbor_lows`` are estimate minus uncertainty for each neighbor.
    """
    m = current_max_estimate(state, hw_now, L_u)
    for p in payloads:
        m = max(m, p)
    for low in neighbor_lows:
        m = max(m, low)
    state.max_base = m
    state.max_base_hw = hw_now
    return m
