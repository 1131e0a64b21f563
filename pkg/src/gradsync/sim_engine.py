"""Deterministic event-driven simulation of the synchronization algorithm.

Clocks advance in closed form between events. Every node re-evaluates
its rate multiplier on each event that touches it and at the exact times
when one of its rule predicates can change truth value. Event ties are
broken by kind priority and then by insertion order, so a scenario always
replays identically.
"""

from __future__ import annotations

import bisect
import hashlib
import heapq
import math
from array import array
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .core_time import ContractViolation, from_fixed, to_fixed
from .dynamic_graph import dynamic_diameter, ukey
from .estimate_layer import NoiseMode, edge_constants
from .protocol_node import (
    EdgeFixed,
    MsgKind,
    MutualExclusionViolation,
    NodeState,
    ProtocolMessage,
    ScheduleError,
    choose_multiplier,
    current_max_estimate,
    fast_mode_rule,
    max_floor_rate,
    on_edge_change,
    on_handshake,
    on_threshold,
    slow_mode_rule,
    update_max_estimate,
)
from .scenario import InvalidScenario, Scenario

# equal-time processing order
P_DRIFT, P_DETECT, P_DELIVER, P_THRESH, P_FLOOD, P_CROSS, P_NOISE, P_CHECK, P_SAMPLE = range(9)

# a predicted re-entry closer than this (fixed-point units) counts as chatter
PIN_WINDOW = 1000
# slack for comparisons between independently rounded clock readings
ROUND_TOL = 4
# a node whose clock is this close to its max estimate counts as a leader
FLOOD_TOL = 1000


class InvariantViolation(AssertionError):
    def __init__(self, invariant: str, time: int, node: str, detail: str = ""):
        self.invariant = invariant
        self.time = time
        self.node = node
        self.detail = detail
        super().__init__(f"{invariant} violated at t={from_fixed(time):.9f} node={node}: {detail}")


def detection_lag(t: int, tau_up: int, add: bool, offsets: tuple[int, int] | None = None) -> tuple[int, int]:
    """Times at which the two endpoints perceive a change at ``t``.

    Default: additions are seen at once, removals after the full lag.
    """
    if tau_up < 0:
        raise ContractViolation("tau_up must be non-negative")
    if offsets is None:
        lag = 0 if add else tau_up
        return t + lag, t + lag
    if not all(0 <= x <= tau_up for x in offsets):
        raise ContractViolation("detection offsets must lie in [0, tau_up]")
    return t + offsets[0], t + offsets[1]


@dataclass
class Trace:
    names: list
    params: dict
    sample_times: np.ndarray
    hardware: np.ndarray
    logical: np.ndarray
    multiplier: np.ndarray
    max_estimate: np.ndarray
    rounds: np.ndarray
    edge_log: list  # (time, u, v, present) for directed estimate edges
    level_hist: list  # per node: list of (time, round, pending levels, levels)
    anchors: list  # per node: (times, values, rates) of logical clock segments
    round_starts: list  # per node: list of (round, time)
    t_inf_first: list  # per node: time the last level of round 1 settled
    invariants: dict
    first_violation: str | None
    kappa: dict  # undirected edge (names) -> kappa fixed
    stats: dict = field(default_factory=dict)

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.sample_times, self.hardware, self.logical, self.max_estimate, self.rounds):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(np.ascontiguousarray(self.multiplier).tobytes())
        h.update(repr(self.edge_log).encode())
        return h.hexdigest()

    def logical_at(self, node: int, t: int) -> int:
        times, values, rates = self.anchors[node]
        k = bisect.bisect_right(times, t) - 1
        return values[k] + round(rates[k] * (t - times[k]))

    def levels_at(self, node: int, t: int):
        hist = self.level_hist[node]
        k = bisect.bisect_right(hist, (t, math.inf)) - 1
        return hist[max(k, 0)]


class Simulator:
    def __init__(self, scenario: Scenario, assert_strict: bool = False, horizon_s: float | None = None,
                 sample_tick_s: float | None = None, check_invariants: bool = True):
        scenario.validate()
        self.sc = scenario
        self.assert_strict = assert_strict
        self.check = check_invariants
        self.rho, self.mu = scenario.rho, scenario.mu
        self.sigma = scenario.sigma
        self.G_hat = scenario.g_hat
        self.names = list(scenario.nodes)
        self.idx = {name: k for k, name in enumerate(self.names)}
        n = self.n = len(self.names)
        self.horizon = to_fixed(horizon_s if horizon_s is not None else scenario.horizon_s)
        tick = sample_tick_s if sample_tick_s is not None else scenario.sample_tick
        self.tick = max(1, to_fixed(tick))
        self.noise = scenario.noise_policy()
        self.noise_cache: dict = {}
        self.floor = max_floor_rate(self.rho)
        try:
            self.graph = scenario.graph()
        except ContractViolation as exc:
            raise InvalidScenario(str(exc)) from exc

        # per-edge constants, keyed by ordered index pair
        self.consts: dict[tuple[int, int], EdgeFixed] = {}
        self.delay: dict[tuple[int, int], int] = {}
        self.tau: dict[tuple[int, int], int] = {}
        self.kappa_named: dict = {}
        for lk in scenario.links:
            ec = edge_constants(lk.eps, lk.tau_up_s, self.mu, scenario.kappa_slack, scenario.delta_fraction)
            fx = EdgeFixed(to_fixed(ec.kappa), to_fixed(ec.delta), to_fixed(lk.eps),
                           to_fixed(2 * self.mu * lk.tau_up_s))
            a, b = self.idx[lk.u], self.idx[lk.v]
            for pair in ((a, b), (b, a)):
                self.consts[pair] = fx
                self.delay[pair] = max(1, to_fixed(lk.delay_s * scenario.delay_fraction))
                self.tau[pair] = to_fixed(lk.tau_up_s)
            self.kappa_named[ukey(lk.u, lk.v)] = fx.kappa

        self.D = dynamic_diameter(self.graph, self.horizon)
        if self.D == math.inf:
            raise InvalidScenario("some flood never completes: dynamic diameter is unbounded")
        d_hat = to_fixed(scenario.d_hat)
        if scenario.flood_period_s is not None:
            self.flood_period = to_fixed(scenario.flood_period_s)
        else:
            self.flood_period = max(1, int(self.D) if self.D > 0 else d_hat // 2)
        self.skew_bound = 2 * (1 + self.rho) * self.D

        # clocks
        self.sched = [scenario.hardware_schedule(nm) for nm in self.names]
        self.anchor_t = [0] * n
        self.anchor_H = [0] * n
        self.anchor_L = [0] * n
        self.hrate = [s.rate_at(0) for s in self.sched]
        self.mult = [1.0] * n
        self.reason = ["max"] * n
        self.hist_t = [array("q", [0]) for _ in range(n)]
        self.hist_L = [array("q", [0]) for _ in range(n)]
        self.hist_R = [array("d", [self.hrate[i]]) for i in range(n)]

        self.state = [NodeState(i, self.G_hat, self.rho, self.mu, self.sigma) for i in range(n)]
        self.known: list[set[int]] = [set() for _ in range(n)]
        self.innb: list[set[int]] = [set() for _ in range(n)]
        self.present: set[tuple[int, int]] = set()
        # largest flood payload each node has sent on; smaller ones die out
        self.flood_sent: list[int | None] = [None] * n
        self.flood_epoch = 0

        self.heap: list = []
        self.seq = 0
        self.ver_cross = [0] * n
        self.ver_thresh = [0] * n
        self.dirty: deque[int] = deque()
        self.dirty_set: set[int] = set()
        self.now = 0

        self.thr_cache: dict = {}
        self.invariants = {k: 0 for k in (
            "global_skew", "max_upper", "max_lower", "max_self", "max_neighbor",
            "mutual_exclusion", "level_monotonicity", "handshake", "mode_rules")}
        self.first_violation: str | None = None
        self.stats = {"events": 0, "messages": 0, "dropped": 0, "reevals": 0, "pins": 0}

        # trace buffers
        self.samples_t = array("q")
        self.buf_H = array("q")
        self.buf_L = array("q")
        self.buf_M = array("q")
        self.buf_m = array("d")
        self.buf_r = array("q")
        self.edge_log: list = []
        self.level_hist: list = [[(0, 0, (1,), ())] for _ in range(n)]
        self.round_starts: list = [[] for _ in range(n)]
        self.t_inf_first: list = [None] * n
        self.maxL_hist_t = array("q")
        self.maxL_hist_v = array("q")

    # clock readings ---------------------------------------------------

    def L(self, i: int, t: int) -> int:
        return self.anchor_L[i] + round(self.hrate[i] * self.mult[i] * (t - self.anchor_t[i]))

    def H(self, i: int, t: int) -> int:
        return self.anchor_H[i] + round(self.hrate[i] * (t - self.anchor_t[i]))

    def rate(self, i: int) -> float:
        return self.hrate[i] * self.mult[i]

    def _reanchor(self, i: int, t: int, hrate: float | None = None, mult: float | None = None) -> None:
        L, H = self.L(i, t), self.H(i, t)
        self.anchor_t[i], self.anchor_L[i], self.anchor_H[i] = t, L, H
        if hrate is not None:
            self.hrate[i] = hrate
        if mult is not None:
            self.mult[i] = mult
        ht, hl, hr = self.hist_t[i], self.hist_L[i], self.hist_R[i]
        if ht[-1] == t:
            hl[-1] = L
            hr[-1] = self.rate(i)
        else:
            ht.append(t)
            hl.append(L)
            hr.append(self.rate(i))

    def error(self, i: int, j: int, t: int, Li: int, Lj: int) -> int:
        eps = self.consts[(i, j)].eps
        if self.noise.mode is NoiseMode.SEEDED_RANDOM:
            key = (i, j, t // self.noise.period)
            e = self.noise_cache.get(key)
            if e is None:
                if len(self.noise_cache) > 100_000:
                    self.noise_cache.clear()
                e = self.noise_cache[key] = self.noise.error(i, j, t, eps)
            return e
        return self.noise.error(i, j, t, eps, own=Li, truth=Lj)

    def estimates(self, i: int, t: int, Li: int) -> dict[int, int]:
        out = {}
        for j in self.known[i]:
            Lj = self.L(j, t)
            out[j] = Lj + self.error(i, j, t, Li, Lj)
        return out

    # events -------------------------------------------------------------

    def push(self, t: int, prio: int, kind: str, *payload) -> None:
        self.seq += 1
        heapq.heappush(self.heap, (t, prio, self.seq, kind, payload))

    def mark(self, i: int) -> None:
        if i not in self.dirty_set:
            self.dirty_set.add(i)
            self.dirty.append(i)

    def run(self) -> Trace:
        for ev in self.graph.events:
            a, b = self.idx[ev.edge[0]], self.idx[ev.edge[1]]
            self.push(ev.time, P_DETECT, "detect", a, b, ev.add)
        for i, s in enumerate(self.sched):
            for t0 in s.starts[1:]:
                self.push(t0, P_DRIFT, "drift", i)
            self._schedule_threshold(i, 0)
        self.push(0, P_FLOOD, "flood")
        if self.noise.mode is NoiseMode.SEEDED_RANDOM:
            self.push(self.noise.period, P_NOISE, "noise")
        self.push(0, P_SAMPLE, "sample")
        heap = self.heap
        while heap:
            t, prio, _, kind, payload = heapq.heappop(heap)
            if t > self.horizon:
                break
            self.now = t
            self.stats["events"] += 1
            getattr(self, "_on_" + kind)(t, *payload)
            self._drain(t)
        return self._finish()

    def _drain(self, t: int) -> None:
        budget = 50 * self.n + 100
        while self.dirty and budget > 0:
            i = self.dirty.popleft()
            self.dirty_set.discard(i)
            self.reevaluate(i, t)
            budget -= 1
        if self.dirty:
            # a rate cascade that does not settle within the budget: keep the
            # current rates and just refresh the pending crossings
            while self.dirty:
                i = self.dirty.popleft()
                self.dirty_set.discard(i)
                self._schedule_cross(i, t)

    def _on_drift(self, t: int, i: int) -> None:
        self._reanchor(i, t, hrate=self.sched[i].rate_at(t))
        self._schedule_threshold(i, t)
        self.mark(i)
        for k in self.innb[i]:
            self.mark(k)

    def _on_detect(self, t: int, i: int, j: int, add: bool) -> None:
        self._fold_max(i, t)
        if add:
            self.present.add((i, j))
            self.known[i].add(j)
            self.innb[j].add(i)
        else:
            self.present.discard((i, j))
            self.known[i].discard(j)
            self.innb[j].discard(i)
        self.edge_log.append((t, i, j, add))
        st = self.state[i]
        st.kappas[j] = from_fixed(self.consts[(i, j)].kappa)
        upper = [s for s in range(2, len(st.levels)) if j in st.levels[s]]
        _, msgs = on_edge_change(st, j, add)
        if upper and self.check:
            # j may keep i in its upper levels for at most tau more
            self.push(t + self._tau(i, j), P_CHECK, "hscheck", j)
        self._record_levels(i, t)
        self._send(t, msgs)
        if add and self.flood_sent[i] is not None:
            self._transmit(t, i, j, ProtocolMessage(MsgKind.FLOOD_MAX, i, j, 0, self.flood_sent[i], (self.flood_epoch,)))
        self.mark(i)

    def _on_deliver(self, t: int, msg: ProtocolMessage, src: int, dst: int) -> None:
        if (src, dst) not in self.present:
            self.stats["dropped"] += 1
            return
        if msg.kind is MsgKind.FLOOD_MAX:
            if self.flood_sent[dst] is not None and msg.payload <= self.flood_sent[dst]:
                return
            self.flood_sent[dst] = msg.payload
            before = current_max_estimate(self.state[dst], self.H(dst, t), self.L(dst, t))
            if msg.payload > before:
                update_max_estimate(self.state[dst], self.H(dst, t), self.L(dst, t), (msg.payload,))
                self.mark(dst)
            for k in sorted(self.known[dst]):
                if k != src:
                    self._transmit(t, dst, k, ProtocolMessage(MsgKind.FLOOD_MAX, dst, k, 0, msg.payload, msg.flood_id))
        else:
            on_handshake(self.state[dst], msg)

    def _on_thresh(self, t: int, i: int, ver: int) -> None:
        if ver != self.ver_thresh[i]:
            return
        st = self.state[i]
        Li = self.L(i, t)
        s, _ = st.next_threshold()
        old_round = st.round
        try:
            _, msgs = on_threshold(st, s, Li)
        except ScheduleError as exc:
            raise InvariantViolation("round_schedule", t, self.names[i], str(exc)) from exc
        if st.round != old_round:
            self.round_starts[i].append((st.round, t))
        if st.round == 1 and s == st.s_max and self.t_inf_first[i] is None:
            self.t_inf_first[i] = t
        self._record_levels(i, t)
        if self.check:
            self._check_handshake(i, t)
        self._send(t, msgs)
        self._schedule_threshold(i, t)
        self.mark(i)

    def _on_flood(self, t: int) -> None:
        """Flood epoch: nodes that see no larger clock send their max estimate.

        The holder of the true maximum always qualifies. A node forwards a
        payload only if it beats everything it has sent before; anything it
        suppresses is dominated by a value its neighbors already received.
        """
        self.flood_epoch += 1
        for i in range(self.n):
            m = self._fold_max(i, t)
            if self.L(i, t) + FLOOD_TOL < m:
                continue
            if self.flood_sent[i] is not None and m <= self.flood_sent[i]:
                continue
            self.flood_sent[i] = m
            for k in sorted(self.known[i]):
                self._transmit(t, i, k, ProtocolMessage(MsgKind.FLOOD_MAX, i, k, 0, m, (self.flood_epoch,)))
        self.push(t + self.flood_period, P_FLOOD, "flood")

    def _on_hscheck(self, t: int, i: int) -> None:
        self._check_handshake(i, t)

    def _on_cross(self, t: int, i: int, ver: int) -> None:
        if ver != self.ver_cross[i]:
            return
        self.mark(i)

    def _on_noise(self, t: int) -> None:
        for i in range(self.n):
            self.mark(i)
        self.push(t + self.noise.period, P_NOISE, "noise")

    def _on_sample(self, t: int) -> None:
        self._sample(t)
        nxt = t + self.tick
        if nxt <= self.horizon:
            self.push(nxt, P_SAMPLE, "sample")

    # messaging ------------------------------------------------------------

    def _send(self, t: int, msgs) -> None:
        for msg in msgs:
            self._transmit(t, msg.sender, msg.dest, msg)

    def _transmit(self, t: int, src: int, dst: int, msg: ProtocolMessage) -> None:
        if dst not in self.known[src]:
            self.stats["dropped"] += 1
            return
        self.stats["messages"] += 1
        self.push(t + self.delay[(src, dst)], P_DELIVER, "deliver", msg, src, dst)

    # scheduling -----------------------------------------------------------

    def _schedule_threshold(self, i: int, t: int) -> None:
        self.ver_thresh[i] += 1
        st = self.state[i]
        _, target = st.next_threshold()
        gap = target - self.L(i, t)
        when = t if gap <= 0 else t + max(1, math.ceil(gap / self.rate(i) - 1e-3))
        self.push(when, P_THRESH, "thresh", i, self.ver_thresh[i])

    def _thresholds(self, i: int, j: int, level: int) -> list[int]:
        """Doubled estimate-difference values where a predicate on j can flip."""
        key = (i, j, level)
        cached = self.thr_cache.get(key)
        if cached is None:
            c = self.consts[(i, j)]
            vals = {2 * c.eps}
            for s in range(1, level + 1):
                vals.add(2 * (s * c.kappa - c.eps))
                vals.add(-2 * (s * c.kappa + c.eps + c.two_mu_tau))
                vals.add((2 * s + 1) * c.kappa + 2 * c.delta + 2 * c.eps)
                vals.add(-((2 * s + 1) * c.kappa - 2 * c.delta - 2 * c.eps))
            cached = sorted(vals)
            self.thr_cache[key] = cached
        return cached

    def _next_cross(self, i: int, t: int, m: float) -> tuple[int | None, int]:
        """Earliest predicate flip for node i if it ran at multiplier m from t."""
        Ri = self.hrate[i] * m
        Li = self.L(i, t)
        st = self.state[i]
        best, atom = None, -1
        widen = self.noise.mode is NoiseMode.WIDEN_SKEW
        for j in self.known[i]:
            slope = 2 * (self.rate(j) - Ri)
            if slope == 0:
                continue
            Lj = self.L(j, t)
            e = self.error(i, j, t, Li, Lj)
            d2 = 2 * (Lj + e - Li)
            ths = self._thresholds(i, j, st.level_of(j))
            if widen:
                ths = sorted({*ths, 2 * e})
            if slope > 0:
                k = bisect.bisect_right(ths, d2)
                target = ths[k] if k < len(ths) else None
                if k > 0 and ths[k - 1] + 1 > d2:
                    target = ths[k - 1] + 1 if target is None else min(target, ths[k - 1] + 1)
                if target is None:
                    continue
                dt = max(1, math.ceil((target - d2) / slope))
            else:
                k = bisect.bisect_left(ths, d2)
                target = ths[k - 1] if k > 0 else None
                if k < len(ths) and ths[k] - 1 < d2:
                    target = ths[k] - 1 if target is None else max(target, ths[k] - 1)
                if target is None:
                    continue
                dt = max(1, math.ceil((d2 - target) / -slope))
            if best is None or dt < best:
                best, atom = dt, j
        # the logical clock catching up with the self-grown max estimate
        # when a neighbor's lower bound is the binding part of M, its 2*eps
        # threshold above already covers the crossing
        grown = st.max_base + math.floor(self.floor * (self.H(i, t) - st.max_base_hw))
        lows = max((2 * (self.L(j, t) + self.error(i, j, t, Li, self.L(j, t)) - self.consts[(i, j)].eps)
                    for j in self.known[i]), default=None)
        if Li < grown and (lows is None or 2 * grown > lows):
            closing = Ri - self.floor * self.hrate[i]
            dt = max(1, math.ceil((grown - Li) / closing))
            if best is None or dt < best:
                best, atom = dt, -1
        return best, atom

    def _schedule_cross(self, i: int, t: int) -> None:
        self.ver_cross[i] += 1
        dt, _ = self._next_cross(i, t, self.mult[i])
        if dt is not None and t + dt <= self.horizon:
            self.push(t + dt, P_CROSS, "cross", i, self.ver_cross[i])

    # max estimate ---------------------------------------------------------

    def _fold_max(self, i: int, t: int) -> int:
        Li = self.L(i, t)
        est = self.estimates(i, t, Li)
        lows = [est[j] - self.consts[(i, j)].eps for j in est]
        return update_max_estimate(self.state[i], self.H(i, t), Li, (), lows)

    # multiplier choice ------------------------------------------------------

    def _choose(self, i: int, t: int, Li: int, est: dict, M: int) -> tuple[float, str]:
        st = self.state[i]
        consts = {j: self.consts[(i, j)] for j in est}
        try:
            return choose_multiplier(st, Li, M, est, consts)
        except MutualExclusionViolation as exc:
            self._violate("mutual_exclusion", t, i, str(exc))
            return 1.0, "slow"

    def _choose_at(self, i: int, t: int, m: float) -> tuple[float, str]:
        """Choice node i would face at future time t running at m meanwhile."""
        saved = (self.anchor_t[i], self.anchor_L[i], self.anchor_H[i], self.mult[i])
        self.anchor_L[i] = self.L(i, self.now)
        self.anchor_H[i] = self.H(i, self.now)
        self.anchor_t[i] = self.now
        self.mult[i] = m
        try:
            Li = self.L(i, t)
            est = self.estimates(i, t, Li)
            lows = max((est[j] - self.consts[(i, j)].eps for j in est), default=None)
            M = current_max_estimate(self.state[i], self.H(i, t), Li, lows)
            return self._choose(i, t, Li, est, M)
        finally:
            self.anchor_t[i], self.anchor_L[i], self.anchor_H[i], self.mult[i] = saved

    def reevaluate(self, i: int, t: int) -> None:
        self.stats["reevals"] += 1
        M = self._fold_max(i, t)
        Li = self.L(i, t)
        est = self.estimates(i, t, Li)
        m, why = self._choose(i, t, Li, est, M)
        if why == "catchup":
            m = self._pin(i, t, m)
        if m != self.mult[i]:
            self._reanchor(i, t, mult=m)
            self._schedule_threshold(i, t)
            for k in self.innb[i]:
                self.mark(k)
        self.reason[i] = why
        self._schedule_cross(i, t)

    def _pin(self, i: int, t: int, m: float) -> float:
        """Keep a catching-up node just outside an adjacent rate-1 region.

        Without this the node would enter the region, slow down, drop back
        out and speed up again at vanishing intervals. It instead tracks the
        neighbor that defines the boundary, which is allowed there because
        no rule constrains the multiplier outside the region.
        """
        for _ in range(3):
            dt, atom = self._next_cross(i, t, m)
            if dt is None or dt > PIN_WINDOW or atom < 0:
                return m
            _, why = self._choose_at(i, t + dt, m)
            if why not in ("slow", "max"):
                return m
            tracked = max(1.0, min(m, self.rate(atom) / self.hrate[i]))
            if tracked >= m:
                return m
            self.stats["pins"] += 1
            m = tracked
            if m == 1.0:
                return m
        return m

    # bookkeeping ------------------------------------------------------------

    def _record_levels(self, i: int, t: int) -> None:
        st = self.state[i]
        snap = (t, st.round, tuple(sorted(st.pending)), tuple(frozenset(x) for x in st.levels[1:st.s_max + 1]))
        hist = self.level_hist[i]
        if hist[-1][0] == t:
            hist[-1] = snap
        else:
            hist.append(snap)
        if self.check:
            prev = st.known
            for s, lvl in enumerate(st.levels[1:st.s_max + 1], start=1):
                if not lvl <= prev:
                    self._violate("level_monotonicity", t, i, f"N^{s} not within N^{s - 1}")
                prev = lvl

    def _violate(self, name: str, t: int, i: int, detail: str) -> None:
        self.invariants[name] += 1
        err = InvariantViolation(name, t, self.names[i], detail)
        if self.first_violation is None:
            self.first_violation = str(err)
        if self.assert_strict:
            raise err

    def _max_logical_at(self, t: int) -> int:
        return max(self._logical_hist(i, t) for i in range(self.n))

    def _logical_hist(self, i: int, t: int) -> int:
        ht = self.hist_t[i]
        k = bisect.bisect_right(ht, t) - 1
        return self.hist_L[i][k] + round(self.hist_R[i][k] * (t - ht[k]))

    def _sample(self, t: int) -> None:
        n = self.n
        Ls = [self.L(i, t) for i in range(n)]
        self.samples_t.append(t)
        maxL = max(Ls)
        past = None
        if self.check and self.D > 0 and t >= 2 * self.D:
            past = self._max_logical_at(t - int(2 * self.D))
        for i in range(n):
            st = self.state[i]
            est = self.estimates(i, t, Ls[i])
            lows = max((est[j] - self.consts[(i, j)].eps for j in est), default=None)
            M = current_max_estimate(st, self.H(i, t), Ls[i], lows)
            self.buf_H.append(self.H(i, t))
            self.buf_L.append(Ls[i])
            self.buf_M.append(M)
            self.buf_m.append(self.mult[i])
            self.buf_r.append(st.round)
            if self.check:
                self._check_node(i, t, Ls, est, M, maxL, past)
        if self.check and maxL - min(Ls) > self.skew_bound:
            self._violate("global_skew", t, int(np.argmin(Ls)),
                          f"skew {from_fixed(maxL - min(Ls)):.9f} > {from_fixed(int(self.skew_bound)):.9f}")

    def _check_node(self, i: int, t: int, Ls: list, est: dict, M: int, maxL: int, past: int | None) -> None:
        st = self.state[i]
        if M > maxL + ROUND_TOL:
            self._violate("max_upper", t, i, f"M={M} above max L={maxL}")
        if past is not None:
            if not M > past:
                self._violate("max_lower", t, i, f"M={M} not above max L(t-2D)={past}")
        if M < Ls[i]:
            self._violate("max_self", t, i, f"M={M} below L={Ls[i]}")
        for j, e in est.items():
            if M < e - self.consts[(i, j)].eps:
                self._violate("max_neighbor", t, i, f"M={M} below estimate of {self.names[j]} minus eps")
        consts = {j: self.consts[(i, j)] for j in est}
        fast = fast_mode_rule(st, Ls[i], est, consts)
        slow = slow_mode_rule(st, Ls[i], est, consts)
        if fast and slow:
            self._violate("mutual_exclusion", t, i, "fast and slow rules both hold")
        elif (fast and self.mult[i] != 1 + self.mu) or (slow and self.mult[i] != 1.0):
            self._violate("mode_rules", t, i, f"multiplier {self.mult[i]} against {'fast' if fast else 'slow'} rule")

    def _check_handshake(self, i: int, t: int) -> None:
        """j in N_i^s(t), s >= 2, requires i in N_j^s at t - tau once j's clock
        has passed the same level threshold of the same round."""
        st = self.state[i]
        for s in range(2, min(st.s_max + 1, len(st.levels))):
            r = st.round if s not in st.pending else st.round - 1
            for j in st.levels[s]:
                tp = t - self._tau(i, j)
                if tp < 0:
                    continue
                _, r_j, pend_j, lv_j = self._levels_at(j, tp)
                passed = r_j > r or (r_j == r and s not in pend_j)
                if passed and s <= len(lv_j) and i not in lv_j[s - 1]:
                    self._violate("handshake", t, i, f"{self.names[j]} in N^{s} but not reciprocated")

    def _tau(self, i: int, j: int) -> int:
        return self.tau[(i, j)]

    def _levels_at(self, i: int, t: int):
        hist = self.level_hist[i]
        k = bisect.bisect_right(hist, (t, math.inf)) - 1
        return hist[max(k, 0)]

    def _finish(self) -> Trace:
        n = self.n
        S = len(self.samples_t)
        shape = (S, n)
        anchors = [(list(self.hist_t[i]), list(self.hist_L[i]), list(self.hist_R[i])) for i in range(n)]
        edge_log = [(t, self.names[a], self.names[b], add) for t, a, b, add in self.edge_log]
        level_hist = [
            [(t, r, pend, tuple(frozenset(self.names[x] for x in lv) for lv in lvls)) for t, r, pend, lvls in h]
            for h in self.level_hist
        ]
        params = {
            "rho": self.rho, "mu": self.mu, "sigma": self.sigma, "G_hat": self.G_hat,
            "D": int(self.D), "flood_period": self.flood_period, "tick": self.tick,
            "horizon": self.horizon, "name": self.sc.name,
        }
        return Trace(
            names=list(self.names),
            params=params,
            sample_times=np.frombuffer(self.samples_t, dtype=np.int64).copy(),
            hardware=np.frombuffer(self.buf_H, dtype=np.int64).reshape(shape).copy(),
            logical=np.frombuffer(self.buf_L, dtype=np.int64).reshape(shape).copy(),
            multiplier=np.frombuffer(self.buf_m, dtype=np.float64).reshape(shape).copy(),
            max_estimate=np.frombuffer(self.buf_M, dtype=np.int64).reshape(shape).copy(),
            rounds=np.frombuffer(self.buf_r, dtype=np.int64).reshape(shape).copy(),
            edge_log=edge_log,
            level_hist=level_hist,
            anchors=anchors,
            round_starts=[list(x) for x in self.round_starts],
            t_inf_first=list(self.t_inf_first),
            invariants=dict(self.invariants),
            first_violation=self.first_violation,
            kappa={k: v for k, v in self.kappa_named.items()},
            stats=dict(self.stats),
        )


def run(scenario: Scenario, **kwargs) -> Trace:
    return Simulator(scenario, **kwargs).run()
