"""Skew quantities and verdicts computed from recorded traces.

All clock values and distances are fixed-point integers. Backward
potentials carry a half-kappa term, so they are returned as Fractions.
"""

from __future__ import annotations

import bisect
import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .core_time import ContractViolation, fmt_fixed, from_fixed, to_fixed
from .dynamic_graph import shortest_kappa_paths, ukey


@dataclass(frozen=True)
class GradientSequence:
    values: tuple[int, ...]  # C_1, C_2, ...

    def __post_init__(self) -> None:
        if not self.values:
            raise ContractViolation("gradient sequence is empty")
        if any(v <= 0 for v in self.values):
            raise ContractViolation("gradient sequence must be positive")
        if any(b > a for a, b in zip(self.values, self.values[1:])):
            raise ContractViolation("gradient sequence must be non-increasing")

    def __len__(self) -> int:
        return len(self.values)

    def at(self, s: int) -> int:
        return self.values[s - 1]


def gradient_sequence(G_hat: float, sigma: float, min_kappa: float) -> GradientSequence:
    """C = (2G, 2G, 2G/sigma, 2G/sigma^2, ...) while C_s >= min_kappa."""
    if sigma <= 1 or G_hat <= 0 or min_kappa <= 0:
        raise ContractViolation("need sigma > 1, G_hat > 0 and min_kappa > 0")
    vals = [to_fixed(2 * G_hat)]
    s = 2
    while True:
        c = to_fixed(2 * G_hat / sigma ** (s - 2))
        if c < to_fixed(min_kappa):
            break
        vals.append(c)
        s += 1
    return GradientSequence(tuple(vals))


def profile_bound(C: GradientSequence, d: int) -> float:
    """(s+1) C_s for the largest s with C_s >= d; inf when C_1 < d."""
    s = 0
    while s < len(C) and C.values[s] >= d:
        s += 1
    if s == 0:
        return math.inf
    return (s + 1) * C.values[s - 1]


def global_skew(clocks: Iterable[int]) -> int:
    vals = list(clocks)
    return max(vals) - min(vals)


def compute_xi_psi(
    L: Mapping,
    edges: Iterable[frozenset],
    kappa: Mapping[frozenset, int],
    u,
    s: int,
    C_s: int,
) -> tuple[int, Fraction]:
    """Forward and backward potentials of u at level s.

    The best path to each endpoint is a kappa-shortest one, since both
    objectives fall as path weight grows. The trivial path contributes 0.
    """
    paths = shortest_kappa_paths(edges, kappa, u, C_s)
    xi, psi2 = 0, 0
    Lu = L[u]
    for v, (d, _) in paths.items():
        xi = max(xi, Lu - L[v] - s * d)
        psi2 = max(psi2, 2 * (L[v] - Lu) - (2 * s + 1) * d)
    return xi, Fraction(psi2, 2)


def all_pairs_kappa(nodes: list, edges: Iterable[frozenset], kappa: Mapping[frozenset, int]) -> np.ndarray:
    """Matrix of kappa-distances; -1 marks unreachable pairs."""
    edges = list(edges)
    idx = {n: k for k, n in enumerate(nodes)}
    out = np.full((len(nodes), len(nodes)), -1, dtype=np.int64)
    for u in nodes:
        for v, (d, _) in shortest_kappa_paths(edges, kappa, u, math.inf).items():
            out[idx[u], idx[v]] = d
    return out


def xi_psi_matrix(L: np.ndarray, dist: np.ndarray, s: int, C_s: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-node Xi and doubled Psi at level s from a distance matrix."""
    ok = (dist >= 0) & (dist <= C_s)
    diff = L[:, None] - L[None, :]  # L_u - L_v
    xi = np.where(ok, diff - s * dist, 0).max(axis=1)
    psi2 = np.where(ok, -2 * diff - (2 * s + 1) * dist, 0).max(axis=1)
    return np.maximum(xi, 0), np.maximum(psi2, 0)


@dataclass
class LegalityEntry:
    time: int
    node: object
    s: int
    xi: int
    psi: Fraction
    legal: bool


@dataclass
class LegalityReport:
    entries: list[LegalityEntry] = field(default_factory=list)
    checked: int = 0
    violations: int = 0
    first_violation: LegalityEntry | None = None
    # C_1 > 2 * global skew, reported rather than assumed
    sequence_valid: bool = True

    @property
    def legal(self) -> bool:
        return self.violations == 0

    def add(self, entry: LegalityEntry, keep: bool = True) -> None:
        self.checked += 1
        if keep:
            self.entries.append(entry)
        if not entry.legal:
            self.violations += 1
            if self.first_violation is None:
                self.first_violation = entry


def is_legal(xi: int, psi: Fraction, C_s: int) -> bool:
    return psi < Fraction(C_s, 2) and xi < C_s


def legality_check(
    L: Mapping,
    level_edges: Mapping[int, Iterable[frozenset]],
    kappa: Mapping[frozenset, int],
    C: GradientSequence,
    t: int = 0,
    report: LegalityReport | None = None,
) -> LegalityReport:
    """Legality of every node at every level of C at one instant.

    ``level_edges[s]`` is the edge set whose paths count at level s.
    """
    report = report or LegalityReport()
    if not C.at(1) > 2 * global_skew(L.values()):
        report.sequence_valid = False
    for s in range(1, len(C) + 1):
        edges = list(level_edges.get(s, ()))
        for u in sorted(L, key=repr):
            xi, psi = compute_xi_psi(L, edges, kappa, u, s, C.at(s))
            report.add(LegalityEntry(t, u, s, xi, psi, is_legal(xi, psi, C.at(s))))
    return report


def gradient_profile(L: Mapping, dist: Mapping[tuple, int], C: GradientSequence) -> list[tuple[int, int, float]]:
    """(d, |L_u - L_v|, bound) for every connected pair."""
    out = []
    for (u, v), d in sorted(dist.items(), key=lambda kv: (kv[1], repr(kv[0]))):
        out.append((d, abs(L[u] - L[v]), profile_bound(C, d)))
    return out


@dataclass
class Stabilization:
    time: float  # seconds after the appearance; inf when censored
    censored: bool
    skew_at_appearance: int
    bound: int


def stabilization_time(
    sample_times: np.ndarray,
    skew: np.ndarray,
    appear_time: int,
    bound: int,
    removed_after: bool = False,
) -> Stabilization:
    """First sample time after which the skew stays within ``bound``."""
    if removed_after:
        raise ContractViolation("the edge does not persist after it appears")
    k0 = int(np.searchsorted(sample_times, appear_time))
    if k0 >= len(sample_times):
        return Stabilization(math.inf, True, 0, bound)
    window = np.abs(skew[k0:])
    bad = np.nonzero(window > bound)[0]
    at_appear = int(window[0])
    if len(bad) == 0:
        return Stabilization(0.0, False, at_appear, bound)
    last = k0 + int(bad[-1])
    if last + 1 >= len(sample_times):
        return Stabilization(math.inf, True, at_appear, bound)
    return Stabilization(from_fixed(int(sample_times[last + 1]) - appear_time), False, at_appear, bound)


# trace-level evaluation ---------------------------------------------------


class EdgeReplay:
    """Perceived directed edge set, advanced monotonically through a log."""

    def __init__(self, edge_log: list):
        self.log = sorted(edge_log, key=lambda e: e[0])
        self.pos = 0
        self.present: set = set()

    def at(self, t: int) -> set:
        while self.pos < len(self.log) and self.log[self.pos][0] <= t:
            _, u, v, add = self.log[self.pos]
            if add:
                self.present.add((u, v))
            else:
                self.present.discard((u, v))
            self.pos += 1
        return self.present

    def undirected(self, t: int) -> frozenset:
        es = self.at(t)
        return frozenset(ukey(u, v) for (u, v) in es if (v, u) in es)


def levels_at(hist: list, t: int):
    k = bisect.bisect_right(hist, (t, math.inf)) - 1
    return hist[max(k, 0)]


def level_edge_sets(names: list, level_hist: list, t: int, depth: int) -> dict[int, frozenset]:
    """Symmetric level-s edges: v in N_u^s and u in N_v^s."""
    snaps = {names[i]: levels_at(level_hist[i], t)[3] for i in range(len(names))}
    out = {}
    for s in range(1, depth + 1):
        es = set()
        for u, lv in snaps.items():
            if s > len(lv):
                continue
            for v in lv[s - 1]:
                lw = snaps[v]
                if s <= len(lw) and u in lw[s - 1]:
                    es.add(ukey(u, v))
        out[s] = frozenset(es)
    return out


def settle_times(level_hist: list) -> list:
    """Per node, the first time its last level of round 1 was set."""
    out = []
    for hist in level_hist:
        t_set = None
        for t, r, pend, lv in hist:
            if r > 1 or (r == 1 and len(lv) not in pend):
                t_set = t
                break
        out.append(t_set)
    return out


@dataclass
class TraceLegality:
    report: LegalityReport
    readings_disagree: int
    samples: int


def trace_legality(trace, C: GradientSequence, start: int = 0, keep_entries: bool = False) -> TraceLegality:
    """Legality at every sample from ``start`` on, over level-s paths.

    Paths use the symmetric level sets. The perceived-edge reading is
    evaluated as well; samples where the two verdicts differ are counted.
    """
    names = trace.names
    replay = EdgeReplay(trace.edge_log)
    report = LegalityReport()
    cache: dict[frozenset, np.ndarray] = {}
    disagree = 0
    samples = 0
    for k, t in enumerate(trace.sample_times):
        t = int(t)
        e_now = replay.undirected(t)
        if t < start:
            continue
        samples += 1
        L = trace.logical[k].astype(np.int64)
        if not C.at(1) > 2 * int(L.max() - L.min()):
            report.sequence_valid = False
        lv = level_edge_sets(names, trace.level_hist, t, len(C))
        verdict_e = True
        verdict_n = True
        for s in range(1, len(C) + 1):
            for reading, es in (("levels", lv[s]), ("edges", e_now)):
                dist = cache.get(es)
                if dist is None:
                    dist = all_pairs_kappa(names, es, trace.kappa)
                    cache[es] = dist
                xi, psi2 = xi_psi_matrix(L, dist, s, C.at(s))
                c = C.at(s)
                bad = (xi >= c) | (psi2 >= c)
                if reading == "levels":
                    verdict_n &= not bad.any()
                    for u in range(len(names)):
                        report.add(
                            LegalityEntry(t, names[u], s, int(xi[u]), Fraction(int(psi2[u]), 2), not bool(bad[u])),
                            keep=keep_entries,
                        )
                else:
                    verdict_e &= not bad.any()
        if verdict_e != verdict_n:
            disagree += 1
    return TraceLegality(report, disagree, samples)


def profile_table(trace, C: GradientSequence, start: int = 0) -> list[tuple[int, int, float]]:
    """Max observed skew per kappa-distance over samples from ``start`` on."""
    names = trace.names
    replay = EdgeReplay(trace.edge_log)
    cache: dict[frozenset, np.ndarray] = {}
    best: dict[int, int] = {}
    for k, t in enumerate(trace.sample_times):
        t = int(t)
        es = replay.undirected(t)
        if t < start:
            continue
        dist = cache.get(es)
        if dist is None:
            dist = all_pairs_kappa(names, es, trace.kappa)
            cache[es] = dist
        L = trace.logical[k].astype(np.int64)
        skew = np.abs(L[:, None] - L[None, :])
        iu = np.triu_indices(len(names), 1)
        ds, sk = dist[iu], skew[iu]
        for d in np.unique(ds[ds > 0]):
            m = int(sk[ds == d].max())
            if m > best.get(int(d), -1):
                best[int(d)] = m
    return [(d, best[d], profile_bound(C, d)) for d in sorted(best)]


def log_growth_check(table: list[tuple[int, int, float]], kappa: int, diameter: int, factor: float = 2.0):
    """skew/d at kappa, 4 kappa, 16 kappa against log(D/d) growth.

    Returns (ok, rows) with rows (d, skew/d, log(D/d)). For each pair
    d1 < d2 the ratio of skew/d may exceed the ratio of log(D/d) by at
    most ``factor``.
    """
    by_d = dict((d, sk) for d, sk, _ in table)
    rows = []
    for mult in (1, 4, 16):
        d = mult * kappa
        if d not in by_d or d >= diameter:
            continue
        rows.append((d, by_d[d] / d, math.log(diameter / d)))
    ok = True
    for a in range(len(rows)):
        for b in range(a + 1, len(rows)):
            d1, r1, g1 = rows[a]
            d2, r2, g2 = rows[b]
            if r2 > 0 and r1 / r2 > factor * g1 / g2:
                ok = False
            if r2 == 0 and r1 > 0:
                ok = False
    return ok and len(rows) == 3, rows


# summary --------------------------------------------------------------------


@dataclass
class SummaryReport:
    name: str
    params: dict
    max_global_skew: int
    skew_bound: int
    profile: list
    profile_violations: int
    legality: LegalityReport
    legality_start: int | None
    probes: list  # (u, v, Stabilization | None, max skew)
    invariants: dict
    first_violation: str | None

    def render(self) -> str:
        p = self.params
        lines = [f"scenario: {self.name}"]
        lines.append(
            "parameters: rho={rho} mu={mu} sigma={sigma:.6f} G_hat={G} D={D} flood_period={fp} tick={tick}".format(
                rho=p["rho"], mu=p["mu"], sigma=p["sigma"], G=fmt_fixed(to_fixed(p["G_hat"])),
                D=fmt_fixed(p["D"]), fp=fmt_fixed(p["flood_period"]), tick=fmt_fixed(p["tick"]),
            )
        )
        ok = self.max_global_skew <= self.skew_bound
        lines.append(
            f"global skew: max {fmt_fixed(self.max_global_skew)} <= 2(1+rho)D = {fmt_fixed(self.skew_bound)}"
            f" [{'ok' if ok else 'VIOLATED'}]"
        )
        lines.append("gradient profile (d, max skew, bound (s+1)C_s):")
        for d, sk, b in self.profile:
            bs = "inf" if b == math.inf else fmt_fixed(int(b))
            lines.append(f"  {fmt_fixed(d)}  {fmt_fixed(sk)}  {bs}")
        lines.append(f"profile violations: {self.profile_violations}")
        lg = self.legality
        start = "n/a" if self.legality_start is None else fmt_fixed(self.legality_start)
        lines.append(
            f"legality from t={start} w.r.t. C=(2G, 2G, 2G/sigma, ...): checked {lg.checked},"
            f" violations {lg.violations}, sequence valid {lg.sequence_valid}"
        )
        if lg.first_violation is not None:
            e = lg.first_violation
            lines.append(f"  first illegal: t={fmt_fixed(e.time)} node={e.node} s={e.s} xi={e.xi} psi={e.psi}")
        for u, v, st, mx in self.probes:
            if st is None:
                lines.append(f"probe {u}-{v}: max skew {fmt_fixed(mx)}")
            else:
                tm = "censored" if st.censored else f"{st.time:.9f}"
                lines.append(
                    f"probe {u}-{v}: stabilization {tm} (bound 2x{fmt_fixed(st.bound // 2)},"
                    f" skew at appearance {fmt_fixed(st.skew_at_appearance)}, max skew {fmt_fixed(mx)})"
                )
        inv = ", ".join(f"{k}={v}" for k, v in sorted(self.invariants.items()))
        lines.append(f"invariant violations: {inv}")
        if self.first_violation:
            lines.append(f"first invariant violation: {self.first_violation}")
        return "\n".join(lines) + "\n"


def summarize(trace, probes=()) -> SummaryReport:
    """Summary computed from sampled data only, so it can be rebuilt offline."""
    p = trace.params
    L = trace.logical.astype(np.int64)
    gs = int((L.max(axis=1) - L.min(axis=1)).max()) if len(L) else 0
    bound = int(2 * (1 + p["rho"]) * p["D"])
    min_kappa = from_fixed(min(trace.kappa.values())) if trace.kappa else 1.0
    C = gradient_sequence(p["G_hat"], p["sigma"], min_kappa)
    settled = settle_times(trace.level_hist)
    start = None if any(x is None for x in settled) else max(settled)
    if start is not None:
        tl = trace_legality(trace, C, start)
        table = profile_table(trace, C, start)
        legality = tl.report
    else:
        table, legality = [], LegalityReport()
    violations = sum(1 for d, sk, b in table if not sk <= b)
    idx = {n: k for k, n in enumerate(trace.names)}
    out_probes = []
    for pr in probes:
        u, v, appear = pr.u, pr.v, to_fixed(pr.appear_s)
        removed = {ukey(a, b) for t, a, b, add in trace.edge_log if not add and t >= appear}
        sk = L[:, idx[u]] - L[:, idx[v]]
        mx = int(np.abs(sk).max()) if len(sk) else 0
        if appear > 0 and ukey(u, v) in trace.kappa:
            b = profile_bound(C, trace.kappa[ukey(u, v)])
            st = stabilization_time(trace.sample_times, sk, appear, int(2 * b),
                                    removed_after=ukey(u, v) in removed)
            out_probes.append((u, v, st, mx))
        else:
            out_probes.append((u, v, None, mx))
    return SummaryReport(
        name=p.get("name", ""),
        params=p,
        max_global_skew=gs,
        skew_bound=bound,
        profile=table,
        profile_violations=violations,
        legality=legality,
        legality_start=start,
        probes=out_probes,
        invariants=dict(trace.invariants),
        first_violation=trace.first_violation,
    )
