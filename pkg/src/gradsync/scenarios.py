"""Built-in scenario generators and the standard suite."""

from __future__ import annotations

import random

from .dynamic_graph import validate_symmetry
from .protocol_node import compute_smax, schedule_offsets
from .scenario import InvalidScenario, Link, Probe, Scenario


def line_names(n: int) -> list[str]:
    return [f"v{k}" for k in range(n + 1)]


def round_offsets(sc: Scenario) -> dict[int, float]:
    """Threshold offsets of one round for a scenario's parameters."""
    kappas = [4 * lk.eps + 8 * sc.mu * lk.tau_up_s + sc.kappa_slack for lk in sc.links]
    s_max = compute_smax(sc.g_hat, sc.sigma, kappas)
    return schedule_offsets(sc.g_hat, sc.rho, sc.mu, sc.sigma, s_max)


def settle_time(sc: Scenario) -> float:
    """Latest real time at which a node can reach the last level of round 1."""
    off = round_offsets(sc)
    return max(v for k, v in off.items() if k != 1) / (1 - sc.rho)


def round_length(sc: Scenario) -> float:
    """Real duration of one round at the slowest possible logical rate."""
    return round_offsets(sc)[1] / (1 - sc.rho)


def _split_drift(names: list[str], rho: float, until: float | None, period: float | None, horizon: float) -> dict:
    """Fast first half, slow second half; optionally swapped every ``period``."""
    half = len(names) // 2
    drift = {}
    for k, nm in enumerate(names):
        sign = 1 if k < half else -1
        pts = [[0.0, 1 + sign * rho]]
        if period:
            t = period
            while t < horizon:
                sign = -sign
                pts.append([t, 1 + sign * rho])
                t += period
        if until is not None:
            pts = [p for p in pts if p[0] < until] + [[until, 1.0]]
        drift[nm] = pts
    return drift


def generate_static_line(
    n: int,
    eps: float = 1.0,
    delay: float = 1.0,
    tau_up: float = 0.5,
    rho: float = 0.01,
    mu: float = 0.1,
    horizon: float | None = None,
    drift_period: float | None = None,
    sample_tick: float | None = None,
    noise: str = "seeded_random",
    seed: int = 0,
) -> Scenario:
    if n < 2:
        raise InvalidScenario("a line needs n >= 2")
    names = line_names(n)
    links = [Link(names[k], names[k + 1], eps, delay, tau_up) for k in range(n)]
    probes = [Probe(names[k], names[k + 1]) for k in range(n)] + [Probe(names[0], names[n])]
    sc = Scenario(
        name=f"line{n}",
        nodes=names,
        links=links,
        rho=rho,
        mu=mu,
        horizon_s=1.0,
        D_hat_s=n * delay,
        noise={"mode": noise, "seed": seed, "period_s": 8 * delay},
        probes=probes,
        seed=seed,
    )
    if horizon is None:
        horizon = 1.1 * settle_time(sc)
    sc.horizon_s = round(horizon, 3)
    period = drift_period if drift_period is not None else round(sc.g_hat / rho / 4, 3)
    sc.drift = _split_drift(names, rho, None, period, sc.horizon_s)
    sc.sample_tick_s = sample_tick if sample_tick is not None else round(max(sc.sample_tick, sc.horizon_s / 4000), 3)
    return sc


def generate_ring(
    n: int,
    eps: float = 1.0,
    delay: float = 1.0,
    tau_up: float = 0.5,
    rho: float = 0.01,
    mu: float = 0.1,
    horizon: float | None = None,
    sample_tick: float | None = None,
    seed: int = 0,
) -> Scenario:
    if n < 3:
        raise InvalidScenario("a ring needs n >= 3")
    names = [f"v{k}" for k in range(n)]
    links = [Link(names[k], names[(k + 1) % n], eps, delay, tau_up) for k in range(n)]
    sc = Scenario(
        name=f"ring{n}",
        nodes=names,
        links=links,
        rho=rho,
        mu=mu,
        horizon_s=1.0,
        D_hat_s=(n // 2) * delay,
        noise={"mode": "seeded_random", "seed": seed, "period_s": 8 * delay},
        probes=[Probe(lk.u, lk.v) for lk in links],
        seed=seed,
    )
    if horizon is None:
        horizon = 1.1 * settle_time(sc)
    sc.horizon_s = round(horizon, 3)
    sc.drift = _split_drift(names, rho, None, round(sc.g_hat / rho / 4, 3), sc.horizon_s)
    sc.sample_tick_s = sample_tick if sample_tick is not None else round(max(sc.sample_tick, sc.horizon_s / 4000), 3)
    return sc


def generate_appearing_chord(
    n: int,
    appear_time: float | None = None,
    adversary: str = "greedy",
    eps: float = 0.01,
    delay: float = 1.0,
    tau_up: float = 0.02,
    rho: float = 0.05,
    mu: float = 0.5,
    horizon: float | None = None,
    sample_tick: float | None = None,
) -> Scenario:
    """Line v0..vn whose end points get linked once skew has built up.

    The greedy adversary runs the v0 half fast and the vn half slow until
    the chord appears, and has every estimate err away from the observer.
    """
    if adversary != "greedy":
        raise InvalidScenario(f"unknown adversary {adversary!r}")
    if n < 2:
        raise InvalidScenario("a line needs n >= 2")
    names = line_names(n)
    links = [Link(names[k], names[k + 1], eps, delay, tau_up) for k in range(n)]
    sc = Scenario(
        name=f"chord{n}",
        nodes=names,
        links=links,
        rho=rho,
        mu=mu,
        horizon_s=1.0,
        D_hat_s=n * delay,
        noise={"mode": "widen_skew", "seed": 0, "period_s": 8 * delay},
    )
    warm = settle_time(sc)
    if appear_time is None:
        appear_time = round(1.05 * warm, 3)
    if appear_time <= warm:
        raise InvalidScenario(f"chord must appear after the warm-up of {warm:.3f}")
    # the chord closes the line into a ring; its flood diameter bounds both phases
    sc.links.append(Link(names[0], names[n], eps, delay, tau_up, intervals=[[appear_time, None]]))
    sc.probes = [Probe(names[0], names[n], appear_time)]
    if horizon is None:
        horizon = appear_time + 2.2 * round_length(sc)
    sc.horizon_s = round(horizon, 3)
    sc.drift = _split_drift(names, rho, appear_time, None, sc.horizon_s)
    sc.sample_tick_s = sample_tick if sample_tick is not None else round(max(sc.sample_tick, sc.horizon_s / 4000), 3)
    return sc


def generate_random_churn(
    n: int,
    edge_rate: float = 0.002,
    connectivity_guard: bool = True,
    seed: int = 0,
    extra_edges: int | None = None,
    eps: float = 1.0,
    delay: float = 1.0,
    tau_up: float = 0.5,
    rho: float = 0.01,
    mu: float = 0.1,
    horizon: float | None = None,
    sample_tick: float | None = None,
) -> Scenario:
    """Random spanning-tree backbone plus extra edges that come and go.

    Toggle times of each extra edge form a Poisson process of rate
    ``edge_rate``; gaps shorter than the detection lag are dropped so the
    endpoints can perceive every change. The backbone never changes, which
    keeps every flood within the tree diameter.
    """
    if n < 2:
        raise InvalidScenario("need at least two nodes")
    if not connectivity_guard:
        raise InvalidScenario("churn without a connectivity guard can leave floods unfinished")
    rng = random.Random(seed)
    names = [f"v{k}" for k in range(n)]
    tree = []
    for k in range(1, n):
        tree.append((names[rng.randrange(k)], names[k]))
    tree_keys = {frozenset(e) for e in tree}
    candidates = [(names[a], names[b]) for a in range(n) for b in range(a + 1, n)
                  if frozenset((names[a], names[b])) not in tree_keys]
    rng.shuffle(candidates)
    extra = candidates[: extra_edges if extra_edges is not None else n]
    links = [Link(u, v, eps, delay, tau_up) for u, v in tree]
    sc = Scenario(
        name=f"churn{n}",
        nodes=names,
        links=links,
        rho=rho,
        mu=mu,
        horizon_s=1.0,
        D_hat_s=_tree_depth_bound(tree, names) * delay,
        noise={"mode": "seeded_random", "seed": seed, "period_s": 8 * delay},
        seed=seed,
    )
    if horizon is None:
        horizon = 1.1 * settle_time(sc)
    sc.horizon_s = round(horizon, 3)
    min_gap = 2 * tau_up + delay
    for u, v in extra:
        intervals = []
        if edge_rate <= 0:
            intervals = [[0.0, None]]
        else:
            t, up = 0.0, rng.random() < 0.5
            start = 0.0 if up else None
            while True:
                t += rng.expovariate(edge_rate)
                if t >= sc.horizon_s:
                    break
                t = round(t, 3)
                if up:
                    if t - start >= min_gap:
                        intervals.append([start, t])
                        up = False
                else:
                    if not intervals or t - intervals[-1][1] >= min_gap:
                        start, up = t, True
            if up:
                intervals.append([start, None])
        if intervals:
            sc.links.append(Link(u, v, eps, delay, tau_up, intervals=intervals))
    sc.drift = _split_drift(names, rho, None, round(sc.g_hat / rho / 4, 3), sc.horizon_s)
    sc.sample_tick_s = sample_tick if sample_tick is not None else round(max(sc.sample_tick, sc.horizon_s / 4000), 3)
    problems = validate_symmetry(sc.graph())
    if problems:
        raise InvalidScenario(f"generated churn breaks symmetry: {problems[:3]}")
    return sc


def _tree_depth_bound(tree, names) -> int:
    """Hop diameter of the backbone tree."""
    adj = {nm: [] for nm in names}
    for u, v in tree:
        adj[u].append(v)
        adj[v].append(u)

    def far(src):
        dist = {src: 0}
        todo = [src]
        while todo:
            x = todo.pop()
            for y in adj[x]:
                if y not in dist:
                    dist[y] = dist[x] + 1
                    todo.append(y)
        end = max(dist, key=lambda k: (dist[k], k))
        return end, dist[end]

    end, _ = far(names[0])
    return max(1, far(end)[1])


SUITE = (
    ("line8", lambda: generate_static_line(8)),
    ("line16", lambda: generate_static_line(16)),
    ("line32", lambda: generate_static_line(32)),
    ("ring16", lambda: generate_ring(16)),
    ("churn16", lambda: generate_random_churn(16, seed=7)),
    ("chord8", lambda: generate_appearing_chord(8)),
    ("chord16", lambda: generate_appearing_chord(16)),
    ("chord32", lambda: generate_appearing_chord(32)),
)


def suite() -> list[Scenario]:
    return [make() for _, make in SUITE]


def builtin(name: str) -> Scenario:
    for key, make in SUITE:
        if key == name:
            return make()
    raise InvalidScenario(f"no built-in scenario named {name!r}")


def stable_gradient_bound(sc: Scenario, d: float) -> float:
    """(s+1) * C_s for the largest s with C_s >= d; inf if even C_1 < d."""
    from .metrics import gradient_sequence, profile_bound

    C = gradient_sequence(sc.g_hat, sc.sigma, min(4 * lk.eps + 8 * sc.mu * lk.tau_up_s for lk in sc.links))
    return profile_bound(C, d)


__all__ = [
    "SUITE",
    "builtin",
    "generate_appearing_chord",
    "generate_random_churn",
    "generate_ring",
    "generate_static_line",
    "round_length",
    "round_offsets",
    "settle_time",
    "stable_gradient_bound",
    "suite",
]
