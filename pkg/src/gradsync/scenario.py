"""Scenario description and its JSON file format.

Times are in seconds and clock values are dimensionless; both are given
as JSON numbers and converted to fixed point on load. Serialization is
canonical (sorted keys, fixed indentation), so a parse/serialize round
trip reproduces the file byte for byte.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields

from .core_time import ContractViolation, RateSchedule, to_fixed
from .dynamic_graph import DynamicGraph, EdgeAttrs, EdgeEvent, ukey
from .estimate_layer import NoiseMode, NoisePolicy, edge_constants
from .protocol_node import compute_sigma


class InvalidScenario(ValueError):
    pass


@dataclass
class Link:
    """Undirected estimate edge with its physical presence intervals.

    ``intervals`` holds [start_s, end_s] pairs; end ``None`` means the link
    persists. Detection offsets (seconds after the physical change) are
    given per endpoint as [u_side, v_side]; by default additions are seen
    at once and removals after the full tau_up_s.
    """

    u: str
    v: str
    eps: float
    delay_s: float
    tau_up_s: float
    intervals: list = field(default_factory=lambda: [[0.0, None]])
    detect_add_s: list | None = None
    detect_remove_s: list | None = None


@dataclass
class Probe:
    u: str
    v: str
    appear_s: float = 0.0


@dataclass
class Scenario:
    name: str
    nodes: list
    links: list
    rho: float
    mu: float
    horizon_s: float
    drift: dict = field(default_factory=dict)  # node -> [[start_s, rate], ...]
    noise: dict = field(default_factory=lambda: {"mode": "zero", "seed": 0, "period_s": 1.0})
    D_hat_s: float | None = None
    G_hat: float | None = None
    flood_period_s: float | None = None
    sample_tick_s: float | None = None
    kappa_slack: float = 0.0
    delta_fraction: float = 1.0
    delay_fraction: float = 1.0
    probes: list = field(default_factory=list)
    seed: int = 0

    # derived quantities -------------------------------------------------

    @property
    def max_delay(self) -> float:
        return max((lk.delay_s for lk in self.links), default=1.0)

    @property
    def d_hat(self) -> float:
        return self.D_hat_s if self.D_hat_s is not None else len(self.nodes) * self.max_delay

    @property
    def g_hat(self) -> float:
        return self.G_hat if self.G_hat is not None else 2 * (1 + self.rho) * self.d_hat

    @property
    def sigma(self) -> float:
        return compute_sigma(self.rho, self.mu)

    @property
    def sample_tick(self) -> float:
        return self.sample_tick_s if self.sample_tick_s is not None else min(1.0, self.d_hat / 100)

    def noise_policy(self) -> NoisePolicy:
        return NoisePolicy(
            NoiseMode(self.noise.get("mode", "zero")),
            int(self.noise.get("seed", 0)),
            to_fixed(float(self.noise.get("period_s", 1.0))),
        )

    def hardware_schedule(self, node: str) -> RateSchedule:
        pts = self.drift.get(node)
        if not pts:
            return RateSchedule.constant(1.0)
        return RateSchedule([to_fixed(t) for t, _ in pts], [float(r) for _, r in pts])

    def validate(self) -> None:
        names = set(self.nodes)
        if len(names) != len(self.nodes):
            raise InvalidScenario("duplicate node names")
        try:
            sigma = self.sigma
        except ContractViolation as exc:
            raise InvalidScenario(str(exc)) from exc
        if sigma <= 1:
            raise InvalidScenario("sigma must exceed 1")
        if self.horizon_s <= 0:
            raise InvalidScenario("horizon must be positive")
        if not 0 < self.delay_fraction <= 1:
            raise InvalidScenario("delay_fraction must lie in (0, 1]")
        seen = set()
        worst = 0.0
        for lk in self.links:
            if lk.u not in names or lk.v not in names or lk.u == lk.v:
                raise InvalidScenario(f"bad link endpoints {lk.u}-{lk.v}")
            key = ukey(lk.u, lk.v)
            if key in seen:
                raise InvalidScenario(f"duplicate link {lk.u}-{lk.v}")
            seen.add(key)
            try:
                edge_constants(lk.eps, lk.tau_up_s, self.mu, self.kappa_slack, self.delta_fraction)
                EdgeAttrs(lk.eps, lk.delay_s, lk.tau_up_s)
            except ContractViolation as exc:
                raise InvalidScenario(f"link {lk.u}-{lk.v}: {exc}") from exc
            for offs in (lk.detect_add_s, lk.detect_remove_s):
                if offs is not None and not all(0 <= x <= lk.tau_up_s for x in offs):
                    raise InvalidScenario(f"detection offsets of {lk.u}-{lk.v} exceed tau_up")
            worst = max(worst, lk.delay_s + lk.tau_up_s)
        if self.g_hat / ((1 + self.mu) * self.mu) < worst:
            raise InvalidScenario(
                f"G_hat/((1+mu)mu) = {self.g_hat / ((1 + self.mu) * self.mu):.6g} "
                f"is below max(delay + tau_up) = {worst:.6g}"
            )
        for node, pts in self.drift.items():
            if node not in names:
                raise InvalidScenario(f"drift for unknown node {node}")
            try:
                self.hardware_schedule(node).check_bounds(self.rho)
            except ContractViolation as exc:
                raise InvalidScenario(f"drift of {node}: {exc}") from exc
        try:
            self.noise_policy()
        except ValueError as exc:
            raise InvalidScenario(str(exc)) from exc
        for p in self.probes:
            if p.u not in names or p.v not in names or p.u == p.v:
                raise InvalidScenario(f"bad probe {p.u}-{p.v}")

    def graph(self) -> DynamicGraph:
        """Directed estimate graph as perceived by each endpoint."""
        events: list[EdgeEvent] = []
        attrs = {}
        for lk in self.links:
            attrs[ukey(lk.u, lk.v)] = EdgeAttrs(lk.eps, lk.delay_s, lk.tau_up_s)
            add = lk.detect_add_s or [0.0, 0.0]
            rem = lk.detect_remove_s or [lk.tau_up_s, lk.tau_up_s]
            for side, edge in enumerate(((lk.u, lk.v), (lk.v, lk.u))):
                spans = perceived_spans(lk.intervals, add[side], rem[side])
                for a, b in spans:
                    events.append(EdgeEvent(a, edge, True))
                    if b is not None:
                        events.append(EdgeEvent(b, edge, False))
        return DynamicGraph(list(self.nodes), events, attrs)

    # serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> Scenario:
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise InvalidScenario(f"unknown scenario fields: {sorted(extra)}")
        try:
            d = dict(d)
            d["links"] = [Link(**lk) for lk in d.get("links", [])]
            d["probes"] = [Probe(**p) for p in d.get("probes", [])]
            return cls(**d)
        except TypeError as exc:
            raise InvalidScenario(str(exc)) from exc

    @classmethod
    def from_json(cls, text: str) -> Scenario:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InvalidScenario(f"malformed JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise InvalidScenario("scenario must be a JSON object")
        return cls.from_dict(data)


def perceived_spans(intervals, add_off: float, rem_off: float) -> list[tuple[int, int | None]]:
    """Fixed-point presence spans seen by one endpoint.

    A gap shorter than the removal lag is seen as an immediate removal, so
    the endpoint still perceives every physical reappearance.
    """
    spans: list[tuple[int, int | None]] = []
    ivs = sorted(([float(a), None if b is None else float(b)] for a, b in intervals), key=lambda x: x[0])
    for k, (a, b) in enumerate(ivs):
        start = to_fixed(a + add_off)
        if b is None:
            spans.append((start, None))
            break
        nxt = ivs[k + 1][0] + add_off if k + 1 < len(ivs) else math.inf
        lag = rem_off if b + rem_off < nxt else 0.0
        end = to_fixed(b + lag)
        if end <= start:
            continue
        spans.append((start, end))
    return spans
