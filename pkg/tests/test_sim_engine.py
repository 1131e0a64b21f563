import numpy as np
import pytest

from gradsync.core_time import ContractViolation, from_fixed, to_fixed
from gradsync.scenario import InvalidScenario, Link, Scenario
from gradsync.sim_engine import InvariantViolation, Simulator, detection_lag, run

U = 10**9
RHO, MU = 0.01, 0.1


def pair(horizon=300.0, drift=None, noise="zero", tick=0.5, intervals=None, tau=0.1):
    return Scenario(
        name="pair",
        nodes=["a", "b"],
        links=[Link("a", "b", 1.0, 1.0, tau, intervals=intervals or [[0.0, None]])],
        rho=RHO,
        mu=MU,
        horizon_s=horizon,
        drift=drift or {},
        noise={"mode": noise, "seed": 1, "period_s": 8.0},
        sample_tick_s=tick,
    )


def test_single_node_runs_at_hardware_rate():
    sc = Scenario(name="one", nodes=["a"], links=[], rho=RHO, mu=MU, horizon_s=10.0)
    tr = run(sc)
    assert tr.sample_times[-1] == 10 * U
    assert tr.logical[-1, 0] == 10 * U
    assert set(tr.multiplier[:, 0]) == {1.0}
    assert not any(tr.invariants.values())


def test_identical_pair_has_no_skew():
    tr = run(pair())
    assert np.all(tr.logical[:, 0] == tr.logical[:, 1])
    assert not any(tr.invariants.values())


def test_drifting_pair_within_global_bound():
    drift = {"a": [[0.0, 1 + RHO]], "b": [[0.0, 1 - RHO]]}
    tr = run(pair(horizon=10_000.0, drift=drift, noise="seeded_random", tick=1.0))
    skew = np.abs(tr.logical[:, 0] - tr.logical[:, 1]).max()
    D = tr.params["D"]
    assert D == U
    assert skew <= 2 * (1 + RHO) * D
    assert not any(tr.invariants.values())


def test_detection_lag_examples():
    assert detection_lag(5 * U, 0, add=False) == (5 * U, 5 * U)
    assert detection_lag(5 * U, U, add=False) == (6 * U, 6 * U)
    assert detection_lag(5 * U, U, add=True) == (5 * U, 5 * U)
    assert detection_lag(5 * U, U, add=False, offsets=(to_fixed(0.2), to_fixed(0.9))) == (
        to_fixed(5.2),
        to_fixed(5.9),
    )
    with pytest.raises(ContractViolation):
        detection_lag(0, U, add=True, offsets=(0, 2 * U))


def test_adversarial_detection_offsets_replay():
    # the two endpoints learn about the removal at 5.2 and 5.9
    sc = pair(horizon=20.0, intervals=[[0.0, 5.0], [8.0, None]], tau=1.0)
    sc.links[0].detect_remove_s = [0.2, 0.9]
    tr = run(sc)
    removals = [(from_fixed(t), u, v) for t, u, v, add in tr.edge_log if not add]
    assert removals == [(5.2, "a", "b"), (5.9, "b", "a")]
    g = sc.graph()
    assert g.edges_at(to_fixed(5.5)) == {("b", "a")}
    assert g.edges_at(to_fixed(6)) == set()


def test_runs_are_deterministic():
    drift = {"a": [[0.0, 1 + RHO], [50.0, 1 - RHO]], "b": [[0.0, 1 - RHO]]}
    a = run(pair(drift=drift, noise="seeded_random"))
    b = run(pair(drift=drift, noise="seeded_random"))
    assert a.digest() == b.digest()
    assert a.edge_log == b.edge_log


def test_samples_lie_on_piecewise_linear_clock():
    drift = {"a": [[0.0, 1 + RHO], [40.0, 1 - RHO]], "b": [[0.0, 1 - RHO], [70.0, 1 + RHO]]}
    tr = run(pair(drift=drift, noise="seeded_random"))
    for i in range(2):
        times, values, rates = tr.anchors[i]
        for k in range(len(times) - 1):
            # continuity: each segment ends where the next begins
            end = values[k] + rates[k] * (times[k + 1] - times[k])
            assert abs(end - values[k + 1]) <= 2
            assert (1 - RHO) - 1e-12 <= rates[k] <= (1 + RHO) * (1 + MU) + 1e-12
            mid = (times[k] + times[k + 1]) // 2
            assert abs(tr.logical_at(i, mid) - (values[k] + rates[k] * (mid - times[k]))) <= 1
        for k, t in enumerate(tr.sample_times):
            assert abs(tr.logical_at(i, int(t)) - tr.logical[k, i]) <= 1


def test_late_edge_reaches_upper_levels_on_both_sides():
    sc = pair(horizon=3000.0, intervals=[[30.0, None]], tick=5.0)
    tr = run(sc)
    assert not any(tr.invariants.values())
    last = [tr.level_hist[i][-1] for i in range(2)]
    # after a full round both nodes hold each other at every level
    assert tr.rounds[-1].min() >= 2
    assert all(len(lv) >= 3 and lv[2] == frozenset({other}) for (_, _, _, lv), other in zip(last, "ba"))


def test_messages_on_absent_edges_are_dropped():
    # the link is gone well before any handshake or flood can arrive
    sc = pair(horizon=2000.0, intervals=[[0.0, 0.3], [1.8, None]], tau=0.1, tick=5.0)
    tr = run(sc)
    assert tr.stats["dropped"] > 0
    assert not any(tr.invariants.values())


def test_strict_mode_raises_structured_violation():
    sim = Simulator(pair(horizon=5.0), assert_strict=True)
    with pytest.raises(InvariantViolation) as info:
        sim._violate("max_self", 3 * U, 1, "probe")
    err = info.value
    assert (err.invariant, err.time, err.node) == ("max_self", 3 * U, "b")
    assert "max_self" in str(err)


def test_unbounded_diameter_rejected():
    sc = Scenario(name="split", nodes=["a", "b"], links=[], rho=RHO, mu=MU, horizon_s=10.0)
    with pytest.raises(InvalidScenario):
        run(sc)
