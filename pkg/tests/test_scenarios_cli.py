import json

import pytest
from click.testing import CliRunner
from hypothesis import given, settings
from hypothesis import strategies as st

from gradsync import cli
from gradsync.core_time import to_fixed
from gradsync.dynamic_graph import dynamic_diameter, validate_symmetry
from gradsync.estimate_layer import edge_constants
from gradsync.metrics import summarize
from gradsync.scenario import InvalidScenario, Link, Probe, Scenario
from gradsync.scenarios import (
    SUITE,
    builtin,
    generate_appearing_chord,
    generate_random_churn,
    generate_static_line,
    settle_time,
)
from gradsync.sim_engine import InvariantViolation, run

from oracles import drift_integral

U = 10**9


def small_pair_json(tmp_path, horizon=60.0):
    sc = Scenario(
        name="pair",
        nodes=["a", "b"],
        links=[Link("a", "b", 1.0, 1.0, 0.1)],
        rho=0.01,
        mu=0.1,
        horizon_s=horizon,
        drift={"a": [[0.0, 1.01]], "b": [[0.0, 0.99]]},
        noise={"mode": "seeded_random", "seed": 4, "period_s": 8.0},
        sample_tick_s=0.5,
        probes=[Probe("a", "b")],
    )
    path = tmp_path / "pair.json"
    path.write_text(sc.to_json())
    return path


def test_static_line_examples():
    sc = generate_static_line(2)
    assert len(sc.nodes) == 3 and len(sc.links) == 2
    sc = generate_static_line(32)
    assert dynamic_diameter(sc.graph(), to_fixed(sc.horizon_s)) == 32 * U
    sc = generate_static_line(8)
    kappas = [edge_constants(lk.eps, lk.tau_up_s, sc.mu).kappa for lk in sc.links]
    assert kappas == [pytest.approx(4.4)] * 8
    probes = {(p.u, p.v) for p in sc.probes}
    assert ("v0", "v8") in probes and ("v3", "v4") in probes
    with pytest.raises(InvalidScenario):
        generate_static_line(1)


def test_chord_build_phase_skew_frozen():
    # drift-integral oracle on the generated schedule: 2 rho B with B = 11133.792
    sc = generate_appearing_chord(16)
    appear = sc.probes[0].appear_s
    oracle = drift_integral(sc.drift["v0"], appear) - drift_integral(sc.drift["v16"], appear)
    assert oracle == pytest.approx(1113.3792, abs=1e-6)
    t = to_fixed(appear)
    got = sc.hardware_schedule("v0").integrate(0, t) - sc.hardware_schedule("v16").integrate(0, t)
    assert got == to_fixed(1113.3792)


def test_chord_structure_and_guard():
    sc = generate_appearing_chord(8)
    chord = sc.links[-1]
    appear = sc.probes[0].appear_s
    assert (chord.u, chord.v, chord.intervals) == ("v0", "v8", [[appear, None]])
    assert appear > settle_time(sc)
    assert sc.noise["mode"] == "widen_skew"
    with pytest.raises(InvalidScenario):
        generate_appearing_chord(8, appear_time=10.0)


def test_chord_skew_at_appearance_is_endpoint_skew():
    sc = generate_appearing_chord(4)
    tr = run(sc)
    rep = summarize(tr, sc.probes)
    _, _, stab, _ = rep.probes[0]
    k = next(k for k, t in enumerate(tr.sample_times) if t >= to_fixed(sc.probes[0].appear_s))
    assert stab.skew_at_appearance == abs(int(tr.logical[k, 0] - tr.logical[k, -1]))
    assert not any(tr.invariants.values())


def test_churn_is_seeded_and_symmetric():
    a = generate_random_churn(12, seed=3)
    b = generate_random_churn(12, seed=3)
    assert a.to_json() == b.to_json()
    assert a.to_json() != generate_random_churn(12, seed=4).to_json()
    assert validate_symmetry(a.graph()) == []
    assert any(len(lk.intervals) > 1 or lk.intervals[0][1] is not None for lk in a.links)


def test_churn_without_rate_is_static():
    sc = generate_random_churn(10, edge_rate=0, seed=1)
    assert all(lk.intervals == [[0.0, None]] for lk in sc.links)
    with pytest.raises(InvalidScenario):
        generate_random_churn(10, connectivity_guard=False)


@pytest.mark.parametrize("name", [name for name, _ in SUITE])
def test_builtins_validate(name):
    sc = builtin(name)
    sc.validate()
    worst = max(lk.delay_s + lk.tau_up_s for lk in sc.links)
    assert sc.g_hat / ((1 + sc.mu) * sc.mu) >= worst


def test_validation_rejects_condition_one_breach():
    sc = generate_static_line(4)
    sc.G_hat = 0.05
    with pytest.raises(InvalidScenario):
        sc.validate()


@st.composite
def scenarios(draw):
    n = draw(st.integers(2, 5))
    nodes = [f"n{k}" for k in range(n)]
    links = []
    for k in range(1, n):
        a = draw(st.integers(0, k - 1))
        links.append(Link(
            nodes[a], nodes[k],
            draw(st.sampled_from([0.0, 0.25, 1.0])),
            draw(st.sampled_from([0.5, 1.0, 2.0])),
            draw(st.sampled_from([0.1, 0.5])),
            intervals=draw(st.sampled_from([[[0.0, None]], [[0.0, 3.5], [7.25, None]]])),
        ))
    return Scenario(
        name=draw(st.text("abcxyz-_", min_size=1, max_size=8)),
        nodes=nodes,
        links=links,
        rho=draw(st.sampled_from([0.01, 0.05])),
        mu=draw(st.sampled_from([0.5, 1.0])),
        horizon_s=draw(st.floats(1, 1e5, allow_nan=False)),
        drift={nodes[0]: [[0.0, 1.0], [draw(st.floats(0.5, 100)), 0.995]]},
        seed=draw(st.integers(0, 2**31)),
        probes=[Probe(nodes[0], nodes[-1], draw(st.floats(0, 10)))],
    )


@settings(max_examples=80)
@given(scenarios())
def test_scenario_json_round_trip(sc):
    text = sc.to_json()
    assert Scenario.from_json(text).to_json() == text


def test_generated_files_round_trip():
    runner = CliRunner()
    out = runner.invoke(cli.main, ["generate", "churn16"])
    assert out.exit_code == 0
    assert Scenario.from_json(out.output).to_json() == out.output


def test_cli_run_and_offline_report_agree(tmp_path):
    path = small_pair_json(tmp_path)
    runner = CliRunner()
    res = runner.invoke(cli.main, ["run", str(path), "--out", str(tmp_path / "out")])
    assert res.exit_code == 0, res.output
    online = res.output.rsplit("digest:", 1)[0]
    assert online == (tmp_path / "out" / "summary.txt").read_text()
    for f in ("trace.csv", "edges.csv", "levels.csv", "meta.json"):
        assert (tmp_path / "out" / f).exists()
    header = (tmp_path / "out" / "trace.csv").read_text().splitlines()[0]
    assert header == "time,node,hardware,logical,multiplier,max_estimate,round"
    rep = runner.invoke(cli.main, ["report", str(tmp_path / "out" / "trace.csv")])
    assert rep.exit_code == 0
    assert rep.output == online


def test_cli_run_overrides(tmp_path):
    path = small_pair_json(tmp_path)
    runner = CliRunner()
    res = runner.invoke(cli.main, ["run", str(path), "--horizon", "20", "--sample-tick", "2",
                                   "--seed", "9", "--no-summary", "--out", str(tmp_path / "o"), "--no-csv"])
    assert res.exit_code == 0
    assert res.output.startswith("digest:")
    assert not (tmp_path / "o" / "trace.csv").exists()
    assert "tick=2.000000000" in (tmp_path / "o" / "summary.txt").read_text()


def test_cli_exit_codes(tmp_path, monkeypatch):
    runner = CliRunner()
    assert runner.invoke(cli.main, ["run", str(tmp_path / "missing.json")]).exit_code == cli.EXIT_IO
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"name": "x", "bogus": 1}))
    assert runner.invoke(cli.main, ["run", str(bad)]).exit_code == cli.EXIT_INVALID
    bad.write_text("{not json")
    assert runner.invoke(cli.main, ["run", str(bad)]).exit_code == cli.EXIT_INVALID
    assert runner.invoke(cli.main, ["run", "builtin:nope"]).exit_code == cli.EXIT_INVALID

    def explode(*a, **k):
        raise InvariantViolation("global_skew", 5 * U, "a", "forced")

    monkeypatch.setattr(cli, "run_sim", explode)
    res = runner.invoke(cli.main, ["run", str(small_pair_json(tmp_path))])
    assert res.exit_code == cli.EXIT_INVARIANT
    assert "global_skew" in res.output


def test_cli_diameter(tmp_path):
    path = tmp_path / "line32.json"
    path.write_text(generate_static_line(32).to_json())
    res = CliRunner().invoke(cli.main, ["diameter", str(path)])
    assert res.exit_code == 0
    assert res.output.strip() == "32.000000000"
