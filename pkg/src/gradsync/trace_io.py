"""CSV and JSON persistence of traces.

A run directory holds ``trace.csv`` (one row per node per sample),
``edges.csv`` (perceived directed edge changes), ``levels.csv`` (level-set
history) and ``meta.json`` (scenario, parameters and engine counters).
Everything the summary needs is in these files.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .core_time import fmt_fixed, parse_fixed
from .dynamic_graph import ukey
from .scenario import Scenario
from .sim_engine import Trace

TRACE_COLUMNS = ["time", "node", "hardware", "logical", "multiplier", "max_estimate", "round"]


def write_trace(trace: Trace, scenario: Scenario, out: Path) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    names = trace.names
    with open(out / "trace.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for k, t in enumerate(trace.sample_times):
            ts = fmt_fixed(int(t))
            for i, nm in enumerate(names):
                w.writerow([
                    ts, nm, fmt_fixed(int(trace.hardware[k, i])), fmt_fixed(int(trace.logical[k, i])),
                    repr(float(trace.multiplier[k, i])), fmt_fixed(int(trace.max_estimate[k, i])),
                    int(trace.rounds[k, i]),
                ])
    with open(out / "edges.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "u", "v", "present"])
        for t, u, v, add in trace.edge_log:
            w.writerow([fmt_fixed(t), u, v, int(add)])
    with open(out / "levels.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "node", "round", "pending", "level", "members"])
        for i, hist in enumerate(trace.level_hist):
            for t, r, pend, lv in hist:
                pend_s = " ".join(str(x) for x in pend)
                if not lv:
                    w.writerow([fmt_fixed(t), names[i], r, pend_s, 0, ""])
                for s, members in enumerate(lv, start=1):
                    w.writerow([fmt_fixed(t), names[i], r, pend_s, s, " ".join(sorted(members))])
    meta = {
        "scenario": scenario.to_dict(),
        "names": names,
        "params": trace.params,
        "kappa": sorted([sorted(k), v] for k, v in trace.kappa.items()),
        "invariants": trace.invariants,
        "first_violation": trace.first_violation,
        "t_inf_first": trace.t_inf_first,
        "round_starts": trace.round_starts,
        "stats": trace.stats,
        "digest": trace.digest(),
    }
    (out / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    return out / "trace.csv"


def read_trace(path: Path) -> tuple[Trace, Scenario]:
    """Rebuild a trace from ``trace.csv`` and its sibling files."""
    path = Path(path)
    base = path.parent if path.is_file() or path.suffix == ".csv" else path
    meta = json.loads((base / "meta.json").read_text())
    names = meta["names"]
    idx = {n: k for k, n in enumerate(names)}
    n = len(names)
    times, H, L, M, m, R = [], [], [], [], [], []
    with open(base / "trace.csv", newline="") as fh:
        rows = csv.reader(fh)
        header = next(rows)
        if header != TRACE_COLUMNS:
            raise ValueError(f"unexpected trace columns {header}")
        block = None
        for row in rows:
            t = parse_fixed(row[0])
            if block is None or block[0] != t:
                block = (t, [None] * n)
                times.append(t)
                for arr in (H, L, M, m, R):
                    arr.append([0] * n)
            k = idx[row[1]]
            H[-1][k] = parse_fixed(row[2])
            L[-1][k] = parse_fixed(row[3])
            m[-1][k] = float(row[4])
            M[-1][k] = parse_fixed(row[5])
            R[-1][k] = int(row[6])
    edge_log = []
    with open(base / "edges.csv", newline="") as fh:
        rows = csv.reader(fh)
        next(rows)
        for t, u, v, p in rows:
            edge_log.append((parse_fixed(t), u, v, bool(int(p))))
    level_hist: list = [[] for _ in range(n)]
    with open(base / "levels.csv", newline="") as fh:
        rows = csv.reader(fh)
        next(rows)
        for t, node, r, pend, s, members in rows:
            hist = level_hist[idx[node]]
            t = parse_fixed(t)
            pend_t = tuple(int(x) for x in pend.split())
            if not hist or hist[-1][0] != t:
                hist.append((t, int(r), pend_t, ()))
            if int(s) > 0:
                last = hist[-1]
                hist[-1] = (last[0], last[1], last[2], last[3] + (frozenset(members.split()),))
    shape = (len(times), n)
    trace = Trace(
        names=names,
        params=meta["params"],
        sample_times=np.array(times, dtype=np.int64),
        hardware=np.array(H, dtype=np.int64).reshape(shape),
        logical=np.array(L, dtype=np.int64).reshape(shape),
        multiplier=np.array(m, dtype=np.float64).reshape(shape),
        max_estimate=np.array(M, dtype=np.int64).reshape(shape),
        rounds=np.array(R, dtype=np.int64).reshape(shape),
        edge_log=edge_log,
        level_hist=level_hist,
        anchors=[],
        round_starts=[[tuple(x) for x in rs] for rs in meta["round_starts"]],
        t_inf_first=meta["t_inf_first"],
        invariants=meta["invariants"],
        first_violation=meta["first_violation"],
        kappa={ukey(*pair): v for pair, v in meta["kappa"]},
        stats=meta["stats"],
    )
    return trace, Scenario.from_dict(meta["scenario"])
