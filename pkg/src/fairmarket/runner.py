"""Experiment orchestration: shared-seed runs, log and table output, self-checks."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .config import ExperimentSpec
from .metrics import BootstrapSummary, compute_metrics, emit_tables, write_metric_csv
from .sim import run_simulation, write_session_log

FAILURE_FLAGS = ("infeasible_refresh", "primal_fallback")


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    rows: list = field(default_factory=list)          # (settings, MetricRow)
    summaries: list = field(default_factory=list)     # (settings, BootstrapSummary)
    flags: dict = field(default_factory=dict)         # policy -> summed simulator counters
    paths: dict = field(default_factory=dict)

    @property
    def failures(self) -> dict:
        return {p: {k: f[k] for k in FAILURE_FLAGS if f.get(k)} for p, f in self.flags.items()
                if any(f.get(k) for k in FAILURE_FLAGS)}


def _settings(spec: ExperimentSpec, policy: str, replicate: int) -> dict:
    return {"scenario": spec.scenario, "m": spec.sim.m_slots, "refresh": spec.sim.dual_refresh_epochs,
            "policy": policy, "seed": spec.sim.seed, "replicate": replicate}


def replicate_keys(spec: ExperimentSpec) -> list[int]:
    """Replicate 0 for a single run; 1..R for a bootstrap."""
    return [spec.sim.replicate] if spec.replicates == 1 else list(range(1, spec.replicates + 1))


def run_experiment(spec: ExperimentSpec, progress: Callable[[str], None] | None = None) -> ExperimentResult:
    """Run every method on the same seeds and write logs, CSVs and tables to ``spec.out_dir``.

    Each replicate key fixes the initial graph and the query sequence, so all
    methods face the same sources (shared-seed protocol).
    """
    spec.validate()
    out = spec.out_dir
    os.makedirs(out, exist_ok=True)
    result = ExperimentResult(spec)
    for policy in spec.methods:
        rows = []
        totals: dict = {}
        for rep in replicate_keys(spec):
            config = spec.sim.replace(policy=policy, replicate=rep)
            sim = run_simulation(config)
            row = compute_metrics(sim.records, sim.state.groups.labels)
            rows.append(row)
            result.rows.append((_settings(spec, policy, rep), row))
            for k, v in sim.state.flags.items():
                totals[k] = totals.get(k, 0) + v
            if spec.logs_enabled:
                log_dir = os.path.join(out, "logs")
                os.makedirs(log_dir, exist_ok=True)
                path = os.path.join(log_dir, f"{policy}_seed{config.seed}_rep{rep}.jsonl")
                write_session_log(sim.records, path)
                result.paths.setdefault("logs", []).append(path)
            if progress is not None:
                progress(f"{policy} replicate {rep} done")
        result.flags[policy] = totals
        if spec.replicates > 1:
            settings = _settings(spec, policy, rep)
            settings.pop("replicate")
            result.summaries.append((settings, BootstrapSummary.from_rows(rows)))

    metrics_csv = os.path.join(out, "metrics.csv")
    write_metric_csv(result.rows, metrics_csv)
    result.paths["metrics"] = metrics_csv
    if result.summaries:
        result.paths.update({f"summary_{k}": v for k, v in emit_tables(result.summaries, out, "summary").items()})
    else:
        result.paths.update({f"rows_{k}": v for k, v in emit_tables(result.rows, out, "comparison").items()})
        os.remove(result.paths.pop("rows_csv"))   # duplicate of metrics.csv
    manifest = {"simulation": asdict(spec.sim), "methods": list(spec.methods),
                "replicates": spec.replicates, "scenario": spec.scenario, "flags": result.flags}
    manifest_path = os.path.join(out, "run.json")
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    result.paths["manifest"] = manifest_path
    return result


# ---------------------------------------------------------------------------
# self-checks

def _suite_simplex(rng) -> str:
    from .scoring import project_rows

    worst = 0.0
    for m in (1, 2, 5, 10):
        X = rng.uniform(-2, 2, size=(300, m))
        Y, _ = project_rows(X)
        # the projection is never beaten by random feasible points
        for x, y in zip(X, Y):
            cand = rng.dirichlet(np.ones(m + 1), size=64)[:, :m]
            best = np.min(np.sum((cand - x) ** 2, axis=1))
            worst = max(worst, float(np.sum((y - x) ** 2) - best))
        if Y.min() < -1e-12 or Y.sum(axis=1).max() > 1 + 1e-12:
            raise AssertionError("projection left the simplex")
    if worst > 1e-12:
        raise AssertionError(f"projection beaten by a feasible point by {worst:.2e}")
    return "projection optimal against sampled feasible points"


def _suite_kkt(rng) -> str:
    from .constraints import GroupUtilitySnapshot, build_dp_vector, build_dynamic_constraint
    from .model import position_biases
    from .solver import Status, assemble, kkt_residuals, solve

    worst = 0.0
    for _ in range(40):
        M = int(rng.integers(2, 21))
        m = int(rng.integers(1, min(M, 6) + 1))
        u, v = rng.random(M), position_biases(m)
        labels = rng.integers(0, 2, M)
        labels[:2] = (0, 1)
        cs = [build_dp_vector(labels, 0, 1).with_tolerance(1.0),
              build_dynamic_constraint(labels, 0, 1, u, GroupUtilitySnapshot({0: 0.0, 1: 0.0}), 1.0, 1,
                                       tolerance=1.0)]
        problem = assemble(u, v, cs, gamma=0.05)
        sol = solve(problem)
        if sol.status is not Status.OPTIMAL:
            raise AssertionError(f"solver status {sol.status.value}")
        worst = max(worst, kkt_residuals(problem, sol).worst)
    if worst > 1e-6:
        raise AssertionError(f"KKT residual {worst:.2e}")
    return f"worst KKT residual {worst:.1e}"


def _suite_ledger(rng) -> str:
    from .ledger import UtilityLedger

    for _ in range(50):
        rho = float(rng.uniform(0.5, 1.0))
        times = np.sort(rng.uniform(0, 20, size=8))
        vals = rng.random(8)
        led = UtilityLedger(1, rho)
        for t, x in zip(times, vals):
            led.update_dest(0, float(x), float(t))
        T = float(times[-1] + 1.0)
        expect = float(np.sum(rho ** (T - times) * vals))
        if abs(led.dest_value(0, T) - expect) > 1e-9:
            raise AssertionError("discounted ledger sum disagrees with the closed form")
    return "closed-form discounted sums reproduced"


def _suite_determinism(spec: ExperimentSpec) -> str:
    import io

    cfg = spec.sim.replace(n_members=120, n_iterations=40, d_eligible=min(60, spec.sim.d_eligible),
                           m_slots=min(spec.sim.m_slots, 10), policy="dualNoDynamic")
    payloads = []
    for _ in range(2):
        buf = io.StringIO()
        for rec in run_simulation(cfg).records:
            buf.write(json.dumps(rec, sort_keys=True) + "\n")
        payloads.append(buf.getvalue())
    if payloads[0] != payloads[1]:
        raise AssertionError("two identical runs produced different logs")
    sources = {p: [r["source"] for r in run_simulation(cfg.replace(policy=p)).records]
               for p in ("noReranker", "dualNoDynamic")}
    if sources["noReranker"] != sources["dualNoDynamic"]:
        raise AssertionError("policies saw different query sources")
    return "byte-identical logs; shared query sources"


def verify(spec: ExperimentSpec, seed: int = 0) -> list[tuple[str, bool, str]]:
    """Run the self-check suites; returns ``(suite, passed, detail)`` per suite."""
    from .errors import ConfigError

    report = []
    try:
        spec.validate()
        report.append(("config", True, "configuration valid"))
    except ConfigError as exc:
        report.append(("config", False, str(exc)))
        return report
    rng = np.random.default_rng(seed)
    suites = [("simplex", lambda: _suite_simplex(rng)), ("kkt", lambda: _suite_kkt(rng)),
              ("ledger", lambda: _suite_ledger(rng)), ("determinism", lambda: _suite_determinism(spec))]
    for name, fn in suites:
        try:
            report.append((name, True, fn()))
        except Exception as exc:  # report, don't crash
            report.append((name, False, f"{type(exc).__name__}: {exc}"))
    return report

