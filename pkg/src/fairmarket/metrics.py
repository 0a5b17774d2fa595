"""The ten simulation metrics, bootstrap aggregation and table output."""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

METRIC_NAMES = (
    "delta_dp", "delta_abs_dp",
    "ave_su_g0", "ave_su_g1", "ratio_ave_su_g0g1", "pct_tot_su_g0",
    "ave_du_g0", "ave_du_g1", "ratio_ave_du_g0g1", "pct_tot_du_g0",
)

# Column headers used in the CSV and text tables.
METRIC_HEADERS = (
    "DeltaDP", "DeltaAbsDP", "aveSUG0", "aveSUG1", "ratioAveSUG0G1", "percentTotSUInG0",
    "aveDUG0", "aveDUG1", "ratioAveDUG0G1", "percentTotDUInG0",
)

SETTING_COLUMNS = ("scenario", "m", "refresh", "policy", "seed", "replicate")


@dataclass(frozen=True)
class MetricRow:
    delta_dp: float
    delta_abs_dp: float
    ave_su_g0: float
    ave_su_g1: float
    ratio_ave_su_g0g1: float
    pct_tot_su_g0: float
    ave_du_g0: float
    ave_du_g1: float
    ratio_ave_du_g0g1: float
    pct_tot_du_g0: float
    n_sessions: int = 0
    dp_sessions_skipped: int = 0
    undefined: tuple = ()

    def values(self) -> np.ndarray:
        return np.array([getattr(self, k) for k in METRIC_NAMES], dtype=float)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in METRIC_NAMES}


def _ratio(a: float, b: float) -> float:
    return a / (a + b) if a + b > 0 else math.nan


def session_exposure_gap(shown_groups: Sequence[int], pos_bias: Sequence[float],
                         candidate_counts: Sequence[int] | None = None) -> float | None:
    """Average exposure of group 0 minus that of group 1 in one session.

    The average is over the shown members of each group, or over the
    session's candidates of each group when ``candidate_counts`` is given.
    Returns ``None`` when a group has nobody to average over.
    """
    g = np.asarray(shown_groups)
    v = np.asarray(pos_bias, dtype=float)
    if candidate_counts is None:
        n0, n1 = int(np.count_nonzero(g == 0)), int(np.count_nonzero(g == 1))
    else:
        n0, n1 = candidate_counts
    if n0 == 0 or n1 == 0:
        return None
    return float(v[g == 0].sum() / n0 - v[g == 1].sum() / n1)


def compute_metrics(records: Iterable[dict], labels: Sequence[int],
                    exposure_normalization: str = "shown") -> MetricRow:
    """Metrics of one simulation run from its session log.

    Source utility is summed per querying member and averaged over members
    of each group with at least one query; destination utility is the summed
    realized position bias, averaged over members shown at least once.
    """
    if exposure_normalization not in ("shown", "candidates"):
        raise ValueError(f"unknown exposure normalization {exposure_normalization!r}")
    labels = np.asarray(labels)
    n = labels.size
    su = np.zeros(n)
    queried = np.zeros(n, dtype=bool)
    du = np.zeros(n)
    shown_once = np.zeros(n, dtype=bool)
    gaps = []
    skipped = 0
    n_sessions = 0
    for rec in records:
        n_sessions += 1
        s = rec["source"]
        su[s] += rec["source_utility"]
        queried[s] = True
        shown = np.asarray(rec["shown"], dtype=int)
        v = np.asarray(rec["pos_bias"], dtype=float)
        np.add.at(du, shown, v)
        shown_once[shown] = True
        counts = rec.get("candidate_group_counts") if exposure_normalization == "candidates" else None
        gap = session_exposure_gap(labels[shown], v, counts)
        if gap is None:
            skipped += 1
        else:
            gaps.append(gap)

    undefined = []

    def group_mean(values, mask, g, name):
        sel = mask & (labels == g)
        if not sel.any():
            undefined.append(name)
            return math.nan
        return float(values[sel].mean())

    def group_share(values, mask, name):
        total = float(values[mask].sum())
        if total <= 0:
            undefined.append(name)
            return math.nan
        return float(values[mask & (labels == 0)].sum()) / total

    if gaps:
        delta_dp = float(np.mean(gaps))
        delta_abs = float(np.mean(np.abs(gaps)))
    else:
        delta_dp = delta_abs = math.nan
        undefined += ["delta_dp", "delta_abs_dp"]
    su0 = group_mean(su, queried, 0, "ave_su_g0")
    su1 = group_mean(su, queried, 1, "ave_su_g1")
    du0 = group_mean(du, shown_once, 0, "ave_du_g0")
    du1 = group_mean(du, shown_once, 1, "ave_du_g1")
    return MetricRow(
        delta_dp=delta_dp, delta_abs_dp=delta_abs,
        ave_su_g0=su0, ave_su_g1=su1, ratio_ave_su_g0g1=_ratio(su0, su1),
        pct_tot_su_g0=group_share(su, queried, "pct_tot_su_g0"),
        ave_du_g0=du0, ave_du_g1=du1, ratio_ave_du_g0g1=_ratio(du0, du1),
        pct_tot_du_g0=group_share(du, shown_once, "pct_tot_du_g0"),
        n_sessions=n_sessions, dp_sessions_skipped=skipped, undefined=tuple(undefined))


@dataclass(frozen=True)
class BootstrapSummary:
    """Per-metric mean and 95% half-width (normal approximation) over replicates."""

    mean: dict
    half_width: dict
    n_replicates: int
    rows: tuple = field(default=(), repr=False)

    @classmethod
    def from_rows(cls, rows: Sequence[MetricRow]) -> BootstrapSummary:
        if len(rows) < 2:
            raise ValueError("a bootstrap summary needs at least 2 replicates")
        values = np.array([r.values() for r in rows])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)   # all-NaN columns stay NaN
            mean = np.nanmean(values, axis=0)
        n_ok = np.sum(~np.isnan(values), axis=0)
        sd = np.array([np.nanstd(col, ddof=1) if k > 1 else math.nan
                       for col, k in zip(values.T, n_ok)])
        hw = 1.96 * sd / np.sqrt(np.maximum(n_ok, 1))
        return cls(dict(zip(METRIC_NAMES, mean.tolist())), dict(zip(METRIC_NAMES, hw.tolist())),
                   len(rows), tuple(rows))


def run_metrics(config) -> MetricRow:
    """Simulate one replicate of ``config`` and compute its metrics."""
    from .sim import run_simulation

    result = run_simulation(config)
    return compute_metrics(result.records, result.state.groups.labels)


def bootstrap(config, R: int, progress=None) -> BootstrapSummary:
    """``R`` replicates of ``config`` (replicate keys 1..R under its base seed)."""
    if R < 2:
        raise ValueError("bootstrap needs R >= 2")
    rows = []
    for r in range(1, R + 1):
        rows.append(run_metrics(config.replace(replicate=r)))
        if progress is not None:
            progress(r)
    return BootstrapSummary.from_rows(rows)


# ---------------------------------------------------------------------------
# table output

def _fmt(x) -> str:
    return repr(float(x))


def write_metric_csv(entries: Iterable[tuple[dict, MetricRow]], path) -> None:
    """One CSV line per ``(settings, row)``; floats are written losslessly."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SETTING_COLUMNS + METRIC_HEADERS)
        for settings, row in entries:
            w.writerow([settings.get(c, "") for c in SETTING_COLUMNS] +
                       [_fmt(x) for x in row.values()])


def read_metric_csv(path) -> list[tuple[dict, MetricRow]]:
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            settings = {c: rec[c] for c in SETTING_COLUMNS}
            out.append((settings, MetricRow(**{k: float(rec[h])
                                               for k, h in zip(METRIC_NAMES, METRIC_HEADERS)})))
    return out


def write_summary_csv(entries: Iterable[tuple[dict, BootstrapSummary]], path) -> None:
    """Bootstrap summaries: each metric column is followed by its half-width."""
    cols = [c for c in SETTING_COLUMNS if c != "replicate"] + ["replicates"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols + [x for h in METRIC_HEADERS for x in (h, h + "_hw")])
        for settings, s in entries:
            line = [settings.get(c, "") for c in cols[:-1]] + [s.n_replicates]
            for k in METRIC_NAMES:
                line += [_fmt(s.mean[k]), _fmt(s.half_width[k])]
            w.writerow(line)


def read_summary_csv(path) -> list[tuple[dict, BootstrapSummary]]:
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            settings = {c: rec[c] for c in SETTING_COLUMNS if c in rec}
            mean = {k: float(rec[h]) for k, h in zip(METRIC_NAMES, METRIC_HEADERS)}
            hw = {k: float(rec[h + "_hw"]) for k, h in zip(METRIC_NAMES, METRIC_HEADERS)}
            out.append((settings, BootstrapSummary(mean, hw, int(rec["replicates"]))))
    return out


COMPARISON_COLUMNS = ("delta_dp", "delta_abs_dp", "ratio_ave_su_g0g1", "pct_tot_du_g0")


def comparison_table(entries: Iterable[tuple[dict, MetricRow | BootstrapSummary]]) -> str:
    """Plain-text table: one block per (m, refresh) setting, one line per policy."""
    headers = [METRIC_HEADERS[METRIC_NAMES.index(k)] for k in COMPARISON_COLUMNS]
    lines = [f"{'setting':<18}{'policy':<18}" + "".join(f"{h:>18}" for h in headers)]
    last = None
    for settings, item in entries:
        setting = f"m={settings.get('m', '?')} refresh={settings.get('refresh', '?')}"
        if setting != last and last is not None:
            lines.append("")
        label = setting if setting != last else ""
        last = setting
        if isinstance(item, BootstrapSummary):
            cells = [f"{item.mean[k]:.4f}±{item.half_width[k]:.1e}" for k in COMPARISON_COLUMNS]
        else:
            cells = [f"{getattr(item, k):.4f}" for k in COMPARISON_COLUMNS]
        lines.append(f"{label:<18}{settings.get('policy', ''):<18}" + "".join(f"{c:>18}" for c in cells))
    return "\n".join(lines) + "\n"


def emit_tables(entries, out_dir, stem: str = "metrics") -> dict:
    """Write the CSV (rows or bootstrap summaries) and the comparison table.

    Returns the paths written, keyed by ``"csv"`` and ``"table"``.
    """
    import os

    entries = list(entries)
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"{stem}.csv")
    table_path = os.path.join(out_dir, f"{stem}_table.txt")
    if entries and isinstance(entries[0][1], BootstrapSummary):
        write_summary_csv(entries, csv_path)
    else:
        write_metric_csv(entries, csv_path)
    with open(table_path, "w") as fh:
        fh.write(comparison_table(entries))
    return {"csv": csv_path, "table": table_path}
