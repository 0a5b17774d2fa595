import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fairmarket.metrics import (METRIC_NAMES, BootstrapSummary, MetricRow, bootstrap,
                                comparison_table, compute_metrics, emit_tables, read_metric_csv,
                                read_summary_csv, session_exposure_gap)
from fairmarket.model import position_biases
from fairmarket.sim import SimConfig


def record(source, shown, source_utility=1.0, labels=None):
    v = position_biases(len(shown)).tolist()
    rec = {"source": source, "shown": list(shown), "pos_bias": v, "source_utility": source_utility}
    if labels is not None:
        counts = [sum(1 for j in shown if labels[j] == g) for g in (0, 1)]
        rec["candidate_group_counts"] = counts
    return rec


def random_log(rng, labels, n_sessions, m):
    n = len(labels)
    out = []
    for _ in range(n_sessions):
        s = int(rng.integers(n))
        others = np.delete(np.arange(n), s)
        out.append(record(s, rng.choice(others, m, replace=False).tolist(), float(rng.random())))
    return out


class TestExposureGap:
    def test_two_slot_example(self):
        row = compute_metrics([record(2, [0, 1])], [0, 1, 0])
        assert row.delta_dp == pytest.approx(1 - 1 / (1 + math.log(2)), abs=1e-12)
        assert row.delta_dp == pytest.approx(0.409384, abs=1e-6)

    def test_one_group_session_skipped(self):
        assert session_exposure_gap([0, 0], [1, 0.5]) is None
        row = compute_metrics([record(2, [0, 1])], [0, 0, 1])
        assert row.dp_sessions_skipped == 1 and "delta_dp" in row.undefined

    def test_candidate_normalization(self):
        assert session_exposure_gap([0, 1], [1.0, 0.5], (2, 1)) == pytest.approx(0.0)


class TestMetrics:
    def test_mirror_sessions(self):
        labels = [0, 0, 1, 1]
        log = [record(0, [1, 2]), record(2, [3, 0]), record(1, [2, 1]), record(3, [0, 3])]
        row = compute_metrics(log, labels)
        assert row.delta_dp == pytest.approx(0, abs=1e-15)
        assert row.ratio_ave_su_g0g1 == pytest.approx(0.5)
        assert row.pct_tot_du_g0 == pytest.approx(0.5)

    def test_group_never_queries(self):
        row = compute_metrics([record(0, [1, 2])], [0, 0, 1])
        assert "ave_su_g1" in row.undefined and math.isnan(row.ave_su_g1)
        assert math.isnan(row.ratio_ave_su_g0g1)

    def test_unknown_normalization(self):
        with pytest.raises(ValueError):
            compute_metrics([], [0, 1], exposure_normalization="slots")

    @given(st.integers(0, 2**31 - 1))
    def test_invariants(self, seed):
        rng = np.random.default_rng(seed)
        labels = rng.integers(0, 2, 30)
        labels[:2] = (0, 1)
        row = compute_metrics(random_log(rng, labels, 40, 4), labels)
        for k in ("ratio_ave_su_g0g1", "pct_tot_su_g0", "ratio_ave_du_g0g1", "pct_tot_du_g0"):
            x = getattr(row, k)
            assert math.isnan(x) or 0 <= x <= 1
        assert row.delta_abs_dp >= abs(row.delta_dp) - 1e-15
        assert row.n_sessions == 40

    def test_totals_against_direct_sums(self, rng):
        labels = rng.integers(0, 2, 25)
        log = random_log(rng, labels, 60, 5)
        row = compute_metrics(log, labels)
        du = np.zeros(25)
        for rec in log:
            for j, v in zip(rec["shown"], rec["pos_bias"]):
                du[j] += v
        assert row.pct_tot_du_g0 == pytest.approx(du[labels == 0].sum() / du.sum())
        seen = du > 0
        assert row.ave_du_g1 == pytest.approx(du[seen & (labels == 1)].mean())


def constant_row(x=0.5):
    return MetricRow(*([x] * len(METRIC_NAMES)))


class TestBootstrap:
    def test_constant_metric(self):
        s = BootstrapSummary.from_rows([constant_row()] * 5)
        assert all(h == 0 for h in s.half_width.values())
        assert all(m == 0.5 for m in s.mean.values())

    def test_half_width_formula(self):
        rows = [constant_row(x) for x in (0.1, 0.2, 0.6)]
        s = BootstrapSummary.from_rows(rows)
        assert s.half_width["delta_dp"] == pytest.approx(1.96 * np.std([0.1, 0.2, 0.6], ddof=1) / math.sqrt(3))

    def test_needs_two(self):
        with pytest.raises(ValueError):
            BootstrapSummary.from_rows([constant_row()])

    def test_small_run(self):
        cfg = SimConfig(n_members=100, n_iterations=10, d_eligible=30, m_slots=4)
        s = bootstrap(cfg, 3)
        assert s.n_replicates == 3 and len(s.rows) == 3
        assert s.rows[0] != s.rows[1]   # replicates use different graphs


class TestTables:
    def test_csv_round_trip(self, tmp_path, rng):
        labels = rng.integers(0, 2, 20)
        labels[:2] = (0, 1)
        row = compute_metrics(random_log(rng, labels, 30, 3), labels)
        settings = {"scenario": "x", "m": 3, "refresh": 50, "policy": "noReranker", "seed": 0, "replicate": 0}
        paths = emit_tables([(settings, row)], tmp_path, "rows")
        lines = open(paths["csv"]).read().splitlines()
        assert len(lines) == 2 and len(lines[0].split(",")) == 6 + 10
        (_, back), = read_metric_csv(paths["csv"])
        assert np.array_equal(back.values(), row.values())

    def test_summary_round_trip(self, tmp_path):
        s = BootstrapSummary.from_rows([constant_row(0.1), constant_row(0.3)])
        paths = emit_tables([({"policy": "primal", "m": 10, "refresh": 50}, s)], tmp_path, "summary")
        (_, back), = read_summary_csv(paths["csv"])
        assert back.mean == s.mean and back.half_width == s.half_width and back.n_replicates == 2

    def test_table_layout(self):
        entries = [({"m": 10, "refresh": 50, "policy": p}, constant_row())
                   for p in ("noReranker", "primal", "dualNoDynamic", "dualWithDynamic")]
        text = comparison_table(entries).splitlines()
        assert len(text) == 5 and text[1].startswith("m=10 refresh=50")

    def test_unwritable(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        with pytest.raises(OSError):
            emit_tables([({}, constant_row())], blocker / "sub")
