import json

import numpy as np
import pytest

from peerimpact.design import DesignMatrix
from peerimpact.diagnostics import (
    DiagnosticsReport,
    breusch_pagan,
    exclude_influential,
    influence,
    run_diagnostics,
    vif,
    write_plot_data,
)
from peerimpact.errors import ConfigError, DataError
from peerimpact.records import RecordSet
from peerimpact.regress import fit_wls

from conftest import make_record
from oracles import aux_regression_vif, loo_cooks_distance


def make_dm(X, y, weights=None, names=None, ids=None):
    X = np.asarray(X, dtype=float)
    names = names or tuple(["intercept"] + [f"x{j}" for j in range(1, X.shape[1])])
    ids = ids or tuple(f"r{i}" for i in range(X.shape[0]))
    return DesignMatrix(
        y=np.asarray(y, dtype=float), X=X, column_names=tuple(names),
        row_ids=tuple(ids), weights=weights,
    )


class TestVif:
    def test_orthogonal_predictors(self):
        n = 64
        t = np.arange(n)
        # Centered, mutually orthogonal columns.
        c1 = np.cos(2 * np.pi * t / n)
        c2 = np.sin(2 * np.pi * t / n)
        c3 = np.cos(4 * np.pi * t / n)
        X = np.column_stack([np.ones(n), c1, c2, c3])
        out = vif(make_dm(X, np.zeros(n)))
        for value in out.values():
            assert value == pytest.approx(1.0, abs=1e-10)

    def test_two_predictor_closed_form(self):
        # Exact sample correlation 0.9 by construction: VIF = 1/(1-0.81).
        rng = np.random.default_rng(80)
        n = 400
        a = rng.normal(size=n)
        a = (a - a.mean()) / a.std()
        b0 = rng.normal(size=n)
        b0 = b0 - b0.mean()
        b0 -= a * (a @ b0) / (a @ a)
        b0 /= b0.std()
        x2 = 0.9 * a + np.sqrt(1 - 0.81) * b0
        X = np.column_stack([np.ones(n), a, x2])
        out = vif(make_dm(X, np.zeros(n)))
        expected = 1.0 / (1.0 - 0.81)
        assert out["x1"] == pytest.approx(expected, abs=1e-6)
        assert out["x2"] == pytest.approx(expected, abs=1e-6)
        # Independent check: explicit auxiliary regressions.
        assert out["x1"] == pytest.approx(aux_regression_vif(X, 1), rel=1e-9)
        assert out["x2"] == pytest.approx(aux_regression_vif(X, 2), rel=1e-9)

    def test_matches_aux_regression_generaly(self):
        rng = np.random.default_rng(81)
        n = 120
        X = np.column_stack([np.ones(n), rng.normal(size=(n, 4))])
        X[:, 2] += 0.6 * X[:, 1]
        w = rng.uniform(0.5, 2.0, size=n)
        out = vif(make_dm(X, np.zeros(n), weights=w))
        for j, name in enumerate(["x1", "x2", "x3", "x4"], start=1):
            assert out[name] == pytest.approx(aux_regression_vif(X, j, w), rel=1e-9)

    def test_affine_rescaling_invariance(self):
        rng = np.random.default_rng(82)
        n = 90
        X = np.column_stack([np.ones(n), rng.normal(size=(n, 3))])
        X[:, 3] += 0.5 * X[:, 1]
        base = vif(make_dm(X, np.zeros(n)))
        X2 = X.copy()
        X2[:, 1] = 13.0 * X2[:, 1] - 4.0
        rescaled = vif(make_dm(X2, np.zeros(n)))
        for name in base:
            assert rescaled[name] == pytest.approx(base[name], rel=1e-9)

    def test_perfect_collinearity_inf_sentinel(self):
        rng = np.random.default_rng(83)
        n = 40
        x = rng.normal(size=n)
        X = np.column_stack([np.ones(n), x, 2.0 * x])
        out = vif(make_dm(X, np.zeros(n)))
        assert out["x1"] == float("inf")
        assert out["x2"] == float("inf")

    def test_intercept_excluded(self):
        rng = np.random.default_rng(84)
        X = np.column_stack([np.ones(30), rng.normal(size=(30, 2))])
        out = vif(make_dm(X, np.zeros(30)))
        assert "intercept" not in out


class TestInfluence:
    def test_symmetric_design_equal_hats(self):
        X = np.column_stack([np.ones(8), np.tile([-1.0, 1.0], 4)])
        y = np.arange(8, dtype=float)
        fr = fit_wls(make_dm(X, y))
        _, hat = influence(fr)
        np.testing.assert_allclose(hat, fr.p / 8.0, atol=1e-12)

    def test_loo_oracle(self):
        rng = np.random.default_rng(85)
        for _ in range(3):
            n, p = 300, 5
            X = np.column_stack([np.ones(n), rng.normal(size=(n, p - 1))])
            y = X @ rng.normal(size=p) + rng.normal(size=n)
            fr = fit_wls(make_dm(X, y))
            d, hat = influence(fr)
            np.testing.assert_allclose(d, loo_cooks_distance(X, y), atol=1e-8)
            assert hat.sum() == pytest.approx(p, abs=1e-8)

    def test_weighted_loo_oracle(self):
        rng = np.random.default_rng(86)
        n, p = 150, 4
        X = np.column_stack([np.ones(n), rng.normal(size=(n, p - 1))])
        y = X @ rng.normal(size=p) + rng.normal(size=n)
        w = rng.uniform(0.4, 2.5, size=n)
        fr = fit_wls(make_dm(X, y, weights=w))
        d, _ = influence(fr)
        np.testing.assert_allclose(d, loo_cooks_distance(X, y, w), atol=1e-8)

    def test_planted_outlier_dominates(self):
        rng = np.random.default_rng(87)
        n = 200
        x = rng.uniform(-1, 1, size=n)
        x[0] = 10.0  # far outside the cloud
        y = 1.0 + 2.0 * x + 0.1 * rng.normal(size=n)
        y[0] += 25.0  # gross response outlier at the leverage point
        fr = fit_wls(make_dm(np.column_stack([np.ones(n), x]), y))
        d, hat = influence(fr)
        assert d.argmax() == 0 and hat.argmax() == 0

    def test_cook_scale_invariance(self):
        rng = np.random.default_rng(88)
        n = 80
        X = np.column_stack([np.ones(n), rng.normal(size=(n, 2))])
        y = X @ np.array([1.0, 0.5, -0.5]) + rng.normal(size=n)
        d1, _ = influence(fit_wls(make_dm(X, y)))
        d2, _ = influence(fit_wls(make_dm(X, 250.0 * y)))
        np.testing.assert_allclose(d2, d1, rtol=1e-9)

    def test_perfect_fit_zero_distance(self):
        rng = np.random.default_rng(89)
        X = np.column_stack([np.ones(20), rng.normal(size=20)])
        y = X @ np.array([1.0, 2.0])
        d, _ = influence(fit_wls(make_dm(X, y)))
        np.testing.assert_array_equal(d, np.zeros(20))


class TestExcludeInfluential:
    def _records_and_fit(self, n=40, seed=90):
        rng = np.random.default_rng(seed)
        records = tuple(
            make_record(pub_id=f"P{i}", report_length=int(rng.integers(0, 2000)),
                        citations=int(rng.integers(0, 25)))
            for i in range(n)
        )
        rs = RecordSet(records=records)
        X = np.column_stack([np.ones(n), rng.normal(size=(n, 2))])
        y = X @ np.array([1.0, 0.4, -0.2]) + rng.normal(size=n)
        fr = fit_wls(make_dm(X, y, ids=rs.pub_ids()))
        return rs, fr

    def test_vacuous_thresholds(self):
        rs, fr = self._records_and_fit()
        kept, flagged = exclude_influential(rs, fr, float("inf"), float("inf"))
        assert flagged == [] and kept.records == rs.records

    def test_reasons(self):
        rs, fr = self._records_and_fit()
        d, hat = influence(fr)
        kept, flagged = exclude_influential(rs, fr, float(np.median(d)), float(np.median(hat)))
        reasons = dict(flagged)
        assert set(reasons.values()) <= {"cook", "hat", "both"}
        assert len(kept) + len(flagged) == len(rs)
        for rid, reason in flagged:
            i = rs.pub_ids().index(rid)
            if reason in ("cook", "both"):
                assert d[i] > np.median(d)
            if reason in ("hat", "both"):
                assert hat[i] > np.median(hat)

    def test_planted_outliers_recovered_exactly(self):
        rng = np.random.default_rng(91)
        n_clean, n_out = 2000, 5
        x = rng.uniform(-1, 1, size=(n_clean, 2))
        noise = rng.uniform(-0.5, 0.5, size=n_clean)
        X_clean = np.column_stack([np.ones(n_clean), x])
        beta = np.array([1.0, 0.8, -0.6])
        y_clean = X_clean @ beta + noise
        spots = np.array([[6.0, 6.0], [7.0, 5.0], [5.0, 7.0], [6.5, 6.5], [7.0, 7.0]])
        X_out = np.column_stack([np.ones(n_out), spots])
        y_out = X_out @ beta + 20.0
        X = np.vstack([X_clean, X_out])
        y = np.concatenate([y_clean, y_out])
        ids = tuple(f"C{i}" for i in range(n_clean)) + tuple(f"OUT{i}" for i in range(n_out))
        records = tuple(make_record(pub_id=pid) for pid in ids)
        fr = fit_wls(make_dm(X, y, ids=ids))
        kept, flagged = exclude_influential(RecordSet(records=records), fr, 0.02, 0.01)
        assert sorted(rid for rid, _ in flagged) == [f"OUT{i}" for i in range(n_out)]
        assert len(kept) == n_clean

    def test_excluding_everything_rejected(self):
        rs, fr = self._records_and_fit()
        with pytest.raises(DataError, match="every row"):
            exclude_influential(rs, fr, 1e-300, 1e-300)

    def test_bad_thresholds(self):
        rs, fr = self._records_and_fit()
        with pytest.raises(ConfigError):
            exclude_influential(rs, fr, -1.0, 0.01)


class TestBreuschPagan:
    def test_homoscedastic_not_rejected_strongly(self):
        rng = np.random.default_rng(92)
        n = 500
        X = np.column_stack([np.ones(n), rng.normal(size=(n, 3))])
        y = X @ np.array([1.0, 0.5, -0.5, 0.2]) + rng.normal(size=n)
        stat, p = breusch_pagan(fit_wls(make_dm(X, y)))
        assert stat >= 0.0
        assert p > 0.01

    def test_heteroscedastic_detected(self):
        # The predictor is positive so the noise variance is monotone in it;
        # with a symmetric predictor, variance ~ x^2 is orthogonal to x and
        # the auxiliary regression has no linear signal to find.
        rng = np.random.default_rng(93)
        n = 2000
        x1 = rng.uniform(0.5, 3.0, size=n)
        X = np.column_stack([np.ones(n), x1])
        y = 1.0 + 0.5 * x1 + x1 * rng.normal(size=n)
        stat, p = breusch_pagan(fit_wls(make_dm(X, y)))
        assert p < 1e-6

    def test_constant_residuals_degenerate(self):
        rng = np.random.default_rng(94)
        X = np.column_stack([np.ones(30), rng.normal(size=30)])
        y = X @ np.array([2.0, -1.0])
        stat, p = breusch_pagan(fit_wls(make_dm(X, y)))
        assert (stat, p) == (0.0, 1.0)

    def test_studentized_vs_classical_forms(self):
        rng = np.random.default_rng(95)
        n = 300
        X = np.column_stack([np.ones(n), rng.normal(size=(n, 2))])
        y = X @ np.array([1.0, 1.0, -1.0]) + (1 + 0.5 * np.abs(X[:, 1])) * rng.normal(size=n)
        fr = fit_wls(make_dm(X, y))
        stat_k, p_k = breusch_pagan(fr, studentized=True)
        stat_c, p_c = breusch_pagan(fr, studentized=False)
        assert stat_k != stat_c
        assert 0 <= p_k <= 1 and 0 <= p_c <= 1

    def test_koenker_is_n_r_squared(self):
        rng = np.random.default_rng(96)
        n = 150
        X = np.column_stack([np.ones(n), rng.normal(size=(n, 2))])
        y = X @ np.array([1.0, 0.3, 0.3]) + rng.normal(size=n)
        fr = fit_wls(make_dm(X, y))
        stat, _ = breusch_pagan(fr)
        u2 = fr.residuals**2
        beta, *_ = np.linalg.lstsq(X, u2, rcond=None)
        fitted = X @ beta
        r2 = ((fitted - u2.mean()) ** 2).sum() / ((u2 - u2.mean()) ** 2).sum()
        assert stat == pytest.approx(n * r2, rel=1e-12)


class TestReportAndPlots:
    def test_json_round_trip(self):
        rng = np.random.default_rng(97)
        n = 60
        X = np.column_stack([np.ones(n), rng.normal(size=(n, 2))])
        y = X @ np.array([1.0, 0.5, 0.5]) + rng.normal(size=n)
        report = run_diagnostics(fit_wls(make_dm(X, y)))
        again = DiagnosticsReport.from_json(report.to_json())
        assert again.vif == report.vif
        np.testing.assert_allclose(again.cooks_d, report.cooks_d)
        assert again.flagged_rows == report.flagged_rows
        assert again.thresholds == report.thresholds

    def test_invariants(self):
        rng = np.random.default_rng(98)
        n = 120
        X = np.column_stack([np.ones(n), rng.normal(size=(n, 3))])
        y = X @ rng.normal(size=4) + rng.normal(size=n)
        report = run_diagnostics(fit_wls(make_dm(X, y)))
        assert all(v >= 1.0 - 1e-9 for v in report.vif.values())
        assert np.all(report.cooks_d >= 0)
        assert np.all((report.hat >= 0) & (report.hat <= 1))
        assert 0 <= report.bp_pvalue <= 1

    def test_plot_data_files(self, tmp_path):
        rng = np.random.default_rng(99)
        n = 25
        X = np.column_stack([np.ones(n), rng.normal(size=n)])
        y = X @ np.array([1.0, 1.0]) + rng.normal(size=n)
        paths = write_plot_data(fit_wls(make_dm(X, y)), tmp_path)
        assert sorted(p.name for p in paths) == [
            "influence_scatter.csv", "residual_vs_fitted.csv", "scale_location.csv",
        ]
        header = (tmp_path / "influence_scatter.csv").read_text().splitlines()
        assert header[0] == "pub_id,hat,std_residual,cooks_d"
        assert len(header) == n + 1
