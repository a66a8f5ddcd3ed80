import numpy as np
import pytest

from peerimpact.errors import ConfigError, DataError
from peerimpact.raking import (
    CalibrationSpec,
    MarginTarget,
    RakingCalibrator,
    WeightVector,
    rake,
    rake_labels,
    record_category,
    weighted_marginals,
)
from peerimpact.records import RecordSet

from conftest import make_record
from oracles import ipf_table


def balanced_recordset():
    """8 records with dyadic marginal shares on open_access and pub_year."""
    records = []
    i = 0
    for oa in (True, True, False, False):
        for year in (2010, 2011):
            i += 1
            records.append(make_record(pub_id=f"P{i}", open_access=oa, pub_year=year))
    return RecordSet(records=tuple(records))


def cell_recordset(counts):
    """Records laid out on a 2x2 grid of (open_access, pub_year) cells."""
    records = []
    i = 0
    for (oa, year), count in counts.items():
        for _ in range(count):
            i += 1
            records.append(make_record(pub_id=f"P{i}", open_access=oa, pub_year=year))
    return RecordSet(records=tuple(records))


class TestRake:
    def test_identity_calibration_exact_ones(self):
        rs = balanced_recordset()
        spec = CalibrationSpec(margins=(
            MarginTarget("open_access", {"yes": 0.5, "no": 0.5}),
            MarginTarget("pub_year", {"2010": 0.5, "2011": 0.5}),
        ))
        w = rake(rs, spec)
        assert w.converged
        assert w.iterations_used == 1
        assert np.all(w.weights == 1.0)

    def test_2x2_ipf_oracle(self):
        counts = {(True, 2010): 10, (True, 2011): 20, (False, 2010): 30, (False, 2011): 40}
        rs = cell_recordset(counts)
        spec = CalibrationSpec(
            margins=(
                MarginTarget("open_access", {"yes": 0.5, "no": 0.5}),
                MarginTarget("pub_year", {"2010": 0.5, "2011": 0.5}),
            ),
            tol=1e-12,
            max_iter=10_000,
        )
        w = rake(rs, spec)
        assert w.converged
        fitted = ipf_table(
            [[10, 20], [30, 40]], row_targets=[0.5, 0.5], col_targets=[0.5, 0.5], tol=1e-14
        )
        cell_weight = {
            (True, 2010): fitted[0, 0] / 10, (True, 2011): fitted[0, 1] / 20,
            (False, 2010): fitted[1, 0] / 30, (False, 2011): fitted[1, 1] / 40,
        }
        for record, weight in zip(rs.records, w.weights):
            expected = cell_weight[(record.open_access, record.pub_year)]
            assert weight == pytest.approx(expected, abs=1e-10)

    def test_structure_shift_hits_targets(self):
        # Raw OA share 40/60 raked to a 25/75 target, plus a funding margin.
        rng = np.random.default_rng(21)
        records = []
        for i in range(2000):
            records.append(make_record(
                pub_id=f"P{i}",
                open_access=bool(rng.random() < 0.40),
                n_funders=int(rng.choice([0, 1, 2], p=[0.3, 0.4, 0.3])),
            ))
        rs = RecordSet(records=tuple(records))
        spec = CalibrationSpec(margins=(
            MarginTarget("open_access", {"yes": 0.25, "no": 0.75}),
            MarginTarget("funding:0", {"yes": 0.45, "no": 0.55}),
        ))
        w = rake(rs, spec)
        assert w.converged
        oa = weighted_marginals(rs, w, "open_access")
        assert oa["yes"] == pytest.approx(0.25, abs=1e-8)
        f0 = weighted_marginals(rs, w, "funding:0")
        assert f0["yes"] == pytest.approx(0.45, abs=1e-8)

    def test_mean_weight_is_one(self):
        rs = cell_recordset({(True, 2010): 5, (False, 2010): 10, (False, 2011): 25})
        spec = CalibrationSpec(margins=(MarginTarget("open_access", {"yes": 0.4, "no": 0.6}),))
        w = rake(rs, spec)
        assert w.weights.mean() == pytest.approx(1.0, abs=1e-12)
        assert np.all(w.weights > 0)

    def test_empty_support_category_named(self):
        rs = cell_recordset({(True, 2010): 5, (False, 2010): 5})
        spec = CalibrationSpec(margins=(
            MarginTarget("pub_year", {"2010": 0.9, "2011": 0.1}),
        ))
        with pytest.raises(DataError, match=r"pub_year.*2011"):
            rake(rs, spec)

    def test_unknown_margin_variable(self):
        rs = balanced_recordset()
        spec = CalibrationSpec(margins=(MarginTarget("favorite_color", {"red": 1.0}),))
        with pytest.raises(ConfigError, match="favorite_color"):
            rake(rs, spec)

    def test_order_robustness(self):
        rng = np.random.default_rng(22)
        records = [
            make_record(pub_id=f"P{i}", open_access=bool(rng.integers(0, 2)),
                        pub_year=int(rng.choice([2010, 2011, 2012])))
            for i in range(300)
        ]
        rs = RecordSet(records=tuple(records))
        perm = rng.permutation(300)
        rs_perm = RecordSet(records=tuple(records[int(i)] for i in perm))
        spec = CalibrationSpec(margins=(
            MarginTarget("open_access", {"yes": 0.3, "no": 0.7}),
            MarginTarget("pub_year", {"2010": 0.5, "2011": 0.25, "2012": 0.25}),
        ))
        w = rake(rs, spec)
        w_perm = rake(rs_perm, spec)
        by_id = dict(zip(rs.pub_ids(), w.weights))
        by_id_perm = dict(zip(rs_perm.pub_ids(), w_perm.weights))
        for pid, weight in by_id.items():
            assert by_id_perm[pid] == pytest.approx(weight, rel=1e-12)

    def test_fixed_point_restart(self):
        counts = {(True, 2010): 12, (True, 2011): 28, (False, 2010): 35, (False, 2011): 25}
        rs = cell_recordset(counts)
        spec = CalibrationSpec(
            margins=(
                MarginTarget("open_access", {"yes": 0.45, "no": 0.55}),
                MarginTarget("pub_year", {"2010": 0.5, "2011": 0.5}),
            ),
            tol=1e-14,
            max_iter=10_000,
        )
        w1 = rake(rs, spec)
        assert w1.converged
        w2 = rake(rs, spec, initial=w1.weights)
        assert w2.iterations_used == 1
        np.testing.assert_allclose(w2.weights, w1.weights, rtol=5e-12)

    def test_convergence_certificate(self):
        rng = np.random.default_rng(23)
        records = [
            make_record(
                pub_id=f"P{i}",
                open_access=bool(rng.integers(0, 2)),
                pub_year=int(rng.choice([2010, 2011])),
                n_countries=int(rng.choice([1, 2, 3])),
            )
            for i in range(500)
        ]
        rs = RecordSet(records=tuple(records))
        spec = CalibrationSpec(
            margins=(
                MarginTarget("open_access", {"yes": 0.6, "no": 0.4}),
                MarginTarget("pub_year", {"2010": 0.3, "2011": 0.7}),
                MarginTarget("country_band", {"1": 0.5, "2": 0.3, "3": 0.2}),
            ),
            tol=1e-10,
        )
        w = rake(rs, spec)
        assert w.converged
        for margin in spec.margins:
            shares = weighted_marginals(rs, w, margin.variable)
            for cat, target in margin.shares.items():
                assert abs(shares.get(cat, 0.0) - target) <= spec.tol

    def test_zero_target_category_floored_and_noted(self):
        rs = cell_recordset({(True, 2010): 5, (False, 2010): 5, (False, 2011): 2})
        spec = CalibrationSpec(margins=(
            MarginTarget("pub_year", {"2010": 1.0, "2011": 0.0}),
        ))
        w = rake(rs, spec)
        assert np.all(w.weights > 0)
        assert any("floored" in note for note in w.notes)
        shares = weighted_marginals(rs, w, "pub_year")
        assert shares["2011"] < 1e-9

    def test_non_convergence_reported(self):
        # One sweep cannot reconcile two margins on a dependent sample.
        counts = {(True, 2010): 50, (False, 2011): 50, (False, 2010): 2, (True, 2011): 2}
        rs = cell_recordset(counts)
        spec = CalibrationSpec(
            margins=(
                MarginTarget("open_access", {"yes": 0.2, "no": 0.8}),
                MarginTarget("pub_year", {"2010": 0.8, "2011": 0.2}),
            ),
            tol=1e-12,
            max_iter=1,
        )
        w = rake(rs, spec)
        assert not w.converged
        assert w.final_deviation > 1e-12


class TestWeightedMarginals:
    def test_unit_weights_equal_raw_shares(self):
        rs = cell_recordset({(True, 2010): 3, (False, 2010): 9})
        shares = weighted_marginals(rs, np.ones(12), "open_access")
        assert shares == {"no": 0.75, "yes": 0.25}

    def test_singleton(self):
        rs = RecordSet(records=(make_record(pub_id="solo", open_access=True),))
        assert weighted_marginals(rs, np.ones(1), "open_access") == {"yes": 1.0}

    def test_sums_to_one(self):
        rng = np.random.default_rng(31)
        rs = cell_recordset({(True, 2010): 13, (True, 2011): 7, (False, 2010): 29})
        w = rng.uniform(0.1, 3.0, size=len(rs))
        shares = weighted_marginals(rs, w, "pub_year")
        assert sum(shares.values()) == pytest.approx(1.0, abs=1e-12)

    def test_unknown_variable(self):
        rs = balanced_recordset()
        with pytest.raises(ConfigError):
            weighted_marginals(rs, np.ones(len(rs)), "nope")

    def test_misaligned_weights(self):
        rs = balanced_recordset()
        with pytest.raises(DataError):
            weighted_marginals(rs, np.ones(3), "open_access")


class TestRecordCategory:
    def test_band_categorizers(self):
        r = make_record(n_funders=7, n_countries=2, journal_impact=1.5)
        assert record_category(r, "funding_band") == "4+"
        assert record_category(r, "country_band") == "2"
        assert record_category(r, "impact_class") == "[1.2,1.8)"
        assert record_category(r, "funding:4+") == "yes"
        assert record_category(r, "funding:0") == "no"

    def test_discipline_membership(self):
        r = make_record(disciplines=("LS7", "PE4"))
        assert record_category(r, "discipline:LS7") == "yes"
        assert record_category(r, "discipline:SH1") == "no"


class TestSpecValidation:
    def test_shares_must_sum_to_one(self):
        with pytest.raises(ConfigError):
            MarginTarget("open_access", {"yes": 0.6, "no": 0.6})

    def test_negative_share(self):
        with pytest.raises(ConfigError):
            MarginTarget("open_access", {"yes": 1.2, "no": -0.2})

    def test_tol_and_max_iter(self):
        margin = MarginTarget("open_access", {"yes": 0.5, "no": 0.5})
        with pytest.raises(ConfigError):
            CalibrationSpec(margins=(margin,), tol=0.0)
        with pytest.raises(ConfigError):
            CalibrationSpec(margins=(margin,), max_iter=0)

    def test_json_round_trip(self):
        spec = CalibrationSpec(
            margins=(
                MarginTarget("open_access", {"yes": 0.3, "no": 0.7}),
                MarginTarget("country_band", {"1": 0.8, "2": 0.2}),
            ),
            tol=1e-9,
            max_iter=250,
        )
        again = CalibrationSpec.from_json(spec.to_json())
        assert again == spec


class TestRakingCalibrator:
    def test_fit_on_label_matrix(self):
        X = np.array(
            [["yes", "2010"]] * 10 + [["yes", "2011"]] * 20 + [["no", "2010"]] * 30 + [["no", "2011"]] * 40,
            dtype=object,
        )
        margins = (
            MarginTarget("oa", {"yes": 0.5, "no": 0.5}),
            MarginTarget("year", {"2010": 0.5, "2011": 0.5}),
        )
        est = RakingCalibrator(margins=margins, tol=1e-12, max_iter=5000)
        est.fit(X)
        assert est.converged_
        assert est.weights_.shape == (100,)
        assert est.weights_.mean() == pytest.approx(1.0, abs=1e-12)
        fitted = ipf_table([[10, 20], [30, 40]], [0.5, 0.5], [0.5, 0.5], tol=1e-14)
        assert est.weights_[0] == pytest.approx(fitted[0, 0] / 10, abs=1e-10)

    def test_get_params(self):
        est = RakingCalibrator(margins=(), tol=1e-6, max_iter=10)
        params = est.get_params()
        assert params["tol"] == 1e-6 and params["max_iter"] == 10

    def test_column_count_mismatch(self):
        est = RakingCalibrator(margins=(MarginTarget("oa", {"yes": 0.5, "no": 0.5}),))
        with pytest.raises(ConfigError):
            est.fit(np.array([["yes", "2010"]], dtype=object))


class TestWeightVector:
    def test_positive_invariant(self):
        with pytest.raises(Exception):
            WeightVector(weights=np.array([1.0, 0.0]), iterations_used=1, converged=True, final_deviation=0.0)

    def test_csv_round_trip(self, tmp_path):
        from peerimpact.raking import load_weights_csv

        rs = balanced_recordset()
        w = WeightVector(weights=np.linspace(0.5, 2.0, len(rs)), iterations_used=3, converged=True, final_deviation=0.0)
        w.save_csv(rs, tmp_path / "w.csv")
        again = load_weights_csv(rs, tmp_path / "w.csv")
        np.testing.assert_array_equal(again.weights, w.weights)
