import numpy as np
import pytest

from peerimpact.errors import ConfigError
from peerimpact.raking import weighted_marginals
from peerimpact.records import select_one_report, write_records
from peerimpact.synth import (
    LENGTH_BIN_COUNTS,
    SynthSpec,
    default_length_histogram,
    default_margin_shares,
    generate,
    planted_truth,
    population_calibration_spec,
    sample_calibration_spec,
)


class TestGenerate:
    def test_deterministic_serialization(self, tmp_path):
        spec = SynthSpec(n=500, seed=123)
        write_records(generate(spec), tmp_path / "a.csv")
        write_records(generate(spec), tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_different_seeds_differ(self, tmp_path):
        a = generate(SynthSpec(n=300, seed=1))
        b = generate(SynthSpec(n=300, seed=2))
        assert a.records != b.records

    def test_zero_beta_zero_noise_constant_citations(self):
        rs = generate(SynthSpec(n=200, seed=5, beta={}, noise_sd=0.0))
        assert {r.citations for r in rs.records} == {0}

    def test_intercept_only_constant_citations(self):
        rs = generate(SynthSpec(n=200, seed=5, beta={"intercept": 1.5}, noise_sd=0.0))
        expected = int(np.rint(np.expm1(1.5)))
        assert {r.citations for r in rs.records} == {expected}

    def test_citations_always_nonnegative_integers(self):
        rs = generate(SynthSpec(n=1000, seed=6, noise_sd=2.5, beta={"intercept": 0.2}))
        for r in rs.records:
            assert isinstance(r.citations, int) and r.citations >= 0

    def test_record_count_and_multiplicity(self):
        spec = SynthSpec(n=3000, seed=7)
        rs = generate(spec)
        assert len(rs) == 3000
        distinct = len(set(rs.pub_ids()))
        assert distinct < 3000  # default multiplicities create multi-report pubs
        assert len(select_one_report(rs, seed=0)) == distinct

    def test_single_report_multiplicity(self):
        rs = generate(SynthSpec(n=400, seed=8, report_multiplicity={1: 1.0}))
        assert len(set(rs.pub_ids())) == 400

    def test_margin_convergence_at_scale(self):
        spec = SynthSpec(n=50_000, seed=9, report_multiplicity={1: 1.0})
        rs = generate(spec)
        ones = np.ones(len(rs))
        for variable, targets in default_margin_shares().items():
            if variable == "discipline":
                # Disciplines are sets; check the per-label membership margins.
                for label, share in targets.items():
                    observed = weighted_marginals(rs, ones, f"discipline:{label}")
                    assert abs(observed.get("yes", 0.0) - share) <= 0.01
                continue
            observed = weighted_marginals(rs, ones, variable)
            for cat, share in targets.items():
                assert abs(observed.get(cat, 0.0) - share) <= 0.01

    def test_unknown_margin_variable(self):
        with pytest.raises(ConfigError, match="unknown variable"):
            generate(SynthSpec(n=10, seed=0, margin_shares={"moon_phase": {"full": 1.0}}))

    def test_unknown_beta_name(self):
        with pytest.raises(ConfigError, match="beta names"):
            generate(SynthSpec(n=50, seed=0, beta={"length_class_99": 1.0}))

    def test_share_validation(self):
        with pytest.raises(ConfigError):
            SynthSpec(n=10, margin_shares={"open_access": {"yes": 0.7, "no": 0.7}})
        with pytest.raises(ConfigError):
            SynthSpec(n=10, report_multiplicity={1: 0.5, 2: 0.2})

    def test_impact_class_margins_respected(self):
        spec = SynthSpec(
            n=20_000, seed=10, report_multiplicity={1: 1.0},
            margin_shares={"impact_class": {"<0.8": 0.5, ">=2.2": 0.5}},
        )
        rs = generate(spec)
        shares = weighted_marginals(rs, np.ones(len(rs)), "impact_class")
        assert shares["<0.8"] == pytest.approx(0.5, abs=0.02)
        assert shares[">=2.2"] == pytest.approx(0.5, abs=0.02)

    def test_multi_discipline_rate(self):
        rs = generate(SynthSpec(n=4000, seed=11, multi_discipline_rate=0.5))
        frac_multi = np.mean([len(r.disciplines) > 1 for r in rs.records])
        assert 0.3 <= frac_multi <= 0.55


class TestPlantedTruth:
    def test_default_spec_echoes_beta(self):
        spec = SynthSpec(n=300, seed=12)
        truth = planted_truth(spec)
        assert truth["intercept"] == 1.5
        assert all(v == 0.0 for name, v in truth.items() if name != "intercept")

    def test_planted_classes_zero_elsewhere(self):
        spec = SynthSpec(
            n=400, seed=13,
            beta={"intercept": 2.0, "length_class_4": 0.5, "length_class_5": 0.5},
        )
        truth = planted_truth(spec)
        assert truth["length_class_4"] == 0.5
        assert truth["length_class_5"] == 0.5
        zero_terms = [name for name, v in truth.items()
                      if name not in ("intercept", "length_class_4", "length_class_5")]
        assert zero_terms and all(truth[name] == 0.0 for name in zero_terms)

    def test_truth_aligns_with_induced_columns(self):
        from peerimpact.design import ModelSpec, build_design
        from peerimpact.discretize import fisher_breaks

        spec = SynthSpec(n=500, seed=14, report_multiplicity={1: 1.0})
        rs = generate(spec)
        truth = planted_truth(spec)
        breaks = fisher_breaks(rs.report_lengths(), spec.k)
        dm = build_design(rs, ModelSpec(length_breaks=breaks), validate=False)
        assert tuple(truth.keys()) == dm.column_names


class TestDefaults:
    def test_length_histogram_normalized(self):
        hist = default_length_histogram()
        assert sum(s for _, _, s in hist) == pytest.approx(1.0, abs=1e-12)
        assert len(hist) == len(LENGTH_BIN_COUNTS)

    def test_margin_shares_normalized(self):
        for variable, shares in default_margin_shares().items():
            assert sum(shares.values()) == pytest.approx(1.0, abs=1e-12), variable

    def test_calibration_specs_cover_same_margins(self):
        pop = population_calibration_spec()
        sam = sample_calibration_spec()
        assert [m.variable for m in pop.margins] == [m.variable for m in sam.margins]
        assert pop.margins[0].variable == "pub_year"

    def test_year_range_restriction(self):
        spec = population_calibration_spec(year_range=(2010, 2020))
        years = spec.margins[0].shares
        assert set(years) == {str(y) for y in range(2010, 2021)}
        assert sum(years.values()) == pytest.approx(1.0, abs=1e-12)

    def test_spec_json_round_trip(self):
        spec = SynthSpec(
            n=123, seed=9, noise_sd=0.7, k=4,
            beta={"intercept": 1.0, "length_class_4": 0.3},
            report_multiplicity={1: 0.9, 2: 0.1},
        )
        again = SynthSpec.from_json(spec.to_json())
        assert again == spec
