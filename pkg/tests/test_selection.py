import math

import numpy as np
import pytest

from ecodyn.models import ModelKind
from ecodyn.selection import (
    SUPPORT_THRESHOLD,
    Classification,
    bic,
    build_selection_report,
    classify,
    delta_bic,
    param_count,
    param_count_full,
)

K = ModelKind


class TestBic:
    def test_reference_value(self):
        # -2 * (-100) + 19 * ln(531)
        assert bic(-100.0, 19, 531) == pytest.approx(319.221, abs=1e-3)

    def test_single_datum_drops_penalty(self):
        assert bic(-3.5, 1, 1) == pytest.approx(7.0)

    def test_linear_in_parameter_count(self):
        base = bic(-50.0, 4, 200)
        assert bic(-50.0, 5, 200) - base == pytest.approx(math.log(200))

    def test_preconditions(self):
        with pytest.raises(ValueError):
            bic(-1.0, 0, 10)
        with pytest.raises(ValueError):
            bic(-1.0, 1, 0)


class TestDeltaBic:
    def test_ties_map_to_zero(self):
        out = delta_bic([319.2, 330.2, 319.2])
        assert out == pytest.approx([0.0, 11.0, 0.0])

    def test_single_model(self):
        assert delta_bic([42.0]) == pytest.approx([0.0])

    def test_shift_invariance(self):
        rng = np.random.default_rng(0)
        b = rng.uniform(100, 400, 5)
        assert delta_bic(b + 123.4) == pytest.approx(delta_bic(b))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            delta_bic([])


class TestParamCounts:
    def test_dynamical_counts(self):
        assert param_count(K.NULL, 9) == 18
        for kind in (K.ALPHA_POS, K.ALPHA_NEG, K.DELTA, K.MU):
            assert param_count(kind, 9) == 19

    def test_full_count_adds_initials_and_sigma(self):
        assert param_count_full(K.NULL, 9, 3) == 18 + 27 + 1


class TestClassify:
    def test_null_best_when_all_within_threshold(self):
        bics = {K.NULL: 100.0, K.ALPHA_POS: 115.0, K.DELTA: 122.0,
                K.ALPHA_NEG: 130.0, K.MU: 141.0}
        out = classify(bics)
        assert out[K.NULL] is Classification.BEST
        for kind in bics:
            if kind is not K.NULL:
                assert out[kind] is Classification.NO_SUPPORT

    def test_supported_against_null(self):
        # 12 below the null is support; with a rival alternative close by it
        # stays plain Supported, alone it upgrades to Best
        out = classify({K.NULL: 100.0, K.ALPHA_POS: 88.0, K.MU: 91.0})
        assert out[K.ALPHA_POS] is Classification.SUPPORTED
        out = classify({K.NULL: 100.0, K.ALPHA_POS: 88.0})
        assert out[K.ALPHA_POS] in (Classification.SUPPORTED, Classification.BEST)

    def test_ambiguous_pair_both_supported_no_best(self):
        out = classify({K.ALPHA_POS: 100.0, K.DELTA: 104.0, K.NULL: 120.0})
        assert out[K.ALPHA_POS] is Classification.SUPPORTED
        assert out[K.DELTA] is Classification.SUPPORTED
        assert out[K.NULL] is Classification.NO_SUPPORT
        assert Classification.BEST not in out.values()

    def test_alternative_best_needs_all_others_rejected(self):
        out = classify({K.NULL: 120.0, K.ALPHA_POS: 100.0, K.MU: 111.0})
        assert out[K.ALPHA_POS] is Classification.BEST
        assert out[K.MU] is Classification.NO_SUPPORT

    def test_exact_threshold_boundaries(self):
        # delta BIC of exactly 10 still accepts the null
        out = classify({K.NULL: 110.0, K.ALPHA_POS: 100.0})
        assert out[K.NULL] is Classification.BEST
        # pairwise difference of exactly -10 is not support (strict <)
        assert out[K.ALPHA_POS] is Classification.NO_SUPPORT
        # one hair past both boundaries flips both rules
        out = classify({K.NULL: 110.0 + 1e-9, K.ALPHA_POS: 100.0})
        assert out[K.NULL] is Classification.NO_SUPPORT
        assert out[K.ALPHA_POS] is Classification.BEST

    def test_requires_null_and_alternative(self):
        with pytest.raises(ValueError):
            classify({K.ALPHA_POS: 1.0, K.DELTA: 2.0})
        with pytest.raises(ValueError):
            classify({K.NULL: 1.0})


class TestSelectionReport:
    def lls(self):
        return {K.NULL: -120.0, K.ALPHA_POS: -100.0, K.ALPHA_NEG: -119.0,
                K.DELTA: -112.0, K.MU: -118.0}

    def test_report_shape_and_best(self):
        report = build_selection_report("AAA", self.lls(), 4, 40, 2)
        assert report.n_data == 160
        assert len(report.entries) == 5
        assert min(e.delta_bic for e in report.entries) == 0.0
        assert report.entry(K.ALPHA_POS).classification is Classification.BEST
        assert report.best_kind is K.ALPHA_POS

    def test_likelihood_rescaling_leaves_deltas_alone(self):
        # multiplying every likelihood by a constant shifts all log
        # likelihoods equally, so delta BIC and classes stay put
        shift = math.log(7.3)
        base = build_selection_report("AAA", self.lls(), 4, 40, 2)
        shifted = build_selection_report(
            "AAA", {k: v + shift for k, v in self.lls().items()}, 4, 40, 2
        )
        for e_base, e_shift in zip(base.entries, shifted.entries):
            assert e_shift.delta_bic == pytest.approx(e_base.delta_bic, abs=1e-9)
            assert e_shift.classification is e_base.classification

    def test_classification_order_independent(self):
        lls = self.lls()
        report = build_selection_report("AAA", lls, 4, 40, 2)
        reordered = dict(reversed(list(lls.items())))
        report2 = build_selection_report("AAA", reordered, 4, 40, 2)
        for kind in lls:
            assert (
                report.entry(kind).classification
                is report2.entry(kind).classification
            )

    def test_pairwise_delta_bounded_by_one_penalty_unit(self):
        # sub-models differ by at most one dynamical parameter, so delta BIC
        # differs from -2 dlnL by at most ln(n_data)
        report = build_selection_report("AAA", self.lls(), 4, 40, 2)
        penalty = math.log(report.n_data)
        for a in report.entries:
            for b in report.entries:
                gap = (a.bic - b.bic) + 2.0 * (a.log_likelihood - b.log_likelihood)
                assert abs(gap) <= penalty + 1e-9
