"""Attribution methods against hand-worked examples and brute-force oracles."""

import itertools
import math

import numpy as np
import pytest

from pixattr import (
    AttributionMethod,
    PredictionRecord,
    SampleOrigin,
    SampleSet,
    SegmentMaskStack,
    SmoothingConfig,
    attribute,
    attribute_ciu,
    attribute_pda,
    attribute_rise,
    fit_kernel_shap,
    fit_lime,
    grid_segment,
    indicator_masks,
    project_per_pixel,
    sample_all_but_one,
    sample_entropic,
    sample_only_one,
    shap_kernel_weight,
)

# Full factorial over 2 segments with exactly additive outputs:
# perturbing segment 0 costs 0.6, segment 1 costs 0.3, base 1.0.
FACTORIAL_2 = SampleSet(
    4, 2, np.array([[0, 0], [1, 0], [0, 1], [1, 1]], dtype=np.uint8),
    SampleOrigin.RANDOM, seed=0,
)
FACTORIAL_2_OUTPUTS = [1.0, 0.4, 0.7, 0.1]


def exhaustive_outputs(n: int, game) -> tuple[SampleSet, list[float]]:
    """All 2^n samples plus outputs from a coalition game over present segments."""
    samples = sample_entropic(n, 2 ** n)
    outputs = [game(frozenset(np.flatnonzero(row == 0))) for row in samples.indicators]
    return samples, outputs


def brute_force_shapley(n: int, game) -> np.ndarray:
    values = np.zeros(n)
    players = list(range(n))
    for s in players:
        others = [p for p in players if p != s]
        for size in range(n):
            for coalition in itertools.combinations(others, size):
                x = frozenset(coalition)
                weight = (math.factorial(size) * math.factorial(n - size - 1)
                          / math.factorial(n))
                values[s] += weight * (game(x | {s}) - game(x))
    return values


class TestPda:
    def test_factorial_example(self):
        w = attribute_pda(FACTORIAL_2, FACTORIAL_2_OUTPUTS, 1.0)
        np.testing.assert_allclose(w, [0.75, 0.6])

    def test_only_one_single_element_averages(self):
        w = attribute_pda(sample_only_one(3), [1.0, 0.4, 0.7, 0.9], 1.0)
        np.testing.assert_allclose(w, [0.6, 0.3, 0.1])

    def test_constant_model_is_all_zero(self):
        w = attribute_pda(sample_only_one(3), [0.5] * 4, 0.5)
        np.testing.assert_array_equal(w, np.zeros(3))

    def test_never_perturbed_segment_is_named(self):
        rows = np.array([[0, 0], [1, 0]], dtype=np.uint8)
        ss = SampleSet(2, 2, rows, SampleOrigin.RANDOM, seed=0)
        with pytest.raises(ValueError, match="segment 1 is never perturbed"):
            attribute_pda(ss, [1.0, 0.4], 1.0)

    def test_accepts_prediction_records_in_any_order(self):
        records = [PredictionRecord(i, y) for i, y in enumerate(FACTORIAL_2_OUTPUTS)]
        shuffled = [records[2], records[0], records[3], records[1]]
        np.testing.assert_allclose(attribute_pda(FACTORIAL_2, shuffled, 1.0), [0.75, 0.6])


class TestRise:
    def test_factorial_example(self):
        np.testing.assert_allclose(
            attribute_rise(FACTORIAL_2, FACTORIAL_2_OUTPUTS), [0.85, 0.70])

    def test_all_but_one_includes_reference_row(self):
        w = attribute_rise(sample_all_but_one(3), [1.0, 0.4, 0.7, 0.9])
        np.testing.assert_allclose(w, [0.7, 0.85, 0.95])

    def test_constant_output_is_uniform(self):
        w = attribute_rise(sample_only_one(4), [0.3] * 5)
        np.testing.assert_allclose(w, 0.3)

    def test_always_perturbed_segment_is_named(self):
        rows = np.array([[1, 1], [1, 0]], dtype=np.uint8)
        ss = SampleSet(2, 2, rows, SampleOrigin.RANDOM, seed=0)
        with pytest.raises(ValueError, match="segment 0 is always perturbed"):
            attribute_rise(ss, [0.1, 0.4])


class TestCiu:
    def test_only_one_worked_example(self):
        w = attribute_ciu(sample_only_one(2), [1.0, 0.4, 0.7], 1.0, "only_one")
        np.testing.assert_allclose(w, [0.5, 0.0], atol=1e-12)

    def test_all_but_one_worked_example(self):
        # Y=0.9, kept outputs (0.2, 0.4, 0.6), range 0.7; worked by hand:
        # CI2 = (k_s - 0.1)/0.7, CU = (5/7, 1, 1), w = (3/98, 3/14, 5/14)
        w = attribute_ciu(sample_all_but_one(3), [0.9, 0.2, 0.4, 0.6], 0.9, "all_but_one")
        np.testing.assert_allclose(w, [3 / 98, 3 / 14, 5 / 14], atol=1e-12)

    def test_degenerate_constant_outputs(self):
        with pytest.warns(UserWarning, match="degenerate: constant outputs"):
            w = attribute_ciu(sample_only_one(3), [0.5] * 4, 0.5, "only_one")
        np.testing.assert_array_equal(w, np.zeros(3))

    def test_zero_utility_boundary(self):
        # segment 2's perturbed outputs bottom out exactly at Y, so CU = 0
        # and its influence is -CI/2
        w = attribute_ciu(sample_all_but_one(3), [0.5, 0.5, 0.7, 0.9], 0.5, "all_but_one")
        assert w[2] == pytest.approx(-0.5)
        assert w[2] <= 0

    def test_mode_must_match_origin(self):
        with pytest.raises(ValueError, match="does not match"):
            attribute_ciu(sample_only_one(2), [1.0, 0.4, 0.7], 1.0, "all_but_one")

    def test_mode_must_be_deterministic_sampler(self):
        rows = np.array([[0, 0], [1, 1]], dtype=np.uint8)
        ss = SampleSet(2, 2, rows, SampleOrigin.RANDOM, seed=0)
        with pytest.raises(ValueError, match="only_one or all_but_one"):
            attribute_ciu(ss, [1.0, 0.1], 1.0, "random")


class TestLime:
    def test_factorial_closed_form(self):
        fit = fit_lime(FACTORIAL_2, FACTORIAL_2_OUTPUTS)
        assert fit.bias == pytest.approx(0.1, abs=1e-10)
        np.testing.assert_allclose(fit.weights, [0.6, 0.3], atol=1e-10)
        assert fit.residual_norm == pytest.approx(0.0, abs=1e-10)
        assert not fit.rank_deficient

    def test_duplicated_rows_do_not_change_the_fit(self):
        rows = np.vstack([FACTORIAL_2.indicators, FACTORIAL_2.indicators])
        doubled = SampleSet(8, 2, rows, SampleOrigin.RANDOM, seed=0)
        fit = fit_lime(doubled, FACTORIAL_2_OUTPUTS * 2)
        np.testing.assert_allclose(fit.weights, [0.6, 0.3], atol=1e-10)

    def test_underdetermined_sets_the_flag(self):
        rows = np.array([[0, 0, 0], [1, 1, 0]], dtype=np.uint8)
        ss = SampleSet(2, 3, rows, SampleOrigin.RANDOM, seed=0)
        fit = fit_lime(ss, [1.0, 0.2])
        assert fit.rank_deficient
        assert np.isfinite(fit.weights).all()

    def test_needs_two_samples(self):
        ss = SampleSet(1, 2, np.zeros((1, 2), dtype=np.uint8), SampleOrigin.RANDOM, seed=0)
        with pytest.raises(ValueError, match="at least 2"):
            fit_lime(ss, [1.0])


class TestKernelShap:
    def test_kernel_weight_example(self):
        assert shap_kernel_weight(4, 2) == pytest.approx(0.125)

    def test_kernel_weight_undefined_at_anchors(self):
        with pytest.raises(ValueError, match="undefined"):
            shap_kernel_weight(4, 0)
        with pytest.raises(ValueError, match="undefined"):
            shap_kernel_weight(4, 4)

    def test_factorial_matches_lime_on_additive_data(self):
        fit = fit_kernel_shap(FACTORIAL_2, FACTORIAL_2_OUTPUTS, 1.0, 0.1)
        assert fit.bias == pytest.approx(0.1, abs=1e-10)
        np.testing.assert_allclose(fit.weights, [0.6, 0.3], atol=1e-10)

    def test_symmetric_game_splits_evenly(self):
        samples, outputs = exhaustive_outputs(3, lambda x: float(len(x) ** 2))
        fit = fit_kernel_shap(samples, outputs, reference_Y=9.0, full_Y=0.0)
        np.testing.assert_allclose(fit.weights, [3.0, 3.0, 3.0], atol=1e-10)
        assert fit.bias == pytest.approx(0.0, abs=1e-10)

    @pytest.mark.parametrize("n", [3, 5, 7])
    def test_exhaustive_solution_is_exactly_shapley(self, n):
        rng = np.random.Generator(np.random.Philox(key=n))
        table = {
            frozenset(c): float(rng.random())
            for size in range(n + 1)
            for c in itertools.combinations(range(n), size)
        }
        game = table.__getitem__
        samples, outputs = exhaustive_outputs(n, game)
        fit = fit_kernel_shap(samples, outputs,
                              reference_Y=game(frozenset(range(n))),
                              full_Y=game(frozenset()))
        np.testing.assert_allclose(fit.weights, brute_force_shapley(n, game), atol=1e-6)

    def test_efficiency_holds_even_when_sampled(self):
        rng = np.random.Generator(np.random.Philox(key=8))
        n = 6
        rows = rng.integers(0, 2, size=(40, n)).astype(np.uint8)
        interior = (rows.sum(axis=1) > 0) & (rows.sum(axis=1) < n)
        rows = rows[interior][:20]
        ss = SampleSet(20, n, rows, SampleOrigin.RANDOM, seed=8)
        outputs = rng.random(20)
        fit = fit_kernel_shap(ss, outputs, reference_Y=0.9, full_Y=0.1)
        # anchors force the surrogate through both endpoints
        assert fit.bias + fit.weights.sum() == pytest.approx(0.9, abs=1e-9)
        assert fit.bias == pytest.approx(0.1, abs=1e-9)

    def test_no_interior_rows_falls_back_to_uniform(self):
        samples = sample_entropic(4, 2)  # anchors only
        fit = fit_kernel_shap(samples, [0.8, 0.2], reference_Y=0.8, full_Y=0.2)
        np.testing.assert_allclose(fit.weights, np.full(4, 0.15))
        assert fit.rank_deficient

    def test_missing_anchor_without_reference_errors(self):
        rows = np.array([[0, 0], [1, 0]], dtype=np.uint8)
        ss = SampleSet(2, 2, rows, SampleOrigin.RANDOM, seed=0)
        with pytest.raises(ValueError, match="full_Y"):
            fit_kernel_shap(ss, [1.0, 0.4], reference_Y=1.0)

    def test_sample_anchor_rows_override_the_fallback_values(self):
        # all-perturbed row present with output 0.05; full_Y argument says 0.9
        # and must be ignored
        rows = np.array([[1, 1], [1, 0], [0, 1], [0, 0]], dtype=np.uint8)
        ss = SampleSet(4, 2, rows, SampleOrigin.RANDOM, seed=0)
        fit = fit_kernel_shap(ss, [0.05, 0.4, 0.7, 1.0], reference_Y=1.0, full_Y=0.9)
        assert fit.bias == pytest.approx(0.05)


class TestExhaustiveRankEquivalence:
    @pytest.mark.parametrize("n", [4, 6, 8])
    def test_pda_is_an_affine_shift_of_rise(self, n):
        rng = np.random.Generator(np.random.Philox(key=n * 11))
        samples = sample_entropic(n, 2 ** n)
        outputs = rng.random(2 ** n)
        reference_Y = float(outputs[0])
        w_pda = attribute_pda(samples, outputs, reference_Y)
        w_rise = attribute_rise(samples, outputs)
        shift = reference_Y - outputs.sum() / 2 ** (n - 1)
        np.testing.assert_allclose(w_pda, shift + w_rise, atol=1e-10)
        np.testing.assert_array_equal(np.argsort(-w_pda, kind="stable"),
                                      np.argsort(-w_rise, kind="stable"))


class TestAffineInvariance:
    def test_rankings_survive_positive_affine_output_transforms(self):
        rng = np.random.Generator(np.random.Philox(key=55))
        n = 5
        samples = sample_only_one(n)
        base = np.concatenate([[0.95], rng.uniform(0.15, 0.6, n)])
        scaled = 2.5 * base + 0.3

        def rankings(y):
            ref = float(y[0])
            full = float(y.min() - 0.1)
            out = {}
            for method in ("PDA", "RISE", "LIME", "SHAP"):
                w = attribute(method, samples, y, ref, full).segment_weights
                out[method] = np.argsort(-np.round(w, 9), kind="stable").tolist()
            out["CIU"] = np.argsort(
                -np.round(attribute_ciu(samples, y, ref, "only_one"), 9),
                kind="stable").tolist()
            return out

        assert rankings(base) == rankings(scaled)


class TestDispatch:
    def test_unknown_method_rejected(self):
        with pytest.raises(ValueError):
            attribute("GRADCAM", FACTORIAL_2, FACTORIAL_2_OUTPUTS, 1.0, 0.1)

    def test_ciu_requires_deterministic_sampling(self):
        with pytest.raises(ValueError, match="only_one or all_but_one"):
            attribute("CIU", FACTORIAL_2, FACTORIAL_2_OUTPUTS, 1.0, 0.1)

    def test_result_carries_method_and_reference(self):
        res = attribute(AttributionMethod.RISE, FACTORIAL_2, FACTORIAL_2_OUTPUTS, 1.0)
        assert res.method is AttributionMethod.RISE
        assert res.reference_output == 1.0
        assert res.pixel_map is None
        np.testing.assert_allclose(res.segment_weights, [0.85, 0.70])

    def test_wrong_output_count_rejected(self):
        with pytest.raises(ValueError, match="outputs"):
            attribute("PDA", FACTORIAL_2, [1.0, 0.4], 1.0)


class TestProjectPerPixel:
    def test_unsmoothed_stack_gives_piecewise_constant_map(self):
        seg = grid_segment(4, 4, 2, 2)
        stack = indicator_masks(seg)
        weights = np.array([0.1, 0.2, 0.3, 0.4])
        pm = project_per_pixel(weights, stack)
        np.testing.assert_array_equal(pm, weights[seg.labels])

    def test_weighted_average_example(self):
        masks = np.zeros((2, 1, 1))
        masks[0, 0, 0] = 0.5
        masks[1, 0, 0] = 0.25
        stack = SegmentMaskStack(2, masks, SmoothingConfig("gaussian_filter", sigma=1.0))
        pm = project_per_pixel(np.array([0.85, 0.70]), stack)
        assert pm[0, 0] == pytest.approx(0.8)

    def test_uniform_weights_stay_uniform(self):
        from pixattr import smooth_gaussian
        stack = smooth_gaussian(indicator_masks(grid_segment(12, 12, 2, 2)), 2.0)
        pm = project_per_pixel(np.full(4, 0.37), stack)
        np.testing.assert_allclose(pm, 0.37, atol=1e-9)

    def test_extrema_bounded_by_weight_range(self):
        from pixattr import smooth_gaussian
        stack = smooth_gaussian(indicator_masks(grid_segment(16, 16, 2, 2)), 3.0)
        weights = np.array([-1.0, 0.25, 0.5, 2.0])
        pm = project_per_pixel(weights, stack)
        assert pm.min() >= weights.min() - 1e-9
        assert pm.max() <= weights.max() + 1e-9

    def test_uncovered_pixels_are_zero_and_flagged(self):
        masks = np.zeros((2, 1, 2))
        masks[0, 0, 0] = 1.0  # pixel 1 covered by nothing
        stack = SegmentMaskStack(2, masks, SmoothingConfig("gaussian_filter", sigma=1.0))
        with pytest.warns(UserWarning, match="covered by no mask"):
            pm = project_per_pixel(np.array([0.4, 0.6]), stack)
        assert pm[0, 1] == 0.0

    def test_weight_count_checked(self):
        stack = indicator_masks(grid_segment(4, 4, 2, 2))
        with pytest.raises(ValueError, match="weights"):
            project_per_pixel(np.zeros(3), stack)
