"""Tests for gridkrig.kriging: predictors, interpolation, risk functionals."""

import math

import numpy as np
import pytest

from gridkrig import (
    CovModel,
    EstimationConfig,
    SiteSet,
    ValidationError,
    amse,
    cov,
    cov_matrix,
    cov_vector,
    dyadic_grid,
    empirical_cov,
    empirical_ordinary,
    empirical_simple,
    excess_risk,
    imse,
    lag_table,
    pointwise_mse_theoretical,
    simulate,
    theoretical_ordinary,
    theoretical_simple,
)
from gridkrig.grid import eval_grid
from gridkrig.kriging import imse_of_weights
from gridkrig.rng import stream

from conftest import random_sites

MODEL = CovModel("tpl", theta=0.5)


def make_empirical(seed=4, J=2, cutoff=math.sqrt(2) - 0.5):
    g = dyadic_grid(J)
    f = simulate(MODEL, g, seed=seed)
    return empirical_cov(f, lag_table(g), EstimationConfig(cutoff=cutoff))


class TestWeights:
    def test_single_input_scalar_system(self, rng):
        inputs = random_sites(rng, 1)
        pred = theoretical_simple(MODEL, inputs)
        s = (0.3, 0.9)
        h = float(np.hypot(*(np.array(s) - inputs.coords[0])))
        assert pred.weights(s)[0] == pytest.approx(float(cov(MODEL, h)), rel=1e-10)

    def test_three_inputs_match_explicit_inverse(self, rng):
        inputs = random_sites(rng, 3)
        pred = theoretical_simple(MODEL, inputs)
        sigma = cov_matrix(MODEL, inputs).values
        s = rng.uniform(0, 1, 2)
        oracle = np.linalg.inv(sigma) @ cov_vector(MODEL, s, inputs)
        assert np.allclose(pred.weights(s), oracle, atol=1e-10)

    def test_gaussian_conditional_expectation_oracle(self, rng):
        # block-matrix conditioning of the joint (d+1)-dimensional Gaussian
        model = CovModel("gaussian", theta=0.4)
        inputs = random_sites(rng, 3)
        s = rng.uniform(0, 1, 2)
        joint_sites = SiteSet(np.vstack([s, inputs.coords]))
        joint = cov_matrix(model, joint_sites).values
        coeffs = np.linalg.solve(joint[1:, 1:], joint[1:, 0])
        pred = theoretical_simple(model, inputs)
        assert np.allclose(pred.weights(s), coeffs, atol=1e-10)

    def test_ordinary_weights_sum_to_one(self, rng):
        inputs = random_sites(rng, 6)
        pred = theoretical_ordinary(MODEL, inputs)
        for _ in range(5):
            w = pred.weights(rng.uniform(0, 1, 2))
            assert w.sum() == pytest.approx(1.0, abs=1e-10)

    def test_ordinary_multiplier_exposed(self, rng):
        inputs = random_sites(rng, 4)
        pred = theoretical_ordinary(MODEL, inputs)
        w, mu = pred.weights_and_multiplier((0.5, 0.5))
        assert w.shape == (4,) and np.isfinite(mu)
        simple = theoretical_simple(MODEL, inputs)
        with pytest.raises(ValidationError):
            simple.weights_and_multiplier((0.5, 0.5))


class TestPredict:
    @pytest.mark.parametrize("build", [
        lambda inputs: theoretical_simple(MODEL, inputs),
        lambda inputs: theoretical_ordinary(MODEL, inputs),
        lambda inputs: empirical_simple(make_empirical(), inputs),
        lambda inputs: empirical_ordinary(make_empirical(), inputs),
    ], ids=["theo-simple", "theo-ordinary", "emp-simple", "emp-ordinary"])
    def test_exact_interpolation(self, build, rng):
        inputs = random_sites(rng, 5)
        pred = build(inputs)
        obs = rng.standard_normal(5)
        for i in range(5):
            got = pred.predict(inputs[i], obs)
            assert abs(got - obs[i]) <= 1e-8 * (1 + abs(obs[i]))

    def test_zero_observations_zero_prediction(self, rng):
        inputs = random_sites(rng, 4)
        pred = theoretical_simple(MODEL, inputs)
        assert pred.predict((0.2, 0.2), np.zeros(4)) == 0.0

    def test_ordinary_reproduces_constants(self, rng):
        inputs = random_sites(rng, 5)
        pred = theoretical_ordinary(MODEL, inputs)
        for s in rng.uniform(0, 1, size=(4, 2)):
            assert pred.predict(s, np.full(5, 2.7)) == pytest.approx(2.7, rel=1e-9)

    def test_observation_length_checked(self, rng):
        pred = theoretical_simple(MODEL, random_sites(rng, 3))
        with pytest.raises(ValidationError):
            pred.predict((0.1, 0.1), np.zeros(4))

    def test_predict_many_matches_loop(self, rng):
        inputs = random_sites(rng, 4)
        pred = theoretical_simple(MODEL, inputs)
        obs = rng.standard_normal(4)
        pts = rng.uniform(0, 1, size=(6, 2))
        batch = pred.predict_many(pts, obs)
        single = [pred.predict(p, obs) for p in pts]
        assert np.allclose(batch, single, atol=1e-12)


class TestPointwiseMse:
    def test_zero_at_inputs(self, rng):
        inputs = random_sites(rng, 4)
        for i in range(4):
            assert pointwise_mse_theoretical(MODEL, inputs[i], inputs) == pytest.approx(0.0, abs=1e-10)

    def test_uninformative_inputs(self, rng):
        inputs = SiteSet(np.array([[0.0, 0.0], [0.05, 0.0]]))
        far = (0.9, 0.9)  # beyond the TPL support from both inputs
        assert pointwise_mse_theoretical(MODEL, far, inputs) == pytest.approx(1.0, abs=1e-12)

    def test_single_input_formula(self, rng):
        inputs = random_sites(rng, 1)
        s = rng.uniform(0, 1, 2)
        h = float(np.hypot(*(s - inputs.coords[0])))
        want = 1.0 - float(cov(MODEL, h)) ** 2
        assert pointwise_mse_theoretical(MODEL, s, inputs) == pytest.approx(want, rel=1e-10)


class TestImse:
    def test_theoretical_imse_averages_pointwise(self, rng):
        inputs = random_sites(rng, 4)
        ev = eval_grid(49)
        pred = theoretical_simple(MODEL, inputs)
        pointwise = np.array([pointwise_mse_theoretical(MODEL, s, inputs) for s in ev.coords])
        assert imse(MODEL, pred, ev) == pytest.approx(float(pointwise.mean()), abs=1e-10)

    def test_zero_weights_give_prior_variance(self, rng):
        inputs = random_sites(rng, 4)
        ev = eval_grid(25)
        val = imse_of_weights(MODEL, inputs, np.zeros((4, 25)), ev)
        assert val == pytest.approx(1.0, abs=1e-14)

    def test_empirical_never_beats_theoretical(self, rng):
        inputs = random_sites(rng, 5)
        ev = eval_grid(121)
        theo = theoretical_simple(MODEL, inputs)
        for seed in range(5):
            emp = empirical_simple(make_empirical(seed=seed), inputs)
            assert imse(MODEL, emp, ev) >= imse(MODEL, theo, ev) - 1e-8

    def test_imse_matches_monte_carlo(self, rng):
        # joint field draws over inputs + a coarse grid reproduce the closed form
        model = CovModel("gaussian", theta=0.45)
        inputs = random_sites(rng, 3)
        ev = eval_grid(25)
        pred = theoretical_simple(model, inputs)
        closed = imse(model, pred, ev)
        union = SiteSet(np.vstack([inputs.coords, ev.coords]))
        from gridkrig import factorize

        factor = factorize(cov_matrix(model, union))
        draws = factor.sample(stream(17, "field"), size=5000)
        obs, truth = draws[:, :3], draws[:, 3:]
        w = pred.weight_matrix(ev)
        err = obs @ w - truth
        per_rep = (err ** 2).mean(axis=1)
        mc = per_rep.mean()
        se = per_rep.std(ddof=1) / math.sqrt(len(per_rep))
        assert abs(mc - closed) <= 3 * se


class TestExcessRisk:
    def test_zero_for_identical_weights(self, rng):
        inputs = random_sites(rng, 4)
        ev = eval_grid(25)
        theo = theoretical_simple(MODEL, inputs)
        assert excess_risk(MODEL, theo, theo, ev) == pytest.approx(0.0, abs=1e-12)

    def test_nonnegative_for_plug_in(self, rng):
        inputs = random_sites(rng, 5)
        ev = eval_grid(121)
        theo = theoretical_simple(MODEL, inputs)
        for seed in range(5):
            emp = empirical_simple(make_empirical(seed=seed), inputs)
            assert excess_risk(MODEL, emp, theo, ev) >= -1e-8

    def test_quadratic_growth_in_perturbation(self, rng):
        inputs = random_sites(rng, 4)
        ev = eval_grid(49)
        theo = theoretical_simple(MODEL, inputs)
        w_star = theo.weight_matrix(ev)
        base = imse_of_weights(MODEL, inputs, w_star, ev)
        v = rng.standard_normal(w_star.shape)
        gaps = []
        for eps in (1e-2, 1e-3):
            gaps.append(imse_of_weights(MODEL, inputs, w_star + eps * v, ev) - base)
        ratio = gaps[0] / gaps[1]
        assert 50 <= ratio <= 200  # quadratic scaling in the perturbation size

    def test_random_perturbations_never_beat_optimum(self, rng):
        inputs = random_sites(rng, 5)
        ev = eval_grid(49)
        theo = theoretical_simple(MODEL, inputs)
        w_star = theo.weight_matrix(ev)
        base = imse_of_weights(MODEL, inputs, w_star, ev)
        for _ in range(20):
            w = w_star + rng.standard_normal(w_star.shape) * rng.uniform(1e-3, 0.3)
            assert imse_of_weights(MODEL, inputs, w, ev) >= base - 1e-8


class TestAmse:
    def test_exact_match_is_zero(self):
        v = np.arange(5.0)
        assert amse(v, v) == 0.0

    def test_unit_offset(self):
        v = np.arange(5.0)
        assert amse(v + 1, v) == 1.0

    def test_hand_computed(self, rng):
        p = rng.standard_normal(5)
        t = rng.standard_normal(5)
        want = sum((a - b) ** 2 for a, b in zip(p, t)) / 5
        assert amse(p, t) == pytest.approx(want, rel=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            amse(np.zeros(3), np.zeros(4))
