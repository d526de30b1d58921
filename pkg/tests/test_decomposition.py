import math

import numpy as np
import pytest

from conftest import point_pool

from ensimp.decomposition import (
    ErrorVector,
    GaussianErrorModel,
    ambiguity_check,
    expected_phi,
    expected_phi_from_moments,
    phi_decomposed,
    phi_direct,
)
from ensimp.importance import lomo_task
from ensimp.scoring import Metric, ValidationError


class TestPhiDirect:
    def test_two_model_example(self):
        ev = ErrorVector((0.0, -2.0))
        assert phi_direct(ev, 0) == 3.0
        assert phi_direct(ev, 1) == -1.0

    def test_equal_errors_give_zero(self):
        ev = ErrorVector((1.3, 1.3, 1.3))
        for i in range(3):
            assert phi_direct(ev, i) == 0.0

    def test_index_validation(self):
        ev = ErrorVector((0.0, 1.0))
        with pytest.raises(ValidationError):
            phi_direct(ev, 2)
        with pytest.raises(ValidationError):
            ErrorVector((1.0,))

    def test_matches_lomo_with_neg_spe(self, rng):
        # mean(y - yhat_j) and y - mean(yhat_j) can round differently for
        # general floats; with two models and dyadic data both routes are
        # exact, so equality there is bit for bit.
        for _ in range(100):
            n = 2
            y = float(rng.integers(-256, 256)) / 64.0
            points = {f"m{j}": float(rng.integers(-256, 256)) / 64.0 for j in range(n)}
            tp = point_pool(points, y=y)
            errors = ErrorVector(tuple(y - points[m] for m in sorted(points)))
            for i, m in enumerate(sorted(points)):
                assert phi_direct(errors, i) == lomo_task(tp, Metric.SPE, m)
        for _ in range(100):
            n = int(rng.integers(2, 7))
            y = float(rng.normal())
            points = {f"m{j}": float(rng.normal()) for j in range(n)}
            tp = point_pool(points, y=y)
            errors = ErrorVector(tuple(y - points[m] for m in sorted(points)))
            for i, m in enumerate(sorted(points)):
                a, b = phi_direct(errors, i), lomo_task(tp, Metric.SPE, m)
                assert a == pytest.approx(b, abs=1e-12 * max(1.0, abs(b)))


class TestPhiDecomposed:
    def test_two_model_example(self):
        ev = ErrorVector((0.0, -2.0))
        # coefficient (2n-1)/(n(n-1))^2 is 3/4 at n=2
        assert phi_decomposed(ev, 0) == 0.75 * 4.0 == 3.0
        assert phi_decomposed(ev, 1) == -1.0

    def test_identity_with_direct_form(self, rng):
        worst = 0.0
        for _ in range(1000):
            n = int(rng.integers(2, 9))
            ev = ErrorVector(tuple(rng.standard_normal(n)))
            i = int(rng.integers(n))
            a, b = phi_direct(ev, i), phi_decomposed(ev, i)
            worst = max(worst, abs(a - b) / max(1.0, abs(a)))
        assert worst < 1e-9

    def test_translation_of_forecasts_and_truth_is_invisible(self, rng):
        # errors are differences, so a common shift cancels before it
        # reaches either formula
        for _ in range(50):
            y = float(rng.normal())
            points = {f"m{j}": float(rng.normal()) for j in range(4)}
            c = float(rng.uniform(-20, 20))
            base = point_pool(points, y=y)
            shifted = point_pool({m: v + c for m, v in points.items()}, y=y + c)
            for m in sorted(points):
                a = lomo_task(base, Metric.SPE, m)
                b = lomo_task(shifted, Metric.SPE, m)
                assert b == pytest.approx(a, abs=1e-9)


class TestExpectedPhi:
    def test_vertex_of_setting_a_curve(self):
        # the b-coefficients make the curve -(b^2)/9 - (2/9)(y1+y2) b + const,
        # so the vertex sits at -(y1 + y2)
        bs = np.arange(-1.0, 3.0001, 0.01)
        vals = [expected_phi(GaussianErrorModel((-1.0, -0.5, b), 1.0), 2) for b in bs]
        assert bs[int(np.argmax(vals))] == pytest.approx(1.5, abs=1e-9)
        left = expected_phi(GaussianErrorModel((-1.0, -0.5, 1.5 - 1e-4), 1.0), 2)
        right = expected_phi(GaussianErrorModel((-1.0, -0.5, 1.5 + 1e-4), 1.0), 2)
        peak = expected_phi(GaussianErrorModel((-1.0, -0.5, 1.5), 1.0), 2)
        assert peak > left and peak > right

    def test_symmetric_pair(self):
        for c in (0.5, 1.0, 2.5):
            model = GaussianErrorModel((-c, c), 1.0)
            assert expected_phi(model, 0) == pytest.approx(expected_phi(model, 1), abs=1e-14)

    def test_monte_carlo_agreement(self, rng):
        means = (-1.0, -0.5, 1.5)
        model = GaussianErrorModel(means, 1.0)
        y = rng.standard_normal(100_000)
        mu_all = sum(means) / 3
        for i in range(3):
            mu_loo = (sum(means) - means[i]) / 2
            samples = -((y - mu_all) ** 2) + (y - mu_loo) ** 2
            se = samples.std() / math.sqrt(len(samples))
            assert abs(samples.mean() - expected_phi(model, i)) < 4 * se
            # the vectorized restatement is what phi_direct computes per draw
            for yk in y[:50]:
                ev = ErrorVector(tuple(yk - m for m in means))
                direct = phi_direct(ev, i)
                assert direct == pytest.approx(
                    -((yk - mu_all) ** 2) + (yk - mu_loo) ** 2, abs=1e-12
                )

    def test_general_moment_form_matches_gaussian_shortcut(self, rng):
        means = tuple(rng.normal(size=4))
        var = 1.7
        model = GaussianErrorModel(means, var)
        espe = [var + m * m for m in means]
        prod = var + np.outer(means, means)
        for i in range(4):
            assert expected_phi_from_moments(espe, prod, i) == expected_phi(model, i)

    def test_validation(self):
        with pytest.raises(ValidationError):
            GaussianErrorModel((1.0,), 1.0)
        with pytest.raises(ValidationError):
            GaussianErrorModel((1.0, 2.0), 0.0)
        with pytest.raises(ValidationError):
            expected_phi_from_moments([1.0, 2.0], np.ones((3, 3)), 0)


class TestAmbiguityCheck:
    def test_equal_weight_example(self):
        assert ambiguity_check(ErrorVector((0.0, -2.0)), (0.5, 0.5), 0) == 0.0

    def test_identical_errors(self):
        assert ambiguity_check(ErrorVector((1.0, 1.0, 1.0)), (1 / 3, 1 / 3, 1 / 3), 1) == pytest.approx(0.0, abs=1e-15)

    def test_random_weighted_instances(self, rng):
        worst = 0.0
        for _ in range(1000):
            n = int(rng.integers(2, 6))
            ev = ErrorVector(tuple(rng.standard_normal(n) * 3))
            raw = rng.random(n) + 1e-3
            weights = tuple(raw / raw.sum())
            i = int(rng.integers(n))
            worst = max(worst, abs(ambiguity_check(ev, weights, i)))
        assert worst < 1e-9

    def test_weights_must_sum_to_one(self):
        ev = ErrorVector((0.0, 1.0))
        with pytest.raises(ValidationError, match="sum to 1"):
            ambiguity_check(ev, (0.6, 0.6), 0)
        with pytest.raises(ValidationError):
            ambiguity_check(ev, (-0.2, 1.2), 0)
        with pytest.raises(ValidationError):
            ambiguity_check(ev, (1.0, 0.0), 0)
