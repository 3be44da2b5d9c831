import math

import numpy as np
import pytest
from scipy import integrate
from scipy.special import gammaln, logsumexp

from boltzmap.errors import RangeError
from boltzmap.potentials import (ActivationKind, HiddenConditional,
                                 cgf_eval, conditional_mean,
                                 conditional_mode, conditional_variance,
                                 cumulant, sample_hidden)


KINDS = list(ActivationKind)
GRID = np.linspace(-3.0, 3.0, 7)


def oracle_cgf(kind: ActivationKind, c: float, q: float) -> float:
    """log ∫ e^{qz} ρ(z) dz by quadrature or series over the support."""
    if kind is ActivationKind.STEP:
        return float(logsumexp([0.0, q - c]) - logsumexp([0.0, -c]))
    if kind is ActivationKind.EXPONENTIAL:
        z = np.arange(400)
        log_terms = -np.exp(-c) + z * (q - c) - gammaln(z + 1)
        return float(logsumexp(log_terms))

    # log ∫ exp(qz - z^2/2 - cz) dz / ∫ exp(-z^2/2 - cz) dz, each integrand
    # shifted by its peak.
    lower = -np.inf if kind is ActivationKind.LINEAR else 0.0

    def log_integral(t: float) -> float:
        peak = t if lower == -np.inf else max(t, 0.0)
        offset = t * peak - 0.5 * peak * peak
        value, _ = integrate.quad(
            lambda z: math.exp(t * z - 0.5 * z * z - offset), lower, np.inf,
            epsabs=0.0, epsrel=1e-13, limit=200)
        return math.log(value) + offset

    return log_integral(q - c) - log_integral(-c)


class TestPotentials:

    @pytest.mark.parametrize('kind', KINDS)
    def test_cgf_at_zero(self, kind: ActivationKind) -> None:
        for c in (-3.0, 0.0, 1.7, 10.0):
            assert float(cgf_eval(kind, c, 0.0)) == 0.0

    @pytest.mark.parametrize(('kind', 'c', 'q', 'expected'), [
        (ActivationKind.LINEAR, 0.0, 1.0, 0.5),
        (ActivationKind.STEP, 0.0, math.log(3.0), math.log(2.0)),
        (ActivationKind.EXPONENTIAL, 0.0, 1.0, math.e - 1.0),
    ])
    def test_cgf_examples(self, kind: ActivationKind, c: float, q: float,
                          expected: float) -> None:
        assert float(cgf_eval(kind, c, q)) == pytest.approx(expected,
                                                            abs=1e-12)

    @pytest.mark.parametrize('kind', KINDS)
    def test_cgf_matches_oracle(self, kind: ActivationKind) -> None:
        '''
        GIVEN a grid of q and c in [-3, 3]
        WHEN cgf_eval is called
        THEN it agrees with quadrature (Linear, ReLU) or direct sums
            (Step, Exponential) within 1e-8
        '''

        for c in GRID:
            for q in GRID:
                assert float(cgf_eval(kind, c, q)) == pytest.approx(
                    oracle_cgf(kind, c, q), abs=1e-8)

    def test_cgf_relu_large_bias(self) -> None:
        # K(q) -> q^2/2 - qc + log Φ(q - c) - log Φ(-c) stays finite when
        # both Φ are tiny.
        value = float(cgf_eval(ActivationKind.RELU, 40.0, 1.0))

        assert math.isfinite(value)
        assert value == pytest.approx(1.0 / 40.0, rel=1e-2)

    def test_cgf_broadcast(self) -> None:
        c = np.array([0.0, 1.0])
        q = np.array([[0.5], [1.0], [2.0]])

        assert cgf_eval(ActivationKind.STEP, c, q).shape == (3, 2)

    def test_cgf_exponential_overflow(self) -> None:
        with pytest.raises(RangeError):
            cgf_eval(ActivationKind.EXPONENTIAL, 0.0, 800.0)
        with pytest.raises(ArithmeticError):
            cgf_eval(ActivationKind.EXPONENTIAL, -800.0, 1.0)

    @pytest.mark.parametrize(('kind', 'c', 'n', 'expected'), [
        (ActivationKind.LINEAR, 0.3, 1, -0.3),
        (ActivationKind.LINEAR, 0.3, 2, 1.0),
        (ActivationKind.LINEAR, 0.3, 3, 0.0),
        (ActivationKind.STEP, 0.0, 1, 0.5),
        (ActivationKind.STEP, 0.0, 2, 0.25),
        (ActivationKind.STEP, 0.0, 3, 0.0),
        (ActivationKind.STEP, 0.0, 4, -0.125),
        (ActivationKind.RELU, 0.0, 1, math.sqrt(2.0 / math.pi)),
        (ActivationKind.RELU, 0.0, 2, 1.0 - 2.0 / math.pi),
        (ActivationKind.EXPONENTIAL, 0.0, 1, 1.0),
        (ActivationKind.EXPONENTIAL, 0.0, 5, 1.0),
        (ActivationKind.EXPONENTIAL, 1.0, 3, math.exp(-1.0)),
    ])
    def test_cumulant(self, kind: ActivationKind, c: float, n: int,
                      expected: float) -> None:
        assert float(cumulant(kind, c, n)) == pytest.approx(expected,
                                                            abs=1e-12)

    def test_cumulant_relu_third(self) -> None:
        # Third cumulant of the half-normal: sqrt(2/π) (4/π - 1).
        expected = math.sqrt(2.0 / math.pi) * (4.0 / math.pi - 1.0)

        assert float(cumulant(ActivationKind.RELU, 0.0, 3)) == pytest.approx(
            expected, abs=1e-8)

    @pytest.mark.parametrize('kind', KINDS)
    def test_cumulant_matches_cgf_differences(
            self, kind: ActivationKind) -> None:
        '''
        GIVEN cgf_eval
        WHEN its first and second derivatives at q = 0 are taken by central
            differences with step 1e-5 (second derivative: 1e-4)
        THEN they match cumulant(n = 1) within 1e-6 and cumulant(n = 2)
            within 1e-5
        '''

        for c in (-1.5, 0.0, 0.7, 2.0):
            h = 1e-5
            first = float(cgf_eval(kind, c, h) - cgf_eval(kind, c, -h)) / (
                2 * h)
            h = 1e-4
            second = float(cgf_eval(kind, c, h) + cgf_eval(kind, c, -h)) / (
                h * h)

            assert first == pytest.approx(float(cumulant(kind, c, 1)),
                                          abs=1e-6)
            assert second == pytest.approx(float(cumulant(kind, c, 2)),
                                           abs=1e-5)

    @pytest.mark.parametrize('kind', [ActivationKind.STEP,
                                      ActivationKind.RELU])
    def test_cumulant_vectorized(self, kind: ActivationKind) -> None:
        c = np.array([-1.0, 0.0, 2.0])

        values = cumulant(kind, c, 3)

        assert values.shape == (3,)
        for k in range(3):
            assert values[k] == pytest.approx(float(cumulant(kind, c[k], 3)),
                                              abs=1e-12)

    def test_conditional_examples(self) -> None:
        assert float(conditional_mean(ActivationKind.LINEAR, 0.0, 2.0)) == 2.0
        assert float(conditional_mode(ActivationKind.LINEAR, 0.0, 2.0)) == 2.0
        assert float(conditional_mean(ActivationKind.STEP, 1.0, 1.0)) == 0.5
        assert float(conditional_mode(ActivationKind.RELU, 0.0, -3.0)) == 0.0
        assert float(conditional_mode(ActivationKind.STEP, 1.0, 1.0)) == 1.0
        assert float(conditional_mode(ActivationKind.STEP, 1.0, 0.5)) == 0.0
        assert float(conditional_mode(ActivationKind.EXPONENTIAL, 0.0,
                                      math.log(4.5))) == 4.0

    @pytest.mark.parametrize('kind', KINDS)
    def test_conditional_invariants(self, kind: ActivationKind) -> None:
        inputs = np.linspace(-30.0, 5.0, 71)

        mean = conditional_mean(kind, 0.5, inputs)
        mode = conditional_mode(kind, 0.5, inputs)
        variance = conditional_variance(kind, 0.5, inputs)

        assert np.all(np.isfinite(mean)) and np.all(np.isfinite(mode))
        assert np.all(variance > 0.0)
        if kind is ActivationKind.STEP:
            assert np.all((0.0 < mean) & (mean < 1.0))
            assert set(mode.tolist()) <= {0.0, 1.0}
        if kind is ActivationKind.EXPONENTIAL:
            assert np.all(mean > 0.0)
            assert np.all(mode == np.floor(mode)) and np.all(mode >= 0.0)
        if kind is ActivationKind.RELU:
            assert np.all(mode >= 0.0) and np.all(mean > 0.0)

    @pytest.mark.parametrize('kind', KINDS)
    def test_sample_moments(self, kind: ActivationKind) -> None:
        '''
        GIVEN 10^6 draws from sample_hidden
        WHEN their mean and variance are computed
        THEN both match the conditional moments within 5 standard errors
        '''

        rng = np.random.default_rng(12)
        count = 10 ** 6
        for c, value in ((0.0, 0.3), (1.0, -1.5), (-0.5, 2.5)):
            if kind is ActivationKind.RELU:
                value = value - 3.0
            draws = sample_hidden(kind, c, np.full(count, value), rng)
            mean = float(conditional_mean(kind, c, value))
            variance = float(conditional_variance(kind, c, value))

            assert abs(draws.mean() - mean) < 5 * math.sqrt(variance / count)
            # Var of the sample variance is at most ~ (μ4 - σ^4)/n; the
            # bound below holds for all four laws at these parameters.
            assert abs(draws.var() - variance) < 5 * variance * math.sqrt(
                10.0 / count)

    def test_sample_poisson_mean(self) -> None:
        rng = np.random.default_rng(3)

        draws = sample_hidden(ActivationKind.EXPONENTIAL, 0.0,
                              np.full(10 ** 6, math.log(4.0)), rng)

        assert abs(draws.mean() - 4.0) < 3 * 2.0 / 1000

    @pytest.mark.parametrize('kind', KINDS)
    def test_sample_support(self, kind: ActivationKind) -> None:
        rng = np.random.default_rng(4)
        inputs = np.linspace(-20.0, 3.0, 1000)

        draws = sample_hidden(kind, 0.0, inputs, rng)

        assert draws.shape == inputs.shape
        if kind is ActivationKind.STEP:
            assert set(draws.tolist()) <= {0.0, 1.0}
        if kind in (ActivationKind.RELU, ActivationKind.EXPONENTIAL):
            assert np.all(draws >= 0.0)
        if kind is ActivationKind.EXPONENTIAL:
            assert np.all(draws == np.floor(draws))

    def test_sample_relu_far_tail(self) -> None:
        # Location far below 0: the exponential proposal keeps draws exact.
        rng = np.random.default_rng(5)
        count = 10 ** 5

        draws = sample_hidden(ActivationKind.RELU, 0.0, np.full(count, -8.0),
                              rng)

        mean = float(conditional_mean(ActivationKind.RELU, 0.0, -8.0))
        variance = float(conditional_variance(ActivationKind.RELU, 0.0, -8.0))
        assert np.all(draws > 0.0)
        assert abs(draws.mean() - mean) < 5 * math.sqrt(variance / count)

    def test_sample_deterministic(self) -> None:
        a = sample_hidden(ActivationKind.RELU, 0.0, np.linspace(-5, 5, 50),
                          np.random.default_rng(9))
        b = sample_hidden(ActivationKind.RELU, 0.0, np.linspace(-5, 5, 50),
                          np.random.default_rng(9))

        assert a.tolist() == b.tolist()

    def test_sample_poisson_overflow(self) -> None:
        with pytest.raises(RangeError):
            sample_hidden(ActivationKind.EXPONENTIAL, 0.0, 60.0,
                          np.random.default_rng(0))

    def test_activation_names(self) -> None:
        assert [str(kind) for kind in KINDS] == ['linear', 'relu', 'step',
                                                 'exp']
        assert ActivationKind.parse('exp') is ActivationKind.EXPONENTIAL
        with pytest.raises(ValueError):
            ActivationKind.parse('tanh')

    def test_hidden_conditional(self) -> None:
        unit = HiddenConditional(ActivationKind.STEP, input=1.0, bias=1.0)

        assert unit.mean() == 0.5
        assert unit.mode() == 1.0
        assert unit.variance() == 0.25
        assert unit.sample(np.random.default_rng(0)) in (0.0, 1.0)
