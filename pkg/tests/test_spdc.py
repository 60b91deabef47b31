from math import sqrt

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from entswap.errors import ValidationError
from entswap.fock import ModeKey, ModeRegistry, measurement_distribution
from entswap.spdc import (
    FilterSpec,
    Pair,
    PairEmission,
    SourceParams,
    apply_filter,
    coherence_sigma_ps,
    emission_pairs,
    emit_state,
    label_retention,
    pairs_state,
    sample_emission,
    schmidt_ratio,
    schmidt_weights,
    thermal_pmf,
)


class TestSchmidt:
    def test_pure(self):
        assert schmidt_ratio(1.0) == 0.0
        assert list(schmidt_weights(1.0)) == [1.0]

    def test_default_purity(self):
        assert schmidt_ratio(0.82) == pytest.approx(0.18 / 1.82)
        assert schmidt_ratio(0.82) == pytest.approx(0.0989, abs=5e-5)

    def test_half(self):
        assert schmidt_ratio(0.5) == pytest.approx(1 / 3)
        lam = schmidt_weights(0.5)
        assert lam[0] == pytest.approx(2 / 3, abs=1e-6)

    @pytest.mark.parametrize("p", [0.0, -0.1, 1.01])
    def test_invalid(self, p):
        with pytest.raises(ValidationError):
            schmidt_weights(p)

    def test_explicit_truncation(self):
        lam = schmidt_weights(0.5, 0)
        assert list(lam) == [1.0]


@given(st.floats(0.05, 1.0))
def test_purity_identity(p):
    lam = schmidt_weights(p)
    x = schmidt_ratio(p)
    # truncated tail holds at most 1e-6 of the weight
    assert (1 - x) * np.sum(x ** np.arange(len(lam))) >= 1 - 1e-6
    assert np.sum(lam**2) == pytest.approx(p, abs=1e-4)
    assert lam.sum() == pytest.approx(1.0)


class TestEmission:
    def test_zero_mu(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            assert sample_emission(SourceParams(mu=0.0), rng).total == 0

    def test_thermal_pmf(self):
        assert thermal_pmf(0, 0.1) == pytest.approx(1 / 1.1)
        assert thermal_pmf(1, 0.1) == pytest.approx(0.1 / 1.1**2)
        assert thermal_pmf(1, 0.1) == pytest.approx(0.0826, abs=1e-4)

    def test_single_mode_statistics(self):
        rng = np.random.default_rng(1)
        params = SourceParams(mu=0.1, purity=1.0)
        n = np.array([sample_emission(params, rng).total for _ in range(50_000)])
        for k, p in ((0, 1 / 1.1), (1, 0.1 / 1.21)):
            se = sqrt(p * (1 - p) / len(n))
            assert abs(np.mean(n == k) - p) < 3 * se

    def test_mean_pairs(self):
        rng = np.random.default_rng(2)
        params = SourceParams(mu=0.1)
        means = params.mu * params.weights
        counts = rng.geometric(1.0 / (1.0 + means), size=(1_000_000, len(means))) - 1
        totals = counts.sum(axis=1)
        assert abs(totals.mean() - 0.1) < 3 * totals.std() / 1000
        single = np.array([sample_emission(params, rng).total for _ in range(20_000)])
        assert abs(single.mean() - 0.1) < 3 * single.std() / sqrt(len(single))


def _reg(labels=(0,)):
    return ModeRegistry(ModeKey(p, q, k) for k in labels for p in ("ch1", "ch2") for q in "HV")


def _counts(state):
    out = {}
    for pattern, a in state.amplitudes.items():
        modes = [state.registry[i] for i in pattern]
        key = tuple(sorted((m.port, m.pol) for m in modes))
        out[key] = a
    return out


class TestEmitState:
    def test_single_pair_singlet(self):
        reg = _reg()
        s = emit_state(PairEmission((1,)), SourceParams(), reg, "I")
        amps = _counts(s)
        assert amps[(("ch1", "H"), ("ch2", "V"))] == pytest.approx(1 / sqrt(2))
        assert amps[(("ch1", "V"), ("ch2", "H"))] == pytest.approx(-1 / sqrt(2))

    def test_double_pair_thirds(self):
        reg = _reg()
        s = emit_state(PairEmission((2,)), SourceParams(), reg, "I")
        dist = measurement_distribution(s)
        assert sorted(dist.values()) == pytest.approx([1 / 3] * 3)

    def test_delay_relabels_whole_label(self):
        rng = np.random.default_rng(0)
        pairs = emission_pairs(PairEmission((3,)), SourceParams(), "II", rng, retention=0.0, delay_arm="ch4")
        assert {p.label_b for p in pairs} == {10_000}
        assert {p.label_a for p in pairs} == {0}

    def test_depolarized_pairs_are_products(self):
        rng = np.random.default_rng(0)
        pairs = emission_pairs(PairEmission((50,)), SourceParams(werner=1.0), "I", rng)
        assert all(p.pols is not None for p in pairs)

    def test_bell_states(self):
        reg = _reg()
        for bell, pols, sign in (("phi+", ("H", "H"), 1), ("phi-", ("V", "V"), -1), ("psi+", ("V", "H"), 1)):
            s = pairs_state([Pair("ch1", "ch2", 0, 0, bell)], reg)
            key = tuple(sorted((("ch1", pols[0]), ("ch2", pols[1]))))
            assert _counts(s)[key] == pytest.approx(sign / sqrt(2))


class TestFilter:
    def test_none(self):
        p = SourceParams()
        assert apply_filter(p, ("ch1", "ch2")) == p

    def test_two_filters(self):
        f = FilterSpec(arms=("ch1", "ch4"), transmission=0.77, purity_after=0.851)
        p1 = apply_filter(SourceParams(filter=f), ("ch1", "ch2"))
        p2 = apply_filter(SourceParams(filter=f), ("ch3", "ch4"))
        t0 = 0.2 / 0.79
        assert p1.transmission == pytest.approx((t0 * 0.77, t0))
        assert p2.transmission == pytest.approx((t0, t0 * 0.77))
        assert p1.purity == p2.purity == 0.851

    def test_purity_after_below_purity(self):
        with pytest.raises(ValidationError):
            SourceParams(purity=0.9, filter=FilterSpec(purity_after=0.85))


class TestDelay:
    def test_sigma_value(self):
        # 1.2 nm at 1584 nm: d_nu = 143.5 GHz, sigma_w = 2 pi d_nu / 2.3548
        assert coherence_sigma_ps() == pytest.approx(1.8477, abs=1e-3)

    def test_symmetric(self):
        s = coherence_sigma_ps()
        for tau in (0.3, 1.0, 2.5, 7.0):
            assert label_retention(tau, s) == label_retention(-tau, s)
        assert label_retention(0.0, s) == 1.0

    def test_invalid_width(self):
        with pytest.raises(ValidationError):
            coherence_sigma_ps(0.0)
