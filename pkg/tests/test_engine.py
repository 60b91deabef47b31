from math import sqrt

import numpy as np
import pytest

from entswap.engine import (
    ExactModel,
    _bernoulli_positions,
    all_click_prob,
    canonical_key,
    chunk_rng,
    chunk_sizes,
    enumerate_keys,
    exact_probabilities,
    expected_tallies,
    merge_counts,
    sample_batch,
    sample_batches,
    sampled_clicks,
    sampled_tallies,
)
from entswap.errors import ValidationError
from entswap.experiments import ExperimentConfig, make_bench
from entswap.spdc import Pair, SourceParams

HOM_4F = (0, 1, 2, 3)


def hom_bench(mu=0.1, tau=0.0, n_max=None, **kw):
    sources = (SourceParams(mu=mu), SourceParams(mu=mu))
    cfg = ExperimentConfig(setup="hom", sources=sources, n_pulses=None if n_max else 1000, n_max=n_max, **kw)
    return make_bench(cfg, cfg.thetas, tau)


class TestBernoulli:
    def test_rate(self):
        rng = np.random.default_rng(0)
        n, p = 2_000_000, 0.01
        pos = _bernoulli_positions(n, p, rng)
        assert abs(len(pos) - n * p) < 4 * sqrt(n * p * (1 - p))
        assert np.all(np.diff(pos) > 0) and pos[0] >= 0 and pos[-1] < n

    def test_edges(self):
        rng = np.random.default_rng(0)
        assert len(_bernoulli_positions(10, 0.0, rng)) == 0
        assert list(_bernoulli_positions(4, 1.0, rng)) == [0, 1, 2, 3]


class TestKeys:
    def test_relabel_invariance(self):
        a = [Pair("ch1", "ch2", 3, 3), Pair("ch3", "ch4", 7, 7)]
        b = [Pair("ch3", "ch4", 1, 1), Pair("ch1", "ch2", 0, 0)]
        assert canonical_key(a) == canonical_key(b)

    def test_shared_label_distinct(self):
        same = [Pair("ch1", "ch2", 2, 2), Pair("ch3", "ch4", 2, 2)]
        diff = [Pair("ch1", "ch2", 2, 2), Pair("ch3", "ch4", 5, 5)]
        assert canonical_key(same) != canonical_key(diff)

    def test_chunking(self):
        assert chunk_sizes(5, 2) == [2, 2, 1]
        assert chunk_sizes(4, 2) == [2, 2]


class TestSampling:
    def test_pair_statistics(self):
        bench = hom_bench(mu=0.2)
        batch = sample_batch(bench, 400_000, chunk_rng(1, 0))
        per_src = {"I": 0, "II": 0}
        for key, idx in batch.groups.items():
            for p in key:
                per_src["I" if p.port_a == "ch1" else "II"] += len(idx)
        for total in per_src.values():
            # 0.2 mean pairs, geometric variance mu (1 + mu)
            assert abs(total / 400_000 - 0.2) < 4 * sqrt(0.2 * 1.2 / 400_000)

    def test_photon_cap(self):
        bench = hom_bench(mu=2.0)
        batch = sample_batch(bench, 20_000, chunk_rng(0, 0))
        assert batch.rejected > 0
        assert max(2 * len(k) for k in batch.groups) <= 8

    def test_pair_cap(self):
        bench = hom_bench(mu=0.5, n_max=1)
        batch = sample_batch(bench, 20_000, chunk_rng(0, 0))
        for key in batch.groups:
            assert sum(p.port_a == "ch1" for p in key) <= 1
            assert sum(p.port_a == "ch3" for p in key) <= 1

    def test_workers_do_not_change_results(self):
        bench = hom_bench(mu=0.1, tau=1.0)
        n = 2 * (1 << 20) + 1000
        one = sample_batches(bench, n, seed=5, workers=1)
        two = sample_batches(bench, n, seed=5, workers=2)
        assert merge_counts(one) == merge_counts(two)
        for a, b in zip(one, two):
            assert a.groups.keys() == b.groups.keys()
            assert all(np.array_equal(a.groups[k], b.groups[k]) for k in a.groups)

    def test_seed_changes_results(self):
        bench = hom_bench()
        a = merge_counts(sample_batches(bench, 50_000, seed=1))
        b = merge_counts(sample_batches(bench, 50_000, seed=2))
        assert a != b


class TestExact:
    def test_inclusion_exclusion(self):
        # two independent detectors with no-click 0.3 and 0.6
        q = np.array([1.0, 0.3, 0.6, 0.18])
        assert all_click_prob(q, 0b11) == pytest.approx(0.7 * 0.4)
        assert all_click_prob(q, 0b01) == pytest.approx(0.7)

    def test_enumeration_normalized(self):
        bench = hom_bench(n_max=2)
        probs = enumerate_keys(bench, 2)
        assert sum(probs.values()) == pytest.approx(1.0)

    def test_state_cap(self):
        bench = hom_bench(n_max=4)
        with pytest.raises(ValidationError, match="smaller N_max"):
            enumerate_keys(bench, 4, state_cap=100)

    def test_expected_matches_enumeration(self):
        bench = hom_bench(mu=0.1, n_max=2, tau=2.0)
        model = ExactModel(bench)
        exact = exact_probabilities(model, enumerate_keys(bench, 2), [HOM_4F, (2, 3)])
        n = 1_000_000
        est = expected_tallies(model, merge_counts(sample_batches(bench, n, seed=3)), n, [HOM_4F, (2, 3)])
        for s in (HOM_4F, (2, 3)):
            mean, se = est[s]
            assert abs(mean - n * exact[s]) < 4 * se

    def test_sampled_matches_enumeration(self):
        bench = hom_bench(mu=0.1, n_max=2)
        model = ExactModel(bench)
        exact = exact_probabilities(model, enumerate_keys(bench, 2), [(0,), (2, 3)])
        n = 500_000
        clicks = sampled_clicks(bench, sample_batches(bench, n, seed=4), seed=4)
        counts = sampled_tallies(bench, clicks, [(0,), (2, 3)], dead_time=False)
        for s in ((0,), (2, 3)):
            p = exact[s]
            assert abs(counts[s] - n * p) < 4 * sqrt(n * p * (1 - p))

    def test_vacuum_gives_darks_only(self):
        bench = hom_bench(mu=0.0, n_max=1)
        model = ExactModel(bench)
        probs = exact_probabilities(model, enumerate_keys(bench, 1), [(0,), HOM_4F])
        assert probs[(0,)] == pytest.approx(bench.detectors[0].dark_prob)
        assert probs[HOM_4F] == pytest.approx(np.prod([d.dark_prob for d in bench.detectors]))
