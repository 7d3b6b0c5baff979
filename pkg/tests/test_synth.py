import numpy as np
import pytest

from src.errors import ConfigError, DataError
from src.preprocess import prepare
from src.synth import (
    DEFAULT_ARCHETYPES,
    DEFAULT_CLASS_COUNTS,
    ClassArchetype,
    Transient,
    burst_plan,
    class_names,
    derive_seed,
    iter_synth_dataset,
    make_rng,
    scaled_counts,
    synth_dataset,
    synth_transient,
)


def _archetype(**kwargs) -> ClassArchetype:
    fields = dict(
        class_id=1,
        name="test",
        short_name="t",
        carrier_freq_range=(0.05, 0.06),
        damping_range=(0.01, 0.02),
        burst_count_range=(1, 3),
        length_range=(600, 900),
        gap_range=(50, 100),
    )
    fields.update(kwargs)
    return ClassArchetype(**fields)


class TestTransient:
    """Tests for the Transient record"""

    def test_samples_are_copied_and_read_only(self):
        """Mutating the source array does not change the transient"""
        source = np.ones(10)
        t = Transient(samples=source, label=2)
        source[0] = 5.0
        assert t.samples[0] == 1.0
        with pytest.raises(ValueError):
            t.samples[0] = 3.0

    def test_rejects_empty_and_bad_label(self):
        with pytest.raises(DataError):
            Transient(samples=np.array([]), label=1)
        with pytest.raises(DataError):
            Transient(samples=np.ones(5), label=0)


class TestClassArchetype:
    """Validation of archetype ranges"""

    def test_empty_interval_rejected(self):
        with pytest.raises(ConfigError):
            _archetype(carrier_freq_range=(0.2, 0.1))

    def test_bursts_must_start_inside_waveform(self):
        """Largest gap times (max bursts - 1) must stay below the minimum length"""
        with pytest.raises(ConfigError):
            _archetype(gap_range=(100, 400), burst_count_range=(1, 3))

    def test_length_bounds(self):
        with pytest.raises(ConfigError):
            _archetype(length_range=(100, 900))
        with pytest.raises(ConfigError):
            _archetype(length_range=(600, 9000))

    def test_default_archetypes_are_distinct(self):
        """Eight classes, ids 1..8, pairwise different parameter ranges"""
        assert [a.class_id for a in DEFAULT_ARCHETYPES] == list(range(1, 9))
        signatures = {a.range_signature() for a in DEFAULT_ARCHETYPES}
        assert len(signatures) == 8
        assert class_names()[0] == "CFL"
        assert class_names()[3] == "cable"


class TestSynthTransient:
    """Tests for single transient generation"""

    def test_pure_function_of_seed(self):
        a = synth_transient(DEFAULT_ARCHETYPES[2], seed=42)
        b = synth_transient(DEFAULT_ARCHETYPES[2], seed=42)
        assert np.array_equal(a.samples, b.samples)
        c = synth_transient(DEFAULT_ARCHETYPES[2], seed=43)
        assert not np.array_equal(a.samples, c.samples)

    def test_length_and_label_within_ranges(self):
        for archetype in DEFAULT_ARCHETYPES:
            for seed in range(5):
                t = synth_transient(archetype, seed)
                low, high = archetype.length_range
                assert low <= t.length <= high
                assert t.label == archetype.class_id
                assert np.all(np.isfinite(t.samples))

    def test_noise_free_matches_burst_plan(self):
        """With no noise the waveform is exactly the closed-form burst sum"""
        archetype = _archetype(noise_floor=0.0)
        plan = burst_plan(archetype, seed=7)
        t = synth_transient(archetype, seed=7)
        assert t.length == plan.length
        n = np.arange(plan.length)
        expected = np.zeros(plan.length)
        for burst in plan.bursts:
            m = n - burst.onset
            on = m >= 0
            expected[on] += (
                burst.amplitude
                * np.exp(-plan.damping * m[on])
                * np.sin(2 * np.pi * plan.carrier * m[on] + burst.phase)
            )
        np.testing.assert_allclose(t.samples, expected, atol=1e-9)

    def test_peak_clears_noise_floor(self):
        archetype = DEFAULT_ARCHETYPES[0]
        t = synth_transient(archetype, seed=3)
        assert np.max(np.abs(t.samples)) > 3 * archetype.noise_floor

    def test_single_burst_rings_down(self):
        """One burst: the signal envelope decays over the waveform"""
        archetype = _archetype(burst_count_range=(1, 1), noise_floor=0.0)
        t = synth_transient(archetype, seed=11)
        head = np.max(np.abs(t.samples[:100]))
        tail = np.max(np.abs(t.samples[-100:]))
        assert tail < head


class TestSeeds:
    def test_make_rng_is_reproducible(self):
        a = make_rng(5, 1, 2).random(4)
        b = make_rng(5, 1, 2).random(4)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, make_rng(5, 2, 1).random(4))

    def test_derive_seed_depends_on_all_keys(self):
        seeds = {derive_seed(0, c, i) for c in (1, 2) for i in (0, 1)}
        assert len(seeds) == 4


class TestDatasets:
    """Tests for whole-dataset generation"""

    def test_scaled_counts(self):
        """floor(scale * count) with a minimum of three per class"""
        assert scaled_counts(0.01) == [6, 5, 55, 3, 160, 359, 36, 5]
        assert scaled_counts(0.001)[3] == 3
        assert sum(DEFAULT_CLASS_COUNTS) == 63130

    def test_scaled_counts_rejects_non_positive(self):
        with pytest.raises(ConfigError):
            scaled_counts(0)

    def test_counts_and_ids(self):
        counts = [3, 2, 4, 3, 2, 2, 3, 2]
        items = synth_dataset(counts, seed=0)
        assert len(items) == sum(counts)
        labels = [t.label for t in items]
        assert [labels.count(c) for c in range(1, 9)] == counts
        assert [t.item_id for t in items] == list(range(len(items)))

    def test_same_seed_same_dataset(self):
        counts = [3] * 8
        a = synth_dataset(counts, seed=9)
        b = synth_dataset(counts, seed=9)
        assert all(np.array_equal(x.samples, y.samples) for x, y in zip(a, b))

    def test_subset_regenerates_independently(self):
        """Transient index i of class c does not depend on the other counts"""
        small = synth_dataset([2] * 8, seed=4)
        large = synth_dataset([5] * 8, seed=4)
        assert np.array_equal(small[2].samples, large[5].samples)

    @pytest.mark.parametrize(
        "counts", [[], [1, 2, 3], [3, 3, 3, 0, 3, 3, 3, 3]]
    )
    def test_invalid_counts(self, counts):
        with pytest.raises(ConfigError):
            list(iter_synth_dataset(counts, seed=0))

    def test_classes_separate_by_spectrum(self):
        """Nearest spectral centroid tells the eight classes apart on held-out transients"""
        items = synth_dataset([6] * 8, seed=3)
        vectors = prepare(items, length=1000, anchor=50)
        spectra = np.abs(np.fft.rfft(vectors.X, axis=1))
        spectra /= np.linalg.norm(spectra, axis=1, keepdims=True)
        fit = np.zeros(len(items), dtype=bool)
        for label in range(1, 9):
            fit[np.flatnonzero(vectors.labels == label)[:3]] = True
        centroids = np.stack(
            [spectra[fit & (vectors.labels == label)].mean(axis=0) for label in range(1, 9)]
        )
        distances = np.linalg.norm(spectra[~fit][:, None, :] - centroids[None], axis=2)
        predicted = np.argmin(distances, axis=1) + 1
        assert np.mean(predicted == vectors.labels[~fit]) > 0.6
