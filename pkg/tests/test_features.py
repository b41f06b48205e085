import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from faircl.features import (LOG_FLOOR, AugmentPolicy, MelSpectrogram, draw_masks,
                             mel_band_centers, mel_spectrogram, normalize_utterance,
                             spec_augment)


def test_silence_hits_log_floor():
    spec = mel_spectrogram(np.zeros(4000), n_mels=20)
    np.testing.assert_array_equal(spec.values, np.log(LOG_FLOOR))


def test_frame_count():
    spec = mel_spectrogram(np.random.default_rng(0).normal(size=16000), n_mels=80,
                           frame_len=400, hop=160)
    assert spec.values.shape == (98, 80)


@pytest.mark.parametrize("band", [20, 40, 60, 75])
def test_sine_at_band_center_peaks_in_that_band(band):
    f = mel_band_centers(80)[band]
    t = np.arange(16000) / 16000
    spec = mel_spectrogram(np.sin(2 * np.pi * f * t), n_mels=80)
    assert int(np.argmax(spec.values.mean(axis=0))) == band


def test_short_waveform_rejected():
    with pytest.raises(ValueError):
        mel_spectrogram(np.zeros(100), frame_len=400)


def test_normalize_keeps_spectral_shape():
    v = np.outer(np.ones(5), np.arange(4.0))
    out = normalize_utterance(MelSpectrogram(v)).values
    assert abs(out.mean()) < 1e-12 and abs(out.std() - 1) < 1e-12
    assert np.all(np.diff(out[0]) > 0)


def test_noop_policy_identity():
    spec = MelSpectrogram(np.random.default_rng(0).normal(size=(20, 8)))
    out = spec_augment(spec, AugmentPolicy(5, 0, 3, 0), np.random.default_rng(1))
    assert out == spec


def test_single_time_mask_changes_width_times_bins_entries():
    spec = MelSpectrogram(np.random.default_rng(0).uniform(1, 2, size=(20, 8)))
    policy = AugmentPolicy(max_time_mask_width=6, n_time_masks=1, n_freq_masks=0)
    for seed in range(10):
        (t0, w), = draw_masks(20, 8, policy, np.random.default_rng(seed))[0]
        out = spec_augment(spec, policy, np.random.default_rng(seed))
        assert int((out.values != spec.values).sum()) == w * 8


def test_same_seed_same_output():
    spec = MelSpectrogram(np.random.default_rng(0).normal(size=(30, 10)))
    p = AugmentPolicy(5, 2, 4, 2)
    a = spec_augment(spec, p, np.random.default_rng(7))
    b = spec_augment(spec, p, np.random.default_rng(7))
    assert a == b


def test_policy_widths_must_fit():
    spec = MelSpectrogram(np.zeros((5, 8)))
    with pytest.raises(ValueError):
        spec_augment(spec, AugmentPolicy(max_time_mask_width=5), np.random.default_rng(0))


@settings(max_examples=60, deadline=None)
@given(st.integers(4, 30), st.integers(4, 20), st.integers(0, 3), st.integers(0, 3),
       st.integers(0, 2**32 - 1))
def test_masks_only_touch_drawn_rectangles(T, M, nt, nf, seed):
    policy = AugmentPolicy(T - 1, nt, M - 1, nf, mask_value=-5.0)
    values = np.random.default_rng(seed).uniform(0, 1, size=(T, M))
    spec = MelSpectrogram(values)
    times, freqs = draw_masks(T, M, policy, np.random.default_rng(seed))
    out = spec_augment(spec, policy, np.random.default_rng(seed))
    assert out.values.shape == values.shape
    covered = np.zeros((T, M), dtype=bool)
    for t0, w in times:
        covered[t0:t0 + w] = True
    for f0, w in freqs:
        covered[:, f0:f0 + w] = True
    np.testing.assert_array_equal(out.values[~covered], values[~covered])
    assert np.all(out.values[covered] == -5.0)
