import math

import numpy as np
import pytest
from scipy.integrate import quad

from binaural_masking import features as feat
from binaural_masking.features import (
    NoiseTracker,
    estimate_f0,
    extract_features,
    load_features,
    logmmse_gain,
    lsa_gain,
    save_features,
    vssnr_frame,
)
from binaural_masking.transforms import erb_bands, stft

RATE = 10000


def e1_quadrature(v):
    val, _ = quad(lambda t: math.exp(-t) / t, v, np.inf)
    return val


def test_lsa_gain_matches_quadrature():
    for xi in (0.05, 0.5, 2.0, 20.0):
        for gamma in (0.2, 1.0, 5.0):
            v = xi * gamma / (1.0 + xi)
            want = xi / (1.0 + xi) * math.exp(0.5 * e1_quadrature(v))
            got = lsa_gain(np.array([xi]), np.array([gamma]))[0]
            assert got == pytest.approx(want, rel=1e-9)


def test_noise_tracker_converges(rng):
    # stationary white noise: the PSD estimate should settle near the truth
    sigma2 = 0.5
    tracker = NoiseTracker(n_bins=129)
    truth = np.full(129, sigma2)
    for _ in range(400):
        frame = sigma2 * rng.chisquare(2, 129) / 2.0  # |Y|^2 for Gaussian bins
        spp = tracker.update(frame)
    ratio = tracker.noise_psd / truth
    assert 0.5 < np.median(ratio) < 2.0
    assert np.mean(spp) < 0.6  # noise-only frames mostly flagged as absence


def test_noise_tracker_spp_high_for_loud_frame(rng):
    tracker = NoiseTracker(n_bins=16)
    for _ in range(30):
        tracker.update(np.ones(16))
    spp = tracker.update(np.full(16, 100.0))
    assert np.all(spp > 0.9)


def test_logmmse_gain_range(speech, sc):
    g = stft(speech, sc)
    G = logmmse_gain(g)
    assert G.shape == g.cells.shape
    assert np.all(np.isfinite(G))
    assert np.all(G > 0)


def test_estimate_f0_harmonic_comb():
    freqs = np.arange(129) * RATE / 256.0
    power = np.zeros(129)
    f0_true = 156.25  # exactly bin 4
    for h in range(1, 9):
        k = int(round(h * f0_true / (RATE / 256.0)))
        if k < 129:
            power[k] = 1.0 / h
    f0, voiced = estimate_f0(power, freqs)
    assert voiced
    assert f0 == pytest.approx(f0_true, abs=2.0)


def test_estimate_f0_noise_unvoiced(rng):
    freqs = np.arange(129) * RATE / 256.0
    flags = [estimate_f0(rng.random(129) + 0.5, freqs)[1] for _ in range(50)]
    assert np.mean(flags) < 0.5


def test_vssnr_white_noise_near_zero_db(rng):
    # harmonics and midpoints carry equal energy in white noise
    bands = erb_bands(feat.N_FEATURE_BANDS, 256, RATE)
    freqs = np.arange(129) * RATE / 256.0
    vals = []
    for _ in range(200):
        col = rng.chisquare(2, 129)
        v = vssnr_frame(col, freqs, 150.0, bands, clamp=False)
        vals.extend(np.asarray(v)[np.isfinite(v)])
    assert abs(np.median(vals)) < 2.0


def test_vssnr_harmonic_signal_hits_upper_clamp():
    bands = erb_bands(feat.N_FEATURE_BANDS, 256, RATE)
    freqs = np.arange(129) * RATE / 256.0
    power = np.full(129, 1e-12)
    f0 = 156.25
    for h in range(1, 30):
        k = int(round(h * f0 / (RATE / 256.0)))
        if k < 129:
            power[k] = 1.0
    v = np.asarray(vssnr_frame(power, freqs, f0, bands))
    lo, hi = feat.VSSNR_RANGE_DB
    assert np.all(v <= hi + 1e-9)
    assert np.max(v) == pytest.approx(hi, abs=1e-6)


def test_extract_features_shape(speech, sc):
    x = extract_features(speech, sc)
    n_frames = stft(speech, sc).n_frames
    assert x.shape == (n_frames, 90)
    assert np.all(np.isfinite(x))


def test_features_save_load(tmp_path, rng):
    x = rng.standard_normal((40, 90))
    path = tmp_path / "f.npz"
    save_features(x, path, "h1")
    back = load_features(path, expect_hash="h1")
    assert np.allclose(back, x, atol=1e-6)  # stored as float32
    with pytest.raises(ValueError):
        load_features(path, expect_hash="h2")
