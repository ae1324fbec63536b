"""Acceptance suite: one test function per top-level criterion.

Each function asserts the stated thresholds directly, so the -v report
gives one pass/fail line per criterion.
"""

import hashlib
import json
import math
import os
import time

import numpy as np
import pytest

from binaural_masking import cli, metrics, neural, synth
from binaural_masking.audio_io import Signal, write_wav
from binaural_masking.enhance import enhance_binaural
from binaural_masking.hswobm import (
    MaskObjectiveContext,
    compute_hswobm,
    optimize_band_beam,
    optimize_band_exhaustive,
)
from binaural_masking.spatial import mix_at_snr, spatialize, synth_hrir
from binaural_masking.transforms import StftConfig, istft, stft

RATE = 10000
SC = StftConfig()


# ---------------------------------------------------------------- 1. STFT


def test_criterion_stft_roundtrip():
    rng = np.random.default_rng(11)
    t0 = time.monotonic()
    for _ in range(10):
        n = int(rng.integers(500, 30000))
        x = Signal(rng.standard_normal(n), RATE)
        y = istft(stft(x, SC))
        err = np.linalg.norm(y.samples[:n] - x.samples) / np.linalg.norm(x.samples)
        assert err <= 1e-6
    assert time.monotonic() - t0 < 1.0


# --------------------------------------------------- 2. metric identities


def test_criterion_metric_identities(speech):
    assert metrics.stoi(speech, speech, SC) == pytest.approx(1.0, abs=1e-12)
    assert metrics.wstoi(speech, speech, config=SC) == pytest.approx(1.0, abs=1e-12)
    b = spatialize(speech, synth_hrir(30.0, RATE))
    mask = metrics.speech_active_cells(b, SC)
    _, err = metrics.rms_ild_error(b, b, energy_mask=mask, config=SC)
    assert err == pytest.approx(0.0, abs=1e-12)


# ------------------------------------------- 3. brute-force oracle parity


def _oracle_correlation(x, z):
    n = len(x)
    xm = sum(x) / n
    zm = sum(z) / n
    num = sum((x[i] - xm) * z[i] for i in range(n))
    dx = sum((x[i] - xm) ** 2 for i in range(n))
    dz = sum((z[i] - zm) ** 2 for i in range(n))
    return num / math.sqrt(dx * dz)


def _oracle_loss(out, tgt, phi):
    num = 0.0
    wsum = 0.0
    count = 0
    for i in range(out.shape[0]):
        for j in range(out.shape[1]):
            num += phi[i, j] * (out[i, j] - tgt[i, j]) ** 2
            wsum += phi[i, j]
            count += 1
    return num / wsum / count


def test_criterion_oracle_parity():
    rng = np.random.default_rng(12)
    for _ in range(500):
        n = int(rng.integers(3, 40))
        x = rng.random(n) * 10 + 0.01
        z = rng.standard_normal(n)
        got = metrics.cell_correlation(x, z)
        assert got == pytest.approx(_oracle_correlation(list(x), list(z)), abs=1e-12)
    for _ in range(500):
        n, k = int(rng.integers(1, 10)), int(rng.integers(1, 8))
        out = rng.random((n, k))
        tgt = rng.random((n, k))
        phi = rng.random((n, k)) + 0.01
        got = neural.loss(out, tgt, phi, "as_printed")
        assert got == pytest.approx(_oracle_loss(out, tgt, phi), abs=1e-12)


# ------------------------------------------------ 4. mask optimizer suite


def test_criterion_beam_vs_exhaustive():
    rng = np.random.default_rng(13)
    t0 = time.monotonic()
    ratios = []
    for i in range(50):
        M = int(rng.integers(2, 5))
        n = int(rng.integers(M + 1, 17))
        clean = rng.random((1, n)) + 0.05
        noisy = clean + rng.random((1, n)) * 0.8
        ctx = MaskObjectiveContext(clean, noisy, rng.random((1, n)), M=M)
        _, obj_ex = optimize_band_exhaustive(ctx, 0)
        _, obj_full = optimize_band_beam(ctx, 0, beam_width=1 << (M - 1))
        assert obj_full == pytest.approx(obj_ex, abs=1e-12)
        _, obj_64 = optimize_band_beam(ctx, 0, beam_width=64)
        if obj_ex > 0:
            ratios.append(obj_64 / obj_ex)
    assert min(ratios) >= 0.98
    assert time.monotonic() - t0 < 60.0


# ------------------------------------------------------ 5. gradient check


def test_criterion_gradient_check():
    rng = np.random.default_rng(14)
    model = neural.init_model(5, (9, 12, 10, 7), dropout_rate=0.0)
    x = rng.standard_normal((6, 9))
    t = rng.random((6, 7))
    phi = rng.random((6, 7)) + 0.1
    out, cache = neural.forward(model, x, return_cache=True)
    gw, gb = neural.backward(model, cache, t, phi, "as_printed")
    h = 1e-5
    for li in range(len(model.weights)):
        for g, arr in ((gw[li], model.weights[li]), (gb[li], model.biases[li])):
            flat = arr.reshape(-1)
            gflat = g.reshape(-1)
            for idx in range(flat.size):
                orig = flat[idx]
                flat[idx] = orig + h
                lp = neural.loss(neural.forward(model, x), t, phi)
                flat[idx] = orig - h
                lm = neural.loss(neural.forward(model, x), t, phi)
                flat[idx] = orig
                fd = (lp - lm) / (2 * h)
                denom = max(abs(fd), abs(gflat[idx]), 1e-8)
                assert abs(fd - gflat[idx]) / denom < 1e-4


# ------------------------------------- 6/7. oracle pipeline & phase/ILD


@pytest.fixture(scope="module")
def oracle_pipeline():
    speech = synth.synthetic_speech(seed=21, duration_s=2.0, rate=RATE)
    noise = synth.white_noise(seed=22, duration_s=2.5, rate=RATE)
    clean = spatialize(speech, synth_hrir(30.0, RATE))
    nb = spatialize(noise, synth_hrir(0.0, RATE))
    noisy, _ = mix_at_snr(clean, nb, 0.0, rng=np.random.default_rng(23))
    ml, mr = compute_hswobm(clean, noisy, config=SC)
    res = enhance_binaural(noisy, ml.B.astype(float), mr.B.astype(float), config=SC)
    return clean, noisy, res


def test_criterion_end_to_end_oracle(oracle_pipeline):
    t0 = time.monotonic()
    clean, noisy, res = oracle_pipeline
    enhanced = res.signal
    for side in ("left", "right"):
        c, n, e = (getattr(s, side) for s in (clean, noisy, enhanced))
        gain = metrics.fw_segsnr(c, e, SC) - metrics.fw_segsnr(c, n, SC)
        assert gain > 3.0, f"{side} fw_segsnr improvement {gain:.2f} dB"
    stoi_noisy = max(
        metrics.stoi(clean.left, noisy.left, SC),
        metrics.stoi(clean.right, noisy.right, SC),
    )
    stoi_enh = max(
        metrics.stoi(clean.left, enhanced.left, SC),
        metrics.stoi(clean.right, enhanced.right, SC),
    )
    assert stoi_enh - stoi_noisy > 0.0
    mask = metrics.speech_active_cells(clean, SC)
    _, ild_err = metrics.rms_ild_error(
        res.noisy_grids, res.enhanced_grids, energy_mask=mask, config=SC
    )
    assert ild_err < 1.0
    assert time.monotonic() - t0 < 120.0


def test_criterion_phase_preserved(oracle_pipeline):
    _, _, res = oracle_pipeline
    assert metrics.phase_preserved(
        res.noisy_grids, res.enhanced_grids, SC, tol_rad=1e-9
    )


# ------------------------------------------- 8. trained-model sanity


def test_criterion_trained_model_sanity():
    t0 = time.monotonic()
    rng_seed = 31
    xs, ts = [], []
    scenes = []
    from binaural_masking import features as feat
    from binaural_masking.hswobm import compute_hswobm as hswobm_fn

    for i in range(20):
        speech = synth.synthetic_speech(seed=300 + i, duration_s=2.5, rate=RATE)
        noise = synth.white_noise(seed=400 + i, duration_s=3.0, rate=RATE)
        clean = spatialize(speech, synth_hrir(30.0, RATE))
        nb = spatialize(noise, synth_hrir(0.0, RATE))
        noisy, _ = mix_at_snr(clean, nb, 0.0, rng=np.random.default_rng(500 + i))
        ml, mr = hswobm_fn(clean, noisy, config=SC)
        for sig, mask in ((noisy.left, ml), (noisy.right, mr)):
            x = feat.extract_features(sig, SC)
            n = min(len(x), mask.B.shape[1])
            xs.append(x[:n])
            ts.append(mask.B[:, :n].T.astype(np.float64))
        scenes.append((clean, noisy, ml, mr))

    X = np.concatenate(xs)
    T = np.concatenate(ts)
    # utterance-level split: last 6 utterances (12 blocks) are validation
    block_sizes = [len(b) for b in xs]
    starts = np.cumsum([0] + block_sizes)
    val_idx = np.concatenate(
        [np.arange(starts[k], starts[k + 1]) for k in range(28, 40)]
    )
    tr_rows = np.setdiff1d(np.arange(len(X)), val_idx)
    mean = X[tr_rows].mean(axis=0)
    std = X[tr_rows].std(axis=0) + 1e-8
    model = neural.init_model(rng_seed, neural.DEFAULT_DIMS, dropout_rate=0.2)
    cfg = neural.TrainConfig(
        lr=0.3, momentum=0.9, batch_size=128, epochs=40, patience=10,
        seed=rng_seed, normalize="sum_weights_only",
    )
    model, history = neural.train(
        model, (X - mean) / std, T, config=cfg, val_indices=val_idx
    )
    model = neural.fold_standardization(model, mean, std)

    baseline = neural.loss(
        np.full(T[val_idx].shape, 0.5), T[val_idx], None, "sum_weights_only"
    )
    assert history["best_val_loss"] <= 0.8 * baseline, (
        f"val MSE {history['best_val_loss']:.4f} vs 0.8x baseline "
        f"{0.8 * baseline:.4f}"
    )

    # enhancement with estimated masks on a held-out scene
    clean, noisy, _, _ = scenes[-1]
    est_l = neural.forward(model, feat.extract_features(noisy.left, SC)).T
    est_r = neural.forward(model, feat.extract_features(noisy.right, SC)).T
    res = enhance_binaural(noisy, est_l, est_r, config=SC)
    gains = []
    for side in ("left", "right"):
        c, n, e = (getattr(s, side) for s in (clean, noisy, res.signal))
        gains.append(metrics.fw_segsnr(c, e, SC) - metrics.fw_segsnr(c, n, SC))
    assert np.mean(gains) > 0.0, f"fw_segsnr improvements {gains}"
    assert time.monotonic() - t0 < 600.0


# ------------------------------------------------------- 9. determinism


def _run_pipeline(out, corpus, cfg_path):
    base = ["--config", cfg_path]
    assert cli.main(base + ["spatialize", "--out", out, "--corpus", corpus]) == 0
    assert cli.main(base + ["target-mask", "--out", out]) == 0
    assert cli.main(base + ["features", "--out", out]) == 0
    assert cli.main(
        base + ["train", "--out", out, "--model", os.path.join(out, "model.npz")]
    ) == 0
    assert cli.main(base + ["enhance", "--out", out, "--mask-source", "oracle"]) == 0
    assert cli.main(base + ["evaluate", "--out", out, "--plots"]) == 0


def _dir_hashes(d):
    out = {}
    for name in sorted(os.listdir(d)):
        with open(os.path.join(d, name), "rb") as f:
            out[name] = hashlib.sha256(f.read()).hexdigest()
    return out


def test_criterion_determinism(tmp_path):
    corpus = tmp_path / "corpus"
    corpus.mkdir()
    for i in range(2):
        write_wav(
            synth.synthetic_speech(seed=70 + i, duration_s=1.2, rate=RATE),
            corpus / f"utt{i}.wav",
            float32=True,
        )
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(
        json.dumps(
            {
                "scene": {"azimuths": [30.0], "snrs_db": [0.0]},
                "train": {"epochs": 2, "batch_size": 32, "patience": 2},
            }
        )
    )
    a, b = str(tmp_path / "runA"), str(tmp_path / "runB")
    _run_pipeline(a, str(corpus), str(cfg_path))
    _run_pipeline(b, str(corpus), str(cfg_path))
    ha, hb = _dir_hashes(a), _dir_hashes(b)
    assert set(ha) == set(hb)
    diffs = [k for k in ha if ha[k] != hb[k]]
    assert diffs == [], f"non-deterministic artifacts: {diffs}"
