"""Intrusive evaluation: STOI, WSTOI, fw-segSNR, ILD error, phase checks.

The intelligibility scores correlate clean and degraded spectral envelopes
over 30-frame modulation windows after amplitude clipping with
lambda = 6.623.  STOI works on 15 third-octave bands; WSTOI on the 129
individual STFT bins with a per-cell weight grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .audio_io import BinauralSignal, Signal
from .transforms import StftConfig, TFGrid, stft, third_octave_bands

CLIP_LAMBDA = 6.623
MOD_WINDOW = 30
SILENCE_RANGE_DB = 40.0


def clip_band_amplitude(Yj, Xj, x_vec, y_vec, lam: float = CLIP_LAMBDA):
    """Clip a degraded cell amplitude to lam * (||y||/||x||) * clean amplitude."""
    x_norm = float(np.linalg.norm(x_vec))
    if x_norm == 0.0:
        raise ValueError("clean modulation vector has zero norm; cell excluded")
    y_norm = float(np.linalg.norm(y_vec))
    return np.minimum(Yj, lam * (y_norm / x_norm) * Xj)


def cell_correlation(x, z, centered_numerator: bool = False) -> float:
    """Correlation-style contribution of one TF cell.

    As printed, the numerator leaves the degraded vector uncentered while
    the denominator centers it; ``centered_numerator=True`` selects the
    classical fully-centered form.
    """
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    xc = x - x.mean()
    zc = z - z.mean()
    den = np.linalg.norm(xc) * np.linalg.norm(zc)
    if den == 0.0:
        raise ValueError("zero-variance vector; cell contributes nothing")
    num = float(xc @ (zc if centered_numerator else z))
    return num / den


def modulation_score(
    clean_bands: np.ndarray,
    degraded_bands: np.ndarray,
    weights: np.ndarray | None = None,
    M: int = MOD_WINDOW,
    lam: float = CLIP_LAMBDA,
    centered_numerator: bool = False,
) -> float:
    """Weighted mean cell correlation over all (band, frame) cells.

    Inputs are nonnegative (band, frame) amplitude grids.  Cells with a
    degenerate clean or degraded modulation vector are excluded from the
    mean (their weight is dropped).
    """
    X = np.asarray(clean_bands, dtype=np.float64)
    Y = np.asarray(degraded_bands, dtype=np.float64)
    if X.shape != Y.shape:
        raise ValueError("band grids must have equal shapes")
    n_bands, n_frames = X.shape
    if n_frames < M:
        raise ValueError(f"need at least {M} frames, got {n_frames}")
    if weights is None:
        W = np.ones((n_bands, n_frames))
    else:
        W = np.asarray(weights, dtype=np.float64)
        if W.shape != X.shape:
            raise ValueError("weight grid shape mismatch")
        if np.sum(W) <= 0:
            raise ValueError("weights must have a positive sum")

    total = 0.0
    total_w = 0.0
    for m in range(M - 1, n_frames):
        xw = X[:, m - M + 1 : m + 1]
        yw = Y[:, m - M + 1 : m + 1]
        x_norm = np.linalg.norm(xw, axis=1)
        y_norm = np.linalg.norm(yw, axis=1)
        valid = x_norm > 0
        ratio = np.where(valid, y_norm / np.where(valid, x_norm, 1.0), 0.0)
        yt = np.minimum(yw, lam * ratio[:, None] * xw)
        xc = xw - xw.mean(axis=1, keepdims=True)
        ytc = yt - yt.mean(axis=1, keepdims=True)
        xc_norm = np.linalg.norm(xc, axis=1)
        ytc_norm = np.linalg.norm(ytc, axis=1)
        valid &= (xc_norm > 0) & (ytc_norm > 0)
        num = np.einsum("bm,bm->b", xc, ytc if centered_numerator else yt)
        d = np.where(valid, num / np.where(valid, xc_norm * ytc_norm, 1.0), 0.0)
        w = W[:, m]
        total += float(np.sum(w * d * valid))
        total_w += float(np.sum(w * valid))
    if total_w <= 0:
        raise ValueError("no valid cells for the modulation score")
    return total / total_w


def _remove_silent_frames(
    clean_grid: TFGrid, others: list[np.ndarray], range_db: float = SILENCE_RANGE_DB
):
    """Drop frames whose clean frame energy is > range_db below the max."""
    energy = np.sum(np.abs(clean_grid.cells) ** 2, axis=0)
    peak = energy.max()
    if peak <= 0:
        raise ValueError("clean signal has no energy")
    keep = energy > peak * 10.0 ** (-range_db / 10.0)
    return [clean_grid.cells[:, keep]] + [o[:, keep] for o in others], keep


def _check_pair(clean: Signal, degraded: Signal):
    if clean.rate != degraded.rate:
        raise ValueError("sample rates differ")
    if len(clean) != len(degraded):
        raise ValueError("signals must have equal length")


def stoi(
    clean: Signal,
    degraded: Signal,
    config: StftConfig = StftConfig(),
    J: int = 15,
    silence_range_db: float = SILENCE_RANGE_DB,
    centered_numerator: bool = False,
) -> float:
    """Short-time objective intelligibility over J third-octave bands."""
    _check_pair(clean, degraded)
    cg = stft(clean, config)
    dg = stft(degraded, config)
    (cc, dc), keep = _remove_silent_frames(cg, [dg.cells], silence_range_db)
    if int(keep.sum()) < MOD_WINDOW:
        raise ValueError("fewer than 30 active frames after silence exclusion")
    cg2 = TFGrid(cc, config, clean.rate, clean.__len__())
    dg2 = TFGrid(dc, config, clean.rate, clean.__len__())
    Xb = third_octave_bands(cg2, J)
    Yb = third_octave_bands(dg2, J)
    return modulation_score(Xb, Yb, centered_numerator=centered_numerator)


def wstoi(
    clean: Signal,
    degraded: Signal,
    weights: np.ndarray | None = None,
    config: StftConfig = StftConfig(),
    silence_range_db: float = SILENCE_RANGE_DB,
    centered_numerator: bool = False,
) -> float:
    """Weighted STOI on individual STFT bins.

    ``weights`` is a (bins, frames) grid matching the STFT of the inputs;
    None means uniform.
    """
    _check_pair(clean, degraded)
    cg = stft(clean, config)
    dg = stft(degraded, config)
    others = [dg.cells]
    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != cg.cells.shape:
            raise ValueError("weight grid must match the STFT dimensions")
        if np.sum(weights) <= 0:
            raise ValueError("weights are all zero")
        others.append(weights)
    kept, keep = _remove_silent_frames(cg, others, silence_range_db)
    if int(keep.sum()) < MOD_WINDOW:
        raise ValueError("fewer than 30 active frames after silence exclusion")
    cc, dc = kept[0], kept[1]
    w = kept[2] if weights is not None else None
    return modulation_score(
        np.abs(cc), np.abs(dc), weights=w, centered_numerator=centered_numerator
    )


def a_weighting(freqs_hz: np.ndarray) -> np.ndarray:
    """IEC 61672 A-weighting magnitude response (linear, 1.0 near 1 kHz)."""
    f2 = np.asarray(freqs_hz, dtype=np.float64) ** 2
    num = 12194.0**2 * f2**2
    den = (
        (f2 + 20.6**2)
        * np.sqrt((f2 + 107.7**2) * (f2 + 737.9**2))
        * (f2 + 12194.0**2)
    )
    r = np.where(den > 0, num / np.maximum(den, 1e-30), 0.0)
    return r / 0.7943  # normalize so the 1 kHz response is ~1


def fw_segsnr(
    clean: Signal,
    processed: Signal,
    config: StftConfig = StftConfig(),
    clamp_db: tuple[float, float] = (-10.0, 35.0),
) -> float:
    """A-weighted frequency segmental SNR, per-frame clamped then averaged."""
    _check_pair(clean, processed)
    cg = stft(clean, config)
    pg = stft(processed, config)
    w = a_weighting(cg.bin_freqs) ** 2  # power-domain weighting
    sig = w[:, None] * np.abs(cg.cells) ** 2
    err = w[:, None] * np.abs(cg.cells - pg.cells) ** 2
    num = sig.sum(axis=0)
    den = err.sum(axis=0)
    valid = num > 0
    if not np.any(valid):
        raise ValueError("clean signal has no weighted energy")
    with np.errstate(divide="ignore"):
        snr = 10.0 * np.log10(num[valid] / np.maximum(den[valid], 1e-300))
    snr = np.clip(snr, clamp_db[0], clamp_db[1])
    return float(np.mean(snr))


ILD_EPS = 1e-10


def ild_map(
    b: BinauralSignal, config: StftConfig = StftConfig()
) -> tuple[np.ndarray, np.ndarray]:
    """Per-cell interaural level difference in dB and a validity mask."""
    lg = stft(b.left, config)
    rg = stft(b.right, config)
    return ild_map_from_grids(lg.cells, rg.cells)


def ild_map_from_grids(left_cells, right_cells):
    lmag = np.abs(left_cells)
    rmag = np.abs(right_cells)
    valid = (lmag >= ILD_EPS) & (rmag >= ILD_EPS)
    ild = np.zeros(lmag.shape)
    ild[valid] = 20.0 * np.log10(lmag[valid] / rmag[valid])
    return ild, valid


def speech_active_cells(
    clean: BinauralSignal, config: StftConfig = StftConfig(), range_db: float = 40.0
) -> np.ndarray:
    """Cells within range_db of the peak clean-speech cell energy (either ear)."""
    lg = stft(clean.left, config)
    rg = stft(clean.right, config)
    power = np.maximum(np.abs(lg.cells) ** 2, np.abs(rg.cells) ** 2)
    peak = power.max()
    if peak <= 0:
        raise ValueError("clean reference has no energy")
    return power > peak * 10.0 ** (-range_db / 10.0)


def rms_ild_error(
    reference,
    processed,
    energy_mask: np.ndarray | None = None,
    config: StftConfig = StftConfig(),
) -> tuple[np.ndarray, float]:
    """Per-frequency RMS ILD error (dB) and its mean over frequencies.

    Arguments may be BinauralSignal or (left_cells, right_cells) TF grids;
    the grid form measures cue preservation in the domain where the
    enhancement gains were applied, free of overlap-add re-analysis
    leakage.  Only cells valid in both maps (and flagged by
    ``energy_mask`` when given) contribute; frequencies with no valid
    cells are NaN in the vector and omitted from the scalar.
    """
    def as_map(obj):
        if isinstance(obj, BinauralSignal):
            return ild_map(obj, config)
        left, right = obj
        return ild_map_from_grids(np.asarray(left), np.asarray(right))

    ild_ref, valid_ref = as_map(reference)
    ild_proc, valid_proc = as_map(processed)
    n = min(ild_ref.shape[1], ild_proc.shape[1])
    ild_ref, ild_proc = ild_ref[:, :n], ild_proc[:, :n]
    valid = valid_ref[:, :n] & valid_proc[:, :n]
    if energy_mask is not None:
        valid &= energy_mask[:, :n]
    diff2 = (ild_ref - ild_proc) ** 2
    counts = valid.sum(axis=1)
    per_freq = np.full(ild_ref.shape[0], np.nan)
    has = counts > 0
    per_freq[has] = np.sqrt(
        np.sum(diff2 * valid, axis=1)[has] / counts[has]
    )
    if not np.any(has):
        raise ValueError("no valid cells for the ILD error")
    return per_freq, float(np.mean(per_freq[has]))


def phase_preserved(
    noisy, enhanced, config: StftConfig = StftConfig(), tol_rad: float = 1e-9
) -> bool:
    """True iff every nonzero enhanced cell keeps the noisy cell's phase.

    Accepts BinauralSignal or (left_grid, right_grid) TF-cell pairs; the
    grid form checks the domain where the enhancement gains were applied.
    """
    def grids(obj):
        if isinstance(obj, BinauralSignal):
            return stft(obj.left, config).cells, stft(obj.right, config).cells
        left, right = obj
        return np.asarray(left), np.asarray(right)

    for nc, ec in zip(grids(noisy), grids(enhanced)):
        n = min(nc.shape[1], ec.shape[1])
        nc, ec = nc[:, :n], ec[:, :n]
        check = (np.abs(ec) > 0) & (np.abs(nc) > 0)
        if not np.any(check):
            continue
        dphi = np.angle(ec[check] * np.conj(nc[check]))
        if np.max(np.abs(dphi)) > tol_rad:
            return False
    return True


@dataclass
class MetricReport:
    """Per-utterance evaluation results, serializable to a JSON object."""

    stoi_left: float
    stoi_right: float
    stoi_better_ear: float
    wstoi_left: float
    wstoi_right: float
    wstoi_better_ear: float
    fw_segsnr_left: float
    fw_segsnr_right: float
    rms_ild_error: float
    rms_ild_error_per_freq: list = field(default_factory=list)
    phase_preserved: bool = True
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "stoi_left": self.stoi_left,
            "stoi_right": self.stoi_right,
            "stoi_better_ear": self.stoi_better_ear,
            "wstoi_left": self.wstoi_left,
            "wstoi_right": self.wstoi_right,
            "wstoi_better_ear": self.wstoi_better_ear,
            "fw_segsnr_left": self.fw_segsnr_left,
            "fw_segsnr_right": self.fw_segsnr_right,
            "rms_ild_error": self.rms_ild_error,
            "rms_ild_error_per_freq": self.rms_ild_error_per_freq,
            "phase_preserved": self.phase_preserved,
        }
        d.update(self.extras)
        return d
