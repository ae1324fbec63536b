"""Per-frame features for mask estimation: 3 x 30 = 90 values per frame.

Subset 1: natural log of ERB-band-averaged log-MMSE gains.
Subset 2: log of the band-averaged enhanced amplitude (gain x noisy).
Subset 3: voiced-speech SNR from a harmonic-summation pitch estimate,
          comparing energy at pitch harmonics against the energy midway
          between consecutive harmonics, clamped to [-20, +30] dB.

Input signals are normalized to 0 dB active level first, so the whole
feature pipeline is level independent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import exp1

from .audio_io import Signal, normalize_active_level
from .transforms import BandMatrix, StftConfig, TFGrid, band_average, erb_bands, stft

N_FEATURE_BANDS = 30
GAIN_FLOOR = 1e-6
AMP_EPS = 1e-8
VSSNR_RANGE_DB = (-20.0, 30.0)


@dataclass
class NoiseTracker:
    """SPP-weighted recursive noise PSD estimate with a fixed prior.

    The posterior speech probability per bin comes from a fixed 0.5 prior
    and fixed 15 dB prior SNR; the noise PSD is updated where speech is
    unlikely.  If a bin stays near-certain speech for 120 consecutive
    frames, a leakage update unsticks the estimate.
    """

    n_bins: int
    alpha_n: float = 0.8
    prior_spp: float = 0.5
    prior_snr_db: float = 15.0
    init_frames: int = 6
    stuck_limit: int = 120
    noise_psd: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.noise_psd is None:
            self.noise_psd = np.zeros(self.n_bins)
        self._init_buf = []
        self._stuck = np.zeros(self.n_bins, dtype=np.int64)

    @property
    def initialized(self) -> bool:
        return len(self._init_buf) >= self.init_frames

    def update(self, power_frame: np.ndarray) -> np.ndarray:
        """Advance the tracker by one frame of |Y|^2; returns the SPP."""
        power_frame = np.asarray(power_frame, dtype=np.float64)
        if not self.initialized:
            self._init_buf.append(power_frame)
            self.noise_psd = np.mean(self._init_buf, axis=0)
            return np.zeros(self.n_bins)
        xi_h1 = 10.0 ** (self.prior_snr_db / 10.0)
        gamma = power_frame / np.maximum(self.noise_psd, 1e-300)
        q = 1.0 - self.prior_spp
        ratio = q / self.prior_spp
        p = 1.0 / (
            1.0
            + ratio * (1.0 + xi_h1) * np.exp(-np.minimum(gamma * xi_h1 / (1.0 + xi_h1), 700.0))
        )
        self._stuck = np.where(p > 0.99, self._stuck + 1, 0)
        leak = self._stuck >= self.stuck_limit
        est = (1.0 - p) * power_frame + p * self.noise_psd
        est = np.where(leak, power_frame, est)
        self._stuck[leak] = 0
        self.noise_psd = self.alpha_n * self.noise_psd + (1.0 - self.alpha_n) * est
        return p


def lsa_gain(xi: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """Ephraim-Malah log-spectral-amplitude gain for given a priori/posteriori SNR."""
    v = np.clip(xi * gamma / (1.0 + xi), 1e-10, 700.0)
    return xi / (1.0 + xi) * np.exp(0.5 * exp1(v))


def logmmse_gain(
    noisy: TFGrid,
    tracker: NoiseTracker | None = None,
    alpha_dd: float = 0.92,
    xi_min_db: float = -25.0,
) -> np.ndarray:
    """Log-MMSE gain grid in (0, 1] with decision-directed a priori SNR.

    The first ``tracker.init_frames`` frames are assumed noise-only to seed
    the noise PSD.
    """
    power = np.abs(noisy.cells) ** 2
    n_bins, n_frames = power.shape
    tracker = tracker or NoiseTracker(n_bins)
    xi_min = 10.0 ** (xi_min_db / 10.0)
    G = np.empty((n_bins, n_frames))
    gain_prev = np.ones(n_bins)
    gamma_prev = np.ones(n_bins)
    for m in range(n_frames):
        tracker.update(power[:, m])
        gamma = power[:, m] / np.maximum(tracker.noise_psd, 1e-300)
        xi = alpha_dd * gain_prev**2 * gamma_prev + (1.0 - alpha_dd) * np.maximum(
            gamma - 1.0, 0.0
        )
        xi = np.maximum(xi, xi_min)
        g = np.clip(lsa_gain(xi, gamma), GAIN_FLOOR, 1.0)
        G[:, m] = g
        gain_prev = g
        gamma_prev = gamma
    return G


def feature_subset1(G: np.ndarray, bands: BandMatrix) -> np.ndarray:
    """ln of band-averaged gains; nonpositive because gains are <= 1."""
    return np.log(band_average(G, bands))


def feature_subset2(G: np.ndarray, noisy: TFGrid, bands: BandMatrix) -> np.ndarray:
    """ln(eps + band-averaged enhanced amplitude estimate)."""
    return np.log(AMP_EPS + band_average(G * np.abs(noisy.cells), bands))


def estimate_f0(
    power: np.ndarray,
    freqs: np.ndarray,
    f0_range: tuple[float, float] = (60.0, 400.0),
    n_harmonics: int = 10,
    voicing_ratio: float = 1.5,
) -> tuple[float, bool]:
    """Harmonic-summation pitch estimate for one frame's power spectrum.

    Returns (f0_hz, voiced).  A frame is voiced when the best harmonic sum
    exceeds ``voicing_ratio`` times the median over candidates.
    """
    if power.sum() <= 1e-20:
        return 0.0, False
    nyq = freqs[-1]
    candidates = np.arange(f0_range[0], f0_range[1] + 1e-9, 1.0)
    scores = np.zeros(len(candidates))
    for h in range(1, n_harmonics + 1):
        fh = candidates * h
        ok = fh < nyq
        scores[ok] += np.interp(fh[ok], freqs, power)
    best = int(np.argmax(scores))
    med = float(np.median(scores))
    voiced = scores[best] > voicing_ratio * med and med >= 0.0
    return float(candidates[best]), bool(voiced)


def vssnr_frame(
    power_col: np.ndarray,
    freqs: np.ndarray,
    f0: float,
    bands: BandMatrix,
    n_harmonics: int = 10,
    clamp: bool = True,
) -> np.ndarray:
    """Per-band harmonic-vs-midpoint energy ratio in dB for one frame.

    Bands containing no harmonic stay at the -20 dB floor.  ``clamp=False``
    returns the raw ratios (floored bands become NaN) for diagnostics.
    """
    lo_db, hi_db = VSSNR_RANGE_DB
    n_bands = bands.weights.shape[0]
    harm = f0 * np.arange(1, n_harmonics + 1)
    mid = f0 * (np.arange(1, n_harmonics + 1) + 0.5)
    harm = harm[harm < freqs[-1]]
    mid = mid[mid < freqs[-1]]
    e_harm = np.interp(harm, freqs, power_col)
    e_mid = np.interp(mid, freqs, power_col)
    # Triangular band weights at the harmonic/midpoint frequencies, by
    # interpolating each row over the bin grid.
    w_harm = np.array([np.interp(harm, freqs, bands.weights[i]) for i in range(n_bands)])
    w_mid = np.array([np.interp(mid, freqs, bands.weights[i]) for i in range(n_bands)])
    tiny = 1e-14
    ws_h = w_harm.sum(axis=1)
    ws_m = w_mid.sum(axis=1)
    # weighted averages, not sums, so unequal weight mass at harmonic vs
    # midpoint frequencies does not bias the ratio
    num = (w_harm @ e_harm) / np.maximum(ws_h, tiny)
    den = (w_mid @ e_mid) / np.maximum(ws_m, tiny)
    covered = (ws_h > 0) & (ws_m > 0)
    raw = 10.0 * np.log10((num + tiny) / (den + tiny))
    if not clamp:
        out = np.full(n_bands, np.nan)
        out[covered] = raw[covered]
        return out
    out = np.full(n_bands, lo_db)
    out[covered] = np.clip(raw[covered], lo_db, hi_db)
    return out


def feature_subset3(
    noisy: TFGrid,
    bands: BandMatrix,
    n_harmonics: int = 10,
) -> np.ndarray:
    """Voiced-speech SNR per band in dB, clamped to [-20, +30].

    Per frame, energy interpolated at pitch harmonics is compared against
    the energy halfway between consecutive harmonics, aggregated into the
    feature bands with the triangular weights.  Unvoiced frames floor at
    -20 dB.
    """
    lo_db, _ = VSSNR_RANGE_DB
    power = np.abs(noisy.cells) ** 2
    freqs = noisy.bin_freqs
    n_bands = bands.weights.shape[0]
    out = np.full((n_bands, noisy.n_frames), lo_db)
    for m in range(noisy.n_frames):
        f0, voiced = estimate_f0(power[:, m], freqs, n_harmonics=n_harmonics)
        if not voiced:
            continue
        out[:, m] = vssnr_frame(power[:, m], freqs, f0, bands, n_harmonics)
    return out


def extract_features(
    noisy_channel: Signal,
    config: StftConfig = StftConfig(),
    bands: BandMatrix | None = None,
) -> np.ndarray:
    """Full feature matrix (frames x 90) for one noisy channel."""
    normed = normalize_active_level(noisy_channel, 0.0)
    grid = stft(normed, config)
    if bands is None:
        bands = erb_bands(
            N_FEATURE_BANDS, config.n_fft(noisy_channel.rate), noisy_channel.rate
        )
    G = logmmse_gain(grid)
    f1 = feature_subset1(G, bands)
    f2 = feature_subset2(G, grid, bands)
    f3 = feature_subset3(grid, bands)
    return np.concatenate([f1, f2, f3], axis=0).T.copy()


def save_features(features: np.ndarray, path, config_hash: str = "") -> None:
    features = np.asarray(features, dtype=np.float32)
    np.savez(
        path,
        version="feat-v1",
        rows=features.shape[0],
        cols=features.shape[1],
        config_hash=config_hash,
        values=features,
    )


def load_features(path, expect_hash: str | None = None) -> np.ndarray:
    with np.load(path, allow_pickle=False) as f:
        if str(f["version"]) != "feat-v1":
            raise ValueError(f"{path}: unsupported feature file version")
        if expect_hash is not None and str(f["config_hash"]) != expect_hash:
            raise ValueError(f"{path}: config hash mismatch")
        return np.asarray(f["values"], dtype=np.float64)
