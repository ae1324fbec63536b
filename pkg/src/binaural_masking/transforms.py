"""STFT analysis/synthesis and band aggregation.

All TF processing in the package runs on one-sided spectra from a
50%-overlapping periodic Hann window of 25.6 ms (256 samples, 129 bins at
the 10 kHz pipeline rate).  Third-octave and ERB-spaced triangular band
matrices are built here and shared by the metrics, feature and mask code.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .audio_io import Signal


@dataclass(frozen=True)
class StftConfig:
    window_ms: float = 25.6
    overlap: float = 0.5
    window: str = "hann"
    fft_len: int | None = None  # defaults to the window length in samples

    def win_samples(self, rate: int) -> int:
        n = int(round(self.window_ms * 1e-3 * rate))
        if n % 2:
            raise ValueError("window length must be an even number of samples")
        return n

    def hop_samples(self, rate: int) -> int:
        if not 0.0 < self.overlap < 1.0:
            raise ValueError("overlap must be in (0, 1)")
        return int(round(self.win_samples(rate) * (1.0 - self.overlap)))

    def n_fft(self, rate: int) -> int:
        k = self.fft_len if self.fft_len is not None else self.win_samples(rate)
        if k < self.win_samples(rate):
            raise ValueError("fft_len shorter than the analysis window")
        return k


@dataclass
class TFGrid:
    """One-sided complex short-time spectrum, indexed (bin k, frame m)."""

    cells: np.ndarray  # complex, shape (n_bins, n_frames)
    config: StftConfig
    rate: int
    n_samples: int  # original signal length, for exact resynthesis

    @property
    def n_bins(self) -> int:
        return self.cells.shape[0]

    @property
    def n_frames(self) -> int:
        return self.cells.shape[1]

    @property
    def bin_freqs(self) -> np.ndarray:
        k = self.config.n_fft(self.rate)
        return np.arange(self.n_bins) * self.rate / k


def _window(config: StftConfig, rate: int) -> np.ndarray:
    n = config.win_samples(rate)
    if config.window != "hann":
        raise ValueError(f"unsupported window {config.window!r}")
    # Periodic Hann: COLA at 50% overlap, squared sum constant 0.75.
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft(signal: Signal, config: StftConfig = StftConfig()) -> TFGrid:
    """Analyze a signal into a one-sided TF grid; last frame zero-padded."""
    x = signal.samples
    rate = signal.rate
    win = _window(config, rate)
    n_win = len(win)
    hop = config.hop_samples(rate)
    if len(x) < n_win:
        raise ValueError("signal shorter than one analysis window")
    # Lead-in of one hop so the first samples are not seen solely through
    # the head of the first window (where a periodic Hann vanishes).
    n_frames = 1 + int(np.ceil(len(x) / hop))
    padded = np.zeros((n_frames - 1) * hop + n_win)
    padded[hop : hop + len(x)] = x
    idx = np.arange(n_win)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = padded[idx] * win
    k = config.n_fft(rate)
    cells = np.fft.rfft(frames, n=k, axis=1).T
    return TFGrid(cells=cells, config=config, rate=rate, n_samples=len(x))


def istft(grid: TFGrid) -> Signal:
    """Weighted overlap-add resynthesis (LSE inverse of stft)."""
    config = grid.config
    rate = grid.rate
    win = _window(config, rate)
    n_win = len(win)
    hop = config.hop_samples(rate)
    if config.overlap != 0.5:
        raise ValueError("istft requires the 50%-overlap COLA configuration")
    k = config.n_fft(rate)
    frames = np.fft.irfft(grid.cells.T, n=k, axis=1)[:, :n_win]
    n_frames = grid.n_frames
    total = (n_frames - 1) * hop + n_win
    out = np.zeros(total)
    norm = np.zeros(total)
    wsq = win * win
    for m in range(n_frames):
        sl = slice(m * hop, m * hop + n_win)
        out[sl] += frames[m] * win
        norm[sl] += wsq
    out /= np.maximum(norm, 1e-12)
    return Signal(out[hop : hop + grid.n_samples], rate)


def third_octave_centers(J: int = 15, lowest_hz: float = 150.0) -> np.ndarray:
    return lowest_hz * 2.0 ** (np.arange(J) / 3.0)


def third_octave_bands(grid: TFGrid, J: int = 15) -> np.ndarray:
    """Band amplitudes sqrt(sum |X|^2) over J third-octave bands.

    Centers start at 150 Hz; the last band is truncated at Nyquist.  Raises
    if fewer than J bands contain at least one bin.
    """
    centers = third_octave_centers(J)
    lo = centers / 2.0 ** (1.0 / 6.0)
    hi = centers * 2.0 ** (1.0 / 6.0)
    nyq = grid.rate / 2.0
    hi = np.minimum(hi, nyq)
    freqs = grid.bin_freqs
    power = np.abs(grid.cells) ** 2
    bands = np.zeros((J, grid.n_frames))
    for j in range(J):
        if lo[j] >= nyq:
            raise ValueError(f"third-octave band {j + 1} lies beyond Nyquist")
        sel = (freqs >= lo[j]) & (freqs < hi[j])
        if not np.any(sel):
            raise ValueError(f"third-octave band {j + 1} contains no bins")
        bands[j] = np.sqrt(np.sum(power[sel], axis=0))
    return bands


@dataclass
class BandMatrix:
    """Nonnegative band-weight rows over STFT bins, ordered by center."""

    weights: np.ndarray  # (n_bands, n_bins)
    centers: np.ndarray  # Hz per band

    def __post_init__(self):
        if np.any(self.weights < 0):
            raise ValueError("band weights must be nonnegative")
        if np.any(self.weights.sum(axis=1) <= 0):
            raise ValueError("each band row needs a positive sum")
        if np.any(np.diff(self.centers) <= 0):
            raise ValueError("band centers must be increasing")


def erb_rate(f_hz):
    """ERB-rate scale: 21.4 * log10(1 + 0.00437 f)."""
    return 21.4 * np.log10(1.0 + 0.00437 * np.asarray(f_hz, dtype=np.float64))


def erb_rate_inv(e):
    return (10.0 ** (np.asarray(e, dtype=np.float64) / 21.4) - 1.0) / 0.00437


def erb_bands(
    n_bands: int = 30,
    n_fft: int = 256,
    rate: int = 10000,
    f_lo: float = 100.0,
    f_hi_frac: float = 0.95,
) -> BandMatrix:
    """Triangular bands with apexes equally spaced on the ERB-rate scale.

    Apexes run from ``f_lo`` to ``f_hi_frac * Nyquist``; each triangle spans
    its neighbours' centers (edge triangles mirror the local spacing).  A
    band whose triangle misses every bin falls back to its nearest bin so
    every row keeps a positive sum.
    """
    if n_bands < 2:
        raise ValueError("need at least 2 bands")
    nyq = rate / 2.0
    e_centers = np.linspace(erb_rate(f_lo), erb_rate(f_hi_frac * nyq), n_bands)
    spacing = e_centers[1] - e_centers[0]
    e_edges_lo = np.concatenate([[e_centers[0] - spacing], e_centers[:-1]])
    e_edges_hi = np.concatenate([e_centers[1:], [e_centers[-1] + spacing]])

    n_bins = n_fft // 2 + 1
    e_bins = erb_rate(np.arange(n_bins) * rate / n_fft)
    weights = np.zeros((n_bands, n_bins))
    for i in range(n_bands):
        up = (e_bins - e_edges_lo[i]) / (e_centers[i] - e_edges_lo[i])
        down = (e_edges_hi[i] - e_bins) / (e_edges_hi[i] - e_centers[i])
        tri = np.minimum(up, down)
        weights[i] = np.maximum(tri, 0.0)
        if weights[i].sum() <= 0.0:
            weights[i, np.argmin(np.abs(e_bins - e_centers[i]))] = 1.0
    return BandMatrix(weights=weights, centers=erb_rate_inv(e_centers))


def band_average(values: np.ndarray, bands: BandMatrix) -> np.ndarray:
    """Per-band weighted mean of a (bin, frame) grid."""
    values = np.asarray(values)
    if values.shape[0] != bands.weights.shape[1]:
        raise ValueError("grid bin count does not match the band matrix")
    sums = bands.weights @ values
    return sums / bands.weights.sum(axis=1, keepdims=True)
