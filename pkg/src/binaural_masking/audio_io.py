"""WAV ingestion/emission and active-speech-level handling.

Levels follow the ITU-T P.56 method B construction (envelope recursion with
a 30 ms time constant, 200 ms hangover and a 15.9 dB margin).  Levels are
reported in dB relative to unit RMS, so downstream processing can be made
level independent by normalizing the active level to a fixed target.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile


class AudioFormatError(Exception):
    """Malformed or unsupported WAV content."""


class UndefinedLevelError(Exception):
    """Raised when a signal has no measurable active speech level."""


@dataclass
class Signal:
    """Mono time-domain signal, linear amplitude nominally in [-1, 1]."""

    samples: np.ndarray
    rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.rate <= 0:
            raise ValueError("sample rate must be positive")
        if self.samples.ndim != 1:
            raise ValueError("Signal expects a 1-D sample array")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples must be finite")

    def __len__(self):
        return len(self.samples)

    def scaled(self, gain: float) -> "Signal":
        return Signal(self.samples * gain, self.rate)


@dataclass
class BinauralSignal:
    """Paired left/right channels at a common rate and length."""

    left: Signal
    right: Signal

    def __post_init__(self):
        if self.left.rate != self.right.rate:
            raise ValueError("left/right sample rates differ")
        if len(self.left) != len(self.right):
            raise ValueError("left/right lengths differ")

    @property
    def rate(self) -> int:
        return self.left.rate

    def __len__(self):
        return len(self.left)

    def scaled(self, gain: float) -> "BinauralSignal":
        return BinauralSignal(self.left.scaled(gain), self.right.scaled(gain))


def read_wav(path) -> Signal | BinauralSignal:
    """Read a PCM-16 or float-32 WAV as Signal (mono) or BinauralSignal.

    Integer samples are scaled by 1/32768 so full-scale positive is
    32767/32768.  Channel 0 maps to the left ear.
    """
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except ValueError as exc:
        raise AudioFormatError(f"{path}: {exc}") from exc

    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        x = data.astype(np.float64)
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    else:
        raise AudioFormatError(f"{path}: unsupported sample encoding {data.dtype}")

    if x.ndim == 1:
        return Signal(x, int(rate))
    if x.ndim == 2 and x.shape[1] == 2:
        return BinauralSignal(Signal(x[:, 0], int(rate)), Signal(x[:, 1], int(rate)))
    raise AudioFormatError(f"{path}: expected 1 or 2 channels, got shape {x.shape}")


def write_wav(signal: Signal | BinauralSignal, path, float32: bool = False) -> None:
    """Write a WAV file; PCM-16 by default, IEEE float-32 on request.

    Samples outside [-1, 1] are clipped with a warning before PCM encoding.
    """
    if isinstance(signal, BinauralSignal):
        data = np.stack([signal.left.samples, signal.right.samples], axis=1)
        rate = signal.rate
    else:
        data = signal.samples
        rate = signal.rate

    if float32:
        wavfile.write(path, rate, data.astype(np.float32))
        return

    if data.size and np.max(np.abs(data)) > 1.0:
        warnings.warn(f"{path}: samples clipped to [-1, 1] for PCM-16 output")
        data = np.clip(data, -1.0, 1.0)
    pcm = np.round(data * 32768.0)
    pcm = np.clip(pcm, -32768, 32767).astype(np.int16)
    wavfile.write(path, rate, pcm)


def _p56_envelope(x: np.ndarray, rate: int) -> np.ndarray:
    """Two-stage exponential envelope of |x| with a 30 ms time constant."""
    g = float(np.exp(-1.0 / (0.03 * rate)))
    from scipy.signal import lfilter

    p = lfilter([1.0 - g], [1.0, -g], np.abs(x))
    q = lfilter([1.0 - g], [1.0, -g], p)
    return q


def active_level(signal: Signal, margin_db: float = 15.9) -> float:
    """ITU-T P.56 active speech level in dB relative to unit RMS.

    The level is the long-term power over samples whose smoothed envelope
    exceeds an activity threshold; the threshold is chosen so that the gap
    between level and threshold equals ``margin_db``.  A 200 ms hangover
    keeps short inter-syllable gaps inside the active region.
    """
    x = signal.samples
    if len(x) < int(0.1 * signal.rate):
        raise ValueError("signal shorter than 100 ms")
    sq = float(np.sum(x * x))
    if sq <= 0.0:
        raise UndefinedLevelError("all-zero signal has no active level")

    env = _p56_envelope(x, signal.rate)
    hang = int(round(0.2 * signal.rate))

    # Geometric ladder of candidate thresholds from full scale downwards.
    n_thresh = 64
    c = 2.0 ** (-np.arange(n_thresh, dtype=np.float64))

    # Activity count per threshold, with hangover.  env is compared against
    # each threshold; counts are monotone in the threshold so a scalar loop
    # over the ladder is fine.
    a = np.zeros(n_thresh, dtype=np.int64)
    for j in range(n_thresh):
        active = env > c[j]
        if hang > 0 and np.any(active):
            idx = np.flatnonzero(active)
            ends = np.minimum(idx + hang, len(x) - 1)
            run = np.zeros(len(x) + 1, dtype=np.int64)
            np.add.at(run, idx, 1)
            np.add.at(run, ends + 1, -1)
            active = np.cumsum(run[:-1]) > 0
        a[j] = int(np.count_nonzero(active))

    margin = margin_db
    prev_diff = None
    for j in range(n_thresh):
        if a[j] == 0:
            continue
        level_db = 10.0 * np.log10(sq / a[j])
        thresh_db = 20.0 * np.log10(c[j])
        diff = level_db - thresh_db
        if diff >= margin:
            if prev_diff is None:
                return float(level_db)
            # Interpolate between ladder rungs j-1 and j on the dB axis.
            lev_prev, diff_prev = prev_level, prev_diff
            frac = (margin - diff_prev) / (diff - diff_prev)
            return float(lev_prev + frac * (level_db - lev_prev))
        prev_diff = diff
        prev_level = level_db
    raise UndefinedLevelError("active level not found within threshold ladder")


def normalize_active_level(signal: Signal, target_db: float = 0.0) -> Signal:
    """Scale a signal so its P.56 active level equals ``target_db``."""
    level = active_level(signal)
    gain = 10.0 ** ((target_db - level) / 20.0)
    return signal.scaled(gain)


def normalize_binaural_active_level(
    b: BinauralSignal, target_db: float = 0.0
) -> BinauralSignal:
    """Joint normalization: a single gain from the better-level channel.

    Using one gain for both ears keeps the interaural level difference
    intact.
    """
    level = max(active_level(b.left), active_level(b.right))
    gain = 10.0 ** ((target_db - level) / 20.0)
    return b.scaled(gain)
