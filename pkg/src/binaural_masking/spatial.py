"""Binaural scene construction: HRIR loading/synthesis, convolution, mixing.

A spherical-head synthetic HRIR (Woodworth ITD + linear ILD) stands in for
external HRIR databases so the whole pipeline can run self-contained; real
measured pairs are ingested from per-azimuth 2-channel WAV files.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .audio_io import BinauralSignal, Signal, active_level

HEAD_RADIUS_M = 0.0875
SPEED_OF_SOUND = 343.0
ILD_DB_PER_DEGREE = 0.15


@dataclass
class HrirPair:
    left: np.ndarray
    right: np.ndarray
    azimuth: float  # degrees, 0 = front, positive = source to the right
    rate: int

    def __post_init__(self):
        self.left = np.asarray(self.left, dtype=np.float64)
        self.right = np.asarray(self.right, dtype=np.float64)
        if len(self.left) < 1 or len(self.right) < 1:
            raise ValueError("impulse responses must have at least one tap")
        if not (np.all(np.isfinite(self.left)) and np.all(np.isfinite(self.right))):
            raise ValueError("impulse responses must be finite")


@dataclass
class SceneSpec:
    source_azimuth: float
    snr_db: float
    noise_azimuth: float = 0.0
    noise_kind: str = "white"


def hrir_filename(azimuth: float) -> str:
    return f"az{int(round(azimuth)):+d}.wav"


def load_hrir(hrir_dir, azimuth: float, rate: int, grid_deg: float = 5.0) -> HrirPair:
    """Load the nearest-azimuth measured pair from a directory of WAVs.

    Files are named ``az{+/-}{degrees}.wav`` on a ``grid_deg`` grid; the
    requested azimuth snaps to the nearest grid point.
    """
    from .audio_io import read_wav

    snapped = grid_deg * round(azimuth / grid_deg)
    path = os.path.join(hrir_dir, hrir_filename(snapped))
    if not os.path.exists(path):
        raise FileNotFoundError(f"no HRIR for azimuth {snapped:+g} deg at {path}")
    pair = read_wav(path)
    if not isinstance(pair, BinauralSignal):
        raise ValueError(f"{path}: HRIR file must have 2 channels")
    if pair.rate != rate:
        raise ValueError(f"{path}: HRIR rate {pair.rate} != pipeline rate {rate}")
    return HrirPair(pair.left.samples, pair.right.samples, snapped, rate)


def woodworth_itd(azimuth_deg: float) -> float:
    """Spherical-head arrival-time difference in seconds (far ear lags)."""
    az = np.deg2rad(abs(azimuth_deg))
    return (HEAD_RADIUS_M / SPEED_OF_SOUND) * (az + np.sin(az))


def _fractional_delay(delay_samples: float, n_taps: int = 64) -> np.ndarray:
    """Windowed-sinc fractional delay filter."""
    center = n_taps // 2
    n = np.arange(n_taps)
    h = np.sinc(n - center - delay_samples)
    h *= np.hanning(n_taps)
    return h


def synth_hrir(azimuth: float, rate: int) -> HrirPair:
    """Spherical-head synthetic HRIR pair.

    ITD from the Woodworth formula applied as a fractional delay to the far
    ear; frequency-independent ILD of 0.15 dB per degree split automatically
    between the ears.  Positive azimuth = source right of center, so the
    right ear leads and is louder.
    """
    if abs(azimuth) > 90.0:
        raise ValueError("azimuth must lie in [-90, +90] degrees")
    itd_samples = woodworth_itd(azimuth) * rate
    ild_db = ILD_DB_PER_DEGREE * abs(azimuth)
    near_gain = 10.0 ** (+ild_db / 40.0)
    far_gain = 10.0 ** (-ild_db / 40.0)

    near = _fractional_delay(0.0)
    far = _fractional_delay(itd_samples)
    # unit-energy filters, so the ILD comes from the gains alone
    near /= np.linalg.norm(near)
    far /= np.linalg.norm(far)
    if azimuth >= 0:
        left, right = far_gain * far, near_gain * near
    else:
        left, right = near_gain * near, far_gain * far
    if azimuth == 0:
        right = left.copy()
    return HrirPair(left, right, azimuth, rate)


def spatialize(mono: Signal, hrir: HrirPair) -> BinauralSignal:
    """Convolve a mono source with an HRIR pair (full convolution)."""
    if mono.rate != hrir.rate:
        raise ValueError("signal and HRIR rates differ")
    left = fftconvolve(mono.samples, hrir.left)
    right = fftconvolve(mono.samples, hrir.right)
    return BinauralSignal(Signal(left, mono.rate), Signal(right, mono.rate))


def rms_level_db(x: np.ndarray) -> float:
    p = float(np.mean(x * x))
    if p <= 0.0:
        raise ValueError("zero-energy signal has no RMS level")
    return 10.0 * np.log10(p)


def mix_at_snr(
    speech: BinauralSignal,
    noise: BinauralSignal,
    snr_db: float,
    rng: np.random.Generator | None = None,
    speech_level: str = "p56",
) -> tuple[BinauralSignal, BinauralSignal]:
    """Add noise scaled by one scalar so the ear-averaged SNR hits ``snr_db``.

    SNR reference: P.56 active speech level (or plain RMS with
    ``speech_level='rms'``) minus noise RMS level, averaged across ears.
    The noise is cropped from a random offset when longer than the speech.
    Returns (mix, scaled_noise_component).
    """
    if speech.rate != noise.rate:
        raise ValueError("speech and noise rates differ")
    n = len(speech)
    if len(noise) < n:
        raise ValueError("noise must be at least as long as the speech")
    offset = 0
    if len(noise) > n:
        rng = rng or np.random.default_rng()
        offset = int(rng.integers(0, len(noise) - n + 1))
    nl = noise.left.samples[offset : offset + n]
    nr = noise.right.samples[offset : offset + n]

    if speech_level == "p56":
        s_db = 0.5 * (active_level(speech.left) + active_level(speech.right))
    elif speech_level == "rms":
        s_db = 0.5 * (
            rms_level_db(speech.left.samples) + rms_level_db(speech.right.samples)
        )
    else:
        raise ValueError(f"unknown speech level reference {speech_level!r}")
    n_db = 0.5 * (rms_level_db(nl) + rms_level_db(nr))

    gain = 10.0 ** ((s_db - n_db - snr_db) / 20.0)
    scaled = BinauralSignal(
        Signal(nl * gain, speech.rate), Signal(nr * gain, speech.rate)
    )
    mix = BinauralSignal(
        Signal(speech.left.samples + scaled.left.samples, speech.rate),
        Signal(speech.right.samples + scaled.right.samples, speech.rate),
    )
    return mix, scaled
