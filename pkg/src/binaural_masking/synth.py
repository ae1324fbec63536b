"""Synthetic test material: speech-like harmonic utterances and noise.

The speech generator produces a voiced harmonic complex with a wandering
fundamental, syllabic amplitude modulation and short pauses, which is enough
structure for the intelligibility metrics and the mask optimizer to behave
as they do on real speech.  Used by the test suite and for smoke-running
the pipeline without a licensed corpus.
"""

from __future__ import annotations

import numpy as np

from .audio_io import BinauralSignal, Signal


def synthetic_speech(
    seed: int,
    duration_s: float = 2.0,
    rate: int = 10000,
    f0_lo: float = 100.0,
    f0_hi: float = 220.0,
    n_harmonics: int = 12,
    syllable_rate_hz: float = 4.0,
) -> Signal:
    """Speech-like harmonic signal with pitch drift and syllabic envelope."""
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * rate))
    t = np.arange(n) / rate

    # Slowly wandering fundamental: smoothed random walk inside [f0_lo, f0_hi].
    n_knots = max(4, int(duration_s * 3))
    knots = rng.uniform(f0_lo, f0_hi, size=n_knots)
    f0 = np.interp(t, np.linspace(0, duration_s, n_knots), knots)
    phase = 2.0 * np.pi * np.cumsum(f0) / rate

    x = np.zeros(n)
    for h in range(1, n_harmonics + 1):
        if h * f0_hi >= 0.49 * rate:
            break
        amp = h ** (-1.0)  # spectral tilt
        x += amp * np.sin(h * phase + rng.uniform(0, 2 * np.pi))

    # Syllabic envelope: raised-cosine bursts with occasional gaps.
    syl = 0.5 - 0.5 * np.cos(
        2.0 * np.pi * syllable_rate_hz * t + rng.uniform(0, 2 * np.pi)
    )
    syl = 0.15 + 0.85 * syl
    n_gaps = rng.integers(1, 3)
    for _ in range(n_gaps):
        g0 = rng.uniform(0.1, 0.8) * duration_s
        g1 = g0 + rng.uniform(0.05, 0.15) * duration_s
        fade = np.clip((t - g0) / 0.01, 0, 1) * np.clip((g1 - t) / 0.01, 0, 1)
        syl *= 1.0 - 0.98 * np.clip(fade, 0, 1)

    x *= syl
    x /= np.max(np.abs(x)) + 1e-12
    return Signal(0.5 * x, rate)


def white_noise(seed: int, duration_s: float, rate: int = 10000) -> Signal:
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * rate))
    x = rng.standard_normal(n)
    return Signal(0.1 * x, rate)


def diotic(mono: Signal) -> BinauralSignal:
    return BinauralSignal(
        Signal(mono.samples.copy(), mono.rate), Signal(mono.samples.copy(), mono.rate)
    )
