"""Better-ear mask fusion and OM-LSA gain application.

The two per-channel continuous masks are fused by elementwise max, mapped
to a speech presence probability, and drive a single real-valued gain grid
G = G_H1^p * G_min^(1-p) that is applied to BOTH channels, so interaural
level and time cues pass through unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .audio_io import BinauralSignal, Signal
from .features import NoiseTracker, lsa_gain
from .transforms import StftConfig, TFGrid, istft, stft


@dataclass(frozen=True)
class OmlsaConfig:
    g_min_db: float = -20.0
    alpha_dd: float = 0.92
    xi_min_db: float = -25.0
    p_min: float = 0.005
    p_max: float = 0.998
    reference: str = "better_ear"  # better_ear | average | left
    spp_mode: str = "direct"  # direct | prior  (prior = classic q-based SPP)

    @property
    def g_min(self) -> float:
        return 10.0 ** (self.g_min_db / 20.0)


def better_ear_mask(mask_left: np.ndarray, mask_right: np.ndarray) -> np.ndarray:
    """Elementwise max of the two per-channel masks."""
    mask_left = np.asarray(mask_left, dtype=np.float64)
    mask_right = np.asarray(mask_right, dtype=np.float64)
    if mask_left.shape != mask_right.shape:
        raise ValueError("mask shapes differ")
    return np.maximum(mask_left, mask_right)


def mask_to_spp(mask: np.ndarray, cfg: OmlsaConfig = OmlsaConfig()) -> np.ndarray:
    """Interpret the continuous mask directly as SPP, clamped off {0, 1}."""
    mask = np.asarray(mask, dtype=np.float64)
    if not np.all(np.isfinite(mask)):
        raise ValueError("mask values must be finite")
    return np.clip(mask, cfg.p_min, cfg.p_max)


def prior_spp(q: np.ndarray, xi: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Classic conditional SPP from the a priori absence probability q."""
    q = np.asarray(q, dtype=np.float64)
    return 1.0 / (1.0 + q / np.maximum(1.0 - q, 1e-12) * (1.0 + xi) * np.exp(-v))


def omlsa_gain(
    power_ref: np.ndarray,
    spp: np.ndarray,
    noise_psd: np.ndarray,
    cfg: OmlsaConfig = OmlsaConfig(),
    state: dict | None = None,
) -> tuple[np.ndarray, dict]:
    """One frame of OM-LSA gains from reference power and SPP.

    ``state`` carries the decision-directed recursion (previous gain and a
    posteriori SNR); pass the returned dict into the next frame.
    """
    gamma = power_ref / np.maximum(noise_psd, 1e-300)
    if state is None:
        state = {
            "gain_prev": np.ones_like(gamma),
            "gamma_prev": np.ones_like(gamma),
        }
    xi_min = 10.0 ** (cfg.xi_min_db / 10.0)
    xi = cfg.alpha_dd * state["gain_prev"] ** 2 * state["gamma_prev"] + (
        1.0 - cfg.alpha_dd
    ) * np.maximum(gamma - 1.0, 0.0)
    xi = np.maximum(xi, xi_min)
    g_h1 = np.clip(lsa_gain(xi, gamma), cfg.g_min, 1.0)
    gain = g_h1**spp * cfg.g_min ** (1.0 - spp)
    gain = np.clip(gain, cfg.g_min, 1.0)
    new_state = {"gain_prev": gain, "gamma_prev": gamma}
    return gain, new_state


@dataclass
class EnhanceResult:
    signal: BinauralSignal
    gain: np.ndarray  # (bins, frames), real in [g_min, 1]
    spp: np.ndarray
    noisy_grids: tuple  # (left cells, right cells)
    enhanced_grids: tuple


def enhance_binaural(
    noisy: BinauralSignal,
    mask_left: np.ndarray,
    mask_right: np.ndarray,
    cfg: OmlsaConfig = OmlsaConfig(),
    config: StftConfig = StftConfig(),
) -> EnhanceResult:
    """Apply the fused-mask OM-LSA gain identically to both channels.

    Spectral statistics (a posteriori SNR, noise PSD) for the gain come
    per cell from the channel whose mask won the max ('better_ear'), or
    from the average / the left channel, per ``cfg.reference``.
    """
    lg = stft(noisy.left, config)
    rg = stft(noisy.right, config)
    mask_left = np.asarray(mask_left, dtype=np.float64)
    mask_right = np.asarray(mask_right, dtype=np.float64)
    if mask_left.shape != lg.cells.shape:
        raise ValueError("mask dimensions do not match the STFT grid")
    fused = better_ear_mask(mask_left, mask_right)
    spp = mask_to_spp(fused, cfg)

    p_left = np.abs(lg.cells) ** 2
    p_right = np.abs(rg.cells) ** 2
    n_bins, n_frames = p_left.shape
    tracker_l = NoiseTracker(n_bins)
    tracker_r = NoiseTracker(n_bins)
    left_wins = mask_left >= mask_right

    gain = np.empty((n_bins, n_frames))
    state = None
    for m in range(n_frames):
        tracker_l.update(p_left[:, m])
        tracker_r.update(p_right[:, m])
        if cfg.reference == "better_ear":
            p_ref = np.where(left_wins[:, m], p_left[:, m], p_right[:, m])
            noise_ref = np.where(
                left_wins[:, m], tracker_l.noise_psd, tracker_r.noise_psd
            )
        elif cfg.reference == "average":
            p_ref = 0.5 * (p_left[:, m] + p_right[:, m])
            noise_ref = 0.5 * (tracker_l.noise_psd + tracker_r.noise_psd)
        elif cfg.reference == "left":
            p_ref = p_left[:, m]
            noise_ref = tracker_l.noise_psd
        else:
            raise ValueError(f"unknown reference channel {cfg.reference!r}")
        gain[:, m], state = omlsa_gain(p_ref, spp[:, m], noise_ref, cfg, state)

    enh_l = gain * lg.cells
    enh_r = gain * rg.cells
    out_l = istft(TFGrid(enh_l, config, noisy.rate, len(noisy)))
    out_r = istft(TFGrid(enh_r, config, noisy.rate, len(noisy)))
    return EnhanceResult(
        signal=BinauralSignal(out_l, out_r),
        gain=gain,
        spp=spp,
        noisy_grids=(lg.cells, rg.cells),
        enhanced_grids=(enh_l, enh_r),
    )
