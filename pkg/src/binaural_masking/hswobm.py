"""Binary target masks that maximize the weighted intelligibility objective.

Per channel and per STFT bin (129 bands), a {0,1} gain sequence is chosen
to maximize the weight-summed cell correlations of the masked noisy signal
against the clean signal.  Small instances are solved exactly by
enumeration; at scale a frame-indexed beam dynamic program is used whose
state is the trailing M-1 mask bits (which fully determine every future
cell overlapping the current frame).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._kernels import score_candidates as _default_scorer
from .audio_io import BinauralSignal
from .metrics import CLIP_LAMBDA, MOD_WINDOW
from .transforms import StftConfig, stft

DEFAULT_BEAM_WIDTH = 64


@dataclass
class MaskObjectiveContext:
    """Clean/noisy band amplitudes and cell weights for one channel."""

    clean: np.ndarray  # (bands, frames) nonneg amplitudes
    noisy: np.ndarray
    weights: np.ndarray | None = None  # (bands, frames), None = uniform
    M: int = MOD_WINDOW
    lam: float = CLIP_LAMBDA

    def __post_init__(self):
        self.clean = np.asarray(self.clean, dtype=np.float64)
        self.noisy = np.asarray(self.noisy, dtype=np.float64)
        if self.clean.shape != self.noisy.shape:
            raise ValueError("clean/noisy band grids must match")
        if self.weights is None:
            self.weights = np.ones(self.clean.shape)
        else:
            self.weights = np.asarray(self.weights, dtype=np.float64)
            if self.weights.shape != self.clean.shape:
                raise ValueError("weight grid shape mismatch")

    @property
    def n_bands(self) -> int:
        return self.clean.shape[0]

    @property
    def n_frames(self) -> int:
        return self.clean.shape[1]


@dataclass
class BinaryMask:
    """Binary gains over (band = STFT bin, frame)."""

    B: np.ndarray  # uint8 (bands, frames)

    def __post_init__(self):
        self.B = np.asarray(self.B, dtype=np.uint8)
        if not np.all((self.B == 0) | (self.B == 1)):
            raise ValueError("mask entries must be 0 or 1")

    @property
    def n_bands(self) -> int:
        return self.B.shape[0]


def _window_stats(x: np.ndarray):
    """Norm, centered copy and centered norm of one clean window."""
    x_norm = float(np.linalg.norm(x))
    xc = x - x.mean()
    xc_norm = float(np.linalg.norm(xc))
    return x_norm, xc, xc_norm


def masked_objective(
    B_row: np.ndarray, ctx: MaskObjectiveContext, j: int, scorer=None
) -> float:
    """Weight-summed cell correlations of the masked noisy band j."""
    scorer = scorer or _default_scorer
    X = ctx.clean[j]
    Y = ctx.noisy[j]
    I = ctx.weights[j]
    M = ctx.M
    bits = np.asarray(B_row, dtype=np.uint8)
    if len(bits) != len(X):
        raise ValueError("mask row length mismatch")
    if len(X) < M:
        raise ValueError(f"need at least {M} frames")
    total = 0.0
    for m in range(M - 1, len(X)):
        if I[m] == 0.0:
            continue
        xw = X[m - M + 1 : m + 1]
        x_norm, xc, xc_norm = _window_stats(xw)
        d = scorer(
            bits[None, m - M + 1 : m + 1].copy(),
            np.ascontiguousarray(Y[m - M + 1 : m + 1]),
            np.ascontiguousarray(xw),
            x_norm,
            xc,
            xc_norm,
            ctx.lam,
        )[0]
        total += I[m] * d
    return total


def _best_index(scores, ones, codes):
    """Deterministic argmax: score desc, then more ones, then lower code."""
    order = np.lexsort((codes, -ones, -scores))
    return order[0]


def optimize_band_exhaustive(
    ctx: MaskObjectiveContext, j: int, scorer=None
) -> tuple[np.ndarray, float]:
    """Globally optimal mask row by 2^N enumeration (N <= 16)."""
    scorer = scorer or _default_scorer
    N = ctx.n_frames
    if N > 16:
        raise ValueError("exhaustive search limited to 16 frames")
    X, Y, I, M = ctx.clean[j], ctx.noisy[j], ctx.weights[j], ctx.M
    n_masks = 1 << N
    shifts = np.arange(N - 1, -1, -1)
    masks = ((np.arange(n_masks)[:, None] >> shifts[None, :]) & 1).astype(np.uint8)
    obj = np.zeros(n_masks)
    for m in range(M - 1, N):
        if I[m] == 0.0:
            continue
        xw = X[m - M + 1 : m + 1]
        x_norm, xc, xc_norm = _window_stats(xw)
        d = scorer(
            np.ascontiguousarray(masks[:, m - M + 1 : m + 1]),
            np.ascontiguousarray(Y[m - M + 1 : m + 1]),
            np.ascontiguousarray(xw),
            x_norm,
            xc,
            xc_norm,
            ctx.lam,
        )
        obj += I[m] * d
    popcount = masks.sum(axis=1)
    best = _best_index(obj, popcount, np.arange(n_masks))
    return masks[best].copy(), float(obj[best])


def optimize_band_beam(
    ctx: MaskObjectiveContext,
    j: int,
    beam_width: int = DEFAULT_BEAM_WIDTH,
    scorer=None,
) -> tuple[np.ndarray, float]:
    """Frame-indexed beam DP over mask bits for one band.

    State after frame m is the trailing min(M-1, m+1) bits; candidates are
    scored by the accumulated objective of completed cells, duplicates are
    merged keeping the better partial score, and the best ``beam_width``
    states survive each frame.  With beam_width >= 2^(M-1) the DP is exact.
    """
    scorer = scorer or _default_scorer
    if beam_width < 1:
        raise ValueError("beam width must be >= 1")
    X, Y, I, M, lam = ctx.clean[j], ctx.noisy[j], ctx.weights[j], ctx.M, ctx.lam
    N = ctx.n_frames
    if N < M:
        raise ValueError(f"need at least {M} frames")
    state_mask = (1 << (M - 1)) - 1
    shifts = np.arange(M - 1, -1, -1)

    codes = np.zeros(1, dtype=np.int64)
    scores = np.zeros(1)
    ones = np.zeros(1, dtype=np.int64)
    history = []  # per frame: (parent index, appended bit) for kept states

    for m in range(N):
        S = len(codes)
        parent = np.tile(np.arange(S), 2)
        bit = np.repeat(np.array([0, 1], dtype=np.int64), S)
        full = (codes[parent] << 1) | bit
        cand_scores = scores[parent].copy()
        if m >= M - 1 and I[m] != 0.0:
            xw = X[m - M + 1 : m + 1]
            x_norm, xc, xc_norm = _window_stats(xw)
            if xc_norm > 0.0:
                bits = ((full[:, None] >> shifts[None, :]) & 1).astype(np.uint8)
                d = scorer(
                    np.ascontiguousarray(bits),
                    np.ascontiguousarray(Y[m - M + 1 : m + 1]),
                    np.ascontiguousarray(xw),
                    x_norm,
                    xc,
                    xc_norm,
                    lam,
                )
                cand_scores = cand_scores + I[m] * d
        cand_codes = full & state_mask
        cand_ones = ones[parent] + bit

        # Merge duplicate states (identical trailing bits): keep the best
        # score, ties toward more ones, then lower parent index.
        order = np.lexsort((parent, -cand_ones, -cand_scores, cand_codes))
        oc = cand_codes[order]
        first = np.ones(len(oc), dtype=bool)
        first[1:] = oc[1:] != oc[:-1]
        kept = order[first]

        # Prune to the beam width.
        sel = np.lexsort((cand_codes[kept], -cand_ones[kept], -cand_scores[kept]))
        kept = kept[sel[:beam_width]]

        history.append((parent[kept], bit[kept]))
        codes = cand_codes[kept]
        scores = cand_scores[kept]
        ones = cand_ones[kept]

    best = _best_index(scores, ones, codes)
    bits_out = np.empty(N, dtype=np.uint8)
    idx = best
    for m in range(N - 1, -1, -1):
        par, b = history[m]
        bits_out[m] = b[idx]
        idx = par[idx]
    return bits_out, float(scores[best])


def weight_grid(clean_cells: np.ndarray, kind: str = "uniform") -> np.ndarray:
    """Built-in cell-weight providers for the WSTOI-style objective.

    'uniform' weights every cell equally; 'energy' uses normalized clean
    cell energy as a crude intelligibility-content proxy.
    """
    if kind == "uniform":
        return np.ones(clean_cells.shape)
    if kind == "energy":
        p = np.abs(clean_cells) ** 2
        return p / (p.max() + 1e-300)
    raise ValueError(f"unknown weight provider {kind!r}")


def compute_hswobm(
    clean: BinauralSignal,
    noisy: BinauralSignal,
    weights_kind: str = "uniform",
    config: StftConfig = StftConfig(),
    beam_width: int = DEFAULT_BEAM_WIDTH,
    M: int = MOD_WINDOW,
    lam: float = CLIP_LAMBDA,
    scorer=None,
) -> tuple[BinaryMask, BinaryMask]:
    """Per-channel binary target masks over all STFT bins.

    Left and right masks are optimized independently from each channel's
    clean/noisy pair, band by band.
    """
    if len(clean) != len(noisy) or clean.rate != noisy.rate:
        raise ValueError("clean and noisy signals must be aligned")
    masks = []
    for c_sig, n_sig in ((clean.left, noisy.left), (clean.right, noisy.right)):
        cg = stft(c_sig, config)
        ng = stft(n_sig, config)
        ctx = MaskObjectiveContext(
            clean=np.abs(cg.cells),
            noisy=np.abs(ng.cells),
            weights=weight_grid(cg.cells, weights_kind),
            M=M,
            lam=lam,
        )
        B = np.empty((ctx.n_bands, ctx.n_frames), dtype=np.uint8)
        for jj in range(ctx.n_bands):
            B[jj], _ = optimize_band_beam(ctx, jj, beam_width, scorer=scorer)
        masks.append(BinaryMask(B))
    return masks[0], masks[1]


def save_mask(mask: BinaryMask, path, config_hash: str = "") -> None:
    np.savez(
        path, version="mask-v1", B=mask.B, shape=mask.B.shape, config_hash=config_hash
    )


def load_mask(path, expect_hash: str | None = None) -> BinaryMask:
    with np.load(path, allow_pickle=False) as f:
        if str(f["version"]) != "mask-v1":
            raise ValueError(f"{path}: unsupported mask file version")
        if expect_hash is not None and str(f["config_hash"]) != expect_hash:
            raise ValueError(f"{path}: config hash mismatch")
        return BinaryMask(f["B"])
