"""NumPy fallback for the beam-search candidate scorer.

Same contract as the compiled kernel in ``_beam.pyx``: given C candidate
bit rows for one modulation window, return each candidate's cell
correlation after masking and clipping.
"""

import numpy as np


def score_candidates(bits, yw, xw, x_norm, xc, xc_norm, lam):
    """Cell correlations for candidate binary rows over one window.

    bits: (C, M) uint8, yw/xw/xc: (M,) float64, scalars x_norm/xc_norm/lam.
    Returns (C,) float64; zeros when the clean window is degenerate or the
    masked window has no variance.
    """
    out = np.zeros(bits.shape[0])
    if x_norm <= 0.0 or xc_norm <= 0.0:
        return out
    z = bits.astype(np.float64) * yw[None, :]
    znorm = np.linalg.norm(z, axis=1)
    zt = np.minimum(z, (lam / x_norm) * znorm[:, None] * xw[None, :])
    ztc = zt - zt.mean(axis=1, keepdims=True)
    ztc_norm = np.linalg.norm(ztc, axis=1)
    valid = ztc_norm > 0.0
    num = zt @ xc
    np.divide(num, xc_norm * ztc_norm, out=out, where=valid)
    out[~valid] = 0.0
    return out
