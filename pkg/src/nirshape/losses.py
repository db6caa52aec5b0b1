"""Objective terms for the adversarial normal-estimation networks.

All losses map tensors to non-negative scalar tensors on the gradient
tape and reduce by means, so unit weighting stays balanced across
resolutions and batch sizes.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor, ShapeError

BCE_CLAMP = 1e-7
NZ_MIN = 0.05  # grazing clamp before converting normals to gradients


@dataclass
class LossWeights:
    """Weights of the generator's composite objective."""
    lambda_p: float = 1.0
    lambda_ang: float = 1.0
    lambda_curl: float = 1.0
    p_norm: int = 2

    def __post_init__(self):
        if self.p_norm not in (1, 2):
            raise ValueError(f"p_norm must be 1 or 2, got {self.p_norm}")
        if min(self.lambda_p, self.lambda_ang, self.lambda_curl) < 0:
            raise ValueError("loss weights must be non-negative")


def bce(prediction, label):
    """Binary cross-entropy against a constant 0/1 label, mean-reduced.

    Predictions are clamped to [1e-7, 1 - 1e-7] before the logs.
    """
    label = float(label)
    p = T.clamp(prediction, BCE_CLAMP, 1.0 - BCE_CLAMP)
    return (-(label * T.log(p) + (1.0 - label) * T.log(1.0 - p))).mean()


def loss_discriminator(d_real, d_fake):
    """Real pairs score toward 1, generated pairs toward 0."""
    return bce(d_real, 1.0) + bce(d_fake, 0.0)


def loss_lp(y, g, p=2):
    """Mean |y - g|^p over all components."""
    if y.shape != g.shape:
        raise ShapeError(f"operand shapes differ: {y.shape} vs {g.shape}")
    if p not in (1, 2):
        raise ValueError(f"p must be 1 or 2, got {p}")
    d = y - g
    if p == 1:
        return T.absolute(d).mean()
    return (d * d).mean()


def loss_angular(y, g, eps=1e-8):
    """Mean (1 - cos) between per-pixel vectors of (B,3,H,W) fields.

    Both operands are normalized internally, so the measure ignores vector
    length; range [0, 2], symmetric in (y, g).
    """
    if y.shape != g.shape:
        raise ShapeError(f"operand shapes differ: {y.shape} vs {g.shape}")
    dot = (y * g).sum(axis=1, keepdims=True)
    ny = T.sqrt((y * y).sum(axis=1, keepdims=True))
    ng = T.sqrt((g * g).sum(axis=1, keepdims=True))
    return (1.0 - dot / (ny * ng + eps)).mean()


def window_weights(rows, cols, window, stride, dtype=np.float64):
    """Per-cell weights that turn windowed mean-of-means into one dot product.

    Weight of a cell = sum over covering windows of 1/(window cell count),
    divided by the number of windows; windows are clipped at the borders.
    """
    pos_r = range(0, max(rows - window, 0) + 1, stride)
    pos_c = range(0, max(cols - window, 0) + 1, stride)
    w = np.zeros((rows, cols), dtype=dtype)
    for r in pos_r:
        for c in pos_c:
            cells = w[r:r + window, c:c + window]
            cells += 1.0 / cells.size
    return w / (len(pos_r) * len(pos_c))


def loss_curl(g, window=5, overlap=3, nz_min=NZ_MIN):
    """Local integrability residual of a (B,3,H,W) normal field.

    Normals become surface gradients p = -nx/nz, q = -ny/nz (nz clamped to
    >= nz_min); the discrete curl r = dp/dy - dq/dx is taken with central
    differences on the interior grid, and |r| is averaged within
    window x window patches that overlap by `overlap` pixels, then across
    patches and batch. Central differences make the two mixed second
    derivatives share one stencil, so any gradient field that comes from a
    heightfield has zero residual to round-off; one-sided schemes leave
    O(h^2) truncation that swamps the integrable/non-integrable signal.
    """
    b, c, h, w = g.shape
    if c != 3:
        raise ShapeError(f"expected (B,3,H,W) normals, got {g.shape}")
    if h < window or w < window:
        raise ShapeError(f"field {h}x{w} smaller than {window}x{window} windows")
    stride = window - overlap
    nz = T.clamp(g[:, 2:3], lo=nz_min)
    p = (g[:, 0:1] * -1.0) / nz
    q = (g[:, 1:2] * -1.0) / nz
    dp_dy = (p[:, :, 2:, 1:-1] - p[:, :, :-2, 1:-1]) * 0.5
    dq_dx = (q[:, :, 1:-1, 2:] - q[:, :, 1:-1, :-2]) * 0.5
    r = dp_dy - dq_dx
    wmap = window_weights(h - 2, w - 2, window, stride, dtype=g.dtype)
    return (T.absolute(r) * Tensor(wmap)).sum() * (1.0 / b)


def loss_generator(d_fake, y, g, weights, window=5, overlap=3):
    """Composite generator objective plus a per-term breakdown.

    bce(d_fake, 1) + lambda_p * Lp + lambda_ang * Lang + lambda_curl * Lcurl.
    Zero-weighted terms are skipped (reported as 0.0 in the breakdown).
    """
    adv = bce(d_fake, 1.0)
    total = adv
    breakdown = {"g_bce": adv.item(), "l_p": 0.0, "l_ang": 0.0, "l_curl": 0.0}
    if weights.lambda_p > 0:
        lp = loss_lp(y, g, weights.p_norm)
        breakdown["l_p"] = lp.item()
        total = total + weights.lambda_p * lp
    if weights.lambda_ang > 0:
        la = loss_angular(y, g)
        breakdown["l_ang"] = la.item()
        total = total + weights.lambda_ang * la
    if weights.lambda_curl > 0:
        lc = loss_curl(g, window=window, overlap=overlap)
        breakdown["l_curl"] = lc.item()
        total = total + weights.lambda_curl * lc
    return total, breakdown
