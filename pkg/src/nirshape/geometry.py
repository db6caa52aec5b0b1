"""Surface calculus: heights <-> normals <-> gradients, and normal-field
integration to a depth map with mesh export.

Axis convention: arrays are (H, W) with rows indexing y and columns x;
surface gradients are p = dz/dx, q = dz/dy; normals relate to heights by
n ~ (-p, -q, 1) / |.|.
"""

import numpy as np

from .photometry import NormalMap
from .tensor import ShapeError

NZ_MIN = 0.05  # grazing-angle clamp when converting normals to gradients


class DepthMap:
    """Per-pixel heights in pixel units, anchored to mean 0 over valid pixels."""

    def __init__(self, z, valid=None):
        z = np.asarray(z, dtype=np.float64)
        if z.ndim != 2:
            raise ShapeError(f"depth map must be 2-d, got {z.shape}")
        self.z = z
        self.valid = (np.ones(z.shape, dtype=bool) if valid is None
                      else np.asarray(valid, dtype=bool))
        if not np.all(np.isfinite(z[self.valid])):
            raise ValueError("depth map has non-finite values on valid pixels")

    @property
    def height(self):
        return self.z.shape[0]

    @property
    def width(self):
        return self.z.shape[1]


def normals_from_heights(z):
    """Central-difference normals of a heightfield, unit length, (3,H,W)."""
    zy, zx = np.gradient(np.asarray(z, dtype=np.float64))
    n = np.stack([-zx, -zy, np.ones_like(zx)])
    n /= np.linalg.norm(n, axis=0, keepdims=True)
    return n


def normals_to_gradients(normals, nz_min=NZ_MIN):
    """(p, q) surface gradients from a (3,H,W) normal array; nz clamped."""
    nz = np.maximum(normals[2], nz_min)
    return -normals[0] / nz, -normals[1] / nz


def integrate_gradients(p, q):
    """Least-squares heightfield whose forward differences fit (p, q).

    The height function is modeled as even-symmetric on a mirrored
    2H x 2W periodic domain (suppressing FFT wraparound); the gradients get
    the matching staggered odd extension, and the normal equations are
    solved in the Fourier basis against the forward-difference symbols.
    Exact for integrable inputs — for any z, forward differences of
    ``integrate_gradients(dz/dx, dz/dy)`` reproduce them to round-off.
    Linear in (p, q); the crop is anchored to mean 0.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 2:
        raise ShapeError(f"gradient fields must be matching 2-d arrays, got "
                         f"{p.shape} and {q.shape}")
    h, w = p.shape
    # forward differences of an even-extended z vanish at the two fold
    # columns/rows, so only the first w-1 (h-1) samples carry data
    pe = np.zeros((2 * h, 2 * w))
    pe[:h, : w - 1] = p[:, : w - 1]
    pe[:h, w : 2 * w - 1] = -p[:, : w - 1][:, ::-1]
    pe[h:] = pe[:h][::-1]
    qe = np.zeros((2 * h, 2 * w))
    qe[: h - 1, :w] = q[: h - 1]
    qe[h : 2 * h - 1, :w] = -q[: h - 1][::-1]
    qe[:, w:] = qe[:, :w][:, ::-1]
    wx = np.exp(2j * np.pi * np.fft.fftfreq(2 * w))[None, :] - 1.0
    wy = np.exp(2j * np.pi * np.fft.fftfreq(2 * h))[:, None] - 1.0
    denom = (wx * np.conj(wx) + wy * np.conj(wy)).real
    numer = np.conj(wx) * np.fft.fft2(pe) + np.conj(wy) * np.fft.fft2(qe)
    with np.errstate(invalid="ignore", divide="ignore"):
        zf = np.where(denom > 1e-12, numer / np.where(denom > 1e-12, denom, 1.0), 0.0)
    z = np.real(np.fft.ifft2(zf))[:h, :w]
    return z - z.mean()


def integrate_normals(nmap):
    """Depth map whose gradient field best matches a normal map."""
    n = nmap.normals.astype(np.float64)
    if not np.any(n[2] > NZ_MIN):
        raise ValueError("all normals are grazing (nz <= clamp); cannot integrate")
    p, q = normals_to_gradients(n)
    z = integrate_gradients(p, q)
    return DepthMap(z, valid=nmap.valid.copy())


def depth_to_normals(depth):
    """NormalMap re-derived from an integrated depth map."""
    return NormalMap(normals_from_heights(depth.z).astype(np.float32),
                     valid=depth.valid.copy())


def mesh_from_depth(depth, scale=1.0):
    """Regular-grid triangulation of a depth map.

    Returns (vertices (N,3), normals (N,3), faces (M,3) int, 1-based=False).
    Vertices are (x, y, z*scale) in pixel units; two triangles per quad of
    valid pixels; per-vertex normals come from the integrated surface.
    """
    h, w = depth.z.shape
    nrm = normals_from_heights(depth.z * scale)
    yy, xx = np.mgrid[0:h, 0:w]
    verts = np.stack([xx.ravel(), yy.ravel(), (depth.z * scale).ravel()], axis=1)
    normals = nrm.reshape(3, -1).T
    vid = np.arange(h * w).reshape(h, w)
    ok = depth.valid
    quad = ok[:-1, :-1] & ok[:-1, 1:] & ok[1:, :-1] & ok[1:, 1:]
    qy, qx = np.nonzero(quad)
    a = vid[qy, qx]
    b = vid[qy, qx + 1]
    c = vid[qy + 1, qx]
    d = vid[qy + 1, qx + 1]
    faces = np.concatenate([np.stack([a, b, c], axis=1),
                            np.stack([b, d, c], axis=1)])
    used = np.zeros(h * w, dtype=bool)
    used[faces.ravel()] = True
    remap = -np.ones(h * w, dtype=np.int64)
    remap[used] = np.arange(used.sum())
    return verts[used], normals[used], remap[faces]
