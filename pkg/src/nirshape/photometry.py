"""Lambertian image formation and its inverse at desk scale.

Conventions: normal maps are (3, H, W) unit-vector fields on the
camera-facing hemisphere (nz >= 0); radiance images are (H, W); raw
radiance lives in [0, 1] and its network encoding in [-1, +1] via the
fixed affine map v -> 2v - 1.
"""

import numpy as np

from . import kernels
from .tensor import ShapeError


class LightDirection:
    """Unit direction toward a distant light in the upper hemisphere."""

    def __init__(self, l):
        l = np.asarray(l, dtype=np.float64)
        if l.shape != (3,):
            raise ShapeError(f"light direction must be a 3-vector, got {l.shape}")
        n = np.linalg.norm(l)
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"light direction norm {n} is not 1 within 1e-6")
        if l[2] <= 0:
            raise ValueError("light direction must point toward the camera (l_z > 0)")
        self.l = l

    @classmethod
    def from_angles(cls, polar_deg, azimuth_deg):
        po = np.deg2rad(polar_deg)
        az = np.deg2rad(azimuth_deg)
        return cls(np.array([np.sin(po) * np.cos(az),
                             np.sin(po) * np.sin(az),
                             np.cos(po)]))


def light_ring_12():
    """The 12-direction rig used for ground-truth generation.

    Two rings at polar angles 30 and 55 degrees, six equally spaced
    azimuths each, the outer ring staggered by 30 degrees.
    """
    dirs = []
    for polar, offset in ((30.0, 0.0), (55.0, 30.0)):
        for k in range(6):
            dirs.append(LightDirection.from_angles(polar, offset + 60.0 * k))
    return dirs


class NormalMap:
    """H x W field of unit surface normals with a per-pixel validity mask."""

    def __init__(self, normals, valid=None, check=True):
        normals = np.asarray(normals, dtype=np.float32)
        if normals.ndim != 3 or normals.shape[0] != 3:
            raise ShapeError(f"normals must be (3,H,W), got {normals.shape}")
        self.normals = normals
        self.valid = (np.ones(normals.shape[1:], dtype=bool)
                      if valid is None else np.asarray(valid, dtype=bool))
        if self.valid.shape != normals.shape[1:]:
            raise ShapeError("validity mask extent does not match normals")
        self.degenerate_pixels = 0
        if check:
            self.check_invariants()

    @property
    def height(self):
        return self.normals.shape[1]

    @property
    def width(self):
        return self.normals.shape[2]

    def check_invariants(self):
        norms = np.linalg.norm(self.normals, axis=0)
        if not np.all(np.abs(norms - 1.0) <= 1e-4):
            worst = float(np.abs(norms - 1.0).max())
            raise ValueError(f"normal norms deviate from 1 by up to {worst:.2e}")
        if np.any(self.normals[2] < 0):
            raise ValueError("normal map contains nz < 0 (behind the camera)")


class NirImage:
    """Scalar radiance image; `normalized` flags [-1,+1] vs raw [0,inf)."""

    def __init__(self, values, normalized):
        values = np.asarray(values, dtype=np.float32)
        if values.ndim != 2:
            raise ShapeError(f"NIR image must be 2-d, got {values.shape}")
        if normalized:
            if values.min() < -1.0 - 1e-6 or values.max() > 1.0 + 1e-6:
                raise ValueError("normalized NIR values must lie in [-1, +1]")
        elif values.min() < 0:
            raise ValueError("raw NIR radiance must be non-negative")
        self.values = values
        self.normalized = normalized

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    def to_raw(self):
        if not self.normalized:
            return self
        return NirImage((self.values + 1.0) * 0.5, normalized=False)

    def to_normalized(self):
        if self.normalized:
            return self
        return NirImage(2.0 * self.values - 1.0, normalized=True)


def render_lambertian(normals, albedo, light):
    """Shade a normal map under a single distant light.

    Raw radiance is albedo * max(0, n.l) per pixel, which lies in [0, 1]
    for albedo in [0, 1]; the returned image carries the [-1, +1] encoding
    2*raw - 1.
    """
    n = normals.normals
    albedo = np.asarray(albedo, dtype=np.float32)
    if albedo.ndim == 0:
        albedo = np.full(n.shape[1:], float(albedo), dtype=np.float32)
    if albedo.shape != n.shape[1:]:
        raise ShapeError(f"albedo extent {albedo.shape} != normal map {n.shape[1:]}")
    shade = np.maximum(0.0, np.einsum('chw,c->hw', n.astype(np.float64), light.l))
    raw = albedo * shade.astype(np.float32)
    return NirImage(2.0 * raw - 1.0, normalized=True)


def photometric_stereo(images, lights):
    """Recover normals and albedo from >=3 raw images under known lights.

    Solves the per-pixel least-squares system I = L (rho n); zero-intensity
    rows are dropped pixel-wise and pixels with fewer than 3 usable rows
    (or a singular system) are flagged invalid and given the placeholder
    normal (0,0,1) with albedo 0.
    """
    if len(images) < 3:
        raise ValueError(f"photometric stereo needs >=3 images, got {len(images)}")
    if len(images) != len(lights):
        raise ShapeError(f"{len(images)} images but {len(lights)} lights")
    shape = images[0].values.shape
    for im in images:
        if im.normalized:
            raise ValueError("photometric stereo expects raw-valued images")
        if im.values.shape != shape:
            raise ShapeError("images are not pixel-aligned")
    lmat = np.stack([li.l for li in lights])
    if np.linalg.matrix_rank(lmat) < 3:
        raise ValueError("light matrix is rank-deficient; directions do not span 3-d")
    stack = np.stack([im.values for im in images]).astype(np.float64)
    normals, rho, valid = kernels.photometric_solve(stack, lmat)
    nmap = NormalMap(np.asarray(normals, dtype=np.float32), valid=valid, check=False)
    return nmap, np.asarray(rho, dtype=np.float32)


def encode_normals(nmap):
    """Normal map -> (3,H,W) float32 array; components already in [-1,1]."""
    return nmap.normals.astype(np.float32).copy()


def renormalize_to_hemisphere(arr):
    """Per-pixel unit vectors with nz clamped to >= 0 before normalizing.

    Vectors of norm < 1e-6 become the placeholder (0,0,1). Returns the
    (3,H,W) float64 field and the boolean mask of substituted pixels.
    """
    v = np.asarray(arr, dtype=np.float64).copy()
    v[2] = np.maximum(v[2], 0.0)
    norms = np.linalg.norm(v, axis=0)
    degenerate = norms < 1e-6
    v /= np.where(degenerate, 1.0, norms)
    v[0][degenerate] = 0.0
    v[1][degenerate] = 0.0
    v[2][degenerate] = 1.0
    return v, degenerate


def decode_normals(arr):
    """(3,H,W) array in [-1,1] -> NormalMap.

    Each pixel vector is renormalized to unit length with nz clamped to
    >= 0 first; vectors of norm < 1e-6 become the placeholder (0,0,1) and
    are counted on the result's `degenerate_pixels`.
    """
    arr = np.asarray(arr, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ShapeError(f"expected (3,H,W) array, got {arr.shape}")
    v, degenerate = renormalize_to_hemisphere(arr)
    out = NormalMap(v.astype(np.float32), check=False)
    out.degenerate_pixels = int(degenerate.sum())
    return out
