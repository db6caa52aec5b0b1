"""Synthetic training corpus and dataset file layout.

Surfaces are random fine-detail heightfields with analytic normals. Their
height statistics are deliberately skewed toward raised features (bumps,
ridges, sharpened peaks): under an unknown light direction, a sign-symmetric
relief prior makes shading exactly ambiguous (flipping the surface and
rotating the light half a turn yields the same image), whereas embossed
materials — and this generator — leave the lit side identifiable.

On disk a dataset is::

    <root>/manifest.json
    <root>/<split>/<index>_nir.png   16-bit grayscale, raw radiance
    <root>/<split>/<index>_nrm.png   16-bit RGB, [-1,1]-encoded normals

Every sample is a pure function of (manifest seed, split, index), so
rebuilding a manifest reproduces byte-identical files, splits are disjoint
by construction, and lighting metadata never needs separate storage.
"""

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import formats
from .geometry import normals_from_heights
from .photometry import LightDirection, NormalMap, NirImage, render_lambertian

SURFACE_KINDS = ("gaussian-bumps", "sinusoid-weave", "fractal-noise", "composite")
ALBEDO_MODES = ("constant-one", "constant-random", "piecewise")
FORMAT_VERSION = 1

# split name -> position of its index range in the global sample numbering
_SPLIT_ORDER = ("train", "val", "test")


class DatasetError(RuntimeError):
    """Dataset files or manifest are missing, malformed, or inconsistent."""


@dataclass
class SurfaceSpec:
    """Recipe for one random heightfield."""
    kind: str = "gaussian-bumps"
    amplitude: float = 0.55       # RMS surface slope after rescaling
    feature_scale: float = 4.0    # characteristic feature size, pixels
    seed: int = 0
    size: int = 64

    def __post_init__(self):
        if self.kind not in SURFACE_KINDS:
            raise ValueError(f"unknown surface kind {self.kind!r}")
        if not self.amplitude > 0:
            raise ValueError("amplitude must be positive")
        if self.feature_scale < 2:
            raise ValueError("feature_scale must be >= 2 pixels")


def _bumps(rng, n, scale):
    z = np.zeros((n, n))
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    count = max(4, int(2.2 * (n / scale) ** 2 / 10))
    for _ in range(count):
        cy, cx = rng.uniform(-scale, n + scale, 2)
        s = scale * rng.uniform(0.6, 1.6)
        a = rng.uniform(0.25, 1.0)
        if rng.uniform() < 0.08:  # rare shallow dents; see module docstring
            a = -0.45 * a
        z += a * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
    return z


def _weave(rng, n, scale):
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    theta = rng.uniform(0, np.pi)
    z = np.zeros((n, n))
    for ang in (theta, theta + np.pi / 2):
        lam = scale * rng.uniform(1.6, 3.2)
        phase = rng.uniform(0, 2 * np.pi)
        k = rng.uniform(1.5, 3.0)
        u = xx * np.cos(ang) + yy * np.sin(ang)
        # rectified profile: raised asymmetric ridges, not symmetric waves
        z += rng.uniform(0.5, 1.0) * np.abs(np.sin(2 * np.pi * u / lam + phase)) ** k
    return z


def _fractal(rng, n, scale):
    white = rng.standard_normal((n, n))
    fy = np.fft.fftfreq(n)[:, None]
    fx = np.fft.fftfreq(n)[None, :]
    r = np.sqrt(fx * fx + fy * fy)
    r[0, 0] = 1.0
    beta = rng.uniform(1.6, 2.4)
    shaped = np.fft.fft2(white) * (r ** (-beta / 2)) * (r < 1.0 / max(scale * 0.5, 1.0))
    z = np.real(np.fft.ifft2(shaped))
    z = (z - z.mean()) / max(z.std(), 1e-12)
    sharp = rng.uniform(0.8, 1.4)
    return np.expm1(sharp * z) / sharp  # peaks sharper than valleys


def generate_surface(spec):
    """Heightfield plus its central-difference unit normals.

    Deterministic per spec.seed; heights are rescaled so the RMS gradient
    magnitude equals spec.amplitude.
    """
    rng = np.random.default_rng(spec.seed)
    n, scale = spec.size, spec.feature_scale
    if spec.kind == "gaussian-bumps":
        z = _bumps(rng, n, scale)
    elif spec.kind == "sinusoid-weave":
        z = _weave(rng, n, scale)
    elif spec.kind == "fractal-noise":
        z = _fractal(rng, n, scale)
    else:
        z = (_bumps(rng, n, scale * 1.5) + 0.6 * _weave(rng, n, scale)
             + 0.25 * _fractal(rng, n, scale))
    gy, gx = np.gradient(z)
    rms = np.sqrt((gx * gx + gy * gy).mean())
    z *= spec.amplitude / max(rms, 1e-12)
    normals = normals_from_heights(z)
    return z, NormalMap(normals.astype(np.float32))


@dataclass
class DatasetManifest:
    """Deterministic recipe for a dataset directory."""
    counts: dict = field(default_factory=lambda: {"train": 0, "val": 0, "test": 0})
    patch_size: int = 64
    seed: int = 0
    surface_kind: str = "gaussian-bumps"
    amplitude: float = 0.55
    feature_scale: float = 4.0
    albedo_mode: str = "piecewise"
    albedo_range: tuple = (0.5, 1.0)
    noise_sigma: float = 0.0
    light_rings: tuple = ((30.0, 6, 0.0), (55.0, 6, 30.0))  # (polar, count, az offset)
    format_version: int = FORMAT_VERSION

    _FIELDS = ("counts", "patch_size", "seed", "surface_kind", "amplitude",
               "feature_scale", "albedo_mode", "albedo_range", "noise_sigma",
               "light_rings", "format_version")

    def __post_init__(self):
        if self.surface_kind not in SURFACE_KINDS:
            raise ValueError(f"unknown surface kind {self.surface_kind!r}")
        if self.albedo_mode not in ALBEDO_MODES:
            raise ValueError(f"unknown albedo mode {self.albedo_mode!r}")
        for split in self.counts:
            if split not in _SPLIT_ORDER:
                raise ValueError(f"unknown split {split!r}")
        self.counts = {s: int(self.counts.get(s, 0)) for s in _SPLIT_ORDER}

    def lights(self):
        out = []
        for polar, count, offset in self.light_rings:
            for k in range(count):
                out.append(LightDirection.from_angles(polar, offset + 360.0 * k / count))
        return out

    def split_offset(self, split):
        off = 0
        for s in _SPLIT_ORDER:
            if s == split:
                return off
            off += self.counts[s]
        raise DatasetError(f"unknown split {split!r}")

    def to_json(self):
        doc = {k: getattr(self, k) for k in self._FIELDS}
        doc["albedo_range"] = list(doc["albedo_range"])
        doc["light_rings"] = [list(r) for r in doc["light_rings"]]
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        unknown = set(doc) - set(cls._FIELDS)
        if unknown:
            raise DatasetError(f"unknown manifest keys: {sorted(unknown)}")
        if doc.get("format_version", FORMAT_VERSION) != FORMAT_VERSION:
            raise DatasetError(f"unsupported format_version {doc['format_version']}")
        if "albedo_range" in doc:
            doc["albedo_range"] = tuple(doc["albedo_range"])
        if "light_rings" in doc:
            doc["light_rings"] = tuple(tuple(r) for r in doc["light_rings"])
        return cls(**doc)

    @classmethod
    def load(cls, dataset_dir):
        path = Path(dataset_dir) / "manifest.json"
        if not path.exists():
            raise DatasetError(f"no manifest.json under {dataset_dir}")
        return cls.from_json(path.read_text())


def sample_light_index(manifest, split, index):
    """Light direction index of one sample.

    Uniform marginally, and balanced exactly within each block of 12
    consecutive indices of a split: block b of split s is lit by a seeded
    permutation of all 12 directions.
    """
    n_lights = sum(r[1] for r in manifest.light_rings)
    block, pos = divmod(index, n_lights)
    rng = np.random.default_rng([manifest.seed, 7, _SPLIT_ORDER.index(split), block])
    return int(rng.permutation(n_lights)[pos])


def _albedo_field(manifest, rng, n):
    lo, hi = manifest.albedo_range
    if manifest.albedo_mode == "constant-one":
        return np.ones((n, n), dtype=np.float32)
    if manifest.albedo_mode == "constant-random":
        return np.full((n, n), rng.uniform(lo, hi), dtype=np.float32)
    # piecewise: nearest-seed-point regions with constant albedo each
    k = int(rng.integers(1, 5))
    pts = rng.uniform(0, n, (k, 2))
    vals = rng.uniform(lo, hi, k)
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    d2 = (yy[None] - pts[:, 0, None, None]) ** 2 + (xx[None] - pts[:, 1, None, None]) ** 2
    return vals[np.argmin(d2, axis=0)].astype(np.float32)


def regenerate_sample(manifest, split, index):
    """Recompute one sample in memory exactly as build_dataset wrote it.

    Returns a dict with heights, normal map, albedo, light index, raw
    radiance (quantized to the PNG grid) and the normalized NIR values.
    """
    gidx = manifest.split_offset(split) + index
    rng = np.random.default_rng([manifest.seed, 13, gidx])
    spec = SurfaceSpec(
        kind=manifest.surface_kind,
        amplitude=manifest.amplitude * rng.uniform(0.7, 1.3),
        feature_scale=max(2.0, manifest.feature_scale * rng.uniform(0.8, 1.25)),
        seed=int(rng.integers(0, 2 ** 63 - 1)),
        size=manifest.patch_size,
    )
    heights, nmap = generate_surface(spec)
    albedo = _albedo_field(manifest, rng, manifest.patch_size)
    light_idx = sample_light_index(manifest, split, index)
    image = render_lambertian(nmap, albedo, manifest.lights()[light_idx])
    raw = image.to_raw().values
    if manifest.noise_sigma > 0:
        raw = np.clip(raw + rng.normal(0.0, manifest.noise_sigma, raw.shape), 0.0, 1.0)
        raw = raw.astype(np.float32)
    # snap to the 16-bit grid the PNG will store
    raw = (np.round(raw.astype(np.float64) * 65535.0) / 65535.0).astype(np.float32)
    return {
        "heights": heights,
        "normals": nmap,
        "albedo": albedo,
        "light_index": light_idx,
        "raw": raw,
        "nir": NirImage(raw, normalized=False).to_normalized().values,
    }


def _nir_name(i):
    return f"{i:05d}_nir.png"


def _nrm_name(i):
    return f"{i:05d}_nrm.png"


def build_dataset(manifest, out_dir):
    """Write all splits plus manifest.json; returns a summary report.

    The report carries per-split file counts and per-light-direction usage
    counts; a failed write surfaces as DatasetError naming the last index
    that completed.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_lights = sum(r[1] for r in manifest.light_rings)
    report = {"splits": {}, "lights": {}}
    for split in _SPLIT_ORDER:
        count = manifest.counts[split]
        sdir = out / split
        sdir.mkdir(exist_ok=True)
        light_counts = [0] * n_lights
        done = -1
        for i in range(count):
            sample = regenerate_sample(manifest, split, i)
            try:
                formats.save_nir_png(sdir / _nir_name(i), sample["raw"])
                formats.save_normal_png(sdir / _nrm_name(i), sample["normals"].normals)
            except OSError as exc:
                raise DatasetError(
                    f"write failed in split {split!r} after index {done}: {exc}") from exc
            light_counts[sample["light_index"]] += 1
            done = i
        report["splits"][split] = count
        report["lights"][split] = light_counts
    (out / "manifest.json").write_text(manifest.to_json())
    return report


def load_batch(dataset_dir, split, indices, manifest=None):
    """Load patches as ((B,1,S,S) NIR in [-1,1], (B,3,S,S) encoded normals).

    Out-of-range indices or unreadable files raise DatasetError naming the
    offending path before anything partial is returned.
    """
    root = Path(dataset_dir)
    manifest = manifest or DatasetManifest.load(root)
    count = manifest.counts.get(split, 0)
    s = manifest.patch_size
    indices = list(indices)
    for i in indices:
        if not 0 <= i < count:
            raise DatasetError(f"index {i} out of range for split {split!r} "
                               f"with {count} samples")
    nir = np.empty((len(indices), 1, s, s), dtype=np.float32)
    nrm = np.empty((len(indices), 3, s, s), dtype=np.float32)
    for row, i in enumerate(indices):
        npath = root / split / _nir_name(i)
        mpath = root / split / _nrm_name(i)
        try:
            raw = formats.load_nir_png(npath)
        except (OSError, formats.FormatError) as exc:
            raise DatasetError(f"cannot load {npath}: {exc}") from exc
        try:
            enc = formats.load_normal_png(mpath)
        except (OSError, formats.FormatError) as exc:
            raise DatasetError(f"cannot load {mpath}: {exc}") from exc
        if raw.shape != (s, s):
            raise DatasetError(f"{npath}: expected {s}x{s}, got {raw.shape}")
        nir[row, 0] = 2.0 * raw - 1.0
        nrm[row] = enc
    return nir, nrm


def dataset_digest(dataset_dir, split, index):
    """SHA-256 of a stored sample pair, for split-disjointness checks."""
    root = Path(dataset_dir) / split
    h = hashlib.sha256()
    h.update(Path(root / _nir_name(index)).read_bytes())
    h.update(Path(root / _nrm_name(index)).read_bytes())
    return h.hexdigest()
