"""Evaluation metrics and report emission.

Angular statistics are pooled per-pixel over all valid pixels of a split
(medians are per-pixel medians); per-image means are reported alongside.
"Intensity error" is the absolute componentwise difference between the
[-1,1]-encoded normal maps.
"""

import json
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import synthdata
from .photometry import NormalMap, decode_normals, renormalize_to_hemisphere
from .tensor import ShapeError, Tensor, no_grad
from .trainer import TrainConfig, build_models

REPORT_VERSION = 1

# Published full-benchmark results for orientation only: captured-NIR data
# at training scales this toolkit does not reproduce. Never a test target.
REFERENCE_FULL_SCALE = {
    "mean_angular_deg": 15.56,
    "detail_map_mean_angular_deg": 3.61,
    "note": "original full-scale captured-NIR benchmark, distance+angular "
            "objective; not comparable to desk-scale synthetic runs",
}


def angular_error_map(y, g):
    """Per-pixel angle in degrees between two normal maps.

    Returns (errors (H,W), valid (H,W)); pixels flagged invalid on either
    input are excluded from `valid`.
    """
    if (y.height, y.width) != (g.height, g.width):
        raise ShapeError(f"extent mismatch: {y.height}x{y.width} vs "
                         f"{g.height}x{g.width}")
    dot = np.clip(np.einsum("chw,chw->hw",
                            y.normals.astype(np.float64),
                            g.normals.astype(np.float64)), -1.0, 1.0)
    return np.degrees(np.arccos(dot)), y.valid & g.valid


def good_pixels(err_map, valid=None, thresholds=(10.0, 15.0, 20.0)):
    """Fractions of valid pixels with error strictly below each threshold."""
    err = np.asarray(err_map)
    if valid is not None:
        err = err[np.asarray(valid, dtype=bool)]
    err = err.ravel()
    if err.size == 0:
        raise ValueError("no valid pixels to evaluate")
    return tuple(float((err < t).mean()) for t in thresholds)


def intensity_error(y_enc, g_enc):
    """Mean/median absolute componentwise difference of encoded maps."""
    y_enc = np.asarray(y_enc, dtype=np.float64)
    g_enc = np.asarray(g_enc, dtype=np.float64)
    if y_enc.shape != g_enc.shape:
        raise ShapeError(f"extent mismatch: {y_enc.shape} vs {g_enc.shape}")
    d = np.abs(y_enc - g_enc)
    return float(d.mean()), float(np.median(d))


def gaussian_blur(field, sigma=3.0, ksize=13):
    """Separable Gaussian with reflected borders over the trailing 2 axes."""
    if ksize % 2 != 1:
        raise ValueError("kernel size must be odd")
    half = ksize // 2
    t = np.arange(ksize) - half
    k = np.exp(-(t * t) / (2.0 * sigma * sigma))
    k /= k.sum()
    x = np.asarray(field, dtype=np.float64)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    pad = np.pad(x, ((0, 0), (half, half), (0, 0)), mode="reflect")
    x = sum(k[i] * pad[:, i:i + x.shape[1], :] for i in range(ksize))
    pad = np.pad(x, ((0, 0), (0, 0), (half, half)), mode="reflect")
    x = sum(k[i] * pad[:, :, i:i + x.shape[2]] for i in range(ksize))
    return x[0] if squeeze else x


def detail_map(y, g, sigma=3.0, ksize=13, identity=False):
    """Graft g's high-frequency detail onto y's low-frequency base.

    Componentwise f(Y) + G - f(G) with f a Gaussian blur (reflected
    borders), renormalized to unit hemisphere vectors. `identity=True` is
    the sigma -> 0 limit where f passes through and the map collapses to
    renormalized g.
    """
    if (y.height, y.width) != (g.height, g.width):
        raise ShapeError(f"extent mismatch: {y.height}x{y.width} vs "
                         f"{g.height}x{g.width}")
    ya = y.normals.astype(np.float64)
    ga = g.normals.astype(np.float64)
    if identity:
        m = ya + ga - ya
    else:
        m = gaussian_blur(ya, sigma, ksize) + ga - gaussian_blur(ga, sigma, ksize)
    v, _ = renormalize_to_hemisphere(m)
    return NormalMap(v.astype(np.float32), valid=(y.valid & g.valid), check=False)


def load_generator(ckpt_path):
    """Build nets from a checkpoint's sidecar config echo and restore them."""
    sidecar = Path(ckpt_path).with_suffix(".json")
    if not sidecar.exists():
        raise ckpt.CheckpointError(f"missing config sidecar {sidecar}")
    echo = json.loads(sidecar.read_text())
    config = TrainConfig.from_dict(echo["config"])
    gen, disc, opt_g, opt_d = build_models(config)
    iteration = ckpt.load_checkpoint(ckpt_path, gen, disc, opt_g, opt_d)
    return gen, config, iteration


def infer_normals(gen, nir_values):
    """Run the generator in eval mode on one normalized (H,W) NIR image."""
    with no_grad():
        out = gen.forward(Tensor(nir_values[None, None].astype(np.float32)),
                          training=False)
    return decode_normals(out.data[0])


def _pooled_stats(err_all, int_all, thresholds):
    err = np.concatenate([e.ravel() for e in err_all])
    absdiff = np.concatenate([d.ravel() for d in int_all])
    g10, g15, g20 = good_pixels(err, thresholds=thresholds)
    return {
        "mean_angular_deg": float(err.mean()),
        "median_angular_deg": float(np.median(err)),
        "good_pixels": {"10": g10, "15": g15, "20": g20},
        "intensity_mae_mean": float(absdiff.mean()),
        "intensity_mae_median": float(np.median(absdiff)),
    }


def evaluate(ckpt_path, dataset_dir, split, sigma=3.0, out_path=None,
             predictor=None):
    """Full-split metrics for a checkpointed generator; returns the report.

    Raw metrics compare the estimate against ground truth directly; the
    detail-map variant re-scores after grafting estimated detail onto the
    ground-truth base. `predictor` (NormalMap -> NormalMap-compatible
    callable on encoded NIR arrays) can replace the generator, which the
    baseline comparisons use.
    """
    manifest = synthdata.DatasetManifest.load(dataset_dir)
    count = manifest.counts.get(split, 0)
    if count < 1:
        raise ValueError(f"split {split!r} is empty")
    gen = config = iteration = None
    if predictor is None:
        gen, config, iteration = load_generator(ckpt_path)
        predictor = lambda nir: infer_normals(gen, nir)  # noqa: E731

    thresholds = (10.0, 15.0, 20.0)
    raw_err, raw_int, det_err, det_int, per_image = [], [], [], [], []
    for i in range(count):
        nir, nrm = synthdata.load_batch(dataset_dir, split, [i], manifest=manifest)
        truth = decode_normals(nrm[0])
        est = predictor(nir[0, 0])
        err, valid = angular_error_map(truth, est)
        raw_err.append(err[valid])
        raw_int.append(np.abs(truth.normals.astype(np.float64)
                              - est.normals.astype(np.float64))[:, valid])
        det = detail_map(truth, est, sigma=sigma)
        derr, dvalid = angular_error_map(truth, det)
        det_err.append(derr[dvalid])
        det_int.append(np.abs(truth.normals.astype(np.float64)
                              - det.normals.astype(np.float64))[:, dvalid])
        per_image.append({"index": i,
                          "mean_angular_deg": float(err[valid].mean()),
                          "detail_mean_angular_deg": float(derr[dvalid].mean())})

    report = {
        "report_version": REPORT_VERSION,
        "split": split,
        "images": count,
        "pixels": int(sum(e.size for e in raw_err)),
        "median_scope": "per_pixel",
        "smoother_sigma": sigma,
        "checkpoint": str(ckpt_path) if gen is not None else None,
        "iteration": iteration,
        "raw": _pooled_stats(raw_err, raw_int, thresholds),
        "detail_map": _pooled_stats(det_err, det_int, thresholds),
        "per_image": per_image,
        "reference_full_scale": REFERENCE_FULL_SCALE,
    }
    if out_path is not None:
        Path(out_path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


def constant_normal_predictor(nir_values):
    """The flat (0,0,1) baseline predictor."""
    h, w = nir_values.shape
    n = np.zeros((3, h, w), dtype=np.float32)
    n[2] = 1.0
    return NormalMap(n)
