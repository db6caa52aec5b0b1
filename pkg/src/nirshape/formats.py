"""On-disk codecs: 16-bit PNGs, PFM float images, and OBJ meshes.

Byte-exact conventions (also in docs/formats.md):

* normal PNG — 16-bit RGB, R=nx G=ny B=nz, value = round((c+1)/2 * 65535)
* NIR PNG — 16-bit grayscale of raw radiance, value = round(v * 65535)
* PFM — 'Pf' header, "<W> <H>", scale line "-1.0" (little-endian float32),
  rows stored bottom-to-top
* OBJ — ASCII 'v x y z', 'vn x y z', 'f a//a b//b c//c' (1-based indices)

PNG byte streams are produced with a fixed compression level so identical
arrays encode to identical files.
"""

import numpy as np
import cv2

from .tensor import ShapeError

_PNG_PARAMS = [cv2.IMWRITE_PNG_COMPRESSION, 6]


class FormatError(ValueError):
    """File contents do not match the documented layout."""


def _encode_png(arr):
    ok, buf = cv2.imencode(".png", arr, _PNG_PARAMS)
    if not ok:
        raise FormatError("PNG encoding failed")
    return buf.tobytes()


def save_normal_png(path, normals):
    """Write a (3,H,W) normal array in [-1,1] as 16-bit RGB PNG."""
    normals = np.asarray(normals)
    if normals.ndim != 3 or normals.shape[0] != 3:
        raise ShapeError(f"expected (3,H,W) normals, got {normals.shape}")
    u = np.round((normals.astype(np.float64) + 1.0) / 2.0 * 65535.0)
    u = np.clip(u, 0, 65535).astype(np.uint16)
    bgr = np.stack([u[2], u[1], u[0]], axis=-1)  # cv2 stores channels as BGR
    with open(path, "wb") as f:
        f.write(_encode_png(bgr))


def load_normal_png(path):
    """Read a 16-bit RGB normal PNG back to a (3,H,W) float32 array in [-1,1]."""
    bgr = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if bgr is None:
        raise FormatError(f"cannot read PNG: {path}")
    if bgr.ndim != 3 or bgr.shape[2] != 3 or bgr.dtype != np.uint16:
        raise FormatError(f"{path}: expected 16-bit 3-channel PNG, got "
                          f"{bgr.dtype} x{bgr.shape}")
    u = np.stack([bgr[..., 2], bgr[..., 1], bgr[..., 0]]).astype(np.float64)
    return (u / 65535.0 * 2.0 - 1.0).astype(np.float32)


def save_nir_png(path, raw):
    """Write raw radiance in [0,1] as 16-bit grayscale PNG."""
    raw = np.asarray(raw)
    if raw.ndim != 2:
        raise ShapeError(f"expected (H,W) radiance, got {raw.shape}")
    u = np.clip(np.round(raw.astype(np.float64) * 65535.0), 0, 65535).astype(np.uint16)
    with open(path, "wb") as f:
        f.write(_encode_png(u))


def load_nir_png(path):
    """Read a 16-bit grayscale PNG back to raw radiance in [0,1]."""
    u = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if u is None:
        raise FormatError(f"cannot read PNG: {path}")
    if u.ndim != 2 or u.dtype != np.uint16:
        raise FormatError(f"{path}: expected 16-bit grayscale PNG, got "
                          f"{u.dtype} x{u.shape}")
    return (u.astype(np.float64) / 65535.0).astype(np.float32)


def save_pfm(path, values):
    """Write a (H,W) float image as little-endian grayscale PFM (scale -1)."""
    values = np.asarray(values, dtype=np.float32)
    if values.ndim != 2:
        raise ShapeError(f"expected (H,W) image, got {values.shape}")
    h, w = values.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{w} {h}\n".encode())
        f.write(b"-1.0\n")
        f.write(values[::-1].astype("<f4").tobytes())


def load_pfm(path):
    with open(path, "rb") as f:
        if f.readline().strip() != b"Pf":
            raise FormatError(f"{path}: not a grayscale PFM")
        w, h = map(int, f.readline().split())
        scale = float(f.readline())
        if scale >= 0:
            raise FormatError(f"{path}: big-endian PFM not supported")
        data = np.frombuffer(f.read(4 * w * h), dtype="<f4")
    if data.size != w * h:
        raise FormatError(f"{path}: truncated PFM payload")
    return data.reshape(h, w)[::-1].copy()


def save_obj(path, vertices, normals, faces):
    """Write a triangle mesh as ASCII OBJ with per-vertex normals."""
    lines = []
    for v in vertices:
        lines.append(f"v {v[0]:.6f} {v[1]:.6f} {v[2]:.6f}")
    for n in normals:
        lines.append(f"vn {n[0]:.6f} {n[1]:.6f} {n[2]:.6f}")
    for f3 in faces:
        a, b, c = (int(i) + 1 for i in f3)
        lines.append(f"f {a}//{a} {b}//{b} {c}//{c}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_obj(path):
    """Parse the OBJ subset written by save_obj.

    Returns (vertices (N,3), normals (K,3), faces (M,3) 0-based).
    """
    verts, norms, faces = [], [], []
    with open(path) as f:
        for line in f:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "vn":
                norms.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                faces.append([int(tok.split("/")[0]) - 1 for tok in parts[1:4]])
    return (np.array(verts, dtype=np.float64),
            np.array(norms, dtype=np.float64),
            np.array(faces, dtype=np.int64))
