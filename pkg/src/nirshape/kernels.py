"""Hot numeric kernels with two interchangeable implementations.

Every kernel exists twice: a numba ``@njit`` version (default) and a pure
numpy version. ``NIRSHAPE_BACKEND`` selects at import time:

* ``auto``  (default) — numba when importable, numpy otherwise
* ``numba`` — force numba, raise if unavailable
* ``numpy`` — force the pure-numpy fallback

``python -m nirshape.bench`` times both sides. Convolution inputs arrive
pre-padded; gradients w.r.t. input are returned in padded coordinates and
cropped by the caller.
"""

import os

import numpy as np

_ENV_FLAG = "NIRSHAPE_BACKEND"


def _resolve_backend():
    choice = os.environ.get(_ENV_FLAG, "auto").strip().lower()
    if choice not in ("auto", "numba", "numpy"):
        raise ValueError(f"{_ENV_FLAG} must be auto|numba|numpy, got {choice!r}")
    if choice == "numpy":
        return "numpy"
    try:
        import numba  # noqa: F401
        return "numba"
    except ImportError:
        if choice == "numba":
            raise
        return "numpy"


_BACKEND = _resolve_backend()


def active_backend():
    """Name of the kernel implementation in use ('numba' or 'numpy')."""
    return _BACKEND


# ---------------------------------------------------------------------------
# numpy fallback implementations
# ---------------------------------------------------------------------------

def _im2col(xp, kh, kw, stride):
    # (B,C,Hp,Wp) -> (B*Ho*Wo, C*kh*kw) patch matrix
    b, c, hp, wp = xp.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    s0, s1, s2, s3 = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp, (b, c, ho, wo, kh, kw), (s0, s1, s2 * stride, s3 * stride, s2, s3))
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(b * ho * wo, c * kh * kw)


def _np_conv2d_forward(xp, w, stride):
    cout, cin, kh, kw = w.shape
    b, _, hp, wp = xp.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    cols = _im2col(xp, kh, kw, stride)
    out = cols @ w.reshape(cout, -1).T
    return np.ascontiguousarray(out.reshape(b, ho, wo, cout).transpose(0, 3, 1, 2))


def _np_conv2d_grad_weight(dout, xp, kh, kw, stride):
    b, cout, ho, wo = dout.shape
    cin = xp.shape[1]
    cols = _im2col(xp, kh, kw, stride)                      # (B*Ho*Wo, Cin*kh*kw)
    d2 = dout.transpose(0, 2, 3, 1).reshape(-1, cout)       # (B*Ho*Wo, Cout)
    return (d2.T @ cols).reshape(cout, cin, kh, kw)


def _np_conv2d_grad_input(dout, w, stride, hp, wp):
    b, cout, ho, wo = dout.shape
    cout_, cin, kh, kw = w.shape
    d2 = dout.transpose(0, 2, 3, 1).reshape(-1, cout)       # (B*Ho*Wo, Cout)
    dcols = d2 @ w.reshape(cout, -1)                        # (B*Ho*Wo, Cin*kh*kw)
    dcols = dcols.reshape(b, ho, wo, cin, kh, kw)
    dxp = np.zeros((b, cin, hp, wp), dtype=dout.dtype)
    # col2im: accumulate one shifted slab per kernel tap
    for ky in range(kh):
        for kx in range(kw):
            dxp[:, :, ky:ky + ho * stride:stride, kx:kx + wo * stride:stride] += \
                dcols[:, :, :, :, ky, kx].transpose(0, 3, 1, 2)
    return dxp


def _np_adam_update(param, grad, m, v, step, lr, beta1, beta2, eps):
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1 ** step)
    vhat = v / (1.0 - beta2 ** step)
    param -= lr * mhat / (np.sqrt(vhat) + eps)


def _np_photometric_solve(images, lights, min_rows):
    # per-pixel weighted normal equations, zero-intensity rows dropped
    k, h, w = images.shape
    flat = images.reshape(k, -1)                            # (K, P)
    active = flat > 0.0
    counts = active.sum(axis=0)
    lt = lights.astype(np.float64)
    # A = sum_k a_k l_k l_k^T, rhs = sum_k a_k I_k l_k, per pixel
    a = np.einsum('kp,ki,kj->pij', active.astype(np.float64), lt, lt)
    rhs = np.einsum('kp,kp,ki->pi', active.astype(np.float64), flat.astype(np.float64), lt)
    dets = np.linalg.det(a)
    solvable = (counts >= min_rows) & (np.abs(dets) > 1e-12)
    sol = np.zeros((h * w, 3))
    if solvable.any():
        sol[solvable] = np.linalg.solve(a[solvable], rhs[solvable, :, None])[..., 0]
    rho = np.linalg.norm(sol, axis=1)
    valid = solvable & (rho > 1e-12) & (sol[:, 2] > 0.0)
    normals = np.zeros((h * w, 3))
    normals[:, 2] = 1.0
    normals[valid] = sol[valid] / rho[valid, None]
    rho[~valid] = 0.0
    return (normals.T.reshape(3, h, w).astype(images.dtype),
            rho.reshape(h, w).astype(images.dtype),
            valid.reshape(h, w))


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if _BACKEND == "numba":
    from numba import njit, prange

    @njit(parallel=True, fastmath=True, cache=True)
    def _nb_conv2d_forward_s1k3(xp, w):
        b, cin, hp, wp = xp.shape
        cout = w.shape[0]
        ho = hp - 2
        wo = wp - 2
        out = np.zeros((b, cout, ho, wo), dtype=xp.dtype)
        for bc in prange(b * cout):
            bi = bc // cout
            co = bc % cout
            for oy in range(ho):
                orow = out[bi, co, oy]
                for ci in range(cin):
                    for ky in range(3):
                        xrow = xp[bi, ci, oy + ky]
                        w0 = w[co, ci, ky, 0]
                        w1 = w[co, ci, ky, 1]
                        w2 = w[co, ci, ky, 2]
                        for ox in range(wo):
                            orow[ox] += w0 * xrow[ox] + w1 * xrow[ox + 1] + w2 * xrow[ox + 2]
        return out

    @njit(parallel=True, fastmath=True, cache=True)
    def _nb_conv2d_forward_s1(xp, w):
        b, cin, hp, wp = xp.shape
        cout, _, kh, kw = w.shape
        ho = hp - kh + 1
        wo = wp - kw + 1
        out = np.zeros((b, cout, ho, wo), dtype=xp.dtype)
        for bc in prange(b * cout):
            bi = bc // cout
            co = bc % cout
            for oy in range(ho):
                orow = out[bi, co, oy]
                for ci in range(cin):
                    for ky in range(kh):
                        xrow = xp[bi, ci, oy + ky]
                        for kx in range(kw):
                            wv = w[co, ci, ky, kx]
                            for ox in range(wo):
                                orow[ox] += wv * xrow[ox + kx]
        return out

    @njit(parallel=True, fastmath=True, cache=True)
    def _nb_conv2d_grad_input_s1k3(dout, w, hp, wp):
        b, cout, ho, wo = dout.shape
        cin = w.shape[1]
        dxp = np.zeros((b, cin, hp, wp), dtype=dout.dtype)
        for bc in prange(b * cin):
            bi = bc // cin
            ci = bc % cin
            for co in range(cout):
                for oy in range(ho):
                    drow = dout[bi, co, oy]
                    for ky in range(3):
                        dxrow = dxp[bi, ci, oy + ky]
                        w0 = w[co, ci, ky, 0]
                        w1 = w[co, ci, ky, 1]
                        w2 = w[co, ci, ky, 2]
                        # one tap per pass keeps the writes non-overlapping
                        for ox in range(wo):
                            dxrow[ox] += w0 * drow[ox]
                        for ox in range(wo):
                            dxrow[ox + 1] += w1 * drow[ox]
                        for ox in range(wo):
                            dxrow[ox + 2] += w2 * drow[ox]
        return dxp

    @njit(parallel=True, fastmath=True, cache=True)
    def _nb_conv2d_grad_input_s1(dout, w, hp, wp):
        b, cout, ho, wo = dout.shape
        cin, kh, kw = w.shape[1], w.shape[2], w.shape[3]
        dxp = np.zeros((b, cin, hp, wp), dtype=dout.dtype)
        for bc in prange(b * cin):
            bi = bc // cin
            ci = bc % cin
            for co in range(cout):
                for oy in range(ho):
                    drow = dout[bi, co, oy]
                    for ky in range(kh):
                        dxrow = dxp[bi, ci, oy + ky]
                        for kx in range(kw):
                            wv = w[co, ci, ky, kx]
                            for ox in range(wo):
                                dxrow[ox + kx] += wv * drow[ox]
        return dxp

    @njit(parallel=True, fastmath=True, cache=True)
    def _nb_conv2d_grad_weight_s1k3(dout, xp):
        b, cout, ho, wo = dout.shape
        cin = xp.shape[1]
        dw = np.zeros((cout, cin, 3, 3), dtype=dout.dtype)
        for cc in prange(cout * cin):
            co = cc // cin
            ci = cc % cin
            # nine independent accumulator chains keep the FMA units busy
            s00 = s01 = s02 = s10 = s11 = s12 = s20 = s21 = s22 = 0.0
            for bi in range(b):
                for oy in range(ho):
                    drow = dout[bi, co, oy]
                    x0 = xp[bi, ci, oy]
                    x1 = xp[bi, ci, oy + 1]
                    x2 = xp[bi, ci, oy + 2]
                    for ox in range(wo):
                        g = drow[ox]
                        s00 += g * x0[ox]
                        s01 += g * x0[ox + 1]
                        s02 += g * x0[ox + 2]
                        s10 += g * x1[ox]
                        s11 += g * x1[ox + 1]
                        s12 += g * x1[ox + 2]
                        s20 += g * x2[ox]
                        s21 += g * x2[ox + 1]
                        s22 += g * x2[ox + 2]
            dw[co, ci, 0, 0] = s00
            dw[co, ci, 0, 1] = s01
            dw[co, ci, 0, 2] = s02
            dw[co, ci, 1, 0] = s10
            dw[co, ci, 1, 1] = s11
            dw[co, ci, 1, 2] = s12
            dw[co, ci, 2, 0] = s20
            dw[co, ci, 2, 1] = s21
            dw[co, ci, 2, 2] = s22
        return dw

    @njit(parallel=True, fastmath=True, cache=True)
    def _nb_conv2d_grad_weight_s1(dout, xp, kh, kw):
        b, cout, ho, wo = dout.shape
        cin = xp.shape[1]
        dw = np.zeros((cout, cin, kh, kw), dtype=dout.dtype)
        for cc in prange(cout * cin):
            co = cc // cin
            ci = cc % cin
            for bi in range(b):
                for oy in range(ho):
                    drow = dout[bi, co, oy]
                    for ky in range(kh):
                        xrow = xp[bi, ci, oy + ky]
                        for kx in range(kw):
                            acc = 0.0
                            for ox in range(wo):
                                acc += drow[ox] * xrow[ox + kx]
                            dw[co, ci, ky, kx] += acc
        return dw

    @njit(parallel=True, fastmath=True, cache=True)
    def _nb_adam_update(param, grad, m, v, step, lr, beta1, beta2, eps):
        c1 = 1.0 - beta1 ** step
        c2 = 1.0 - beta2 ** step
        p = param.ravel()
        g = grad.ravel()
        mf = m.ravel()
        vf = v.ravel()
        for i in prange(p.size):
            mi = beta1 * mf[i] + (1.0 - beta1) * g[i]
            vi = beta2 * vf[i] + (1.0 - beta2) * g[i] * g[i]
            mf[i] = mi
            vf[i] = vi
            p[i] -= lr * (mi / c1) / (np.sqrt(vi / c2) + eps)

    @njit(fastmath=True, cache=True)
    def _nb_adam_update_serial(param, grad, m, v, step, lr, beta1, beta2, eps):
        # small parameter blocks: a parallel region costs more than the work
        c1 = 1.0 - beta1 ** step
        c2 = 1.0 - beta2 ** step
        p = param.ravel()
        g = grad.ravel()
        mf = m.ravel()
        vf = v.ravel()
        for i in range(p.size):
            mi = beta1 * mf[i] + (1.0 - beta1) * g[i]
            vi = beta2 * vf[i] + (1.0 - beta2) * g[i] * g[i]
            mf[i] = mi
            vf[i] = vi
            p[i] -= lr * (mi / c1) / (np.sqrt(vi / c2) + eps)

    @njit(parallel=True, fastmath=True, cache=True)
    def _nb_photometric_solve(images, lights, min_rows):
        k, h, w = images.shape
        normals = np.zeros((3, h, w), dtype=images.dtype)
        rho = np.zeros((h, w), dtype=images.dtype)
        valid = np.zeros((h, w), dtype=np.bool_)
        for y in prange(h):
            for x in range(w):
                a00 = a01 = a02 = a11 = a12 = a22 = 0.0
                b0 = b1 = b2 = 0.0
                rows = 0
                for i in range(k):
                    inten = images[i, y, x]
                    if inten <= 0.0:
                        continue
                    rows += 1
                    lx, ly, lz = lights[i, 0], lights[i, 1], lights[i, 2]
                    a00 += lx * lx
                    a01 += lx * ly
                    a02 += lx * lz
                    a11 += ly * ly
                    a12 += ly * lz
                    a22 += lz * lz
                    b0 += inten * lx
                    b1 += inten * ly
                    b2 += inten * lz
                normals[2, y, x] = 1.0
                if rows < min_rows:
                    continue
                det = (a00 * (a11 * a22 - a12 * a12)
                       - a01 * (a01 * a22 - a12 * a02)
                       + a02 * (a01 * a12 - a11 * a02))
                if abs(det) <= 1e-12:
                    continue
                s0 = (b0 * (a11 * a22 - a12 * a12)
                      - a01 * (b1 * a22 - a12 * b2)
                      + a02 * (b1 * a12 - a11 * b2)) / det
                s1 = (a00 * (b1 * a22 - b2 * a12)
                      - b0 * (a01 * a22 - a12 * a02)
                      + a02 * (a01 * b2 - b1 * a02)) / det
                s2 = (a00 * (a11 * b2 - a12 * b1)
                      - a01 * (a01 * b2 - b1 * a02)
                      + b0 * (a01 * a12 - a11 * a02)) / det
                r = np.sqrt(s0 * s0 + s1 * s1 + s2 * s2)
                if r <= 1e-12 or s2 <= 0.0:
                    continue
                normals[0, y, x] = s0 / r
                normals[1, y, x] = s1 / r
                normals[2, y, x] = s2 / r
                rho[y, x] = r
                valid[y, x] = True
        return normals, rho, valid


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

# Strided and 1x1 convolutions go through the GEMM path on both backends:
# loop kernels lose unit-stride access under striding, and a 1x1 kernel IS
# a plain matmul, so the benchmark (python -m nirshape.bench) favors
# im2col+BLAS for both. The numba backend claims the stride-1 k>=3 kernels,
# which dominate training time.

def _loop_kernel_fits(stride, kh, kw):
    return _BACKEND == "numba" and stride == 1 and (kh, kw) != (1, 1)


def conv2d_forward(xp, w, stride):
    """Correlate padded input (B,Cin,Hp,Wp) with kernels (Cout,Cin,kh,kw)."""
    if _loop_kernel_fits(stride, w.shape[2], w.shape[3]):
        if w.shape[2] == 3 and w.shape[3] == 3:
            return _nb_conv2d_forward_s1k3(xp, w)
        return _nb_conv2d_forward_s1(xp, w)
    return _np_conv2d_forward(xp, w, stride)


def conv2d_grad_input(dout, w, stride, hp, wp):
    """Gradient w.r.t. the padded input, shape (B,Cin,Hp,Wp)."""
    if _loop_kernel_fits(stride, w.shape[2], w.shape[3]):
        if w.shape[2] == 3 and w.shape[3] == 3:
            return _nb_conv2d_grad_input_s1k3(dout, w, hp, wp)
        return _nb_conv2d_grad_input_s1(dout, w, hp, wp)
    return _np_conv2d_grad_input(dout, w, stride, hp, wp)


def conv2d_grad_weight(dout, xp, kh, kw, stride):
    """Gradient w.r.t. the kernel, shape (Cout,Cin,kh,kw)."""
    if _loop_kernel_fits(stride, kh, kw):
        if kh == 3 and kw == 3:
            return _nb_conv2d_grad_weight_s1k3(dout, xp)
        return _nb_conv2d_grad_weight_s1(dout, xp, kh, kw)
    return _np_conv2d_grad_weight(dout, xp, kh, kw, stride)


def adam_update(param, grad, m, v, step, lr, beta1, beta2, eps):
    """One in-place Adam update with bias correction. `step` counts from 1."""
    if _BACKEND == "numba":
        if param.size < 65536:
            _nb_adam_update_serial(param, grad, m, v, step, lr, beta1, beta2, eps)
        else:
            _nb_adam_update(param, grad, m, v, step, lr, beta1, beta2, eps)
    else:
        _np_adam_update(param, grad, m, v, step, lr, beta1, beta2, eps)


def photometric_solve(images, lights, min_rows=3):
    """Per-pixel least-squares normal recovery from raw intensity stacks.

    Rows with zero intensity are dropped pixel-wise; pixels keeping fewer
    than `min_rows` rows (or with a singular/negative-z solution) come back
    invalid with placeholder normal (0,0,1) and albedo 0.

    Returns (normals (3,H,W), albedo (H,W), valid (H,W) bool).
    """
    if _BACKEND == "numba":
        return _nb_photometric_solve(images, lights.astype(images.dtype), min_rows)
    return _np_photometric_solve(images, lights, min_rows)
