"""Kernel benchmark: numba against the pure-numpy fallback.

Run as ``python -m nirshape.bench``. Requires the numba backend (the
default); under ``NIRSHAPE_BACKEND=numpy`` only the fallback is timed.
"""

import time

import numpy as np

from . import kernels as K


def _time(fn, repeat=7):
    fn()  # warm up / compile
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _conv_cases():
    # stride-1 shapes only: strided convolutions route to the GEMM path on
    # both backends (see the dispatch note in kernels.py)
    rng = np.random.default_rng(0)
    cases = []
    for label, (b, cin, cout, size, stride) in (
            ("gen 64x64 smoke", (8, 32, 32, 64, 1)),
            ("gen 64x64 full", (4, 128, 128, 64, 1))):
        xp = rng.standard_normal((b, cin, size + 2, size + 2)).astype(np.float32)
        w = rng.standard_normal((cout, cin, 3, 3)).astype(np.float32)
        cases.append((label, xp, w, stride))
    return cases


def run(out=print):
    rows = []
    numba_on = K.active_backend() == "numba"
    for label, xp, w, stride in _conv_cases():
        ho = (xp.shape[2] - 3) // stride + 1
        flops = 2 * xp.shape[0] * w.shape[0] * ho * ho * w.shape[1] * 9
        t_np = _time(lambda: K._np_conv2d_forward(xp, w, stride))
        entry = {"kernel": f"conv2d fwd {label}", "numpy_ms": t_np * 1e3,
                 "gflops_numpy": flops / t_np / 1e9}
        if numba_on:
            t_nb = _time(lambda: K.conv2d_forward(xp, w, stride))
            dout = np.ascontiguousarray(K.conv2d_forward(xp, w, stride))
            entry.update(numba_ms=t_nb * 1e3, gflops_numba=flops / t_nb / 1e9,
                         speedup=t_np / t_nb)
            rows.append(entry)
            t_np_b = _time(lambda: K._np_conv2d_grad_input(
                dout, w, stride, xp.shape[2], xp.shape[3]))
            t_nb_b = _time(lambda: K.conv2d_grad_input(
                dout, w, stride, xp.shape[2], xp.shape[3]))
            rows.append({"kernel": f"conv2d dgrad {label}",
                         "numpy_ms": t_np_b * 1e3, "numba_ms": t_nb_b * 1e3,
                         "speedup": t_np_b / t_nb_b})
            t_np_w = _time(lambda: K._np_conv2d_grad_weight(dout, xp, 3, 3, stride))
            t_nb_w = _time(lambda: K.conv2d_grad_weight(dout, xp, 3, 3, stride))
            rows.append({"kernel": f"conv2d wgrad {label}",
                         "numpy_ms": t_np_w * 1e3, "numba_ms": t_nb_w * 1e3,
                         "speedup": t_np_w / t_nb_w})
        else:
            rows.append(entry)

    rng = np.random.default_rng(1)
    p = rng.standard_normal(1_000_000).astype(np.float32)
    g = rng.standard_normal(1_000_000).astype(np.float32)
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    t_np = _time(lambda: K._np_adam_update(p, g, m, v, 3, 2e-4, 0.5, 0.999, 1e-8))
    entry = {"kernel": "adam 1e6 params", "numpy_ms": t_np * 1e3}
    if numba_on:
        t_nb = _time(lambda: K.adam_update(p, g, m, v, 3, 2e-4, 0.5, 0.999, 1e-8))
        entry.update(numba_ms=t_nb * 1e3, speedup=t_np / t_nb)
    rows.append(entry)

    imgs = rng.uniform(0.0, 1.0, (12, 128, 128))
    lights = rng.standard_normal((12, 3))
    lights[:, 2] = np.abs(lights[:, 2]) + 0.5
    lights /= np.linalg.norm(lights, axis=1, keepdims=True)
    t_np = _time(lambda: K._np_photometric_solve(imgs, lights, 3), repeat=3)
    entry = {"kernel": "photometric solve 128x128x12", "numpy_ms": t_np * 1e3}
    if numba_on:
        t_nb = _time(lambda: K.photometric_solve(imgs, lights), repeat=3)
        entry.update(numba_ms=t_nb * 1e3, speedup=t_np / t_nb)
    rows.append(entry)

    out(f"kernel backend: {K.active_backend()}")
    header = f"{'kernel':34} {'numpy ms':>9} {'numba ms':>9} {'speedup':>8}"
    out(header)
    out("-" * len(header))
    for r in rows:
        nb = f"{r['numba_ms']:9.2f}" if "numba_ms" in r else "        -"
        sp = f"{r['speedup']:7.1f}x" if "speedup" in r else "       -"
        out(f"{r['kernel']:34} {r['numpy_ms']:9.2f} {nb} {sp}")
    return rows


if __name__ == "__main__":
    run()
