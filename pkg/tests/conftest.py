import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def finite_difference_check(build_loss, tensors, h=1e-4, rtol=1e-3,
                            max_entries=None):
    """Compare analytic gradients against central finite differences.

    `build_loss` recomputes the scalar loss tensor from the current values
    of `tensors` (float64 leaves with requires_grad). Every entry (or a
    strided subset capped at `max_entries`) is perturbed.
    """
    for t in tensors:
        t.grad = None
    loss = build_loss()
    loss.backward()
    grads = [t.grad.copy() for t in tensors]
    for t, grad in zip(tensors, grads):
        assert grad is not None and np.all(np.isfinite(grad))
        flat = t.data.ravel()
        n = flat.size
        step = max(1, n // max_entries) if max_entries else 1
        for i in range(0, n, step):
            orig = flat[i]
            flat[i] = orig + h
            up = build_loss().item()
            flat[i] = orig - h
            dn = build_loss().item()
            flat[i] = orig
            fd = (up - dn) / (2.0 * h)
            an = grad.ravel()[i]
            err = abs(an - fd) / max(abs(an), abs(fd), 1e-4)
            assert err < rtol, (f"gradient mismatch at flat index {i}: "
                                f"analytic {an}, fd {fd}, rel err {err:.2e}")
