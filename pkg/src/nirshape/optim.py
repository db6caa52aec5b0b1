"""Adam optimizer over tensor parameters."""

import numpy as np

from . import kernels
from .tensor import ShapeError


class DivergedError(RuntimeError):
    """Training produced non-finite gradients or losses."""


class AdamState:
    """Per-parameter Adam buffers plus shared hyperparameters.

    `step_count` starts at 0 and increases by exactly 1 per update; bias
    correction uses the post-increment count.
    """

    def __init__(self, param_shape, dtype, learning_rate=2e-4,
                 beta1=0.5, beta2=0.999, epsilon=1e-8):
        self.first_moment = np.zeros(param_shape, dtype=dtype)
        self.second_moment = np.zeros(param_shape, dtype=dtype)
        self.step_count = 0
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon


def adam_step(param, grad, state, lr=None):
    """Advance one parameter array in place by a bias-corrected Adam update.

    Raises DivergedError on non-finite gradients instead of poisoning the
    moment buffers.
    """
    if grad.shape != param.shape or state.first_moment.shape != param.shape:
        raise ShapeError(
            f"adam_step shape mismatch: param {param.shape}, grad {grad.shape}, "
            f"moments {state.first_moment.shape}")
    if not np.all(np.isfinite(grad)):
        raise DivergedError("non-finite gradient; aborting update")
    state.step_count += 1
    if lr is not None:
        state.learning_rate = lr
    kernels.adam_update(param, np.ascontiguousarray(grad),
                        state.first_moment, state.second_moment,
                        state.step_count, state.learning_rate,
                        state.beta1, state.beta2, state.epsilon)


class Adam:
    """Adam over a list of named Tensor parameters."""

    def __init__(self, params, lr=2e-4, beta1=0.5, beta2=0.999, epsilon=1e-8):
        self.params = list(params)
        self.states = [AdamState(p.data.shape, p.data.dtype, lr, beta1, beta2, epsilon)
                       for p in self.params]

    def step(self, lr=None):
        for p, s in zip(self.params, self.states):
            if p.grad is None:
                continue
            adam_step(p.data, p.grad, s, lr=lr)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    @property
    def step_count(self):
        return self.states[0].step_count if self.states else 0

    def state_arrays(self):
        """Flat (name, array) view of moment buffers, for checkpointing."""
        out = []
        for i, s in enumerate(self.states):
            out.append((f"m{i}", s.first_moment))
            out.append((f"v{i}", s.second_moment))
        return out

    def load_state_arrays(self, blobs, step_count):
        for i, s in enumerate(self.states):
            m, v = blobs[f"m{i}"], blobs[f"v{i}"]
            if m.shape != s.first_moment.shape:
                raise ShapeError(f"optimizer blob m{i} has shape {m.shape}, "
                                 f"expected {s.first_moment.shape}")
            s.first_moment[...] = m
            s.second_moment[...] = v
            s.step_count = step_count
