"""Generator and discriminator network definitions.

The generator maps a 1-channel NIR image to a 3-channel normal map through
five zero-padded stride-1 convolutions, so spatial size is preserved and
the net is fully convolutional. The discriminator scores (NIR, normal)
pairs through four stride-2 convolutions, a 1x1 projection, sigmoid and a
global average, yielding one probability per sample; its stride/pad
schedule assumes 64x64 inputs (64 -> 31 -> 15 -> 7 -> 3).

Biases exist only on the final convolution of each net; the others feed
batch norm where a bias would be redundant with beta.
"""

import numpy as np

from . import tensor as T
from .tensor import Tensor, ShapeError

GENERATOR_FILTERS = (128, 256, 256, 128)
DISCRIMINATOR_FILTERS = (64, 128, 256, 512, 256)
LEAKY_SLOPE = 0.2
BN_EPS = 1e-5
BN_MOMENTUM = 0.1
WEIGHT_STD = 0.02


class StatsError(RuntimeError):
    """Batch-norm used in eval mode before any statistics were collected."""


class BatchNorm:
    """Learnable per-channel affine over batch statistics."""

    def __init__(self, channels, momentum=BN_MOMENTUM, eps=BN_EPS, dtype=np.float32):
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.initialized = False
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x, training):
        if training:
            self.initialized = True
        elif not self.initialized:
            raise StatsError("eval-mode batch norm before any training batch")
        return T.batch_norm(x, self.gamma, self.beta,
                            self.running_mean, self.running_var,
                            training, self.momentum, self.eps)


class ConvLayer:
    """Convolution + optional batch norm + activation."""

    def __init__(self, cin, cout, ksize, stride, pad, norm, activation,
                 bias, dtype=np.float32):
        self.weight = Tensor(np.zeros((cout, cin, ksize, ksize), dtype=dtype),
                             requires_grad=True)
        self.bias = (Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)
                     if bias else None)
        self.stride = stride
        self.pad = pad
        self.norm = BatchNorm(cout, dtype=dtype) if norm else None
        self.activation = activation

    def __call__(self, x, training):
        out = T.conv2d(x, self.weight, stride=self.stride, pad=self.pad)
        if self.bias is not None:
            out = out + self.bias.reshape(1, -1, 1, 1)
        if self.norm is not None:
            out = self.norm(out, training)
        if self.activation == "relu":
            return T.relu(out)
        if self.activation == "lrelu":
            return T.leaky_relu(out, LEAKY_SLOPE)
        if self.activation == "sigmoid":
            return T.sigmoid(out)
        if self.activation == "tanh":
            return T.tanh(out)
        return out


class _Net:
    """Shared parameter bookkeeping for both networks."""

    def __init__(self):
        self.layers = []

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def named_parameters(self):
        out = []
        for i, layer in enumerate(self.layers):
            out.append((f"conv{i}.weight", layer.weight))
            if layer.bias is not None:
                out.append((f"conv{i}.bias", layer.bias))
            if layer.norm is not None:
                out.append((f"conv{i}.gamma", layer.norm.gamma))
                out.append((f"conv{i}.beta", layer.norm.beta))
        return out

    def named_buffers(self):
        out = []
        for i, layer in enumerate(self.layers):
            if layer.norm is not None:
                out.append((f"conv{i}.running_mean", layer.norm.running_mean))
                out.append((f"conv{i}.running_var", layer.norm.running_var))
        return out

    def set_stats_initialized(self, flag=True):
        for layer in self.layers:
            if layer.norm is not None:
                layer.norm.initialized = flag

    def param_count(self):
        return sum(t.size for _, t in self.named_parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def arch_description(self):
        """Canonical structure summary; hashed into checkpoints."""
        desc = []
        for layer in self.layers:
            desc.append({
                "out": int(layer.weight.shape[0]),
                "in": int(layer.weight.shape[1]),
                "k": int(layer.weight.shape[2]),
                "stride": layer.stride,
                "pad": layer.pad,
                "norm": layer.norm is not None,
                "act": layer.activation,
                "bias": layer.bias is not None,
            })
        return {"kind": type(self).__name__, "layers": desc}


class GeneratorNet(_Net):
    """NIR image (B,1,H,W) in [-1,1] -> normal map tensor (B,3,H,W) in (-1,1)."""

    def __init__(self, filters=GENERATOR_FILTERS, in_channels=1, dtype=np.float32):
        super().__init__()
        self.in_channels = in_channels
        chans = [in_channels, *filters]
        for i in range(len(filters)):
            self.layers.append(ConvLayer(chans[i], chans[i + 1], 3, 1, 1,
                                         norm=True, activation="relu",
                                         bias=False, dtype=dtype))
        self.layers.append(ConvLayer(chans[-1], 3, 3, 1, 1,
                                     norm=False, activation="tanh",
                                     bias=True, dtype=dtype))

    def forward(self, z, training):
        if z.ndim != 4 or z.shape[1] != self.in_channels:
            raise ShapeError(f"generator expects (B,{self.in_channels},H,W), "
                             f"got {z.shape}")
        out = z
        for layer in self.layers:
            out = layer(out, training)
        return out


class DiscriminatorNet(_Net):
    """(NIR, normal-map) pair -> per-sample probability of being real.

    With pair conditioning (default) the two inputs are concatenated to 4
    channels; without it only the normal map is scored.
    """

    def __init__(self, filters=DISCRIMINATOR_FILTERS, pair_conditioning=True,
                 dtype=np.float32):
        super().__init__()
        self.pair_conditioning = pair_conditioning
        cin = 4 if pair_conditioning else 3
        f = list(filters)
        norm = [False, True, True, True]
        chans = [cin, *f[:4]]
        for i in range(4):
            self.layers.append(ConvLayer(chans[i], chans[i + 1], 3, 2, 0,
                                         norm=norm[i], activation="lrelu",
                                         bias=False, dtype=dtype))
        self.layers.append(ConvLayer(f[3], f[4], 1, 1, 0,
                                     norm=False, activation="sigmoid",
                                     bias=True, dtype=dtype))

    def forward(self, z, n, training):
        if n.ndim != 4 or n.shape[1] != 3:
            raise ShapeError(f"discriminator expects (B,3,H,W) normals, got {n.shape}")
        if n.shape[2] != 64 or n.shape[3] != 64:
            raise ShapeError(f"discriminator stride schedule requires 64x64 "
                             f"inputs, got {n.shape[2]}x{n.shape[3]}")
        if self.pair_conditioning:
            if z.shape[1] != 1 or z.shape[2:] != n.shape[2:]:
                raise ShapeError(f"conditioning image must be (B,1,64,64), got {z.shape}")
            out = T.concat([z, n], axis=1)
        else:
            out = n
        for layer in self.layers:
            out = layer(out, training)
        return out.mean(axis=(1, 2, 3))


def init_weights(net, seed):
    """Gaussian N(0, 0.02^2) kernels, unit gamma, zero beta/bias; reset stats."""
    rng = np.random.default_rng(seed)
    for layer in net.layers:
        w = layer.weight
        w.data[...] = rng.normal(0.0, WEIGHT_STD, w.shape).astype(w.dtype)
        if layer.bias is not None:
            layer.bias.data[...] = 0.0
        if layer.norm is not None:
            layer.norm.gamma.data[...] = 1.0
            layer.norm.beta.data[...] = 0.0
            layer.norm.running_mean[...] = 0.0
            layer.norm.running_var[...] = 1.0
            layer.norm.initialized = False
    net.zero_grad()
