"""Layer specifications and parameterized layer objects.

A LayerSpec is a validated, serializable description; build_layer() turns
it into a concrete layer with initialized parameters. Layers expose
forward(x, training), params() for optimizers/checkpoints, and
out_shape() for compute-free shape dry runs.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from voice2face import ops
from voice2face.tensor import Tensor

KINDS = (
    "conv1d",
    "conv2d",
    "deconv2d",
    "batchnorm",
    "relu",
    "leaky_relu",
    "sigmoid",
    "tanh",
    "softmax",
    "fully_connected",
    "time_avg_pool",
)

# Fields each kind must carry beyond `kind`; everything else must be unset.
_REQUIRED = {
    "conv1d": ("kernel", "stride", "padding", "in_channels", "out_channels"),
    "conv2d": ("kernel", "stride", "padding", "in_channels", "out_channels"),
    "deconv2d": ("kernel", "stride", "padding", "output_padding", "in_channels", "out_channels"),
    "batchnorm": ("in_channels",),
    "relu": (),
    "leaky_relu": ("leaky_slope",),
    "sigmoid": (),
    "tanh": (),
    "softmax": (),
    "fully_connected": ("in_channels", "out_channels"),
    "time_avg_pool": (),
}


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    kernel: int | None = None
    stride: int | None = None
    padding: int | None = None
    output_padding: int | None = None
    in_channels: int | None = None
    out_channels: int | None = None
    leaky_slope: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        required = set(_REQUIRED[self.kind])
        for name in ("kernel", "stride", "padding", "output_padding",
                     "in_channels", "out_channels", "leaky_slope"):
            value = getattr(self, name)
            if name in required and value is None:
                raise ValueError(f"{self.kind}: field {name!r} is required")
            if name not in required and value is not None:
                raise ValueError(f"{self.kind}: field {name!r} is not applicable")
        if self.stride is not None and self.stride < 1:
            raise ValueError(f"{self.kind}: stride must be >= 1")
        if self.padding is not None and self.padding < 0:
            raise ValueError(f"{self.kind}: padding must be >= 0")
        if self.output_padding is not None and self.output_padding >= self.stride:
            raise ValueError(f"{self.kind}: output_padding must be < stride")

    def to_dict(self):
        return {k: v for k, v in asdict(self).items() if v is not None}

    @staticmethod
    def from_dict(d):
        return LayerSpec(**d)


def spec_out_shape(spec: LayerSpec, shape):
    """Output shape (no batch axis) of one layer applied to `shape`."""
    kind = spec.kind
    if kind == "conv1d":
        c, t = shape
        return (spec.out_channels,
                ops.conv1d_out_len(t, spec.kernel, spec.stride, spec.padding))
    if kind == "conv2d":
        c, h, w = shape
        return (spec.out_channels,
                ops.conv2d_out_len(h, spec.kernel, spec.stride, spec.padding),
                ops.conv2d_out_len(w, spec.kernel, spec.stride, spec.padding))
    if kind == "deconv2d":
        c, h, w = shape
        return (spec.out_channels,
                ops.deconv2d_out_len(h, spec.kernel, spec.stride, spec.padding,
                                     spec.output_padding),
                ops.deconv2d_out_len(w, spec.kernel, spec.stride, spec.padding,
                                     spec.output_padding))
    if kind == "fully_connected":
        return (spec.out_channels,)
    if kind == "time_avg_pool":
        return (shape[0],)
    return shape


def chain_shapes(specs, shape):
    """Per-layer output shapes of a spec chain (compute-free dry run)."""
    chain = [shape]
    for spec in specs:
        shape = spec_out_shape(spec, shape)
        chain.append(shape)
    return chain


def _init_normal(rng, shape, dtype, std=0.02):
    return Tensor(rng.normal(0.0, std, size=shape).astype(dtype), requires_grad=True)


def _init_zeros(shape, dtype):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


class Conv1d:
    def __init__(self, spec: LayerSpec, rng, dtype):
        self.spec = spec
        self.weight = _init_normal(rng, (spec.out_channels, spec.in_channels, spec.kernel), dtype)
        self.bias = _init_zeros((spec.out_channels,), dtype)

    def forward(self, x, training=False):
        return ops.conv1d(x, self.weight, self.bias, self.spec.stride, self.spec.padding)

    def params(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def buffers(self):
        return []

    def out_shape(self, shape):
        return spec_out_shape(self.spec, shape)


class Conv2d:
    def __init__(self, spec: LayerSpec, rng, dtype):
        self.spec = spec
        k = spec.kernel
        self.weight = _init_normal(rng, (spec.out_channels, spec.in_channels, k, k), dtype)
        self.bias = _init_zeros((spec.out_channels,), dtype)

    def forward(self, x, training=False):
        return ops.conv2d(x, self.weight, self.bias, self.spec.stride, self.spec.padding)

    def params(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def buffers(self):
        return []

    def out_shape(self, shape):
        return spec_out_shape(self.spec, shape)


class Deconv2d:
    def __init__(self, spec: LayerSpec, rng, dtype):
        self.spec = spec
        k = spec.kernel
        self.weight = _init_normal(rng, (spec.in_channels, spec.out_channels, k, k), dtype)
        self.bias = _init_zeros((spec.out_channels,), dtype)

    def forward(self, x, training=False):
        return ops.deconv2d(x, self.weight, self.bias, self.spec.stride,
                            self.spec.padding, self.spec.output_padding)

    def params(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def buffers(self):
        return []

    def out_shape(self, shape):
        return spec_out_shape(self.spec, shape)


class BatchNorm:
    MOMENTUM = 0.9  # weight on the new batch statistic
    EPS = 1e-5

    def __init__(self, spec: LayerSpec, rng, dtype):
        self.spec = spec
        c = spec.in_channels
        self.gamma = Tensor(np.ones(c, dtype=dtype), requires_grad=True)
        self.beta = _init_zeros((c,), dtype)
        self.running_mean = np.zeros(c, dtype=dtype)
        self.running_var = np.ones(c, dtype=dtype)

    def forward(self, x, training=False):
        return ops.batchnorm(x, self.gamma, self.beta, self.running_mean,
                             self.running_var, training, self.MOMENTUM, self.EPS)

    def params(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def buffers(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]

    def out_shape(self, shape):
        return spec_out_shape(self.spec, shape)


class Activation:
    def __init__(self, spec: LayerSpec, rng=None, dtype=None):
        self.spec = spec

    def forward(self, x, training=False):
        kind = self.spec.kind
        if kind == "relu":
            return ops.relu(x)
        if kind == "leaky_relu":
            return ops.leaky_relu(x, self.spec.leaky_slope)
        if kind == "sigmoid":
            return ops.sigmoid(x)
        if kind == "tanh":
            return ops.tanh(x)
        return ops.softmax(x, axis=1)

    def params(self):
        return []

    def buffers(self):
        return []

    def out_shape(self, shape):
        return spec_out_shape(self.spec, shape)


class FullyConnected:
    def __init__(self, spec: LayerSpec, rng, dtype):
        self.spec = spec
        self.weight = _init_normal(rng, (spec.out_channels, spec.in_channels), dtype)
        self.bias = _init_zeros((spec.out_channels,), dtype)

    def forward(self, x, training=False):
        return ops.fully_connected(x, self.weight, self.bias)

    def params(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def buffers(self):
        return []

    def out_shape(self, shape):
        return spec_out_shape(self.spec, shape)


class TimeAvgPool:
    def __init__(self, spec: LayerSpec, rng=None, dtype=None):
        self.spec = spec

    def forward(self, x, training=False):
        return ops.time_avg_pool(x)

    def params(self):
        return []

    def buffers(self):
        return []

    def out_shape(self, shape):
        return spec_out_shape(self.spec, shape)


_BUILDERS = {
    "conv1d": Conv1d,
    "conv2d": Conv2d,
    "deconv2d": Deconv2d,
    "batchnorm": BatchNorm,
    "relu": Activation,
    "leaky_relu": Activation,
    "sigmoid": Activation,
    "tanh": Activation,
    "softmax": Activation,
    "fully_connected": FullyConnected,
    "time_avg_pool": TimeAvgPool,
}


def build_layer(spec: LayerSpec, rng, dtype=np.float32):
    return _BUILDERS[spec.kind](spec, rng, dtype)


class Sequential:
    """An ordered stack of layers sharing a forward/params interface."""

    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, x, training=False):
        for layer in self.layers:
            x = layer.forward(x, training=training)
        return x

    def params(self):
        out = []
        for i, layer in enumerate(self.layers):
            for name, p in layer.params():
                out.append((f"{i}.{name}", p))
        return out

    def buffers(self):
        out = []
        for i, layer in enumerate(self.layers):
            for name, b in layer.buffers():
                out.append((f"{i}.{name}", b))
        return out

    def out_shape(self, shape):
        for layer in self.layers:
            shape = layer.out_shape(shape)
        return shape

    def shape_chain(self, shape):
        """Per-layer output shapes for a given input shape (dry run)."""
        chain = [shape]
        for layer in self.layers:
            shape = layer.out_shape(shape)
            chain.append(shape)
        return chain


def build_sequential(specs, rng, dtype=np.float32):
    return Sequential([build_layer(s, rng, dtype) for s in specs])
