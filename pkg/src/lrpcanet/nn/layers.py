"""Layer objects with explicit forward/backward passes.

A ``Module`` caches what its backward pass needs during ``forward`` and
accumulates parameter gradients into ``Parameter.grad`` during ``backward``.
Only the most recent forward call is remembered.
"""

from dataclasses import dataclass, field

import numpy as np

from . import functional as F


@dataclass(eq=False)
class Parameter:
    name: str
    value: np.ndarray
    grad: np.ndarray = field(default=None, repr=False)
    trainable: bool = True

    def __post_init__(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad[...] = 0

    @property
    def size(self):
        return self.value.size


class Module:
    """Base class.  Sub-modules and parameters are discovered from attributes,
    including lists of modules."""

    training = True

    def _children(self):
        for name, attr in vars(self).items():
            if name.startswith("_"):
                continue
            if isinstance(attr, Module):
                yield name, attr
            elif isinstance(attr, (list, tuple)):
                for i, item in enumerate(attr):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def _own_parameters(self):
        return [(k, v) for k, v in vars(self).items()
                if isinstance(v, Parameter) and not k.startswith("_")]

    def _own_buffers(self):
        return []

    def named_parameters(self, prefix=""):
        for name, p in self._own_parameters():
            yield (f"{prefix}.{name}" if prefix else name), p
        for name, child in self._children():
            yield from child.named_parameters(f"{prefix}.{name}" if prefix else name)

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        """Non-trainable state that still has to be checkpointed."""
        for name, b in self._own_buffers():
            yield (f"{prefix}.{name}" if prefix else name), b
        for name, child in self._children():
            yield from child.named_buffers(f"{prefix}.{name}" if prefix else name)

    def modules(self):
        yield self
        for _, child in self._children():
            yield from child.modules()

    def train(self, mode=True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def astype(self, dtype):
        for m in self.modules():
            for _, p in m._own_parameters():
                p.value = p.value.astype(dtype)
                p.grad = np.zeros_like(p.value)
            m._cast_buffers(dtype)
        return self

    def _cast_buffers(self, dtype):
        pass

    def num_parameters(self):
        return sum(p.size for p in self.parameters() if p.trainable)

    def __call__(self, x):
        return self.forward(x)

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError


def kaiming(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Conv2d(Module):
    """3x3 convolution, same padding."""

    def __init__(self, in_ch, out_ch, rng=None, dtype=np.float32, zero=False):
        self.in_ch, self.out_ch = in_ch, out_ch
        shape = (out_ch, in_ch, 3, 3)
        if zero or rng is None:
            w = np.zeros(shape, dtype=dtype)
        else:
            w = kaiming(rng, shape, in_ch * 9, dtype)
        self.weight = Parameter("weight", w)
        self.bias = Parameter("bias", np.zeros(out_ch, dtype=dtype))
        self._cache = None

    def forward(self, x):
        out, self._cache = F.conv2d_forward(x, self.weight.value, self.bias.value)
        return out

    def backward(self, dout):
        dx, dw, db = F.conv2d_backward(dout, self._cache)
        self.weight.grad += dw
        self.bias.grad += db
        return dx


class BatchNorm2d(Module):
    def __init__(self, channels, dtype=np.float32, momentum=0.1, eps=1e-5):
        if not 0 < momentum < 1:
            raise ValueError(f"momentum must lie in (0, 1), got {momentum}")
        if not eps > 0:
            raise ValueError(f"eps must be positive, got {eps}")
        self.channels = channels
        self.momentum, self.eps = momentum, eps
        self.gamma = Parameter("gamma", np.ones(channels, dtype=dtype))
        self.beta = Parameter("beta", np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self._cache = None

    def _own_buffers(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]

    def _cast_buffers(self, dtype):
        self.running_mean = self.running_mean.astype(dtype)
        self.running_var = self.running_var.astype(dtype)

    def forward(self, x):
        out, self._cache = F.batchnorm_forward(
            x, self.gamma.value, self.beta.value, self.running_mean,
            self.running_var, self.training, self.momentum, self.eps)
        return out

    def backward(self, dout):
        dx, dg, db = F.batchnorm_backward(dout, self._cache)
        self.gamma.grad += dg
        self.beta.grad += db
        return dx


class Activation(Module):
    def __init__(self, kind):
        if kind not in F.ACTIVATIONS:
            raise ValueError(f"unknown activation {kind!r}")
        self.kind = kind
        self._cache = None

    def forward(self, x):
        out, self._cache = F.activation_forward(x, self.kind)
        return out

    def backward(self, dout):
        return F.activation_backward(dout, self._cache)


def ReLU():
    return Activation("relu")


def Sigmoid():
    return Activation("sigmoid")


class GlobalAvgPool(Module):
    """(N, C, H, W) -> (N, C)"""

    def forward(self, x):
        out, self._shape = F.global_avg_pool_forward(x)
        return out

    def backward(self, dout):
        return F.global_avg_pool_backward(dout, self._shape)


class Dense(Module):
    def __init__(self, in_features, out_features, rng=None, dtype=np.float32):
        shape = (out_features, in_features)
        w = np.zeros(shape, dtype=dtype) if rng is None else kaiming(rng, shape, in_features, dtype)
        self.weight = Parameter("weight", w)
        self.bias = Parameter("bias", np.zeros(out_features, dtype=dtype))
        self._cache = None

    def forward(self, x):
        out, self._cache = F.dense_forward(x, self.weight.value, self.bias.value)
        return out

    def backward(self, dout):
        dx, dw, db = F.dense_backward(dout, self._cache)
        self.weight.grad += dw
        self.bias.grad += db
        return dx


class SEBlock(Module):
    """Squeeze-and-excitation channel gate.

    The excitation path is pool -> dense(C, C/r) -> relu -> dense(C/r, C) ->
    sigmoid, and its output rescales each input channel.
    """

    def __init__(self, channels, ratio=4, rng=None, dtype=np.float32):
        if channels % ratio:
            raise ValueError(f"SE ratio {ratio} does not divide {channels} channels")
        self.channels = channels
        self.pool = GlobalAvgPool()
        self.fc1 = Dense(channels, channels // ratio, rng, dtype)
        self.act = ReLU()
        self.fc2 = Dense(channels // ratio, channels, rng, dtype)
        self.gate = Sigmoid()
        self._cache = None

    def excitation(self, x):
        return self.gate(self.fc2(self.act(self.fc1(self.pool(x)))))

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise F.ShapeError("se", "channels", self.channels, x.shape[1] if x.ndim == 4 else x.shape)
        s = self.excitation(x)
        self._cache = (x, s)
        return x * s[:, :, None, None]

    def backward(self, dout):
        x, s = self._cache
        ds = (dout * x).sum(axis=(2, 3))
        dpool = self.fc1.backward(self.act.backward(self.fc2.backward(self.gate.backward(ds))))
        return dout * s[:, :, None, None] + self.pool.backward(dpool)


class Sequential(Module):
    def __init__(self, *layers):
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout
