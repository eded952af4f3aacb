"""Parameterized layers assembled into immutable model graphs.

Modules register parameters and child modules in attribute definition
order, which fixes the canonical (depth-first) parameter order used by the
weights file and by seeded initialization.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


def kaiming_normal(rng: np.random.Generator, shape, fan_out: int) -> np.ndarray:
    std = np.sqrt(2.0 / fan_out)
    return rng.normal(0.0, std, size=shape).astype(np.float32)


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal draw with rejection outside two standard deviations."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out.astype(np.float32)


class Module:
    """Base class: parameter/buffer traversal and train/eval mode."""

    def __init__(self):
        self.training = False

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
        for name, child in self._children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        """Non-trainable state (batch-norm running statistics)."""
        for name, value in vars(self).items():
            if isinstance(value, np.ndarray):
                yield prefix + name, value
        for name, child in self._children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def modules(self, prefix: str = ""):
        yield prefix.rstrip("."), self
        for name, child in self._children():
            yield from child.modules(f"{prefix}{name}.")

    def train(self, mode: bool = True):
        for _, m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def astype(self, dtype):
        """Cast parameters and buffers in place (used by gradient checks)."""
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
        for _, m in self.modules():
            for name, value in vars(m).items():
                if isinstance(value, np.ndarray):
                    setattr(m, name, value.astype(dtype))
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Conv2d(Module):
    def __init__(self, rng, cin, cout, kernel, stride=1, padding=None, groups=1, bias=True):
        super().__init__()
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        self.groups = groups
        fan_out = cout * kernel * kernel // groups
        self.weight = Tensor(
            kaiming_normal(rng, (cout, cin // groups, kernel, kernel), fan_out),
            requires_grad=True,
        )
        self.bias = Tensor(np.zeros(cout, dtype=np.float32), requires_grad=True) if bias else None

    def forward(self, x):
        return T.conv2d(
            x, self.weight, self.bias, stride=self.stride, padding=self.padding, groups=self.groups
        )

    def out_shape(self, in_shape):
        b, _, h, w = in_shape
        cout, _, kh, kw = self.weight.shape
        ho = (h + 2 * self.padding - kh) // self.stride + 1
        wo = (w + 2 * self.padding - kw) // self.stride + 1
        return (b, cout, ho, wo)


class BatchNorm2d(Module):
    def __init__(self, channels, eps=1e-5, momentum=0.1):
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.track_running = True
        self.gamma = Tensor(np.ones(channels, dtype=np.float32), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=np.float32), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=np.float32)
        self.running_var = np.ones(channels, dtype=np.float32)

    def forward(self, x):
        return T.batch_norm(
            x,
            self.gamma,
            self.beta,
            self.running_mean,
            self.running_var,
            training=self.training,
            eps=self.eps,
            momentum=self.momentum,
            update_running=self.track_running,
        )


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5):
        super().__init__()
        self.eps = eps
        self.gamma = Tensor(np.ones(dim, dtype=np.float32), requires_grad=True)
        self.beta = Tensor(np.zeros(dim, dtype=np.float32), requires_grad=True)

    def forward(self, x):
        return T.layer_norm(x, self.gamma, self.beta, eps=self.eps)


class Linear(Module):
    def __init__(self, rng, din, dout, bias=True):
        super().__init__()
        self.weight = Tensor(trunc_normal(rng, (dout, din)), requires_grad=True)
        self.bias = Tensor(np.zeros(dout, dtype=np.float32), requires_grad=True) if bias else None

    def forward(self, x):
        return T.linear(x, self.weight, self.bias)


class ConvNormAct(Module):
    """Conv (bias-free) + batch norm + optional SiLU, the backbone's conv idiom."""

    def __init__(self, rng, cin, cout, kernel, stride=1, groups=1, act="silu"):
        super().__init__()
        self.act = act
        self.conv = Conv2d(rng, cin, cout, kernel, stride=stride, groups=groups, bias=False)
        self.norm = BatchNorm2d(cout)

    def forward(self, x):
        x = self.norm(self.conv(x))
        if self.act is not None:
            x = T.activation(x, self.act)
        return x

    def out_shape(self, in_shape):
        return self.conv.out_shape(in_shape)


class MultiHeadAttention(Module):
    def __init__(self, rng, dim, heads):
        super().__init__()
        self.heads = heads
        self.wq = Tensor(trunc_normal(rng, (dim, dim)), requires_grad=True)
        self.bq = Tensor(np.zeros(dim, dtype=np.float32), requires_grad=True)
        self.wk = Tensor(trunc_normal(rng, (dim, dim)), requires_grad=True)
        self.bk = Tensor(np.zeros(dim, dtype=np.float32), requires_grad=True)
        self.wv = Tensor(trunc_normal(rng, (dim, dim)), requires_grad=True)
        self.bv = Tensor(np.zeros(dim, dtype=np.float32), requires_grad=True)
        self.wo = Tensor(trunc_normal(rng, (dim, dim)), requires_grad=True)
        self.bo = Tensor(np.zeros(dim, dtype=np.float32), requires_grad=True)

    def forward(self, x):
        return T.multi_head_attention(
            x,
            self.wq,
            self.wk,
            self.wv,
            self.wo,
            self.heads,
            bq=self.bq,
            bk=self.bk,
            bv=self.bv,
            bo=self.bo,
        )


class TransformerLayer(Module):
    """Pre-norm self-attention followed by a pre-norm SiLU feed-forward."""

    def __init__(self, rng, dim, heads, ffn_dim):
        super().__init__()
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(rng, dim, heads)
        self.norm2 = LayerNorm(dim)
        self.ffn1 = Linear(rng, dim, ffn_dim)
        self.ffn2 = Linear(rng, ffn_dim, dim)

    def forward(self, x):
        x = T.add(x, self.attn(self.norm1(x)))
        h = T.silu(self.ffn1(self.norm2(x)))
        return T.add(x, self.ffn2(h))
