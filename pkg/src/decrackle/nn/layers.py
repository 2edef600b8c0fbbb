"""Parameterized layers on top of the functional ops.

Modules auto-register parameters and submodules by attribute assignment,
so checkpoints can address every parameter by a dotted path. Direction
tensors use uniform Kaiming-style fan-in init; weight-norm gains start at
the direction norm (so the effective weight equals the direction), and
biases start at zero.
"""
from __future__ import annotations

import numpy as np

from . import functional as F
from .tensor import Tensor, parameter


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor):
            self._params[name] = value
        elif isinstance(value, (Module, ModuleList)):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield (f"{prefix}{name}", p)
        for name, mod in self._modules.items():
            yield from mod.named_parameters(prefix=f"{prefix}{name}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def to_dtype(self, dtype):
        """Convert all parameters in place (used by 64-bit gradient checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_arrays(self) -> dict:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_arrays(self, state: dict):
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise ValueError(f"state mismatch: missing={missing} unexpected={extra}")
        for name, p in own.items():
            arr = state[name]
            if tuple(arr.shape) != tuple(p.data.shape):
                raise ValueError(
                    f"shape mismatch for {name}: {arr.shape} vs {p.data.shape}"
                )
            p.data = arr.astype(p.data.dtype)


class ModuleList:
    def __init__(self, mods=()):
        self.mods = list(mods)

    def append(self, mod):
        self.mods.append(mod)

    def __iter__(self):
        return iter(self.mods)

    def __getitem__(self, i):
        return self.mods[i]

    def __len__(self):
        return len(self.mods)

    def named_parameters(self, prefix: str = ""):
        for i, mod in enumerate(self.mods):
            yield from mod.named_parameters(prefix=f"{prefix}{i}.")


def _kaiming_uniform(rng, shape, fan_in, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def validate_kernel_stride(kernel, stride):
    """Resampling layers need kernel a multiple of stride so every input
    location contributes evenly (no checkerboard patterns). Models call
    this for their up/down-sampling layers at construction time."""
    kernel = kernel if isinstance(kernel, tuple) else (kernel,)
    stride = stride if isinstance(stride, tuple) else (stride,)
    for k, s in zip(kernel, stride):
        if s > 1 and k % s:
            raise ValueError(
                f"kernel {kernel} must be a multiple of stride {stride} "
                "for resampling layers"
            )


class Conv2d(Module):
    """2D convolution with optional weight normalization."""

    def __init__(self, in_channels, out_channels, kernel, stride=(1, 1),
                 groups=1, use_weight_norm=True, rng=None, dtype=np.float32):
        super().__init__()
        kernel = F._pair(kernel)
        stride = F._pair(stride)
        rng = rng or np.random.default_rng(0)
        self.stride = stride
        self.groups = groups
        self.use_weight_norm = use_weight_norm
        fan_in = (in_channels // groups) * kernel[0] * kernel[1]
        v = _kaiming_uniform(
            rng, (out_channels, in_channels // groups) + kernel, fan_in, dtype
        )
        if use_weight_norm:
            self.direction = parameter(v)
            norms = np.sqrt((v.astype(np.float64) ** 2).sum(axis=(1, 2, 3)))
            if np.any(norms == 0):
                raise ValueError("weight_norm: zero-norm direction at init")
            self.gain = parameter(norms.astype(dtype))
        else:
            self.weight = parameter(v)
        self.bias = parameter(np.zeros(out_channels, dtype=dtype))

    def effective_weight(self) -> Tensor:
        if self.use_weight_norm:
            return F.weight_norm(self.gain, self.direction)
        return self.weight

    def __call__(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.effective_weight(), self.bias,
                        stride=self.stride, groups=self.groups)

    def zero_output(self):
        """Zero the layer so it emits exactly zero (residual-identity init)."""
        if self.use_weight_norm:
            self.gain.data = np.zeros_like(self.gain.data)
        else:
            self.weight.data = np.zeros_like(self.weight.data)
        self.bias.data = np.zeros_like(self.bias.data)


class ConvTranspose2d(Module):
    """Transposed 2D convolution (adjoint layout [in, out, kh, kw])."""

    def __init__(self, in_channels, out_channels, kernel, stride=(1, 1),
                 use_weight_norm=True, rng=None, dtype=np.float32):
        super().__init__()
        kernel = F._pair(kernel)
        stride = F._pair(stride)
        rng = rng or np.random.default_rng(0)
        self.stride = stride
        self.use_weight_norm = use_weight_norm
        fan_in = in_channels * kernel[0] * kernel[1]
        v = _kaiming_uniform(rng, (in_channels, out_channels) + kernel, fan_in, dtype)
        if use_weight_norm:
            self.direction = parameter(v)
            norms = np.sqrt((v.astype(np.float64) ** 2).sum(axis=(1, 2, 3)))
            self.gain = parameter(norms.astype(dtype))
        else:
            self.weight = parameter(v)
        self.bias = parameter(np.zeros(out_channels, dtype=dtype))

    def effective_weight(self) -> Tensor:
        if self.use_weight_norm:
            return F.weight_norm(self.gain, self.direction)
        return self.weight

    def __call__(self, x: Tensor) -> Tensor:
        return F.conv2d_transpose(x, self.effective_weight(), self.bias,
                                  stride=self.stride)


class Conv1d(Module):
    """1D convolution with optional grouping (MelGAN-style stacks)."""

    def __init__(self, in_channels, out_channels, kernel, stride=1, groups=1,
                 use_weight_norm=False, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.stride = stride
        self.groups = groups
        self.use_weight_norm = use_weight_norm
        fan_in = (in_channels // groups) * kernel
        v = _kaiming_uniform(rng, (out_channels, in_channels // groups, kernel),
                             fan_in, dtype)
        if use_weight_norm:
            self.direction = parameter(v)
            norms = np.sqrt((v.astype(np.float64) ** 2).sum(axis=(1, 2)))
            self.gain = parameter(norms.astype(dtype))
        else:
            self.weight = parameter(v)
        self.bias = parameter(np.zeros(out_channels, dtype=dtype))

    def effective_weight(self) -> Tensor:
        if self.use_weight_norm:
            return F.weight_norm(self.gain, self.direction)
        return self.weight

    def __call__(self, x: Tensor) -> Tensor:
        return F.conv1d(x, self.effective_weight(), self.bias,
                        stride=self.stride, groups=self.groups)


class LayerNorm(Module):
    """Normalization over all non-batch axes with per-channel affine."""

    def __init__(self, channels, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.eps = eps
        self.gain = parameter(np.ones(channels, dtype=dtype))
        self.bias = parameter(np.zeros(channels, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.gain, self.bias, eps=self.eps)
