"""Central-difference gradient verification for tape-built graphs."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor


def grad_check(build_loss, params, h: float = 1e-5, tol: float = 1e-4) -> dict:
    """Compare tape gradients of a scalar graph against central differences.

    build_loss() must rebuild the graph from the current parameter values
    and return a scalar Tensor. params is a list of (name, Tensor); every
    parameter should be float64 for the differences to resolve tol=1e-4.
    Returns {name: max relative error}; raises FloatingPointError on
    non-finite values anywhere.
    """
    params = list(params)
    for _, p in params:
        p.grad = None
    loss = build_loss()
    if not isinstance(loss, Tensor) or loss.size != 1:
        raise ValueError("build_loss must return a scalar Tensor")
    loss.backward()
    analytic = {}
    for name, p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite analytic gradient in {name}")
        analytic[name] = g.copy()

    report = {}
    for name, p in params:
        fd = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        fd_flat = fd.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float(build_loss().data)
            flat[i] = orig - h
            down = float(build_loss().data)
            flat[i] = orig
            fd_flat[i] = (up - down) / (2 * h)
        if not np.all(np.isfinite(fd)):
            raise FloatingPointError(f"non-finite finite-difference value in {name}")
        a = analytic[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(fd)), 1e-6)
        report[name] = float((np.abs(a - fd) / denom).max()) if a.size else 0.0
    return report


def assert_grads_close(build_loss, params, h: float = 1e-5, tol: float = 1e-4):
    report = grad_check(build_loss, params, h=h, tol=tol)
    bad = {k: v for k, v in report.items() if v > tol}
    if bad:
        raise AssertionError(f"gradient check failed: {bad}")
    return report
