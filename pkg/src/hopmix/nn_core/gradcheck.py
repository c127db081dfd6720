"""Central-difference verification of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, no_grad


@dataclass
class GradCheckResult:
    max_rel_error: float
    per_param: dict[str, float] = field(default_factory=dict)
    tolerance: float = 1e-5

    @property
    def ok(self) -> bool:
        return self.max_rel_error <= self.tolerance


def grad_check(loss_fn: Callable[[], Tensor], params: Sequence[Tensor], step: float = 1e-5,
               tolerance: float = 1e-5, max_coords: int | None = None, seed: int = 0,
               names: Sequence[str] | None = None, order: int = 2,
               zero_tol: float = 0.0) -> GradCheckResult:
    """Compare ``backward`` against central differences, tensor by tensor.

    ``loss_fn`` must be deterministic. For each tensor the error is
    ``||analytic - numeric|| / max(||analytic||, ||numeric||)`` over the checked
    coordinates; ``max_coords`` samples that many coordinates per tensor
    (all when ``None``). ``order`` selects the 2nd- or 4th-order central
    stencil. Tensors whose analytic and numeric gradients both have norm
    below ``zero_tol`` count as exactly zero (error 0).
    """
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    offsets = (1.0, -1.0) if order == 2 else (1.0, -1.0, 2.0, -2.0)
    for p in params:
        p.grad = None
    loss = loss_fn()
    backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    rng = np.random.default_rng(seed)
    names = list(names) if names is not None else [p.name or f"param{i}" for i, p in enumerate(params)]
    result = GradCheckResult(0.0, tolerance=tolerance)
    for name, p, ga in zip(names, params, analytic):
        p.data = np.ascontiguousarray(p.data)
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        num = np.empty(idx.size)
        for j, k in enumerate(idx):
            orig = flat[k]
            vals = []
            with no_grad():
                for o in offsets:
                    flat[k] = orig + o * step
                    vals.append(float(loss_fn().data))
            flat[k] = orig
            if order == 2:
                num[j] = (vals[0] - vals[1]) / (2.0 * step)
            else:
                num[j] = (8.0 * (vals[0] - vals[1]) - (vals[2] - vals[3])) / (12.0 * step)
        a = ga.reshape(-1)[idx]
        scale = max(np.linalg.norm(a), np.linalg.norm(num))
        err = 0.0 if scale <= zero_tol else float(np.linalg.norm(a - num) / scale)
        result.per_param[name] = err
        result.max_rel_error = max(result.max_rel_error, err)
    for p in params:
        p.grad = None
    return result
