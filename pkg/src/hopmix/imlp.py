"""The implicit, invertible token-mixing MLP.

``IMlpModule`` computes ``v + H(FPA(G(v)))`` where ``G = fc1 . LN``, the
fixed-point approximation iterates ``x <- F(x) + x0`` with the contractive
block ``F = fc_sn2 . gelu . fc_sn1 . gelu``, and ``H = fc2 . gelu``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .hopfield import HopfieldSystem, LagrangianSpec
from .nn_core import (
    LayerNorm,
    Linear,
    Module,
    Tensor,
    add,
    dropout,
    gelu,
    gelu_grad_np,
    gelu_np,
    init_parameters,
    named_rng,
    sub,
)
from .specnorm import SpecLinear, init_spectral


class NonContractiveWarning(RuntimeWarning):
    pass


@dataclass
class FpaTrace:
    """Iterates ``x^0..x^n`` of one sample with successive-step diagnostics.

    ``norm[a] = ||x^{a+1} - x^a|| / sqrt(normalizer)`` and
    ``cos[a] = cos(x^{a+1}, x^a)``.
    """

    iterates: list[np.ndarray]
    normalizer: float = field(default=0.0)
    norm: np.ndarray = field(init=False)
    cos: np.ndarray = field(init=False)

    def __post_init__(self):
        if not self.normalizer:
            self.normalizer = float(self.iterates[0].size)
        n = len(self.iterates) - 1
        self.norm = np.empty(n)
        self.cos = np.empty(n)
        for a in range(n):
            p, q = self.iterates[a + 1].reshape(-1), self.iterates[a].reshape(-1)
            self.norm[a] = np.linalg.norm(p - q) / math.sqrt(self.normalizer)
            denom = np.linalg.norm(p) * np.linalg.norm(q)
            if denom == 0.0:
                self.cos[a] = 1.0 if np.array_equal(p, q) else 0.0
            else:
                self.cos[a] = (p @ q) / denom

    @property
    def n(self) -> int:
        return len(self.iterates) - 1


def fixed_point_iterate(f: Callable[[Tensor], Tensor], z: Tensor, n: int,
                        record: bool = False, monitor: bool = False):
    """``x^0 = z``; ``x^{a+1} = f(x^a) + z`` for ``a < n``. Returns ``(x^n, iterates or None)``.

    With ``monitor`` set a :class:`NonContractiveWarning` is issued when a
    step grows relative to the previous one.
    """
    if n < 0:
        raise ValueError("iteration count must be >= 0")
    x = z
    its = [z.data.copy()] if record else None
    prev_step = None
    for _ in range(n):
        x_new = add(f(x), z)
        if monitor:
            step = float(np.linalg.norm(x_new.data - x.data))
            if prev_step is not None and prev_step > 0.0 and step > prev_step * (1.0 + 1e-12):
                warnings.warn(f"fixed-point step grew ({prev_step:.3e} -> {step:.3e}); "
                              "level may not be contractive", NonContractiveWarning, stacklevel=2)
            prev_step = step
        x = x_new
        if record:
            its.append(x.data.copy())
    return x, its


class VanillaMlp(Module):
    """Two-layer GELU MLP, optionally wrapped in LN and an identity residual."""

    def __init__(self, d_vis: int, d_mid: int, drop: float = 0.0, norm: bool = False, seed: int = 0,
                 init: bool = True):
        super().__init__()
        self.norm = LayerNorm(d_vis) if norm else None
        self.fc1 = Linear(d_vis, d_mid)
        self.fc2 = Linear(d_mid, d_vis)
        self.drop = drop
        self._rng = named_rng(seed, "dropout")
        if init:
            init_parameters(self, seed)

    def mix(self, y: Tensor) -> Tensor:
        x = gelu(self.fc1(y))
        x = dropout(x, self.drop, self._rng, self.training)
        return dropout(self.fc2(x), self.drop, self._rng, self.training)

    def forward(self, v: Tensor) -> Tensor:
        y = self.norm(v) if self.norm is not None else v
        return add(v, self.mix(y))


class IMlpModule(Module):
    """Invertible token-mixing MLP (mixing acts on the last axis).

    ``d_vis`` is the mixed axis length, ``d_mid`` the width of the middle
    (fixed-point) layer and ``d_hid`` the width inside the contractive block.
    """

    def __init__(self, d_vis: int, d_mid: int, d_hid: int, n_iter: int = 2, coeff: float = 0.9,
                 n_power: int = 8, mode: str = "spec", drop: float = 0.0, norm: bool = True,
                 seed: int = 0, init: bool = True):
        super().__init__()
        self.norm = LayerNorm(d_vis) if norm else None
        self.fc1 = Linear(d_vis, d_mid)
        self.fc_sn1 = SpecLinear(d_mid, d_hid, coeff, n_power, mode)
        self.fc_sn2 = SpecLinear(d_hid, d_mid, coeff, n_power, mode)
        self.fc2 = Linear(d_mid, d_vis)
        self.drop = drop
        self.n_iter = int(n_iter)
        self._rng = named_rng(seed, "dropout")
        if init:
            init_parameters(self, seed)
            init_spectral(self, seed)

    @staticmethod
    def hidden_width(d_mid: int, h_r: float) -> int:
        return int(math.floor(h_r * d_mid + 0.5))

    def refresh_spectral(self, steps: int = 1) -> None:
        """Advance both power iterations (no-op when frozen or unnormalized)."""
        for layer in (self.fc_sn1, self.fc_sn2):
            if layer.mode == "spec" and not layer.frozen:
                for _ in range(steps):
                    layer.update()

    def _drop(self, x: Tensor) -> Tensor:
        return dropout(x, self.drop, self._rng, self.training)

    def g_half(self, x: Tensor) -> Tensor:
        """Inner map into the deepest layer: ``fc_sn1(drop(gelu(x)))``."""
        return self.fc_sn1(self._drop(gelu(x)), update=False)

    def h_half(self, y: Tensor) -> Tensor:
        """Map back to the middle layer: ``fc_sn2(drop(gelu(y)))``."""
        return self.fc_sn2(self._drop(gelu(y)), update=False)

    def contractive_f(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        return self.h_half(self.g_half(x))

    def fpa(self, z, n: int | None = None, record: bool = False):
        """Fixed-point approximation of ``(1 - F)^{-1}(z)``; returns ``(x^n, FpaTrace | None)``."""
        z = z if isinstance(z, Tensor) else Tensor(z)
        x, its = fixed_point_iterate(self.contractive_f, z, self.n_iter if n is None else n, record)
        return x, (FpaTrace(its) if record else None)

    def residual_forward(self, x) -> Tensor:
        """Exact forward direction ``z = x - F(x)``."""
        x = x if isinstance(x, Tensor) else Tensor(x)
        return sub(x, self.contractive_f(x))

    def mix(self, y: Tensor, n: int | None = None, capture: list | None = None) -> Tensor:
        """``H(FPA(fc1(y)))`` without normalization or outer residual."""
        if self.training:
            self.refresh_spectral()
        z = self.fc1(y)
        x, _ = fixed_point_iterate(self.contractive_f, z, self.n_iter if n is None else n)
        if capture is not None:
            capture.append(z.data.copy())
        x = self._drop(gelu(x))
        return self._drop(self.fc2(x))

    def forward(self, v, n: int | None = None) -> Tensor:
        v = v if isinstance(v, Tensor) else Tensor(v)
        y = self.norm(v) if self.norm is not None else v
        return add(v, self.mix(y, n))

    def inner_state(self, v, n: int | None = None) -> np.ndarray:
        """The fixed-point iterate ``x^n`` reached inside :meth:`forward` (no mutation)."""
        v = v if isinstance(v, Tensor) else Tensor(v)
        y = self.norm(v) if self.norm is not None else v
        x, _ = self.fpa(self.fc1(y), n)
        return x.data


def imlp_forward(module: IMlpModule, v, n: int | None = None) -> Tensor:
    return module.forward(v, n)


def contractive_f(module: IMlpModule, x) -> Tensor:
    return module.contractive_f(x)


def fpa(module: IMlpModule, z, n: int | None = None, record: bool = True):
    return module.fpa(z, n, record)


def residual_forward(module: IMlpModule, x) -> Tensor:
    return module.residual_forward(x)


def _split_samples(iterates: list[np.ndarray]) -> list[list[np.ndarray]]:
    stacked = np.stack(iterates)
    if stacked.ndim == 2:
        return [list(stacked)]
    return [list(stacked[:, b]) for b in range(stacked.shape[1])]


def probe_from_z(module: IMlpModule, z: np.ndarray, n: int | None = None,
                 normalizer: float | None = None) -> list[FpaTrace]:
    """Run the fixed-point iteration from ``z`` (batch on axis 0) and trace every sample."""
    _, its = fixed_point_iterate(module.contractive_f, Tensor(z), module.n_iter if n is None else n, record=True)
    return [FpaTrace(sample, normalizer or 0.0) for sample in _split_samples(its)]


def convergence_probe(module: IMlpModule, inputs, n: int | None = None,
                      normalizer: float | None = None) -> list[FpaTrace]:
    """Per-sample ``Norm_a``/``Cos_a`` traces; inputs are ``v`` with the batch on axis 0."""
    v = inputs if isinstance(inputs, Tensor) else Tensor(inputs)
    y = module.norm(v) if module.norm is not None else v
    return probe_from_z(module, module.fc1(y).data, n, normalizer)


def local_lipschitz(module: IMlpModule, x: np.ndarray) -> float:
    """Largest spectral norm of the Jacobian of ``F`` over the rows of ``x``.

    ``F`` acts row-wise on the last axis, so each row has its own
    ``d_mid x d_mid`` Jacobian. Batch-norm variants use running statistics.
    """
    rows = np.asarray(x, dtype=np.float64).reshape(-1, module.fc_sn1.weight.shape[1])
    w1 = module.fc_sn1.effective_weight_np()
    w2 = module.fc_sn2.effective_weight_np()
    s1 = s2 = None
    p1 = gelu_np(rows) @ w1.T + module.fc_sn1.bias.data
    if module.fc_sn1.bn is not None:
        s1, p1 = _bn_affine(module.fc_sn1, p1)
    if module.fc_sn2.bn is not None:
        s2, _ = _bn_affine(module.fc_sn2, np.zeros((1, w2.shape[0])))
    d_in = gelu_grad_np(rows)
    d_mid = gelu_grad_np(p1)
    left = w2 if s2 is None else s2[:, None] * w2
    right = w1 if s1 is None else s1[:, None] * w1
    jac = np.einsum("ij,bj,jk,bk->bik", left, d_mid, right, d_in, optimize=True)
    return float(np.max(np.linalg.norm(jac, ord=2, axis=(1, 2))))


def _bn_affine(layer: SpecLinear, pre: np.ndarray):
    bn = layer.bn
    scale = bn.gamma.data / np.sqrt(bn._buffers["running_var"] + bn.eps)
    return scale, (pre - bn._buffers["running_mean"]) * scale + bn.beta.data


def nested_fpa(levels: Sequence[tuple[Callable[[Tensor], Tensor], Callable[[Tensor], Tensor]]],
               z, n: Sequence[int], monitor: bool = True) -> Tensor:
    """Deep hierarchical solve ``x^2 = (1 - F^2)^{-1}(z)``.

    ``levels[k] = (G, H)`` for hidden layer ``k + 2``; the innermost block is
    ``H . G`` and every outer block is ``H . (1 - F_inner)^{-1} . G``, each
    inverse replaced by a fixed-point approximation with ``n[k]`` steps.
    A three-layer system is a single level and reduces to the flat iteration.
    """
    if len(levels) < 1 or len(n) != len(levels):
        raise ValueError("need one (G, H) pair and one iteration count per hidden level")
    z = z if isinstance(z, Tensor) else Tensor(z)

    def block(k: int) -> Callable[[Tensor], Tensor]:
        g, h = levels[k]
        if k == len(levels) - 1:
            return lambda x: h(g(x))
        inner = block(k + 1)
        return lambda x: h(fixed_point_iterate(inner, g(x), n[k + 1], monitor=monitor)[0])

    x, _ = fixed_point_iterate(block(0), z, n[0], monitor=monitor)
    return x


def module_levels(module: IMlpModule) -> list[tuple[Callable, Callable]]:
    """The single ``(G, H)`` level of a three-layer module."""
    return [(module.g_half, module.h_half)]


def to_hopfield_system(module: IMlpModule, taus: Sequence[float] = (1.0, 1e-3, 1e-6)) -> HopfieldSystem:
    """Three-layer Hopfield system with the same hidden equilibrium as ``module``.

    Requires zero biases and an untouched LN (gamma 1, beta 0). The LN output
    is ``sqrt(d_vis)`` times the Lagrangian normalizer, folded into the
    visible-to-middle coupling.
    """
    if module.norm is None:
        raise ValueError("module has no input normalization")
    if module.fc_sn1.mode != "spec" or module.fc_sn2.mode != "spec":
        raise ValueError("only spectral-normalized modules map onto a Hopfield system")
    biases = [module.fc1.bias, module.fc_sn1.bias, module.fc_sn2.bias, module.norm.beta]
    if any(np.any(b.data != 0.0) for b in biases) or np.any(module.norm.gamma.data != 1.0):
        raise ValueError("biases must be zero and LN must be the identity affine map")
    d_vis = module.fc1.weight.shape[1]
    up = [math.sqrt(d_vis) * module.fc1.weight.data, module.fc_sn1.effective_weight_np()]
    down = [module.fc2.weight.data, module.fc_sn2.effective_weight_np()]
    lags = (LagrangianSpec.norm(0.0), LagrangianSpec.gelu(), LagrangianSpec.gelu())
    return HopfieldSystem.create(up, taus, lags, down=down)
