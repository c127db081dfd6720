"""Spectral-norm estimation by power iteration and the normalized linear layer."""

from __future__ import annotations

import numpy as np

from .nn_core import BatchNorm, Module, Parameter, Tensor, linear, mul, named_rng

MODES = ("spec", "none", "batchnorm-like")


def _normalize(x: np.ndarray) -> tuple[np.ndarray, float]:
    n = float(np.linalg.norm(x))
    return (x / n if n > 0.0 else x), n


def power_iteration(weight: np.ndarray, u0: np.ndarray | None = None, n_power: int = 1,
                    rng: np.random.Generator | None = None):
    """Estimate the top singular value of ``weight`` (out x in).

    Alternates ``v <- normalize(W^T u)``, ``u <- normalize(W v)`` and returns
    ``(sigma, u, v)`` with ``sigma = u^T W v``. A zero matrix yields
    ``sigma = 0`` and ``u`` unchanged.
    """
    if n_power < 1:
        raise ValueError("n_power must be >= 1")
    w = np.asarray(weight, dtype=np.float64)
    if u0 is None:
        rng = rng or np.random.default_rng(0)
        u0 = rng.standard_normal(w.shape[0])
    u, _ = _normalize(np.asarray(u0, dtype=np.float64).copy())
    v = np.zeros(w.shape[1])
    for _ in range(n_power):
        v_new, nv = _normalize(w.T @ u)
        if nv == 0.0:
            return 0.0, u, v
        u_new, nu = _normalize(w @ v_new)
        if nu == 0.0:
            return 0.0, u, v_new
        u, v = u_new, v_new
    return float(u @ w @ v), u, v


class SpecLinear(Module):
    """Linear layer whose weight is rescaled by ``min(1, coeff / sigma_est)``.

    The power-iteration vectors ``u``/``v`` and the last estimate ``sigma`` are
    buffers, not parameters: gradients treat the rescale factor as a constant.
    With ``frozen`` set the stored estimate is reused and nothing is mutated,
    which makes the forward a pure function (safe for concurrent inference).

    ``mode="none"`` disables the rescale; ``mode="batchnorm-like"`` replaces it
    with a batch normalization of the layer output.
    """

    def __init__(self, d_in: int, d_out: int, coeff: float = 0.9, n_power: int = 8, mode: str = "spec"):
        super().__init__()
        if mode not in MODES:
            raise ValueError(f"unknown specnorm mode {mode!r}; expected one of {MODES}")
        if not 0.0 < coeff:
            raise ValueError("coeff must be positive")
        self.weight = Parameter(np.zeros((d_out, d_in)))
        self.bias = Parameter(np.zeros(d_out))
        self.bn = BatchNorm(d_out) if mode == "batchnorm-like" else None
        self.coeff = float(coeff)
        self.n_power = int(n_power)
        self.mode = mode
        self.frozen = False
        self.register_buffer("u", np.zeros(d_out))
        self.register_buffer("v", np.zeros(d_in))
        self.register_buffer("sigma", np.zeros(()))

    def reset_u(self, rng: np.random.Generator) -> None:
        u, _ = _normalize(rng.standard_normal(self._buffers["u"].shape))
        self._buffers["u"][...] = u

    def update(self) -> float:
        """Run ``n_power`` power-iteration steps from the stored ``u``."""
        sigma, u, v = power_iteration(self.weight.data, self._buffers["u"], self.n_power)
        self._buffers["u"][...] = u
        self._buffers["v"][...] = v
        self._buffers["sigma"][...] = sigma
        return sigma

    def scale(self) -> float:
        sigma = float(self._buffers["sigma"])
        if self.mode != "spec" or sigma <= self.coeff:
            return 1.0
        return self.coeff / sigma

    def effective_weight(self) -> Tensor:
        s = self.scale()
        return self.weight if s == 1.0 else mul(self.weight, s)

    def forward(self, x: Tensor, update: bool = True) -> Tensor:
        if update and self.mode == "spec" and not self.frozen:
            self.update()
        y = linear(x, self.effective_weight(), self.bias)
        if self.bn is not None:
            y = self.bn(y)
        return y

    def effective_weight_np(self) -> np.ndarray:
        return self.weight.data * self.scale()


def spec_forward(layer: SpecLinear, x) -> Tensor:
    """One spectral-normalized forward pass (updates ``u`` unless frozen)."""
    return layer.forward(x if isinstance(x, Tensor) else Tensor(x))


def set_frozen(module: Module, frozen: bool = True) -> None:
    """Freeze or unfreeze every :class:`SpecLinear` inside ``module``."""
    for m in module.modules():
        if isinstance(m, SpecLinear):
            m.frozen = frozen


def init_spectral(module: Module, seed: int) -> None:
    """Seed every power-iteration vector from ``(seed, layer name)`` and take one estimate."""
    for name, m in module.named_modules():
        if isinstance(m, SpecLinear):
            m.reset_u(named_rng(seed, name + ".u"))
            m.update()
