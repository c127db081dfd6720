"""Continuous hierarchical Hopfield networks.

Layers are indexed ``0..L-1`` (visible first). ``up[k]`` holds the interaction
from layer ``k`` into layer ``k+1`` (shape ``N[k+1] x N[k]``) and ``down[k]``
the interaction from layer ``k+1`` back into layer ``k`` (shape ``N[k] x N[k+1]``).
The symmetric convention is ``down[k] == up[k].T``.

Each layer obeys::

    tau_k dx_k/dt = up[k-1] g_{k-1}(x_{k-1}) + down[k] g_{k+1}(x_{k+1}) - a_k x_k

with ``a_0 = alpha`` for the visible layer and ``a_k = 1`` otherwise; the
missing neighbours of the first and last layers contribute nothing.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numba
import numpy as np
from scipy.special import ndtr

from .nn_core.functional import DegenerateInput, gelu_np, lagrangian_g_np

log = logging.getLogger(__name__)

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
# gelu'(x) >= 0 exactly for x above this root of Phi(x) + x pdf(x).
GELU_MONOTONE_FLOOR = -0.7517915241


class IntegrationError(FloatingPointError):
    pass


class NonConvergence(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (final residual {residual:.3e})")
        self.residual = residual


class LagrangianKind(enum.Enum):
    NORM_LV = "norm_lv"
    SUM_PHI_GELU = "sum_phi_gelu"


def phi_gelu(h):
    """Antiderivative of GELU with ``phi(0) = 0``.

    ``int_0^h s Phi(s) ds = (h^2 - 1)/2 Phi(h) + h pdf(h)/2 + 1/4``.
    """
    h = np.asarray(h, dtype=np.float64)
    return 0.5 * (h * h - 1.0) * ndtr(h) + 0.5 * h * _INV_SQRT_2PI * np.exp(-0.5 * h * h) + 0.25


@dataclass(frozen=True)
class LagrangianSpec:
    kind: LagrangianKind
    eps: float = 1e-12

    @classmethod
    def norm(cls, eps: float = 1e-12) -> "LagrangianSpec":
        return cls(LagrangianKind.NORM_LV, eps)

    @classmethod
    def gelu(cls) -> "LagrangianSpec":
        return cls(LagrangianKind.SUM_PHI_GELU, 0.0)

    def activation(self, x: np.ndarray) -> np.ndarray:
        if self.kind is LagrangianKind.NORM_LV:
            return lagrangian_g_np(x, self.eps)
        return gelu_np(x)

    def value(self, x: np.ndarray) -> float:
        if self.kind is LagrangianKind.NORM_LV:
            c = x - x.mean()
            return float(np.sqrt(c @ c + self.eps))
        return float(np.sum(phi_gelu(x)))


@dataclass(frozen=True)
class HopfieldSystem:
    sizes: tuple[int, ...]
    up: tuple[np.ndarray, ...]
    down: tuple[np.ndarray, ...]
    taus: tuple[float, ...]
    lagrangians: tuple[LagrangianSpec, ...]
    alpha: float = 0.0

    def __post_init__(self):
        L = len(self.sizes)
        if L < 2:
            raise ValueError("a Hopfield system needs at least two layers")
        if len(self.up) != L - 1 or len(self.down) != L - 1:
            raise ValueError("need one up and one down matrix per adjacent layer pair")
        if len(self.taus) != L or len(self.lagrangians) != L:
            raise ValueError("need one time constant and one Lagrangian per layer")
        for k in range(L - 1):
            if self.up[k].shape != (self.sizes[k + 1], self.sizes[k]):
                raise ValueError(f"up[{k}] has shape {self.up[k].shape}")
            if self.down[k].shape != (self.sizes[k], self.sizes[k + 1]):
                raise ValueError(f"down[{k}] has shape {self.down[k].shape}")
        if any(t <= 0 for t in self.taus):
            raise ValueError("time constants must be positive")
        for m in self.up + self.down:
            m.setflags(write=False)

    @classmethod
    def create(cls, up: Sequence[np.ndarray], taus: Sequence[float],
               lagrangians: Sequence[LagrangianSpec] | None = None,
               down: Sequence[np.ndarray] | None = None, alpha: float = 0.0) -> "HopfieldSystem":
        up = tuple(np.array(m, dtype=np.float64) for m in up)
        sizes = (up[0].shape[1],) + tuple(m.shape[0] for m in up)
        if down is None:
            down = tuple(m.T.copy() for m in up)
        else:
            down = tuple(np.array(m, dtype=np.float64) for m in down)
        if lagrangians is None:
            lagrangians = (LagrangianSpec.norm(),) + (LagrangianSpec.gelu(),) * (len(sizes) - 1)
        return cls(sizes, up, down, tuple(float(t) for t in taus), tuple(lagrangians), float(alpha))

    @property
    def n_layers(self) -> int:
        return len(self.sizes)

    @property
    def symmetric(self) -> bool:
        return all(np.allclose(d, u.T, rtol=1e-12, atol=0.0) for u, d in zip(self.up, self.down))

    def activations(self, layers: Sequence[np.ndarray]) -> list[np.ndarray]:
        return [lag.activation(x) for lag, x in zip(self.lagrangians, layers)]


def random_system(sizes: Sequence[int], rng: np.random.Generator, taus: Sequence[float],
                  weight_scale: float = 0.5, alpha: float = 0.0,
                  lagrangians: Sequence[LagrangianSpec] | None = None) -> HopfieldSystem:
    """Symmetric system with Gaussian couplings of row norm about ``weight_scale``."""
    up = [rng.standard_normal((sizes[k + 1], sizes[k])) * weight_scale / math.sqrt(sizes[k])
          for k in range(len(sizes) - 1)]
    return HopfieldSystem.create(up, taus, lagrangians, alpha=alpha)


@dataclass
class State:
    layers: tuple[np.ndarray, ...]
    t: float = 0.0

    def __post_init__(self):
        self.layers = tuple(np.array(x, dtype=np.float64) for x in self.layers)

    def check(self, system: HopfieldSystem) -> None:
        if tuple(x.shape for x in self.layers) != tuple((n,) for n in system.sizes):
            raise ValueError(f"state shapes {[x.shape for x in self.layers]} do not match sizes {system.sizes}")


def dynamics_rhs(system: HopfieldSystem, state: State) -> list[np.ndarray]:
    """Time derivatives ``dx_k/dt`` of every layer."""
    state.check(system)
    acts = system.activations(state.layers)
    out = []
    L = system.n_layers
    for k, x in enumerate(state.layers):
        drive = np.zeros_like(x)
        if k > 0:
            drive = drive + system.up[k - 1] @ acts[k - 1]
        if k < L - 1:
            drive = drive + system.down[k] @ acts[k + 1]
        decay = system.alpha if k == 0 else 1.0
        out.append((drive - decay * x) / system.taus[k])
    return out


def energy_2layer(system: HopfieldSystem, v: np.ndarray, h: np.ndarray) -> float:
    """``sum v g(v) - L_v + sum h f(h) - L_h - f^T xi g`` with ``xi = up[0]``."""
    if system.n_layers != 2:
        raise ValueError("energy is defined here for two-layer systems only")
    lv, lh = system.lagrangians
    if lv.kind is LagrangianKind.NORM_LV and lv.eps == 0.0:
        c = v - v.mean()
        if c @ c == 0.0:
            raise DegenerateInput("constant visible state")
    g = lv.activation(v)
    f = lh.activation(h)
    return float(v @ g - lv.value(v) + h @ f - lh.value(h) - f @ system.up[0] @ g)


@dataclass
class Trajectory:
    times: np.ndarray
    states: list[np.ndarray]
    energy: np.ndarray | None = None

    def norms(self) -> np.ndarray:
        return np.stack([np.linalg.norm(s, axis=1) for s in self.states], axis=1)

    def final_state(self) -> State:
        return State(tuple(s[-1] for s in self.states), float(self.times[-1]))


_KIND_CODES = {LagrangianKind.NORM_LV: 0, LagrangianKind.SUM_PHI_GELU: 1}


@numba.njit(cache=True)
def _act(kind, eps, x, out):
    n = x.shape[0]
    if kind == 0:
        m = 0.0
        for i in range(n):
            m += x[i]
        m /= n
        ss = 0.0
        for i in range(n):
            ss += (x[i] - m) * (x[i] - m)
        r = math.sqrt(ss + eps)
        for i in range(n):
            out[i] = (x[i] - m) / r
    else:
        for i in range(n):
            out[i] = x[i] * 0.5 * math.erfc(-x[i] / math.sqrt(2.0))


@numba.njit(cache=True)
def _lagr(kind, eps, x):
    n = x.shape[0]
    if kind == 0:
        m = 0.0
        for i in range(n):
            m += x[i]
        m /= n
        ss = 0.0
        for i in range(n):
            ss += (x[i] - m) * (x[i] - m)
        return math.sqrt(ss + eps)
    tot = 0.0
    for i in range(n):
        h = x[i]
        cdf = 0.5 * math.erfc(-h / math.sqrt(2.0))
        pdf = math.exp(-0.5 * h * h) / math.sqrt(2.0 * math.pi)
        tot += 0.5 * (h * h - 1.0) * cdf + 0.5 * h * pdf + 0.25
    return tot


@numba.njit(cache=True)
def _euler_kernel(x, offs, kinds, eps, up, down, taus, alpha, frozen, dt, steps,
                  record_every, with_energy, out_states, out_energy):
    L = kinds.shape[0]
    total = x.shape[0]
    acts = np.empty(total)
    dx = np.empty(total)
    rec = 0
    for step in range(steps + 1):
        for k in range(L):
            _act(kinds[k], eps[k], x[offs[k]:offs[k + 1]], acts[offs[k]:offs[k + 1]])
        if step % record_every == 0:
            out_states[rec, :] = x
            if with_energy:
                nv = offs[1]
                nh = offs[2] - offs[1]
                e = 0.0
                for i in range(total):
                    e += x[i] * acts[i]
                e -= _lagr(kinds[0], eps[0], x[0:nv]) + _lagr(kinds[1], eps[1], x[nv:offs[2]])
                w = up[0]
                for mu in range(nh):
                    s = 0.0
                    for i in range(nv):
                        s += w[mu, i] * acts[i]
                    e -= acts[nv + mu] * s
                out_energy[rec] = e
            rec += 1
        if step == steps:
            break
        for k in range(L):
            lo = offs[k]
            n = offs[k + 1] - lo
            decay = alpha if k == 0 else 1.0
            for i in range(n):
                d = -decay * x[lo + i]
                if k > 0:
                    plo = offs[k - 1]
                    wu = up[k - 1]
                    for j in range(offs[k] - plo):
                        d += wu[i, j] * acts[plo + j]
                if k < L - 1:
                    nlo = offs[k + 1]
                    wd = down[k]
                    for j in range(offs[k + 2] - nlo):
                        d += wd[i, j] * acts[nlo + j]
                dx[lo + i] = 0.0 if frozen[k] else d / taus[k]
        for i in range(total):
            x[i] += dt * dx[i]
            if not math.isfinite(x[i]):
                return step + 1
    return -1


def integrate(system: HopfieldSystem, state0: State, dt: float, steps: int,
              frozen: Sequence[int] = (), record_every: int = 1,
              backend: str = "numba") -> Trajectory:
    """Forward-Euler trajectory; energy is recorded for two-layer systems.

    ``frozen`` lists layer indices held constant. ``backend="numpy"`` runs the
    reference stepper built on :func:`dynamics_rhs`.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    state0.check(system)
    L = system.n_layers
    frozen_mask = np.array([k in frozen for k in range(L)])
    n_rec = steps // record_every + 1
    with_energy = L == 2
    if backend == "numpy":
        return _integrate_numpy(system, state0, dt, steps, frozen_mask, record_every, n_rec, with_energy)
    if backend != "numba":
        raise ValueError(f"unknown backend {backend!r}")

    offs = np.cumsum((0,) + system.sizes).astype(np.int64)
    x = np.concatenate(state0.layers)
    kinds = np.array([_KIND_CODES[lag.kind] for lag in system.lagrangians], dtype=np.int64)
    eps = np.array([lag.eps for lag in system.lagrangians])
    out_states = np.empty((n_rec, x.size))
    out_energy = np.empty(n_rec)
    fail = _euler_kernel(x, offs, kinds, eps, numba.typed.List(system.up), numba.typed.List(system.down),
                         np.array(system.taus), float(system.alpha), frozen_mask, float(dt), int(steps),
                         int(record_every), with_energy, out_states, out_energy)
    if fail >= 0:
        raise IntegrationError(f"non-finite state at step {fail} (t={state0.t + fail * dt:.6g}); "
                               f"reduce dt (currently {dt:.3g}, tau_min {min(system.taus):.3g})")
    times = state0.t + dt * record_every * np.arange(n_rec)
    states = [out_states[:, offs[k]:offs[k + 1]].copy() for k in range(L)]
    return Trajectory(times, states, out_energy if with_energy else None)


def _integrate_numpy(system, state0, dt, steps, frozen_mask, record_every, n_rec, with_energy):
    layers = [x.copy() for x in state0.layers]
    states = [np.empty((n_rec, n)) for n in system.sizes]
    energy = np.empty(n_rec) if with_energy else None
    rec = 0
    for step in range(steps + 1):
        if step % record_every == 0:
            for k, x in enumerate(layers):
                states[k][rec] = x
            if with_energy:
                energy[rec] = energy_2layer(system, layers[0], layers[1])
            rec += 1
        if step == steps:
            break
        rhs = dynamics_rhs(system, State(tuple(layers)))
        for k in range(len(layers)):
            if not frozen_mask[k]:
                layers[k] = layers[k] + dt * rhs[k]
            if not np.all(np.isfinite(layers[k])):
                raise IntegrationError(f"non-finite state at step {step + 1}")
    times = state0.t + dt * record_every * np.arange(n_rec)
    return Trajectory(times, states, energy)


def hidden_equilibrium(system: HopfieldSystem, v: np.ndarray, tolerance: float = 1e-10,
                       max_iters: int = 10_000, damping: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Adiabatic equilibrium of the two hidden layers of a three-layer system with ``v`` frozen.

    Solves ``x = up0 g(v) + down1 f(h)``, ``h = up1 e(x)`` by iterating
    ``x <- x + d (z + F(x) - x)``. Plain iteration (``d = 1``) falls back to
    ``d = 0.5`` when the step size grows for several consecutive iterations.
    """
    if system.n_layers != 3:
        raise ValueError("hidden_equilibrium expects a three-layer system")
    lv, lx, lh = system.lagrangians
    z = system.up[0] @ lv.activation(v)

    def contract(x):
        return system.down[1] @ lh.activation(system.up[1] @ lx.activation(x))

    x = z.copy()
    growth = 0
    prev = math.inf
    residual = math.inf
    for _ in range(max_iters):
        r = z + contract(x) - x
        residual = float(np.linalg.norm(r))
        if residual < tolerance:
            return x, system.up[1] @ lx.activation(x)
        if not math.isfinite(residual):
            break
        growth = growth + 1 if residual > prev else 0
        if growth >= 3 and damping > 0.5:
            log.info("hidden_equilibrium: oscillation detected, damping 0.5")
            damping = 0.5
            growth = 0
        prev = residual
        x = x + damping * r
    raise NonConvergence(f"hidden_equilibrium did not converge in {max_iters} iterations", residual)


def reduced_update(system: HopfieldSystem, v: np.ndarray, tolerance: float = 1e-12) -> np.ndarray:
    """Visible step ``v + down0 e(x_eq)`` of the adiabatic three-layer system (unit step, no decay)."""
    x_eq, _ = hidden_equilibrium(system, v, tolerance)
    return v + system.down[0] @ system.lagrangians[1].activation(x_eq)


def adiabatic_rhs(system: HopfieldSystem, v: np.ndarray) -> np.ndarray:
    """Visible derivative of a two-layer system with the hidden layer slaved to ``up0 g(v)``."""
    if system.n_layers != 2:
        raise ValueError("adiabatic_rhs expects a two-layer system")
    lv, lh = system.lagrangians
    h = system.up[0] @ lv.activation(v)
    return (system.down[0] @ lh.activation(h) - system.alpha * v) / system.taus[0]


def mixer_update(system: HopfieldSystem, v: np.ndarray) -> np.ndarray:
    """One discrete visible update ``v + down0 sigma(up0 g(v))`` (Mixer mixing block)."""
    if system.n_layers != 2:
        raise ValueError("mixer_update expects a two-layer system")
    lv, lh = system.lagrangians
    if lv.kind is not LagrangianKind.NORM_LV:
        raise ValueError("mixer_update needs the norm Lagrangian on the visible layer")
    if system.alpha != 0.0:
        raise ValueError("mixer_update is the alpha = 0 discretization")
    return v + system.down[0] @ lh.activation(system.up[0] @ lagrangian_g_np(v, lv.eps))
