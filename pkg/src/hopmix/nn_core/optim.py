from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Parameter


@dataclass
class AdamWState:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    exp_avg: dict[int, np.ndarray] = field(default_factory=dict)
    exp_avg_sq: dict[int, np.ndarray] = field(default_factory=dict)


class AdamW:
    """Adam with decoupled weight decay.

    ``decay`` optionally restricts weight decay to a subset of parameters
    (by identity); all parameters decay when it is ``None``.
    """

    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0, decay: list[Parameter] | None = None):
        if lr < 0:
            raise ValueError("learning rate must be non-negative")
        self.params = list(params)
        self.state = AdamWState(lr=lr, betas=tuple(betas), eps=eps, weight_decay=weight_decay)
        self._decay_ids = None if decay is None else {id(p) for p in decay}
        for i, p in enumerate(self.params):
            self.state.exp_avg[i] = np.zeros_like(p.data)
            self.state.exp_avg_sq[i] = np.zeros_like(p.data)

    def step(self) -> None:
        st = self.state
        st.step += 1
        b1, b2 = st.betas
        bc1 = 1.0 - b1 ** st.step
        bc2 = 1.0 - b2 ** st.step
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            m, v = st.exp_avg[i], st.exp_avg_sq[i]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if st.weight_decay and (self._decay_ids is None or id(p) in self._decay_ids):
                p.data = p.data * (1.0 - st.lr * st.weight_decay)
            denom = np.sqrt(v / bc2) + st.eps
            p.data = p.data - st.lr * (m / bc1) / denom

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def adamw_step(optimizer: AdamW, grads: list[np.ndarray] | None = None) -> None:
    """Functional entry point: optionally install ``grads`` and take one step."""
    if grads is not None:
        for p, g in zip(optimizer.params, grads):
            p.grad = np.asarray(g, dtype=np.float64)
    optimizer.step()
