"""Whole-model gradient check on random inputs."""

from __future__ import annotations

import numpy as np

from .mixer import MixerModel
from .nn_core import GradCheckResult, cross_entropy, grad_check, named_rng, trunc_normal
from .specnorm import SpecLinear

# Tensors whose analytic and numeric gradients are both below this norm are
# structurally zero (e.g. token-mixer output biases cancelled by the channel LN).
ZERO_GRAD_NORM = 1e-10


def perturb_weights(model: MixerModel, std: float, seed: int = 0, power_steps: int = 50) -> MixerModel:
    """Redraw every parameter at scale ``std`` and re-estimate spectral norms.

    Weight matrices get truncated-normal entries of that std; biases and LN
    parameters get small offsets around their defaults. Large enough ``std``
    pushes the spectral layers into the regime where the rescale is active.
    """
    for name, p in model.named_parameters():
        rng = named_rng(seed, "perturb." + name)
        if p.ndim >= 2:
            p.data = trunc_normal(rng, p.shape, std)
        else:
            p.data = p.data + 0.1 * rng.standard_normal(p.shape)
    for m in model.modules():
        if isinstance(m, SpecLinear) and m.mode == "spec":
            for _ in range(power_steps):
                m.update()
    return model


def model_grad_check(model: MixerModel, batch: int = 2, step: float = 1e-3, tolerance: float = 1e-5,
                     coords: int | None = 12, order: int = 4, smoothing: float = 0.1,
                     seed: int = 0) -> GradCheckResult:
    """Check every parameter of ``model`` in frozen mode on random inputs.

    Frozen mode keeps the stored power-iteration estimate fixed, which is the
    stop-gradient convention the tape implements.
    """
    cfg = model.cfg
    model.freeze()
    rng = named_rng(seed, "gradcheck")
    x = rng.standard_normal((batch, cfg.channels_in, cfg.image_size, cfg.image_size))
    y = rng.integers(0, cfg.num_classes, batch)
    names, params = zip(*model.named_parameters())
    return grad_check(lambda: cross_entropy(model(x), y, smoothing), list(params), step=step,
                      tolerance=tolerance, max_coords=coords, seed=seed, names=names,
                      order=order, zero_tol=ZERO_GRAD_NORM)


def spectral_scales(model: MixerModel) -> np.ndarray:
    return np.array([m.scale() for m in model.modules() if isinstance(m, SpecLinear)])
