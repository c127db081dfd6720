"""MLP-Mixer / iMixer assembly: patch stem, mixing blocks, pooled classifier head."""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from .imlp import IMlpModule, VanillaMlp
from .nn_core import LayerNorm, Linear, Module, Tensor, add, init_parameters, mean, swap_last
from .specnorm import MODES, init_spectral, set_frozen

# Desk-scale presets, far smaller than published Mixer-S/B/L sizes.
PRESETS = {
    "micro": dict(image_size=16, patch_size=4, channels_in=1, hidden_dim=64, depth=4,
                  token_dim=32, channel_dim=256),
    "tiny": dict(image_size=32, patch_size=4, channels_in=3, hidden_dim=128, depth=6,
                 token_dim=64, channel_dim=512),
}


@dataclass(frozen=True)
class MixerConfig:
    image_size: int = 16
    patch_size: int = 4
    channels_in: int = 1
    hidden_dim: int = 64
    depth: int = 4
    token_dim: int = 32
    channel_dim: int = 256
    token_mixer: str = "imlp"
    h_r: float = 2.0
    n_iter: int = 2
    coeff: float = 0.9
    n_power: int = 8
    specnorm_mode: str = "spec"
    num_classes: int = 10
    dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ValueError("image_size must be divisible by patch_size")
        if self.token_mixer not in ("imlp", "vanilla"):
            raise ValueError(f"token_mixer must be 'imlp' or 'vanilla', got {self.token_mixer!r}")
        if self.specnorm_mode not in MODES:
            raise ValueError(f"specnorm mode must be one of {MODES}")
        if self.depth < 0 or self.n_iter < 0 or self.num_classes < 2:
            raise ValueError("depth and n_iter must be >= 0, num_classes >= 2")

    @classmethod
    def preset(cls, name: str, **overrides) -> "MixerConfig":
        return cls(**{**PRESETS[name], **overrides})

    @property
    def num_tokens(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def patch_dim(self) -> int:
        return self.channels_in * self.patch_size ** 2

    @property
    def hidden_width(self) -> int:
        return IMlpModule.hidden_width(self.token_dim, self.h_r)

    def with_(self, **kw) -> "MixerConfig":
        return replace(self, **kw)

    def as_dict(self) -> dict:
        return asdict(self)


def patchify(cfg: MixerConfig, images: np.ndarray) -> np.ndarray:
    """``[B, C_in, H, W] -> [B, S, C_in * p * p]``.

    Patches are taken row-major over the grid; within a patch the vector runs
    channel-major, then row, then column.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 3:
        images = images[None]
    b, c, h, w = images.shape
    p = cfg.patch_size
    if c != cfg.channels_in or h != cfg.image_size or w != cfg.image_size:
        raise ValueError(f"image shape {(c, h, w)} does not match config "
                         f"{(cfg.channels_in, cfg.image_size, cfg.image_size)}")
    g = h // p
    x = images.reshape(b, c, g, p, g, p).transpose(0, 2, 4, 1, 3, 5)
    return np.ascontiguousarray(x.reshape(b, g * g, c * p * p))


class MixerBlock(Module):
    def __init__(self, cfg: MixerConfig):
        super().__init__()
        s, c = cfg.num_tokens, cfg.hidden_dim
        self.token_norm = LayerNorm(c)
        if cfg.token_mixer == "imlp":
            self.token_mix = IMlpModule(s, cfg.token_dim, cfg.hidden_width, cfg.n_iter, cfg.coeff,
                                        cfg.n_power, cfg.specnorm_mode, cfg.dropout, norm=False,
                                        seed=cfg.seed, init=False)
        else:
            self.token_mix = VanillaMlp(s, cfg.token_dim, cfg.dropout, seed=cfg.seed, init=False)
        self.channel_norm = LayerNorm(c)
        self.channel_mlp = VanillaMlp(c, cfg.channel_dim, cfg.dropout, seed=cfg.seed + 1, init=False)

    def forward(self, tokens: Tensor, capture: list | None = None, token_mixing: bool = True) -> Tensor:
        u = tokens
        if token_mixing:
            # Transposed so the token mixer's linear maps act on the token axis.
            y = swap_last(self.token_norm(tokens))
            if isinstance(self.token_mix, IMlpModule):
                mixed = self.token_mix.mix(y, capture=capture)
            else:
                mixed = self.token_mix.mix(y)
            u = add(tokens, swap_last(mixed))
        return add(u, self.channel_mlp.mix(self.channel_norm(u)))


class MixerModel(Module):
    def __init__(self, cfg: MixerConfig, init: bool = True):
        super().__init__()
        self.cfg = cfg
        self.stem = Linear(cfg.patch_dim, cfg.hidden_dim)
        self.blocks = [MixerBlock(cfg) for _ in range(cfg.depth)]
        self.norm = LayerNorm(cfg.hidden_dim)
        self.head = Linear(cfg.hidden_dim, cfg.num_classes)
        self.register_buffer("input_mean", np.zeros(cfg.channels_in))
        self.register_buffer("input_std", np.ones(cfg.channels_in))
        self.assign_names()
        if init:
            init_parameters(self, cfg.seed)
            init_spectral(self, cfg.seed)

    def set_input_stats(self, mean_: np.ndarray, std: np.ndarray) -> None:
        self._buffers["input_mean"][...] = mean_
        self._buffers["input_std"][...] = std

    def prepare(self, pixels: np.ndarray) -> np.ndarray:
        """u8 (or [0,1] float) images to normalized float input."""
        x = np.asarray(pixels, dtype=np.float64)
        if np.asarray(pixels).dtype == np.uint8:
            x = x / 255.0
        m = self._buffers["input_mean"][None, :, None, None]
        s = self._buffers["input_std"][None, :, None, None]
        return (x - m) / s

    def embed(self, images: np.ndarray) -> Tensor:
        return self.stem(Tensor(patchify(self.cfg, images)))

    def forward(self, images: np.ndarray, capture: list | None = None) -> Tensor:
        """Logits for already-normalized images ``[B, C_in, H, W]``.

        ``capture`` collects, per iMLP block, the fixed-point start ``z``.
        """
        x = self.embed(images)
        for blk in self.blocks:
            x = blk(x, capture=capture)
        x = mean(self.norm(x), axis=1)
        return self.head(x)

    def imlp_blocks(self) -> list[IMlpModule]:
        return [b.token_mix for b in self.blocks if isinstance(b.token_mix, IMlpModule)]

    def freeze(self) -> "MixerModel":
        """Frozen inference: eval mode and no power-iteration updates."""
        self.eval()
        set_frozen(self, True)
        return self

    def unfreeze(self) -> "MixerModel":
        self.train()
        set_frozen(self, False)
        return self


def patch_embed(model: MixerModel, image: np.ndarray) -> Tensor:
    """Token embeddings ``[S, C]`` (or ``[B, S, C]`` for a batch)."""
    out = model.embed(image)
    return out if np.asarray(image).ndim == 4 else Tensor(out.data[0])


def block_forward(block: MixerBlock, tokens) -> Tensor:
    tokens = tokens if isinstance(tokens, Tensor) else Tensor(tokens)
    return block(tokens)


def model_forward(model: MixerModel, batch: np.ndarray) -> Tensor:
    return model(batch)


def count_params(cfg: MixerConfig) -> int:
    """Closed-form trainable parameter count."""
    c, s, ds, dc, k = cfg.hidden_dim, cfg.num_tokens, cfg.token_dim, cfg.channel_dim, cfg.num_classes
    stem = cfg.patch_dim * c + c
    token = s * ds + ds + ds * s + s
    if cfg.token_mixer == "imlp":
        dh = cfg.hidden_width
        token += ds * dh + dh + dh * ds + ds
        if cfg.specnorm_mode == "batchnorm-like":
            token += 2 * dh + 2 * ds
    channel = c * dc + dc + dc * c + c
    block = 2 * c + token + 2 * c + channel
    return stem + cfg.depth * block + 2 * c + c * k + k
