"""Flat ``key = value`` experiment configuration.

One setting per line, ``#`` starts a comment, keys are dotted
(``model.n_iter = 2``). Every run draws all randomness from ``seed``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .mixer import PRESETS, MixerConfig


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(",") if x.strip())


# key -> (parser, default); a default of None means "taken from model.preset".
SCHEMA: dict[str, tuple] = {
    "seed": (int, 0),
    "model.preset": (str, "micro"),
    "model.image_size": (int, None),
    "model.patch_size": (int, None),
    "model.channels_in": (int, None),
    "model.hidden_dim": (int, None),
    "model.depth": (int, None),
    "model.token_dim": (int, None),
    "model.channel_dim": (int, None),
    "model.token_mixer": (str, "imlp"),
    "model.h_r": (float, 2.0),
    "model.n_iter": (int, 2),
    "model.num_classes": (int, 10),
    "model.dropout": (float, 0.0),
    "specnorm.coeff": (float, 0.9),
    "specnorm.n_power": (int, 8),
    "specnorm.mode": (str, "spec"),
    "train.lr": (float, 1e-3),
    "train.beta1": (float, 0.9),
    "train.beta2": (float, 0.999),
    "train.eps": (float, 1e-8),
    "train.weight_decay": (float, 0.05),
    "train.epochs": (int, 30),
    "train.batch_size": (int, 64),
    "train.label_smoothing": (float, 0.1),
    "train.eval_every": (int, 1),
    "train.record_time": (_bool, False),
    "train.kappa_samples": (int, 4),
    "train.out_dir": (str, "runs/default"),
    "data.classes": (int, 10),
    "data.per_class": (int, 200),
    "data.val_per_class": (int, 50),
    "data.noise": (float, 0.15),
    "hopfield.sizes": (_ints, (16, 32)),
    "hopfield.taus": (_floats, (1.0, 0.1)),
    "hopfield.alpha": (float, 0.0),
    "hopfield.dt": (float, 1e-3),
    "hopfield.steps": (int, 1000),
    "hopfield.weight_scale": (float, 0.5),
    "hopfield.record_every": (int, 1),
    "gradcheck.step": (float, 1e-3),
    "gradcheck.order": (int, 4),
    "gradcheck.tolerance": (float, 1e-5),
    "gradcheck.batch": (int, 2),
    "gradcheck.coords": (int, 12),
    "gradcheck.weight_std": (float, 0.0),
    "probe.samples": (int, 16),
    "probe.iters": (int, 0),
}


def parse_text(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def _format(value) -> str:
    if isinstance(value, tuple):
        return ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass
class Config:
    values: dict = field(default_factory=lambda: {k: d for k, (_, d) in SCHEMA.items()})
    explicit: set = field(default_factory=set)

    def set(self, key: str, raw: str) -> None:
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}; valid keys:\n  " + "\n  ".join(sorted(SCHEMA)))
        parser = SCHEMA[key][0]
        try:
            self.values[key] = parser(raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from None
        self.explicit.add(key)

    def __getitem__(self, key: str):
        return self.values[key]

    def model_config(self) -> MixerConfig:
        preset = self.values["model.preset"]
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        dims = dict(PRESETS[preset])
        for name in dims:
            if self.values[f"model.{name}"] is not None:
                dims[name] = self.values[f"model.{name}"]
        try:
            return MixerConfig(
                **dims,
                token_mixer=self.values["model.token_mixer"],
                h_r=self.values["model.h_r"],
                n_iter=self.values["model.n_iter"],
                coeff=self.values["specnorm.coeff"],
                n_power=self.values["specnorm.n_power"],
                specnorm_mode=self.values["specnorm.mode"],
                num_classes=self.values["model.num_classes"],
                dropout=self.values["model.dropout"],
                seed=self.values["seed"],
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def resolved(self) -> dict[str, object]:
        """All keys with preset-derived model dimensions filled in."""
        out = dict(self.values)
        mc = self.model_config()
        for name in PRESETS["micro"]:
            out[f"model.{name}"] = getattr(mc, name)
        return out

    def echo(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in sorted(self.resolved().items()))


def load_config(path=None, overrides=(), text: str | None = None) -> Config:
    cfg = Config()
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
    if text:
        for key, value in parse_text(text).items():
            cfg.set(key, value)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        cfg.set(key.strip(), value.strip())
    cfg.model_config()
    return cfg


def config_for_model(mc: MixerConfig) -> Config:
    """A configuration whose model section reproduces ``mc``."""
    cfg = Config()
    d = mc.as_dict()
    for name in PRESETS["micro"]:
        cfg.set(f"model.{name}", str(d[name]))
    for key, attr in [("model.token_mixer", "token_mixer"), ("model.h_r", "h_r"),
                      ("model.n_iter", "n_iter"), ("model.num_classes", "num_classes"),
                      ("model.dropout", "dropout"), ("specnorm.coeff", "coeff"),
                      ("specnorm.n_power", "n_power"), ("specnorm.mode", "specnorm_mode"),
                      ("seed", "seed")]:
        cfg.set(key, _format(d[attr]))
    return cfg
