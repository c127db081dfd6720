"""``hopmix`` command line: data generation, training, evaluation and probes.

Exit status: 0 on success, 1 on usage errors (bad arguments, unknown config
keys), 2 on runtime failures.
"""

from __future__ import annotations

import argparse
import csv
import struct
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, load_config
from .data import DatasetError, gen_synthetic, load_dataset, save_dataset
from .diagnostics import model_grad_check, perturb_weights
from .hopfield import HopfieldSystem, State, integrate, random_system
from .imlp import probe_from_z
from .mixer import MixerModel
from .nn_core import NonFiniteError, named_rng, no_grad
from .train import ConfigMismatch, TrainConfig, TrainingDiverged, evaluate, train

ITERATE_MAGIC = b"HMIT"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="flat key = value configuration file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one configuration key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hopmix", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"hopmix {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write seeded synthetic train/val IMGB files")
    _common(p)
    p.add_argument("--out", type=Path, required=True, help="output directory")

    p = sub.add_parser("train", help="train a Mixer model")
    _common(p)
    p.add_argument("--data", type=Path, required=True,
                   help="training IMGB file, or a directory holding train.imgb and val.imgb")
    p.add_argument("--val", type=Path, help="validation IMGB file")
    p.add_argument("--out", type=Path, help="output directory (overrides train.out_dir)")
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, help="per-class accuracy CSV (a PNG is written next to it)")

    p = sub.add_parser("probe", help="fixed-point convergence probes of every iMLP layer")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="probe CSV (a PNG is written next to it)")
    p.add_argument("--samples", type=int, help="number of samples (default probe.samples)")
    p.add_argument("--iters", type=int, help="iterations per probe (default probe.iters or the model's n)")
    p.add_argument("--dump-iterates", type=Path, metavar="DIR", help="write raw iterates per layer")

    p = sub.add_parser("hopfield-sim", help="integrate a random hierarchical Hopfield network")
    _common(p)
    p.add_argument("--out", type=Path, required=True, help="trajectory CSV (a PNG is written next to it)")

    p = sub.add_parser("gradcheck", help="finite-difference check of model gradients")
    _common(p)
    return parser


def _load_cfg(args):
    return load_config(args.config, args.overrides)


def _data_paths(args) -> tuple[Path, Path]:
    if args.data.is_dir():
        return args.data / "train.imgb", args.val or args.data / "val.imgb"
    if args.val is None:
        raise UsageError("train: --val is required when --data is a file")
    return args.data, args.val


def cmd_gen_data(args) -> int:
    cfg = _load_cfg(args)
    mc = cfg.model_config()
    dims = (mc.channels_in, mc.image_size, mc.image_size)
    args.out.mkdir(parents=True, exist_ok=True)
    for split, per_class in (("train", cfg["data.per_class"]), ("val", cfg["data.val_per_class"])):
        ds = gen_synthetic(cfg["data.classes"], per_class, dims, cfg["data.noise"], cfg["seed"], split)
        save_dataset(ds, args.out / f"{split}.imgb")
        print(f"{split}: {len(ds)} images {dims} -> {args.out / f'{split}.imgb'}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    if args.out is not None:
        cfg.set("train.out_dir", str(args.out))
    tcfg = TrainConfig.from_config(cfg)
    train_path, val_path = _data_paths(args)
    result = train(tcfg, load_dataset(train_path, "train"), load_dataset(val_path, "val"),
                   config_text=cfg.echo(), log=None if args.quiet else print)
    last = result.history[-1] if result.history else None
    if last is not None:
        print(f"final train_acc {last.train_acc:.4f} val_acc {last.val_acc:.4f} "
              f"(best val at epoch {result.best_epoch})")
    print(f"outputs in {tcfg.out_dir}")
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint).build_model()
    res = evaluate(model, load_dataset(args.data))
    print(f"loss {res.loss:.6f}")
    print(f"accuracy {res.accuracy:.6f}")
    for k, acc in enumerate(res.per_class):
        print(f"class {k} {acc:.6f}")
    if args.out:
        from .plotting import plot_per_class

        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["class", "accuracy"])
            w.writerows((k, repr(float(a))) for k, a in enumerate(res.per_class))
        plot_per_class(res.per_class, args.out.with_suffix(".png"))
    return 0


def write_iterates(path: Path, iterates: list[np.ndarray]) -> None:
    """Raw iterates: magic, u32 version, u32 count, u32 samples, u32 rows, u32 cols, f64 data."""
    arr = np.ascontiguousarray(np.stack(iterates), dtype="<f8")  # [n+1, samples, rows, cols]
    with open(path, "wb") as fh:
        fh.write(ITERATE_MAGIC + struct.pack("<5I", 1, *arr.shape))
        fh.write(arr.tobytes())


def cmd_probe(args) -> int:
    from .plotting import plot_probe

    cfg = _load_cfg(args)
    model = load_checkpoint(args.checkpoint).build_model().freeze()
    ds = load_dataset(args.data)
    samples = args.samples if args.samples is not None else cfg["probe.samples"]
    iters = args.iters if args.iters is not None else (cfg["probe.iters"] or None)
    images = ds.images[:samples]
    zs: list[np.ndarray] = []
    with no_grad():
        model(model.prepare(images), capture=zs)
    rows = []
    if args.dump_iterates:
        args.dump_iterates.mkdir(parents=True, exist_ok=True)
    with no_grad():
        for layer, (block, z) in enumerate(zip(model.imlp_blocks(), zs)):
            traces = probe_from_z(block, z, iters)
            for s, tr in enumerate(traces):
                for a in range(tr.n):
                    rows.append((layer, s, a + 1, float(tr.norm[a]), float(tr.cos[a])))
            if args.dump_iterates:
                stacked = [np.stack([tr.iterates[a] for tr in traces]) for a in range(traces[0].n + 1)]
                write_iterates(args.dump_iterates / f"layer{layer}.bin", stacked)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["layer_index", "sample_index", "a", "norm_a", "cos_a"])
        w.writerows((l, s, a, repr(n), repr(c)) for l, s, a, n, c in rows)
    plot_probe(rows, args.out.with_suffix(".png"))
    print(f"{len(rows)} probe rows over {len(zs)} iMLP layers -> {args.out}")
    return 0


def cmd_hopfield_sim(args) -> int:
    from .plotting import plot_trajectory

    cfg = _load_cfg(args)
    sizes, taus = cfg["hopfield.sizes"], cfg["hopfield.taus"]
    if len(sizes) < 2 or len(sizes) != len(taus):
        raise UsageError("hopfield.sizes and hopfield.taus need the same length >= 2")
    seed = cfg["seed"]
    system: HopfieldSystem = random_system(sizes, named_rng(seed, "hopfield.weights"), taus,
                                           cfg["hopfield.weight_scale"], cfg["hopfield.alpha"])
    rng = named_rng(seed, "hopfield.state")
    layers = [rng.standard_normal(sizes[0])] + [rng.uniform(-0.5, 0.5, n) for n in sizes[1:]]
    traj = integrate(system, State(tuple(layers)), cfg["hopfield.dt"], cfg["hopfield.steps"],
                     record_every=cfg["hopfield.record_every"])
    norms = traj.norms()
    header = ["t"] + [f"norm_{k + 1}" for k in range(len(sizes))]
    if traj.energy is not None:
        header.append("energy")
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, t in enumerate(traj.times):
            row = [repr(float(t))] + [repr(float(x)) for x in norms[i]]
            if traj.energy is not None:
                row.append(repr(float(traj.energy[i])))
            w.writerow(row)
    plot_trajectory(traj.times, norms, traj.energy, args.out.with_suffix(".png"))
    print(f"{len(traj.times)} rows -> {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    cfg = _load_cfg(args)
    model = MixerModel(cfg.model_config())
    if cfg["gradcheck.weight_std"] > 0:
        perturb_weights(model, cfg["gradcheck.weight_std"], cfg["seed"])
    res = model_grad_check(model, batch=cfg["gradcheck.batch"], step=cfg["gradcheck.step"],
                           tolerance=cfg["gradcheck.tolerance"], coords=cfg["gradcheck.coords"] or None,
                           order=cfg["gradcheck.order"], seed=cfg["seed"])
    worst = max(res.per_param.items(), key=lambda t: t[1])
    print(f"max relative error {res.max_rel_error:.3e} (worst: {worst[0]})")
    print("PASS" if res.ok else f"FAIL (tolerance {res.tolerance:g})")
    return 0 if res.ok else 2


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "probe": cmd_probe,
    "hopfield-sim": cmd_hopfield_sim,
    "gradcheck": cmd_gradcheck,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return 1
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(exc, file=sys.stderr)
        return 1
    except (OSError, DatasetError, CheckpointError, ConfigMismatch, TrainingDiverged,
            NonFiniteError, ValueError, RuntimeError) as exc:
        print(f"hopmix: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
