"""Command-line entry point tying datasets, training, and inference together.

Every run is reproducible from its flags: randomness flows from a single
seed (the ``--seed`` flag or the config/checkpoint seed), artifacts are
written atomically, and each output directory carries a ``manifest.txt``
echoing the configuration plus content hashes of the inputs.  Commands
validate their inputs before touching the filesystem and fail with a
one-line ``error: <Category>: <reason>`` on stderr and a nonzero exit.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import os
import sys

import numpy as np

from . import gradchecks, metrics, persist, sampler, synthdata, trainer


class CliError(Exception):
    """Input validation failure at the command level."""


class _UsageError(Exception):
    """Bad or missing flags (argparse errors, rerouted)."""


_FAILURES = (CliError, trainer.TrainerError, persist.PersistError,
             synthdata.DatasetError, synthdata.SceneError,
             sampler.ChainDivergedError, ValueError, OSError)


# ---------------------------------------------------------------------------
# run manifests
# ---------------------------------------------------------------------------

def _blob_hash(data: bytes) -> str:
    """Git-style content hash: sha1 over a 'blob <len>\\0' header + payload."""
    h = hashlib.sha1(b"blob %d\x00" % len(data))
    h.update(data)
    return h.hexdigest()


def _hash_path(label: str, path: str) -> list[tuple[str, str]]:
    """Hash one input file, or every file under one input directory."""
    if os.path.isdir(path):
        rows = []
        for name in sorted(os.listdir(path)):
            full = os.path.join(path, name)
            if os.path.isfile(full):
                with open(full, "rb") as f:
                    rows.append((f"{label}/{name}", _blob_hash(f.read())))
        return rows
    with open(path, "rb") as f:
        return [(label, _blob_hash(f.read()))]


def write_manifest(out_dir, command: str, seed: int,
                   flags: dict[str, object],
                   config: dict[str, str] | None,
                   inputs: dict[str, str]) -> None:
    """Write ``manifest.txt`` into ``out_dir``: the recipe for this run."""
    lines = [f"command={command}", f"seed={seed}"]
    lines += [f"flag.{k}={v}" for k, v in sorted(flags.items())]
    if config:
        lines += [f"config.{k}={v}" for k, v in config.items()]
    hashed = []
    for label, path in sorted(inputs.items()):
        hashed += _hash_path(label, path)
    lines += [f"input.{label}={digest}" for label, digest in hashed]
    blob = ("\n".join(lines) + "\n").encode("utf-8")
    persist.atomic_write(os.path.join(os.fspath(out_dir), "manifest.txt"), blob)


# ---------------------------------------------------------------------------
# shared loaders
# ---------------------------------------------------------------------------

def _require_file(path: str, what: str) -> str:
    if not os.path.isfile(path):
        raise CliError(f"{what} not found: {path}")
    return path


def _require_dir(path: str, what: str) -> str:
    if not os.path.isdir(path):
        raise CliError(f"{what} not found: {path}")
    return path


def _load_state(path: str) -> trainer.TrainState:
    _require_file(path, "checkpoint")
    return trainer.restore_state(persist.load_checkpoint(path))


def _read_predictions(path: str) -> tuple[np.ndarray, np.ndarray | None]:
    """Load a prediction artifact: a .ten file, or a predict output directory
    (predictions.ten plus optional samples.ten for the uncertainty column)."""
    if os.path.isdir(path):
        pred = persist.read_ten(_require_file(
            os.path.join(path, "predictions.ten"), "prediction tensor"))
        samples_path = os.path.join(path, "samples.ten")
        samples = persist.read_ten(samples_path) if os.path.isfile(samples_path) else None
        return pred, samples
    return persist.read_ten(_require_file(path, "prediction tensor")), None


def _revision_config(cfg: trainer.TrainConfig) -> sampler.LangevinConfig:
    """Noise-free saliency revision settings, as used at test time."""
    return sampler.LangevinConfig(steps=cfg.k_steps_y, step_size=cfg.step_size_y,
                                  noise_enabled=False)


def _write_maps(out_dir: str, name: str, maps: np.ndarray) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    persist.write_ten(maps, path)
    return path


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> None:
    if args.count < 1:
        raise CliError(f"--count must be >= 1, got {args.count}")
    if not 0.0 < args.coverage <= 1.0:
        raise CliError(f"--coverage must lie in (0, 1], got {args.coverage}")
    kind = "weak" if args.weak else "full"
    ds = synthdata.build_dataset(args.count, args.seed, kind=kind,
                                 coverage=args.coverage)
    synthdata.write_dataset(ds, args.out)
    write_manifest(args.out, "gen-data", args.seed,
                   flags={"count": args.count, "weak": args.weak,
                          "coverage": args.coverage},
                   config=None, inputs={})
    print(f"dataset: {args.out} ({ds.count} {kind} images)")


def _train_command(args, expected_modes: tuple[str, ...], run):
    _require_file(args.config, "config file")
    _require_dir(args.data, "dataset directory")
    cfg = trainer.load_config(args.config)
    cfg = dataclasses.replace(cfg, dataset_dir=args.data, out_dir=args.out)
    if cfg.mode not in expected_modes:
        raise CliError(f"config mode {cfg.mode!r} does not match this command "
                       f"(expected one of {expected_modes})")
    ds = synthdata.read_dataset(cfg.dataset_dir)
    history = run(ds, cfg)
    write_manifest(cfg.out_dir, args.command, cfg.seed,
                   flags={"config": args.config, "data": args.data},
                   config=cfg.as_dict(),
                   inputs={"config": args.config, "data": args.data})
    last = history.rows[-1]
    skipped = (f", skipped {history.skipped_samples} unannotated samples"
               if history.skipped_samples else "")
    print(f"trained: {cfg.out_dir} ({cfg.epochs} epochs, "
          f"final train mae {last.train_mae:.4f}{skipped})")


def cmd_train_full(args) -> None:
    _train_command(args, ("coop-full",),
                   lambda ds, cfg: trainer.train_full(ds, cfg)[2])


def cmd_train_weak(args) -> None:
    _train_command(args, ("coop-weak",),
                   lambda ds, cfg: trainer.train_weak(ds, cfg)[2])


def cmd_train_ablation(args) -> None:
    _train_command(args, ("lvm-abp", "deterministic"),
                   lambda ds, cfg: trainer.train_ablation(ds, cfg)[1])


def cmd_predict(args) -> None:
    if args.samples < 1:
        raise CliError(f"--samples must be >= 1, got {args.samples}")
    state = _load_state(args.ckpt)
    ds = synthdata.read_dataset(_require_dir(args.data, "dataset directory"))
    cfg = state.config
    result = sampler.predict(state.params_g, state.params_e, ds.images,
                             args.samples, args.mode, _revision_config(cfg),
                             latent_stream=(cfg.seed, "predict"))
    _write_maps(args.out, "predictions.ten", result.final)
    _write_maps(args.out, "samples.ten", result.samples)
    write_manifest(args.out, "predict", cfg.seed,
                   flags={"ckpt": args.ckpt, "data": args.data,
                          "mode": args.mode, "samples": args.samples},
                   config=cfg.as_dict(),
                   inputs={"ckpt": args.ckpt, "data": args.data})
    print(f"predictions: {args.out} ({result.final.shape[0]} maps, "
          f"mode={args.mode}, samples={args.samples})")


def cmd_recover(args) -> None:
    state = _load_state(args.ckpt)
    ds = synthdata.read_dataset(_require_dir(args.data, "dataset directory"))
    if ds.kind != "weak":
        raise CliError(f"dataset kind {ds.kind!r} has no partial annotations "
                       "to recover (needs 'weak')")
    if state.params_e is None:
        raise CliError("checkpoint has no energy model; recovery needs one")
    cfg = state.config
    # Recovery is inference: both chains descend without Langevin noise,
    # so the completion is deterministic given the latent initialization.
    cfg_h = sampler.LangevinConfig(steps=cfg.k_steps_h,
                                   step_size=cfg.step_size_h,
                                   noise_enabled=False)
    rec = sampler.recover(state.params_g, state.params_e, ds.saliency,
                          ds.masks, ds.images, cfg.sigma, cfg_h,
                          _revision_config(cfg),
                          init_stream=(cfg.seed, "recover-init"))
    observed = ds.masks.astype(bool)
    completed = np.where(observed, ds.saliency, sampler.clamp01(rec.y_refined))
    _write_maps(args.out, "recovered.ten", completed.astype(ds.saliency.dtype))
    write_manifest(args.out, "recover", cfg.seed,
                   flags={"ckpt": args.ckpt, "data": args.data},
                   config=cfg.as_dict(),
                   inputs={"ckpt": args.ckpt, "data": args.data})
    print(f"recovered: {args.out} ({ds.count} maps, "
          f"observed fraction {observed.mean():.3f})")


def cmd_refine(args) -> None:
    state = _load_state(args.ckpt)
    if state.params_e is None:
        raise CliError("checkpoint has no energy model; refinement needs one")
    ds = synthdata.read_dataset(_require_dir(args.data, "dataset directory"))
    y_ext, _ = _read_predictions(args.pred)
    cfg = state.config
    steps = cfg.k_steps_y if args.steps is None else args.steps
    step_size = cfg.step_size_y if args.step_size is None else args.step_size
    if steps < 0:
        raise CliError(f"--steps must be >= 0, got {steps}")
    if step_size <= 0:
        raise CliError(f"--step-size must be > 0, got {step_size}")
    chain = sampler.LangevinConfig(steps=steps, step_size=step_size,
                                   noise_enabled=False)
    refined = sampler.refine_external(state.params_e, y_ext, ds.images, chain)
    _write_maps(args.out, "refined.ten", refined)
    write_manifest(args.out, "refine", cfg.seed,
                   flags={"ckpt": args.ckpt, "pred": args.pred,
                          "data": args.data, "steps": steps,
                          "step_size": step_size},
                   config=cfg.as_dict(),
                   inputs={"ckpt": args.ckpt, "pred": args.pred,
                           "data": args.data})
    print(f"refined: {args.out} ({refined.shape[0]} maps, {steps} steps)")


def cmd_eval(args) -> None:
    pred, samples = _read_predictions(args.pred)
    ds = synthdata.read_dataset(_require_dir(args.gt, "ground-truth dataset"))
    report = metrics.evaluate(pred, ds.saliency, samples=samples)
    metrics.write_report_csv(report, args.report)
    print(report.summary())
    print(f"report: {args.report} ({len(report.rows)} rows)")


def cmd_gradcheck(args) -> None:
    results = gradchecks.run_battery(args.precision)
    worst = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name}: max_rel_err={r.error:.3e} tol={r.tolerance:.0e} {status}")
        worst = max(worst, 0 if r.passed else 1)
    print(f"gradcheck: {len(results)} checks at {args.precision}, "
          f"{'all passed' if worst == 0 else 'FAILURES PRESENT'}")
    if worst:
        raise CliError("gradient check failures at " + args.precision)


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route argparse failures through one format
        raise _UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="coopsal",
                     description="cooperative saliency models on synthetic scenes")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", required=True, type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--weak", action="store_true",
                   help="scribble annotations instead of full maps")
    p.add_argument("--coverage", type=float, default=0.05)
    p.set_defaults(func=cmd_gen_data)

    for name, func in (("train-full", cmd_train_full),
                       ("train-weak", cmd_train_weak),
                       ("train-ablation", cmd_train_ablation)):
        p = sub.add_parser(name, help=f"run {name.split('-', 1)[1]} training")
        p.add_argument("--config", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--out", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("predict", help="predict saliency maps from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=sampler.PREDICT_MODES, default="latent-mean")
    p.add_argument("--samples", type=int, default=1,
                   help="number of latent draws")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("recover", help="complete partial annotations")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_recover)

    p = sub.add_parser("refine", help="refine external predictions by energy descent")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=None,
                   help="descent steps (default: checkpoint's revision steps)")
    p.add_argument("--step-size", type=float, default=None, dest="step_size")
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="run the gradient-check battery")
    p.add_argument("--precision", choices=("float32", "float64"),
                   default="float64")
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.func(args)
    except _UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return 2
    except _FAILURES as exc:
        reason = " ".join(str(exc).split()) or exc.__class__.__name__
        print(f"error: {type(exc).__name__}: {reason}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
