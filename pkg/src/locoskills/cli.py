"""Command-line entry point: ``locoskills <subcommand>``.

Exit codes: 0 success, 2 validation error, 3 runtime or numerical failure.
Every run directory gets a config snapshot, a metrics CSV and checkpoints,
which together are enough to reproduce the run.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import toyenv
from .config import RunConfig, load_config
from .motion import DatasetFormatError, MotionClip, MotionDataset, read_dataset, write_dataset

log = logging.getLogger("locoskills")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3


class ValidationError(Exception):
    pass


# configuration -----------------------------------------------------------------------

def _replace(obj, **changes):
    return dataclasses.replace(obj, **changes)


def resolve_config(args) -> RunConfig:
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
    except FileNotFoundError:
        raise ValidationError(f"config file {args.config} not found") from None
    except (ValueError, TypeError) as exc:
        raise ValidationError(f"config {args.config}: {exc}") from None
    if args.seed is not None:
        cfg = _replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = _replace(cfg, out_dir=str(args.out))
    return cfg


def _prepare_out(cfg: RunConfig, resume: bool) -> Path:
    out = Path(cfg.out_dir)
    snap = out / "config.json"
    if resume and snap.exists():
        prev = RunConfig.from_dict(json.loads(snap.read_text()))
        if prev.hash() != cfg.hash():
            raise ValidationError(
                f"config hash {cfg.hash()} differs from the run directory snapshot {prev.hash()}"
            )
    try:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ValidationError(f"cannot create output directory {out}: {exc}") from None
    snap.write_text(cfg.to_json() + "\n")
    return out


def _write_metrics(path: Path, rows):
    from .trainer.common import metrics_to_csv

    path.write_text(metrics_to_csv(rows))


def _previous_rows(path: Path, upto: int):
    from .trainer.common import read_metrics

    if not path.exists():
        return []
    rows = read_metrics(path)
    out = []
    for r in rows:
        if r["epoch"] is not None and int(r["epoch"]) < upto:
            r["epoch"] = int(r["epoch"])
            out.append(r)
    return out


# subcommands -------------------------------------------------------------------------

def cmd_gen_dataset(args, cfg: RunConfig):
    n_walk = cfg.n_walk if args.walk is None else args.walk
    n_reach = cfg.n_reach if args.reach is None else args.reach
    if n_walk < 0 or n_reach < 0 or n_walk + n_reach == 0:
        raise ValidationError("clip counts must be non-negative and not both zero")
    path = Path(args.output) if args.output else Path(cfg.out_dir) / "dataset.jsonl"
    if not path.parent.exists():
        raise ValidationError(f"directory {path.parent} does not exist")
    ds = toyenv.generate_dataset(np.random.default_rng(cfg.seed), n_walk, n_reach, cfg=cfg.env)
    try:
        write_dataset(ds, path)
    except OSError as exc:
        raise ValidationError(f"cannot write {path}: {exc}") from None
    print(f"wrote {len(ds.clips)} clips to {path}")
    return EXIT_OK


def _parse_mapping(arg, model):
    if arg is None:
        return {f: f for f in model.frame_names}
    p = Path(arg)
    if p.exists():
        try:
            return dict(json.loads(p.read_text()))
        except (json.JSONDecodeError, TypeError, ValueError) as exc:
            raise ValidationError(f"mapping file {p}: {exc}") from None
    pairs = {}
    for item in arg.split(","):
        if "=" not in item:
            raise ValidationError(f"mapping entry {item!r} must look like frame=keypoint")
        k, v = item.split("=", 1)
        pairs[k.strip()] = v.strip()
    return pairs


def cmd_retarget(args, cfg: RunConfig):
    from . import retarget as rt

    try:
        model = rt.read_model(args.model)
        seq = rt.read_mocap(args.mocap)
    except FileNotFoundError as exc:
        raise ValidationError(str(exc)) from None
    mapping = _parse_mapping(args.map, model)
    try:
        problem = rt.RetargetProblem(model, mapping, alpha=args.alpha)
        order = problem.keypoint_order(seq.keypoints)
    except (KeyError, ValueError) as exc:
        raise ValidationError(str(exc.args[0]) if exc.args else str(exc)) from None
    if not args.no_resample and abs(seq.fps - 1.0 / cfg.env.dt) > 1e-9:
        seq = rt.resample(seq, 1.0 / cfg.env.dt)
    out = Path(args.output)
    if not out.parent.exists():
        raise ValidationError(f"directory {out.parent} does not exist")
    qs, reports = rt.retarget_sequence(problem, seq.select(order))
    summary = rt.summarize(reports)
    print(
        f"retargeted {summary['frames']} frames: RMS keypoint residual {summary['rms_keypoint_residual']:.3e} "
        f"(worst frame {summary['max_frame_rms']:.3e}), {len(summary['not_converged'])} frames not converged",
        file=sys.stderr,
    )
    if args.out_format == "dataset":
        clip = MotionClip(Path(args.mocap).stem, 1.0 / seq.fps, qs)
        ds = MotionDataset([clip], model.coordinate_names(), robot=model.name)
        write_dataset(ds, out)
    else:
        with open(out, "w") as fh:
            fh.write(json.dumps({"model": model.name, "coordinates": model.coordinate_names(),
                                 "fps": seq.fps, "summary": summary}) + "\n")
            for t, (q, rep) in enumerate(zip(qs, reports)):
                fh.write(json.dumps({"t": t, "q": q.tolist(), "rms": rep.keypoint_rms,
                                     "converged": rep.converged}) + "\n")
    return EXIT_OK


def _load_dataset(cfg, args):
    path = args.dataset or cfg.dataset_path
    if path is None:
        log.info("no dataset given; generating %d walk + %d reach clips", cfg.n_walk, cfg.n_reach)
        return toyenv.generate_dataset(np.random.default_rng(cfg.seed), cfg.n_walk, cfg.n_reach, cfg=cfg.env)
    try:
        ds = read_dataset(path)
    except FileNotFoundError:
        raise ValidationError(f"dataset {path} not found") from None
    except DatasetFormatError as exc:
        raise ValidationError(str(exc)) from None
    if ds.robot != "planar_arm":
        raise ValidationError(f"dataset robot {ds.robot!r} cannot drive the planar environment")
    if abs(ds.dt - cfg.env.dt) > 1e-12:
        raise ValidationError(f"dataset dt {ds.dt} differs from the environment dt {cfg.env.dt}")
    return ds


def cmd_train_low(args, cfg: RunConfig):
    from .trainer.lowlevel import LowLevelTrainer, train_low_level

    low = cfg.low
    if args.disc is not None:
        low = _replace(low, disc=_replace(low.disc, kind=args.disc))
    if args.cat is not None:
        low = _replace(low, cat=_replace(low.cat, enabled=args.cat))
    if args.epochs is not None:
        low = _replace(low, epochs=args.epochs)
    if args.dataset:
        cfg = _replace(cfg, dataset_path=str(args.dataset))
    cfg = _replace(cfg, low=low)
    dataset = _load_dataset(cfg, args)
    doc = ckpt.load(args.resume, "low-level") if args.resume else None
    if doc is not None and doc["config_hash"] != cfg.hash():
        raise ValidationError(f"checkpoint config hash {doc['config_hash']} does not match {cfg.hash()}")
    out = _prepare_out(cfg, resume=doc is not None)
    trainer = LowLevelTrainer(cfg.low, cfg.env, dataset, cfg.seed)
    if doc is not None:
        ckpt.restore_low_level(doc, trainer)
    rows = _previous_rows(out / "metrics.csv", trainer.epoch) if doc is not None else []
    h = cfg.hash()

    def on_epoch(tr, row):
        rows.append(row)
        _write_metrics(out / "metrics.csv", rows)
        if low.checkpoint_every and tr.epoch % low.checkpoint_every == 0:
            ckpt.save_low_level(out / "checkpoints" / f"low_{tr.epoch:06d}.json", tr, h)

    trainer, _ = train_low_level(cfg.low, cfg.env, dataset, cfg.seed, on_epoch=on_epoch, trainer=trainer)
    _write_metrics(out / "metrics.csv", rows)
    final = ckpt.save_low_level(out / "low_final.json", trainer, h)
    print(f"low-level training finished at epoch {trainer.epoch}; checkpoint {final}")
    return EXIT_OK


def load_low_policy(path):
    doc = ckpt.load(path, "low-level")
    return ckpt.component_from_dict(ckpt.find_component(doc, "policy"), "policy"), doc


def cmd_train_high(args, cfg: RunConfig):
    from .trainer.highlevel import HighLevelTrainer, train_high_level

    high = cfg.high
    if args.epochs is not None:
        high = _replace(high, epochs=args.epochs)
    low_path = args.low_checkpoint or cfg.low_checkpoint
    if low_path is None:
        raise ValidationError("train-high needs a low-level checkpoint (--low-checkpoint)")
    cfg = _replace(cfg, high=high, low_checkpoint=str(low_path))
    low_policy, _ = load_low_policy(low_path)
    from .skills import LATENT_DIM

    if low_policy.obs_dim != toyenv.OBS_DIM + LATENT_DIM or low_policy.act_dim != toyenv.ACTION_DIM:
        raise ValidationError("low-level policy dimensions do not match the environment")
    doc = ckpt.load(args.resume, "high-level") if args.resume else None
    if doc is not None and doc["config_hash"] != cfg.hash():
        raise ValidationError(f"checkpoint config hash {doc['config_hash']} does not match {cfg.hash()}")
    out = _prepare_out(cfg, resume=doc is not None)
    trainer = HighLevelTrainer(cfg.high, cfg.env, low_policy, cfg.seed, cfg.low.cat)
    if doc is not None:
        ckpt.restore_high_level(doc, trainer)
    rows = _previous_rows(out / "metrics.csv", trainer.epoch) if doc is not None else []
    h = cfg.hash()

    def on_epoch(tr, row):
        rows.append(row)
        _write_metrics(out / "metrics.csv", rows)
        if high.checkpoint_every and tr.epoch % high.checkpoint_every == 0:
            ckpt.save_high_level(out / "checkpoints" / f"high_{tr.epoch:06d}.json", tr, h, low_path)

    trainer, _ = train_high_level(cfg.high, cfg.env, low_policy, cfg.seed, on_epoch=on_epoch, trainer=trainer)
    _write_metrics(out / "metrics.csv", rows)
    final = ckpt.save_high_level(out / "high_final.json", trainer, h, low_path)
    print(f"high-level training finished at epoch {trainer.epoch}; checkpoint {final}")
    return EXIT_OK


def load_controller(path, cfg: RunConfig):
    from .trainer.highlevel import FrozenLowLevel, HierarchicalController

    doc = ckpt.load(path)
    if doc.get("kind") != "high-level":
        raise ValidationError(f"{path}: eval needs a high-level checkpoint, found {doc.get('kind')!r}")
    high = ckpt.component_from_dict(ckpt.find_component(doc, "high-level"), "high-level")
    low = ckpt.component_from_dict(ckpt.find_component(doc, "policy"), "policy")
    if high.act_dim != low.obs_dim - toyenv.OBS_DIM:
        raise ValidationError(
            f"high-level component emits {high.act_dim} latents but the policy component expects "
            f"{low.obs_dim - toyenv.OBS_DIM}"
        )
    return HierarchicalController(high, FrozenLowLevel(low), cfg.high.period, cfg.env)


def cmd_eval(args, cfg: RunConfig):
    from .trainer.common import make_constraints
    from .trainer.evaluate import evaluate

    n = cfg.eval_episodes if args.episodes is None else args.episodes
    if n <= 0:
        raise ValidationError("episode count must be positive")
    ctrl = load_controller(args.checkpoint, cfg)
    rep = evaluate(ctrl, n, np.random.default_rng(cfg.seed), cfg.env, cfg.high.target_radii,
                   make_constraints(cfg.low.cat, cfg.env))
    print(rep.summary())
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, ["episode", "final_error", "violation_frac", "fell"], lineterminator="\n")
            w.writeheader()
            for r in rep.rows():
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return EXIT_OK


def cmd_gradcheck(args, cfg: RunConfig):
    from .gradcheck import check_all

    results = check_all(np.random.default_rng(cfg.seed), tolerance=args.tolerance)
    ok = True
    for name, rep in results.items():
        status = "PASS" if rep.passed else "FAIL"
        ok &= rep.passed
        print(f"{status} {name}: max relative error {rep.max_rel_error:.2e} over {rep.checked} entries")
    return EXIT_OK if ok else EXIT_RUNTIME


# parser ------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="locoskills", description="Latent skill learning for loco-manipulation.")
    p.add_argument("--config", help="JSON run config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int, help="BLAS thread limit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-dataset", help="write the synthetic walk/reach dataset")
    g.add_argument("--walk", type=int)
    g.add_argument("--reach", type=int)
    g.add_argument("--output", help="dataset path (default OUT/dataset.jsonl)")
    g.set_defaults(func=cmd_gen_dataset)

    r = sub.add_parser("retarget", help="retarget keypoint mocap onto a kinematic model")
    r.add_argument("--model", required=True)
    r.add_argument("--mocap", required=True)
    r.add_argument("--map", help="JSON file or frame=keypoint,... (default: identical names)")
    r.add_argument("--alpha", type=float, default=0.005)
    r.add_argument("--out-format", choices=("dataset", "configurations"), default="configurations")
    r.add_argument("--no-resample", action="store_true", help="keep the mocap frame rate")
    r.add_argument("--output", required=True)
    r.set_defaults(func=cmd_retarget)

    tl = sub.add_parser("train-low", help="train the latent-conditioned low-level policy")
    tl.add_argument("--dataset")
    tl.add_argument("--disc", choices=("gan", "diffusion"))
    cat = tl.add_mutually_exclusive_group()
    cat.add_argument("--cat", dest="cat", action="store_true", default=None)
    cat.add_argument("--no-cat", dest="cat", action="store_false")
    tl.add_argument("--epochs", type=int)
    tl.add_argument("--resume", help="low-level checkpoint to continue from")
    tl.set_defaults(func=cmd_train_low)

    th = sub.add_parser("train-high", help="train the task policy on a frozen low-level policy")
    th.add_argument("--low-checkpoint")
    th.add_argument("--epochs", type=int)
    th.add_argument("--resume", help="high-level checkpoint to continue from")
    th.set_defaults(func=cmd_train_high)

    e = sub.add_parser("eval", help="evaluate a high-level checkpoint on point reaching")
    e.add_argument("checkpoint")
    e.add_argument("--episodes", type=int)
    e.add_argument("--csv", help="per-episode CSV output")
    e.set_defaults(func=cmd_eval)

    gc = sub.add_parser("gradcheck", help="finite-difference check of every trainable network")
    gc.add_argument("--tolerance", type=float, default=1e-4)
    gc.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.threads is not None and args.threads < 1:
        parser.error("--threads must be at least 1")
    limit = contextlib.nullcontext()
    if args.threads is not None:
        from threadpoolctl import threadpool_limits

        limit = threadpool_limits(limits=args.threads)
    try:
        with limit:
            cfg = resolve_config(args)
            return args.func(args, cfg)
    except (ValidationError, ckpt.CheckpointError, DatasetFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (FloatingPointError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
