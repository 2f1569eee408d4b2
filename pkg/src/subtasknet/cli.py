"""Command-line entry point: gen-data | train | eval | infer | simulate-exec | rf-report.

Exit codes: 0 success, 1 usage/config error, 2 data or format error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import glob
import logging
import os
import sys

import numpy as np

from . import data, execution, metrics, tcn
from .config import load_config
from .errors import ConfigError, FormatError, NumericalError, ParameterError, UsageError
from .execution import PlanRejected
from .loss import LossConfig, TransitionMatrix
from .model import ModelConfig, SegmentationModel
from .postprocess import PostprocessConfig, postprocess
from .trainer import TrainConfig, fit

log = logging.getLogger("subtasknet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _post_cfg(cfg):
    return PostprocessConfig(cfg.median, cfg.window, cfg.collapse, cfg.min_len)


def _vocab(path):
    return data.read_mapping(path) if path else data.ClassVocabulary()


def _write_stats(path, mean, std):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("mean " + " ".join(repr(float(v)) for v in mean) + "\n")
        fh.write("std " + " ".join(repr(float(v)) for v in std) + "\n")


def _read_stats(path):
    rows = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if parts:
                rows[parts[0]] = np.array([float(v) for v in parts[1:]])
    if set(rows) != {"mean", "std"} or rows["mean"].shape != rows["std"].shape:
        raise FormatError(f"{path}: expected 'mean ...' and 'std ...' lines of equal length")
    return rows["mean"], rows["std"]


# ---------------------------------------------------------------- subcommands


def cmd_gen_data(args, cfg):
    gen = data.SyntheticGenConfig(dim=cfg.dim, noise=cfg.noise)
    splits = data.generate_dataset(
        cfg=gen,
        train_per_task=cfg.train_per_task,
        val_per_task=cfg.val_per_task,
        n_aug=cfg.n_aug,
        aug_scale=cfg.aug_scale,
        seed=cfg.seed,
    )
    manifest = data.save_dataset(args.out, splits)
    vocab = data.ClassVocabulary()
    TransitionMatrix.from_grammar(data.GRAMMAR, vocab.names).save(os.path.join(args.out, "transitions.txt"))
    with open(os.path.join(args.out, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(cfg.to_text())
    print(f"manifest={manifest}")
    print(f"train_videos={len(splits['train'])}")
    print(f"val_videos={len(splits['val'])}")
    return EXIT_OK


def _dataset_side_files(manifest):
    root = os.path.dirname(os.path.abspath(manifest))
    mapping = os.path.join(root, "mapping.txt")
    trans = os.path.join(root, "transitions.txt")
    vocab = data.read_mapping(mapping) if os.path.exists(mapping) else data.ClassVocabulary()
    if os.path.exists(trans):
        M = TransitionMatrix.load(trans)
    else:
        M = TransitionMatrix.from_grammar(data.GRAMMAR, vocab.names)
    return vocab, M


def cmd_train(args, cfg):
    vocab, M = _dataset_side_files(args.data)
    train = data.load_split(args.data, vocab, "train")
    val = data.load_split(args.data, vocab, "val")
    if not train or not val:
        raise FormatError(f"{args.data}: need both train and val entries")
    (train, val), (mean, std) = data.normalize_videos(train, val)
    width = train[0].features.shape[1]
    if cfg.fusion and width % 2:
        raise ConfigError(f"fusion needs [rgb | flow] features of even width, got {width}")
    model_cfg = ModelConfig(
        num_classes=len(vocab),
        feature_dim=width // 2 if cfg.fusion else width,
        stages=cfg.stages,
        layers=cfg.layers,
        kernel=cfg.kernel,
        channels=cfg.channels,
        schedule=cfg.schedule,
        fusion=cfg.fusion,
        dropout=cfg.dropout,
    )
    model = SegmentationModel.init(model_cfg, np.random.default_rng([cfg.seed, 0]))
    loss_cfg = LossConfig(cfg.lam, cfg.gamma, cfg.tau)
    if not cfg.class_weights:
        loss_cfg.class_weights = np.ones(len(vocab))
    train_cfg = TrainConfig(
        eta0=cfg.eta0,
        warmup_epochs=cfg.warmup_epochs,
        max_epochs=cfg.max_epochs,
        batch_size=cfg.batch_size,
        clip_norm=cfg.clip_norm,
        weight_decay=cfg.weight_decay,
        patience=cfg.patience,
        seed=cfg.seed,
    )
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(cfg.to_text())
    _write_stats(os.path.join(args.out, "norm.txt"), mean, std)
    data.write_mapping(os.path.join(args.out, "mapping.txt"), vocab)
    result = fit(model, train, val, loss_cfg, M, train_cfg, _post_cfg(cfg), run_dir=args.out)
    model.save(os.path.join(args.out, "final.ckpt"))
    model.load_state(result.best_state)
    model.save(os.path.join(args.out, "best.ckpt"))
    best = result.history[result.best_epoch]
    print(f"best_epoch={result.best_epoch}")
    print(f"epochs_run={len(result.history)}")
    for key in ("acc", "f1@10", "f1@25", "f1@50", "edit"):
        print(f"val_{key.replace('@', '')}={best[key]:.4f}")
    return EXIT_OK


def _label_files(path):
    if os.path.isdir(path):
        return sorted(glob.glob(os.path.join(path, "*.txt")))
    return [path]


def cmd_eval(args, cfg):
    vocab = _vocab(args.mapping)
    gt_files = _label_files(args.gt)
    if not gt_files:
        raise FormatError(f"no label files under {args.gt}")
    preds, gts = [], []
    for gt_path in gt_files:
        pred_path = (
            os.path.join(args.pred, os.path.basename(gt_path)) if os.path.isdir(args.pred) else args.pred
        )
        if not os.path.exists(pred_path):
            raise FormatError(f"missing prediction file {pred_path}")
        try:
            gts.append(list(vocab.encode(data.read_labels(gt_path))))
            preds.append(list(vocab.encode(data.read_labels(pred_path))))
        except KeyError as exc:
            raise FormatError(str(exc.args[0])) from None
        if len(preds[-1]) != len(gts[-1]):
            raise FormatError(f"{pred_path}: {len(preds[-1])} frames vs {len(gts[-1])} in {gt_path}")
    report = metrics.evaluate(preds, gts, matching=cfg.matching)
    print(report.to_table())
    print(report.to_kv())
    return EXIT_OK


def _feature_files(paths):
    out = []
    for p in paths:
        out += sorted(glob.glob(os.path.join(p, "*.sseq"))) if os.path.isdir(p) else [p]
    return out


def cmd_infer(args, cfg):
    model = SegmentationModel.load(args.checkpoint)
    ckpt_dir = os.path.dirname(os.path.abspath(args.checkpoint))
    mapping = args.mapping or os.path.join(ckpt_dir, "mapping.txt")
    vocab = data.read_mapping(mapping) if os.path.exists(mapping) else data.ClassVocabulary()
    if len(vocab) != model.config.num_classes:
        raise FormatError(f"mapping has {len(vocab)} classes, checkpoint {model.config.num_classes}")
    stats = None
    if not args.no_normalize:
        norm = args.norm or os.path.join(ckpt_dir, "norm.txt")
        if os.path.exists(norm):
            stats = _read_stats(norm)
    post = _post_cfg(cfg)
    os.makedirs(args.out, exist_ok=True)
    files = _feature_files(args.features)
    if not files:
        raise FormatError("no feature files given")
    for path in files:
        feats = data.read_features(path)
        if stats is not None:
            if stats[0].shape[0] != feats.shape[1]:
                raise FormatError(f"{path}: width {feats.shape[1]} vs normalization width {stats[0].shape[0]}")
            feats = (feats - stats[0]) / stats[1]
        labels = postprocess(model.predict(feats), post)
        name = os.path.splitext(os.path.basename(path))[0] + ".txt"
        data.write_labels(os.path.join(args.out, name), vocab.decode(labels))
        print(f"wrote={os.path.join(args.out, name)}")
    return EXIT_OK


def cmd_simulate_exec(args, cfg):
    names = data.read_labels(args.labels)
    goals = execution.load_goals(args.goals) if args.goals else execution.DEFAULT_GOALS
    transcript = execution.transcript_of(names)
    plan = execution.plan_from_transcript(transcript, data.GRAMMAR, goals)
    ctrl = execution.ControllerConfig(
        k_x=cfg.k_x,
        k_pz=cfg.k_pz,
        d_ref=cfg.d_ref,
        v_max=(cfg.v_max,) * 3,
        tolerance=(cfg.tolerance,) * 3,
    )
    library = execution.build_library(n_basis=cfg.n_basis)
    results = execution.execute_plan(plan, library, ctrl, servo_dt=cfg.servo_dt)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        plan.save(os.path.join(args.out, "plan.tsv"))
        for i, r in enumerate(results):
            r.trajectory.dump(os.path.join(args.out, f"{i:02d}_{r.subtask}.traj"))
    print(f"task={plan.task}")
    for i, r in enumerate(results):
        status = "success" if r.success else "failure"
        print(
            f"primitive={i} subtask={r.subtask} servo_converged={int(r.servo_converged)} "
            f"servo_steps={r.servo_steps} terminal_error={r.terminal_error:.3e} status={status}"
        )
    ok = all(r.success for r in results)
    print(f"task_success={int(ok)}")
    return EXIT_OK


def cmd_rf_report(args, cfg):
    rng = np.random.default_rng(cfg.seed)
    for kind in tcn.SCHEDULE_KINDS:
        sched = tcn.make_schedule(kind, cfg.layers)
        rf = tcn.receptive_field(sched, cfg.kernel)
        T = rf + 16
        stage = tcn.StageParams.init(args.probe_width, args.probe_channels, 4, cfg.layers, cfg.kernel, rng, 0.0)
        for b in stage.conv_b:  # positive biases keep every ReLU path open for the probe
            b.data[:] = 1.0
        lo, hi = tcn.probe_receptive_field(stage, sched, T, T // 2, seed=cfg.seed)
        print(f"schedule={kind} layers={cfg.layers} kernel={cfg.kernel} "
              f"dilations={','.join(map(str, sched.dilations))} sum={sum(sched.dilations)} "
              f"rf_analytic={rf} rf_empirical={hi - lo + 1}")
    return EXIT_OK


# ---------------------------------------------------------------- wiring


def build_parser():
    p = _Parser(prog="subtasknet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="flat key=value config file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
        sp.add_argument("--seed", type=int)

    def post_flags(sp):
        sp.add_argument("--window", type=int, help="median filter window (odd)")
        sp.add_argument("--min-run", type=int, dest="min_len", help="minimum run length for collapsing")
        sp.add_argument("--no-median", action="store_true")
        sp.add_argument("--no-collapse", action="store_true")

    sp = sub.add_parser("gen-data", help="write a synthetic demonstration dataset")
    common(sp)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("train", help="train on a manifest-backed dataset")
    common(sp)
    post_flags(sp)
    sp.add_argument("--data", required=True, help="dataset manifest")
    sp.add_argument("--out", required=True, help="run directory")
    sp.add_argument("--epochs", type=int, dest="max_epochs")

    sp = sub.add_parser("eval", help="score predicted label files against ground truth")
    common(sp)
    sp.add_argument("--pred", required=True)
    sp.add_argument("--gt", required=True)
    sp.add_argument("--mapping")
    sp.add_argument("--matching", choices=["optimal", "greedy", "mstcn"])

    sp = sub.add_parser("infer", help="predict label files from feature files")
    common(sp)
    post_flags(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--features", nargs="+", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--mapping")
    sp.add_argument("--norm", help="normalization stats (default: norm.txt beside the checkpoint)")
    sp.add_argument("--no-normalize", action="store_true")

    sp = sub.add_parser("simulate-exec", help="plan and simulate primitives for a label file")
    common(sp)
    sp.add_argument("--labels", required=True)
    sp.add_argument("--goals", help="plan-format goal table")
    sp.add_argument("--out", help="directory for the plan and trajectory dumps")

    sp = sub.add_parser("rf-report", help="dilations and analytic vs probed receptive fields")
    common(sp)
    sp.add_argument("--layers", type=int)
    sp.add_argument("--kernel", type=int)
    sp.add_argument("--probe-width", type=int, default=4)
    sp.add_argument("--probe-channels", type=int, default=8)
    return p


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "simulate-exec": cmd_simulate_exec,
    "rf-report": cmd_rf_report,
}


def _resolve_config(args):
    overrides = list(args.set)
    for key in ("seed", "max_epochs", "window", "min_len", "matching", "layers", "kernel"):
        value = getattr(args, key, None)
        if value is not None:
            overrides.append(f"{key}={value}")
    if getattr(args, "no_median", False):
        overrides.append("median=false")
    if getattr(args, "no_collapse", False):
        overrides.append("collapse=false")
    return load_config(args.config, overrides)


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
            stream=sys.stderr,
        )
        if not args.command:
            raise UsageError("a subcommand is required (see --help)")
        cfg = _resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, PlanRejected, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
