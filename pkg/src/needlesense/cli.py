"""Command-line pipeline: simulate, filter, label, augment, train, evaluate,
stream, replay, and export-plot subcommands.

Every subcommand accepts `--config file.json` whose keys are the long option
names; explicit flags override config values.  Exit status is 0 on success
and nonzero with a single-line diagnostic on failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from . import dataset as ds
from . import evaluation as ev
from .filters import FilterSpec, design_butterworth
from .labels import ClassLabel
from .mechanics import load_scene_file, motion_from_dict, motion_to_dict, scene_to_dict
from .model import ModelConfig, predict
from .streaming import StreamState, replay
from .training import TrainConfig, load_checkpoint, save_checkpoint, train, write_loss_curve


def _add_config_flag(sub):
    sub.add_argument("--config", help="JSON file of defaults for this subcommand")


def _require(args, *names):
    # options may arrive via --config, so argparse-level required is off
    for name in names:
        if getattr(args, name.replace("-", "_"), None) is None:
            raise ValueError(f"missing required option --{name}")


def _filter_flags(sub, with_disable=True):
    sub.add_argument("--filter-order", type=int, default=6)
    sub.add_argument("--filter-cutoff-hz", type=float, default=5.0)
    if with_disable:
        sub.add_argument("--no-filter", action="store_true", help="skip low-pass filtering")


def _model_flags(sub):
    sub.add_argument("--d-model", type=int, default=64)
    sub.add_argument("--num-heads", type=int, default=8)
    sub.add_argument("--num-blocks", type=int, default=4)
    sub.add_argument("--ffn-dim", type=int, default=128)
    sub.add_argument("--dropout", type=float, default=0.0)
    sub.add_argument("--no-positional-encoding", action="store_true")


def _train_flags(sub):
    sub.add_argument("--epochs", type=int, default=4)
    sub.add_argument("--batch-size", type=int, default=64)
    sub.add_argument("--learning-rate", type=float, default=1e-3)
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--dtype", default="float64", choices=["float32", "float64"])
    sub.add_argument("--grad-clip-norm", type=float, default=None)


def _split_flags(sub):
    sub.add_argument("--folds", type=int, default=5)
    sub.add_argument("--eval-fraction", type=float, default=0.2)
    sub.add_argument("--split-seed", type=int, default=0)


def _model_config(args, dataset) -> ModelConfig:
    return ModelConfig(
        seq_len=dataset.window_len,
        in_features=2,
        d_model=args.d_model,
        num_heads=args.num_heads,
        num_blocks=args.num_blocks,
        ffn_dim=args.ffn_dim,
        dropout_rate=args.dropout,
        use_positional_encoding=not args.no_positional_encoding,
    )


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        learning_rate=args.learning_rate,
        batch_size=args.batch_size,
        epochs=args.epochs,
        seed=args.seed,
        grad_clip_norm=args.grad_clip_norm,
        dtype=args.dtype,
    )


# Handlers -------------------------------------------------------------------

def cmd_simulate(args) -> int:
    _require(args, "scene", "out")
    scene, motion = load_scene_file(args.scene)
    if args.motion:
        with open(args.motion) as fh:
            motion = motion_from_dict(json.load(fh))
    if motion is None:
        raise ValueError("no motion program: add a 'motion' block to the scene or pass --motion")
    from .mechanics import simulate_insertion

    trace = simulate_insertion(scene, motion, args.seed)
    ds.write_trace(args.out, trace)
    meta = {
        "scene": scene_to_dict(scene),
        "motion": motion_to_dict(motion),
        "seed": args.seed,
        "puncture_timestamps": [float(v) for v in trace.puncture_timestamps],
    }
    with open(str(args.out) + ".meta.json", "w") as fh:
        json.dump(meta, fh, indent=1)
    print(f"wrote {len(trace)} samples to {args.out}")
    return 0


def cmd_filter(args) -> int:
    _require(args, "input")
    trace = ds.read_trace(args.input)
    fs = args.sample_rate_hz or trace.sample_rate
    spec = FilterSpec(order=args.filter_order, cutoff_hz=args.filter_cutoff_hz, sample_rate_hz=fs)
    cascade = design_butterworth(spec)
    if args.dump_coefficients:
        print(cascade.coefficient_table())
    if args.output:
        f = design_butterworth(spec).apply(trace.f)
        x = design_butterworth(spec).apply(trace.x) if args.channels == "both" else trace.x
        trace.f = f
        trace.x = x
        ds.write_trace(args.output, trace)
        print(f"filtered {len(trace)} samples to {args.output}")
    elif not args.dump_coefficients:
        raise ValueError("nothing to do: pass --output and/or --dump-coefficients")
    return 0


def cmd_label(args) -> int:
    _require(args, "trace", "scene", "out")
    trace = ds.read_trace(args.trace)
    scene, _ = load_scene_file(args.scene)
    trace.label = ds.label_trace(trace, scene)
    ds.write_trace(args.out, trace)
    print(f"labeled {len(trace)} samples to {args.out}")
    return 0


def cmd_augment(args) -> int:
    _require(args, "out")
    if args.frames_per_tissue is not None:
        per_tissue = args.frames_per_tissue
    else:
        if args.frames % 5:
            raise ValueError(f"--frames {args.frames} does not divide evenly over 5 tissues")
        per_tissue = args.frames // 5
    spec = None
    if not args.no_filter:
        spec = FilterSpec(
            order=args.filter_order, cutoff_hz=args.filter_cutoff_hz, sample_rate_hz=20.0
        )
    config = corpus_mod.CorpusConfig(
        frames_per_tissue=per_tissue,
        seed=args.seed,
        filter_spec=spec,
        filter_position=not args.no_filter_position,
    )
    frames = corpus_mod.synthesize_frames(config)
    dataset = ds.build_dataset(
        frames,
        windows_per_frame=args.windows,
        pad=args.pad,
        seed=args.seed,
        filter_spec=spec,
    )
    ds.write_dataset(args.out, dataset)
    print(
        f"wrote {dataset.n_examples} examples from {len(frames)} frames to {args.out}"
    )
    return 0


def cmd_train(args) -> int:
    _require(args, "dataset", "out")
    dataset = ds.read_dataset(args.dataset)
    split = ds.kfold_split(dataset, k=args.folds, eval_fraction=args.eval_fraction, seed=args.split_seed)
    val_idx = split.fold_indices[args.fold]
    train_idx = split.train_indices(args.fold)
    norm = ds.compute_normalization(dataset, train_idx)
    model_config = _model_config(args, dataset)
    result = train(
        model_config,
        _train_config(args),
        norm.apply(dataset.windows[train_idx]),
        dataset.labels[train_idx],
        norm.apply(dataset.windows[val_idx]),
        dataset.labels[val_idx],
        progress=lambda msg: print(msg, file=sys.stderr),
    )
    save_checkpoint(args.out, result.params, normalization=norm, filter_spec=dataset.filter_spec)
    curve = Path(str(args.out)).with_suffix(".loss.csv")
    write_loss_curve(curve, result.history)
    print(
        f"trained on {len(train_idx)} examples; best epoch {result.best_epoch}; "
        f"checkpoint {args.out}; loss curve {curve}"
    )
    return 0


def cmd_evaluate(args) -> int:
    _require(args, "dataset", "out")
    dataset = ds.read_dataset(args.dataset)
    split = ds.kfold_split(dataset, k=args.folds, eval_fraction=args.eval_fraction, seed=args.split_seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.cv:
        model_config = _model_config(args, dataset)
        report = ev.cross_validate(
            dataset,
            split,
            model_config,
            _train_config(args),
            progress=lambda msg: print(msg, file=sys.stderr),
        )
        ev.write_metrics_csv(out / "metrics.csv", report.fold_eval)
        ev.write_confusion_csv(out / "confusion.csv", report.confusion_eval_total)
        for line in report.summary_lines():
            print(line)
    else:
        if not args.model:
            raise ValueError("pass --model for single-checkpoint evaluation or use --cv")
        params, norm, _ = load_checkpoint(args.model)
        windows = dataset.windows[split.eval_indices]
        if norm is not None:
            windows = norm.apply(windows)
        pred, _ = predict(params, windows)
        report = ev.score(pred, dataset.labels[split.eval_indices])
        ev.write_metrics_csv(out / "metrics.csv", [report], names=["evaluation"])
        ev.write_confusion_csv(out / "confusion.csv", report.confusion)
        for key, value in report.metric_dict().items():
            print(f"{key}: {value}")
    print(f"reports written to {out}")
    return 0


def _load_stream_model(args):
    params, norm, spec = load_checkpoint(args.model)
    return StreamState(params, normalization=norm, filter_spec=spec)


def _output_header(num_classes=8) -> str:
    return "t,label,latency_ms," + ",".join(f"p{i}" for i in range(num_classes))


def _output_line(out) -> str:
    probs = ",".join(repr(float(p)) for p in out.probs)
    return f"{repr(out.t)},{out.label},{out.latency_ms:.3f},{probs}"


def cmd_stream(args) -> int:
    _require(args, "model")
    state = _load_stream_model(args)
    print(_output_header())
    n = 0
    over_budget = 0
    for lineno, line in enumerate(sys.stdin, start=1):
        line = line.strip()
        if not line or line.startswith("t,"):
            continue
        parts = line.split(",")
        if len(parts) < 3:
            raise ValueError(f"stdin:{lineno}: expected t,x,f records")
        t, x, f = float(parts[0]), float(parts[1]), float(parts[2])
        if n % args.decimate == 0:
            out = state.push(t, x, f)
            print(_output_line(out))
            if out.latency_ms > args.budget_ms:
                over_budget += 1
        else:
            state.observe(t, x, f)
        n += 1
    print(f"processed {n} samples; {over_budget} over the {args.budget_ms} ms budget", file=sys.stderr)
    return 0


def cmd_replay(args) -> int:
    _require(args, "trace", "model")
    trace = ds.read_trace(args.trace)
    state = _load_stream_model(args)
    outputs, summary = replay(trace, state, budget_ms=args.budget_ms, decimate=args.decimate)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(_output_header() + "\n")
            for out in outputs:
                fh.write(_output_line(out) + "\n")
    for line in summary.lines():
        print(line)
    return 0


def cmd_export_plot(args) -> int:
    _require(args, "out")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    wrote = []
    if args.trace:
        trace = ds.read_trace(args.trace)
        with open(out / "trace_xy.csv", "w") as fh:
            fh.write("t,x,f\n")
            for t, x, f in zip(trace.t, trace.x, trace.f):
                fh.write(f"{repr(float(t))},{repr(float(x))},{repr(float(f))}\n")
        with open(out / "label_track.csv", "w") as fh:
            fh.write("t,label,label_name\n")
            for t, lab in zip(trace.t, trace.label):
                fh.write(f"{repr(float(t))},{int(lab)},{ClassLabel(int(lab)).name.lower()}\n")
        wrote += ["trace_xy.csv", "label_track.csv"]
    if args.loss_curve:
        rows = Path(args.loss_curve).read_text().strip().splitlines()
        if not rows or not rows[0].startswith("epoch,"):
            raise ValueError(f"{args.loss_curve}: not a loss-curve CSV")
        (out / "loss_curve.csv").write_text("\n".join(rows) + "\n")
        wrote.append("loss_curve.csv")
    if args.confusion:
        rows = Path(args.confusion).read_text().strip().splitlines()
        if not rows or not rows[0].startswith("row,col,count"):
            raise ValueError(f"{args.confusion}: not a confusion CSV")
        with open(out / "confusion_grid.csv", "w") as fh:
            fh.write("row,col,count\n")
            for line in rows[1:]:
                parts = line.split(",")
                fh.write(",".join(parts[:3]) + "\n")
        wrote.append("confusion_grid.csv")
    if not wrote:
        raise ValueError("nothing to export: pass --trace, --loss-curve, or --confusion")
    print(f"wrote {', '.join(wrote)} to {out}")
    return 0


# Parser ----------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="needlesense",
        description="Synthetic needle-insertion traces and a streaming phase/tissue classifier.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    registry = {}

    def register(name, handler, help_text):
        sub = subparsers.add_parser(name, help=help_text)
        _add_config_flag(sub)
        sub.set_defaults(handler=handler)
        registry[name] = sub
        return sub

    sub = register("simulate", cmd_simulate, "simulate an insertion trace from a scene file")
    sub.add_argument("--scene", help="scene JSON (may embed a motion block)")
    sub.add_argument("--motion", help="motion JSON overriding the scene's motion")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--out")

    sub = register("filter", cmd_filter, "low-pass filter a trace, or dump filter coefficients")
    sub.add_argument("--input")
    sub.add_argument("--output")
    sub.add_argument("--sample-rate-hz", type=float, default=None)
    sub.add_argument("--channels", choices=["both", "force"], default="both")
    sub.add_argument("--dump-coefficients", action="store_true")
    _filter_flags(sub, with_disable=False)

    sub = register("label", cmd_label, "recompute a trace's per-sample labels for a scene")
    sub.add_argument("--trace")
    sub.add_argument("--scene")
    sub.add_argument("--out")

    sub = register("augment", cmd_augment, "synthesize frames and build an augmented dataset")
    sub.add_argument("--frames", type=int, default=2000, help="total frames over the 5 tissues")
    sub.add_argument("--frames-per-tissue", type=int, default=None)
    sub.add_argument("--windows", type=int, default=40)
    sub.add_argument("--pad", type=int, default=60)
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--out")
    sub.add_argument("--no-filter-position", action="store_true")
    _filter_flags(sub)

    sub = register("train", cmd_train, "train a classifier on an augmented dataset")
    sub.add_argument("--dataset")
    sub.add_argument("--out")
    sub.add_argument("--fold", type=int, default=0, help="fold held out for validation")
    _model_flags(sub)
    _train_flags(sub)
    _split_flags(sub)

    sub = register("evaluate", cmd_evaluate, "score a checkpoint or run full cross-validation")
    sub.add_argument("--dataset")
    sub.add_argument("--model")
    sub.add_argument("--out")
    sub.add_argument("--cv", action="store_true", help="retrain one model per fold")
    _model_flags(sub)
    _train_flags(sub)
    _split_flags(sub)

    sub = register("stream", cmd_stream, "classify t,x,f records from standard input")
    sub.add_argument("--model")
    sub.add_argument("--budget-ms", type=float, default=10.0)
    sub.add_argument("--rate-hz", type=float, default=20.0)
    sub.add_argument("--decimate", type=int, default=1)

    sub = register("replay", cmd_replay, "stream a recorded trace and score the online labels")
    sub.add_argument("--trace")
    sub.add_argument("--model")
    sub.add_argument("--budget-ms", type=float, default=10.0)
    sub.add_argument("--decimate", type=int, default=1)
    sub.add_argument("--out")

    sub = register("export-plot", cmd_export_plot, "emit plot-ready CSV tables")
    sub.add_argument("--trace")
    sub.add_argument("--loss-curve")
    sub.add_argument("--confusion")
    sub.add_argument("--out")

    return parser, registry


def _apply_config(sub, path):
    with open(path) as fh:
        values = json.load(fh)
    if not isinstance(values, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    dests = {a.dest for a in sub._actions}
    defaults = {}
    for key, value in values.items():
        dest = key.replace("-", "_")
        if dest not in dests:
            raise ValueError(f"{path}: unknown option {key!r}")
        defaults[dest] = value
    sub.set_defaults(**defaults)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, registry = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "config", None):
            _apply_config(registry[args.command], args.config)
            args = parser.parse_args(argv)
        return args.handler(args)
    except SystemExit as exc:
        code = exc.code
        return code if isinstance(code, int) else 2
    except BrokenPipeError:
        return 0
    except Exception as exc:  # single-line diagnostic, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
