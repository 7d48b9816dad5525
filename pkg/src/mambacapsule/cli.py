"""Command-line entry point: ``mambacapsule {train,eval,explain,synth}``.

Exit codes: 0 success, 2 usage or configuration error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint
from .config import (DataConfig, ExplainConfig, ModelConfig, RunConfig, TrainConfig, apply_env,
                     apply_file, preset, set_value, to_text)
from .data import (VOCABULARIES, load_csv, stratified_split, synth_beats,
                   to_arrays, write_csv)
from .errors import ConfigError, NumericError, ParseError
from .explain import cross_label_reconstruct, disturbance_study, emit_plot
from .metrics import format_report, per_class_metrics, report_csv
from .model import MambaCapsule
from .training import center_window, evaluate, train

EXIT_USAGE = 2
EXIT_NUMERIC = 3

_TD, _DD, _ED, _MD = TrainConfig(), DataConfig(), ExplainConfig(), ModelConfig()


def parse_shifts(text: str) -> list[int]:
    text = text.strip().lstrip("=")
    try:
        if ".." in text:
            lo, hi = text.split("..")
            return list(range(int(lo), int(hi) + 1))
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse shifts {text!r}; use 'a..b' or a comma list") from None


def load_data(d: DataConfig, seq_len: int):
    """(train_xy, test_xy, vocabulary) for the configured dataset."""
    if d.dataset not in VOCABULARIES:
        raise ConfigError(f"unknown dataset {d.dataset!r}; choose from {sorted(VOCABULARIES)}")
    vocab = VOCABULARIES[d.dataset]
    if d.dataset == "synthetic":
        tr = synth_beats(d.synth_train_per_class, seq_len, d.seed, d.noise)
        te = synth_beats(d.synth_test_per_class, seq_len, d.seed + 1, d.noise)
        return to_arrays(tr), to_arrays(te), vocab
    if not d.train_csv:
        raise ConfigError(f"data.train_csv is required for dataset {d.dataset}")
    records = _read(d.train_csv, seq_len, len(vocab))
    if d.test_csv:
        test = _read(d.test_csv, seq_len, len(vocab))
    else:
        split = stratified_split(records, d.split_ratio, d.seed)
        records, test = split.train, split.test
    return to_arrays(records), to_arrays(test), vocab


def _read(path, seq_len, k):
    if not os.path.exists(path):
        raise ConfigError(f"data file not found: {path}")
    return load_csv(path, seq_len, k)


def _add_data_flags(p, from_checkpoint=False):
    g = p.add_argument_group("data", "defaults come from the checkpoint" if from_checkpoint else None)
    g.add_argument("--synthetic", action="store_true", help="use the synthetic two-class beat set")
    g.add_argument("--dataset", choices=sorted(VOCABULARIES),
                   help="dataset vocabulary" + ("" if from_checkpoint else f" (default: {_DD.dataset})"))
    g.add_argument("--train-csv", help="training CSV, L sample columns + label (default: none)")
    g.add_argument("--test-csv", help="test CSV; without it the training CSV is split (default: none)")
    g.add_argument("--data-seed", type=int, help=f"split / synthetic generator seed (default: {_DD.seed})")


def _add_common(p):
    p.add_argument("--config", help="key=value config file with [model]/[training]/[data]/[explain] sections")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config value; repeatable")


class _HelpFormatter(argparse.ArgumentDefaultsHelpFormatter):
    # flags left at None fall back to the config value already named in their help text
    def _get_help_string(self, action):
        if action.default is None:
            return action.help
        return super()._get_help_string(action)


def build_parser() -> argparse.ArgumentParser:
    fmt = _HelpFormatter
    parser = argparse.ArgumentParser(prog="mambacapsule", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model", formatter_class=fmt)
    _add_common(t)
    t.add_argument("--preset", default="default", choices=["default", "tiny", "micro"],
                   help="starting hyperparameters")
    _add_data_flags(t)
    t.add_argument("--epochs", type=int, help=f"(default: {_TD.epochs})")
    t.add_argument("--batch-size", type=int, help=f"(default: {_TD.batch_size})")
    t.add_argument("--lr", type=float, help=f"peak learning rate (default: {_TD.lr_peak})")
    t.add_argument("--seed", type=int, help=f"training seed (default: {_TD.seed})")
    t.add_argument("--workers", type=int, help=f"data-parallel gradient shards (default: {_TD.workers})")
    t.add_argument("--layers", type=int, help=f"Mamba layers (default: {_MD.n_layers})")
    t.add_argument("--out-dir", default="runs/latest", help="checkpoint, log and config snapshot go here")

    e = sub.add_parser("eval", help="score a checkpoint", formatter_class=fmt)
    e.add_argument("--checkpoint", required=True)
    _add_data_flags(e, from_checkpoint=True)
    e.add_argument("--split", default="test", choices=["train", "test"])
    e.add_argument("--out-dir", default=None, help="write confusion.csv and report.csv here (default: checkpoint dir)")

    x = sub.add_parser("explain", help="reconstruction-based explanations", formatter_class=fmt)
    x.add_argument("--checkpoint", required=True)
    _add_data_flags(x, from_checkpoint=True)
    x.add_argument("--mode", default="shift", choices=["shift", "crosslabel"])
    x.add_argument("--shifts", default=_ED.shifts,
                   help="shift range 'a..b' or comma list; pass as --shifts=-5..5")
    x.add_argument("--target", default=None, help="class name for crosslabel mode (default: every class)")
    x.add_argument("--beat-index", type=int, default=_ED.beat_index, help="beat from the test split")
    x.add_argument("--beat-file", default=None, help="CSV row with one beat (overrides --beat-index)")
    x.add_argument("--out-dir", default=None, help="artifact directory (default: checkpoint dir)")

    s = sub.add_parser("synth", help="write a synthetic beat CSV", formatter_class=fmt)
    s.add_argument("--out", required=True)
    s.add_argument("--n-per-class", type=int, default=_DD.synth_train_per_class)
    s.add_argument("--length", type=int, default=_MD.seq_len)
    s.add_argument("--seed", type=int, default=_DD.seed)
    s.add_argument("--noise", type=float, default=_DD.noise)
    return parser


def _apply_sets(cfg: RunConfig, items):
    for item in items:
        key, eq, value = item.partition("=")
        section, dot, name = key.partition(".")
        if not eq or not dot:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        set_value(cfg, section.strip(), name.strip(), value)


def _apply_data_flags(d: DataConfig, args):
    if args.synthetic:
        d.dataset = "synthetic"
    if args.dataset:
        d.dataset = args.dataset
    if args.train_csv:
        d.train_csv = args.train_csv
    if args.test_csv:
        d.test_csv = args.test_csv
    if args.data_seed is not None:
        d.seed = args.data_seed


def resolve_train_config(args) -> RunConfig:
    cfg = preset(args.preset)
    if args.config:
        if not os.path.exists(args.config):
            raise ConfigError(f"config file not found: {args.config}")
        apply_file(cfg, args.config)
    apply_env(cfg)
    _apply_sets(cfg, args.set)
    _apply_data_flags(cfg.data, args)
    t = cfg.training
    for flag, field in (("epochs", "epochs"), ("batch_size", "batch_size"), ("lr", "lr_peak"),
                        ("seed", "seed"), ("workers", "workers")):
        v = getattr(args, flag)
        if v is not None:
            setattr(t, field, v)
    if args.layers is not None:
        cfg.model.n_layers = args.layers
    return cfg


def cmd_train(args) -> int:
    cfg = resolve_train_config(args)
    train_xy, test_xy, vocab = load_data(cfg.data, cfg.model.seq_len)
    cfg.model.n_classes = len(vocab)
    cfg.validate()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(to_text(cfg), encoding="utf-8")
    model = MambaCapsule(cfg.model, cfg.training.seed)
    meta = {"vocab": list(vocab.names), "data": dataclasses.asdict(cfg.data)}
    with open(out / "train.log", "w", encoding="utf-8") as log:
        def emit(line):
            print(line, flush=True)
            log.write(line + "\n")
            log.flush()
        train(model, train_xy, test_xy, cfg.training, vocab.names, out_dir=str(out), log_fn=emit, meta=meta)
    print(f"checkpoint: {out / 'model.ckpt'}")
    return 0


def _load_for_inference(args):
    if not os.path.exists(args.checkpoint):
        raise ConfigError(f"checkpoint not found: {args.checkpoint}")
    model, meta = checkpoint.load(args.checkpoint)
    d = DataConfig(**meta.get("data", {}))
    if args.train_csv or args.test_csv:
        d.train_csv = d.test_csv = ""
    _apply_data_flags(d, args)
    if d.dataset == "synthetic" and (args.train_csv or args.test_csv):
        raise ConfigError("CSV input needs --dataset mitbih or --dataset ptb")
    train_xy, test_xy, vocab = load_data(d, model.cfg.seq_len)
    if len(vocab) != model.cfg.n_classes:
        raise ConfigError(f"checkpoint has {model.cfg.n_classes} classes but dataset {d.dataset!r} "
                          f"has {len(vocab)} ({', '.join(vocab.names)})")
    out_dir = Path(args.out_dir) if args.out_dir else Path(args.checkpoint).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    return model, train_xy, test_xy, vocab, out_dir


def cmd_eval(args) -> int:
    model, train_xy, test_xy, vocab, out_dir = _load_for_inference(args)
    x, y = test_xy if args.split == "test" else train_xy
    if len(x) == 0:
        raise ConfigError(f"the {args.split} split is empty")
    cm = evaluate(model, x, y, model.cfg.n_classes, vocab.names)
    report = per_class_metrics(cm)
    print(f"split: {args.split} ({cm.total} beats)")
    print(format_report(report))
    (out_dir / "confusion.csv").write_text(cm.to_csv(), encoding="utf-8")
    (out_dir / "report.csv").write_text(report_csv(report), encoding="utf-8")
    return 0


def _pick_beat(args, test_xy, seq_len):
    if args.beat_file:
        if not os.path.exists(args.beat_file):
            raise ConfigError(f"beat file not found: {args.beat_file}")
        with open(args.beat_file, encoding="utf-8") as fh:
            fields = [f for f in fh.readline().strip().split(",") if f]
        try:
            values = np.array(fields, dtype=np.float64)
        except ValueError:
            raise ParseError(f"{args.beat_file}: non-numeric field in row 1") from None
        if values.size not in (seq_len, seq_len + 1):
            raise ParseError(f"{args.beat_file}: expected {seq_len} or {seq_len + 1} fields at row 1")
        return values[:seq_len], f"file:{args.beat_file}"
    x, _ = test_xy
    if not 0 <= args.beat_index < len(x):
        raise ConfigError(f"--beat-index must lie in [0, {len(x)})")
    return x[args.beat_index], f"test[{args.beat_index}]"


def _write_meta(path: Path, items: dict):
    path.write_text("".join(f"{k}={v}\n" for k, v in items.items()), encoding="utf-8")


def cmd_explain(args) -> int:
    model, _, test_xy, vocab, out_dir = _load_for_inference(args)
    target = None
    if args.target is not None:
        try:
            target = vocab.index(args.target)
        except KeyError:
            raise ConfigError(f"unknown target class {args.target!r}; vocabulary: {', '.join(vocab.names)}") from None
    beat, source = _pick_beat(args, test_xy, model.cfg.seq_len)
    if args.mode == "shift":
        shifts = parse_shifts(args.shifts)
        res = disturbance_study(beat, model, shifts)
        traces = [(f"shift {k:+d}", r) for k, r in zip(res.shifts, res.reconstructions)]
        svg, csv = emit_plot(traces, out_dir / "explain_shift.svg")
        meta = {"beat": source, "reference_mse": repr(res.reference_mse)}
        meta.update({f"score[{k:+d}]": repr(s) for k, s in zip(res.shifts, res.scores)})
        _write_meta(out_dir / "explain_shift.txt", meta)
    else:
        targets = [target] if target is not None else list(range(len(vocab)))
        traces, meta = [], {"beat": source}
        window = center_window(beat, model.cfg.recon_len)
        traces.append(("input window", window))
        for k in targets:
            res = cross_label_reconstruct(beat, model, k)
            traces.append((f"as {vocab.names[k]}", res.trace))
            meta.update({"argmax": vocab.names[res.argmax], "argmax_norm": repr(res.argmax_norm),
                         f"norm[{vocab.names[k]}]": repr(res.target_norm),
                         f"rescaled_norm[{vocab.names[k]}]": repr(res.rescaled_norm)})
        svg, csv = emit_plot(traces, out_dir / "explain_crosslabel.svg")
        _write_meta(out_dir / "explain_crosslabel.txt", meta)
    print(f"wrote {svg} and {csv}")
    for k, v in meta.items():
        print(f"{k}={v}")
    return 0


def cmd_synth(args) -> int:
    if args.n_per_class < 1 or args.length < 8:
        raise ConfigError("--n-per-class must be >= 1 and --length >= 8")
    records = synth_beats(args.n_per_class, args.length, args.seed, args.noise)
    write_csv(records, args.out)
    print(f"wrote {len(records)} beats to {args.out}")
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "explain": cmd_explain, "synth": cmd_synth}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
