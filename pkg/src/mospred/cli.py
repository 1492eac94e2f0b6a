"""Command-line surface: prepare, make-synth, train, evaluate, predict, registry.

Exit codes: 0 success, 1 usage/config error, 2 data validation error,
3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .audio import load_and_resample
from .config import load_run_config
from .errors import ConfigError, ToolkitError, UsageError
from .knn import build_datastore, save_datastore
from .manifest import DatasetSpec, read_manifest
from .metrics import (
    evaluate,
    format_report_table,
    read_predictions_csv,
    summarize_reports,
    write_predictions_csv,
    write_report_json,
)
from .model import save_checkpoint
from .predictor import Predictor, build_predictor
from .prepare import prepare_manifests
from .registry import fetch_entry, load_registry, registry_load
from .synth import SynthSpec, make_synth
from .trainer import average_checkpoints, train


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; we use 1 for usage
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="mospred", description=__doc__)
    parser.add_argument("--version", action="version", version=f"mospred {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-synth", help="generate a synthetic rated corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--systems", type=int, default=8)
    p.add_argument("--utts-per-system", type=int, default=10)
    p.add_argument("--listeners", type=int, default=3)
    p.add_argument("--seed", type=int, default=1234)
    p.add_argument("--sample-rate", type=int, default=16000)
    p.add_argument("--listener-bias", type=float, default=0.2)
    p.add_argument("--rating-noise", type=float, default=0.1)
    p.add_argument("--dataset-name", default="synth")

    p = sub.add_parser("prepare", help="validate a raw corpus and write split manifests")
    p.add_argument("--config", default=None, help="run config; prepares every dataset with a raw_dir")
    p.add_argument("--data-dir", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--dataset-name", default=None)
    p.add_argument("--dev-frac", type=float, default=0.15)
    p.add_argument("--test-frac", type=float, default=0.15)
    p.add_argument("--score-min", type=float, default=1.0)
    p.add_argument("--score-max", type=float, default=5.0)

    p = sub.add_parser("train", help="train a predictor from a YAML run config")
    p.add_argument("--config", required=True)
    p.add_argument("--dry-run", action="store_true", help="validate config and data, then exit")
    p.add_argument(
        "--average-best",
        metavar="PATH",
        default=None,
        help="also write the parameter-wise average of the best checkpoints",
    )

    p = sub.add_parser("evaluate", help="evaluate a model or prediction CSVs on test sets")
    p.add_argument("--config", default=None,
                   help="run config; tests every dataset's test_manifest with out_dir/best.ckpt")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--registry", default=None, help="registry JSON (with --model)")
    p.add_argument("--model", default=None, help="NAME:TAG registry entry")
    p.add_argument(
        "--predictions",
        action="append",
        default=[],
        metavar="NAME=CSV",
        help="external prediction CSV for the test set NAME (repeatable)",
    )
    p.add_argument(
        "--test",
        action="append",
        default=[],
        metavar="NAME=MANIFEST",
        help="test-set manifest (repeatable)",
    )
    p.add_argument("--out", default=None)
    p.add_argument("--score-min", type=float, default=1.0)
    p.add_argument("--score-max", type=float, default=5.0)

    p = sub.add_parser("predict", help="score wav files with a trained predictor")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--registry", default=None)
    p.add_argument("--model", default=None)
    p.add_argument("--wav", default=None)
    p.add_argument("--manifest", default=None)
    p.add_argument("--out", default=None, help="prediction CSV path (manifest mode)")
    p.add_argument("--listener-id", default=None)
    p.add_argument("--dataset-id", default=None)

    p = sub.add_parser("registry", help="inspect or verify a checkpoint registry")
    reg_sub = p.add_subparsers(dest="registry_command", required=True)
    p_list = reg_sub.add_parser("list", help="list entries")
    p_list.add_argument("--file", required=True)
    p_verify = reg_sub.add_parser("verify", help="fetch entries and verify digests")
    p_verify.add_argument("--file", required=True)
    p_verify.add_argument("--name", default=None)
    p_verify.add_argument("--tag", default=None)

    return parser


def _parse_named(values: list[str], flag: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for value in values:
        if "=" not in value:
            raise UsageError(f"{flag} expects NAME=PATH, got {value!r}")
        name, path = value.split("=", 1)
        if name in out:
            raise UsageError(f"duplicate {flag} name {name!r}")
        out[name] = path
    return out


def _load_predictor(args) -> Predictor:
    if args.checkpoint and (args.registry or args.model):
        raise UsageError("give either --checkpoint or --registry/--model, not both")
    if args.checkpoint:
        return Predictor.from_checkpoint(args.checkpoint)
    if args.registry or args.model:
        if not (args.registry and args.model):
            raise UsageError("--registry and --model must be given together")
        if ":" not in args.model:
            raise UsageError(f"--model expects NAME:TAG, got {args.model!r}")
        name, tag = args.model.split(":", 1)
        return registry_load(args.registry, name, tag)
    raise UsageError("a model is required: --checkpoint or --registry/--model")


# commands ------------------------------------------------------------------


def cmd_make_synth(args) -> int:
    spec = SynthSpec(
        n_systems=args.systems,
        utts_per_system=args.utts_per_system,
        n_listeners=args.listeners,
        seed=args.seed,
        sample_rate=args.sample_rate,
        listener_bias=args.listener_bias,
        rating_noise=args.rating_noise,
        dataset_name=args.dataset_name,
    )
    rows = make_synth(spec, args.out)
    print(
        f"wrote {spec.n_systems * spec.utts_per_system} wav files and "
        f"{len(rows)} ratings under {args.out}"
    )
    return 0


def cmd_prepare(args) -> int:
    if args.config:
        if args.data_dir or args.out:
            raise UsageError("--config replaces --data-dir/--out")
        cfg = load_run_config(args.config)
        prepared = 0
        for spec in cfg.datasets:
            if not spec.raw_dir:
                continue
            for attr in ("train_manifest", "dev_manifest", "test_manifest"):
                if not getattr(spec, attr):
                    raise ConfigError(f"dataset {spec.name!r}: raw_dir set but {attr} missing")
            paths = prepare_manifests(
                spec.raw_dir,
                spec=spec,
                dev_frac=args.dev_frac,
                test_frac=args.test_frac,
                out_paths={
                    "train": Path(spec.train_manifest),
                    "dev": Path(spec.dev_manifest),
                    "test": Path(spec.test_manifest),
                },
            )
            prepared += 1
            for split, path in paths.items():
                print(f"{spec.name}/{split}: {path}")
        if prepared == 0:
            raise ConfigError("no dataset in the config declares a raw_dir to prepare")
        return 0
    if not args.data_dir or not args.out:
        raise UsageError("give --config, or both --data-dir and --out")
    data_dir = Path(args.data_dir)
    spec = DatasetSpec(
        name=args.dataset_name or data_dir.name or "dataset",
        score_min=args.score_min,
        score_max=args.score_max,
    )
    paths = prepare_manifests(
        data_dir, args.out, spec=spec, dev_frac=args.dev_frac, test_frac=args.test_frac
    )
    for split, path in paths.items():
        print(f"{split}: {path}")
    return 0


def _read_split(spec: DatasetSpec, attr: str):
    path = getattr(spec, attr)
    if not path:
        raise ConfigError(f"dataset {spec.name!r} is missing {attr}")
    return read_manifest(path, spec)


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    train_rows, dev_rows = [], []
    for spec in cfg.datasets:
        train_rows.extend(_read_split(spec, "train_manifest"))
        dev_rows.extend(_read_split(spec, "dev_manifest"))
    listener_ids = sorted({r.listener_id for r in train_rows if r.listener_id})
    dataset_ids = [d.name for d in cfg.datasets]
    if args.dry_run:
        print(
            f"config ok: {len(train_rows)} train rows, {len(dev_rows)} dev rows, "
            f"{len(listener_ids)} listeners, {len(dataset_ids)} dataset(s)"
        )
        return 0
    predictor = build_predictor(
        cfg.encoder,
        cfg.head,
        fusion=cfg.fusion,
        listener_ids=listener_ids,
        dataset_ids=dataset_ids,
        run_name=cfg.name,
    )
    out_dir = Path(cfg.out_dir)
    state = train(
        predictor.encoder,
        predictor.head,
        train_rows,
        dev_rows,
        cfg.train,
        cfg.loss,
        out_dir,
        fusion_cfg=cfg.fusion,
        run_name=cfg.name,
    )
    best_path = out_dir / "best.ckpt"
    if cfg.fusion.enabled:
        best = Predictor.from_checkpoint(best_path)
        store = build_datastore(best.encoder, train_rows)
        save_datastore(store, best_path)
        print(f"datastore: {len(store)} entries saved next to {best_path}")
    if args.average_best:
        sources = [e.ref for e in state.best_list] or [str(best_path)]
        config, params = average_checkpoints(sources)
        save_checkpoint(args.average_best, config, params)
        print(f"averaged {len(sources)} checkpoint(s) -> {args.average_best}")
    print(f"finished at step {state.step}; best checkpoint: {best_path}")
    return 0


def cmd_evaluate(args) -> int:
    tests = _parse_named(args.test, "--test")
    specs: dict[str, DatasetSpec] = {}
    if args.config:
        cfg = load_run_config(args.config)
        for spec in cfg.datasets:
            if not spec.test_manifest:
                raise ConfigError(f"dataset {spec.name!r} has no test_manifest")
            if spec.name in tests:
                raise UsageError(f"--test name {spec.name!r} duplicates a config dataset")
            tests[spec.name] = spec.test_manifest
            specs[spec.name] = spec
        if args.checkpoint is None and not (args.registry or args.model or args.predictions):
            args.checkpoint = str(Path(cfg.out_dir) / "best.ckpt")
        if args.out is None:
            args.out = str(Path(cfg.out_dir) / "eval")
    if not tests:
        raise UsageError("no test sets: give --test NAME=MANIFEST or --config")
    if args.out is None:
        raise UsageError("--out is required without --config")
    external = _parse_named(args.predictions, "--predictions")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    predictor = None
    if not external:
        predictor = _load_predictor(args)
    elif args.checkpoint or args.registry or args.model:
        raise UsageError("--predictions mode does not take a model")
    if external and set(external) != set(tests):
        raise UsageError(
            f"--predictions names {sorted(external)} must match --test names {sorted(tests)}"
        )
    reports = []
    for name, manifest_path in tests.items():
        spec = specs.get(name) or DatasetSpec(
            name=name, score_min=args.score_min, score_max=args.score_max
        )
        rows = read_manifest(manifest_path, spec)
        if external:
            predictions = read_predictions_csv(external[name])
        else:
            predictions = predictor.predict_rows(rows)
        report = evaluate(
            predictions, rows, test_set=name, out_csv=out_dir / f"{name}.predictions.csv"
        )
        write_report_json(report, out_dir / f"{name}.report.json")
        reports.append(report)
    summary = summarize_reports(reports)
    (out_dir / "summary.json").write_text(
        json.dumps(summary, indent=1, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(format_report_table(reports, summary if len(reports) > 1 else None))
    return 0


def cmd_predict(args) -> int:
    predictor = _load_predictor(args)
    if bool(args.wav) == bool(args.manifest):
        raise UsageError("give exactly one of --wav or --manifest")
    if args.wav:
        if not predictor.encoder.requires_waveform:
            raise UsageError(
                "this predictor uses precomputed features; use --manifest so sample "
                "ids are available"
            )
        wave = load_and_resample(args.wav, predictor.encoder.expected_rate)
        score = predictor.predict_wave(
            wave, listener_id=args.listener_id, dataset_id=args.dataset_id
        ).utterance_score
        print(score)
        return 0
    spec = DatasetSpec(name="predict", score_min=-np.inf, score_max=np.inf)
    rows = read_manifest(args.manifest, spec)
    predictions = predictor.predict_rows(rows)
    if args.out:
        write_predictions_csv(predictions, args.out)
        print(f"wrote {len(predictions)} predictions to {args.out}")
    else:
        for sid, score in predictions.items():
            print(f"{sid},{score!r}")
    return 0


def cmd_registry(args) -> int:
    entries = load_registry(args.file)
    if args.registry_command == "list":
        for e in entries:
            print(f"{e.name}:{e.tag}\t{e.location}\t{e.sha256[:12]}")
        return 0
    selected = [
        e
        for e in entries
        if (args.name is None or e.name == args.name) and (args.tag is None or e.tag == args.tag)
    ]
    if not selected:
        raise UsageError("no matching registry entries to verify")
    registry_dir = Path(args.file).parent
    for e in selected:
        local = fetch_entry(e, registry_dir)
        print(f"{e.name}:{e.tag}\tok\t{local}")
    return 0


_COMMANDS = {
    "make-synth": cmd_make_synth,
    "prepare": cmd_prepare,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "registry": cmd_registry,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except ToolkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


def entry_point() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry_point()
