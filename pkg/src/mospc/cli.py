"""Command-line front end: ``mospc synth | train | eval``.

Checkpoint directory layout written by ``train``::

    OUT/pairwise/predictor_<k>.json   OUT/pairwise/predictor_<k>.log.csv
    OUT/cmixup/predictor_<k>.json     OUT/cmixup/predictor_<k>.log.csv
    OUT/fusion/fusion.json            OUT/fusion/fusion.log.csv
    OUT/manifest.<stage>.json

Set ``MOSPC_LOG_LEVEL`` (e.g. ``INFO``) to see per-epoch lines on stderr.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

from mospc import __version__
from mospc._io import atomic_write_text, dumps_json, read_json, write_json
from mospc.data import DatasetError, SynthConfig, dumps_dataset, generate_synthetic, infer_feature_dim, load_dataset, split
from mospc.metrics import (
    category_error_report,
    evaluate,
    segment_ranking_accuracy,
)
from mospc.model import (
    ModelConfig,
    ensemble_predict,
    load_fusion,
    load_predictor,
    save_fusion,
    save_predictor,
)
from mospc.trainer import (
    TrainConfig,
    TrainingError,
    cmixup_stage,
    fusion_stage,
    init_predictors,
    pairwise_stage,
)

PROG = "mospc"
STAGES = ("pairwise", "cmixup", "fusion", "all")

log = logging.getLogger(PROG)


class CliError(Exception):
    pass


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _rel(path: Path, base: Path) -> str:
    return os.path.relpath(path, base).replace(os.sep, "/")


def _manifest(command: str, config: dict, seeds: dict, inputs: dict, artifacts: list[Path], base: Path, extra=None) -> dict:
    m = {
        "tool": PROG,
        "version": __version__,
        "command": command,
        "config": config,
        "seeds": seeds,
        "inputs": inputs,
        "artifacts": [{"path": _rel(p, base), "sha256": _sha256(p)} for p in artifacts],
    }
    if extra:
        m.update(extra)
    return m


def _load_json_config(path) -> dict:
    try:
        cfg = read_json(path)
    except FileNotFoundError:
        raise CliError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise CliError(f"{path}: config must be a JSON object")
    return cfg


def _load_data(path, name=None):
    return load_dataset(path, infer_feature_dim(path), name)


# -- synth --------------------------------------------------------------------


def synth_config_from_dict(d: dict) -> SynthConfig:
    unknown = set(d) - {f.name for f in dataclasses.fields(SynthConfig)}
    if unknown:
        raise CliError(f"unknown synth config keys: {sorted(unknown)}")
    try:
        return SynthConfig(**d)
    except (TypeError, ValueError) as exc:
        raise CliError(f"bad synth config: {exc}") from None


def cmd_synth(args) -> int:
    cfg = synth_config_from_dict(_load_json_config(args.config))
    out = Path(args.out)
    ds = generate_synthetic(cfg)
    atomic_write_text(out, dumps_dataset(ds))
    written = [out]
    inputs = {"config": str(args.config)}
    if args.split:
        fractions = tuple(float(v) for v in args.split.split(","))
        try:
            parts = split(ds, fractions, seed=args.split_seed)
        except ValueError as exc:
            raise CliError(str(exc)) from None
        for part, tag in zip(parts, ("train", "valid", "test")):
            path = out.with_name(f"{out.stem}.{tag}{out.suffix}")
            atomic_write_text(path, dumps_dataset(part))
            written.append(path)
    manifest_path = out.with_name(f"{out.stem}.manifest.json")
    write_json(
        manifest_path,
        _manifest(
            "synth", dataclasses.asdict(cfg), {"seed": cfg.seed, "feature_seed": cfg.feature_seed,
                                               "split_seed": args.split_seed if args.split else None},
            inputs, written, manifest_path.parent, {"split": args.split},
        ),
    )
    print(f"wrote {len(ds)} samples to {out}")
    return 0


# -- train --------------------------------------------------------------------


def _parse_train_config(d: dict) -> tuple[TrainConfig, ModelConfig]:
    d = dict(d)
    model = d.pop("model", None) or {}
    try:
        return TrainConfig.from_dict(d), ModelConfig(**model)
    except (TypeError, ValueError) as exc:
        raise CliError(f"bad training config: {exc}") from None


def _ckpt(out: Path, stage: str, k: int) -> Path:
    return out / stage / f"predictor_{k}.json"


def _require_checkpoints(out: Path, stage: str, n: int, needed_by: str):
    paths = [_ckpt(out, stage, k) for k in range(n)]
    missing = [p for p in paths if not p.is_file()]
    if missing:
        raise CliError(
            f"stage {needed_by!r} needs {stage} checkpoints; missing {missing[0]} "
            f"(run --stage {stage} first)"
        )
    return [load_predictor(p) for p in paths]


def _write_stage(out: Path, stage: str, predictors, logs) -> list[Path]:
    written = []
    for k, (p, trace) in enumerate(zip(predictors, logs)):
        ck = _ckpt(out, stage, k)
        save_predictor(p, ck)
        lg = ck.with_name(f"predictor_{k}.log.csv")
        atomic_write_text(lg, trace.to_csv())
        written += [ck, lg]
    return written


def cmd_train(args) -> int:
    if args.from_manifest:
        m = _load_json_config(args.from_manifest)
        raw_cfg = m["config"]
        train_path, valid_path = m["inputs"]["train"], m["inputs"]["valid"]
        stage, k = m["stage"], m["predictors"]
    else:
        if not (args.config and args.train and args.valid):
            raise CliError("train needs --config, --train and --valid (or --from-manifest)")
        raw_cfg = _load_json_config(args.config)
        train_path, valid_path = args.train, args.valid
        stage, k = args.stage, args.predictors
    if stage not in STAGES:
        raise CliError(f"unknown stage {stage!r}")
    if k < 1:
        raise CliError("--predictors must be >= 1")
    cfg, model_cfg = _parse_train_config(raw_cfg)
    out = Path(args.out)
    train = _load_data(train_path, "train")
    valid = _load_data(valid_path, "valid")
    if train.feature_dim != valid.feature_dim:
        raise CliError("train and valid datasets have different feature dimensions")

    run = {"pairwise", "cmixup", "fusion"} if stage == "all" else {stage}
    if stage == "all" and cfg.cmixup is None:
        run.discard("cmixup")
    if "cmixup" in run and cfg.cmixup is None:
        raise CliError("stage 'cmixup' requires a 'cmixup' section in the training config")

    written: list[Path] = []
    predictors = None
    if "pairwise" in run:
        init = init_predictors(train.feature_dim, k, cfg.seed, model_cfg)
        predictors, logs = pairwise_stage(init, train, valid, cfg)
        written += _write_stage(out, "pairwise", predictors, logs)
    if "cmixup" in run:
        if predictors is None:
            predictors = _require_checkpoints(out, "pairwise", k, "cmixup")
        predictors, logs = cmixup_stage(predictors, train, valid, cfg)
        written += _write_stage(out, "cmixup", predictors, logs)
    if "fusion" in run:
        source = "cmixup" if cfg.cmixup is not None else "pairwise"
        if predictors is None:
            predictors = _require_checkpoints(out, source, k, "fusion")
        fusion, trace = fusion_stage(predictors, train, valid, cfg)
        fpath = out / "fusion" / "fusion.json"
        save_fusion(fusion, fpath, [_rel(_ckpt(out, source, i), fpath.parent) for i in range(k)])
        lg = fpath.with_name("fusion.log.csv")
        atomic_write_text(lg, trace.to_csv())
        written += [fpath, lg]

    manifest_path = out / f"manifest.{stage}.json"
    write_json(
        manifest_path,
        _manifest(
            "train", raw_cfg, {"seed": cfg.seed}, {"train": str(train_path), "valid": str(valid_path)},
            written, out, {"stage": stage, "predictors": k},
        ),
    )
    print(f"trained stage(s) {', '.join(s for s in ('pairwise', 'cmixup', 'fusion') if s in run)}; "
          f"wrote {len(written)} files to {out}")
    return 0


# -- eval ---------------------------------------------------------------------


def _read_categories(path) -> dict[str, str]:
    try:
        fh = open(path, newline="", encoding="utf-8")
    except FileNotFoundError:
        raise CliError(f"categories file not found: {path}") from None
    with fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["id", "category"]:
        raise CliError(f"{path}: header must be 'id,category'")
    cats = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 2:
            raise CliError(f"{path}: row {lineno}: expected 2 columns, got {len(row)}")
        cats[row[0].strip()] = row[1].strip()
    return cats


def load_ensemble(checkpoint):
    path = Path(checkpoint)
    if path.is_dir():
        path = path / "fusion" / "fusion.json"
    if not path.is_file():
        raise CliError(f"fusion checkpoint not found: {path}")
    fusion, pred_paths = load_fusion(path)
    for p in pred_paths:
        if not p.is_file():
            raise CliError(f"predictor checkpoint not found: {p}")
    return fusion, [load_predictor(p) for p in pred_paths]


def cmd_eval(args) -> int:
    fusion, predictors = load_ensemble(args.checkpoint)
    ds = _load_data(args.data)
    if predictors[0].input_dim != ds.feature_dim:
        raise CliError(
            f"dimension mismatch: checkpoint expects {predictors[0].input_dim} features, "
            f"{args.data} has {ds.feature_dim}"
        )
    pred = ensemble_predict(fusion, predictors, ds.features)
    truth = ds.mos
    if args.out:
        out = Path(args.out)
    else:
        base = Path(args.checkpoint)
        if not base.is_dir():
            # OUT/fusion/fusion.json -> OUT
            base = base.parent.parent if base.parent.name == "fusion" else base.parent
        out = base / f"eval_{Path(args.data).stem}"

    report = evaluate(ds.system_ids, pred, truth)
    machine = {"eval": report.to_dict()}
    tables = [report.to_table()]
    files = {"report.json": None, "report.csv": report.to_csv()}
    if args.segments:
        seg = segment_ranking_accuracy(zip(pred.tolist(), truth.tolist()))
        machine["segments"] = seg.to_dict()["segments"]
        tables.append(seg.to_table())
        files["segments.csv"] = seg.to_csv()
    if args.categories:
        cats = _read_categories(args.categories)
        index = {sid: i for i, sid in enumerate(ds.ids)}
        unknown = [c for c in cats if c not in index]
        if unknown:
            raise CliError(f"{args.categories}: unknown sample id {unknown[0]!r}")
        rows = [(cat, float(pred[index[sid]]), float(truth[index[sid]])) for sid, cat in cats.items()]
        if not rows:
            raise CliError(f"{args.categories}: no category rows")
        crep = category_error_report(rows)
        machine["categories"] = crep.to_dict()["categories"]
        tables.append(crep.to_table())
        files["categories.csv"] = crep.to_csv()
    files["report.json"] = dumps_json(machine)
    for name, text in files.items():
        atomic_write_text(out / name, text)

    if args.json:
        sys.stdout.write(files["report.json"])
    else:
        print("\n\n".join(tables))
    return 0


# -- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=PROG, description="Pairwise-comparison MOS predictor toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic MOS dataset")
    p.add_argument("--config", required=True, help="JSON file with SynthConfig fields")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--split", help="also write train/valid/test files, e.g. 0.7,0.15,0.15")
    p.add_argument("--split-seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="run training stage(s)")
    p.add_argument("--config", help="JSON file with TrainConfig fields and an optional 'model' section")
    p.add_argument("--train", help="training dataset CSV")
    p.add_argument("--valid", help="validation dataset CSV")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--stage", choices=STAGES, default="all")
    p.add_argument("--predictors", type=int, default=7, help="number of fused predictors K")
    p.add_argument("--from-manifest", help="rerun with config, inputs, stage and K taken from a train manifest")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained ensemble")
    p.add_argument("--checkpoint", required=True, help="checkpoint directory (or fusion.json)")
    p.add_argument("--data", required=True, help="dataset CSV")
    p.add_argument("--segments", action="store_true", help="add segment ranking accuracy")
    p.add_argument("--categories", help="CSV 'id,category' for per-category squared errors")
    p.add_argument("--out", help="report directory (default CHECKPOINT/eval_<data stem>)")
    p.add_argument("--json", action="store_true", help="print the machine-readable report instead of tables")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("MOSPC_LOG_LEVEL", "WARNING").upper(),
        format="%(name)s: %(message)s",
        stream=sys.stderr,
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, DatasetError, TrainingError, ValueError, KeyError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"{PROG}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
