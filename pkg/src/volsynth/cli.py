"""``volsynth`` command-line entry point.

Exit codes: 0 success, 2 configuration or input error, 3 numerical abort
(training diverged), 4 incompatible checkpoint.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import re
import sys
import time
from dataclasses import asdict, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .augment import AugmentSpec, apply_degrade, augment_with_transforms
from .errors import (
    ConfigurationError,
    FormatError,
    IncompatibleCheckpointError,
    TrainingDivergedError,
    VolsynthError,
)
from .metrics import (
    DEFAULT_CLASSES,
    aggregate,
    condition_label,
    csv_header,
    downsampled_condition,
    evaluate_pair,
    write_reports_csv,
)
from .volgrid import PairedSample, make_phantom_pair, read_volume, write_volume

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_INCOMPATIBLE = 0, 2, 3, 4
WORKERS_ENV = "VOLSYNTH_WORKERS"


# run config --------------------------------------------------------------------

def _train_fields() -> Dict[str, object]:
    from .trainer import TrainConfig

    return {f.name: None for f in fields(TrainConfig) if f.name != "augmentation"}


def _augment_fields() -> Dict[str, object]:
    return {f.name: None for f in fields(AugmentSpec)}


def config_schema() -> dict:
    """Allowed keys; a nested dict marks a section, None a leaf."""
    train = _train_fields()
    train["use_augmentation"] = None
    train["loss_weights"] = {"w_mae": None, "w_perceptual": None, "w_adv": None}
    return {
        "schema_version": None,
        "output_dir": None,
        "dataset": {"dir": None},
        "train": train,
        "augment": _augment_fields(),
        "metrics": {"num_classes": None, "ssim_mode": None, "downsample_factors": None},
        "crossval": {"plan": None, "seed": None, "strata": None},
    }


def check_keys(doc: dict, schema: dict, path: str = "") -> None:
    if not isinstance(doc, dict):
        raise ConfigurationError(f"{path or 'config'}: expected an object")
    for key, value in doc.items():
        where = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigurationError(f"unknown config key {where!r}")
        sub = schema[key]
        if isinstance(sub, dict) and value is not None:
            check_keys(value, sub, where)


def default_config(variant: str = "vnet") -> dict:
    from .trainer import desk_config

    train = desk_config(variant).to_dict()
    train.pop("augmentation")
    train["use_augmentation"] = False
    return {
        "schema_version": SCHEMA_VERSION,
        "output_dir": "volsynth_out",
        "dataset": {"dir": "data"},
        "train": train,
        "augment": asdict(AugmentSpec()),
        "metrics": {"num_classes": DEFAULT_CLASSES, "ssim_mode": "3d", "downsample_factors": []},
        "crossval": {"plan": "loo", "seed": 0, "strata": None},
    }


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("model", "critic", "perceptual", "strata"):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve_config(doc: dict) -> dict:
    """Validate keys and fill defaults; model defaults follow the requested variant."""
    check_keys(doc, config_schema())
    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigurationError(f"schema_version {version!r} is not supported (expected {SCHEMA_VERSION})")
    variant = (doc.get("train") or {}).get("variant", "vnet")
    base = default_config(variant)
    resolved = _merge(base, doc)
    # materialize so every value is checked now rather than mid-run
    resolved["train"] = build_train_config(resolved).to_dict() | {"use_augmentation": resolved["train"]["use_augmentation"]}
    resolved["train"].pop("augmentation")
    resolved["augment"] = asdict(build_augment_spec(resolved))
    m = resolved["metrics"]
    if m["ssim_mode"] not in ("3d", "2d"):
        raise ConfigurationError("metrics.ssim_mode must be '3d' or '2d'")
    if not isinstance(m["num_classes"], int) or m["num_classes"] < 2:
        raise ConfigurationError("metrics.num_classes must be an integer >= 2")
    if any(not isinstance(s, (int, float)) or s < 1 for s in m["downsample_factors"]):
        raise ConfigurationError("metrics.downsample_factors must be numbers >= 1")
    return resolved


def build_augment_spec(resolved: dict) -> AugmentSpec:
    a = dict(resolved["augment"])
    if a.get("elastic") is not None:
        a["elastic"] = tuple(a["elastic"])
    try:
        return AugmentSpec(**a)
    except TypeError as exc:
        raise ConfigurationError(f"augment: {exc}") from None


def build_train_config(resolved: dict):
    from .trainer import TrainConfig

    t = dict(resolved["train"])
    use_aug = t.pop("use_augmentation", False)
    if not isinstance(use_aug, bool):
        raise ConfigurationError("train.use_augmentation must be true or false")
    t["augmentation"] = build_augment_spec(resolved) if use_aug else None
    try:
        cfg = TrainConfig(**t)
        cfg.generator_config()
    except TypeError as exc:
        raise ConfigurationError(f"train: {exc}") from None
    return cfg


def load_run_config(path, overrides: Optional[dict] = None) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigurationError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigurationError("config root must be a JSON object")
    for dotted, value in (overrides or {}).items():
        node = doc
        *parents, leaf = dotted.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    return resolve_config(doc)


# files, checksums, manifests -------------------------------------------------------

def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _json_safe(obj):
    # strict JSON has no inf/nan; spell them as strings
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def _dump_json(obj, path) -> None:
    text = json.dumps(_json_safe(obj), indent=2, sort_keys=True, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def write_manifest(out_dir: Path, command: str, outputs: Sequence[Path], inputs: Sequence[Path] = (),
                   config: Optional[dict] = None, seed: Optional[int] = None, extra: Optional[dict] = None,
                   name: str = "manifest.json") -> Path:
    manifest = {
        "command": command,
        "artifact_version": __version__,
        "seed": seed,
        "config": config,
        "inputs": {str(p): sha256(p) for p in inputs},
        "outputs": {os.path.relpath(p, out_dir): sha256(p) for p in outputs},
    }
    if extra:
        manifest.update(extra)
    path = out_dir / name
    _dump_json(manifest, path)
    return path


def _write_timing(out_dir: Path, command: str, seconds: float) -> None:
    # kept out of the manifest so reruns stay checksum-identical
    _dump_json({"command": command, "wall_clock_seconds": seconds}, out_dir / "timing.json")


_ROLE = re.compile(r"^(?P<id>.+?)(?:_(?P<role>low|high|pred))?$")


def _split_name(path: Path) -> Tuple[str, Optional[str]]:
    name = path.name
    for ext in (".nii.gz", ".nii"):
        if name.endswith(ext):
            name = name[: -len(ext)]
            break
    m = _ROLE.match(name)
    return m.group("id"), m.group("role")


def _nifti_files(d: Path) -> List[Path]:
    if not d.is_dir():
        raise ConfigurationError(f"{d} is not a directory")
    return sorted(p for p in d.iterdir() if p.name.endswith((".nii", ".nii.gz")))


def load_dataset(d) -> List[PairedSample]:
    """Pairs ``<id>_low.nii`` / ``<id>_high.nii`` sorted by subject id."""
    d = Path(d)
    found: Dict[str, Dict[str, Path]] = {}
    for p in _nifti_files(d):
        sid, role = _split_name(p)
        if role in ("low", "high"):
            found.setdefault(sid, {})[role] = p
    incomplete = sorted(s for s, r in found.items() if len(r) != 2)
    if incomplete:
        raise ConfigurationError(f"subjects missing a low or high volume in {d}: {incomplete}")
    if not found:
        raise ConfigurationError(f"no <id>_low/<id>_high NIfTI pairs in {d}")
    return [PairedSample(read_volume(found[s]["low"]), read_volume(found[s]["high"]), s) for s in sorted(found)]


def _dataset_inputs(d) -> List[Path]:
    return [p for p in _nifti_files(Path(d)) if _split_name(p)[1] in ("low", "high")]


def _write_pair(pair: PairedSample, out: Path) -> List[Path]:
    paths = [out / f"{pair.subject_id}_low.nii", out / f"{pair.subject_id}_high.nii"]
    write_volume(pair.low_field, paths[0])
    write_volume(pair.high_field, paths[1])
    return paths


def _mkdir(d) -> Path:
    d = Path(d)
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigurationError(f"cannot create output directory {d}: {exc}") from None
    if not os.access(d, os.W_OK):
        raise ConfigurationError(f"output directory {d} is not writable")
    return d


# montage --------------------------------------------------------------------------

def centre_slices(a: np.ndarray) -> List[np.ndarray]:
    """Axial, coronal and sagittal centre slices (last, second and first axis held fixed)."""
    x, y, z = (n // 2 for n in a.shape)
    return [a[:, :, z], a[:, y, :], a[x, :, :]]


def montage(pred: np.ndarray, ref: np.ndarray, window=(0.0, 1.0), gap: int = 2) -> np.ndarray:
    """uint8 image: prediction row above reference row, three orthogonal centre slices each."""
    rows = []
    for vol in (pred, ref):
        tiles = [np.rot90(s) for s in centre_slices(vol)]
        h = max(t.shape[0] for t in tiles)
        padded = [np.pad(t, [(0, h - t.shape[0]), (0, gap)]) for t in tiles]
        rows.append(np.concatenate(padded, axis=1))
    w = max(r.shape[1] for r in rows)
    rows = [np.pad(r, [(0, gap), (0, w - r.shape[1])]) for r in rows]
    img = np.concatenate(rows, axis=0)
    lo, hi = window
    return np.round(np.clip((img - lo) / (hi - lo), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_pgm(img: np.ndarray, path) -> None:
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(img, dtype=np.uint8).tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise FormatError(f"{path} is not a binary PGM")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)


# commands ---------------------------------------------------------------------------

def cmd_phantom(args) -> int:
    out = _mkdir(args.out)
    shape = tuple(args.shape) if len(args.shape) == 3 else (args.shape[0],) * 3
    written, subjects = [], []
    for i in range(args.count):
        pair = make_phantom_pair(args.seed + i, shape, args.lesions)
        subjects.append(pair.subject_id)
        written.extend(_write_pair(pair, out))
    manifest = {
        "kind": "phantom_dataset",
        "artifact_version": __version__,
        "count": args.count,
        "shape": list(shape),
        "seed": args.seed,
        "lesion_count": args.lesions,
        "subjects": subjects,
        "files": {p.name: sha256(p) for p in written},
    }
    _dump_json(manifest, out / "dataset_manifest.json")
    print(f"wrote {len(written)} volumes for {args.count} subjects to {out}")
    return EXIT_OK


def _prepare(args) -> Tuple[dict, Path]:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["train.seed"] = args.seed
        overrides["augment.seed"] = args.seed
    if getattr(args, "data", None) is not None:
        overrides["dataset.dir"] = args.data
    if getattr(args, "out", None) is not None:
        overrides["output_dir"] = args.out
    resolved = load_run_config(args.config, overrides)
    out = _mkdir(resolved["output_dir"])
    _dump_json(resolved, out / "resolved_config.json")
    return resolved, out


def cmd_augment(args) -> int:
    resolved, out = _prepare(args)
    spec = build_augment_spec(resolved)
    pairs = load_dataset(resolved["dataset"]["dir"])
    data_out = _mkdir(out / "augmented")
    records, written = [], []
    for pair, t in augment_with_transforms(pairs, spec):
        written.extend(_write_pair(pair, data_out))
        records.append({"subject_id": pair.subject_id, "transform": None if t is None else t.to_dict()})
    pairs_manifest = data_out / "augment_manifest.json"
    _dump_json({"augment": asdict(spec), "pairs": records}, pairs_manifest)
    write_manifest(out, "augment", [out / "resolved_config.json", pairs_manifest, *written],
                   _dataset_inputs(resolved["dataset"]["dir"]), resolved, spec.seed)
    print(f"{len(pairs)} pairs -> {len(records)} pairs in {data_out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .trainer import save_checkpoint, train

    resolved, out = _prepare(args)
    cfg = build_train_config(resolved)
    pairs = load_dataset(resolved["dataset"]["dir"])
    if cfg.augmentation is not None:
        from .augment import augment_dataset

        pairs = augment_dataset(pairs, cfg.augmentation)
    t0 = time.time()
    weights, log = train(cfg, pairs)
    elapsed = time.time() - t0
    outputs = [out / "resolved_config.json", out / "model.ckpt", out / "training_log.csv"]
    save_checkpoint(weights, outputs[1])
    log.write_csv(outputs[2])
    if log.critic_weights is not None:
        outputs.append(out / "critic.ckpt")
        save_checkpoint(log.critic_weights, outputs[-1])
    write_manifest(out, "train", outputs, _dataset_inputs(resolved["dataset"]["dir"]), resolved, cfg.seed,
                   {"steps": len(log.rows)})
    _write_timing(out, "train", elapsed)
    final = log.epoch_means("mae")[-1]
    print(f"trained {cfg.variant} for {cfg.epochs} epochs ({len(log.rows)} steps); last-epoch MAE {final:.4f}")
    return EXIT_OK


def cmd_crossval(args) -> int:
    from .trainer import cross_validate, make_fold_plan, parse_plan_spec

    resolved, out = _prepare(args)
    if args.plan is not None:
        resolved["crossval"]["plan"] = args.plan
        _dump_json(resolved, out / "resolved_config.json")
    cfg = build_train_config(resolved)
    pairs = load_dataset(resolved["dataset"]["dir"])
    cv = resolved["crossval"]
    kind, k = parse_plan_spec(cv["plan"])
    plan = make_fold_plan([p.subject_id for p in pairs], kind, k, cv["seed"], cv["strata"])
    t0 = time.time()
    logs = []

    def on_fold(i, weights, log):
        path = out / f"fold{i:02d}_training_log.csv"
        log.write_csv(path)
        logs.append(path)
        print(f"fold {i + 1}/{len(plan)} done")

    reports = cross_validate(plan, cfg, pairs, resolved["metrics"]["downsample_factors"], on_fold)
    csv_path = out / "cv_report.csv"
    write_reports_csv(reports, csv_path)
    summary_path = out / "cv_summary.json"
    summary = {
        "plan": {"kind": plan.kind, "k": plan.k, "folds": [{"train": list(a), "held_out": list(b)} for a, b in plan.assignments]},
        "aggregate": {c: {m: {"mean": mu, "std": sd} for m, (mu, sd) in stats.items()}
                      for c, stats in aggregate(reports).items()},
        "labels": {c: condition_label(c) for c in dict.fromkeys(r.condition for r in reports)},
    }
    _dump_json(summary, summary_path)
    write_manifest(out, "crossval", [out / "resolved_config.json", csv_path, summary_path, *logs],
                   _dataset_inputs(resolved["dataset"]["dir"]), resolved, cfg.seed)
    _write_timing(out, "crossval", time.time() - t0)
    print(f"{len(plan)} folds, {len(reports)} reports -> {csv_path}")
    return EXIT_OK


def cmd_infer(args) -> int:
    from .trainer import infer_volume, load_checkpoint

    weights = load_checkpoint(args.checkpoint, args.variant)
    src = Path(args.input)
    if src.is_dir():
        jobs = [(p, Path(args.output) / f"{_split_name(p)[0]}_pred.nii") for p in _nifti_files(src)
                if _split_name(p)[1] == "low"]
        if not jobs:
            raise ConfigurationError(f"no <id>_low NIfTI files in {src}")
        out_dir = _mkdir(args.output)
    else:
        if not src.exists():
            raise ConfigurationError(f"input volume {src} not found")
        jobs = [(src, Path(args.output))]
        out_dir = _mkdir(Path(args.output).parent)
    for p, q in jobs:
        low = read_volume(p)
        if args.downsample is not None:
            low = apply_degrade(low, args.downsample)
        write_volume(infer_volume(weights, low), q)
    cond = "original" if args.downsample is None else downsampled_condition(args.downsample)
    write_manifest(out_dir, "infer", [q for _, q in jobs], [Path(args.checkpoint)] + [p for p, _ in jobs],
                   extra={"condition": cond, "condition_label": condition_label(cond), "downsample_s": args.downsample,
                          "arch": weights.arch, "variant": weights.meta.get("variant")},
                   name="infer_manifest.json")
    print(f"inferred {len(jobs)} volume(s) [{condition_label(cond)}]")
    return EXIT_OK


def _pick(files: List[Path], roles: Sequence[str]) -> Dict[str, Path]:
    for role in roles:
        chosen = {_split_name(p)[0]: p for p in files if _split_name(p)[1] == role}
        if chosen:
            return chosen
    return {_split_name(p)[0]: p for p in files if _split_name(p)[1] != "low"}


def cmd_evaluate(args) -> int:
    preds = _pick(_nifti_files(Path(args.pred)), ("pred", "high"))
    refs = _pick(_nifti_files(Path(args.ref)), ("high",))
    missing_ref = sorted(set(preds) - set(refs))
    missing_pred = sorted(set(refs) - set(preds))
    if missing_ref or missing_pred:
        raise ConfigurationError(f"subject mismatch: no reference for {missing_ref}; no prediction for {missing_pred}")
    if not refs:
        raise ConfigurationError("no volumes to evaluate")
    csv_path = Path(args.out)
    out_dir = _mkdir(csv_path.parent)
    mont_dir = _mkdir(out_dir / "montages")
    reports, outputs = [], []
    for sid in sorted(refs):
        pred, ref = read_volume(preds[sid]), read_volume(refs[sid])
        reports.append(evaluate_pair(pred, ref, args.num_classes, sid, args.condition, 0, args.ssim_mode))
        img_path = mont_dir / f"{sid}.pgm"
        write_pgm(montage(pred.data, ref.data), img_path)
        outputs.append(img_path)
    write_reports_csv(reports, csv_path)
    write_manifest(out_dir, "evaluate", [csv_path, *outputs], [*preds.values(), *refs.values()],
                   extra={"condition": args.condition, "csv_header": csv_header(args.num_classes)},
                   name="evaluate_manifest.json")
    print(f"evaluated {len(reports)} subjects -> {csv_path}")
    return EXIT_OK


# argument parsing --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="volsynth", description="Desk-scale volumetric low-field to high-field MRI synthesis")
    ap.add_argument("--version", action="version", version=f"volsynth {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="write synthetic low/high-field NIfTI pairs")
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--shape", type=int, nargs="+", default=[32, 32, 32], help="one size or three")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lesions", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_phantom)

    for name, func, helptext in (("augment", cmd_augment, "expand a dataset with paired augmentations"),
                                 ("train", cmd_train, "train a generator"),
                                 ("crossval", cmd_crossval, "cross-validate and write cv_report.csv")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, help="JSON run config")
        p.add_argument("--seed", type=int)
        p.add_argument("--data", help="override dataset.dir")
        p.add_argument("--out", help="override output_dir")
        if name == "crossval":
            p.add_argument("--plan", help="'loo' or 'kfold:K' (overrides crossval.plan)")
        p.set_defaults(func=func)

    p = sub.add_parser("infer", help="synthesize high-field volumes from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="a NIfTI file or a directory of <id>_low files")
    p.add_argument("--output", required=True, help="output file, or directory for <id>_pred files")
    p.add_argument("--downsample", type=float, help="degrade the input by this factor first")
    p.add_argument("--variant", help="require a checkpoint compatible with this variant")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("evaluate", help="score predictions against references")
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--condition", default="original")
    p.add_argument("--num-classes", type=int, default=DEFAULT_CLASSES)
    p.add_argument("--ssim-mode", choices=("3d", "2d"), default="3d")
    p.set_defaults(func=cmd_evaluate)
    return ap


def _apply_workers() -> None:
    n = os.environ.get(WORKERS_ENV)
    if not n:
        return
    try:
        import torch
    except ImportError:
        return
    torch.set_num_threads(max(1, int(n)))


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _apply_workers()
        return args.func(args)
    except IncompatibleCheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INCOMPATIBLE
    except TrainingDivergedError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (VolsynthError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
