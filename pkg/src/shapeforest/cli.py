"""Command-line entry point.

Subcommands: synth-gen, build-shape-model, train-forest, segment,
segment-seq, evaluate, depth-study.  Every run writes its outputs under a
run directory named by the content hash of the resolved configuration, along
with the resolved config snapshot and a machine-readable summary.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 model mismatch.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import presets
from .errors import ConfigError, IoError, ModelMismatch, ShapeForestError
from .features import classic_pool, position_pool, sm_pool, FeaturePoolConfig
from .fitting import FitConfig
from .forest import TrainConfig, load_forest, predict_map_depths, save_forest, train_forest
from .imaging import BinaryMask, load_pgm, rasterize_mask, save_pgm, write_boxes
from .metrics import ContourPair, SummaryStats, hausdorff, jaccard, mad, areas, summarize
from .pipeline import (
    ManifestEntry,
    PipelineConfig,
    read_manifest,
    segment_image,
    segment_sequence,
    sub_landmarks,
    training_pairs,
    write_manifest,
)
from .shape_model import (
    build_model,
    load_model,
    read_landmarks,
    save_model,
    write_landmarks,
)
from .synth import KEY_INDICES, SynthConfig, generate_dataset, generate_sequence

CONFIG_VERSION = 1

DEFAULT_CONFIG = {
    "version": CONFIG_VERSION,
    "shape": {"p_var": 0.99, "K_cap": 16, "s": 2.0},
    "train": {
        "n_trees": 20,
        "max_depth": 24,
        "min_samples": 8,
        "n_candidate_features": 100,
        "n_thresholds": 10,
        "pixel_fraction": 0.10,
        "seed": 0,
        "pool": {"weights": [0.4, 0.2, 0.1, 0.3], "max_offset": 60,
                 "box_min": 3, "box_max": 31},
    },
    "fit": {
        "alpha": 3000.0,
        "beta": 10.0,
        "s": 2.0,
        "step_b_factor": 0.25,
        "step_translate": 4.0,
        "step_log_scale": 0.05,
        "step_rot": 2.0,
        "expand": 2.0,
        "contract": 0.5,
        "step_tol": 0.01,
        "max_evals": 20000,
    },
    "pipeline": {"sub_w": 242, "sub_h": 208},
    "synth": {
        "n_images": 90,
        "width": 160,
        "height": 160,
        "r_mid_range": [26.0, 34.0],
        "thickness_range": [9.0, 15.0],
        "span_range_deg": [150.0, 210.0],
        "bend_range": [-3.0, 3.0],
        "tilt_range_deg": [-20.0, 20.0],
        "center_jitter": 8.0,
        "n_modes_gen": 4,
        "noise_std": 0.12,
        "distractor_count": [4, 7],
        "distractor_size": [3.0, 9.0],
        "attenuation": 0.4,
        "seed": 0,
        "train_fraction": 2.0 / 3.0,
        "n_sequences": 0,
        "seq_frames": 10,
    },
}


def desk_config_doc() -> dict:
    """Desk-scale profile: 96x96 working resolution with scaled knobs."""
    doc = copy.deepcopy(DEFAULT_CONFIG)
    doc["pipeline"] = {"sub_w": presets.DESK_SUB_W, "sub_h": presets.DESK_SUB_H}
    doc["fit"]["alpha"] = presets.DESK_ALPHA
    t = presets.desk_train()
    doc["train"].update({
        "n_trees": t.n_trees,
        "n_candidate_features": t.n_candidate_features,
        "n_thresholds": t.n_thresholds,
        "pool": {"weights": list(t.pool.weights), "max_offset": t.pool.max_offset,
                 "box_min": t.pool.box_min, "box_max": t.pool.box_max},
    })
    return doc


# --- config plumbing -----------------------------------------------------------


def _merge_config(dst: dict, src: dict, prefix: str = "") -> None:
    for key, val in src.items():
        if key not in dst:
            raise ConfigError(f"unknown config key {prefix + key!r}")
        if isinstance(dst[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {prefix + key!r} must be a section")
            _merge_config(dst[key], val, prefix + key + ".")
        else:
            dst[key] = val


def _apply_override(doc: dict, dotted: str, raw: str) -> None:
    keys = dotted.split(".")
    node = doc
    for k in keys[:-1]:
        if not isinstance(node, dict) or k not in node:
            raise ConfigError(f"unknown config key {dotted!r}")
        node = node[k]
    leaf = keys[-1]
    if not isinstance(node, dict) or leaf not in node:
        raise ConfigError(f"unknown config key {dotted!r}")
    try:
        node[leaf] = json.loads(raw)
    except json.JSONDecodeError:
        node[leaf] = raw


def resolve_config(args) -> dict:
    doc = desk_config_doc() if getattr(args, "preset", None) == "desk" \
        else copy.deepcopy(DEFAULT_CONFIG)
    if getattr(args, "config", None):
        try:
            user = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise IoError(f"cannot read config {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {args.config} is not valid JSON: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError(f"config {args.config} must hold a JSON object")
        if user.get("version", CONFIG_VERSION) != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {user.get('version')!r}")
        _merge_config(doc, user)
    for kv in getattr(args, "set", None) or []:
        if "=" not in kv:
            raise ConfigError(f"--set expects KEY=VALUE, got {kv!r}")
        dotted, raw = kv.split("=", 1)
        _apply_override(doc, dotted, raw)
    if getattr(args, "seed", None) is not None:
        doc["train"]["seed"] = args.seed
        doc["synth"]["seed"] = args.seed
    return doc


def _train_config(doc: dict, pool: FeaturePoolConfig | None = None) -> TrainConfig:
    t = doc["train"]
    if pool is None:
        p = t["pool"]
        pool = FeaturePoolConfig(weights=tuple(p["weights"]), max_offset=p["max_offset"],
                                 box_min=p["box_min"], box_max=p["box_max"])
    try:
        return TrainConfig(n_trees=t["n_trees"], max_depth=t["max_depth"],
                           min_samples=t["min_samples"],
                           n_candidate_features=t["n_candidate_features"],
                           n_thresholds=t["n_thresholds"],
                           pixel_fraction=t["pixel_fraction"], seed=t["seed"], pool=pool)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _fit_config(doc: dict) -> FitConfig:
    try:
        return FitConfig(**doc["fit"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _synth_config(doc: dict) -> SynthConfig:
    s = doc["synth"]
    try:
        return SynthConfig(
            n_images=s["n_images"], width=s["width"], height=s["height"],
            r_mid_range=tuple(s["r_mid_range"]),
            thickness_range=tuple(s["thickness_range"]),
            span_range_deg=tuple(s["span_range_deg"]),
            bend_range=tuple(s["bend_range"]),
            tilt_range_deg=tuple(s["tilt_range_deg"]),
            center_jitter=s["center_jitter"], n_modes_gen=s["n_modes_gen"],
            noise_std=s["noise_std"],
            distractor_count=tuple(s["distractor_count"]),
            distractor_size=tuple(s["distractor_size"]),
            attenuation=s["attenuation"], seed=s["seed"],
        )
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad synth section: {exc}") from exc


def _variant_pool(name: str, base: FeaturePoolConfig) -> FeaturePoolConfig:
    kw = dict(max_offset=base.max_offset, box_min=base.box_min, box_max=base.box_max)
    if name == "classic":
        return classic_pool(**kw)
    if name == "position":
        return position_pool(**kw)
    if name == "sm":
        return sm_pool(**kw)
    raise ConfigError(f"unknown forest variant {name!r} (want classic, position or sm)")


def _make_run_dir(args, doc: dict, command: str, inputs: list[str]) -> Path:
    payload = json.dumps({"command": command, "config": doc, "inputs": sorted(inputs)},
                         sort_keys=True, separators=(",", ":"))
    digest = hashlib.sha256(payload.encode()).hexdigest()[:12]
    run_dir = Path(getattr(args, "out", None) or "runs") / f"{command}-{digest}"
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(json.dumps(doc, indent=1) + "\n")
    return run_dir


def _write_summary(run_dir: Path, summary: dict) -> None:
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    print(json.dumps(summary, indent=1))


def _jobs(args) -> int:
    return args.jobs if getattr(args, "jobs", None) else (os.cpu_count() or 1)


# --- subcommands ----------------------------------------------------------------


def cmd_synth_gen(args) -> int:
    doc = resolve_config(args)
    run_dir = _make_run_dir(args, doc, "synth-gen", [])
    cfg = _synth_config(doc)
    samples = generate_dataset(cfg)

    img_dir = run_dir / "images"
    mask_dir = run_dir / "masks"
    img_dir.mkdir(exist_ok=True)
    mask_dir.mkdir(exist_ok=True)
    entries = []
    for i, smp in enumerate(samples):
        img_path = img_dir / f"img_{i:03d}.pgm"
        save_pgm(smp.image, img_path)
        save_pgm(smp.mask, mask_dir / f"mask_{i:03d}.pgm")
        entries.append(ManifestEntry(image_path=img_path, box=smp.box,
                                     landmarks=smp.landmarks))
    write_landmarks([s.landmarks for s in samples], run_dir / "landmarks.csv",
                    key_indices=KEY_INDICES)
    write_boxes([s.box for s in samples], run_dir / "boxes.csv")

    n_train = int(round(doc["synth"]["train_fraction"] * len(entries)))
    write_manifest(entries[:n_train], run_dir / "manifest_train.txt", KEY_INDICES)
    write_manifest(entries[n_train:], run_dir / "manifest_test.txt", KEY_INDICES)

    n_seq = int(doc["synth"]["n_sequences"])
    seq_dirs = []
    for s in range(n_seq):
        seq_cfg = SynthConfig(**{**cfg.__dict__, "seed": cfg.seed + 1000 + s})
        frames = generate_sequence(seq_cfg, int(doc["synth"]["seq_frames"]))
        seq_dir = run_dir / f"seq_{s:02d}"
        seq_dir.mkdir(exist_ok=True)
        seq_entries = []
        for t, smp in enumerate(frames):
            p = seq_dir / f"frame_{t:03d}.pgm"
            save_pgm(smp.image, p)
            seq_entries.append(ManifestEntry(image_path=p, box=smp.box,
                                             landmarks=smp.landmarks))
        write_manifest(seq_entries, seq_dir / "manifest.txt", KEY_INDICES)
        seq_dirs.append(str(seq_dir))

    _write_summary(run_dir, {
        "run_dir": str(run_dir),
        "n_images": len(samples),
        "n_train": n_train,
        "n_test": len(samples) - n_train,
        "sequences": seq_dirs,
        "seed": cfg.seed,
    })
    return 0


def cmd_build_shape_model(args) -> int:
    doc = resolve_config(args)
    run_dir = _make_run_dir(args, doc, "build-shape-model", [args.manifest])
    entries, _keys = read_manifest(args.manifest)
    sub_w, sub_h = doc["pipeline"]["sub_w"], doc["pipeline"]["sub_h"]
    shapes = sub_landmarks(entries, sub_w, sub_h)
    sh = doc["shape"]
    model = build_model(shapes, p_var=sh["p_var"], K_cap=sh["K_cap"], s=sh["s"])
    model_path = run_dir / "model.json"
    save_model(model, model_path)
    _write_summary(run_dir, {
        "run_dir": str(run_dir),
        "model": str(model_path),
        "M": model.M,
        "K": model.K,
        "eigenvalues": model.eigenvalues.tolist(),
    })
    return 0


def cmd_train_forest(args) -> int:
    doc = resolve_config(args)
    run_dir = _make_run_dir(args, doc, "train-forest", [args.manifest, args.model])
    model = load_model(args.model)
    entries, _ = read_manifest(args.manifest)
    sub_w, sub_h = doc["pipeline"]["sub_w"], doc["pipeline"]["sub_h"]
    pool = None
    if args.variant:
        base = _train_config(doc).pool
        pool = _variant_pool(args.variant, base)
    config = _train_config(doc, pool=pool)
    dataset = training_pairs(entries, sub_w, sub_h)
    forest = train_forest(dataset, config, model, n_jobs=_jobs(args))
    forest_path = run_dir / "forest.json"
    save_forest(forest, forest_path)
    _write_summary(run_dir, {
        "run_dir": str(run_dir),
        "forest": str(forest_path),
        "n_trees": len(forest.trees),
        "n_nodes": forest.n_nodes(),
        "resolution": [forest.sub_w, forest.sub_h],
        "shape_model_sha256": forest.shape_model_sha256,
    })
    return 0


def _pipeline_config(doc: dict, model, forest) -> PipelineConfig:
    return PipelineConfig(sub_w=doc["pipeline"]["sub_w"], sub_h=doc["pipeline"]["sub_h"],
                          forest=forest, shape_model=model, fit=_fit_config(doc))


def _write_fits(path: Path, fits) -> None:
    with path.open("w") as fh:
        for i, fit in enumerate(fits):
            fh.write(json.dumps({
                "index": i,
                "energy": fit.energy,
                "n_evals": fit.n_evals,
                "converged": fit.converged,
                "b": fit.b.b.tolist(),
                "theta": [fit.theta.tx, fit.theta.ty, fit.theta.log_scale, fit.theta.rot],
            }) + "\n")


def _segment_entries(entries, cfg: PipelineConfig, run_dir: Path, sequence: bool,
                     n_jobs: int):
    prob_dir = run_dir / "probmaps"
    prob_dir.mkdir(exist_ok=True)
    contours = []
    fits = []
    if sequence:
        frames = [e.load_image() for e in entries]
        boxes = [e.box for e in entries]
        for i, (contour, pm, fit) in enumerate(
                segment_sequence(frames, boxes, cfg, n_jobs=n_jobs)):
            save_pgm(pm, prob_dir / f"prob_{i:03d}.pgm")
            contours.append(contour)
            fits.append(fit)
    else:
        for i, e in enumerate(entries):
            contour, pm, fit = segment_image(e.load_image(), e.box, cfg)
            save_pgm(pm, prob_dir / f"prob_{i:03d}.pgm")
            contours.append(contour)
            fits.append(fit)
    return contours, fits


def _cmd_segment_common(args, sequence: bool) -> int:
    doc = resolve_config(args)
    command = "segment-seq" if sequence else "segment"
    run_dir = _make_run_dir(args, doc, command, [args.manifest, args.model, args.forest])
    model = load_model(args.model)
    forest = load_forest(args.forest, model)
    entries, keys = read_manifest(args.manifest)
    cfg = _pipeline_config(doc, model, forest)
    contours, fits = _segment_entries(entries, cfg, run_dir, sequence, _jobs(args))
    write_landmarks(contours, run_dir / "contours.csv", key_indices=keys)
    _write_fits(run_dir / "fits.jsonl", fits)
    _write_summary(run_dir, {
        "run_dir": str(run_dir),
        "contours": str(run_dir / "contours.csv"),
        "n_images": len(entries),
        "mean_energy": float(np.mean([f.energy for f in fits])),
        "mean_evals": float(np.mean([f.n_evals for f in fits])),
        "all_converged": bool(all(f.converged for f in fits)),
    })
    return 0


def cmd_segment(args) -> int:
    return _cmd_segment_common(args, sequence=False)


def cmd_segment_seq(args) -> int:
    return _cmd_segment_common(args, sequence=True)


def cmd_evaluate(args) -> int:
    doc = resolve_config(args)
    run_dir = _make_run_dir(args, doc, "evaluate", [args.manifest, args.contours])
    entries, keys = read_manifest(args.manifest)
    predicted, pred_keys = read_landmarks(args.contours)
    if len(predicted) != len(entries):
        raise IoError(f"{len(predicted)} predicted contours vs {len(entries)} manifest rows")
    keys = keys or pred_keys

    rows = []
    for e, pred in zip(entries, predicted):
        if e.landmarks is None:
            raise IoError(f"{e.image_path} has no ground-truth landmarks to evaluate against")
        img = e.load_image()
        m_pred = rasterize_mask(pred, img.width, img.height)
        m_ref = rasterize_mask(e.landmarks, img.width, img.height)
        pair = ContourPair(predicted=pred, reference=e.landmarks)
        row = {
            "jaccard": jaccard(m_pred, m_ref),
            "mad_px": mad(pair),
            "hd_px": hausdorff(pair),
        }
        if len(keys) == 4:
            a_pred = areas(pred, keys)
            a_ref = areas(e.landmarks, keys)
            row.update(endo_area=a_pred["endo_area"], myo_area=a_pred["myo_area"],
                       endo_area_ref=a_ref["endo_area"], myo_area_ref=a_ref["myo_area"])
        rows.append(row)

    cols = list(rows[0].keys())
    lines = ["index," + ",".join(cols)]
    for i, row in enumerate(rows):
        lines.append(f"{i}," + ",".join(repr(float(row[c])) for c in cols))
    (run_dir / "report.csv").write_text("\n".join(lines) + "\n")

    summary = {
        "run_dir": str(run_dir),
        "n_images": len(rows),
        "mean_jaccard": float(np.mean([r["jaccard"] for r in rows])),
        "mean_mad_px": float(np.mean([r["mad_px"] for r in rows])),
        "mean_hd_px": float(np.mean([r["hd_px"] for r in rows])),
    }
    if len(keys) == 4 and len(rows) >= 2:
        ba_lines = ["metric,mean,diff"]
        for name in ("endo_area", "myo_area"):
            pred_v = [r[name] for r in rows]
            ref_v = [r[name + "_ref"] for r in rows]
            try:
                st = summarize(pred_v, ref_v)
            except ShapeForestError:
                continue
            summary[name] = {"corr": st.corr, "bias": st.bias, "std": st.std,
                             "t_stat": st.t_stat, "p_value": st.p_value}
            for m, d in st.bland_altman:
                ba_lines.append(f"{name},{m!r},{d!r}")
        (run_dir / "ba.csv").write_text("\n".join(ba_lines) + "\n")
    _write_summary(run_dir, summary)
    return 0


def cmd_depth_study(args) -> int:
    doc = resolve_config(args)
    run_dir = _make_run_dir(args, doc, "depth-study",
                            [args.train_manifest, args.test_manifest])
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    depths = sorted(int(d) for d in args.depths.split(","))
    sub_w, sub_h = doc["pipeline"]["sub_w"], doc["pipeline"]["sub_h"]

    train_entries, _ = read_manifest(args.train_manifest)
    test_entries, _ = read_manifest(args.test_manifest)
    sh = doc["shape"]
    model = build_model(sub_landmarks(train_entries, sub_w, sub_h),
                        p_var=sh["p_var"], K_cap=sh["K_cap"], s=sh["s"])
    train_set = training_pairs(train_entries, sub_w, sub_h)
    test_set = training_pairs(test_entries, sub_w, sub_h)

    base_pool = _train_config(doc).pool
    lines = ["variant,depth,mean_jaccard"]
    table = {}
    for variant in variants:
        config = _train_config(doc, pool=_variant_pool(variant, base_pool))
        config = TrainConfig(**{**config.__dict__, "max_depth": max(depths),
                                "pool": config.pool})
        forest = train_forest(train_set, config, model, n_jobs=_jobs(args))
        per_depth = {d: [] for d in depths}
        for sub, mask in test_set:
            maps = predict_map_depths(forest, sub, depths)
            for d in depths:
                pred = BinaryMask.from_array((maps[d].array() > 0.5).astype(np.uint8))
                per_depth[d].append(jaccard(pred, mask))
        for d in depths:
            mj = float(np.mean(per_depth[d]))
            table[f"{variant}@{d}"] = mj
            lines.append(f"{variant},{d},{mj!r}")
    (run_dir / "study.csv").write_text("\n".join(lines) + "\n")
    _write_summary(run_dir, {"run_dir": str(run_dir), "study": str(run_dir / "study.csv"),
                             "mean_jaccard": table})
    return 0


# --- parser ----------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (unknown keys are rejected)")
    p.add_argument("--preset", choices=["desk"], help="start from a named profile")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key, e.g. --set train.n_trees=5")
    p.add_argument("--seed", type=int, help="override train.seed and synth.seed")
    p.add_argument("--jobs", type=int, help="worker parallelism (default: all cores)")
    p.add_argument("--out", help="parent directory for run directories (default: runs)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shapeforest",
        description="Shape-model-guided random-forest segmentation toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-gen", help="generate a synthetic dataset")
    _add_common(p)
    p.set_defaults(func=cmd_synth_gen)

    p = sub.add_parser("build-shape-model", help="build the PCA shape model")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_build_shape_model)

    p = sub.add_parser("train-forest", help="train the pixel classifier")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True, help="shape model JSON")
    p.add_argument("--variant", choices=["classic", "position", "sm"],
                   help="feature-pool variant (default: config pool)")
    p.set_defaults(func=cmd_train_forest)

    p = sub.add_parser("segment", help="segment each manifest image independently")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--forest", required=True)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("segment-seq", help="segment an ordered frame sequence")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--forest", required=True)
    p.set_defaults(func=cmd_segment_seq)

    p = sub.add_parser("evaluate", help="score predicted contours against ground truth")
    _add_common(p)
    p.add_argument("--manifest", required=True, help="manifest with ground-truth landmarks")
    p.add_argument("--contours", required=True, help="predicted contours CSV")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("depth-study", help="feature-variant x tree-depth Jaccard table")
    _add_common(p)
    p.add_argument("--train-manifest", required=True)
    p.add_argument("--test-manifest", required=True)
    p.add_argument("--variants", default="classic,position,sm")
    p.add_argument("--depths", default="4,8,12,16,24")
    p.set_defaults(func=cmd_depth_study)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (IoError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except ModelMismatch as exc:
        print(f"model mismatch: {exc}", file=sys.stderr)
        return 4
    except ShapeForestError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
