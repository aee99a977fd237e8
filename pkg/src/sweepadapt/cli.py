"""Command-line entry point: simulate, train, adapt, reconstruct, evaluate, export features.

Every subcommand reads a JSON config (with a ``version`` field), writes its
outputs under ``--out`` and records a ``manifest.json`` with the SHA-256 of
each input and output file.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import __version__
from . import dataset as ds
from . import metrics as mt
from . import model as md
from . import reconstruct as rc
from . import report
from . import simulate as sim
from . import training as tr
from .errors import InvalidArgument, SweepAdaptError

CONFIG_VERSION = 1
log = logging.getLogger("sweepadapt")


# ---------------------------------------------------------------------------
# helpers


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _tree_hash(root: Path) -> str:
    """Digest over every file below ``root`` (relative names and contents, sorted)."""
    h = hashlib.sha256()
    for p in sorted(q for q in Path(root).rglob("*") if q.is_file()):
        h.update(p.relative_to(root).as_posix().encode())
        h.update(_sha256(p).encode())
    return h.hexdigest()


def _input_hash(path) -> str:
    p = Path(path)
    return _tree_hash(p) if p.is_dir() else _sha256(p)


def _write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def _write_manifest(out: Path, command: str, config: dict, inputs: dict, outputs: list[Path]) -> None:
    manifest = {
        "command": command,
        "package_version": __version__,
        "config": config,
        "inputs": {name: {"path": str(p), "sha256": _input_hash(p)} for name, p in inputs.items()},
        "outputs": {str(p.relative_to(out)): _sha256(p) for p in sorted(outputs) if p.is_file()},
    }
    _write_json(out / "manifest.json", manifest)


def _require(cfg: dict, key: str):
    if key not in cfg:
        raise InvalidArgument(f"config is missing {key!r}")
    return cfg[key]


def _train_config(cfg: dict, seed: int | None) -> tr.TrainConfig:
    d = dict(cfg.get("train", {}))
    if seed is not None:
        d["seed"] = seed
    return tr.TrainConfig.from_dict(d)


def _network_config(cfg: dict, train_cfg: tr.TrainConfig, sample: ds.Sample) -> md.NetworkConfig:
    d = dict(cfg.get("network", {}))
    d.setdefault("n_frames", train_cfg.n_frames)
    d.setdefault("height", sample.frames.shape[1])
    d.setdefault("width", sample.frames.shape[2])
    d.setdefault("seed", train_cfg.seed)
    return md.NetworkConfig.from_dict(d)


def _samples(data: Path, split: str, n: int) -> list[ds.Sample]:
    return ds.extract_all(sim.load_split(data, split), n)


def _save_run(out: Path, result: tr.TrainResult, best_name: str) -> list[Path]:
    paths = [
        md.save_checkpoint(result.best, out / best_name),
        md.save_checkpoint(result.last, out / "last.ckpt"),
    ]
    log_path = out / "log.jsonl"
    log_path.write_text(result.log.to_jsonl())
    paths += [log_path, report.loss_curves(result.log.records, out / "loss.png")]
    return paths


def _load_model(spec) -> tuple[md.Network, md.Network]:
    """``{"extractor": ckpt, "regressor": ckpt}`` or a single checkpoint path."""
    if isinstance(spec, str):
        spec = {"extractor": spec}
    g_ckpt = md.load_checkpoint(_require(spec, "extractor"))
    r_ckpt = md.load_checkpoint(spec["regressor"]) if "regressor" in spec else g_ckpt
    if r_ckpt.role == md.ROLE_TARGET:
        raise InvalidArgument("a target extractor checkpoint carries no regressor; name one explicitly")
    return g_ckpt.net, r_ckpt.net


def _model_inputs(name: str, spec) -> dict:
    if isinstance(spec, str):
        return {name: spec}
    return {f"{name}.{k}": v for k, v in spec.items()}


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(cfg: dict, args) -> dict:
    sim_cfg = sim.SimConfig.from_dict(cfg)
    if args.seed is not None:
        sim_cfg.seed = args.seed
    sets = sim.make_sweep_sets(sim_cfg)
    written = sim.save_sweep_sets(sets, args.out)
    cfg_path = _write_json(args.out / "sim_config.json", sim_cfg.to_dict())
    outputs = [cfg_path] + [p / f for paths in written.values() for p in paths for f in ("meta.json", "frames.f32", "poses.json")]
    _write_manifest(args.out, "simulate", sim_cfg.to_dict(), {"config": args.config}, outputs)
    return {split: len(s) for split, s in sets.items()}


def cmd_train_source(cfg: dict, args) -> dict:
    data = Path(_require(cfg, "data"))
    train_cfg = _train_config(cfg, args.seed)
    samples = _samples(data, "source", train_cfg.n_frames)
    net_cfg = _network_config(cfg, train_cfg, samples[0])
    result = tr.train_source(samples, train_cfg, net_cfg)
    outputs = _save_run(args.out, result, "source.ckpt")
    _write_manifest(args.out, "train-source", cfg, {"config": args.config, "data": data}, outputs)
    val = result.log.losses("val_loss")
    return {"epochs": len(val), "best_val_loss": min(val), "first_val_loss": val[0]}


def cmd_adapt(cfg: dict, args) -> dict:
    data = Path(_require(cfg, "data"))
    src_path = Path(_require(cfg, "source_checkpoint"))
    train_cfg = _train_config(cfg, args.seed)
    source_ckpt = md.load_checkpoint(src_path)
    src = _samples(data, "source", train_cfg.n_frames)
    tgt = _samples(data, "target_train", train_cfg.n_frames)
    pool = ds.SamplePool(src, source_ckpt.net.stats)
    result = tr.adapt_target(source_ckpt, tgt, pool, train_cfg)
    ckpt = md.save_checkpoint(result.checkpoint, args.out / "target.ckpt")
    log_path = args.out / "log.jsonl"
    log_path.write_text(result.log.to_jsonl())
    pairing = _write_json(args.out / "pairing.json", [
        {"sweep_id": s.sweep_id, "start": s.start, "source_sweep_id": pool.samples[i].sweep_id,
         "source_start": pool.samples[i].start}
        for s, i in zip(tgt, result.pairing)
    ])
    fig = report.loss_curves(result.log.records, args.out / "loss.png")
    _write_manifest(args.out, "adapt", cfg, {"config": args.config, "data": data, "source_checkpoint": src_path},
                    [ckpt, log_path, pairing, fig])
    d = result.log.losses("disc_loss")
    return {"epochs": len(d), "first_disc_loss": d[0], "final_disc_loss": d[-1]}


def cmd_train_baseline(cfg: dict, args) -> dict:
    data = Path(_require(cfg, "data"))
    train_cfg = _train_config(cfg, args.seed)
    src = _samples(data, "source", train_cfg.n_frames) if args.mode in ("source", "mixed") else []
    tgt = _samples(data, "target_train", train_cfg.n_frames) if args.mode in ("target", "mixed") else []
    net_cfg = _network_config(cfg, train_cfg, (src or tgt)[0]) if (src or tgt) else None
    result = tr.train_baseline(args.mode, src, tgt, train_cfg, net_cfg)
    outputs = _save_run(args.out, result, f"{args.mode}.ckpt")
    _write_manifest(args.out, f"train-baseline:{args.mode}", cfg, {"config": args.config, "data": data}, outputs)
    val = result.log.losses("val_loss")
    return {"mode": args.mode, "epochs": len(val), "best_val_loss": min(val)}


def cmd_reconstruct(cfg: dict, args) -> dict:
    sweep_dir = Path(_require(cfg, "sweep"))
    model_spec = _require(cfg, "model")
    voxel = float(cfg.get("voxel_mm", 0.5))
    sweep = sim.load_sweep(sweep_dir)
    g_net, r_net = _load_model(model_spec)
    mask = sweep.profile.mask()
    poses, vol = rc.reconstruct_sweep(sweep.frames, sweep.geometry, g_net, r_net, voxel, pixel_mask=mask)
    poses_path = _write_json(args.out / "poses.json", [_pose_row(p) for p in poses])
    vol_dir = rc.save_volume(vol, args.out / "volume")
    sag = rc.sagittal_slice(vol)
    pgm = rc.write_pgm(sag, args.out / "sagittal.pgm")
    figs = [
        report.volume_slice(sag, voxel, args.out / "sagittal.png", title=sweep.sweep_id),
        report.trajectories(sweep.gt_poses, {"predicted": poses}, sweep.geometry, args.out / "trajectory.png",
                            title=sweep.sweep_id),
    ]
    result = {
        "sweep_id": sweep.sweep_id,
        "ade_mm": mt.average_distance_error(poses, sweep.gt_poses, sweep.geometry),
        "fd_mm": mt.final_drift(poses, sweep.gt_poses, sweep.geometry),
        "volume_dims": [int(x) for x in vol.spec.dims],
    }
    res_path = _write_json(args.out / "reconstruction.json", result)
    _write_manifest(args.out, "reconstruct", cfg,
                    {"config": args.config, "sweep": sweep_dir, **_model_inputs("model", model_spec)},
                    [poses_path, vol_dir / "vol.json", vol_dir / "vol.f32", pgm, res_path, *figs])
    return result


def _pose_row(p) -> list[float]:
    return [float(x) for x in np.asarray(p).reshape(-1)]


def cmd_evaluate(cfg: dict, args) -> dict:
    data = Path(_require(cfg, "data"))
    split = cfg.get("split", "target_test")
    specs = _require(cfg, "models")
    if not isinstance(specs, dict) or not specs:
        raise InvalidArgument("'models' must map names to checkpoints")
    models = {name: _load_model(spec) for name, spec in specs.items()}
    sweeps = sim.load_split(data, split)
    result, predicted = mt.evaluate_models(models, sweeps)
    result["split"] = split

    metrics_json = _write_json(args.out / "metrics.json", result)
    csv_path = args.out / "metrics.csv"
    lines = ["model,sweep_id,ade_mm,fd_mm"]
    for name, m in result["models"].items():
        lines += [f"{name},{r['sweep_id']},{r['ade_mm']!r},{r['fd_mm']!r}" for r in m["per_sweep"]]
    csv_path.write_text("\n".join(lines) + "\n")
    figs = [report.error_bars(result["models"], args.out / "errors.png")]
    by_id = {s.sweep_id: s for s in sweeps}
    for sid, preds in predicted.items():
        sw = by_id[sid]
        figs.append(report.trajectories(sw.gt_poses, preds, sw.geometry, args.out / "trajectories" / f"{sid}.png",
                                        title=sid))
    inputs = {"config": args.config, "data": data}
    for name, spec in specs.items():
        inputs.update(_model_inputs(name, spec))
    _write_manifest(args.out, "evaluate", cfg, inputs, [metrics_json, csv_path, *figs])
    return result


def cmd_export_features(cfg: dict, args) -> dict:
    data = Path(_require(cfg, "data"))
    extractors = _require(cfg, "extractors")
    n = int(cfg.get("n_frames", 5))
    splits = cfg.get("splits", {"source": "source", "target": "target_train"})
    samples, feats = [], []
    for domain, split in splits.items():
        if domain not in extractors:
            raise InvalidArgument(f"no extractor given for domain {domain!r}")
        net = md.load_checkpoint(extractors[domain]).net
        part = _samples(data, split, n)[:: int(cfg.get("stride", 1))]
        samples += part
        feats.append(mt.feature_rows(net, part))
    feats = np.concatenate(feats)
    csv_path = mt.write_feature_csv(samples, feats, args.out / "features.csv")
    fig = report.feature_projection(feats, [s.label[3] for s in samples], [s.domain for s in samples],
                                    args.out / "features_pca.png")
    _write_manifest(args.out, "export-features", cfg,
                    {"config": args.config, "data": data, **{f"extractor.{k}": v for k, v in extractors.items()}},
                    [csv_path, fig])
    return {"rows": len(samples), "feature_dim": int(feats.shape[1])}


COMMANDS = {
    "simulate": (cmd_simulate, "generate source/target sweep sets"),
    "train-source": (cmd_train_source, "fit extractor + regressor on source sweeps"),
    "adapt": (cmd_adapt, "align a target extractor to frozen source features"),
    "train-baseline": (cmd_train_baseline, "comparison models (source, target or mixed data)"),
    "reconstruct": (cmd_reconstruct, "predict a trajectory and compound a volume for one sweep"),
    "evaluate": (cmd_evaluate, "trajectory error report over a test split"),
    "export-features": (cmd_export_features, "write extractor features as CSV plus a PCA plot"),
}


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(prog="sweepadapt", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    subparsers = {}
    for name, (_, help_text) in COMMANDS.items():
        p = subparsers[name] = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, type=Path, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", type=Path, default=None, help="output directory (default: config 'out' or ./out)")
        p.add_argument("--threads", type=int, default=1, help="torch CPU threads; 1 gives bit-exact runs")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "train-baseline":
            p.add_argument("--mode", required=True, choices=("source", "target", "mixed"))
    return parser, subparsers


def main(argv=None) -> int:
    parser, subparsers = build_parser()
    args = parser.parse_args(argv)
    sub = subparsers[args.command]
    if not args.config.is_file():
        sub.error(f"config file not found: {args.config}")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        sub.error("--threads must be >= 1")
    torch.set_num_threads(args.threads)

    try:
        cfg = json.loads(args.config.read_text())
        if not isinstance(cfg, dict):
            raise InvalidArgument("config must be a JSON object")
        if cfg.get("version") != CONFIG_VERSION:
            raise InvalidArgument(f"unsupported config version {cfg.get('version')!r} (expected {CONFIG_VERSION})")
        if args.out is None:
            args.out = Path(cfg.get("out", "out"))
        args.out.mkdir(parents=True, exist_ok=True)
        result = COMMANDS[args.command][0](cfg, args)
    except (SweepAdaptError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        err = {"error": {"command": args.command, "type": type(exc).__name__, "message": str(exc)}}
        print(json.dumps(err, sort_keys=True), file=sys.stderr)
        return 1
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
