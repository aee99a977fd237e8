"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``[criterion k] PASS|FAIL ...`` line. The training
criteria share one set of runs per seed (module-scoped fixture); expect the
whole module to take roughly a quarter of an hour on one CPU core.
"""

import dataclasses
import json
import time

import numpy as np
import pytest
import torch

from conftest import finite_difference_errors, phantom_correlation, tiny_network
from sweepadapt import cli
from sweepadapt import dataset as ds
from sweepadapt import geometry as geo
from sweepadapt import metrics as mt
from sweepadapt import model as md
from sweepadapt import reconstruct as rc
from sweepadapt import simulate as sim
from sweepadapt import training as tr

SEEDS = (0, 1, 2)
N = 5


@pytest.fixture
def verdict(capsys):
    def report(k, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {k}] {'PASS' if ok else 'FAIL'} {detail}")
        assert ok, detail

    return report


def test_c1_pose_codec(verdict):
    rng = np.random.default_rng(0)
    d = np.empty((10_000, 6))
    d[:, :3] = rng.uniform(-50, 50, (10_000, 3))
    d[:, 3:] = rng.uniform(-89, 89, (10_000, 3))
    t0 = time.perf_counter()
    back = geo.pose_to_dof(geo.dof_to_pose(d))
    dt = time.perf_counter() - t0
    err = np.max(np.abs(back - d))
    verdict(1, err < 1e-9 and dt < 1.0, f"max error {err:.2e}, {dt * 1e3:.1f} ms for 10^4 round trips")


def _chain_drift(sweep):
    # chain the generator's commanded per-step motions, independent of the stored poses
    steps = sim.TrajectoryModel.from_dict(sweep.meta["trajectory"]).steps()
    poses = rc.chain_trajectory(np.eye(4), steps)
    return mt.final_drift(poses, sweep.gt_poses, sweep.geometry)


def test_c2_ground_truth_closure(verdict):
    cfg = sim.SimConfig(seed=0, n_frames=100, n_source=1, n_target_train=0, n_target_test=1)
    phantom = sim.build_phantom(sim.random_phantom_spec(cfg, np.random.default_rng(0)))
    prof = cfg.source.profile
    fan = sim.generate_sweep(phantom, sim.TrajectoryModel(kind="fan_sweep", total=40.0, n_frames=100), prof, 0)
    pure = _chain_drift(fan)
    jittered = max(_chain_drift(s) for s in sum(sim.make_sweep_sets(cfg).values(), []))
    verdict(2, pure < 1e-6 and jittered < 0.1,
            f"pure fan drift {pure:.2e} mm, default jittered drift {jittered:.2e} mm")


def test_c3_gradient_correctness(verdict):
    x = torch.rand(4, 3, 16, 16, generator=torch.Generator().manual_seed(0), dtype=torch.float64)
    x_t = torch.rand(4, 3, 16, 16, generator=torch.Generator().manual_seed(1), dtype=torch.float64)
    y = torch.randn(4, 6, generator=torch.Generator().manual_seed(2), dtype=torch.float64)
    mse_err = finite_difference_errors(tiny_network(0), lambda n: md.mse_loss(n(x), y), 200, seed=0)

    frozen = tiny_network(1).double()
    with torch.no_grad():
        v_s = frozen.g(x)
    net = tiny_network(0)
    for p in net.r.parameters():
        p.requires_grad_(False)
    disc_err = finite_difference_errors(net, lambda n: md.discrepancy_loss(v_s, n.g(x_t)), 200, seed=1)
    ok = np.all(mse_err < 1e-3) and np.all(disc_err < 1e-3)
    verdict(3, ok, f"mse {np.sum(mse_err < 1e-3)}/200 (max rel {mse_err.max():.1e}), "
                   f"discrepancy {np.sum(disc_err < 1e-3)}/200 (max rel {disc_err.max():.1e})")


def _zero_motion(sweep):
    return np.repeat(np.eye(4)[None], sweep.n_frames, axis=0)


def run_seed(seed, tmp):
    sets = sim.make_sweep_sets(sim.SimConfig(seed=seed))
    src = ds.extract_all(sets["source"], N)
    tgt = ds.extract_all(sets["target_train"], N)
    cfg = tr.TrainConfig(seed=seed)

    t0 = time.perf_counter()
    step_a = tr.train_source(src, cfg)
    step_a_time = time.perf_counter() - t0

    ckpt_path = md.save_checkpoint(step_a.best, tmp / f"source_{seed}.ckpt")
    file_before = md.file_checksum(ckpt_path)
    source = md.load_checkpoint(ckpt_path)
    params_before = md.params_checksum(source.net)
    pool = ds.SamplePool(src, source.net.stats)
    step_b = tr.adapt_target(source, tgt, pool, cfg)
    frozen = (md.file_checksum(ckpt_path) == file_before and md.params_checksum(source.net) == params_before)

    mixed = tr.train_baseline("mixed", src, tgt, cfg)
    models = {
        "source_only": (source.net, source.net),
        "adapted": (step_b.checkpoint.net, source.net),
        "mixed": (mixed.best.net, mixed.best.net),
    }
    evaluation, _ = mt.evaluate_models(models, sets["target_test"])

    _, val = ds.split_by_sweep(src, cfg.val_fraction, cfg.seed)
    val_ids = {s.sweep_id for s in val}
    val_sweeps = [s for s in sets["source"] if s.sweep_id in val_ids]
    val_eval, _ = mt.evaluate_models({"step_a": (source.net, source.net)}, val_sweeps)
    return {
        "sets": sets, "src": src, "tgt": tgt, "pool": pool, "source": source,
        "val_loss": step_a.log.losses("val_loss"), "step_a_time": step_a_time, "n_val_sweeps": len(val_sweeps),
        "val_ade": val_eval["models"]["step_a"]["mean_ade_mm"],
        "val_ade_zero": val_eval["models"]["zero_motion"]["mean_ade_mm"],
        "disc": step_b.log.losses("disc_loss"), "frozen": frozen, "eval": evaluation,
    }


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    torch.set_num_threads(1)
    tmp = tmp_path_factory.mktemp("acceptance")
    return {seed: run_seed(seed, tmp) for seed in SEEDS}


def test_c4_step_a_learning(runs, verdict):
    r = runs[0]
    v = r["val_loss"]
    loss_ratio = min(v) / v[0]
    ade_ratio = r["val_ade"] / r["val_ade_zero"]
    ok = loss_ratio <= 0.3 and ade_ratio <= 0.2 and r["step_a_time"] <= 1800
    verdict(4, ok, f"best/epoch-1 val MSE {loss_ratio:.3f} (<= 0.3), val ADE {r['val_ade']:.2f} mm vs zero-motion "
                   f"{r['val_ade_zero']:.2f} mm, ratio {ade_ratio:.3f} (<= 0.2) over {r['n_val_sweeps']} sweeps, "
                   f"Step A {r['step_a_time']:.0f} s")


def test_c5_domain_shift(runs, verdict):
    ratios, parts = [], []
    for seed in SEEDS:
        m = runs[seed]["eval"]["models"]
        fd = {k: m[k]["median_fd_mm"] for k in ("source_only", "adapted", "mixed")}
        ratios.append(fd["adapted"] / fd["source_only"])
        parts.append(f"seed {seed}: src {fd['source_only']:.2f} / adapted {fd['adapted']:.2f} / "
                     f"mixed {fd['mixed']:.2f} mm")
    med = float(np.median(ratios))
    verdict(5, med <= 0.7, f"median adapted/source-only final-drift ratio {med:.3f} (<= 0.7); " + "; ".join(parts))


def test_c6_frozen_source(runs, verdict):
    ok = all(runs[s]["frozen"] for s in SEEDS)
    verdict(6, ok, f"source checkpoint file and parameter checksums unchanged by Step B for seeds {SEEDS}")


def test_c7_weak_supervision(runs, verdict):
    r = runs[0]
    pairing = tr.compute_pairing(r["pool"], r["tgt"])
    rng = np.random.default_rng(123)
    noisy = [dataclasses.replace(s, label=s.label + rng.normal(0, 10.0, 6)) for s in r["tgt"]]
    cfg = tr.TrainConfig(seed=0, epochs=20)
    a = tr.adapt_target(r["source"], r["tgt"], r["pool"], cfg, pairing=pairing).log.losses("disc_loss")
    b = tr.adapt_target(r["source"], noisy, r["pool"], cfg, pairing=pairing).log.losses("disc_loss")
    verdict(7, a == b, f"{len(a)} epochs of L_D identical with perturbed target labels: {a == b}")


def test_c8_discrepancy_descent(runs, verdict):
    ratios = [runs[s]["disc"][-1] / runs[s]["disc"][0] for s in SEEDS]
    med = float(np.median(ratios))
    verdict(8, med <= 0.8, f"median final/epoch-1 L_D {med:.3f} (<= 0.8); per seed " +
            ", ".join(f"{x:.3f}" for x in ratios))


def test_c9_compounding_fidelity(verdict):
    corr, covered = phantom_correlation()
    verdict(9, corr >= 0.95, f"in-coverage voxel correlation {corr:.4f} over {covered} voxels (>= 0.95)")


PIPE_SIM = {"version": 1, "seed": 5, "n_frames": 30, "n_source": 6, "n_target_train": 2, "n_target_test": 2}
PIPE_TRAIN = {"epochs": 3}


def scripted_run(root):
    def write(name, obj):
        p = root / name
        p.write_text(json.dumps(obj))
        return str(p)

    data, src, ada = root / "data", root / "src", root / "adapt"
    steps = [
        ["simulate", "--config", write("sim.json", PIPE_SIM), "--out", str(data)],
        ["train-source", "--config", write("train.json", {"version": 1, "data": str(data), "train": PIPE_TRAIN}),
         "--out", str(src)],
        ["adapt", "--config", write("adapt.json", {"version": 1, "data": str(data), "train": PIPE_TRAIN,
                                                   "source_checkpoint": str(src / "source.ckpt")}),
         "--out", str(ada)],
        ["reconstruct", "--config", write("rec.json", {
            "version": 1, "sweep": str(data / "target_test" / "tgt_002"),
            "model": {"extractor": str(ada / "target.ckpt"), "regressor": str(src / "source.ckpt")}}),
         "--out", str(root / "rec")],
        ["evaluate", "--config", write("eval.json", {
            "version": 1, "data": str(data),
            "models": {"source_only": str(src / "source.ckpt"),
                       "adapted": {"extractor": str(ada / "target.ckpt"), "regressor": str(src / "source.ckpt")}}}),
         "--out", str(root / "eval")],
    ]
    for argv in steps:
        assert cli.main(argv + ["--threads", "1", "--seed", "7"]) == 0, argv
    return {
        "metrics": (root / "eval" / "metrics.json").read_bytes(),
        "source": (src / "source.ckpt").read_bytes(),
        "target": (ada / "target.ckpt").read_bytes(),
        "volume": (root / "rec" / "volume" / "vol.f32").read_bytes(),
    }


def test_c10_determinism(tmp_path, verdict, capsys):
    a = scripted_run(tmp_path / "a" if (tmp_path / "a").mkdir() is None else None)
    b = scripted_run(tmp_path / "b" if (tmp_path / "b").mkdir() is None else None)
    capsys.readouterr()
    same = {k: a[k] == b[k] for k in a}
    verdict(10, all(same.values()), "byte-identical across two scripted runs: " +
            ", ".join(f"{k}={v}" for k, v in same.items()))
