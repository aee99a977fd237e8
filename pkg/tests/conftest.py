import numpy as np
import pytest
import torch

from sweepadapt import geometry as geo
from sweepadapt import reconstruct as rc
from sweepadapt import simulate as sim

torch.set_num_threads(1)


def make_sweep(steps, frame_shape=(16, 16), domain="source", sweep_id="s0", seed=0, profile=None):
    """A sweep with random frames and poses chained from the given per-step DOFs."""
    steps = np.asarray(steps, dtype=np.float64).reshape(-1, 6)
    poses = [np.eye(4)]
    for s in steps:
        poses.append(poses[-1] @ geo.dof_to_pose(s))
    T = len(poses)
    rng = np.random.default_rng(seed)
    frames = rng.uniform(0, 1, (T,) + tuple(frame_shape)).astype(np.float32)
    if profile is None:
        profile = sim.TransducerProfile("test", geo.FrameGeometry(frame_shape[1], frame_shape[0], 0.5), mask_kind="rect")
    return sim.Sweep(sweep_id, domain, profile, frames, np.array(poses))


@pytest.fixture
def small_sim_config():
    """A fast simulator configuration: 16x16 frames, small phantom."""
    g = geo.FrameGeometry(16, 16, 1.0)
    cfg = sim.SimConfig(
        seed=3,
        n_frames=12,
        n_source=4,
        n_target_train=2,
        n_target_test=1,
        phantom_dims=(24, 20, 24),
        voxel_mm=1.0,
    )
    cfg.source = sim.default_source_domain(g)
    cfg.target = sim.default_target_domain(g)
    return cfg


def tiny_network(seed=0, n_frames=3, size=16, feature_dim=8, channels=(4, 8)):
    from sweepadapt.dataset import DofStats
    from sweepadapt.model import NetworkConfig, init_network

    cfg = NetworkConfig(n_frames=n_frames, height=size, width=size, channels=channels,
                        feature_dim=feature_dim, seed=seed)
    return init_network(cfg, DofStats.identity())


def finite_difference_errors(net, loss_fn, n_params, seed, eps=1e-6):
    """Relative errors between autograd and central-difference gradients.

    ``loss_fn(net)`` must return a scalar tensor. The network is evaluated in
    float64; ``n_params`` scalar parameters are drawn uniformly over all
    parameter entries that receive gradient.
    """
    net = net.double()
    named = [(n, p) for n, p in net.named_parameters() if p.requires_grad]
    net.zero_grad()
    loss_fn(net).backward()
    grads = {n: p.grad.detach().clone() for n, p in named}
    sizes = np.array([p.numel() for _, p in named])
    rng = np.random.default_rng(seed)
    flat = rng.choice(sizes.sum(), size=n_params, replace=False)
    bounds = np.cumsum(sizes)
    errors = []
    with torch.no_grad():
        for k in flat:
            seg = int(np.searchsorted(bounds, k, side="right"))
            name, p = named[seg]
            off = int(k - (bounds[seg] - sizes[seg]))
            view = p.view(-1)
            orig = view[off].item()
            view[off] = orig + eps
            up = loss_fn(net).item()
            view[off] = orig - eps
            down = loss_fn(net).item()
            view[off] = orig
            fd = (up - down) / (2 * eps)
            an = grads[name].view(-1)[off].item()
            errors.append(abs(fd - an) / max(abs(fd), abs(an), 1e-7))
    return np.array(errors)


def noise_free_sweep():
    """Sweep through a speckle-free phantom rendered without gain, contrast change or noise."""
    spec = sim.PhantomSpec(
        dims=(40, 36, 48), voxel_mm=1.0, background=0.3, speckle=0.0, seed=0,
        ellipsoids=(sim.Ellipsoid((0, 16, 0), (10, 8, 12), 0.8),
                    sim.Ellipsoid((4, 10, -6), (3, 3, 4), 0.1),
                    sim.Ellipsoid((-5, 22, 7), (4, 2, 3), 0.95)),
    )
    phantom = sim.build_phantom(spec)
    prof = sim.TransducerProfile("clean", geo.FrameGeometry(48, 48, 0.5), mask_kind="rect",
                                 depth_gain=0.0, gamma=1.0, noise=0.0)
    traj = sim.TrajectoryModel(kind="linear_sweep", total=30.0, n_frames=121, secondary=10.0,
                               jitter_std=(0.02, 0.02, 0.02, 0.05, 0.05, 0.05), jitter_corr=0.9, seed=1)
    return phantom, sim.generate_sweep(phantom, traj, prof, seed=0)


def phantom_correlation():
    phantom, sw = noise_free_sweep()
    grid = rc.GridSpec(dims=phantom.data.shape, voxel_mm=phantom.voxel_mm, origin_mm=tuple(phantom.origin_mm))
    vol = rc.compound_volume(sw.frames, sw.origin_pose @ sw.gt_poses, sw.geometry, grid, fill_radius=0)
    covered = vol.weight_sum > 0
    return np.corrcoef(vol.intensity[covered], phantom.data[covered])[0, 1], int(covered.sum())
