import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from firefleet.localization import MclConfig, MclDebugLog, MclFilter, map_weights, subsample, wrap
from firefleet.world_model import PointMap, build_likelihood_field, build_voxel_grid

QUIET = dict(odom_noise_frac=0.0, fixed_noise=(0.0, 0.0, 0.0, 0.0), sigma_z=0.0, sigma_yaw=0.0)


def quiet_filter(n=10, **kw):
    return MclFilter(MclConfig(n_particles=n, **{**QUIET, **kw}), seed=0)


@pytest.fixture(scope="module")
def room():
    """A 4 x 4 x 2 m box sampled on its surface, with its likelihood field."""
    g = np.arange(0.0, 4.0001, 0.1)
    h = np.arange(0.0, 2.0001, 0.1)
    faces = []
    for a in g:
        for b in h:
            faces += [(a, 0.0, b), (a, 4.0, b), (0.0, a, b), (4.0, a, b)]
    grid = build_voxel_grid(PointMap(np.array(faces) + 0.05), 0.2)
    return grid, build_likelihood_field(grid, 0.2, 0.6)


# -- initialize / estimate ---------------------------------------------------------------

def test_initialize_zero_spread():
    f = quiet_filter(7).initialize([1.0, 2.0, 3.0, 0.5])
    assert np.allclose(f.particles, [1.0, 2.0, 3.0, 0.5])
    assert np.allclose(f.weights, 1 / 7)
    assert np.allclose(f.estimate().pose, [1.0, 2.0, 3.0, 0.5])


def test_initialize_spread_statistics():
    f = MclFilter(MclConfig(n_particles=10000), seed=3).initialize([0, 0, 0, 0], (1.0, 1.0, 0.1, 0.1))
    sd = f.particles.std(axis=0)
    assert np.allclose(sd, [1.0, 1.0, 0.1, 0.1], rtol=0.05)


def test_config_validation():
    for bad in (dict(n_particles=0), dict(alpha=1.5), dict(update_translation=0.0),
                dict(update_rotation=-1.0)):
        with pytest.raises(ValueError):
            MclConfig(**bad)


def test_estimate_two_particles_and_circular_mean():
    f = quiet_filter(2).initialize([0, 0, 0, 0])
    f.particles = np.array([[0.0, 0, 0, 3.1], [2.0, 0, 0, -3.1]])
    e = f.estimate().pose
    assert e[0] == pytest.approx(1.0)
    assert abs(abs(e[3]) - math.pi) < 1e-9


def test_estimate_single_effective_particle():
    f = quiet_filter(3).initialize([0, 0, 0, 0])
    f.particles = np.array([[1.0, 2, 3, 0.4], [5, 5, 5, 1], [9, 9, 9, 2]])
    f.weights = np.array([1.0, 0.0, 0.0])
    assert np.allclose(f.estimate().pose, [1, 2, 3, 0.4])


# -- predict ------------------------------------------------------------------------------

def test_predict_straight():
    f = quiet_filter().initialize([0, 0, 0, 0]).predict([1, 0, 0, 0])
    assert np.allclose(f.particles[:, 0], 1.0) and np.allclose(f.particles[:, 1], 0.0)


def test_predict_rotated():
    f = quiet_filter().initialize([0, 0, 0, math.pi / 2]).predict([1, 0, 0, 0])
    assert np.allclose(f.particles[:, 1], 1.0) and np.allclose(f.particles[:, 0], 0.0, atol=1e-12)


def test_predict_fixed_noise_spreads_cloud():
    f = MclFilter(MclConfig(n_particles=2000), seed=1).initialize([0, 0, 0, 0], (0.1, 0.1, 0.1, 0.1))
    before = f.particles.var(axis=0)
    f.predict([0, 0, 0, 0])
    assert np.all(f.particles.var(axis=0) > before)


def test_predict_yaw_wrapped():
    f = quiet_filter().initialize([0, 0, 0, 3.0]).predict([0, 0, 0, 0.5])
    assert np.all(f.particles[:, 3] <= math.pi) and np.all(f.particles[:, 3] > -math.pi)
    assert f.particles[0, 3] == pytest.approx(3.5 - 2 * math.pi)


# -- update thresholds ----------------------------------------------------------------------

def test_should_update_thresholds():
    f = quiet_filter().initialize([0, 0, 0, 0])
    assert not f.should_update()
    f.add_odometry([0.1, 0, 0, 0])
    assert f.should_update()
    g = quiet_filter().initialize([0, 0, 0, 0])
    g.add_odometry([0, 0, 0, 0.06])
    assert g.should_update()


def test_pending_odometry_composes_exactly():
    f = quiet_filter().initialize([0, 0, 0, 0])
    for _ in range(4):
        f.add_odometry([0.5, 0, 0, math.pi / 2])
    assert np.allclose(f.current_pose(), [0, 0, 0, 0], atol=1e-12)


def test_update_resets_counters(room):
    grid, field = room
    f = quiet_filter().initialize([2, 2, 1, 0])
    f.add_odometry([0.2, 0, 0, 0])
    cloud = np.array([[1.85, 0, 0], [-2.15, 0, 0]])
    assert f.update(cloud, field)
    assert not f.should_update()
    assert not f.update(cloud, field)


# -- weights -------------------------------------------------------------------------------------

def test_map_weight_at_peak(room):
    grid, field = room
    f = quiet_filter(2).initialize([0, 0, 0, 0])
    f.particles = np.array([[0.0, 0.0, 0.0, 0.0], [30.0, 30.0, 0.0, 0.0]])
    cloud = grid.occupied_centers()[::7]
    w = f.update_cloud_weight(cloud, field)
    assert w[0] == pytest.approx(1.0 / (math.sqrt(2 * math.pi) * 0.2), rel=1e-9)
    assert w[0] == pytest.approx(1.99471, abs=1e-5)
    assert w[1] == 0.0


def brute_weight(particle, cloud, grid, sigma, trunc):
    occ = grid.occupied_centers()
    c, s = math.cos(particle[3]), math.sin(particle[3])
    total = 0.0
    for v in cloud:
        p = particle[:3] + np.array([c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]])
        idx = np.floor(p / grid.resolution).astype(int) - grid.origin_index
        if np.any(idx < 0) or np.any(idx >= np.array(grid.dims)):
            continue
        center = (idx + grid.origin_index + 0.5) * grid.resolution
        d = min(np.linalg.norm(center - o) for o in occ)
        if d <= trunc:
            total += math.exp(-d * d / (2 * sigma * sigma)) / (math.sqrt(2 * math.pi) * sigma)
    return total / len(cloud)


def test_map_weight_matches_brute_force():
    pts = np.array([[0.1, 0.1, 0.1], [0.3, 0.1, 0.1], [0.5, 0.5, 0.3], [1.1, 0.1, 0.1]])
    grid = build_voxel_grid(PointMap(pts), 0.2)
    field = build_likelihood_field(grid, 0.2, 0.6)
    particles = np.array([[0.05, 0.02, 0.0, 0.3], [0.4, -0.1, 0.05, -1.2]])
    cloud = np.array([[0.2, 0.1, 0.1], [0.0, 0.3, 0.2], [0.6, 0.0, 0.1]])
    got = map_weights(particles, cloud, field)
    want = [brute_weight(p, cloud, grid, 0.2, 0.6) for p in particles]
    assert np.allclose(got, want, rtol=1e-9, atol=1e-12)


def test_empty_cloud_skips_update(room):
    _, field = room
    f = quiet_filter().initialize([2, 2, 1, 0])
    w0 = f.weights.copy()
    assert f.update_cloud_weight(np.zeros((0, 3)), field) is None
    assert np.array_equal(f.weights, w0)
    assert f.events[-1]["type"] == "mcl_empty_cloud"


@settings(max_examples=30, deadline=None)
@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(-10, 10))
def test_single_outlier_bounded_influence(room, ox, oy, oz):
    grid, field = room
    f = MclFilter(MclConfig(n_particles=20), seed=2).initialize([2, 2, 1, 0], (0.2, 0.2, 0.1, 0.05))
    cloud = grid.occupied_centers()[::11] - np.array([2, 2, 1])
    base = map_weights(f.particles, cloud, field)
    moved = cloud.copy()
    moved[0] = [ox, oy, oz]
    diff = np.abs(map_weights(f.particles, moved, field) - base)
    assert np.all(diff <= field.peak / len(cloud) + 1e-12)


def test_gps_weight():
    f = quiet_filter(3, gps_sigma=0.5).initialize([0, 0, 0, 0])
    f.particles = np.array([[1.0, 1.0, 0.0, 0], [1.0, 1.0, 9.0, 0], [1.5, 1.0, 0.0, 0]])
    w = f.update_gps_weight([1.0, 1.0, 4.0])
    peak = 1 / (math.sqrt(2 * math.pi) * 0.5)
    assert w[0] == pytest.approx(peak) and w[1] == w[0]
    assert w[2] == pytest.approx(peak * math.exp(-0.5))


def test_combine_alpha_extremes():
    f = quiet_filter(4).initialize([0, 0, 0, 0])
    wm = np.array([0.1, 0.4, 0.3, 0.2])
    wg = np.array([0.4, 0.1, 0.2, 0.3])
    f.w_map, f.w_gps = wm.copy(), wg.copy()
    assert np.array_equal(np.argsort(f.combine_and_normalize(1.0)), np.argsort(wm))
    f.w_map, f.w_gps = wm.copy(), wg.copy()
    assert np.array_equal(np.argsort(f.combine_and_normalize(0.0)), np.argsort(wg))


def test_all_zero_weights_reset_uniform():
    f = quiet_filter(4).initialize([0, 0, 0, 0])
    f.w_map = np.zeros(4)
    w = f.combine_and_normalize()
    assert np.allclose(w, 0.25) and f.events[-1]["type"] == "mcl_divergence"


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=5, max_size=5), st.lists(st.floats(0, 10), min_size=5, max_size=5),
       st.floats(0, 1))
def test_weights_normalized(wm, wg, alpha):
    f = quiet_filter(5).initialize([0, 0, 0, 0])
    f.w_map, f.w_gps = np.array(wm), np.array(wg)
    w = f.combine_and_normalize(alpha)
    assert abs(w.sum() - 1.0) < 1e-9 and np.all(w >= 0) and len(w) == 5


# -- resampling ---------------------------------------------------------------------------------

def test_resample_single_heavy_particle():
    f = quiet_filter(5).initialize([0, 0, 0, 0])
    f.particles = np.arange(20.0).reshape(5, 4) / 10
    f.weights = np.array([0, 0, 1.0, 0, 0])
    f.resample()
    assert np.allclose(f.particles, f.particles[2]) and np.allclose(f.particles[0], [0.8, 0.9, 1.0, 1.1])
    assert np.allclose(f.weights, 0.2)


def test_resample_yaw_mean_near_compass():
    n, sig = 2000, 0.05
    f = MclFilter(MclConfig(n_particles=n, sigma_yaw=sig), seed=5).initialize([0, 0, 0, 0], (0, 0, 0, 1.0))
    f.resample(yaw_ref=0.7)
    m = math.atan2(np.sin(f.particles[:, 3]).mean(), np.cos(f.particles[:, 3]).mean())
    assert abs(m - 0.7) < 3 * sig / math.sqrt(n)


def test_resample_ugv_profile_flat():
    f = MclFilter(MclConfig.ugv(n_particles=100), seed=0).initialize([0, 0, 0.3, 0], (0.1, 0.1, 0.2, 0.1))
    f.resample(z_ref=0.0)
    assert np.all(f.particles[:, 2] == 0.0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.01, 10), min_size=2, max_size=40), st.integers(0, 2 ** 16))
def test_resample_counts_floor_or_ceil(raw, seed):
    # systematic resampling gives every particle floor(N w) or ceil(N w) copies
    n = len(raw)
    f = MclFilter(MclConfig(n_particles=n, **QUIET), seed=seed).initialize([0, 0, 0, 0])
    f.particles[:, 0] = np.arange(n)
    w = np.array(raw) / np.sum(raw)
    f.weights = w.copy()
    f.resample()
    counts = np.bincount(f.particles[:, 0].astype(int), minlength=n)
    assert counts.sum() == n
    assert np.all(counts >= np.floor(n * w - 1e-9)) and np.all(counts <= np.ceil(n * w + 1e-9))


# -- whole-filter properties --------------------------------------------------------------------

@settings(max_examples=15, deadline=None)
@given(st.lists(st.tuples(st.floats(-0.3, 0.3), st.floats(-0.3, 0.3), st.floats(-0.1, 0.1),
                          st.floats(-0.2, 0.2)), min_size=1, max_size=25))
def test_degenerate_filter_tracks_truth(room, steps):
    _, field = room
    f = quiet_filter(8).initialize([2, 2, 1, 0])
    truth = np.array([2.0, 2.0, 1.0, 0.0])
    for d in steps:
        c, s = math.cos(truth[3]), math.sin(truth[3])
        truth = np.array([truth[0] + c * d[0] - s * d[1], truth[1] + s * d[0] + c * d[1],
                          truth[2] + d[2], float(wrap(truth[3] + d[3]))])
        f.add_odometry(d)
        f.update(np.array([[1.0, 0, 0]]), field, z_ref=truth[2], yaw_ref=truth[3])
        p = f.current_pose()
        assert np.allclose(p[:3], truth[:3], atol=1e-9)
        assert abs(float(wrap(p[3] - truth[3]))) < 1e-9
        assert len(f.particles) == 8


@settings(max_examples=10, deadline=None)
@given(st.floats(-50, 50), st.floats(-50, 50))
def test_gps_ignored_when_alpha_one(room, gx, gy):
    grid, field = room
    cloud = grid.occupied_centers()[::5] - np.array([2.0, 2.0, 1.0])

    def run(gps):
        f = MclFilter(MclConfig(n_particles=200, alpha=1.0), seed=9).initialize([2.1, 1.9, 1, 0.05],
                                                                                 (0.1, 0.1, 0.05, 0.05))
        f.add_odometry([0.0, 0.0, 0.0, 0.0])
        f.update(cloud, field, gps=gps, z_ref=1.0, yaw_ref=0.0, force=True)
        return f.estimate().pose

    assert np.array_equal(run(None), run([gx, gy, 0.0]))


def test_localizes_in_room(room):
    grid, field = room
    truth = np.array([2.0, 2.0, 1.0, 0.0])
    cloud = grid.occupied_centers()[::3] - truth[:3]
    f = MclFilter(MclConfig(n_particles=500), seed=0).initialize(truth + [0.3, -0.3, 0, 0], (0.3, 0.3, 0, 0))
    for _ in range(10):
        f.update(cloud, field, z_ref=1.0, yaw_ref=0.0, force=True)
    assert np.linalg.norm(f.estimate().pose[:2] - truth[:2]) < 0.15


def test_subsample_stride():
    c = np.arange(30.0).reshape(10, 3)
    assert len(subsample(c, 20)) == 10
    s = subsample(c, 4)
    assert len(s) == 4 and s[0, 0] == 0.0


def test_debug_log(tmp_path):
    f = quiet_filter().initialize([1, 1, 1, 0])
    log = MclDebugLog(tmp_path / "mcl.csv")
    log.record(0.0, f, [1, 1, 1, 0])
    log.record(0.1, f, [1, 1, 2, 0])
    log.write()
    lines = (tmp_path / "mcl.csv").read_text().splitlines()
    assert lines[0].startswith("time,est_x") and len(lines) == 3
    assert float(lines[2].split(",")[9]) == pytest.approx(math.sqrt(0.5))
