import math

import numpy as np
import pytest
from scipy.stats import special_ortho_group

from polartrack import baselines as bl
from polartrack.algebra import embed_jones, jones_combined, rot4_from_params, sop_from_unit4, vec4_from_jones
from polartrack.channel import NoiseParams, RngStream, init_channel, propagate
from polartrack.constellations import build_constellation, diff_decode, diff_encode


def test_table_defaults():
    assert bl.KabschConfig.for_format("PS-QPSK").block_len == 31
    assert bl.KabschConfig.for_format("PM-16-QAM").block_len == 16
    assert bl.BpsConfig.for_format("PS-QPSK") == bl.BpsConfig(13, 32)
    assert bl.BpsConfig.for_format("PM-64-QAM").test_phases == 64
    assert bl.BpsConfig.for_format("PM-256-QAM").test_phases == 64
    assert bl.CmaConfig.for_format("PM-QPSK").mu == 0.16
    with pytest.raises(ValueError):
        bl.KabschConfig(0)
    with pytest.raises(ValueError):
        bl.CmaConfig(0.0)


# ---- Kabsch ------------------------------------------------------------------


def _symbols(name, n, seed):
    c = build_constellation(name)
    idx = np.random.default_rng(seed).integers(0, c.size, n)
    return c, idx, c.points[idx]


def test_kabsch_identity_stays_identity():
    c, _, x = _symbols("PM-16-QAM", 160, 1)
    _, g = bl.kabsch_track(vec4_from_jones(x), np.eye(4), c, bl.KabschConfig())
    np.testing.assert_allclose(g, np.eye(4), atol=1e-12)


def test_kabsch_recovers_channel_inverse():
    c, idx, x = _symbols("PM-QPSK", 16, 2)
    r = rot4_from_params(0.2, np.array([0.1, 0, 0]))
    vy = vec4_from_jones(x) @ r.T
    # forced-correct decisions: Procrustes on the true symbols
    g = bl.procrustes(vec4_from_jones(x).T @ vy)
    np.testing.assert_allclose(g, r.T, atol=1e-9)
    # the tracker finds the same once decisions are right
    dec, g2 = bl.kabsch_track(vy, r.T @ rot4_from_params(0.01, np.zeros(3)), c, bl.KabschConfig())
    np.testing.assert_array_equal(dec, idx)
    np.testing.assert_allclose(g2, r.T, atol=1e-9)


def test_kabsch_kernel_matches_reference_and_stays_in_so4():
    c = build_constellation("PM-16-QAM")
    rng = RngStream(3)
    x = c.points[rng.child(0).integers(c.size, 4000)]
    p = NoiseParams.from_products(1e-5, 1e-5, 18.0)
    ch = init_channel(p, rng.child(1))
    y, _ = propagate(ch, x)
    g0 = embed_jones(np.linalg.inv(ch.t_matrix))
    vy = vec4_from_jones(y)
    d1, g1 = bl.kabsch_track(vy, g0, c, bl.KabschConfig())
    d2, g2 = bl.kabsch_reference(vy, g0, c, bl.KabschConfig())
    np.testing.assert_array_equal(d1, d2)
    np.testing.assert_allclose(g1, g2, atol=1e-9)
    np.testing.assert_allclose(g1.T @ g1, np.eye(4), atol=1e-9)
    assert np.linalg.det(g1) == pytest.approx(1.0, abs=1e-9)


def test_procrustes_beats_random_rotations():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(16, 4))
    r = special_ortho_group.rvs(4, random_state=5)
    y = x @ r.T
    g = bl.procrustes(x.T @ y)
    best = np.linalg.norm(y @ g.T - x)
    rand = special_ortho_group.rvs(4, size=1000, random_state=6)
    assert all(best < np.linalg.norm(y @ q.T - x) for q in rand)
    assert np.linalg.det(g) == pytest.approx(1.0)


def test_procrustes_stays_proper_for_reflections():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(16, 4))
    y = x * np.array([1, 1, 1, -1])  # best orthogonal fit would be a reflection
    assert np.linalg.det(bl.procrustes(x.T @ y)) == pytest.approx(1.0)


# ---- CMA / MMA -----------------------------------------------------------------


def test_cma_stationary_when_modulus_matches():
    c = build_constellation("PM-QPSK")
    r = c.mma_radii[0]
    w = np.eye(2, dtype=complex)
    y = np.array([r + 0j, 1j * r])
    _, w2 = bl.cma_mma_step(w, y, 0.16, c.mma_radii)
    np.testing.assert_array_equal(w2, w)
    z = np.empty((1, 2), dtype=complex)
    w3 = w.copy()
    bl.kernels.cma(y[None, :], w3, 0.16, c.mma_radii[None, :], np.array([1]), np.zeros(0, dtype=np.int64), z)
    np.testing.assert_array_equal(w3, w)


def test_cma_stationary_at_channel_inverse():
    c, _, x = _symbols("PM-QPSK", 500, 8)
    t = jones_combined(0.3, sop_from_unit4(np.random.default_rng(9).normal(size=4)))
    y = x @ t.T
    w0 = np.linalg.inv(t)
    _, w = bl.run_cma(y, w0, bl.CmaConfig(0.16), [c.mma_radii])
    np.testing.assert_allclose(w, w0, atol=1e-12)


def test_cma_converges_on_static_channel():
    c, _, x = _symbols("PM-QPSK", 10_000, 10)
    t = jones_combined(0.7, sop_from_unit4(np.random.default_rng(11).normal(size=4)))
    z, _ = bl.run_cma(x @ t.T, np.eye(2), bl.CmaConfig.for_format("PM-QPSK"), [c.mma_radii])
    err = np.abs(c.mma_radii[0] ** 2 - np.abs(z[-1000:]) ** 2)
    assert np.mean(err) < 1e-3 * c.es


def test_cma_kernel_matches_reference():
    c, _, x = _symbols("PM-16-QAM", 3000, 12)
    rng = np.random.default_rng(13)
    y = x + 0.02 * (rng.normal(size=x.shape) + 1j * rng.normal(size=x.shape))
    stages = bl.radius_stages(c)
    cfg = bl.CmaConfig(0.04, stage_len=1000)
    z, w = bl.run_cma(y, np.eye(2), cfg, stages)
    wr = np.eye(2, dtype=complex)
    for k in range(len(y)):
        zk, wr = bl.cma_mma_step(wr, y[k], cfg.mu, stages[min(k // cfg.stage_len, len(stages) - 1)])
        np.testing.assert_allclose(z[k], zk, atol=1e-12)
    np.testing.assert_allclose(w, wr, atol=1e-12)


def test_radius_stages():
    s64 = bl.radius_stages(build_constellation("PM-64-QAM"))
    assert [len(s) for s in s64] == [1, 3, 9]
    s16 = bl.radius_stages(build_constellation("PM-16-QAM"))
    assert [len(s) for s in s16] == [1, 3]
    assert s16[0][0] == pytest.approx(math.sqrt(0.5 * 1.32))
    assert len(bl.radius_stages(build_constellation("PM-16-QAM"), staged=False)) == 1
    assert [len(s) for s in bl.radius_stages(build_constellation("PS-QPSK"))] == [2]


# ---- BPS -----------------------------------------------------------------------


def test_bps_noiseless_zero_phase():
    c = build_constellation("PM-16-QAM")
    z = c.alphabet[np.random.default_rng(14).integers(0, 16, 19)]
    phi, idx = bl.bps_decide(z, bl.BpsConfig(), c)
    assert phi == 0.0
    assert c.alphabet[idx] == z[9]
    np.testing.assert_array_equal(bl.bps_track(z, bl.BpsConfig(), c), 0.0)


def test_bps_picks_nearest_grid_phase():
    c = build_constellation("PM-16-QAM")
    cfg = bl.BpsConfig(19, 32)
    z = c.alphabet[np.random.default_rng(15).integers(0, 16, 19)] * np.exp(1j * math.pi / 16)
    grid = bl.phase_grid(cfg)
    assert grid[1] - grid[0] == pytest.approx(math.pi / 64)
    phi, _ = bl.bps_decide(z, cfg, c)
    assert phi == grid[np.argmin(np.abs(grid + math.pi / 16))]
    assert phi == pytest.approx(-math.pi / 16)


@pytest.mark.parametrize("name", ["PM-QPSK", "PM-16-QAM", "PS-QPSK"])
def test_bps_kernel_matches_reference(name):
    c = build_constellation(name)
    rng = np.random.default_rng(16)
    n = 600
    x = c.points[rng.integers(0, c.size, n), 0]
    walk = np.cumsum(rng.normal(0, 0.03, n))
    z = x * np.exp(1j * walk) + 0.03 * (rng.normal(size=n) + 1j * rng.normal(size=n))
    cfg = bl.BpsConfig.for_format(name)
    np.testing.assert_allclose(bl.bps_track(z, cfg, c), bl.bps_reference(z, cfg, c), atol=1e-12)


def test_bps_window_duplication_keeps_argmin():
    c = build_constellation("PM-16-QAM")
    rng = np.random.default_rng(17)
    z = c.alphabet[rng.integers(0, 16, 19)] * np.exp(0.2j) + 0.05 * rng.normal(size=19)
    phi1, _ = bl.bps_decide(z, bl.BpsConfig(), c)
    phi2, _ = bl.bps_decide(np.tile(z, 3), bl.BpsConfig(57, 32), c)
    assert phi1 == phi2


def test_bps_unwraps_against_previous_estimate():
    c = build_constellation("PM-QPSK")
    n = 4000
    rng = np.random.default_rng(18)
    x = c.alphabet[rng.integers(0, 4, n)]
    ramp = np.linspace(0, 3 * math.pi, n)  # more than a full quadrant of drift
    phases = bl.bps_track(x * np.exp(1j * ramp), bl.BpsConfig(), c)
    assert np.max(np.abs(np.diff(phases))) < 0.1
    assert phases[-1] == pytest.approx(-3 * math.pi, abs=math.pi / 64)


# ---- chain -------------------------------------------------------------------


@pytest.mark.parametrize("name", ["PM-QPSK", "PM-16-QAM"])
def test_chain_static_noiseless(name):
    c = build_constellation(name)
    rng = RngStream(19)
    n = 20_000
    data = rng.child(0).integers(c.size, n)
    x = c.points[diff_encode(data, c)]
    t = jones_combined(0.4, sop_from_unit4(rng.child(1).normal(4)))
    dec, _, _ = bl.mma_bps_chain(x @ t.T, c, bl.CmaConfig.for_format(name), bl.BpsConfig.for_format(name),
                                 w0=np.linalg.inv(t))
    decoded = diff_decode(dec, c)
    assert np.count_nonzero(decoded[1:] != data[1:]) == 0
