import math

import numpy as np
import pytest

from polartrack import tracker as tr
from polartrack.algebra import (
    embed_jones, jones_combined, mueller_from_sop, sop_from_unit4, stokes_from_jones, unitarity_error, vec4_from_jones,
)
from polartrack.channel import NoiseParams, RngStream, init_channel, propagate
from polartrack.constellations import build_constellation, diff_encode

H_FD = 1e-6
MU = 0.01


def random_unitary(rng):
    return jones_combined(rng.uniform(0, 2 * math.pi), sop_from_unit4(rng.normal(size=4)))


def random_y(rng):
    y = rng.normal(size=2) + 1j * rng.normal(size=2)
    return y / np.linalg.norm(y)


def fixed_steps(name="PM-QPSK", mu=MU):
    return tr.StepParams.for_format(name, stage_switch_k=-1, mu_ph=mu, mu_sop=mu)


def central_diff(f, x0):
    g = np.empty(len(x0))
    for i in range(len(x0)):
        e = np.zeros(len(x0))
        e[i] = H_FD
        g[i] = (f(x0 + e) - f(x0 - e)) / (2 * H_FD)
    return g


def rel_err(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


# ---- step sizes -------------------------------------------------------------


def test_step_size_schedule():
    p = NoiseParams(delta_nu=1e6, delta_p=1e3)
    s = tr.StepParams.for_format("PM-16-QAM")
    assert tr.step_sizes(1000, s, p, 1.0) == (0.1, 0.1)
    assert tr.step_sizes(2000, s, p, 1.0) == (0.1, 0.1)
    mu_ph, mu_sop = tr.step_sizes(2001, s, p, 1.0)
    assert mu_ph == pytest.approx(math.sqrt(1e6 / 28e9 * 400))
    assert mu_sop == pytest.approx(math.sqrt(1e3 / 28e9 * 400))
    assert tr.step_sizes(5000, s, NoiseParams(), 2.0) == (0.5e-4, 0.5e-4)


def test_step_params_validation():
    with pytest.raises(ValueError):
        tr.StepParams(64, sop_period=0)


# ---- single-step examples ---------------------------------------------------


@pytest.mark.parametrize("name", ["PM-QPSK", "PM-16-QAM", "PS-QPSK"])
def test_zero_residual_leaves_state_unchanged(name):
    c = build_constellation(name)
    p = NoiseParams(1e5, 1e3)
    st = tr.TrackerState(np.eye(2, dtype=complex), tr.StepParams.for_format(name), p)
    _, st2 = tr.track_jones(st, c.points[3], c)
    np.testing.assert_array_equal(st2.last_update, 0)
    np.testing.assert_allclose(st2.h_matrix, np.eye(2), atol=0)
    r4 = tr.Rot4TrackerState(np.eye(4), tr.StepParams.for_format(name), p)
    _, r42 = tr.track_rot4(r4, vec4_from_jones(c.points[3]), c)
    np.testing.assert_array_equal(r42.last_update, 0)
    ss = tr.StokesTrackerState(np.eye(3), tr.StepParams.for_format(name), p)
    _, ss2 = tr.track_stokes(ss, stokes_from_jones(c.points[3]), c)
    np.testing.assert_allclose(ss2.last_update, 0, atol=1e-15)


def test_phase_example():
    y = np.array([np.exp(0.1j), 0])
    g_theta, g_alpha = tr.jones_gradient(np.eye(2), y, np.array([1, 0]))
    mu = 0.03
    assert -mu * g_theta == pytest.approx(-2 * mu * math.sin(0.1), rel=1e-14)
    np.testing.assert_allclose(g_alpha[1:], 0, atol=1e-15)


# ---- finite-difference gradient oracle --------------------------------------


def _random_jones_cases(n, seed):
    rng = np.random.default_rng(seed)
    c = build_constellation("PM-16-QAM")
    for _ in range(n):
        h = random_unitary(rng)
        y = random_y(rng)
        yield c, h, y


def test_jones_gradient_matches_finite_differences():
    worst = 0.0
    for c, h, y in _random_jones_cases(100, 1):
        st = tr.TrackerState(h, fixed_steps("PM-16-QAM"), NoiseParams())
        idx, st2 = tr.track_jones(st, y, c)
        xhat = c.points[idx]
        fd = central_diff(lambda p: tr.jones_error(h, y, xhat, p[0], p[1:]), np.zeros(4))
        worst = max(worst, rel_err(st2.last_update / -MU, fd))
    assert worst < 1e-6


def test_rot4_gradient_matches_finite_differences():
    worst = 0.0
    for c, h, y in _random_jones_cases(100, 2):
        r = embed_jones(h)
        vy = vec4_from_jones(y)
        st = tr.Rot4TrackerState(r, fixed_steps("PM-16-QAM"), NoiseParams())
        idx, st2 = tr.track_rot4(st, vy, c)
        vhat = vec4_from_jones(c.points[idx])
        fd = central_diff(lambda p: tr.rot4_error(r, vy, vhat, p[0], p[1:]), np.zeros(4))
        worst = max(worst, rel_err(st2.last_update / -MU, fd))
    assert worst < 1e-6


def test_stokes_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    c = build_constellation("PM-QPSK")
    worst = 0.0
    for _ in range(100):
        m = mueller_from_sop(sop_from_unit4(rng.normal(size=4)))
        s_y = stokes_from_jones(random_y(rng))
        st = tr.StokesTrackerState(m, fixed_steps(), NoiseParams())
        j, st2 = tr.track_stokes(st, s_y, c)
        s_hat = c.stokes_points[j]
        fd = central_diff(lambda a: tr.stokes_error(m, s_y, s_hat, a), np.zeros(3))
        worst = max(worst, rel_err(st2.last_update / -MU, fd))
    assert worst < 1e-6


def test_descent_property():
    rng = np.random.default_rng(4)
    c = build_constellation("PM-16-QAM")
    mu = 1e-4
    for _ in range(1000):
        h = random_unitary(rng)
        y = random_y(rng)
        st = tr.TrackerState(h, fixed_steps("PM-16-QAM", mu), NoiseParams())
        idx, st2 = tr.track_jones(st, y, c)
        xhat = c.points[idx]
        before = tr.jones_error(h, y, xhat, 0, np.zeros(3))
        after = tr.jones_error(st2.h_matrix, y, xhat, 0, np.zeros(3))
        assert after < before or np.allclose(st2.last_update, 0)
        m = mueller_from_sop(sop_from_unit4(rng.normal(size=4)))
        s_y = stokes_from_jones(y)
        ss = tr.StokesTrackerState(m, fixed_steps(mu=mu), NoiseParams())
        j, ss2 = tr.track_stokes(ss, s_y, build_constellation("PM-QPSK"))
        s_hat = build_constellation("PM-QPSK").stokes_points[j]
        assert np.sum((ss2.m_inv @ s_y - s_hat) ** 2) <= np.sum((m @ s_y - s_hat) ** 2)


# ---- compiled runners -------------------------------------------------------


def _link(name, n, seed, delta_nu=1e6, delta_p=1e4, snr_db=18.0):
    c = build_constellation(name)
    rng = RngStream(seed)
    data = rng.child(0).integers(c.size, n)
    x = c.points[diff_encode(data, c)]
    p = NoiseParams.from_products(delta_nu / 28e9, delta_p / 28e9, snr_db)
    ch = init_channel(p, rng.child(1))
    y, _ = propagate(ch, x)
    return c, p, ch, x, y


@pytest.mark.parametrize("name", ["PM-QPSK", "PM-16-QAM", "PS-QPSK"])
def test_kernel_matches_reference(name):
    c, p, _, _, y = _link(name, 2500, 5)
    st = tr.TrackerState(np.eye(2, dtype=complex), tr.StepParams.for_format(name, sop_period=3), p)
    ref = st
    dec_ref = []
    taps_ref = []
    for yk in y:
        idx, ref = tr.track_jones(ref, yk, c)
        dec_ref.append(idx)
        taps_ref.append(ref.last_update)
    dec, out, taps = tr.run_jones(st, y, c, record=True)
    np.testing.assert_array_equal(dec, dec_ref)
    np.testing.assert_allclose(taps, taps_ref, atol=1e-12)
    np.testing.assert_allclose(out.h_matrix, ref.h_matrix, atol=1e-10)
    assert out.k == ref.k == 2500


def test_rot4_and_stokes_kernels_match_reference():
    c, p, _, _, y = _link("PM-QPSK", 2200, 6)
    steps = tr.StepParams.for_format("PM-QPSK")
    vy = vec4_from_jones(y)
    ref = tr.Rot4TrackerState(np.eye(4), steps, p)
    dec_ref = []
    for v in vy:
        idx, ref = tr.track_rot4(ref, v, c)
        dec_ref.append(idx)
    dec, out, _ = tr.run_rot4(tr.Rot4TrackerState(np.eye(4), steps, p), vy, c)
    np.testing.assert_array_equal(dec, dec_ref)
    np.testing.assert_allclose(out.r_inv, ref.r_inv, atol=1e-10)

    sy = stokes_from_jones(y)
    sref = tr.StokesTrackerState(np.eye(3), steps, p)
    sdec = []
    for s in sy:
        j, sref = tr.track_stokes(sref, s, c)
        sdec.append(j)
    dec, sout, _ = tr.run_stokes(tr.StokesTrackerState(np.eye(3), steps, p), sy, c)
    np.testing.assert_array_equal(dec, sdec)
    np.testing.assert_allclose(sout.m_inv, sref.m_inv, atol=1e-10)


@pytest.mark.parametrize("name", ["PM-QPSK", "PM-16-QAM", "PS-QPSK"])
def test_jones_rot4_equivalence(name):
    c, p, _, _, y = _link(name, 10_000, 7)
    steps = tr.StepParams.for_format(name, sop_period=2)
    dj, sj, tj = tr.run_jones(tr.TrackerState(np.eye(2, dtype=complex), steps, p), y, c, record=True)
    dr, sr, tr4 = tr.run_rot4(tr.Rot4TrackerState(np.eye(4), steps, p), vec4_from_jones(y), c, record=True)
    np.testing.assert_array_equal(dj, dr)
    assert np.max(np.abs(tj - tr4)) < 1e-10
    assert np.max(np.abs(embed_jones(sj.h_matrix) - sr.r_inv)) < 1e-9


def test_blind_tracker_locks():
    c, p, ch, x, y = _link("PM-QPSK", 20_000, 8)
    dec, st, _ = tr.run_jones(tr.TrackerState(np.eye(2, dtype=complex), tr.StepParams.for_format("PM-QPSK"), p), y, c)
    # after convergence every decision matches the sent symbol up to a fixed quadrant rotation or swap
    z = (st.h_matrix @ y[-1000:].T).T
    err = np.abs(np.abs(z) - np.abs(c.points[dec[-1000:]]))
    assert np.mean(err) < 0.1


def test_unitarity_after_many_updates():
    c, p, _, _, y = _link("PM-QPSK", 1_000_000, 9, delta_nu=1e6, delta_p=1e4, snr_db=15)
    st = tr.TrackerState(np.eye(2, dtype=complex), tr.StepParams.for_format("PM-QPSK"), p)
    _, out, _ = tr.run_jones(st, y, c)
    assert unitarity_error(out.h_matrix) <= 1e-9


def test_sop_period_freezes_polarization_part():
    c, p, _, _, y = _link("PM-QPSK", 5000, 10)
    steps = tr.StepParams.for_format("PM-QPSK", sop_period=1_000_000)
    st = tr.TrackerState(np.eye(2, dtype=complex), steps, p)
    _, st = tr.track_jones(st, y[0], c)  # k = 0 carries an SOP update
    ref = st.h_matrix / np.sqrt(np.linalg.det(st.h_matrix))
    _, out, taps = tr.run_jones(st, y[1:], c, record=True)
    np.testing.assert_array_equal(taps[:, 1:], 0)
    cur = out.h_matrix / np.sqrt(np.linalg.det(out.h_matrix))
    # equal up to the sign ambiguity of the square root
    assert abs(abs(np.trace(ref.conj().T @ cur)) / 2 - 1) < 1e-10


def test_no_preferred_direction():
    c = build_constellation("PM-QPSK")
    rng = RngStream(11)
    n = 100_000
    data = rng.child(0).integers(c.size, n)
    x = c.points[data]
    p = NoiseParams.from_products(0, 0, 20.0)
    ch = init_channel(p, rng.child(1))
    y, _ = propagate(ch, x)
    h0 = np.linalg.inv(ch.t_matrix)
    steps = tr.StepParams.for_format("PM-QPSK", stage_switch_k=-1, mu_ph=1e-9, mu_sop=1e-9)
    dec, _, taps = tr.run_jones(tr.TrackerState(h0, steps, p), y, c, record=True)
    assert np.mean(dec == data) > 0.999
    mean = taps.mean(axis=0)
    sem = taps.std(axis=0) / math.sqrt(n)
    assert np.all(np.abs(mean) < 3 * sem + 1e-30)


def test_stokes_phase_immunity():
    c, p, _, _, y = _link("PM-QPSK", 3000, 12)
    phases = np.exp(1j * np.random.default_rng(13).uniform(0, 2 * math.pi, len(y)))
    steps = tr.StepParams.for_format("PM-QPSK")
    d1, s1, _ = tr.run_stokes(tr.StokesTrackerState(np.eye(3), steps, p), stokes_from_jones(y), c)
    d2, s2, _ = tr.run_stokes(tr.StokesTrackerState(np.eye(3), steps, p), stokes_from_jones(y * phases[:, None]), c)
    np.testing.assert_array_equal(d1, d2)
    np.testing.assert_allclose(s1.m_inv, s2.m_inv, atol=1e-10)
