"""The compiled kernels and their plain-numpy sources agree.

When acceleration is on, each public kernel is a compiled build of the
same source that stays importable in pure form, so any semantic drift
introduced by compilation shows up as a mismatch here.  With
``LANEGAP_NUMBA=0`` both sides are the same functions and the checks are
trivially green, which keeps the suite runnable without a compiler.
"""

import importlib.util

import numpy as np
import pytest

from lanegap import _accel, kernels


@pytest.fixture(scope="module")
def pure():
    """A copy of the kernels module with compilation forced off."""
    old = _accel.NUMBA_ENABLED
    _accel.NUMBA_ENABLED = False
    try:
        spec = importlib.util.spec_from_file_location(
            "lanegap._kernels_pure_copy", kernels.__file__)
        mod = importlib.util.module_from_spec(spec)
        spec.loader.exec_module(mod)
    finally:
        _accel.NUMBA_ENABLED = old
    return mod


def scan_inputs(rng, T=12, B=3, H=5):
    ex = rng.standard_normal((T, B, 4 * H))
    wh_t = rng.standard_normal((H, 4 * H)) * 0.3
    mask = np.ones((T, B))
    mask[T - 3:, 1] = 0.0  # one sequence ends early
    return ex, wh_t, mask


@pytest.mark.parametrize("reverse,reset_every", [(0, 0), (1, 0), (1, 5)])
def test_forward_scan_matches_numpy(pure, reverse, reset_every):
    rng = np.random.default_rng(3)
    ex, wh_t, mask = scan_inputs(rng)
    got = kernels.lstm_scan_fwd(ex, wh_t, mask, reverse, reset_every)
    want = pure.lstm_scan_fwd(ex, wh_t, mask, reverse, reset_every)
    for g, w in zip(got, want):
        np.testing.assert_allclose(g, w, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("reverse,reset_every", [(0, 0), (1, 5)])
def test_backward_scan_matches_numpy(pure, reverse, reset_every):
    rng = np.random.default_rng(4)
    ex, wh_t, mask = scan_inputs(rng)
    gates, cs, hs = pure.lstm_scan_fwd(ex, wh_t, mask, reverse, reset_every)
    wh = np.ascontiguousarray(wh_t.T)
    dh_out = rng.standard_normal(hs.shape)
    got = kernels.lstm_scan_bwd(gates, cs, hs, wh, mask, dh_out,
                                reverse, reset_every)
    want = pure.lstm_scan_bwd(gates, cs, hs, wh, mask, dh_out,
                              reverse, reset_every)
    for g, w in zip(got, want):
        np.testing.assert_allclose(g, w, rtol=1e-12, atol=1e-12)


def test_platoon_rollout_matches_numpy(pure):
    rng = np.random.default_rng(5)
    n = 6
    pos0 = np.sort(rng.uniform(0.0, 200.0, n))[::-1].copy()
    vel0 = rng.uniform(5.0, 30.0, n)
    length = np.full(n, 4.5)
    leader = np.arange(-1, n - 1, dtype=np.int64)
    is_idm = np.ones(n, dtype=np.int64)
    is_idm[0] = 0  # lead car keeps its speed
    params = np.tile(np.array([30.0, 2.0, 1.5, 1.4, 2.0, 4.0]), (n, 1))
    order = np.arange(n, dtype=np.int64)
    args = (pos0, vel0, length, leader, is_idm, params, order, 80, 0.1)
    got_pos, got_vel = kernels.advance_states(*args)
    want_pos, want_vel = pure.advance_states(*args)
    np.testing.assert_allclose(got_pos, want_pos, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(got_vel, want_vel, rtol=1e-12, atol=1e-12)


def test_smo_solver_matches_numpy(pure):
    rng = np.random.default_rng(6)
    x = rng.standard_normal((40, 2))
    y = np.where(x[:, 0] + x[:, 1] > 0.0, 1.0, -1.0)
    sq = np.sum(x ** 2, axis=1)
    K = np.exp(-0.5 * (sq[:, None] + sq[None, :] - 2.0 * x @ x.T))
    a1, b1, s1 = kernels.smo_solve(K, y, 1.0, 1e-3, 100)
    a2, b2, s2 = pure.smo_solve(K, y, 1.0, 1e-3, 100)
    np.testing.assert_allclose(a1, a2, rtol=1e-10, atol=1e-10)
    assert b1 == pytest.approx(b2, abs=1e-10)
    assert s1 == s2
