"""Hot numeric kernels: recurrent scans, car-following rollouts, SMO.

Every kernel is written as a plain numpy function and compiled with numba
through :func:`lanegap._accel.jit_kernel`.  Set ``LANEGAP_NUMBA=0`` to run
the pure numpy path; ``benchmarks/bench_kernels.py`` times both.

Conventions shared with the model code:

* gate columns of a ``4H``-wide block are ordered ``[input | forget |
  output | candidate]``;
* ``mask`` is 1.0 for valid frames and 0.0 for trailing padding — padding
  may only follow the valid frames of a sequence;
* scans with ``reverse=1`` consume the sequence back to front and clear
  their state at segment boundaries aligned to the sequence start, i.e.
  segment ``k`` covers frames ``[k*reset_every, (k+1)*reset_every)``.
"""

import numpy as np

from ._accel import jit_kernel

__all__ = [
    "lstm_scan_fwd",
    "lstm_scan_bwd",
    "advance_states",
    "smo_solve",
]


# ---------------------------------------------------------------------------
# recurrent scans

def _lstm_scan_fwd_impl(ex, wh_t, mask, reverse, reset_every):
    """Run an LSTM over a padded batch of sequences.

    ex:      (T, B, 4H) input projections with bias already added
    wh_t:    (H, 4H) recurrent weights, laid out so z += h @ wh_t
    mask:    (T, B) validity flags
    reverse: 0 scans t = 0..T-1, 1 scans t = T-1..0
    reset_every: 0 keeps one segment; k > 0 clears state at segment
        boundaries aligned to the sequence start

    Returns (gates, cs, hs): post-activation gates (T, B, 4H) and the
    masked cell/hidden trajectories (T, B, H).
    """
    T, B, G = ex.shape
    H = G // 4
    gates = np.zeros((T, B, G))
    cs = np.zeros((T, B, H))
    hs = np.zeros((T, B, H))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    for k in range(T):
        t = T - 1 - k if reverse == 1 else k
        if reverse == 1:
            fresh = (t == T - 1) or (reset_every > 0 and (t + 1) % reset_every == 0)
        else:
            fresh = (t == 0) or (reset_every > 0 and t % reset_every == 0)
        if fresh:
            h = np.zeros((B, H))
            c = np.zeros((B, H))
        z = ex[t] + np.dot(h, wh_t)
        gi = 1.0 / (1.0 + np.exp(-z[:, 0:H]))
        gf = 1.0 / (1.0 + np.exp(-z[:, H:2 * H]))
        go = 1.0 / (1.0 + np.exp(-z[:, 2 * H:3 * H]))
        gg = np.tanh(z[:, 3 * H:4 * H])
        c_new = gf * c + gi * gg
        h_new = go * np.tanh(c_new)
        m = mask[t].copy().reshape(B, 1)
        h = h_new * m
        c = c_new * m
        gates[t, :, 0:H] = gi
        gates[t, :, H:2 * H] = gf
        gates[t, :, 2 * H:3 * H] = go
        gates[t, :, 3 * H:4 * H] = gg
        cs[t] = c
        hs[t] = h
    return gates, cs, hs


def _lstm_scan_bwd_impl(gates, cs, hs, wh, mask, dh_out, reverse, reset_every):
    """Backpropagate through :func:`lstm_scan_fwd`.

    wh is the (4H, H) contiguous transpose of the wh_t used in the forward
    pass.  dh_out holds the loss gradient w.r.t. the masked hidden states.
    Returns (dex, dwh_t): gradients for the input projections and for wh_t.
    """
    T, B, G = gates.shape
    H = G // 4
    dex = np.zeros((T, B, G))
    dwh_t = np.zeros((H, G))
    dh_carry = np.zeros((B, H))
    dc_carry = np.zeros((B, H))
    for k in range(T - 1, -1, -1):
        t = T - 1 - k if reverse == 1 else k
        if reverse == 1:
            fresh = (t == T - 1) or (reset_every > 0 and (t + 1) % reset_every == 0)
            pt = t + 1
        else:
            fresh = (t == 0) or (reset_every > 0 and t % reset_every == 0)
            pt = t - 1
        m = mask[t].copy().reshape(B, 1)
        gi = gates[t, :, 0:H]
        gf = gates[t, :, H:2 * H]
        go = gates[t, :, 2 * H:3 * H]
        gg = gates[t, :, 3 * H:4 * H]
        tc = np.tanh(cs[t])  # cs stores masked values; grads vanish where m=0
        dh_total = (dh_out[t] + dh_carry) * m
        do = dh_total * tc
        dc_total = dc_carry * m + dh_total * go * (1.0 - tc * tc)
        if fresh:
            h_prev = np.zeros((B, H))
            c_prev = np.zeros((B, H))
        else:
            h_prev = hs[pt]
            c_prev = cs[pt]
        di = dc_total * gg
        dg = dc_total * gi
        df = dc_total * c_prev
        dex[t, :, 0:H] = di * gi * (1.0 - gi)
        dex[t, :, H:2 * H] = df * gf * (1.0 - gf)
        dex[t, :, 2 * H:3 * H] = do * go * (1.0 - go)
        dex[t, :, 3 * H:4 * H] = dg * (1.0 - gg * gg)
        dz = dex[t]
        dwh_t += np.dot(h_prev.T.copy(), dz)
        if fresh:
            dh_carry = np.zeros((B, H))
            dc_carry = np.zeros((B, H))
        else:
            dh_carry = np.dot(dz, wh)
            dc_carry = dc_total * gf
    return dex, dwh_t


# ---------------------------------------------------------------------------
# car-following rollout

def _advance_states_impl(pos0, vel0, length, leader, is_idm, params, order,
                         n_steps, dt):
    """Advance a set of coupled vehicles over n_steps of size dt.

    pos0, vel0, length: (N,) state; leader: (N,) int64 index, -1 = free road;
    is_idm: (N,) int64, 0 = constant velocity; params rows are
    [v0, min_gap, headway, max_accel, comfort_decel, exponent];
    order: (N,) int64 update order, leaders before their followers.

    Accelerations are evaluated synchronously from the current state.  A
    non-positive gap snaps the follower to the leader's speed and a 0.1 m
    gap; after every update the gap floor is re-imposed so trajectories
    never interpenetrate.

    Returns (pos, vel) with shape (n_steps + 1, N).
    """
    N = pos0.shape[0]
    pos = np.zeros((n_steps + 1, N))
    vel = np.zeros((n_steps + 1, N))
    pos[0] = pos0
    vel[0] = vel0
    acc = np.zeros(N)
    degen = np.zeros(N, np.int64)
    for k in range(n_steps):
        for n in range(N):
            acc[n] = 0.0
            degen[n] = 0
            if is_idm[n] == 0:
                continue
            v = vel[k, n]
            v0 = params[n, 0]
            s0 = params[n, 1]
            th = params[n, 2]
            a = params[n, 3]
            b = params[n, 4]
            ex = params[n, 5]
            ld = leader[n]
            if ld < 0:
                acc[n] = a * (1.0 - (v / v0) ** ex)
            else:
                s = pos[k, ld] - pos[k, n] - length[ld]
                if s <= 0.0:
                    degen[n] = 1
                else:
                    dv = v - vel[k, ld]
                    sstar = s0 + v * th + v * dv / (2.0 * np.sqrt(a * b))
                    if sstar < 0.0:
                        sstar = 0.0
                    acc[n] = a * (1.0 - (v / v0) ** ex - (sstar / s) * (sstar / s))
        for j in range(N):
            n = order[j]
            ld = leader[n]
            if is_idm[n] == 0:
                vel[k + 1, n] = vel[k, n]
                pos[k + 1, n] = pos[k, n] + vel[k, n] * dt
                continue
            if ld >= 0 and degen[n] == 1:
                vel[k + 1, n] = vel[k, ld]
                pos[k + 1, n] = pos[k + 1, ld] - length[ld] - 0.1
                continue
            vn = vel[k, n] + acc[n] * dt
            if vn < 0.0:
                vn = 0.0
            vel[k + 1, n] = vn
            pos[k + 1, n] = pos[k, n] + vn * dt
            if ld >= 0:
                lim = pos[k + 1, ld] - length[ld] - 0.1
                if pos[k + 1, n] > lim:
                    pos[k + 1, n] = lim
                    if vel[k + 1, n] > vel[k + 1, ld]:
                        vel[k + 1, n] = vel[k + 1, ld]
    return pos, vel


# ---------------------------------------------------------------------------
# sequential minimal optimization

def _smo_take_step_impl(K, y, C, tol, alphas, E, b, i1, i2):
    """Attempt a joint optimization of alphas[i1], alphas[i2].

    Mutates alphas and E in place.  Returns (changed, new_b).
    """
    if i1 == i2:
        return 0, b
    a1_old = alphas[i1]
    a2_old = alphas[i2]
    y1 = y[i1]
    y2 = y[i2]
    e1 = E[i1]
    e2 = E[i2]
    s = y1 * y2
    if s > 0.0:
        lo = max(0.0, a2_old + a1_old - C)
        hi = min(C, a2_old + a1_old)
    else:
        lo = max(0.0, a2_old - a1_old)
        hi = min(C, C + a2_old - a1_old)
    if lo >= hi:
        return 0, b
    k11 = K[i1, i1]
    k12 = K[i1, i2]
    k22 = K[i2, i2]
    eta = k11 + k22 - 2.0 * k12
    if eta <= 0.0:
        # duplicate points under a PSD kernel; nothing to gain
        return 0, b
    a2 = a2_old + y2 * (e1 - e2) / eta
    if a2 < lo:
        a2 = lo
    elif a2 > hi:
        a2 = hi
    if abs(a2 - a2_old) < 1e-8 * (a2 + a2_old + 1e-8):
        return 0, b
    a1 = a1_old + s * (a2_old - a2)
    if a1 < 0.0:
        a1 = 0.0
    d1 = a1 - a1_old
    d2 = a2 - a2_old
    b1 = b - e1 - y1 * d1 * k11 - y2 * d2 * k12
    b2 = b - e2 - y1 * d1 * k12 - y2 * d2 * k22
    if 0.0 < a1 < C:
        b_new = b1
    elif 0.0 < a2 < C:
        b_new = b2
    else:
        b_new = 0.5 * (b1 + b2)
    alphas[i1] = a1
    alphas[i2] = a2
    for i in range(E.shape[0]):
        E[i] += y1 * d1 * K[i1, i] + y2 * d2 * K[i2, i] + (b_new - b)
    return 1, b_new


def _smo_examine_impl(K, y, C, tol, alphas, E, b, i2):
    """Platt's examineExample with deterministic candidate sweeps."""
    n = alphas.shape[0]
    y2 = y[i2]
    a2 = alphas[i2]
    e2 = E[i2]
    r2 = e2 * y2
    if not ((r2 < -tol and a2 < C) or (r2 > tol and a2 > 0.0)):
        return 0, b
    # best |E1 - E2| over non-bound multipliers
    best = -1.0
    i1 = -1
    for i in range(n):
        if 0.0 < alphas[i] < C:
            gap = abs(E[i] - e2)
            if gap > best:
                best = gap
                i1 = i
    if i1 >= 0:
        changed, b = _smo_take_step_impl(K, y, C, tol, alphas, E, b, i1, i2)
        if changed == 1:
            return 1, b
    # sweep non-bound, then all, from a position derived from i2
    start = (i2 + 1) % n
    for k in range(n):
        i = (start + k) % n
        if 0.0 < alphas[i] < C:
            changed, b = _smo_take_step_impl(K, y, C, tol, alphas, E, b, i, i2)
            if changed == 1:
                return 1, b
    for k in range(n):
        i = (start + k) % n
        changed, b = _smo_take_step_impl(K, y, C, tol, alphas, E, b, i, i2)
        if changed == 1:
            return 1, b
    return 0, b


def _smo_solve_impl(K, y, C, tol, max_iter):
    """Solve the soft-margin dual over a precomputed Gram matrix.

    Returns (alphas, b, sweeps).  The loop alternates full sweeps with
    sweeps over non-bound multipliers until no pair moves, matching the
    stopping rule "no multiplier violates its optimality condition by more
    than tol".
    """
    n = K.shape[0]
    alphas = np.zeros(n)
    b = 0.0
    E = -y.copy()
    sweeps = 0
    examine_all = 1
    num_changed = 1
    while (num_changed > 0 or examine_all == 1) and sweeps < max_iter:
        sweeps += 1
        if examine_all == 1:
            # periodic exact refresh keeps the cache drift-free
            f = np.dot(K, alphas * y)
            for i in range(n):
                E[i] = f[i] + b - y[i]
        num_changed = 0
        for i in range(n):
            if examine_all == 1 or 0.0 < alphas[i] < C:
                changed, b = _smo_examine_impl(K, y, C, tol, alphas, E, b, i)
                num_changed += changed
        if examine_all == 1:
            examine_all = 0
        elif num_changed == 0:
            examine_all = 1
    return alphas, b, sweeps


lstm_scan_fwd = jit_kernel(_lstm_scan_fwd_impl)
lstm_scan_bwd = jit_kernel(_lstm_scan_bwd_impl)
advance_states = jit_kernel(_advance_states_impl)
_smo_take_step_impl = jit_kernel(_smo_take_step_impl)
_smo_examine_impl = jit_kernel(_smo_examine_impl)
smo_solve = jit_kernel(_smo_solve_impl)
