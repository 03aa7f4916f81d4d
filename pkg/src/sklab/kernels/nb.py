"""numba kernels. The vectorised twins live in :mod:`sklab.kernels.np_`.

The field argument ``F`` is the tuple produced by
:meth:`sklab.field.FieldTable.as_tuple`:

    (scales, amps, suffix, table, hu, ht, t_far,
     table_far, hu_far, ht_far, t_const, mean)

``table`` samples ``phi_0`` on ``[0, 3)^2 x {0, ht, ...}`` and ``table_far``
on ``[0, 3)^2 x {t_far, t_far + ht_far, ...}``; above ``t_const`` each scale
is replaced by the cell mean.
"""
import math

import numpy as np
from numba import njit

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_TWO53 = 1.0 / 9007199254740992.0
TWO_PI = 2.0 * math.pi

REASON_HORIZON = 0
REASON_INNER = 1
REASON_OUTER = 2
REASON_CLOCK = 3
REASON_LOCALTIME = 4


# ---------------------------------------------------------------- random


@njit(cache=True, inline="always")
def _mix(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True)
def path_key(seed, path):
    return _mix(_mix(np.uint64(seed)) + GOLDEN * (np.uint64(path) + _ONE))


@njit(cache=True, inline="always")
def _uniform(key, ctr):
    z = _mix(key + GOLDEN * (ctr + _ONE))
    return (float(z >> _S11) + 0.5) * _TWO53


@njit(cache=True, inline="always")
def _normal_pair(key, ctr):
    u1 = _uniform(key, ctr)
    u2 = _uniform(key, ctr + _ONE)
    r = math.sqrt(-2.0 * math.log(u1))
    a = TWO_PI * u2
    return r * math.cos(a), r * math.sin(a)


@njit(cache=True)
def normal_block(seed, path, step0, nsteps, dim):
    """Standard normals for ``nsteps`` consecutive steps of one path."""
    key = path_key(seed, path)
    npairs = (dim + 1) // 2
    out = np.empty((nsteps, dim))
    for s in range(nsteps):
        base = np.uint64(step0 + s) * np.uint64(2 * npairs)
        for q in range(npairs):
            z0, z1 = _normal_pair(key, base + np.uint64(2 * q))
            out[s, 2 * q] = z0
            if 2 * q + 1 < dim:
                out[s, 2 * q + 1] = z1
    return out


@njit(cache=True, inline="always")
def _normals3(key, step):
    base = np.uint64(step) * np.uint64(4)
    z0, z1 = _normal_pair(key, base)
    z2, _ = _normal_pair(key, base + np.uint64(2))
    return z0, z1, z2


# ------------------------------------------------------------ skorokhod


@njit(cache=True)
def skorokhod_1d(w):
    n = w.size
    y = np.empty(n)
    l = np.empty(n)
    run = 0.0
    for i in range(n):
        if -w[i] > run:
            run = -w[i]
        l[i] = run
        y[i] = w[i] + run
    return y, l


# ---------------------------------------------------------------- field


@njit(cache=True, inline="always")
def _lag4(tau):
    a = tau
    b = tau - 1.0
    c = tau - 2.0
    d = tau - 3.0
    return -b * c * d / 6.0, a * c * d / 2.0, -a * b * d / 2.0, a * b * c / 6.0


@njit(cache=True, inline="always")
def _t_stencil(t, t0, ht, nt):
    st = (t - t0) / ht
    it = int(math.floor(st)) - 1
    if it < 0:
        it = 0
    elif it > nt - 4:
        it = nt - 4
    return it, _lag4(st - it)


@njit(cache=True, inline="always")
def _wrap(u):
    return u - 3.0 * math.floor(u * (1.0 / 3.0))


@njit(cache=True)
def _phi0_table(u1, u2, it, tw, table, hu):
    # table carries one ghost column before and three after the period in u,
    # so the 4-point stencil never wraps
    s1 = u1 / hu
    f1 = math.floor(s1)
    i1 = int(f1)
    a0, a1, a2, a3 = _lag4(s1 - f1 + 1.0)
    s2 = u2 / hu
    f2 = math.floor(s2)
    i2 = int(f2)
    b0, b1, b2, b3 = _lag4(s2 - f2 + 1.0)
    acc = 0.0
    for a in range(4):
        w = tw[a]
        if w == 0.0:
            continue
        p = it + a
        pa = (a0 * (b0 * table[p, i1, i2] + b1 * table[p, i1, i2 + 1]
                    + b2 * table[p, i1, i2 + 2] + b3 * table[p, i1, i2 + 3])
              + a1 * (b0 * table[p, i1 + 1, i2] + b1 * table[p, i1 + 1, i2 + 1]
                      + b2 * table[p, i1 + 1, i2 + 2] + b3 * table[p, i1 + 1, i2 + 3])
              + a2 * (b0 * table[p, i1 + 2, i2] + b1 * table[p, i1 + 2, i2 + 1]
                      + b2 * table[p, i1 + 2, i2 + 2] + b3 * table[p, i1 + 2, i2 + 3])
              + a3 * (b0 * table[p, i1 + 3, i2] + b1 * table[p, i1 + 3, i2 + 1]
                      + b2 * table[p, i1 + 3, i2 + 2] + b3 * table[p, i1 + 3, i2 + 3]))
        acc += w * pa
    return acc


@njit(cache=True)
def phi_point(x1, x2, x3, F):
    (scales, amps, suffix, table, hu, ht, t_far,
     table_far, hu_far, ht_far, t_const, mean) = F
    x3 = abs(x3)
    acc = 0.0
    for m in range(scales.size):
        sc = scales[m]
        t = sc * x3
        if t >= t_const:
            acc += suffix[m] * mean
            break
        u1 = _wrap(sc * x1)
        u2 = _wrap(sc * x2)
        if t >= t_far:
            it, tw = _t_stencil(t, t_far, ht_far, table_far.shape[0])
            v = _phi0_table(u1, u2, it, tw, table_far, hu_far)
        else:
            it, tw = _t_stencil(t, 0.0, ht, table.shape[0])
            v = _phi0_table(u1, u2, it, tw, table, hu)
        acc += amps[m] * v
    return acc


@njit(cache=True)
def phi_pair(x1, x2, y1, y2, x3, F):
    """phi at (x1, x2, x3) and (y1, y2, x3); the shared height shares t-weights."""
    (scales, amps, suffix, table, hu, ht, t_far,
     table_far, hu_far, ht_far, t_const, mean) = F
    x3 = abs(x3)
    acc_x = 0.0
    acc_y = 0.0
    for m in range(scales.size):
        sc = scales[m]
        t = sc * x3
        if t >= t_const:
            tail = suffix[m] * mean
            acc_x += tail
            acc_y += tail
            break
        ux1 = _wrap(sc * x1)
        ux2 = _wrap(sc * x2)
        uy1 = _wrap(sc * y1)
        uy2 = _wrap(sc * y2)
        if t >= t_far:
            it, tw = _t_stencil(t, t_far, ht_far, table_far.shape[0])
            vx = _phi0_table(ux1, ux2, it, tw, table_far, hu_far)
            vy = _phi0_table(uy1, uy2, it, tw, table_far, hu_far)
        else:
            it, tw = _t_stencil(t, 0.0, ht, table.shape[0])
            vx = _phi0_table(ux1, ux2, it, tw, table, hu)
            vy = _phi0_table(uy1, uy2, it, tw, table, hu)
        acc_x += amps[m] * vx
        acc_y += amps[m] * vy
    return acc_x, acc_y


@njit(cache=True)
def phi_batch(points, F):
    n = points.shape[0]
    out = np.empty(n)
    for i in range(n):
        out[i] = phi_point(points[i, 0], points[i, 1], points[i, 2], F)
    return out


# ------------------------------------------------------------ half space


@njit(cache=True)
def _coupling_one(key, y0, y0p, S, F, dt, max_steps, dist_lo, dist_hi,
                  clock_max, lt_max, rec_every, rec):
    sq = math.sqrt(dt)
    y1 = y0[0]
    y2 = y0[1]
    y3 = y0[2]
    z1 = y0p[0]
    z2 = y0p[1]
    L = 0.0
    A = 0.0
    f, fp = phi_pair(y1, y2, z1, z2, y3, F)
    q_prev = (f - fp) * (f - fp)
    d0 = math.sqrt((y1 - z1) ** 2 + (y2 - z2) ** 2)
    maxd = d0
    reason = REASON_HORIZON
    nrec = 0
    if rec_every > 0:
        rec[0, 0] = 0.0
        rec[0, 1] = d0 * d0
        rec[0, 2] = 0.0
        rec[0, 3] = 0.0
        nrec = 1
    steps = 0
    for step in range(max_steps):
        g0, g1, g2 = _normals3(key, step)
        g0 *= sq
        g1 *= sq
        g2 *= sq
        h1 = S[0, 0] * g0 + S[0, 1] * g1 + S[0, 2] * g2
        h2 = S[1, 0] * g0 + S[1, 1] * g1 + S[1, 2] * g2
        y1 += h1 + f * g0
        y2 += h2 + f * g1
        z1 += h1 + fp * g0
        z2 += h2 + fp * g1
        y3 += S[2, 0] * g0 + S[2, 1] * g1 + S[2, 2] * g2
        if y3 < 0.0:
            L -= y3
            y3 = 0.0
        f, fp = phi_pair(y1, y2, z1, z2, y3, F)
        q = (f - fp) * (f - fp)
        A += 0.5 * dt * (q_prev + q)
        q_prev = q
        R = (y1 - z1) ** 2 + (y2 - z2) ** 2
        d = math.sqrt(R)
        if d > maxd:
            maxd = d
        steps = step + 1
        if rec_every > 0 and steps % rec_every == 0 and nrec < rec.shape[0]:
            rec[nrec, 0] = steps * dt
            rec[nrec, 1] = R
            rec[nrec, 2] = A
            rec[nrec, 3] = L
            nrec += 1
        if d <= dist_lo:
            reason = REASON_INNER
            break
        if d >= dist_hi:
            reason = REASON_OUTER
            break
        if A >= clock_max:
            reason = REASON_CLOCK
            break
        if L >= lt_max:
            reason = REASON_LOCALTIME
            break
    if rec_every > 0 and steps % rec_every != 0 and nrec < rec.shape[0]:
        rec[nrec, 0] = steps * dt
        rec[nrec, 1] = (y1 - z1) ** 2 + (y2 - z2) ** 2
        rec[nrec, 2] = A
        rec[nrec, 3] = L
        nrec += 1
    return steps, reason, y1, y2, y3, z1, z2, L, A, maxd, nrec


@njit(cache=True)
def coupling_batch(seed, path_ids, y0, y0p, S, F, dt, max_steps,
                   dist_lo, dist_hi, clock_max, lt_max):
    n = path_ids.size
    steps = np.empty(n, np.int64)
    reason = np.empty(n, np.int64)
    ys = np.empty((n, 3))
    yps = np.empty((n, 3))
    L = np.empty(n)
    A = np.empty(n)
    maxd = np.empty(n)
    rec = np.empty((0, 4))
    for p in range(n):
        key = path_key(seed, path_ids[p])
        out = _coupling_one(key, y0, y0p, S, F, dt, max_steps, dist_lo, dist_hi,
                            clock_max, lt_max, 0, rec)
        steps[p] = out[0]
        reason[p] = out[1]
        ys[p, 0] = out[2]
        ys[p, 1] = out[3]
        ys[p, 2] = out[4]
        yps[p, 0] = out[5]
        yps[p, 1] = out[6]
        yps[p, 2] = out[4]
        L[p] = out[7]
        A[p] = out[8]
        maxd[p] = out[9]
    return steps, reason, ys, yps, L, A, maxd


@njit(cache=True)
def coupling_trace(seed, path_id, y0, y0p, S, F, dt, max_steps,
                   dist_lo, dist_hi, clock_max, lt_max, rec_every):
    nmax = max_steps // rec_every + 2
    rec = np.empty((nmax, 4))
    key = path_key(seed, path_id)
    out = _coupling_one(key, y0, y0p, S, F, dt, max_steps, dist_lo, dist_hi,
                        clock_max, lt_max, rec_every, rec)
    return rec[: out[10]].copy(), out[0], out[1]


@njit(cache=True)
def halfspace_path(seed, path_id, y0, S, F, dt, max_steps, lt_max):
    """Single reflected path; returns (Y, L, steps, reason) with Y of shape (steps+1, 3)."""
    key = path_key(seed, path_id)
    sq = math.sqrt(dt)
    Y = np.empty((max_steps + 1, 3))
    Ls = np.empty(max_steps + 1)
    y1 = y0[0]
    y2 = y0[1]
    y3 = y0[2]
    L = 0.0
    Y[0, 0] = y1
    Y[0, 1] = y2
    Y[0, 2] = y3
    Ls[0] = 0.0
    f = phi_point(y1, y2, y3, F)
    steps = 0
    reason = REASON_HORIZON
    for step in range(max_steps):
        g0, g1, g2 = _normals3(key, step)
        g0 *= sq
        g1 *= sq
        g2 *= sq
        y1 += S[0, 0] * g0 + S[0, 1] * g1 + S[0, 2] * g2 + f * g0
        y2 += S[1, 0] * g0 + S[1, 1] * g1 + S[1, 2] * g2 + f * g1
        y3 += S[2, 0] * g0 + S[2, 1] * g1 + S[2, 2] * g2
        if y3 < 0.0:
            L -= y3
            y3 = 0.0
        f = phi_point(y1, y2, y3, F)
        steps = step + 1
        Y[steps, 0] = y1
        Y[steps, 1] = y2
        Y[steps, 2] = y3
        Ls[steps] = L
        if L >= lt_max:
            reason = REASON_LOCALTIME
            break
    return Y[: steps + 1].copy(), Ls[: steps + 1].copy(), steps, reason


@njit(cache=True)
def halfspace_batch(seed, path_ids, y0, S, F, dt, nsteps, gamma, clamp):
    """Fixed-horizon single paths: final state, local time and the G^2 integral.

    ``gint`` is the trapezoid integral of ``max(y3, clamp)^{2(gamma-1)}``; the
    number of evaluations that hit the clamp is returned alongside.
    """
    n = path_ids.size
    sq = math.sqrt(dt)
    ys = np.empty((n, 3))
    L = np.empty(n)
    gint = np.empty(n)
    nclamp = np.zeros(n, np.int64)
    ex = 2.0 * (gamma - 1.0)
    for p in range(n):
        key = path_key(seed, path_ids[p])
        y1 = y0[0]
        y2 = y0[1]
        y3 = y0[2]
        lt = 0.0
        h = y3
        if h < clamp:
            h = clamp
            nclamp[p] += 1
        gprev = h**ex
        acc = 0.0
        f = phi_point(y1, y2, y3, F)
        for step in range(nsteps):
            g0, g1, g2 = _normals3(key, step)
            g0 *= sq
            g1 *= sq
            g2 *= sq
            y1 += S[0, 0] * g0 + S[0, 1] * g1 + S[0, 2] * g2 + f * g0
            y2 += S[1, 0] * g0 + S[1, 1] * g1 + S[1, 2] * g2 + f * g1
            y3 += S[2, 0] * g0 + S[2, 1] * g1 + S[2, 2] * g2
            if y3 < 0.0:
                lt -= y3
                y3 = 0.0
            f = phi_point(y1, y2, y3, F)
            h = y3
            if h < clamp:
                h = clamp
                nclamp[p] += 1
            g = h**ex
            acc += 0.5 * dt * (gprev + g)
            gprev = g
        ys[p, 0] = y1
        ys[p, 1] = y2
        ys[p, 2] = y3
        L[p] = lt
        gint[p] = acc
    return ys, L, gint, nclamp
