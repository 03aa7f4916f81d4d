"""Pure-numpy twins of :mod:`sklab.kernels.nb`.

Same names, signatures and integer RNG arithmetic; loops over time steps are
kept but every step is vectorised across paths (or points). Results agree with
the numba kernels up to last-ulp differences in ``log``/``cos``/``exp``.
"""
import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_ONE = np.uint64(1)
_TWO53 = 1.0 / 9007199254740992.0
TWO_PI = 2.0 * np.pi

REASON_HORIZON = 0
REASON_INNER = 1
REASON_OUTER = 2
REASON_CLOCK = 3
REASON_LOCALTIME = 4


def _u64(x):
    return np.asarray(x, dtype=np.uint64)


def _mix(z):
    z = _u64(z)
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def path_key(seed, path):
    with np.errstate(over="ignore"):
        return _mix(_mix(_u64(seed)) + GOLDEN * (_u64(path) + _ONE))


def _uniform(key, ctr):
    with np.errstate(over="ignore"):
        z = _mix(_u64(key) + GOLDEN * (_u64(ctr) + _ONE))
    return ((z >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO53


def _normal_pair(key, ctr):
    ctr = _u64(ctr)
    u1 = _uniform(key, ctr)
    u2 = _uniform(key, ctr + _ONE)
    r = np.sqrt(-2.0 * np.log(u1))
    a = TWO_PI * u2
    return r * np.cos(a), r * np.sin(a)


def normal_block(seed, path, step0, nsteps, dim):
    key = path_key(seed, path)
    npairs = (dim + 1) // 2
    steps = _u64(np.arange(step0, step0 + nsteps))
    out = np.empty((nsteps, dim))
    for q in range(npairs):
        z0, z1 = _normal_pair(key, steps * np.uint64(2 * npairs) + np.uint64(2 * q))
        out[:, 2 * q] = z0
        if 2 * q + 1 < dim:
            out[:, 2 * q + 1] = z1
    return out


def _normals3(key, step):
    base = _u64(step) * np.uint64(4)
    z0, z1 = _normal_pair(key, base)
    z2, _ = _normal_pair(key, base + np.uint64(2))
    return z0, z1, z2


def skorokhod_1d(w):
    w = np.asarray(w, dtype=float)
    l = np.maximum.accumulate(np.maximum(-w, 0.0))
    return w + l, l


# ---------------------------------------------------------------- field


def _lag4(tau):
    a = tau
    b = tau - 1.0
    c = tau - 2.0
    d = tau - 3.0
    return (-b * c * d / 6.0, a * c * d / 2.0, -a * b * d / 2.0, a * b * c / 6.0)


def _t_stencil(t, t0, ht, nt):
    st = (t - t0) / ht
    it = np.clip(np.floor(st).astype(np.int64) - 1, 0, nt - 4)
    return it, _lag4(st - it)


def _wrap(u):
    return u - 3.0 * np.floor(u * (1.0 / 3.0))


def _phi0_table(u1, u2, it, tw, table, hu):
    s1 = u1 / hu
    f1 = np.floor(s1)
    i1 = f1.astype(np.int64)
    w1 = _lag4(s1 - f1 + 1.0)
    s2 = u2 / hu
    f2 = np.floor(s2)
    i2 = f2.astype(np.int64)
    w2 = _lag4(s2 - f2 + 1.0)
    acc = np.zeros(u1.shape)
    for a in range(4):
        p = it + a
        pa = np.zeros(u1.shape)
        for b in range(4):
            r = i1 + b
            rb = (w2[0] * table[p, r, i2] + w2[1] * table[p, r, i2 + 1]
                  + w2[2] * table[p, r, i2 + 2] + w2[3] * table[p, r, i2 + 3])
            pa = pa + w1[b] * rb
        acc += np.where(tw[a] == 0.0, 0.0, tw[a] * pa)
    return acc


def _phi_many(xs, x3, F):
    """phi at several horizontal positions sharing one height array.

    All (scale, point) pairs are flattened so that each table is gathered once.
    Scales increase, so past the first scale with ``t >= t_const`` the rest of
    the sum is the precomputed suffix times the cell mean.
    """
    (scales, amps, suffix, table, hu, ht, t_far,
     table_far, hu_far, ht_far, t_const, mean) = F
    x3 = np.abs(np.asarray(x3, dtype=float))
    t = scales[:, None] * x3[None, :]
    live = t < t_const
    first = np.argmin(live, axis=0)
    tail = np.where(live.all(axis=0), 0.0, suffix[first] * mean)
    m_idx, p_idx = np.nonzero(live)
    tl = t[m_idx, p_idx]
    sc = scales[m_idx]
    amp = amps[m_idx]
    groups = []
    for sel, t0, h, tab, step in (
        (tl < t_far, 0.0, hu, table, ht),
        (tl >= t_far, t_far, hu_far, table_far, ht_far),
    ):
        if sel.any():
            it, tw = _t_stencil(tl[sel], t0, step, tab.shape[0])
            groups.append((sel, it, tw, tab, h))
    out = []
    for p1, p2 in xs:
        p1 = np.asarray(p1, dtype=float)
        p2 = np.asarray(p2, dtype=float)
        u1 = _wrap(sc * p1[p_idx])
        u2 = _wrap(sc * p2[p_idx])
        vals = np.empty(tl.shape)
        for sel, it, tw, tab, h in groups:
            vals[sel] = amp[sel] * _phi0_table(u1[sel], u2[sel], it, tw, tab, h)
        acc = tail.copy()
        np.add.at(acc, p_idx, vals)
        out.append(acc)
    return out


def phi_point(x1, x2, x3, F):
    return float(_phi_many([(np.atleast_1d(x1), np.atleast_1d(x2))], np.atleast_1d(x3), F)[0][0])


def phi_pair(x1, x2, y1, y2, x3, F):
    x1, x2, y1, y2, x3 = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (x1, x2, y1, y2, x3))
    )
    a, b = _phi_many([(x1, x2), (y1, y2)], x3, F)
    return a, b


def phi_batch(points, F):
    points = np.asarray(points, dtype=float)
    return _phi_many([(points[:, 0], points[:, 1])], points[:, 2], F)[0]


# ------------------------------------------------------------ half space


def _coupling_many(keys, y0, y0p, S, F, dt, max_steps, dist_lo, dist_hi,
                   clock_max, lt_max, rec_every):
    n = keys.size
    sq = np.sqrt(dt)
    y1 = np.full(n, float(y0[0]))
    y2 = np.full(n, float(y0[1]))
    y3 = np.full(n, float(y0[2]))
    z1 = np.full(n, float(y0p[0]))
    z2 = np.full(n, float(y0p[1]))
    L = np.zeros(n)
    A = np.zeros(n)
    f, fp = phi_pair(y1, y2, z1, z2, y3, F)
    q_prev = (f - fp) * (f - fp)
    maxd = np.sqrt((y1 - z1) ** 2 + (y2 - z2) ** 2)
    reason = np.full(n, REASON_HORIZON, dtype=np.int64)
    steps = np.zeros(n, dtype=np.int64)
    active = np.ones(n, dtype=bool)
    rec = [(0.0, maxd[0] ** 2, 0.0, 0.0)] if rec_every > 0 else None
    for step in range(max_steps):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        g0, g1, g2 = _normals3(keys[idx], step)
        g0 = g0 * sq
        g1 = g1 * sq
        g2 = g2 * sq
        h1 = S[0, 0] * g0 + S[0, 1] * g1 + S[0, 2] * g2
        h2 = S[1, 0] * g0 + S[1, 1] * g1 + S[1, 2] * g2
        y1[idx] += h1 + f[idx] * g0
        y2[idx] += h2 + f[idx] * g1
        z1[idx] += h1 + fp[idx] * g0
        z2[idx] += h2 + fp[idx] * g1
        v3 = y3[idx] + (S[2, 0] * g0 + S[2, 1] * g1 + S[2, 2] * g2)
        neg = v3 < 0.0
        L[idx] = np.where(neg, L[idx] - v3, L[idx])
        y3[idx] = np.where(neg, 0.0, v3)
        fa, fb = phi_pair(y1[idx], y2[idx], z1[idx], z2[idx], y3[idx], F)
        f[idx] = fa
        fp[idx] = fb
        q = (fa - fb) * (fa - fb)
        A[idx] += 0.5 * dt * (q_prev[idx] + q)
        q_prev[idx] = q
        R = (y1[idx] - z1[idx]) ** 2 + (y2[idx] - z2[idx]) ** 2
        d = np.sqrt(R)
        maxd[idx] = np.maximum(maxd[idx], d)
        steps[idx] = step + 1
        if rec is not None and (step + 1) % rec_every == 0:
            rec.append(((step + 1) * dt, R[0], A[idx][0], L[idx][0]))
        r = np.full(idx.size, -1, dtype=np.int64)
        r[(r < 0) & (L[idx] >= lt_max)] = REASON_LOCALTIME
        r[A[idx] >= clock_max] = REASON_CLOCK
        r[d >= dist_hi] = REASON_OUTER
        r[d <= dist_lo] = REASON_INNER
        stop = r >= 0
        reason[idx[stop]] = r[stop]
        active[idx[stop]] = False
    return y1, y2, y3, z1, z2, L, A, maxd, reason, steps, rec


def coupling_batch(seed, path_ids, y0, y0p, S, F, dt, max_steps,
                   dist_lo, dist_hi, clock_max, lt_max):
    keys = path_key(seed, np.asarray(path_ids))
    y1, y2, y3, z1, z2, L, A, maxd, reason, steps, _ = _coupling_many(
        np.atleast_1d(keys), y0, y0p, S, F, dt, max_steps,
        dist_lo, dist_hi, clock_max, lt_max, 0,
    )
    ys = np.stack([y1, y2, y3], axis=1)
    yps = np.stack([z1, z2, y3], axis=1)
    return steps, reason, ys, yps, L, A, maxd


def coupling_trace(seed, path_id, y0, y0p, S, F, dt, max_steps,
                   dist_lo, dist_hi, clock_max, lt_max, rec_every):
    keys = np.atleast_1d(path_key(seed, path_id))
    y1, y2, y3, z1, z2, L, A, maxd, reason, steps, rec = _coupling_many(
        keys, y0, y0p, S, F, dt, max_steps, dist_lo, dist_hi,
        clock_max, lt_max, rec_every,
    )
    if steps[0] % rec_every != 0:
        rec.append((steps[0] * dt, (y1[0] - z1[0]) ** 2 + (y2[0] - z2[0]) ** 2, A[0], L[0]))
    return np.array(rec, dtype=float).reshape(-1, 4), int(steps[0]), int(reason[0])


def halfspace_path(seed, path_id, y0, S, F, dt, max_steps, lt_max):
    key = path_key(seed, path_id)
    g = np.stack(_normals3(key, np.arange(max_steps)), axis=1) * np.sqrt(dt)
    dw3 = S[2, 0] * g[:, 0] + S[2, 1] * g[:, 1] + S[2, 2] * g[:, 2]
    y3 = np.empty(max_steps + 1)
    Ls = np.empty(max_steps + 1)
    y3[0] = y0[2]
    Ls[0] = 0.0
    v = float(y0[2])
    L = 0.0
    steps = max_steps
    reason = REASON_HORIZON
    for s in range(max_steps):
        v += dw3[s]
        if v < 0.0:
            L -= v
            v = 0.0
        y3[s + 1] = v
        Ls[s + 1] = L
        if L >= lt_max:
            steps = s + 1
            reason = REASON_LOCALTIME
            break
    Y = np.empty((steps + 1, 3))
    Y[:, 2] = y3[: steps + 1]
    y1 = float(y0[0])
    y2 = float(y0[1])
    Y[0, 0] = y1
    Y[0, 1] = y2
    f = phi_point(y1, y2, y0[2], F)
    for s in range(steps):
        g0, g1, g2 = g[s]
        y1 += S[0, 0] * g0 + S[0, 1] * g1 + S[0, 2] * g2 + f * g0
        y2 += S[1, 0] * g0 + S[1, 1] * g1 + S[1, 2] * g2 + f * g1
        Y[s + 1, 0] = y1
        Y[s + 1, 1] = y2
        f = phi_point(y1, y2, Y[s + 1, 2], F)
    return Y, Ls[: steps + 1].copy(), steps, reason


def halfspace_batch(seed, path_ids, y0, S, F, dt, nsteps, gamma, clamp):
    keys = np.atleast_1d(path_key(seed, np.asarray(path_ids)))
    n = keys.size
    sq = np.sqrt(dt)
    y1 = np.full(n, float(y0[0]))
    y2 = np.full(n, float(y0[1]))
    y3 = np.full(n, float(y0[2]))
    lt = np.zeros(n)
    ex = 2.0 * (gamma - 1.0)
    nclamp = np.zeros(n, dtype=np.int64)
    h = np.maximum(y3, clamp)
    nclamp += y3 < clamp
    gprev = h**ex
    acc = np.zeros(n)
    f = phi_batch(np.stack([y1, y2, y3], axis=1), F)
    for step in range(nsteps):
        g0, g1, g2 = _normals3(keys, step)
        g0 = g0 * sq
        g1 = g1 * sq
        g2 = g2 * sq
        y1 += S[0, 0] * g0 + S[0, 1] * g1 + S[0, 2] * g2 + f * g0
        y2 += S[1, 0] * g0 + S[1, 1] * g1 + S[1, 2] * g2 + f * g1
        y3 += S[2, 0] * g0 + S[2, 1] * g1 + S[2, 2] * g2
        neg = y3 < 0.0
        lt = np.where(neg, lt - y3, lt)
        y3 = np.where(neg, 0.0, y3)
        f = phi_batch(np.stack([y1, y2, y3], axis=1), F)
        nclamp += y3 < clamp
        g = np.maximum(y3, clamp) ** ex
        acc += 0.5 * dt * (gprev + g)
        gprev = g
    return np.stack([y1, y2, y3], axis=1), lt, acc, nclamp
