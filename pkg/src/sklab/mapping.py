"""Harmonic boundary-flattening coordinates on a perturbed box.

Each component ``h_i`` solves Laplace's equation on
``D = {xhat in [-1, 1]^{d-1}, Phi(xhat) < x_d < top + Phi(xhat)}`` with value
``x_i`` on the side and top faces. On the graph face ``h_i`` (i < d) has zero
normal derivative and ``h_d`` vanishes.

The problem is solved in flattened coordinates ``y = (xhat, x_d - Phi(xhat))``
where the box is exact and the Laplacian becomes ``div(A grad v)`` with
``A = [[I, -g], [-g^T, 1 + |g|^2]]``, ``g = grad Phi``. Trilinear (Q1) finite
elements give a symmetric system in which the zero-normal-derivative condition
is the natural boundary condition, so the graph face needs no special stencil.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field as dc_field

import numpy as np
import mpmath
from scipy import sparse
from scipy.interpolate import RegularGridInterpolator

from .geometry import BoundaryFunction, FlatBoundary, GraphDomain, LocalizedChart

SOLVER_RTOL = 1e-10


# ----------------------------------------------------------------- problem


@dataclass
class MixedBVP:
    """Box ``[-1, 1]^{d-1} x [z0, z1]`` in flattened coordinates over ``phi``.

    ``n`` cells per horizontal axis and ``nz`` vertically. ``bottom`` selects the
    graph-face condition for components ``i < d`` (``"neumann"`` or ``"dirichlet"``).
    """

    phi: BoundaryFunction
    n: int = 64
    nz: int | None = None
    z0: float = 0.0
    z1: float = 2.0
    bottom: str = "neumann"
    d: int = dc_field(init=False, default=0)

    def __post_init__(self):
        self.d = self.phi.d_minus_1 + 1
        if self.d not in (2, 3):
            raise ValueError("grid solves support d = 2 and d = 3 only")
        if self.nz is None:
            self.nz = int(round(self.n * (self.z1 - self.z0) / 2.0))
        if self.n < 2 or self.nz < 2:
            raise ValueError("need at least 2 cells per axis")
        if self.bottom not in ("neumann", "dirichlet"):
            raise ValueError("bottom must be 'neumann' or 'dirichlet'")

    @property
    def h(self):
        return np.array([2.0 / self.n] * (self.d - 1) + [(self.z1 - self.z0) / self.nz])

    @property
    def axes(self):
        ax = [np.linspace(-1.0, 1.0, self.n + 1) for _ in range(self.d - 1)]
        return ax + [np.linspace(self.z0, self.z1, self.nz + 1)]

    @property
    def shape(self):
        return tuple(a.size for a in self.axes)

    def nodes(self):
        """Flattened-coordinate node positions, shape ``shape + (d,)``."""
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)

    def physical_nodes(self):
        y = self.nodes()
        x = y.copy()
        x[..., -1] += self.phi.eval(y[..., :-1])
        return x

    def resolves_boundary(self):
        """Largest change of ``Phi`` across one horizontal cell, relative to the smallest spacing."""
        hh = self.h
        xh = self.nodes()[..., 0, :-1]
        slope = np.linalg.norm(self.phi.grad(xh), axis=-1).max()
        return float(slope * hh[0] * math.sqrt(self.d - 1) / hh.min())

    def face_masks(self):
        """Boolean node masks ``(side, top, bottom)``; edges go to side, then top."""
        idx = np.indices(self.shape)
        side = np.zeros(self.shape, bool)
        for a in range(self.d - 1):
            side |= (idx[a] == 0) | (idx[a] == self.n)
        top = (idx[-1] == self.nz) & ~side
        bottom = (idx[-1] == 0) & ~side
        return side, top, bottom


# ---------------------------------------------------------------- assembly


def _coefficient(g):
    """``A = [[I, -g], [-g^T, 1 + |g|^2]]`` for gradients ``g`` (..., d-1)."""
    m = g.shape[-1]
    A = np.zeros(g.shape[:-1] + (m + 1, m + 1))
    for a in range(m):
        A[..., a, a] = 1.0
    A[..., :m, m] = -g
    A[..., m, :m] = -g
    A[..., m, m] = 1.0 + np.sum(g * g, axis=-1)
    return A


def _local_gradients(d, h):
    """Gauss points (2 per axis), weights, and shape-function gradients per point."""
    gp = np.array([0.5 - 0.5 / math.sqrt(3.0), 0.5 + 0.5 / math.sqrt(3.0)])
    corners = list(itertools.product((0, 1), repeat=d))
    pts, grads = [], []
    for q in itertools.product((0, 1), repeat=d):
        xi = gp[list(q)]
        B = np.empty((d, len(corners)))
        for a, c in enumerate(corners):
            for k in range(d):
                v = 1.0 if c[k] else -1.0
                for j in range(d):
                    if j != k:
                        v *= xi[j] if c[j] else 1.0 - xi[j]
                B[k, a] = v / h[k]
        pts.append(xi)
        grads.append(B)
    w = np.prod(h) / 2**d
    return np.array(pts), np.array(grads), w, corners


def assemble(bvp: MixedBVP):
    """Stiffness matrix of ``-div(A grad)`` on the flattened box (CSR)."""
    d = bvp.d
    h = bvp.h
    pts, B, w, corners = _local_gradients(d, h)
    # A depends on the horizontal position only, so element matrices are
    # computed per horizontal element and shared by every vertical layer
    hcells = [np.arange(bvp.n)] * (d - 1)
    origin = np.stack(np.meshgrid(*[-1.0 + c * h[0] for c in hcells], indexing="ij"), -1)
    origin = origin.reshape(-1, d - 1)
    Ke = np.zeros((origin.shape[0], 2**d, 2**d))
    for q in range(len(pts)):
        yq = origin + pts[q][: d - 1] * h[: d - 1]
        A = _coefficient(np.asarray(bvp.phi.grad(yq), float).reshape(-1, d - 1))
        Ke += w * np.einsum("ia,eij,jb->eab", B[q], A, B[q], optimize=True)
    shape = bvp.shape
    cells = np.indices(tuple(s - 1 for s in shape)).reshape(d, -1)
    hidx = np.ravel_multi_index(cells[: d - 1], tuple(s - 1 for s in shape[: d - 1]))
    node = np.stack(
        [np.ravel_multi_index(tuple(cells[k] + c[k] for k in range(d)), shape) for c in corners],
        axis=1,
    ).astype(np.int64)
    m = 2**d
    rows = np.repeat(node, m, axis=1).ravel()
    cols = np.tile(node, (1, m)).ravel()
    vals = Ke[hidx].reshape(-1)
    N = int(np.prod(shape))
    return sparse.csr_matrix((vals, (rows, cols)), shape=(N, N))


# ------------------------------------------------------------------ solver


class SolverError(RuntimeError):
    def __init__(self, msg, history):
        super().__init__(msg)
        self.history = history


def pcg(K, b, x0=None, rtol=SOLVER_RTOL, maxiter=20000):
    """Jacobi-preconditioned conjugate gradients; returns ``(x, history)``.

    ``history`` holds the relative residual after every iteration; the loop is
    written out because the residual trace is part of the solver report.
    """
    Minv = 1.0 / K.diagonal()
    x = np.zeros_like(b) if x0 is None else x0.copy()
    r = b - K @ x
    bnorm = np.linalg.norm(b) or 1.0
    z = Minv * r
    p = z.copy()
    rz = r @ z
    history = [np.linalg.norm(r) / bnorm]
    for _ in range(maxiter):
        if history[-1] <= rtol:
            return x, history
        Kp = K @ p
        alpha = rz / (p @ Kp)
        x += alpha * p
        r -= alpha * Kp
        history.append(np.linalg.norm(r) / bnorm)
        z = Minv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    if history[-1] > rtol:
        raise SolverError(f"CG did not reach rtol={rtol:g}: {history[-1]:.3e}", history)
    return x, history


@dataclass
class GridSolution:
    """Nodal values of one component on the flattened grid."""

    bvp: MixedBVP
    component: int
    values: np.ndarray
    residual: float
    history: list
    flux: np.ndarray
    dirichlet: np.ndarray = dc_field(repr=False, default=None)

    def interpolator(self, method="linear"):
        return RegularGridInterpolator(self.bvp.axes, self.values, method=method)


def component_data(bvp, i):
    """Prescribed values of component ``i`` (0-based) at every node, and the Dirichlet mask."""
    d = bvp.d
    x = bvp.physical_nodes()
    side, top, bottom = bvp.face_masks()
    data = x[..., i].copy()
    mask = side | top
    if i == d - 1 or bvp.bottom == "dirichlet":
        mask = mask | bottom
        if i == d - 1:
            data[bottom] = 0.0
    return data, mask


def solve_dirichlet(bvp, data, mask, K=None, rtol=SOLVER_RTOL, component=-1):
    """Discrete harmonic function with ``data`` on ``mask``; other faces natural."""
    K = assemble(bvp) if K is None else K
    u = np.where(mask, data, 0.0).ravel()
    m = mask.ravel()
    free = ~m
    Kff = K[free][:, free]
    rhs = -(K[free][:, m] @ u[m])
    xf, hist = pcg(Kff.tocsr(), rhs, rtol=rtol)
    u[free] = xf
    res = float(np.linalg.norm(Kff @ xf - rhs) / (np.linalg.norm(rhs) or 1.0))
    flux = (K @ u).reshape(bvp.shape)
    return GridSolution(bvp, component, u.reshape(bvp.shape), res, hist, flux, mask)


def solve_component(bvp: MixedBVP, i, K=None, rtol=SOLVER_RTOL):
    """``h_i`` on the grid of ``bvp`` (0-based component index)."""
    if not 0 <= i < bvp.d:
        raise ValueError("component index out of range")
    data, mask = component_data(bvp, i)
    return solve_dirichlet(bvp, data, mask, K=K, rtol=rtol, component=i)


def neumann_flux(sol: GridSolution):
    """Discrete conormal flux at free graph-face nodes, per unit face area.

    For the Galerkin system this is the weak normal derivative; it vanishes to
    solver tolerance when the graph face carries the natural condition.
    """
    _, _, bottom = sol.bvp.face_masks()
    free = bottom & ~sol.dirichlet
    area = np.prod(sol.bvp.h[:-1])
    return sol.flux[free] / area


# ----------------------------------------------------------------- mapping


@dataclass
class Mapping:
    """The map ``H = (h_1, ..., h_d)`` assembled from grid solutions."""

    bvp: MixedBVP
    parts: list

    def __post_init__(self):
        d = self.bvp.d
        grads = []
        for s in self.parts:
            grads.append(np.stack(np.gradient(s.values, *self.bvp.axes, edge_order=2), -1))
        self._val = RegularGridInterpolator(
            self.bvp.axes, np.stack([s.values for s in self.parts], -1), bounds_error=False,
            fill_value=None,
        )
        self._grad = RegularGridInterpolator(
            self.bvp.axes, np.stack(grads, -2), bounds_error=False, fill_value=None,
        )
        self._node_grad = np.stack(grads, -2)
        self.d = d

    def boundary(self, xh):
        return self.bvp.phi.eval(xh)

    def flatten(self, x):
        x = np.asarray(x, float)
        y = x.copy()
        y[..., -1] -= self.bvp.phi.eval(x[..., :-1])
        return y

    def value(self, x):
        return self._val(self.flatten(x))

    def _to_x(self, Jy, xh):
        # chain rule for y = (xhat, x_d - Phi(xhat)): d/dx_j = d/dy_j - g_j d/dy_d
        g = self.bvp.phi.grad(xh)
        Jx = Jy.copy()
        Jx[..., :-1] -= Jy[..., -1:] * g[..., None, :]
        return Jx

    def jacobian(self, x):
        """``dh_i/dx_k`` as (..., d, d) arrays (row = component)."""
        x = np.asarray(x, float)
        return self._to_x(self._grad(self.flatten(x)), x[..., :-1])

    def node_jacobian(self):
        y = self.bvp.nodes()
        return self._to_x(self._node_grad, y[..., :-1])


def solve_mapping(bvp: MixedBVP, rtol=SOLVER_RTOL):
    K = assemble(bvp)
    return Mapping(bvp, [solve_component(bvp, i, K=K, rtol=rtol) for i in range(bvp.d)])


# ------------------------------------------------------------ certificates


@dataclass
class MappingCertificate:
    ball_radius: float
    det_min: float
    det_max: float
    dhd_min: float
    tangential_max: float
    normal_c_min: float
    normal_c_max: float
    normal_misalignment: float
    c2: float
    violations: list
    passed_det: bool
    passed_dhd: bool

    @property
    def passed(self):
        return self.passed_det and self.passed_dhd


def certify_lemma31(H: Mapping, ball_radius=0.125, dhd_floor=0.1, gamma=None):
    """Jacobian checks on grid nodes within ``ball_radius`` of the origin.

    det in [1/2, 2], ``dh_d/dx_d >= dhd_floor``, tangential components of
    ``grad h_k`` (k < d) and the alignment of ``grad h_d`` with the normal on
    the graph face, and the second-derivative constant
    ``max |D^2 h| dist^{1-gamma}``.
    """
    bvp = H.bvp
    x = bvp.physical_nodes()
    y = bvp.nodes()
    J = H.node_jacobian()
    inball = np.linalg.norm(x, axis=-1) <= ball_radius
    det = np.linalg.det(J[inball])
    dhd = J[inball][:, -1, -1]
    viol = []
    bad = (det < 0.5) | (det > 2.0) | (dhd < dhd_floor)
    if np.any(bad):
        viol = [tuple(p) for p in x[inball][bad][:20]]
    # graph-face nodes inside the ball
    face = inball & (np.indices(bvp.shape)[-1] == 0)
    Jf = J[face]
    dom = GraphDomain(bvp.phi)
    nrm = dom.normal_at(y[face][:, :-1])
    tang = np.abs(np.einsum("nkj,nj->nk", Jf[:, :-1], nrm)).max() if Jf.size else 0.0
    gd = Jf[:, -1]
    c = np.einsum("nj,nj->n", gd, nrm)
    mis = np.linalg.norm(gd - c[:, None] * nrm, axis=1).max() if Jf.size else 0.0
    g = bvp.phi.gamma if gamma is None else gamma
    c2 = second_derivative_constant(H, g, ball_radius)[0]
    return MappingCertificate(
        ball_radius=ball_radius, det_min=float(det.min()), det_max=float(det.max()),
        dhd_min=float(dhd.min()), tangential_max=float(tang),
        normal_c_min=float(c.min()) if c.size else float("nan"),
        normal_c_max=float(c.max()) if c.size else float("nan"),
        normal_misalignment=float(mis), c2=float(c2), violations=viol,
        passed_det=bool(det.min() >= 0.5 and det.max() <= 2.0),
        passed_dhd=bool(dhd.min() >= dhd_floor),
    )


def _hessian_at(H, x, step):
    """Central-difference Hessians of every component at points ``x`` (n, d)."""
    d = H.d
    n = x.shape[0]
    out = np.zeros((n, d, d, d))
    I = np.eye(d) * step
    f0 = H.value(x)
    for a in range(d):
        fp = H.value(x + I[a])
        fm = H.value(x - I[a])
        out[:, :, a, a] = (fp - 2 * f0 + fm) / step**2
        for b in range(a + 1, d):
            fpp = H.value(x + I[a] + I[b])
            fpm = H.value(x + I[a] - I[b])
            fmp = H.value(x - I[a] + I[b])
            fmm = H.value(x - I[a] - I[b])
            v = (fpp - fpm - fmp + fmm) / (4 * step**2)
            out[:, :, a, b] = v
            out[:, :, b, a] = v
    return out


def second_derivative_constant(H: Mapping, gamma, radius=0.25, shells=None, component=None):
    """``max |D^2 h| dist^{1-gamma}`` and a log-log exponent fit over distance shells.

    Points sit on grid columns above the ball; distances are vertical gaps
    corrected by slope, Hessians use a step of one grid spacing and points closer
    than three spacings to the boundary are skipped. ``component`` restricts the
    maximum to one ``h_i``; by default every component counts.
    """
    bvp = H.bvp
    hmin = float(bvp.h.min())
    dom = GraphDomain(bvp.phi)
    if shells is None:
        top = min(0.5, bvp.z1 / 2)
        shells = []
        lo = 3 * hmin
        while lo < top:
            shells.append((lo, min(2 * lo, top)))
            lo *= 2
    cols = bvp.nodes()[..., 0, :-1].reshape(-1, bvp.d - 1)
    cols = cols[np.linalg.norm(cols, axis=1) <= radius]
    dists, hess = [], []
    for lo, hi in shells:
        z = np.linspace(lo, hi, 4)
        pts = np.concatenate([
            np.column_stack([cols, bvp.phi.eval(cols) + zz]) for zz in z
        ])
        dist = dom.boundary_distance(pts)
        Hs = _hessian_at(H, pts, hmin)
        if component is not None:
            Hs = Hs[:, component : component + 1]
        mag = np.abs(Hs).max(axis=(1, 2, 3))
        dists.append(dist)
        hess.append(mag)
    dist = np.concatenate(dists)
    mag = np.concatenate(hess)
    c2 = float(np.max(mag * dist ** (1 - gamma)))
    centers = np.array([math.sqrt(lo * hi) for lo, hi in shells])
    peaks = np.array([m.max() for m in hess])
    if len(shells) >= 2 and np.all(peaks > 0):
        slope = float(np.polyfit(np.log(centers), np.log(peaks), 1)[0])
    else:
        slope = float("nan")
    return c2, slope


@dataclass
class HolderReport:
    holder_quotient: float
    c2: float
    case: str
    n_pairs: int


def certify_prop21(sol_or_mapping, case="dirichlet", component=None, gamma=None,
                   n_pairs=2000, seed=0, radius=0.25, min_sep=None):
    """Gradient-Holder quotient of one component over sampled pairs in the inner ball."""
    if case not in ("dirichlet", "neumann"):
        raise ValueError("case must be 'dirichlet' or 'neumann'")
    H = sol_or_mapping
    bvp = H.bvp
    comp = bvp.d - 1 if component is None else component
    g = bvp.phi.gamma if gamma is None else gamma
    hmin = float(bvp.h.min())
    min_sep = 2 * hmin if min_sep is None else min_sep
    rng = np.random.default_rng(seed)
    d = bvp.d

    def sample(n):
        u = rng.normal(size=(n, d - 1))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        r = radius * rng.uniform(size=n) ** (1.0 / (d - 1))
        xh = u * r[:, None]
        z = rng.uniform(0.0, radius, size=n)
        return np.column_stack([xh, bvp.phi.eval(xh) + z])

    x = sample(n_pairs)
    y = sample(n_pairs)
    sep = np.linalg.norm(x - y, axis=1)
    keep = sep >= min_sep
    Jx = H.jacobian(x[keep])[:, comp]
    Jy = H.jacobian(y[keep])[:, comp]
    q = np.linalg.norm(Jx - Jy, axis=1) / sep[keep] ** g
    c2 = second_derivative_constant(H, g, radius)[0]
    return HolderReport(float(q.max()) if q.size else 0.0, c2, case, int(keep.sum()))


# ----------------------------------------------------------- green sum


@dataclass
class GreenSum:
    gamma: float
    converges: bool
    value: float | None
    double_sum: float | None
    partial_sums: list


def green_sum(gamma, c=1.0, terms=60):
    """``sum_{j>=1} 2^{-j(2 gamma - 1)}`` and its dyadic double-sum pattern.

    For gamma > 1/2 returns the closed form ``1 / (2^{2 gamma - 1} - 1)`` and
    ``sum_{k>=0} c 2^{-k} sum_{j>=1} 2^{-j(2 gamma - 1)} = 2 c / (2^{2 gamma - 1} - 1)``
    (both in closed form). For gamma <= 1/2 flags divergence and returns the
    first ``terms`` partial sums of the single series.
    """
    if not 0.0 < gamma <= 1.0:
        raise ValueError("gamma must lie in (0, 1]")
    e = 2.0 * gamma - 1.0
    j = np.arange(1, terms + 1)
    partial = np.cumsum(2.0 ** (-j * e)).tolist()
    if e <= 0:
        return GreenSum(gamma, False, None, None, partial)
    value = 1.0 / math.expm1(e * math.log(2.0))
    return GreenSum(gamma, True, value, 2.0 * c * value, partial)


def green_sum_oracle(gamma, dps=40):
    """Direct high-precision summation of ``sum_j 2^{-j(2 gamma - 1)}`` (mpmath)."""
    with mpmath.workdps(dps):
        e = 2 * mpmath.mpf(gamma) - 1
        return mpmath.nsum(lambda j: mpmath.power(2, -j * e), [1, mpmath.inf])


# -------------------------------------------------------- walk on spheres


def walk_on_spheres(phi, probes, top, boundary_value, n_walks, seed, eps=1e-3, max_iter=10000):
    """Monte Carlo harmonic measure estimate on the perturbed box in original coordinates.

    The walk jumps to a uniform point on the largest ball certified inside the
    domain (cone bound on the graph faces, exact distance to the sides) and stops
    within ``eps`` of the boundary, reporting ``boundary_value`` at the nearest
    face point. Returns ``(mean, se)`` per probe.
    """
    d = phi.d_minus_1 + 1
    dom = GraphDomain(phi)
    rng = np.random.default_rng(seed)
    probes = np.atleast_2d(np.asarray(probes, float))
    means, ses = [], []
    for p in probes:
        x = np.repeat(p[None], n_walks, axis=0)
        done = np.zeros(n_walks, bool)
        val = np.zeros(n_walks)
        for _ in range(max_iter):
            idx = np.flatnonzero(~done)
            if idx.size == 0:
                break
            xi = x[idx]
            d_bot = dom.distance_lower_bound(xi)
            mirrored = xi.copy()
            mirrored[:, -1] = 2 * phi.eval(xi[:, :-1]) + top - xi[:, -1]
            d_top = dom.distance_lower_bound(mirrored)
            d_side = np.min(1.0 - np.abs(xi[:, :-1]), axis=1)
            r = np.minimum(np.minimum(d_bot, d_top), d_side)
            stop = r <= eps
            if np.any(stop):
                xs = xi[stop]
                which = np.argmin(np.column_stack([d_bot[stop], d_top[stop], d_side[stop]]), 1)
                tgt = xs.copy()
                b = which == 0
                tgt[b] = dom.foot_point(xs[b])
                t = which == 1
                tgt[t, -1] = phi.eval(xs[t, :-1]) + top
                s = which == 2
                if np.any(s):
                    ax = np.argmin(1.0 - np.abs(xs[s, :-1]), axis=1)
                    rows = np.flatnonzero(s)
                    tgt[rows, ax] = np.sign(xs[rows, ax])
                val[idx[stop]] = boundary_value(tgt, which)
                done[idx[stop]] = True
            move = ~stop
            u = rng.normal(size=(int(move.sum()), d))
            u /= np.linalg.norm(u, axis=1, keepdims=True)
            x[idx[move]] = xi[move] + r[move, None] * u
        means.append(val.mean())
        ses.append(val.std(ddof=1) / math.sqrt(n_walks))
    return np.array(means), np.array(ses)


# ----------------------------------------------------- reflection fixture


def tube_reflection_fixture(n=16, d=3, data=None, rtol=SOLVER_RTOL):
    """Neumann problem on a flat box versus the even reflection across the face.

    Solves (a) zero-normal-derivative at ``z = 0`` with Dirichlet ``data`` on the
    other faces of ``[-1, 1]^{d-1} x [0, 1]`` and (b) the pure Dirichlet problem
    on the doubled box ``[-1, 1]^{d-1} x [-1, 1]`` with data ``data(xhat, |z|)``.
    Returns ``(max asymmetry of (b), max |(a) - (b)| on the upper half)``.
    """
    if data is None:
        def data(x):
            return np.cos(1.3 * x[..., 0] + 0.4) * np.cosh(0.7 * x[..., -1]) + 0.2 * x[..., 0] ** 2
    flat = FlatBoundary(d_minus_1=d - 1)
    half = MixedBVP(flat, n=n, nz=n // 2, z0=0.0, z1=1.0, bottom="neumann")
    side, top, _ = half.face_masks()
    a = solve_dirichlet(half, data(half.nodes()), side | top, rtol=rtol)
    full = MixedBVP(flat, n=n, nz=n, z0=-1.0, z1=1.0, bottom="dirichlet")
    sidef, topf, botf = full.face_masks()
    y = full.nodes()
    yr = y.copy()
    yr[..., -1] = np.abs(yr[..., -1])
    b = solve_dirichlet(full, data(yr), sidef | topf | botf, rtol=rtol)
    flipped = b.values[..., ::-1]
    asym = float(np.max(np.abs(b.values - flipped)))
    upper = b.values[..., n // 2:]
    return asym, float(np.max(np.abs(a.values - upper)))


# ------------------------------------------------------------- eps sweep


@dataclass
class EpsSweep:
    eps: list
    resolution: list
    certificates: list
    largest_passing: float | None


def eps_sweep(base: BoundaryFunction, eps_list, n=64, ball_radius=0.125, dhd_floor=0.1,
              stop_at_first=True):
    """Certify Jacobian bounds on dilated charts of ``base``, from large to small eps.

    Charts the grid does not resolve (variation per cell above the spacing) are
    recorded with a ``None`` certificate and never count as passing.
    """
    eps_list = sorted(eps_list, reverse=True)
    done, res, certs = [], [], []
    best = None
    for eps in eps_list:
        bvp = MixedBVP(LocalizedChart(base, eps), n=n)
        r = bvp.resolves_boundary()
        done.append(eps)
        res.append(r)
        if r >= 1.0:
            certs.append(None)
            continue
        cert = certify_lemma31(solve_mapping(bvp), ball_radius=ball_radius, dhd_floor=dhd_floor)
        certs.append(cert)
        if cert.passed:
            best = eps if best is None else max(best, eps)
            if stop_at_first:
                break
    return EpsSweep(done, res, certs, best)


def injectivity_margin(H: Mapping, ball_radius=0.125, n_pairs=4000, seed=0):
    """Smallest ``|H(x) - H(y)| / |x - y|`` over sampled node pairs in the ball."""
    x = H.bvp.physical_nodes().reshape(-1, H.d)
    x = x[np.linalg.norm(x, axis=1) <= ball_radius]
    rng = np.random.default_rng(seed)
    i = rng.integers(0, x.shape[0], n_pairs)
    j = rng.integers(0, x.shape[0], n_pairs)
    keep = i != j
    a, b = x[i[keep]], x[j[keep]]
    return float(np.min(np.linalg.norm(H.value(a) - H.value(b), axis=1)
                        / np.linalg.norm(a - b, axis=1)))
