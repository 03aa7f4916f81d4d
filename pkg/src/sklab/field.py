"""The diagonal diffusion field built from dyadic lattices of radial bumps.

``Psi`` is a radial C^infinity bump of radius 3/4 with ``psi(0) = 1``. At scale k,
``Psi_k(x) = sum_i 2^{-k gamma} Psi(2^k x + 3 i 2^{-k})`` is periodic with period
``3 * 2^{-k}``; ``phi_k`` is its harmonic extension to the upper half-space and
``phi = sum_{m=0}^{m_max} phi_{m n1}``. The field is
``sigma = diag(1 + phi, 1 + phi, 1)``, extended evenly to ``x3 < 0``.

Since ``phi_k(x) = 2^{-k gamma} phi_0(2^k x)``, a single periodic function of
``(u, t) in [0, 3)^2 x [0, inf)`` carries every scale. Two evaluators exist:

* :meth:`CounterexampleField.phi_k` sums the Fourier series with
  ``fourier_modes`` modes per axis (the certified reference);
* :class:`FieldTable` tabulates ``phi_0`` once by FFT and interpolates it with
  tricubic Lagrange stencils. The simulation kernels use this one.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field
from functools import lru_cache

import numpy as np
from scipy import special

from ._accel import kernels
from .geometry import bump_profile

PERIOD = 3.0
OMEGA = 2.0 * np.pi / PERIOD
BUMP_RADIUS = 0.75


@dataclass(frozen=True)
class BumpProfile:
    """Radial profile ``psi(r) = exp(1 - 1/(1 - (4r/3)^2))`` on ``r < 3/4``."""

    radius: float = BUMP_RADIUS

    def __call__(self, r):
        return bump_profile(r)

    @property
    def integral(self):
        """``int_{R^2} Psi``."""
        return _bump_moments()[0]

    @property
    def second_moment(self):
        """``int_{R^2} |z|^2 Psi(z) dz``."""
        return _bump_moments()[1]


@lru_cache(maxsize=None)
def _gl_nodes(n, a, b):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * x + 0.5 * (b + a), 0.5 * (b - a) * w


@lru_cache(maxsize=None)
def _bump_moments():
    r, w = _gl_nodes(400, 0.0, BUMP_RADIUS)
    p = bump_profile(r)
    return (2 * np.pi * np.sum(w * p * r), 2 * np.pi * np.sum(w * p * r**3))


def hankel_coefficient(rho):
    """Fourier coefficient of the period-3 lattice of bumps at frequency radius ``rho``.

    ``c(|n|) = (1/9) int Psi(z) exp(-i omega n.z) dz = (2 pi / 9) int psi(r) J0(omega |n| r) r dr``.
    """
    rho = np.asarray(rho, dtype=float)
    r, w = _gl_nodes(800, 0.0, BUMP_RADIUS)
    kern = special.j0(OMEGA * rho[..., None] * r) * (w * bump_profile(r) * r)
    return (2 * np.pi / 9.0) * kern.sum(axis=-1)


@lru_cache(maxsize=None)
def _coefficients_by_sqradius(nmax):
    sq = np.arange(2 * nmax * nmax + 1)
    return hankel_coefficient(np.sqrt(sq))


def mode_coefficients(n1, n2):
    n1 = np.asarray(n1)
    n2 = np.asarray(n2)
    sq = (n1 * n1 + n2 * n2).astype(np.int64)
    nmax = int(max(np.max(np.abs(n1)), np.max(np.abs(n2)), 1))
    return _coefficients_by_sqradius(nmax)[sq]


def psi_k1(k, xh, gamma):
    """Single scaled bump ``2^{-k gamma} psi(|2^k x|)``."""
    xh = np.asarray(xh, dtype=float)
    r = (2.0**k) * np.sqrt(np.sum(xh * xh, axis=-1))
    return 2.0 ** (-k * gamma) * bump_profile(r)


def psi_k(k, xh, gamma):
    """Lattice sum of :func:`psi_k1` over shifts ``3 * 2^{-k} Z^2``.

    Supports have radius ``(3/4) 2^{-k}``, less than half the lattice step, so
    only the nearest lattice point can contribute.
    """
    xh = np.asarray(xh, dtype=float)
    step = PERIOD * 2.0 ** (-k)
    shifted = xh - step * np.round(xh / step)
    return psi_k1(k, shifted, gamma)


def phi0_fourier(u1, u2, t, modes):
    """Truncated Fourier series of the harmonic extension of ``Psi_0``.

    Sums ``|n_i| <= modes``; the bump is even in both coordinates so each
    quadrant folds onto ``n_i >= 0`` with weight 2 per nonzero index.
    """
    u1, u2, t = np.broadcast_arrays(
        np.asarray(u1, float), np.asarray(u2, float), np.asarray(t, float)
    )
    shape = u1.shape
    u1 = u1.ravel()
    u2 = u2.ravel()
    t = t.ravel()
    n = np.arange(modes + 1)
    wt = np.where(n == 0, 1.0, 2.0)
    nn1, nn2 = np.meshgrid(n, n, indexing="ij")
    coef = mode_coefficients(nn1, nn2) * wt[:, None] * wt[None, :]
    xi = OMEGA * np.sqrt(nn1**2 + nn2**2)
    out = np.empty(u1.size)
    chunk = max(1, 2_000_000 // coef.size)
    for s in range(0, u1.size, chunk):
        sl = slice(s, s + chunk)
        c1 = np.cos(OMEGA * u1[sl, None] * n)
        c2 = np.cos(OMEGA * u2[sl, None] * n)
        damp = np.exp(-xi[None] * t[sl, None, None])
        out[sl] = np.einsum("pi,pj,pij,ij->p", c1, c2, damp, coef)
    return out.reshape(shape)


def fourier_tail_bound(t, modes, nmax=None):
    """Bound on the error of :func:`phi0_fourier` at height ``t``.

    Sums ``|c_n| exp(-omega |n| t)`` over modes outside the retained box up to
    ``nmax`` (default ``4 * modes``); coefficients beyond that are below 1e-9
    and their damped sum is folded into the reported margin.
    """
    nmax = nmax or 4 * modes
    n = np.arange(-nmax, nmax + 1)
    nn1, nn2 = np.meshgrid(n, n, indexing="ij")
    outside = (np.abs(nn1) > modes) | (np.abs(nn2) > modes)
    c = np.abs(mode_coefficients(nn1[outside], nn2[outside]))
    xi = OMEGA * np.sqrt(nn1[outside] ** 2 + nn2[outside] ** 2)
    t = np.asarray(t, float)
    return np.sum(c * np.exp(-xi * t[..., None]), axis=-1) + 1e-9


# --------------------------------------------------------- Poisson oracle


def poisson_kernel(rho, t):
    """Half-space Poisson kernel for R^3_+: ``t / (2 pi (rho^2 + t^2)^{3/2})``."""
    return t / (2 * np.pi * (rho * rho + t * t) ** 1.5)


def _single_bump_extension(rho, t, n_r=240):
    """Harmonic extension of one unscaled bump at horizontal distance ``rho``.

    The angular integral of the Poisson kernel is done in closed form with the
    complete elliptic integral E; the radial one by composite Gauss-Legendre
    with breakpoints refined around ``r = rho`` where the kernel peaks.
    """
    rho = np.atleast_1d(np.asarray(rho, float))
    out = np.empty(rho.size)
    for i, p in enumerate(rho):
        brk = {0.0, BUMP_RADIUS}
        for s in (-6, -2, -0.5, 0.5, 2, 6):
            v = p + s * t
            if 0.0 < v < BUMP_RADIUS:
                brk.add(v)
        brk = sorted(brk)
        acc = 0.0
        for a, b in zip(brk[:-1], brk[1:]):
            r, w = _gl_nodes(n_r // 4 if b - a < 4 * t else n_r, a, b)
            aa = p * p + r * r + t * t
            bb = 2 * p * r
            m = 2 * bb / (aa + bb)
            ang = 4 * special.ellipe(m) / ((aa - bb) * np.sqrt(aa + bb))
            acc += np.sum(w * bump_profile(r) * r * ang)
        out[i] = t / (2 * np.pi) * acc
    return out


def _rect_mass(x0, x1, y0, y1, t):
    """Mass of the Poisson kernel over the rectangle [x0,x1] x [y0,y1]."""

    def F(x, y):
        return np.arctan2(x * y, t * np.sqrt(x * x + y * y + t * t)) / (2 * np.pi)

    return F(x1, y1) - F(x0, y1) - F(x1, y0) + F(x0, y0)


def poisson_extension(u1, u2, t, near=4, far=300):
    """``phi_0(u, t)`` by direct Poisson-kernel quadrature over the bump lattice.

    Cells with ``max|i| <= near`` are integrated exactly, cells up to ``far``
    contribute their monopole ``P(u - 3i, t) int Psi``, and the remaining
    exterior is the mean density times the Poisson mass outside the square.
    Independent of the Fourier machinery; valid for ``t`` bounded away from 0.
    """
    if t <= 0:
        raise ValueError("poisson_extension needs t > 0")
    M0 = _bump_moments()[0]
    i = np.arange(-near, near + 1)
    g1, g2 = np.meshgrid(i, i, indexing="ij")
    rho_near = np.hypot(u1 - PERIOD * g1.ravel(), u2 - PERIOD * g2.ravel())
    total = np.sum(_single_bump_extension(rho_near, t))
    j = np.arange(-far, far + 1)
    h1, h2 = np.meshgrid(j, j, indexing="ij")
    ring = (np.abs(h1) > near) | (np.abs(h2) > near)
    rho_far = np.hypot(u1 - PERIOD * h1[ring], u2 - PERIOD * h2[ring])
    total += M0 * np.sum(poisson_kernel(rho_far, t))
    half = PERIOD * (far + 0.5)
    inside = _rect_mass(-half - u1, half - u1, -half - u2, half - u2, t)
    total += (M0 / PERIOD**2) * (1.0 - inside)
    return float(total)


# ------------------------------------------------------------- the field


@dataclass(frozen=True)
class FieldTable:
    """Tabulated ``phi_0`` plus per-scale metadata, as consumed by the kernels.

    ``table`` covers heights ``[0, t_far]`` at full resolution; ``table_far``
    covers ``[t_far, t_const]`` on a coarser grid, where only the lowest modes
    survive. Above ``t_const`` the deviation from the cell mean is below 1e-12.
    """

    scales: np.ndarray
    amps: np.ndarray
    suffix: np.ndarray
    table: np.ndarray
    hu: float
    ht: float
    t_far: float
    table_far: np.ndarray
    hu_far: float
    ht_far: float
    t_const: float
    mean: float

    def as_tuple(self):
        return (
            self.scales, self.amps, self.suffix, self.table, self.hu, self.ht,
            self.t_far, self.table_far, self.hu_far, self.ht_far, self.t_const,
            self.mean,
        )


@lru_cache(maxsize=8)
def _phi0_grid(nu, t0, ht, nt):
    """``phi_0`` on the periodic ``nu x nu`` grid at heights ``t0 + m ht``, ``m < nt``.

    Planes are padded to ``nu + 4`` with the periodic images of indices
    ``-1`` and ``nu .. nu + 2``; entry ``[m, i + 1, j + 1]`` is node ``(i, j)``.
    """
    freq = np.fft.fftfreq(nu, d=1.0 / nu).astype(int)
    f1, f2 = np.meshgrid(freq, freq, indexing="ij")
    coef = mode_coefficients(f1, f2)
    xi = OMEGA * np.sqrt(f1**2 + f2**2)
    out = np.empty((nt, nu + 4, nu + 4))
    ring = np.arange(-1, nu + 3) % nu
    for m in range(nt):
        spec = coef * np.exp(-xi * (t0 + m * ht))
        plane = np.real(np.fft.ifft2(spec)) * nu * nu
        out[m] = plane[np.ix_(ring, ring)]
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class CounterexampleField:
    """``sigma = diag(1 + phi, 1 + phi, 1)`` with ``phi = sum_m phi_{m n1}``.

    ``m_max < 0`` gives the trivial field ``phi = 0``.
    """

    gamma: float
    n1: int = 4
    m_max: int = 6
    fourier_modes: int = 32
    table_points: int = 192
    bump: BumpProfile = dc_field(default_factory=BumpProfile)

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.n1 < 1:
            raise ValueError("n1 must be >= 1")
        if self.fourier_modes < 1:
            raise ValueError("fourier_modes must be >= 1")

    # -- structure
    @property
    def scales(self):
        """Dyadic exponents ``k = m n1`` present in the sum."""
        return np.arange(self.m_max + 1, dtype=np.int64) * self.n1

    @property
    def amplitudes(self):
        return 2.0 ** (-self.scales * self.gamma)

    @property
    def sup_bound(self):
        """``sum_m 2^{-m n1 gamma}``; dominates ``phi`` since each ``phi_k <= 2^{-k gamma}``."""
        return float(np.sum(self.amplitudes))

    def truncation_tail(self):
        """Sup-norm bound on the omitted scales ``m > m_max``."""
        q = 2.0 ** (-self.n1 * self.gamma)
        start = max(self.m_max + 1, 0)
        return float(q**start / (1.0 - q))

    @property
    def cell_mean(self):
        """Mean of ``Psi_0`` over its period cell (= the ``x3 -> inf`` limit of ``phi_0``)."""
        return self.bump.integral / PERIOD**2

    # -- reference evaluation
    def psi_k1(self, k, xh):
        return psi_k1(k, xh, self.gamma)

    def psi_k(self, k, xh):
        return psi_k(k, xh, self.gamma)

    def phi_k(self, k, x, modes=None):
        """Harmonic extension of ``Psi_k`` at points ``x`` (last axis = 3)."""
        x = np.asarray(x, float)
        sc = 2.0**k
        u1 = np.mod(sc * x[..., 0], PERIOD)
        u2 = np.mod(sc * x[..., 1], PERIOD)
        t = sc * np.abs(x[..., 2])
        return 2.0 ** (-k * self.gamma) * phi0_fourier(u1, u2, t, modes or self.fourier_modes)

    def phi_k_tail_bound(self, k, x3, modes=None):
        return 2.0 ** (-k * self.gamma) * fourier_tail_bound(
            (2.0**k) * np.abs(np.asarray(x3, float)), modes or self.fourier_modes
        )

    def phi_total(self, x, modes=None):
        x = np.asarray(x, float)
        out = np.zeros(x.shape[:-1])
        for k in self.scales:
            out = out + self.phi_k(int(k), x, modes)
        return out

    def sigma(self, x, fast=True):
        """Diffusion matrices at ``x``, shape ``x.shape[:-1] + (3, 3)``."""
        x = np.asarray(x, float)
        p = self.phi_fast(x) if fast else self.phi_total(x)
        out = np.zeros(x.shape[:-1] + (3, 3))
        out[..., 0, 0] = 1.0 + p
        out[..., 1, 1] = 1.0 + p
        out[..., 2, 2] = 1.0
        return out

    # -- fast evaluation
    def table(self):
        return _build_table(self.gamma, self.n1, self.m_max, self.table_points)

    def phi_fast(self, x, backend=None):
        x = np.asarray(x, float)
        pts = np.ascontiguousarray(x.reshape(-1, 3))
        out = kernels(backend).phi_batch(pts, self.table().as_tuple())
        return out.reshape(x.shape[:-1])

    # -- serialisation
    def to_dict(self):
        return {
            "gamma": self.gamma,
            "n1": self.n1,
            "m_max": self.m_max,
            "fourier_modes": self.fourier_modes,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        return cls(
            gamma=float(d["gamma"]),
            n1=int(d.get("n1", 4)),
            m_max=int(d.get("m_max", 6)),
            fourier_modes=int(d.get("fourier_modes", 32)),
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


T_FAR = 2.0
T_CONST = 13.0


@lru_cache(maxsize=16)
def _build_table(gamma, n1, m_max, nu):
    ht = 1.0 / 64.0
    ht_far = 1.0 / 16.0
    nu_far = 48
    k = np.arange(max(m_max + 1, 0), dtype=np.int64) * n1
    amps = 2.0 ** (-k * gamma)
    suffix = np.cumsum(amps[::-1])[::-1].copy()
    return FieldTable(
        scales=2.0 ** k.astype(float),
        amps=amps,
        suffix=suffix,
        table=_phi0_grid(nu, 0.0, ht, int(round(T_FAR / ht)) + 4),
        hu=PERIOD / nu,
        ht=ht,
        t_far=T_FAR,
        table_far=_phi0_grid(nu_far, T_FAR, ht_far, int(round((T_CONST - T_FAR) / ht_far)) + 4),
        hu_far=PERIOD / nu_far,
        ht_far=ht_far,
        t_const=T_CONST,
        mean=float(hankel_coefficient(0.0)),
    )


def null_field():
    """The trivial field ``phi = 0`` (no scales)."""
    return CounterexampleField(gamma=0.5, m_max=-1)


# ------------------------------------------------------------ certificates


def laplacian_residual(field, k=0, n=64, x3_min=0.5, order=4, modes=None):
    """Max discrete Laplacian of ``phi_k`` on an ``n^2 x n`` grid over one period.

    The grid spacing is ``h = 3 2^{-k} / n`` in every direction, periodic
    horizontally, with planes ``x3 = x3_min + i h``. ``order=2`` is the 7-point
    stencil, ``order=4`` the fourth-order 13-point one.
    """
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    h = PERIOD * 2.0 ** (-k) / n
    g = order // 2
    u = np.arange(n) * h
    z = x3_min + (np.arange(n + 2 * g) - g) * h
    X1, X2, X3 = np.meshgrid(u, u, z, indexing="ij")
    v = field.phi_k(k, np.stack([X1, X2, X3], -1), modes)
    if order == 2:
        w = np.array([1.0, -2.0, 1.0])
    else:
        w = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0
    lap = np.zeros((n, n, n))
    for i, c in enumerate(w):
        s = i - g
        lap += c * np.roll(v, -s, 0)[:, :, g:-g]
        lap += c * np.roll(v, -s, 1)[:, :, g:-g]
        lap += c * v[:, :, i:i + n]
    return float(np.abs(lap / h**2).max())


@dataclass
class GradientCertificate:
    """Normalized gradient ``max |d sigma_11 / dx_k| x3^{1-gamma}`` per height level."""

    c1: float
    x3: np.ndarray
    normalized: np.ndarray
    argmax: np.ndarray
    refine: int

    def to_csv(self, path):
        np.savetxt(path, np.column_stack([self.x3, self.normalized]), delimiter=",",
                   header="x3,normalized_gradient", comments="", fmt="%.17g")


def certify_gradient_bound(field, refine=1, per_octave=2, ray_points=16, rel_step=1e-4,
                           modes=None, x3_max=1.0):
    """Measured ``c1`` with ``|grad sigma_11(x)| <= c1 x3^{gamma - 1}`` on a sample grid.

    Heights run over ``[2^{-m_max n1 - 2}, x3_max]`` with ``per_octave * refine``
    levels per octave. At each height the horizontal samples lie on two rays
    through a lattice point, rescaled to every scale within ``n1`` octaves of the
    height, with ``ray_points * refine`` points per ray. Derivatives are central
    differences of the Fourier reference with step ``rel_step * x3``.
    """
    if field.m_max < 0:
        return GradientCertificate(0.0, np.array([x3_max]), np.zeros(1), np.zeros(3), refine)
    gamma = field.gamma
    top = -math.log2(x3_max)
    bottom = field.m_max * field.n1 + 2
    e = np.arange(top, bottom + 1e-9, 1.0 / (per_octave * refine))
    x3 = 2.0 ** (-e)
    rho = np.linspace(0.0, 1.5, ray_points * refine)
    rays = np.concatenate([np.column_stack([rho, 0 * rho]),
                           np.column_stack([rho, rho]) / math.sqrt(2.0)])
    scales = field.scales
    norm = np.zeros(x3.size)
    arg = np.zeros((x3.size, 3))
    for i, (ei, z) in enumerate(zip(e, x3)):
        near = scales[np.abs(scales - ei) <= field.n1]
        if near.size == 0:
            near = scales[[np.argmin(np.abs(scales - ei))]]
        xh = np.concatenate([rays * 2.0 ** (-float(k)) for k in near])
        pts = np.column_stack([xh, np.full(xh.shape[0], z)])
        s = rel_step * z
        best = np.zeros(pts.shape[0])
        for a in range(3):
            dp = pts.copy()
            dm = pts.copy()
            dp[:, a] += s
            dm[:, a] -= s
            der = (field.phi_total(dp, modes) - field.phi_total(dm, modes)) / (2 * s)
            best = np.maximum(best, np.abs(der))
        j = int(np.argmax(best))
        norm[i] = best[j] * z ** (1.0 - gamma)
        arg[i] = pts[j]
    i = int(np.argmax(norm))
    return GradientCertificate(float(norm[i]), x3, norm, arg[i], refine)


@dataclass
class GradientStudy:
    certificates: list
    spread: float
    stable: bool
    offending_point: np.ndarray | None


def gradient_refinement_study(field, refinements=(1, 2, 4), tol=0.2, **kw):
    """``certify_gradient_bound`` under grid refinement; stable when every ``c1`` is
    within ``tol`` of the coarsest one. An unstable study names the grid point of
    the largest normalized gradient on the finest grid."""
    certs = [certify_gradient_bound(field, refine=r, **kw) for r in refinements]
    c = np.array([ct.c1 for ct in certs])
    spread = float(np.max(np.abs(c / c[0] - 1.0))) if c[0] > 0 else 0.0
    stable = spread <= tol
    return GradientStudy(certs, spread, stable, None if stable else certs[-1].argmax)
