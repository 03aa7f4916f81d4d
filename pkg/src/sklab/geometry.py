"""Graph domains ``D = {x_d > Phi(xhat)}`` over C^{1+gamma} boundary functions.

Points are numpy arrays whose last axis holds the ``d`` coordinates, so every
query below accepts a single point or a stack of points.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

BOUNDARY_TOL = 1e-9


def bump_profile(r):
    """exp(1 - 1/(1 - (4r/3)^2)) on r < 3/4, zero beyond; equals 1 at r = 0."""
    r = np.abs(np.asarray(r, dtype=float))
    out = np.zeros_like(r)
    inside = r < 0.75
    s = (r[inside] / 0.75) ** 2
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - s))
    return out


def bump_profile_derivs(r):
    """First and second derivatives of :func:`bump_profile`."""
    r = np.abs(np.asarray(r, dtype=float))
    d1 = np.zeros_like(r)
    d2 = np.zeros_like(r)
    inside = r < 0.75
    ri = r[inside]
    q = 1.0 - (ri / 0.75) ** 2
    psi = np.exp(1.0 - 1.0 / q)
    dq = -2.0 * ri / 0.75**2
    # d/dr exp(1 - 1/q) = psi * dq / q^2
    g = dq / q**2
    dg = (-2.0 / 0.75**2) / q**2 - 2.0 * dq**2 / q**3
    d1[inside] = psi * g
    d2[inside] = psi * (g * g + dg)
    return d1, d2


class BoundaryFunction:
    """Evaluable boundary graph with gradient and a C^{1+gamma} seminorm bound."""

    kind = "abstract"

    def __init__(self, gamma, d_minus_1):
        if not 0.0 < gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
        if d_minus_1 < 1:
            raise ValueError("d_minus_1 must be at least 1")
        self.gamma = float(gamma)
        self.d_minus_1 = int(d_minus_1)

    def _check(self, xh):
        xh = np.asarray(xh, dtype=float)
        if xh.shape[-1] != self.d_minus_1:
            raise ValueError(
                f"expected last axis of length {self.d_minus_1}, got shape {xh.shape}"
            )
        return xh

    def eval(self, xh):
        raise NotImplementedError

    def grad(self, xh):
        raise NotImplementedError

    @property
    def seminorm_bound(self):
        raise NotImplementedError

    def parameters(self):
        return {}

    def to_dict(self):
        return {
            "kind": self.kind,
            "gamma": self.gamma,
            "d_minus_1": self.d_minus_1,
            "parameters": self.parameters(),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    def __repr__(self):
        return f"{type(self).__name__}({self.to_json()})"


class FlatBoundary(BoundaryFunction):
    kind = "flat"

    def __init__(self, d_minus_1=2, gamma=1.0):
        super().__init__(gamma, d_minus_1)

    def eval(self, xh):
        xh = self._check(xh)
        return np.zeros(xh.shape[:-1])

    def grad(self, xh):
        return np.zeros_like(self._check(xh))

    @property
    def seminorm_bound(self):
        return 0.0


class RadialBump(BoundaryFunction):
    """``amplitude * psi(|xhat - center| / radius)`` with the compact bump psi."""

    kind = "radial-bump"

    def __init__(self, amplitude, radius=1.0, center=None, gamma=1.0, d_minus_1=2):
        super().__init__(gamma, d_minus_1)
        if radius <= 0:
            raise ValueError("radius must be positive")
        self.amplitude = float(amplitude)
        self.radius = float(radius)
        c = np.zeros(d_minus_1) if center is None else np.asarray(center, float)
        if c.shape != (d_minus_1,):
            raise ValueError("center has the wrong dimension")
        self.center = c
        self._bound = None

    def _rho(self, xh):
        diff = self._check(xh) - self.center
        return diff, np.sqrt(np.sum(diff * diff, axis=-1))

    def eval(self, xh):
        _, rho = self._rho(xh)
        return self.amplitude * bump_profile(rho / self.radius)

    def grad(self, xh):
        diff, rho = self._rho(xh)
        d1, _ = bump_profile_derivs(rho / self.radius)
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(rho[..., None] > 0, diff / rho[..., None], 0.0)
        return (self.amplitude / self.radius) * d1[..., None] * unit

    @property
    def seminorm_bound(self):
        # |g(x) - g(y)| <= min(M2 r, 2 M1) <= M2^gamma (2 M1)^(1-gamma) r^gamma
        if self._bound is None:
            s = np.linspace(0.0, 0.75, 20001)[:-1]
            d1, d2 = bump_profile_derivs(s)
            with np.errstate(invalid="ignore", divide="ignore"):
                tang = np.where(s > 0, np.abs(d1) / s, np.abs(d2))
            a = abs(self.amplitude)
            m1 = a / self.radius * np.max(np.abs(d1))
            m2 = a / self.radius**2 * max(np.max(np.abs(d2)), np.max(tang))
            # grid max under-reads the true sup by < 1e-3 relative
            m1 *= 1.001
            m2 *= 1.001
            self._bound = float(m2**self.gamma * (2 * m1) ** (1 - self.gamma))
        return self._bound

    def parameters(self):
        return {
            "amplitude": self.amplitude,
            "radius": self.radius,
            "center": self.center.tolist(),
        }


class LacunarySeries(BoundaryFunction):
    """``sum_k A 2^{-k(1+gamma)} cos(b 2^k e.xhat + theta_k)`` for k = 0..depth.

    The gradient is gamma-Holder with a seminorm bounded independently of the
    truncation depth when gamma < 1.
    """

    kind = "lacunary-series"

    def __init__(
        self,
        gamma,
        amplitude=0.1,
        depth=8,
        base_frequency=1.0,
        direction=None,
        phases=None,
        d_minus_1=2,
    ):
        super().__init__(gamma, d_minus_1)
        if depth < 0:
            raise ValueError("depth must be >= 0")
        self.amplitude = float(amplitude)
        self.depth = int(depth)
        self.base_frequency = float(base_frequency)
        e = np.zeros(d_minus_1) if direction is None else np.asarray(direction, float)
        if direction is None:
            e[0] = 1.0
        norm = np.linalg.norm(e)
        if e.shape != (d_minus_1,) or norm == 0:
            raise ValueError("direction must be a nonzero vector of length d-1")
        self.direction = e / norm
        th = np.zeros(depth + 1) if phases is None else np.asarray(phases, float)
        if th.shape != (depth + 1,):
            raise ValueError("need one phase per term")
        self.phases = th
        k = np.arange(depth + 1)
        self.freqs = self.base_frequency * 2.0**k
        self.amps = self.amplitude * 2.0 ** (-k * (1.0 + self.gamma))

    def _arg(self, xh):
        s = self._check(xh) @ self.direction
        return s[..., None] * self.freqs + self.phases

    def eval(self, xh):
        return np.cos(self._arg(xh)) @ self.amps

    def grad(self, xh):
        slope = -(np.sin(self._arg(xh)) @ (self.amps * self.freqs))
        return slope[..., None] * self.direction

    @property
    def seminorm_bound(self):
        # each term contributes at most A b^{1+g} 2^{1-g}; the dyadic split of
        # the terms around |x-y| ~ 1/(b 2^k) sums to the geometric factor.
        g = self.gamma
        per_term = abs(self.amplitude) * self.base_frequency ** (1 + g) * 2 ** (1 - g)
        n_terms = self.depth + 1
        if g < 1.0:
            geometric = 1.0 / (1.0 - 2.0 ** (g - 1.0)) + 1.0 / (1.0 - 2.0**-g)
            return per_term * min(n_terms, geometric)
        return per_term * n_terms

    def parameters(self):
        return {
            "amplitude": self.amplitude,
            "depth": self.depth,
            "base_frequency": self.base_frequency,
            "direction": self.direction.tolist(),
            "phases": self.phases.tolist(),
        }


def smooth_step(s):
    """C^infinity transition: 1 for s <= 0, 0 for s >= 1."""
    s = np.clip(np.asarray(s, dtype=float), 0.0, 1.0)
    out = np.ones_like(s)
    mid = (s > 0) & (s < 1)
    a = np.exp(-1.0 / s[mid])
    b = np.exp(-1.0 / (1.0 - s[mid]))
    out[mid] = b / (a + b)
    out[s >= 1] = 0.0
    return out


def smooth_step_deriv(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    mid = (s > 0) & (s < 1)
    sm = s[mid]
    a = np.exp(-1.0 / sm)
    b = np.exp(-1.0 / (1.0 - sm))
    da = a / sm**2
    db = -b / (1.0 - sm) ** 2
    out[mid] = (db * (a + b) - b * (da + db)) / (a + b) ** 2
    return out


@lru_cache(maxsize=None)
def _cutoff_constants():
    """Bounds on ``|grad chi|`` and on the Lipschitz constant of ``grad chi`` for
    ``chi(y) = smooth_step((8|y| - 1) / 2)``, with a 1% margin over a fine grid."""
    s = np.linspace(0.0, 1.0, 200001)
    d1 = smooth_step_deriv(s)
    d2 = np.gradient(d1, s)
    m1 = 4.0 * np.abs(d1).max()
    # radial second derivative 16 s''; tangential chi'(r)/r with r >= 1/8
    m2 = max(16.0 * np.abs(d2).max(), 32.0 * np.abs(d1).max())
    return 1.01 * m1, 1.01 * m2


class LocalizedChart(BoundaryFunction):
    """Localised, dilated chart of a base boundary around the origin.

    ``Phi_eps(x) = chi(|x|/eps) (Phi(x) - Phi(0) - grad Phi(0).x)`` vanishes for
    ``|x| >= 3 eps``; the chart returned is ``Phi_eps(8 eps y) / (8 eps)``, i.e.
    the boundary seen in coordinates where the box of half-width ``8 eps`` has
    half-width 1.
    """

    kind = "chart"

    def __init__(self, base, eps):
        super().__init__(base.gamma, base.d_minus_1)
        if eps <= 0:
            raise ValueError("eps must be positive")
        self.base = base
        self.eps = float(eps)
        zero = np.zeros(base.d_minus_1)
        self._phi0 = float(base.eval(zero))
        self._g0 = np.asarray(base.grad(zero), float)

    def _local(self, y):
        y = self._check(y)
        x = 8.0 * self.eps * y
        r = np.sqrt(np.sum(x * x, axis=-1))
        s = (r / self.eps - 1.0) / 2.0
        return x, r, s

    def eval(self, y):
        x, _, s = self._local(y)
        f = self.base.eval(x) - self._phi0 - x @ self._g0
        return smooth_step(s) * f / (8.0 * self.eps)

    def grad(self, y):
        x, r, s = self._local(y)
        f = self.base.eval(x) - self._phi0 - x @ self._g0
        gf = self.base.grad(x) - self._g0
        chi = smooth_step(s)
        dchi = smooth_step_deriv(s) / (2.0 * self.eps)
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(r[..., None] > 0, x / r[..., None], 0.0)
        # d/dy = 8 eps d/dx, and the overall 1/(8 eps) cancels it
        return chi[..., None] * gf + (dchi * f)[..., None] * unit

    @property
    def seminorm_bound(self):
        # K = base seminorm * (8 eps)^gamma bounds the dilated residual F: its
        # gradient quotient, |grad F(y)| <= K|y|^g and |F(y)| <= K|y|^{1+g}.
        # For the product chi grad F + F grad chi, split |y - y'| < 1/4 (both
        # points within 5/8 of the origin, chi supported in 3/8) from >= 1/4
        # (twice the sup of the gradient).
        g = self.gamma
        K = self.base.seminorm_bound * (8.0 * self.eps) ** g
        m1, m2 = _cutoff_constants()
        sup = (3 / 8) ** g + (3 / 8) ** (1 + g) * m1
        far = 2.0 * sup * 4.0**g
        near = 1.0 + 0.25 ** (1 - g) * (5 / 8) ** g * (2.0 * m1 + (5 / 8) * m2)
        return K * max(far, near)

    def parameters(self):
        return {"eps": self.eps, "base": self.base.to_dict()}


_KINDS = {
    "flat": FlatBoundary,
    "radial-bump": RadialBump,
    "lacunary-series": LacunarySeries,
    "chart": LocalizedChart,
}


def boundary_from_dict(spec):
    """Inverse of :meth:`BoundaryFunction.to_dict`."""
    kind = spec["kind"]
    params = dict(spec.get("parameters", {}))
    gamma = spec.get("gamma", 1.0)
    dm1 = spec.get("d_minus_1", 2)
    if kind == "flat":
        return FlatBoundary(d_minus_1=dm1, gamma=gamma)
    if kind == "radial-bump":
        return RadialBump(gamma=gamma, d_minus_1=dm1, **params)
    if kind == "lacunary-series":
        return LacunarySeries(gamma=gamma, d_minus_1=dm1, **params)
    if kind == "chart":
        return LocalizedChart(boundary_from_dict(params["base"]), params["eps"])
    raise ValueError(f"unknown boundary kind {kind!r}; expected one of {sorted(_KINDS)}")


def boundary_from_json(text):
    return boundary_from_dict(json.loads(text))


@dataclass
class GraphDomain:
    """The region strictly above the graph of ``phi`` in R^d."""

    phi: BoundaryFunction
    d: int = field(default=0)
    tol: float = BOUNDARY_TOL

    def __post_init__(self):
        if self.d == 0:
            self.d = self.phi.d_minus_1 + 1
        if self.d < 2 or self.d != self.phi.d_minus_1 + 1:
            raise ValueError("ambient dimension must be phi.d_minus_1 + 1 and >= 2")

    def _split(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.d:
            raise ValueError(f"points must have {self.d} coordinates")
        return x, x[..., :-1], x[..., -1]

    def gap(self, x):
        """Signed vertical gap ``x_d - Phi(xhat)``."""
        _, xh, xd = self._split(x)
        return xd - self.phi.eval(xh)

    def contains(self, x):
        return self.gap(x) > 0

    def on_boundary(self, x):
        return np.abs(self.gap(x)) <= self.tol

    def inward_normal(self, x):
        x, xh, _ = self._split(x)
        g = self.gap(x)
        if np.any(np.abs(g) > self.tol):
            raise ValueError(
                f"inward_normal needs boundary points; max |gap| = {np.max(np.abs(g)):.3e}"
            )
        return self.normal_at(xh)

    def normal_at(self, xh):
        """Inward unit normal of the graph above ``xhat`` (no membership check)."""
        grad = self.phi.grad(xh)
        n = np.concatenate([-grad, np.ones(grad.shape[:-1] + (1,))], axis=-1)
        return n / np.linalg.norm(n, axis=-1, keepdims=True)

    def flatten(self, x):
        x, xh, xd = self._split(x)
        out = x.copy()
        out[..., -1] = xd - self.phi.eval(xh)
        return out

    def unflatten(self, y):
        y, yh, yd = self._split(y)
        out = y.copy()
        out[..., -1] = yd + self.phi.eval(yh)
        return out

    def boundary_distance(self, x):
        """Distance to the graph, estimated as ``gap / sqrt(1 + |grad Phi(xhat)|^2)``.

        Exact for affine boundaries. For a C^{1+gamma} graph the slope changes
        by at most ``seminorm_bound * gap^gamma`` over the relevant footprint, so
        the relative error is ``O(seminorm_bound * gap^gamma)``. Never exceeds
        the vertical gap.
        """
        x, xh, _ = self._split(x)
        g = self.gap(x)
        if np.any(g < -self.tol):
            raise ValueError("boundary_distance is defined for points in the closed domain")
        g = np.maximum(g, 0.0)
        slope = np.linalg.norm(self.phi.grad(xh), axis=-1)
        return g / np.sqrt(1.0 + slope**2)

    def distance_lower_bound(self, x):
        """Rigorous lower bound ``gap / sqrt(1 + L^2)`` with L the cone slope.

        ``L = |grad Phi(xhat)| + seminorm * gap^gamma`` dominates the slope on
        the footprint of any boundary point within ``gap`` of x.
        """
        x, xh, _ = self._split(x)
        g = np.maximum(self.gap(x), 0.0)
        slope = np.linalg.norm(self.phi.grad(xh), axis=-1)
        cone = slope + self.phi.seminorm_bound * g**self.phi.gamma
        return g / np.sqrt(1.0 + cone**2)

    def foot_point(self, x, iters=200):
        """Nearest boundary point of ``x`` by fixed-point iteration on the foot condition.

        The foot ``(yh, Phi(yh))`` of ``x`` satisfies
        ``yh = xhat + (x_d - Phi(yh)) grad Phi(yh)``; the iteration is damped by
        1/2 and converges when the gap times the curvature scale is small.
        """
        x, xh, xd = self._split(x)
        yh = xh.copy()
        for _ in range(iters):
            new = xh + (xd - self.phi.eval(yh))[..., None] * self.phi.grad(yh)
            step = 0.5 * (new - yh)
            yh = yh + step
            if np.max(np.abs(step), initial=0.0) < 1e-16:
                break
        return np.concatenate([yh, self.phi.eval(yh)[..., None]], axis=-1)


def holder_certificate(phi, n_pairs, seed, box=1.0, min_sep=1e-4, max_sep=1.0, gamma=None):
    """Largest sampled Holder quotient ``|grad(x) - grad(y)| / |x - y|^gamma``.

    Pairs are drawn with ``x`` uniform in ``[-box, box]^{d-1}`` and separations
    log-uniform in ``[min_sep, max_sep]``; deterministic for a given seed.
    ``gamma`` overrides ``phi.gamma`` (used to study the exponent dependence on
    a fixed pair set).
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    x, y = holder_pairs(phi.d_minus_1, n_pairs, seed, box, min_sep, max_sep)
    return holder_quotient(phi, x, y, phi.gamma if gamma is None else gamma)


def holder_pairs(dim, n_pairs, seed, box=1.0, min_sep=1e-4, max_sep=1.0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-box, box, size=(n_pairs, dim))
    u = rng.normal(size=(n_pairs, dim))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    r = np.exp(rng.uniform(np.log(min_sep), np.log(max_sep), size=n_pairs))
    return x, x + r[:, None] * u


def holder_quotient(phi, x, y, gamma):
    num = np.linalg.norm(phi.grad(x) - phi.grad(y), axis=-1)
    den = np.linalg.norm(x - y, axis=-1) ** gamma
    return float(np.max(num / den))
