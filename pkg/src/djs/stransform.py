"""Moment generating functions, functional inverses and S-transforms.

For a measure ``mu`` on ``[0, inf)``

    m(z) = sum_k m_k z^k = int lam z / (1 - lam z) mu(dlam),

``z(m)`` is its inverse on the real branch through the origin and
``S(m) = (1 + m) / m * z(m)``. Under the square composition
``S_{K<>R} = S_K S_R / (1 + m)``; for ``L`` equal layers this turns into the
scalar equation ``m = m_K(z^{1/L} Psi_L(m))`` with
``Psi_L(m) = (1 + m)^{1/L} m^{1 - 1/L}``.
"""

from __future__ import annotations

import cmath
import json
import math
from dataclasses import dataclass

import numpy as np

from djs.errors import BranchError, ConfigError, ConvergenceError, NumericalError
from djs.measures import SpectralMeasure

DEFAULT_ORDER = 12
DEFAULT_M_POINTS = (0.05, 0.1, 0.2, 0.3, 0.5)


@dataclass(frozen=True)
class MomentSeries:
    """Moments ``m_1..m_K`` of a measure."""

    coeffs: tuple
    source: str = ""

    def __post_init__(self):
        c = tuple(float(x) for x in self.coeffs)
        object.__setattr__(self, "coeffs", c)
        if len(c) < 8:
            raise ConfigError("a moment series needs at least 8 coefficients")
        if not all(math.isfinite(x) for x in c):
            raise ConfigError("moments must be finite")

    @classmethod
    def from_measure(cls, mu, order=DEFAULT_ORDER, source=""):
        return cls(tuple(mu.moment(k) for k in range(1, order + 1)), source)

    def __getitem__(self, k):
        """``m_k`` with ``m_0 = 1``."""
        return 1.0 if k == 0 else self.coeffs[k - 1]

    def __len__(self):
        return len(self.coeffs)

    def hankel_ok(self, rtol=1e-9):
        """Leading principal minors of the 3x3 moment Hankel matrix are >= 0."""
        H = np.array([[self[i + j] for j in range(3)] for i in range(3)])
        scale = max(1.0, np.max(np.abs(H))) ** 3
        return all(np.linalg.det(H[:n, :n]) >= -rtol * scale for n in (1, 2, 3))

    def evaluate(self, z):
        return sum(c * z ** (k + 1) for k, c in enumerate(self.coeffs))

    def to_dict(self):
        return {"coeffs": list(self.coeffs), "source": self.source}


# -- moment generating function and its inverse ------------------------------


def moment_gen(mu, z):
    """``sum_k m_k z^k`` summed in closed form over the atoms."""
    z = complex(z)
    lam, w = mu.locations, mu.weights
    den = 1.0 - lam * z
    nz = lam > 0
    if np.any(np.abs(den[nz]) < 1e-14):
        raise NumericalError(f"1/z = {1 / z if z else math.inf} hits an atom", operation="moment_gen")
    val = np.sum(w[nz] * lam[nz] * z / den[nz])
    return val.real if z.imag == 0 else complex(val)


def moment_gen_derivative(mu, z):
    lam, w = mu.locations, mu.weights
    return np.sum(w * lam / (1.0 - lam * z) ** 2)


def branch_range(mu):
    """Range ``(lo, hi)`` of ``m`` on the real branch ``z in (-inf, 1/lam_max)``."""
    lo = -(1.0 - mu.mass_at_zero)
    hi = math.inf if mu.mass_at(mu.max_location) > 0 else moment_gen(mu, 1.0 / mu.max_location)
    return lo, hi


def functional_inverse(mu, m_target, tol=1e-12, max_iter=200):
    """Real ``z`` with ``moment_gen(mu, z) = m_target``.

    ``m`` is increasing on ``(-inf, 1/lam_max)``, so Newton from
    ``m_target / m_1`` is safeguarded by a bisection bracket. Close to the
    support edge ``m'`` is large and ``tol`` may lie below what one ulp of
    ``z`` can resolve; the best iterate is then accepted if its residual is
    within ``10 tol`` or at that resolution floor.
    """
    m_target = float(m_target)
    if mu.max_location <= 0:
        raise ConfigError("measure is concentrated at zero; m is identically 0")
    lo_m, hi_m = branch_range(mu)
    if not lo_m < m_target < hi_m:
        raise ConfigError(f"m = {m_target} is outside the invertible branch ({lo_m:.6g}, {hi_m:.6g})")
    if m_target == 0:
        return 0.0
    zmax = 1.0 / mu.max_location
    if m_target > 0:
        a, b = 0.0, zmax
    else:
        a, b = -1.0, 0.0
        while moment_gen(mu, a) > m_target:
            a *= 2.0
            if a < -1e300:
                raise ConvergenceError("could not bracket the inverse", operation="functional_inverse")
    z = min(max(m_target / mu.mean(), a), b)
    if not a < z < b:
        z = 0.5 * (a + b)
    best = (math.inf, z)
    for _ in range(max_iter):
        g = moment_gen(mu, z) - m_target
        if abs(g) < tol:
            return z
        best = min(best, (abs(g), z))
        if g > 0:
            b = z
        else:
            a = z
        dz = g / moment_gen_derivative(mu, z)
        zn = z - dz
        if not a < zn < b:
            zn = 0.5 * (a + b)
        if zn == z or b - a <= 4 * np.finfo(float).eps * max(abs(a), abs(b)):
            break
        z = zn
    g, z = best
    # resolution floor: one ulp of z moves m by about m'(z) * eps * |z|
    floor = 4 * np.finfo(float).eps * abs(z) * moment_gen_derivative(mu, z)
    if g < max(10 * tol, floor):
        return z
    raise ConvergenceError(f"functional inverse did not converge (residual {abs(g):.3e})",
                           operation="functional_inverse", residual=abs(g))


def s_transform(mu, m, tol=1e-12):
    """``S(m) = (1 + m) / m * z(m)``."""
    if m == 0:
        raise ConfigError("S-transform needs m != 0; its limit at 0 is 1/m_1")
    return (1.0 + m) / m * functional_inverse(mu, m, tol)


@dataclass
class ProductLawReport:
    m_points: list
    s_K: list
    s_prev: list
    s_next: list
    residuals: list

    @property
    def max_residual(self):
        return max(self.residuals)

    def to_dict(self):
        return {"m_points": self.m_points, "S_K": self.s_K, "S_prev": self.s_prev,
                "S_next": self.s_next, "residuals": self.residuals,
                "max_residual": self.max_residual}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)


def check_product_law(nu_K, nu_M_l, nu_M_l1, m_points=DEFAULT_M_POINTS, tol=1e-12):
    """Residuals of ``S_next(m) = S_K(m) S_prev(m) / (1 + m)`` at ``m_points``."""
    sk, sp, sn, res = [], [], [], []
    for m in m_points:
        a, b, c = (s_transform(mu, m, tol) for mu in (nu_K, nu_M_l, nu_M_l1))
        sk.append(a)
        sp.append(b)
        sn.append(c)
        res.append(abs(c - a * b / (1.0 + m)))
    return ProductLawReport(list(m_points), sk, sp, sn, res)


# -- equal-width functional equation ------------------------------------------


def psi(m, L):
    """``(1 + m)^{1/L} m^{1 - 1/L}`` with principal branches."""
    return (1 + m) ** (1.0 / L) * m ** (1.0 - 1.0 / L)


def _penfo_newton(nu_K, L, z, m, tol, max_iter=60):
    zr = z ** (1.0 / L)
    for it in range(max_iter):
        w = zr * psi(m, L)
        g = m - moment_gen(nu_K, w)
        if abs(g) < tol * max(1.0, abs(m)):
            return m, True
        dw = w * (1.0 / (L * (1 + m)) + (1.0 - 1.0 / L) / m)
        dg = 1.0 - complex(moment_gen_derivative(nu_K, w)) * dw
        m = m - g / dg
        if not np.isfinite(m) or m == 0:
            return m, False
    return m, False


def _penfo_path(z, z0):
    """Arc of radius ``z0`` to ``arg z``, then the ray out to ``|z|``.

    Moving outward along ``arg z`` keeps the path off the positive real
    axis, where the singularities of ``m`` sit, unless ``z`` itself is there.
    """
    r, th = abs(z), cmath.phase(z)
    n_t = max(1, int(math.ceil(abs(th) / 0.05)))
    arc = [z0 * cmath.exp(1j * th * i / n_t) for i in range(1, n_t + 1)] if th != 0 else []
    n_r = max(2, int(math.ceil(4 * math.log(max(r / z0, 1.0 + 1e-12)))))
    u = cmath.exp(1j * th)
    radial = [u * z0 * (r / z0) ** (i / n_r) for i in range(1, n_r + 1)] if r > z0 else []
    return [complex(x) for x in arc + radial] or [complex(z)]


def solve_penfo(nu_K, L, z, tol=1e-13, m0=None):
    """Solution ``m`` of ``m = m_K(z^{1/L} Psi_L(m))`` continued from small real ``z``.

    Near 0 the solution is ``m ~ m_1(K)^L z``. The path turns along a small
    circle to ``arg z`` and then runs out along that ray, with Newton at
    each node; a node that needs a large correction relative
    to its predictor is subdivided, and a jump that persists under
    subdivision is reported as a branch error.
    """
    if int(L) != L or L < 1:
        raise ConfigError("L must be a positive integer")
    z = complex(z)
    if z == 0:
        return 0j
    if mu_zero(nu_K):
        raise ConfigError("nu_K concentrated at 0 gives the trivial solution only")
    a = nu_K.mean()
    z0 = min(abs(z), 1e-4 / (a ** L * nu_K.max_location / a))
    m = complex(a ** L * z0) if m0 is None else complex(m0)
    m, ok = _penfo_newton(nu_K, L, complex(z0), m, tol)
    if not ok:
        raise ConvergenceError(f"no solution near the origin (z = {z0})", operation="solve_penfo")
    prev_z = complex(z0)
    for target in _penfo_path(z, z0):
        m, prev_z = _penfo_step(nu_K, L, prev_z, target, m, tol, depth=0)
    return m


def mu_zero(mu):
    return mu.max_location <= 0


def _penfo_step(nu_K, L, z_from, z_to, m, tol, depth):
    # predictor: m scales roughly like z near the series region
    pred = m * (z_to / z_from)
    mn, ok = _penfo_newton(nu_K, L, z_to, pred, tol)
    if ok and abs(mn - pred) <= 0.25 * abs(pred) + 1e-300:
        return mn, z_to
    if depth > 20:
        raise BranchError(f"penfo solution jumps or fails near z = {z_to}", operation="solve_penfo",
                          z=z_to)
    mid = _path_mid(z_from, z_to)
    m, z_mid = _penfo_step(nu_K, L, z_from, mid, m, tol, depth + 1)
    return _penfo_step(nu_K, L, z_mid, z_to, m, tol, depth + 1)


def _path_mid(a, b):
    ra, rb = abs(a), abs(b)
    pa, pb = cmath.phase(a), cmath.phase(b)
    return cmath.rect(math.sqrt(ra * rb), 0.5 * (pa + pb))


def penfo_radius(nu_K, L):
    """Half the convergence radius implied by the worst-case support edge."""
    edge = nu_K.max_location ** L * (L + 1) ** (L + 1) / L ** L
    return 0.5 / edge


def penfo_moments(nu_K, L, order=4, n_nodes=64, radius=None, tol=1e-14):
    """Moments ``m_1..m_order`` of the ``L``-layer law from ``solve_penfo``.

    Cauchy integral of ``m(z) / z^{k+1}`` over a circle inside the series
    region, sampled on the upper half and completed by conjugate symmetry.
    """
    r = penfo_radius(nu_K, L) if radius is None else float(radius)
    theta = math.pi * (np.arange(n_nodes) + 0.5) / n_nodes
    vals = np.array([solve_penfo(nu_K, L, r * cmath.exp(1j * t), tol) for t in theta])
    out = []
    for k in range(1, order + 1):
        integrand = vals * np.exp(-1j * k * theta)
        out.append(float(np.mean(integrand).real / r ** k))
    return out
