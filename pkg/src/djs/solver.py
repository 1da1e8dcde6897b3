"""Self-consistent equations for the limiting spectrum of ``S X^T K X S / m``.

For measures ``nu_R`` (law of ``S^2``) and ``nu_K`` the pair ``(h, k)``
solves

    h = int lam nu_R(dlam) / ((k/c) lam - z)
    k = int lam nu_K(dlam) / (h lam + 1)

and the Stieltjes transform of the output is ``f = -1/z + h k / (c z)``.
``c = m/n`` is the aspect ratio; ``c = 1`` is the square case. The output
law ``nu_K <> nu_R`` is recovered from ``f`` just above the real axis.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from djs.activations import DEFAULT_ORDER, nu_K as _nu_K, q_schedule
from djs.errors import ConfigError, NumericalError
from djs.measures import DensityGrid, SpectralMeasure, dirac

CHUNK_ELEMENTS = 1 << 21
SCOUT_POINTS = 128


class ExtrapolationWarning(UserWarning):
    """Multi-layer composition with unequal widths."""


@dataclass(frozen=True)
class SolverConfig:
    damping: float = 0.5
    tol: float = 1e-12
    max_iter: int = 10_000
    eps_ladder: tuple = (1e-1, 3e-2, 1e-2, 3e-3, 1e-3)
    grid_points: int = 2000
    grid_power: float = 2.5
    aspect_c: float = 1.0
    density_floor: float = 1e-8
    deficit_threshold: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "eps_ladder", tuple(float(e) for e in self.eps_ladder))
        if not 0 < self.damping <= 1:
            raise ConfigError("damping must lie in (0, 1]")
        if not self.tol > 0:
            raise ConfigError("tol must be positive")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be positive")
        lad = self.eps_ladder
        if len(lad) < 2 or any(b >= a for a, b in zip(lad, lad[1:])):
            raise ConfigError("eps_ladder needs at least two strictly decreasing values")
        if lad[-1] < 1e-6:
            raise ConfigError("eps_ladder floor must be >= 1e-6")
        if self.grid_points < 16:
            raise ConfigError("grid_points must be at least 16")
        if not self.aspect_c > 0:
            raise ConfigError("aspect ratio c must be positive")

    def replace(self, **kw):
        d = asdict(self)
        d.update(kw)
        return SolverConfig(**d)

    def to_dict(self):
        d = asdict(self)
        d["eps_ladder"] = list(self.eps_ladder)
        return d

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown solver keys {sorted(unknown)}; "
                              f"valid keys: {sorted(cls.__dataclass_fields__)}")
        return cls(**d)


@dataclass(frozen=True)
class HKSolution:
    z: complex
    h: complex
    k: complex
    f: complex
    residual: float
    iterations: int
    valid: bool
    continued: bool = False

    @property
    def zeta(self):
        """Distance from ``z`` to the positive half-axis."""
        z = self.z
        return abs(z.imag) if z.real >= 0 else abs(z)

    def to_dict(self):
        c = lambda v: [v.real, v.imag]
        return {"z": c(self.z), "h": c(self.h), "k": c(self.k), "f": c(self.f),
                "residual": self.residual, "iterations": self.iterations, "valid": self.valid,
                "continued": self.continued}

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d):
        c = lambda v: complex(v[0], v[1])
        return cls(c(d["z"]), c(d["h"]), c(d["k"]), c(d["f"]), float(d["residual"]),
                   int(d["iterations"]), bool(d["valid"]), bool(d.get("continued", False)))


# -- batched Newton / fixed-point engine -------------------------------------


class _System:
    """Atoms of both measures with the zero atoms removed (they drop out)."""

    def __init__(self, nu_R, nu_K, c):
        self.c = float(c)
        r = nu_R.locations > 0
        self.lr = nu_R.locations[r]
        self.wr1 = nu_R.weights[r] * self.lr
        self.wr2 = self.wr1 * self.lr
        kk = nu_K.locations > 0
        self.lk = nu_K.locations[kk]
        self.wk1 = nu_K.weights[kk] * self.lk
        self.wk2 = self.wk1 * self.lk
        if self.lr.size == 0 or self.lk.size == 0:
            raise ConfigError("measures concentrated at zero are not admissible")
        self.m1R = float(self.wr1.sum())
        self.m1K = float(self.wk1.sum())

    def maps(self, h, k, z, derivs=True):
        inv_r = 1.0 / (np.multiply.outer(k / self.c, self.lr) - z[:, None])
        den_k = np.multiply.outer(h, self.lk) + 1.0
        if np.min(np.abs(den_k)) < 1e-14:
            raise NumericalError("h*lambda + 1 vanished at an atom", operation="solve_hk")
        inv_k = 1.0 / den_k
        H = inv_r @ self.wr1
        Kf = inv_k @ self.wk1
        if not derivs:
            return H, Kf
        inv_r *= inv_r
        inv_k *= inv_k
        return H, Kf, -(inv_r @ self.wr2) / self.c, -(inv_k @ self.wk2)

    def residual(self, h, k, H, Kf):
        return np.maximum(np.abs(h - H) / (1 + np.abs(h)), np.abs(k - Kf) / (1 + np.abs(k)))

    def initial(self, z):
        return self.m1R / (-z), np.full(z.shape, self.m1K, dtype=complex)


def _in_domain(h, k, z):
    s = np.sign(z.imag)
    upper = s != 0
    ok = np.where(upper, (h.imag * s >= 0) & (k.imag * s <= 0), (h.real > 0) & (k.real > 0))
    return ok & np.isfinite(h) & np.isfinite(k)


def _strictly_valid(h, k, z):
    s = np.sign(z.imag)
    upper = s != 0
    return np.where(upper, (h.imag * s > 0) & (k.imag * s < 0), (h.real > 0) & (k.real > 0))


def _solve_batch(sys, z, h, k, cfg):
    """Solve at every ``z`` from starting points ``(h, k)``.

    Newton steps with backtracking are accepted when they stay in the
    admissible half-planes and lower the residual; otherwise a damped
    alternating fixed-point step is taken (it maps the admissible set into
    itself). The per-point damping halves whenever a fixed-point step
    raises the residual. Map evaluations at accepted points are cached for
    the next iteration.
    """
    z = np.asarray(z, dtype=complex)
    h = np.array(h, dtype=complex)
    k = np.array(k, dtype=complex)
    n = z.size
    damp = np.full(n, cfg.damping)
    iters = np.zeros(n, dtype=int)
    active = np.ones(n, dtype=bool)
    best = np.full(n, np.inf)
    stall = np.zeros(n, dtype=int)
    H, Kf, Hk, Kh = sys.maps(h, k, z)
    res = sys.residual(h, k, H, Kf)
    for _ in range(cfg.max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        r = res[idx]
        improved = r < 0.99 * best[idx]
        best[idx] = np.where(improved, r, best[idx])
        stall[idx] = np.where(improved, 0, stall[idx] + 1)
        quit_ = (r < cfg.tol) | (stall[idx] > 200)
        active[idx[quit_]] = False
        idx, r = idx[~quit_], r[~quit_]
        if idx.size == 0:
            break
        iters[idx] += 1
        zi, hi, ki = z[idx], h[idx], k[idx]
        F1, F2 = hi - H[idx], ki - Kf[idx]
        hk, kh = Hk[idx], Kh[idx]
        with np.errstate(all="ignore"):
            dh = (-F1 - hk * F2) / (1.0 - hk * kh)
            dk = -F2 + kh * dh
        pending = np.isfinite(dh) & np.isfinite(dk)
        t = 1.0
        for _trial in range(12):
            j = np.flatnonzero(pending)
            if j.size == 0:
                break
            ht, kt = hi[j] + t * dh[j], ki[j] + t * dk[j]
            ok = _in_domain(ht, kt, zi[j])
            if ok.any():
                jj = j[ok]
                ev = sys.maps(ht[ok], kt[ok], zi[jj])
                rt = sys.residual(ht[ok], kt[ok], ev[0], ev[1])
                good = rt < r[jj]
                g = idx[jj[good]]
                h[g], k[g], res[g] = ht[ok][good], kt[ok][good], rt[good]
                H[g], Kf[g], Hk[g], Kh[g] = (e[good] for e in ev)
                pending[jj[good]] = False
            t *= 0.5
        fp = np.flatnonzero(pending | ~(np.isfinite(dh) & np.isfinite(dk)))
        if fp.size:
            gi = idx[fp]
            d = damp[gi]
            kn = (1 - d) * ki[fp] + d * Kf[gi]
            Hn, _ = sys.maps(hi[fp], kn, zi[fp], derivs=False)
            hn = (1 - d) * hi[fp] + d * Hn
            ev = sys.maps(hn, kn, zi[fp])
            rn = sys.residual(hn, kn, ev[0], ev[1])
            damp[gi[rn > r[fp]]] *= 0.5
            h[gi], k[gi], res[gi] = hn, kn, rn
            H[gi], Kf[gi], Hk[gi], Kh[gi] = ev
    valid = (res < cfg.tol) & _strictly_valid(h, k, z)
    return h, k, res, iters, valid


def _f_from_hk(h, k, z, c):
    return -1.0 / z + h * k / (c * z)


def _check_z(z):
    z = complex(z)
    if z.imag == 0 and z.real >= 0:
        raise ConfigError("z must be off the nonnegative half-axis")
    return z


def _continued(sys, nu_R, nu_K, z, cfg):
    """Solve at off-axis ``z`` by continuation down ``Re z`` from far above.

    Used when the direct iteration fails: high above the support the
    default start converges, and :func:`_descend` carries the solution down.
    Lower half-plane points are solved at the conjugate and mirrored.
    Returns ``(h, k, residual, valid)``; points whose descent fails come
    back invalid.
    """
    lower = z.imag < 0
    zu = np.where(lower, np.conj(z), z)
    lam, eta = zu.real, zu.imag
    top = 2.0 * max(support_bound(nu_R, nu_K, cfg.aspect_c), sys.m1R * sys.m1K / sys.c, 1.0)
    top = np.maximum(top, 2.0 * np.abs(zu))
    h = np.empty(z.size, dtype=complex)
    k = np.empty(z.size, dtype=complex)
    res = np.full(z.size, np.inf)
    valid = np.zeros(z.size, dtype=bool)
    for i in range(z.size):
        h0, k0 = sys.initial(lam[i:i + 1] + 1j * top[i:i + 1])
        try:
            hd, kd = _descend(sys, lam[i:i + 1], top[i:i + 1], h0, k0, eta[i:i + 1], cfg)
        except NumericalError:
            continue
        hs, ks, rs, _, vs = _solve_batch(sys, zu[i:i + 1], hd, kd, cfg)
        h[i], k[i], res[i], valid[i] = hs[0], ks[0], rs[0], vs[0]
    h = np.where(lower, np.conj(h), h)
    k = np.where(lower, np.conj(k), k)
    return h, k, res, valid


def solve_hk(nu_R, nu_K, z, cfg=None, h0=None, k0=None):
    """Solve the ``(h, k)`` system at a single spectral point ``z``.

    The iteration starts from ``(h0, k0)`` (default: the large-``|z|``
    asymptotics). If it does not reach an admissible solution, the point is
    solved again by continuation from far above the support and the result
    is flagged ``continued``.
    """
    cfg = cfg or SolverConfig()
    z = _check_z(z)
    sys = _System(nu_R, nu_K, cfg.aspect_c)
    za = np.array([z])
    hi, ki = sys.initial(za)
    if h0 is not None:
        hi = np.array([complex(h0)])
    if k0 is not None:
        ki = np.array([complex(k0)])
    h, k, res, iters, valid = _solve_batch(sys, za, hi, ki, cfg)
    continued = False
    if not valid[0] and z.imag != 0:
        hc, kc, rc, vc = _continued(sys, nu_R, nu_K, za, cfg)
        if vc[0]:
            h, k, res, valid, continued = hc, kc, rc, vc, True
    f = _f_from_hk(h, k, za, sys.c)
    return HKSolution(z, complex(h[0]), complex(k[0]), complex(f[0]), float(res[0]),
                      int(iters[0]), bool(valid[0]), continued)


def stieltjes_at(nu_R, nu_K, zs, cfg=None):
    """Stieltjes transform of ``nu_K <> nu_R`` at an array of points."""
    cfg = cfg or SolverConfig()
    zs = np.atleast_1d(np.asarray(zs, dtype=complex))
    for z in zs:
        _check_z(z)
    sys = _System(nu_R, nu_K, cfg.aspect_c)
    h0, k0 = sys.initial(zs)
    h, k, res, _, valid = _solve_batch(sys, zs, h0, k0, cfg)
    retry = np.flatnonzero(~valid & (zs.imag != 0))
    if retry.size:
        hc, kc, _, vc = _continued(sys, nu_R, nu_K, zs[retry], cfg)
        h[retry], k[retry], valid[retry] = hc, kc, vc
    if not valid.all():
        bad = zs[~valid][0]
        raise NumericalError(f"no admissible solution at z = {bad}", operation="stieltjes_at", z=bad)
    return _f_from_hk(h, k, zs, sys.c)


# -- density recovery ----------------------------------------------------------


def zero_atom(nu_R, nu_K, c=1.0):
    """Weight of the point mass at 0 in ``nu_K <> nu_R``.

    Generic rank count: ``1 - min((1 - K{0}) / c, 1 - R{0})``.
    """
    return max(0.0, 1.0 - min((1.0 - nu_K.mass_at_zero) / c, 1.0 - nu_R.mass_at_zero))


def support_bound(nu_R, nu_K, c=1.0):
    """Upper bound on the support of ``nu_K <> nu_R``."""
    return nu_K.max_location * nu_R.max_location * (1.0 + 1.0 / math.sqrt(c)) ** 2


def default_grid(nu_R, nu_K, cfg, upper=None, points=None):
    """``upper * (i/N)**grid_power`` for ``i = 1..N``."""
    b = support_bound(nu_R, nu_K, cfg.aspect_c) if upper is None else upper
    n = cfg.grid_points if points is None else points
    t = np.arange(1, n + 1) / n
    return b * t ** cfg.grid_power


def _predict(h, k, h_p, k_p, eta, eta_p, e_new, z):
    """Power-law extrapolation of ``(h, k)`` in the height ``eta``.

    Near a hard edge ``h`` grows like a power of ``eta``; extrapolating
    ``log h`` linearly in ``log eta`` from the last two states gives Newton
    a start close enough for quadratic convergence.
    """
    with np.errstate(all="ignore"):
        t = np.log(e_new / eta) / np.log(eta / eta_p)
        hs = h * (h / h_p) ** t
        ks = k * (k / k_p) ** t
    use = np.isfinite(t) & _in_domain(hs, ks, z)
    return np.where(use, hs, h), np.where(use, ks, k)


def _descend(sys, lam, eta, h, k, target, cfg, ratio=4.0):
    """Continue ``(h, k)`` down ``Re z = lam`` from height ``eta`` to ``target``.

    Steps shrink the height by ``ratio``; a point that fails to converge is
    retried from its last good state with the square root of its ratio.
    """
    eta = np.array(eta, dtype=float)
    h, k = h.copy(), k.copy()
    eta_p, h_p, k_p = np.full(lam.size, np.nan), h.copy(), k.copy()
    r = np.full(lam.size, ratio)
    inner = cfg.replace(max_iter=min(cfg.max_iter, 200))
    while True:
        act = np.flatnonzero(eta > target)
        if act.size == 0:
            return h, k
        e_new = np.maximum(eta[act] / r[act], target[act])
        z = lam[act] + 1j * e_new
        hs, ks = _predict(h[act], k[act], h_p[act], k_p[act], eta[act], eta_p[act], e_new, z)
        hn, kn, _, _, valid = _solve_batch(sys, z, hs, ks, inner)
        ok = act[valid]
        eta_p[ok], h_p[ok], k_p[ok] = eta[ok], h[ok], k[ok]
        h[ok], k[ok], eta[ok] = hn[valid], kn[valid], e_new[valid]
        r[ok] = np.minimum(r[ok] * 1.5, ratio)
        bad = act[~valid]
        r[bad] = np.sqrt(r[bad])
        if np.any(r[bad] < 1.0 + 1e-3):
            i = bad[np.argmin(r[bad])]
            _raise_invalid(np.array([False]), lam[i:i + 1], eta[i:i + 1])


def density_at(nu_R, nu_K, lambdas, cfg=None):
    """Continuous density of ``nu_K <> nu_R`` at the points ``lambdas``.

    For each point the transform is continued down the line ``Re z = lam``
    from far above the support, then evaluated on the eps ladder. Rungs are
    scaled by ``min(lam, mean)`` so that the power-law blow-up of the
    density near the origin is resolved. The last two rungs are combined by linear
    Richardson extrapolation to eps -> 0. The zero atom is subtracted from
    the transform first so its Lorentzian does not leak into the density.

    Returns ``(densities, atom_at_zero)``.
    """
    cfg = cfg or SolverConfig()
    lam = np.asarray(lambdas, dtype=float)
    if np.any(lam <= 0):
        raise ConfigError("density points must be positive")
    sys = _System(nu_R, nu_K, cfg.aspect_c)
    w0 = zero_atom(nu_R, nu_K, cfg.aspect_c)
    mean = sys.m1R * sys.m1K / sys.c
    top = 2.0 * max(support_bound(nu_R, nu_K, cfg.aspect_c), mean)
    rel = np.minimum(lam, mean)
    lad = np.asarray(cfg.eps_ladder)
    out = np.empty(lam.size)
    chunk = max(1, CHUNK_ELEMENTS // max(sys.lr.size, sys.lk.size, 1))
    for s in range(0, lam.size, chunk):
        li, ri = lam[s:s + chunk], rel[s:s + chunk]
        z = li + 1j * top
        h, k = sys.initial(z)
        eta = np.full(li.size, top)
        fs = []
        for e in lad:
            h, k = _descend(sys, li, eta, h, k, e * ri, cfg)
            eta = e * ri
            z = li + 1j * eta
            h, k, _, _, valid = _solve_batch(sys, z, h, k, cfg)
            _raise_invalid(valid, li, eta)
            fs.append(_f_from_hk(h, k, z, sys.c) + w0 / z)
        e1, e2 = lad[-2], lad[-1]
        d1, d2 = fs[-2].imag / np.pi, fs[-1].imag / np.pi
        rho = (e1 * d2 - e2 * d1) / (e1 - e2)
        out[s:s + chunk] = rho
    out[out < cfg.density_floor] = 0.0
    return out, w0


def _raise_invalid(valid, lam, eta):
    if not valid.all():
        i = np.flatnonzero(~valid)[0]
        raise NumericalError(
            f"no admissible solution at lambda = {lam[i]:.6g} (eta = {np.atleast_1d(eta)[i]:.3g})",
            operation="resolve_density", lam=float(lam[i]))


def resolve_density(nu_R, nu_K, cfg=None, lambdas=None):
    """Density of ``nu_K <> nu_R`` on a grid graded toward the origin."""
    cfg = cfg or SolverConfig()
    if lambdas is None:
        lam = default_grid(nu_R, nu_K, cfg, upper=_support_edge(nu_R, nu_K, cfg))
    else:
        lam = np.asarray(lambdas, float)
    rho, w0 = density_at(nu_R, nu_K, lam, cfg)
    return DensityGrid(lam, rho, atom_at_zero=w0)


def _support_edge(nu_R, nu_K, cfg, points=SCOUT_POINTS):
    """Upper end of the support from a coarse scouting pass."""
    b = support_bound(nu_R, nu_K, cfg.aspect_c)
    lam = default_grid(nu_R, nu_K, cfg, upper=b, points=points)
    rho, _ = density_at(nu_R, nu_K, lam, cfg.replace(eps_ladder=cfg.eps_ladder[:3]))
    pos = np.flatnonzero(rho > 1e-4 / b)
    if pos.size == 0 or pos[-1] == lam.size - 1:
        return b
    return min(b, 1.02 * lam[pos[-1] + 1])


def _powint(r, p):
    """``(r**p - 1) / p`` with the ``p -> 0`` limit."""
    lr = np.log(r)
    t = p * lr
    small = np.abs(t) < 1e-12
    with np.errstate(all="ignore"):
        return np.where(small, lr, np.expm1(t) / np.where(small, 1.0, p))


HEAD_ATOM_MASS = 1e-3
HEAD_FLOOR = 1e-9


def _cells(lam, rho):
    """Per-cell ``(mass, first moment, power-law exponent, positive)``."""
    x1, x2, r1, r2 = lam[:-1], lam[1:], rho[:-1], rho[1:]
    pos = (r1 > 0) & (r2 > 0)
    r = x2 / x1
    with np.errstate(all="ignore"):
        b = np.where(pos, np.log(r2 / r1) / np.log(r), 0.0)
    m_pow = r1 * x1 * _powint(r, b + 1)
    s_pow = r1 * x1 * x1 * _powint(r, b + 2)
    dx = x2 - x1
    m_lin = (r1 + r2) * dx / 2
    s_lin = dx * (r1 * (2 * x1 + x2) + r2 * (x1 + 2 * x2)) / 6
    return np.where(pos, m_pow, m_lin), np.where(pos, s_pow, s_lin), b, pos


def _refine(lam, rho, mass, b, pos):
    """Insert points so that no cell carries more than ``HEAD_ATOM_MASS``.

    New points split a heavy cell into equal-width pieces in ``log lam``
    (power-law cells) or ``lam`` (linear cells); densities follow the same
    interpolant, so the total mass is unchanged.
    """
    heavy = np.flatnonzero(mass > HEAD_ATOM_MASS)
    if heavy.size == 0:
        return lam, rho
    xs, rs = [lam], [rho]
    for i in heavy:
        k = int(math.ceil(mass[i] / HEAD_ATOM_MASS))
        u = np.arange(1, k) / k
        x1, x2 = lam[i], lam[i + 1]
        if pos[i]:
            x = x1 * (x2 / x1) ** u
            r = rho[i] * (x / x1) ** b[i]
        else:
            x = x1 + u * (x2 - x1)
            r = rho[i] + u * (rho[i + 1] - rho[i])
        xs.append(x)
        rs.append(r)
    x, r = np.concatenate(xs), np.concatenate(rs)
    order = np.argsort(x, kind="stable")
    return x[order], r[order]


def cell_masses(lam, rho):
    """Mass and centroid of each grid cell plus the head cell ``[0, lam_1]``.

    Where both end densities are positive the density is interpolated as a
    local power law (exact for ``rho ~ lam^b``); otherwise linearly. Cells
    heavier than ``HEAD_ATOM_MASS`` are subdivided along the same
    interpolant, so no single atom carries a visible share of the mass. The
    head cell is split into several atoms by :func:`_head_cell`.
    """
    lam = np.asarray(lam, float)
    rho = np.asarray(rho, float)
    mass, first, b, pos = _cells(lam, rho)
    lam, rho = _refine(lam, rho, mass, b, pos)
    mass, first, _, _ = _cells(lam, rho)
    x1, x2 = lam[:-1], lam[1:]
    with np.errstate(all="ignore"):
        loc = np.where(mass > 0, first / mass, (x1 + x2) / 2)
    loc = np.clip(loc, x1, x2)
    head_loc, head = _head_cell(lam, rho)
    return np.concatenate([head_loc, loc]), np.concatenate([head, mass])


def _head_cell(lam, rho):
    """Atoms for ``[0, lam_1]`` under the power law ``rho ~ lam^-a``.

    The exponent comes from the first two points, capped at ``0.95`` so the
    mass stays finite. A singular density can put a visible share of the
    total mass below the first grid point, so the cell is split at
    ``lam_1 t^(1/(1-a))`` for ``t = q^j``: every piece carries at most
    ``HEAD_ATOM_MASS`` and the last piece, down to the origin, less than
    ``HEAD_FLOOR``. Each atom sits at its piece's centroid.
    """
    if lam.size < 2 or lam[0] <= 0 or not (rho[0] > 0 and rho[1] > 0):
        return np.zeros(1), np.zeros(1)
    a = math.log(rho[0] / rho[1]) / math.log(lam[1] / lam[0])
    a = min(max(a, 0.0), 0.95)
    total = rho[0] * lam[0] / (1 - a)
    q = 1.0 - min(0.5, HEAD_ATOM_MASS / total)
    n = max(0, math.ceil(math.log(min(HEAD_FLOOR / total, 1.0)) / math.log(q)))
    t = q ** np.arange(n + 1.0)
    edges = lam[0] * t ** (1.0 / (1 - a))
    upper, lower = edges[:-1], edges[1:]
    mass = total * (t[:-1] - t[1:])
    first = (1 - a) / (2 - a) * (upper ** (2 - a) - lower ** (2 - a)) / (upper ** (1 - a) - lower ** (1 - a))
    locs = np.concatenate([[(1 - a) / (2 - a) * edges[-1]], first[::-1]])
    return locs, np.concatenate([[total * t[-1]], mass[::-1]])


def atomize(grid, cfg=None):
    """Turn a density grid into a measure, one atom per cell at its centroid.

    The zero atom is kept exactly. Any further missing mass beyond
    ``deficit_threshold`` is also put at the origin; smaller discrepancies
    are absorbed by rescaling the continuous part.
    """
    cfg = cfg or SolverConfig()
    locs, w = cell_masses(grid.lambdas, grid.densities)
    w0 = grid.atom_at_zero
    cont = w.sum()
    target = 1.0 - w0
    if cont <= 0 and target > cfg.deficit_threshold:
        raise NumericalError("density integrates to zero", operation="diamond")
    deficit = target - cont
    if deficit > cfg.deficit_threshold:
        w0 = w0 + deficit
    elif cont > 0:
        w = w * (target / cont)
    return SpectralMeasure(np.concatenate([[0.0], locs]), np.concatenate([[w0], w]))


def diamond(nu_K, nu_R, cfg=None):
    """Limiting spectral law ``nu_K <> nu_R`` as an atomized measure."""
    cfg = cfg or SolverConfig()
    return atomize(resolve_density(nu_R, nu_K, cfg), cfg)


def transfer_zero_mass(mu, c):
    """NCM of ``A A^T`` from the NCM of ``A^T A`` when ``A`` is ``n x m``, ``c = m/n``.

    The nonzero eigenvalues coincide; only the zero atom changes.
    """
    if c == 1:
        return mu
    nz = mu.locations > 0
    w0 = 1.0 - c * (1.0 - mu.mass_at_zero)
    if w0 < -1e-9:
        raise NumericalError("rank count exceeds the matrix size", operation="transfer_zero_mass")
    return SpectralMeasure(np.concatenate([[0.0], mu.locations[nz]]),
                           np.concatenate([[max(w0, 0.0)], c * mu.weights[nz]]))


def transfer_grid(grid, c):
    """Density grid counterpart of :func:`transfer_zero_mass`."""
    if c == 1:
        return grid
    return DensityGrid(grid.lambdas, c * grid.densities,
                       atom_at_zero=max(0.0, 1.0 - c * (1.0 - grid.atom_at_zero)))


def propagate_layers(nu_Ks, cfg=None, cs=None, return_grid=False):
    """Fold ``nu <- nu_K[l] <> nu`` from ``delta_1``.

    ``cs`` gives per-layer ratios ``n_{l-1}/n_l``; with unequal widths each
    step is followed by the zero-atom transfer to the ``n_l x n_l`` matrix.
    More than one layer with ``c != 1`` emits an :class:`ExtrapolationWarning`.
    With ``return_grid`` the last layer's density grid is returned as well.
    """
    cfg = cfg or SolverConfig()
    nu_Ks = list(nu_Ks)
    cs = [1.0] * len(nu_Ks) if cs is None else [float(c) for c in cs]
    if len(cs) != len(nu_Ks):
        raise ConfigError("one aspect ratio per layer is required")
    if len(nu_Ks) > 1 and any(c != 1 for c in cs):
        warnings.warn("multi-layer composition with unequal widths is extrapolated "
                      "beyond the equal-width theorem", ExtrapolationWarning, stacklevel=2)
    nu, grid = dirac(1.0), None
    for K, c in zip(nu_Ks, cs):
        step = cfg.replace(aspect_c=c)
        grid = resolve_density(nu, K, step)
        nu = transfer_zero_mass(atomize(grid, step), c)
        grid = transfer_grid(grid, c)
    return (nu, grid) if return_grid else nu


def layer_measures(config, order=DEFAULT_ORDER):
    """``(QSchedule, [nu_K^1..nu_K^L])`` for a network configuration."""
    act = config.act()
    sched = q_schedule(config.q1_value(), config.L, act, config.sigma_b2, order,
                       with_bias=config.with_bias)
    return sched, [_nu_K(act, q, order) for q in sched.q]


def theory_spectrum(config, cfg=None, return_grid=False):
    """Limiting NCM of ``J J^T`` for the configured network."""
    cfg = cfg or SolverConfig()
    _, ks = layer_measures(config)
    return propagate_layers(ks, cfg, config.aspect_ratios, return_grid)
