"""Built-in invariant and oracle checks run by ``djs validate``."""

from __future__ import annotations

import math
import time

import numpy as np

from djs.measures import SpectralMeasure, dirac, ks_distance, mp_density
from djs.solver import SolverConfig, density_at, diamond, solve_hk
from djs.stransform import penfo_moments, s_transform
from djs.measures import mp_reference


def _check(name, fn):
    t0 = time.perf_counter()
    try:
        value, limit = fn()
        ok = bool(value < limit)
        out = {"name": name, "passed": ok, "value": float(value), "limit": float(limit)}
    except Exception as exc:  # report, do not abort the suite
        out = {"name": name, "passed": False, "error": f"{type(exc).__name__}: {exc}"}
    out["seconds"] = round(time.perf_counter() - t0, 3)
    return out


def _mp_density(cfg):
    d = dirac(1.0)
    lam = np.linspace(0.0, 4.0, 52)[1:-1]
    rho, _ = density_at(d, d, lam, cfg)
    return float(np.max(np.abs(rho - mp_density(lam, 1.0)))), 1e-3


def _mp_stieltjes(cfg):
    d = dirac(1.0)
    s = solve_hk(d, d, -1.0, cfg)
    return abs(s.f - (math.sqrt(5) - 1) / 2), 1e-6


def _random_measure(rng, n=5):
    return SpectralMeasure(rng.uniform(0.2, 2.0, n), rng.uniform(0.1, 1.0, n))


def _herglotz(cfg):
    rng = np.random.default_rng(20240)
    worst = 0.0
    for _ in range(20):
        R, K = _random_measure(rng), _random_measure(rng)
        z = complex(rng.uniform(-3, 6), rng.uniform(0.05, 3) * rng.choice([-1, 1]))
        s = solve_hk(R, K, z, cfg)
        sgn = math.copysign(1.0, z.imag)
        bad = (not s.valid) or s.h.imag * sgn <= 0 or s.k.imag * sgn >= 0
        worst = max(worst, 1.0 if bad else 0.0)
    return worst, 0.5


def _multiplicativity(cfg):
    rng = np.random.default_rng(7)
    K, R = _random_measure(rng), _random_measure(rng)
    mu = diamond(K, R, cfg)
    return abs(mu.moment(1) / (K.moment(1) * R.moment(1)) - 1.0), 1e-3


def _commutes(cfg):
    rng = np.random.default_rng(11)
    K, R = _random_measure(rng), _random_measure(rng)
    return ks_distance(diamond(K, R, cfg), diamond(R, K, cfg)), 1e-3


def _s_mp():
    mp = mp_reference(1.0)
    return max(abs(s_transform(mp, m) - 1.0 / (1.0 + m)) for m in (0.1, 0.5, 1.0)), 1e-6


def _catalan():
    got = penfo_moments(dirac(1.0), 1, order=4)
    return max(abs(a - b) / b for a, b in zip(got, (1, 2, 5, 14))), 1e-8


def run_checks(cfg: SolverConfig | None = None):
    """Run every check; returns a list of result dicts."""
    cfg = cfg or SolverConfig()
    return [
        _check("mp_density", lambda: _mp_density(cfg)),
        _check("mp_stieltjes_at_minus_one", lambda: _mp_stieltjes(cfg)),
        _check("herglotz_signs", lambda: _herglotz(cfg)),
        _check("first_moment_multiplicative", lambda: _multiplicativity(cfg)),
        _check("diamond_commutes", lambda: _commutes(cfg)),
        _check("s_transform_mp", _s_mp),
        _check("penfo_catalan", _catalan),
    ]
