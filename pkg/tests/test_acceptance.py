"""The nine acceptance criteria, each at its stated tolerance and time budget.

Every test prints a single PASS/FAIL line (also collected in the terminal
summary). Monte Carlo tests use fixed seeds, so results are reproducible.
"""

import math
import time

import numpy as np
import pytest

from djs.activations import get_activation, nu_K, q_fixed_point
from djs.config import NetworkConfig
from djs.measures import SpectralMeasure, dirac, ks_distance
from djs.simulate import (
    compare,
    fluctuation_study,
    forward_pass,
    interpolation_study,
    norm_check,
    pooled,
    simulate,
)
from djs.solver import (
    SolverConfig,
    density_at,
    diamond,
    layer_measures,
    propagate_layers,
    solve_hk,
    theory_spectrum,
)
from djs.stransform import penfo_moments

pytestmark = pytest.mark.slow

SIGMA_B2 = 0.05


def fixed_point_config(phi, L, n, seed=0, sigma_b2=SIGMA_B2):
    return NetworkConfig.square(L, n, activation=phi, sigma_b2=sigma_b2, input_mode="q1-target",
                                q1="fixed-point", seed=seed)


# -- 1 -------------------------------------------------------------------------------


def test_c1_mp_closed_form(verdict):
    t0 = time.perf_counter()
    d = dirac(1.0)
    lam = np.linspace(0.0, 4.0, 52)[1:-1]
    rho, _ = density_at(d, d, lam)
    err = float(np.max(np.abs(rho - np.sqrt(4 - lam) / (2 * np.pi * np.sqrt(lam)))))
    f = solve_hk(d, d, -1.0).f
    ferr = abs(f - (math.sqrt(5) - 1) / 2)
    dt = time.perf_counter() - t0
    ok = err < 1e-3 and ferr < 1e-6 and dt < 10
    verdict("criterion 1 (MP oracle)", ok,
            f"max density error {err:.2e} (<1e-3), |f(-1) - golden| {ferr:.1e} (<1e-6), {dt:.1f}s (<10s)")
    assert ok


# -- 2 -------------------------------------------------------------------------------


def _random_measure(rng):
    n = int(rng.integers(1, 7))
    loc = rng.uniform(0.05, 4.0, n)
    if rng.random() < 0.3:
        loc = np.append(loc, 0.0)
    return SpectralMeasure(loc, rng.uniform(0.05, 1.0, loc.size))


def _random_z(rng):
    kind = rng.integers(3)
    if kind == 0:
        return complex(-rng.uniform(1e-3, 20.0), 0.0)
    y = 10 ** rng.uniform(-3, 1) * rng.choice([-1.0, 1.0])
    return complex(rng.uniform(-5.0, 15.0), y)


def _admissible_start(rng, z):
    if z.imag == 0:
        return complex(rng.uniform(0.01, 5.0)), complex(rng.uniform(0.01, 5.0))
    s = math.copysign(1.0, z.imag)
    h = complex(rng.uniform(-5, 5), s * rng.uniform(0.01, 5.0))
    k = complex(rng.uniform(-5, 5), -s * rng.uniform(0.01, 5.0))
    return h, k


def test_c2_system_validity(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    cfg = SolverConfig()
    sign_fail = invalid = restart_fail = continued = 0
    worst_spread = 0.0
    for _ in range(200):
        R, K = _random_measure(rng), _random_measure(rng)
        z = _random_z(rng)
        s = solve_hk(R, K, z, cfg)
        if not s.valid:
            invalid += 1
            continue
        if z.imag != 0:
            good = s.h.imag * z.imag > 0 and s.k.imag * z.imag < 0
        else:
            good = s.h.real > 0 and 0 < s.k.real <= math.sqrt(K.moment(2)) and s.k.imag == 0
        sign_fail += not good
        for _ in range(10):
            h0, k0 = _admissible_start(rng, z)
            r = solve_hk(R, K, z, cfg, h0=h0, k0=k0)
            continued += r.continued
            # the residual is scaled by 1 + |value|, so agreement is measured the same way
            spread = max(abs(r.h - s.h) / (1 + abs(s.h)), abs(r.k - s.k) / (1 + abs(s.k)))
            worst_spread = max(worst_spread, spread)
            restart_fail += (not r.valid) or spread > 10 * cfg.tol
    dt = time.perf_counter() - t0
    ok = sign_fail == 0 and invalid == 0 and restart_fail == 0 and dt < 30
    verdict("criterion 2 (system validity)", ok,
            f"200 z: {invalid} invalid, {sign_fail} sign violations, {restart_fail} restart disagreements "
            f"(worst scaled spread {worst_spread:.1e} vs 10*tol={10 * cfg.tol:.0e}; "
            f"{continued}/2000 restarts finished by continuation), {dt:.1f}s (<30s)")
    assert ok


# -- 3 -------------------------------------------------------------------------------


def test_c3_moment_multiplicativity(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(123)

    def rm():
        n = int(rng.integers(2, 8))
        loc = rng.uniform(0.1, 3.0, n)
        if rng.random() < 0.3:
            loc[0] = 0.0
        return SpectralMeasure(loc, rng.uniform(0.1, 1.0, n))

    m_err, ks = [], []
    for _ in range(10):
        K, R = rm(), rm()
        a, b = diamond(K, R), diamond(R, K)
        m_err.append(abs(a.moment(1) / (K.moment(1) * R.moment(1)) - 1))
        ks.append(ks_distance(a, b))
    dt = time.perf_counter() - t0
    ok = max(m_err) < 1e-3 and max(ks) < 1e-3 and dt < 120
    verdict("criterion 3 (moment multiplicativity)", ok,
            f"max rel m1 error {max(m_err):.1e} (<1e-3), max commutation KS {max(ks):.1e} (<1e-3), "
            f"{dt:.1f}s (<120s)")
    assert ok


# -- 4 -------------------------------------------------------------------------------


def test_c4_cross_method(verdict):
    t0 = time.perf_counter()
    worst, where = 0.0, ""
    for phi in ("hard-tanh", "tanh"):
        for L in (1, 2, 3):
            # equal widths at the fixed point: every layer carries the same nu_K
            nu = nu_K(get_activation(phi), q_fixed_point(get_activation(phi), SIGMA_B2))
            a = penfo_moments(nu, L, order=4)
            mu = propagate_layers([nu] * L)
            b = [mu.moment(k) for k in range(1, 5)]
            gap = max(abs(x - y) / abs(y) for x, y in zip(a, b))
            if gap > worst:
                worst, where = gap, f"{phi} L={L}"
    dt = time.perf_counter() - t0
    ok = worst < 1e-2 and dt < 120
    verdict("criterion 4 (penfo vs propagate_layers)", ok,
            f"worst relative moment gap {worst:.1e} at {where} (<1e-2), {dt:.1f}s (<120s)")
    assert ok


# -- 5 -------------------------------------------------------------------------------


def test_c5_theory_vs_simulation(verdict):
    t0 = time.perf_counter()
    details, ok = [], True
    for phi, L, n in (("hard-tanh", 2, 1024), ("tanh", 3, 512)):
        cfg = fixed_point_config(phi, L, n, seed=7)
        mu = theory_spectrum(cfg)
        rep = compare(cfg, reps=20, theory=mu)
        small = fixed_point_config(phi, L, 256, seed=7)
        big = fixed_point_config(phi, L, 1024, seed=7)
        ks_small = ks_distance(pooled(simulate(small, 20)).ncm(), mu)
        ks_big = ks_distance(pooled(simulate(big, 20)).ncm(), mu)
        good = rep.ks < 0.05 and ks_small > ks_big
        ok &= good
        details.append(f"{phi} L={L} n={n}: KS {rep.ks:.4f} (<0.05), KS n=256 {ks_small:.4f} > n=1024 {ks_big:.4f}")
    dt = time.perf_counter() - t0
    ok &= dt < 600
    verdict("criterion 5 (theory vs simulation)", ok, "; ".join(details) + f", {dt:.0f}s (<600s)")
    assert ok


# -- 6 -------------------------------------------------------------------------------


def test_c6_interpolation(verdict):
    t0 = time.perf_counter()
    cfg = fixed_point_config("hard-tanh", 2, 256, seed=5)
    rows = interpolation_study(cfg, sizes=(256, 512, 1024), pairs=20)
    gaps = [r["gap"] for r in rows]
    last = rows[-1]
    dt = time.perf_counter() - t0
    monotone = gaps[0] > gaps[1] > gaps[2]
    bound = 2 * last["baseline"] + 0.02
    ok = monotone and last["gap"] < bound and dt < 600
    verdict("criterion 6 (interpolation)", ok,
            f"gaps {', '.join(f'{g:.4f}' for g in gaps)} decreasing={monotone}; "
            f"n=1024 gap {last['gap']:.4f} < 2*baseline+0.02 = {bound:.4f}, {dt:.0f}s (<600s)")
    assert ok


# -- 7 -------------------------------------------------------------------------------


def test_c7_fluctuation_decay(verdict):
    t0 = time.perf_counter()
    cfg = fixed_point_config("tanh", 1, 256, seed=3)
    rows = fluctuation_study(cfg, (0.5, 2.0), reps=100, sizes=(256, 512, 1024))
    m4 = [r["m4"] for r in rows]
    ratios = [m4[0] / m4[1], m4[1] / m4[2]]
    dt = time.perf_counter() - t0
    ok = min(ratios) >= 2.5 and dt < 600
    verdict("criterion 7 (fluctuation decay)", ok,
            f"fourth-moment ratios {ratios[0]:.2f}, {ratios[1]:.2f} (>=2.5), {dt:.0f}s (<600s)")
    assert ok


# -- 8 -------------------------------------------------------------------------------


def test_c8_norm_law(verdict):
    t0 = time.perf_counter()
    big = np.array([norm_check(4096, s) for s in range(20)])
    small = np.array([norm_check(256, s) for s in range(20)])
    dt = time.perf_counter() - t0
    inside = bool(np.all((big >= 1.92) & (big <= 2.08)))
    ok = inside and big.std(ddof=1) < small.std(ddof=1) and dt < 120
    verdict("criterion 8 (norm law)", ok,
            f"n=4096 range [{big.min():.4f}, {big.max():.4f}] in [1.92, 2.08]={inside}; "
            f"std {small.std(ddof=1):.4f} (n=256) -> {big.std(ddof=1):.4f} (n=4096), {dt:.0f}s (<120s)")
    assert ok


# -- 9 -------------------------------------------------------------------------------


def test_c9_q_recurrence(verdict):
    t0 = time.perf_counter()
    n, L = 4096, 4
    worst = 0.0
    for seed in range(50):
        cfg = NetworkConfig.square(L, n, activation="tanh", input_mode="q1-target", q1=1.0, seed=seed)
        sched, _ = layer_measures(cfg) if seed == 0 else (sched, None)
        fp = forward_pass(cfg)
        worst = max(worst, max(abs(a - b) for a, b in zip(fp.q, sched.q)))
    dt = time.perf_counter() - t0
    ok = worst < 3 / math.sqrt(n) and dt < 300
    verdict("criterion 9 (q recurrence)", ok,
            f"max |q_n^l - q^l| over 50 seeds x {L} layers {worst:.2e} (<{3 / math.sqrt(n):.2e}), "
            f"{dt:.0f}s (<300s)")
    assert ok
