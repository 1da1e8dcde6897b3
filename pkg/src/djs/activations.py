"""Nonlinearities, Gaussian expectations and the per-layer variance recurrence."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.special import erf, roots_hermitenorm, roots_legendre

from djs.errors import ConfigError, ConvergenceError, NumericalError
from djs.measures import SpectralMeasure

DEFAULT_ORDER = 201
TAIL_SPAN = 12.0


@dataclass(frozen=True)
class Activation:
    """Pointwise nonlinearity with its derivative and sup bounds.

    ``breakpoints`` lists the points where ``dphi`` jumps; quadrature splits
    the Gaussian integral there.
    """

    name: str
    phi: Callable[[np.ndarray], np.ndarray]
    dphi: Callable[[np.ndarray], np.ndarray]
    phi_bound: float
    dphi_bound: float
    breakpoints: tuple = ()
    bounded: bool = True

    def __post_init__(self):
        object.__setattr__(self, "breakpoints", tuple(sorted(float(b) for b in self.breakpoints)))

    def check(self, n=20001):
        """Verify the declared bounds on a sample grid over [-50, 50]."""
        x = np.linspace(-50, 50, n)
        p, d = np.abs(self.phi(x)), np.abs(self.dphi(x))
        if self.bounded and np.max(p) > self.phi_bound * (1 + 1e-12):
            raise ConfigError(f"{self.name}: |phi| exceeds its declared bound")
        if np.max(d) > self.dphi_bound * (1 + 1e-12):
            raise ConfigError(f"{self.name}: |phi'| exceeds its declared bound")
        if not np.max(d) > 0:
            raise ConfigError(f"{self.name}: phi' vanishes identically")
        return True


def _tanh():
    return Activation("tanh", np.tanh, lambda x: 1.0 / np.cosh(x) ** 2, 1.0, 1.0)


def _hard_tanh():
    return Activation(
        "hard-tanh",
        lambda x: np.clip(x, -1.0, 1.0),
        lambda x: (np.abs(x) < 1.0).astype(float),
        1.0, 1.0, breakpoints=(-1.0, 1.0))


def _erf():
    a = math.sqrt(math.pi) / 2
    # slope 1 at the origin
    return Activation("erf", lambda x: erf(a * np.asarray(x)),
                      lambda x: np.exp(-(a * np.asarray(x)) ** 2), 1.0, 1.0)


def scaled_shifted_tanh(scale=1.7159, slope=2.0 / 3.0, shift=0.25):
    """``scale * tanh(slope * (x - shift))``."""
    return Activation(
        "scaled-shifted-tanh",
        lambda x: scale * np.tanh(slope * (np.asarray(x) - shift)),
        lambda x: scale * slope / np.cosh(slope * (np.asarray(x) - shift)) ** 2,
        abs(scale), abs(scale * slope))


def _relu():
    return Activation("relu", lambda x: np.maximum(x, 0.0),
                      lambda x: (np.asarray(x) > 0).astype(float),
                      math.inf, 1.0, breakpoints=(0.0,), bounded=False)


def piecewise_linear(knots, name="piecewise-linear"):
    """Interpolate ``knots`` linearly, constant beyond the end knots."""
    k = np.asarray(knots, dtype=float)
    if k.ndim != 2 or k.shape[1] != 2 or k.shape[0] < 2:
        raise ConfigError("knots must be a list of at least two [x, y] pairs")
    xs, ys = k[:, 0], k[:, 1]
    if np.any(np.diff(xs) <= 0):
        raise ConfigError("knot x-values must be strictly increasing")
    slopes = np.diff(ys) / np.diff(xs)

    def phi(x):
        return np.interp(x, xs, ys)

    def dphi(x):
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(xs, x, side="right") - 1
        inside = (idx >= 0) & (idx < len(slopes))
        out = np.zeros_like(x)
        out[inside] = slopes[idx[inside]]
        return out

    return Activation(name, phi, dphi, float(np.max(np.abs(ys))),
                      float(np.max(np.abs(slopes))), breakpoints=tuple(xs))


def load_activation_json(text):
    data = json.loads(text)
    if "knots" not in data:
        raise ConfigError("activation JSON needs a 'knots' list")
    return piecewise_linear(data["knots"], name=data.get("name", "piecewise-linear"))


BUILTIN = {
    "tanh": _tanh,
    "hard-tanh": _hard_tanh,
    "erf": _erf,
    "scaled-shifted-tanh": scaled_shifted_tanh,
}


def get_activation(name, unsafe_unbounded=False):
    """Look up a built-in activation; ``relu`` needs ``unsafe_unbounded``."""
    if name == "relu":
        if not unsafe_unbounded:
            raise ConfigError("relu is unbounded; enable unsafe_unbounded (--unsafe-unbounded) to use it anyway")
        return _relu()
    try:
        return BUILTIN[name]()
    except KeyError:
        raise ConfigError(
            f"unknown activation {name!r}; choose from {sorted(BUILTIN) + ['relu']}") from None


# -- quadrature ------------------------------------------------------------


@lru_cache(maxsize=32)
def _hermite(order):
    x, w = roots_hermitenorm(order)
    return x, w / math.sqrt(2 * math.pi)


@lru_cache(maxsize=32)
def _legendre(order):
    return roots_legendre(order)


def gaussian_rule(q, order=DEFAULT_ORDER, breakpoints=()):
    """Nodes ``x`` and weights for integrating ``f(x)``, ``x = sqrt(q) gamma``.

    Without breakpoints this is Gauss-Hermite. Otherwise the gamma axis is
    cut at ``breakpoints / sqrt(q)``; each finite piece gets Gauss-Legendre
    against the Gaussian density, and the two tails are truncated
    ``TAIL_SPAN`` standard deviations past the outer cut. ``q = 0`` is the
    point mass at the origin.
    """
    if order < 2:
        raise ConfigError("quadrature order must be at least 2")
    if q == 0:
        return np.zeros(1), np.ones(1)
    if not q > 0:
        raise ConfigError("q must be nonnegative")
    sq = math.sqrt(q)
    cuts = sorted({b / sq for b in breakpoints})
    if not cuts:
        g, w = _hermite(order)
        return sq * g, w
    edges = [min(cuts[0], 0.0) - TAIL_SPAN] + cuts + [max(cuts[-1], 0.0) + TAIL_SPAN]
    t, wt = _legendre(order)
    nodes, weights = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi <= lo:
            continue
        g = lo + (t + 1) * (hi - lo) / 2
        nodes.append(g)
        weights.append(wt * (hi - lo) / 2 * np.exp(-g * g / 2) / math.sqrt(2 * math.pi))
    return sq * np.concatenate(nodes), np.concatenate(weights)


def gauss_expect(f, q, order=DEFAULT_ORDER, breakpoints=()):
    """``E f(sqrt(q) gamma)`` for a standard Gaussian ``gamma``."""
    x, w = gaussian_rule(q, order, breakpoints)
    vals = np.asarray(f(x), dtype=float)
    if vals.shape != x.shape:
        vals = np.broadcast_to(vals, x.shape)
    if not np.all(np.isfinite(vals)):
        raise NumericalError("integrand is not finite at a quadrature node",
                             operation="gauss_expect")
    return float(np.dot(w, vals))


# -- variance recurrence -----------------------------------------------------


@dataclass(frozen=True)
class QSchedule:
    q: tuple
    sigma_b2: float
    source_q1: float
    with_bias: bool = True

    @property
    def L(self):
        return len(self.q)

    def to_dict(self):
        return {"q": list(self.q), "sigma_b2": self.sigma_b2,
                "source_q1": self.source_q1, "with_bias": self.with_bias}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(float(x) for x in d["q"]), float(d["sigma_b2"]),
                   float(d["source_q1"]), bool(d.get("with_bias", True)))

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def q_map(act, q, sigma_b2, order=DEFAULT_ORDER, with_bias=True):
    """One step of the recurrence: ``E phi^2(sqrt(q) gamma) (+ sigma_b^2)``."""
    v = gauss_expect(lambda x: act.phi(x) ** 2, q, order, act.breakpoints)
    return v + sigma_b2 if with_bias else v


def q_schedule(q1, L, act, sigma_b2, order=DEFAULT_ORDER, with_bias=True, strict=True):
    """Per-layer variances ``q^1..q^L`` starting from ``q1``.

    ``strict=False`` admits the degenerate start ``q1 = sigma_b^2`` (zero
    input) and lets later entries touch the lower end of the interval.
    """
    if L < 1:
        raise ConfigError("L must be at least 1")
    if sigma_b2 < 0:
        raise ConfigError("sigma_b2 must be nonnegative")
    if not (q1 > sigma_b2 or (not strict and q1 == sigma_b2)):
        raise ConfigError("q1 must exceed sigma_b2")
    qs = [float(q1)]
    hi = act.phi_bound ** 2 + sigma_b2
    lo = sigma_b2 if with_bias else 0.0
    for l in range(1, L):
        q = q_map(act, qs[-1], sigma_b2, order, with_bias)
        inside = lo < q if strict else lo <= q
        if not np.isfinite(q) or (act.bounded and not (inside and q <= hi * (1 + 1e-12))):
            raise NumericalError(
                f"q at layer {l + 1} left the admissible interval: {q!r}",
                operation="q_schedule", layer=l + 1)
        qs.append(q)
    return QSchedule(tuple(qs), float(sigma_b2), float(q1), with_bias)


def q_fixed_point(act, sigma_b2, tol=1e-12, damping=0.5, max_iter=10_000,
                  q0=None, order=DEFAULT_ORDER, with_bias=True):
    """Fixed point of the variance recurrence.

    Damped iteration from ``q0`` (default ``Phi0^2 + sigma_b^2``). Each step
    also tries a secant step on ``q - T(q)``, kept only when it lands inside
    the admissible interval and lowers the residual; this matters when the
    fixed point is 0 and plain iteration converges sublinearly.
    """
    if tol <= 0:
        raise ConfigError("tol must be positive")
    if not act.bounded and q0 is None:
        raise ConfigError("an unbounded activation needs an explicit q0")
    lo = 0.0
    hi = act.phi_bound ** 2 + sigma_b2 if act.bounded else math.inf
    q = float(q0) if q0 is not None else hi

    def T(x):
        return q_map(act, x, sigma_b2, order, with_bias) if x > 0 else (sigma_b2 if with_bias else 0.0)

    r = q - T(q)
    prev = None
    for _ in range(max_iter):
        if abs(r) < tol:
            return q
        cand = (1 - damping) * q + damping * (q - r)
        if prev is not None and prev[1] != r:
            qs = q - r * (q - prev[0]) / (r - prev[1])
            if lo <= qs <= hi:
                rs = qs - T(qs)
                if abs(rs) < abs(r):
                    cand = qs
        rc = cand - T(cand)
        prev = (q, r)
        q, r = cand, rc
    if abs(r) < tol:
        return q
    raise ConvergenceError(
        f"q fixed point not reached in {max_iter} iterations (residual {abs(r):.3e})",
        operation="q_fixed_point", residual=abs(r))


def nu_K(act, q, order=DEFAULT_ORDER):
    """Law of ``phi'(sqrt(q) gamma)^2`` as quadrature atoms."""
    x, w = gaussian_rule(q, order, act.breakpoints)
    vals = np.asarray(act.dphi(x), dtype=float) ** 2
    if not np.all(np.isfinite(vals)):
        raise NumericalError("phi' is not finite at a quadrature node", operation="nu_K")
    keep = w > 0
    vals, w = vals[keep], w[keep]
    if not np.any(vals[w > 0] > 0):
        raise NumericalError("phi' vanishes on the whole effective support", operation="nu_K")
    return SpectralMeasure(vals, w)
