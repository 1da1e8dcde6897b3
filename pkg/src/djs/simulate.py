"""Finite-width Monte Carlo for random Gaussian networks.

The network is ``y^l = n_{l-1}^{-1/2} X^l x^{l-1} + b^l``, ``x^l = phi(y^l)``
with standard Gaussian ``X^l`` and ``b^l ~ N(0, sigma_b^2)``. Its input-output
Jacobian is ``J = prod_{l=L..1} n_{l-1}^{-1/2} D^l X^l`` with
``D^l = diag(phi'(y^l))``.

Every random draw comes from its own counter-based stream keyed by
``(seed, replica, layer, role)``, so results do not depend on execution
order or on the number of worker threads.
"""

from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import svds

from djs.activations import q_schedule
from djs.config import NetworkConfig
from djs.errors import ConfigError, NumericalError
from djs.measures import EmpiricalSpectrum, ks_distance
from djs.solver import SolverConfig, theory_spectrum

ROLES = {"X": 0, "b": 1, "gamma": 2, "x0": 3, "norm": 4}


@dataclass(frozen=True)
class Streams:
    """Independent generators for one replica of one experiment."""

    seed: int
    replica: int = 0

    def gen(self, layer, role):
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.replica), int(layer), ROLES[role]))
        return np.random.Generator(np.random.Philox(ss))


def _as_streams(rng, config):
    if rng is None:
        return Streams(config.seed)
    if isinstance(rng, Streams):
        return rng
    if isinstance(rng, (int, np.integer)):
        return Streams(config.seed, int(rng))
    raise ConfigError("rng must be a Streams object or a replica index")


def max_workers():
    """Worker cap from ``DJS_THREADS`` (default: CPU count)."""
    v = os.environ.get("DJS_THREADS")
    if v is None:
        return os.cpu_count() or 1
    try:
        n = int(v)
    except ValueError:
        raise ConfigError(f"DJS_THREADS must be an integer, got {v!r}") from None
    if n < 1:
        raise ConfigError("DJS_THREADS must be at least 1")
    return n


def _map_replicas(fn, replicas, workers=None):
    workers = min(workers or max_workers(), len(replicas)) or 1
    if workers == 1:
        return [fn(r) for r in replicas]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, replicas))


# -- forward pass and Jacobian --------------------------------------------------


@dataclass
class ForwardPass:
    """Activations ``x^0..x^L``, derivatives ``D^1..D^L`` and realized ``q_n^l``."""

    x: list
    D: list
    q: list
    X: list = field(default_factory=list)


def _weights(streams, config, l):
    n_out, n_in = config.widths[l], config.widths[l - 1]
    return streams.gen(l, "X").standard_normal((n_out, n_in))


def forward_pass(config: NetworkConfig, rng=None, keep_weights=False) -> ForwardPass:
    """Propagate the input through the network.

    ``q[l-1]`` is the realized ``n_{l-1}^{-1} |x^{l-1}|^2 (+ sigma_b^2)``
    feeding layer ``l``.
    """
    st = _as_streams(rng, config)
    act = config.act()
    x = config.input_vector(st.gen(0, "x0"))
    sb = math.sqrt(config.sigma_b2)
    xs, Ds, qs, Xs = [x], [], [], []
    for l in range(1, config.L + 1):
        n_in = config.widths[l - 1]
        X = _weights(st, config, l)
        q = float(np.dot(x, x) / n_in) + (config.sigma_b2 if config.with_bias else 0.0)
        y = X @ x / math.sqrt(n_in)
        if sb > 0:
            y = y + sb * st.gen(l, "b").standard_normal(config.widths[l])
        x = np.asarray(act.phi(y), dtype=float)
        d = np.asarray(act.dphi(y), dtype=float)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(d))):
            raise NumericalError(f"non-finite activation at layer {l}", operation="forward_pass",
                                 layer=l, seed=st.seed, replica=st.replica)
        xs.append(x)
        Ds.append(d)
        qs.append(q)
        if keep_weights:
            Xs.append(X)
    return ForwardPass(xs, Ds, qs, Xs)


def _product(config, st, diagonals):
    """``prod_l n_{l-1}^{-1/2} diag(D^l) X^l`` with ``X^l`` from the replica's stream."""
    J = None
    for l in range(1, config.L + 1):
        X = _weights(st, config, l) / math.sqrt(config.widths[l - 1])
        X *= diagonals[l - 1][:, None]
        J = X if J is None else X @ J
    return J


def spectrum_of(J, label="", seed=0, replica=0):
    """Squared singular values of ``J`` (min of its shape), ascending.

    Values below the numerical-rank threshold ``s_max * max(shape) * eps``
    are set to zero.
    """
    try:
        s = scipy.linalg.svdvals(J, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"singular value solver failed: {exc}", operation="spectrum_of",
                             seed=seed, replica=replica) from exc
    if s.size and s[0] > 0:
        s[s < s[0] * max(J.shape) * np.finfo(float).eps] = 0.0
    ev = np.sort(s * s)
    return EmpiricalSpectrum(ev, ev.size, seed=seed, label=label, replica=replica)


def jacobian_spectrum(config: NetworkConfig, rng=None, return_pass=False):
    """Eigenvalues of ``J J^T`` (``min(n_0, n_L)`` of them)."""
    st = _as_streams(rng, config)
    fp = forward_pass(config, st)
    J = _product(config, st, fp.D)
    spec = spectrum_of(J, "jacobian", st.seed, st.replica)
    return (spec, fp, J) if return_pass else spec


def surrogate_schedule(config, q1):
    return q_schedule(q1, config.L, config.act(), config.sigma_b2,
                      with_bias=config.with_bias, strict=False)


def surrogate_diagonals(config, st, q1=None):
    """``|phi'(sqrt(q_l) gamma_j)|`` with ``q_l`` from the schedule started at ``q1``."""
    act = config.act()
    if q1 is None:
        x0 = config.input_vector(st.gen(0, "x0"))
        q1 = float(np.dot(x0, x0) / config.widths[0]) + (config.sigma_b2 if config.with_bias else 0.0)
    sched = surrogate_schedule(config, q1)
    out = []
    for l, q in enumerate(sched.q, start=1):
        g = st.gen(l, "gamma").standard_normal(config.widths[l])
        out.append(np.abs(np.asarray(act.dphi(math.sqrt(q) * g), dtype=float)))
    return out


def surrogate_spectrum(config: NetworkConfig, rng=None):
    """Spectrum with each ``D^l`` replaced by an ``X``-independent diagonal.

    The weights come from the same stream as :func:`jacobian_spectrum`, so
    configurations with ``D = I`` give identical output.
    """
    st = _as_streams(rng, config)
    J = _product(config, st, surrogate_diagonals(config, st))
    return spectrum_of(J, "surrogate", st.seed, st.replica)


def norm_check(n, rng=None):
    """Largest singular value of ``X / sqrt(n)`` for an ``n x n`` Gaussian ``X``."""
    if n < 64:
        raise ConfigError("norm_check needs n >= 64")
    if rng is None:
        rng = np.random.default_rng(0)
    elif isinstance(rng, Streams):
        rng = rng.gen(0, "norm")
    elif isinstance(rng, (int, np.integer)):
        rng = np.random.Generator(np.random.Philox(int(rng)))
    X = rng.standard_normal((n, n))
    v0 = np.ones(n) / math.sqrt(n)
    s = svds(X, k=1, v0=v0, return_singular_vectors=False, tol=1e-8)
    return float(s[0] / math.sqrt(n))


def layer_norms(config, st):
    """``n_{l-1}^{-1/2} |X^l|`` for each layer of a replica."""
    out = []
    for l in range(1, config.L + 1):
        X = _weights(st, config, l)
        v0 = np.ones(X.shape[1]) / math.sqrt(X.shape[1])
        s = svds(X, k=1, v0=v0, return_singular_vectors=False, tol=1e-8)
        out.append(float(s[0] / math.sqrt(config.widths[l - 1])))
    return out


# -- records ---------------------------------------------------------------------


@dataclass
class RunRecord:
    config: NetworkConfig
    per_layer_q: list
    spectrum: EmpiricalSpectrum
    surrogate_spectrum: EmpiricalSpectrum | None = None
    norm_stat: list | None = None
    wall_time: float = 0.0
    replica: int = 0

    def __eq__(self, other):
        if not isinstance(other, RunRecord):
            return NotImplemented
        return (self.config == other.config and self.per_layer_q == other.per_layer_q
                and self.spectrum == other.spectrum
                and self.surrogate_spectrum == other.surrogate_spectrum
                and self.norm_stat == other.norm_stat and self.replica == other.replica)

    def to_dict(self):
        return {
            "config": self.config.to_dict(),
            "replica": self.replica,
            "per_layer_q": list(self.per_layer_q),
            "spectrum": self.spectrum.to_dict(),
            "surrogate_spectrum": None if self.surrogate_spectrum is None else self.surrogate_spectrum.to_dict(),
            "norm_stat": self.norm_stat,
            "wall_time": self.wall_time,
        }

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d):
        sur = d.get("surrogate_spectrum")
        return cls(NetworkConfig.from_dict(d["config"]), [float(q) for q in d["per_layer_q"]],
                   EmpiricalSpectrum.from_dict(d["spectrum"]),
                   None if sur is None else EmpiricalSpectrum.from_dict(sur),
                   d.get("norm_stat"), float(d.get("wall_time", 0.0)), int(d.get("replica", 0)))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def run_replica(config, replica=0, surrogate=False, norms=False):
    t0 = time.perf_counter()
    st = Streams(config.seed, replica)
    spec, fp, _ = jacobian_spectrum(config, st, return_pass=True)
    sur = surrogate_spectrum(config, st) if surrogate else None
    ns = layer_norms(config, st) if norms else None
    return RunRecord(config, fp.q, spec, sur, ns, time.perf_counter() - t0, replica)


def simulate(config, reps=1, surrogate=False, norms=False, workers=None):
    """Run ``reps`` independent replicas; one :class:`RunRecord` each."""
    if reps < 1:
        raise ConfigError("reps must be at least 1")
    return _map_replicas(lambda r: run_replica(config, r, surrogate, norms), list(range(reps)), workers)


def pooled(records_or_spectra, n_rows=None):
    """Concatenate replica spectra, padding each with zeros to ``n_rows`` values."""
    parts = []
    for r in records_or_spectra:
        ev = r.spectrum.eigenvalues if isinstance(r, RunRecord) else r.eigenvalues
        if n_rows is not None and ev.size < n_rows:
            ev = np.concatenate([np.zeros(n_rows - ev.size), ev])
        parts.append(ev)
    ev = np.sort(np.concatenate(parts))
    return EmpiricalSpectrum(ev, ev.size, label="pooled")


# -- studies -----------------------------------------------------------------------


def interval_mass(spectrum, interval):
    a, b = interval
    ev = spectrum.eigenvalues
    return float(np.count_nonzero((ev >= a) & (ev <= b)) / ev.size)


def fluctuation_study(config, interval, reps=100, sizes=(256, 512, 1024), vary_seed=True, workers=None):
    """Fourth central moment of the NCM mass of ``interval`` across replicas.

    Each size uses a square network of that width. With ``vary_seed=False``
    every replica reuses replica index 0 (a frozen draw).
    """
    if reps < 50:
        raise ConfigError("fluctuation_study needs reps >= 50")
    rows = []
    for n in sizes:
        cfg_n = resize(config, n)
        idx = list(range(reps)) if vary_seed else [0] * reps
        masses = np.array(_map_replicas(
            lambda r: interval_mass(jacobian_spectrum(cfg_n, Streams(cfg_n.seed, r)), interval),
            idx, workers))
        c = masses - masses.mean()
        rows.append({"n": int(n), "mean": float(masses.mean()), "var": float(np.mean(c ** 2)),
                     "m4": float(np.mean(c ** 4))})
    return rows


def resize(config, n):
    """Square copy of ``config`` with every width ``n``."""
    kw = {"widths": (n,) * (config.L + 1)}
    if config.input_mode == "explicit":
        raise ConfigError("cannot resize a configuration with an explicit input vector")
    return replace(config, **kw)


def interpolation_study(config, sizes=(256, 512, 1024), pairs=20, workers=None):
    """Average KS gap between dependent-``D`` and surrogate spectra per size.

    The baseline is the average KS distance between two independent
    Jacobian draws (replicas ``2i`` and ``2i+1``).
    """
    rows = []
    for n in sizes:
        cfg_n = resize(config, n)

        def one(i):
            a = Streams(cfg_n.seed, 2 * i)
            b = Streams(cfg_n.seed, 2 * i + 1)
            ja, jb = jacobian_spectrum(cfg_n, a), jacobian_spectrum(cfg_n, b)
            sa = surrogate_spectrum(cfg_n, b)
            return ks_distance(ja.ncm(), sa.ncm()), ks_distance(ja.ncm(), jb.ncm())

        vals = np.array(_map_replicas(one, list(range(pairs)), workers))
        rows.append({"n": int(n), "gap": float(vals[:, 0].mean()), "baseline": float(vals[:, 1].mean())})
    return rows


@dataclass
class ComparisonReport:
    ks: float
    moments_theory: list
    moments_empirical: list
    moment_gaps: list
    q_theory: list
    q_empirical: list
    q_gaps: list
    norm_mean: float | None
    norm_std: float | None
    reps: int
    n_eigenvalues: int

    def to_dict(self):
        return dict(self.__dict__)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)


def compare(config: NetworkConfig, cfg: SolverConfig | None = None, reps=1, norms=False,
            theory=None, workers=None) -> ComparisonReport:
    """Pooled empirical spectrum over ``reps`` replicas against the limit law."""
    cfg = cfg or SolverConfig()
    if reps < 1:
        raise ConfigError("reps must be at least 1")
    records = simulate(config, reps, norms=norms, workers=workers)
    mu = theory_spectrum(config, cfg) if theory is None else theory
    emp = pooled(records, n_rows=config.widths[-1])
    ncm = emp.ncm()
    ks = ks_distance(ncm, mu)
    mt = [mu.moment(k) for k in range(1, 5)]
    me = [ncm.moment(k) for k in range(1, 5)]
    gaps = [abs(e - t) / abs(t) if t else abs(e) for e, t in zip(me, mt)]
    sched = q_schedule(config.q1_value(), config.L, config.act(), config.sigma_b2,
                       with_bias=config.with_bias, strict=False)
    qe = np.mean([r.per_layer_q for r in records], axis=0).tolist()
    qg = [abs(a - b) for a, b in zip(qe, sched.q)]
    if norms:
        allv = np.concatenate([r.norm_stat for r in records])
        nm, ns = float(allv.mean()), float(allv.std(ddof=1)) if allv.size > 1 else 0.0
    else:
        nm = ns = None
    return ComparisonReport(float(ks), mt, me, gaps, list(sched.q), qe, qg, nm, ns, reps, emp.n)
