"""Probability measures on [0, inf) stored as weighted atoms.

Every spectrum in the package, whether it comes from a finite matrix, a
quadrature rule or a re-atomized density, is a :class:`SpectralMeasure`.
Continuous laws are carried by a fine atomization.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import roots_legendre

from djs.errors import ConfigError, NumericalError

MERGE_RTOL = 1e-12
EIGEN_CLAMP = -1e-10
NORM_RTOL = 1e-13

_FMT = "%.17g"


def _fmt(x):
    return _FMT % x


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SpectralMeasure:
    """Probability measure with finitely many atoms.

    Construction sorts the atoms, merges locations that agree to
    ``MERGE_RTOL`` relative, drops zero weights and renormalizes to mass 1.
    """

    locations: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        loc = np.asarray(self.locations, dtype=float).ravel()
        w = np.asarray(self.weights, dtype=float).ravel()
        if loc.shape != w.shape:
            raise ConfigError("locations and weights differ in length")
        if loc.size == 0:
            raise ConfigError("a measure needs at least one atom")
        if not (np.all(np.isfinite(loc)) and np.all(np.isfinite(w))):
            raise ConfigError("atoms must be finite")
        if np.any(loc < 0):
            raise ConfigError("atom locations must be nonnegative")
        if np.any(w < 0):
            raise ConfigError("atom weights must be nonnegative")
        keep = w > 0
        if not np.any(keep):
            raise ConfigError("all weights are zero")
        loc, w = loc[keep], w[keep]
        order = np.argsort(loc, kind="stable")
        loc, w = loc[order], w[order]
        if loc.size > 1:
            new_group = np.diff(loc) > MERGE_RTOL * loc[1:]
            if not np.all(new_group):
                gid = np.concatenate([[0], np.cumsum(new_group)])
                wm = np.bincount(gid, weights=w)
                lm = np.bincount(gid, weights=w * loc) / wm
                loc, w = lm, wm
        # already-normalized input is kept as is so that serialization round-trips bit-exactly
        total = w.sum()
        if abs(total - 1.0) > NORM_RTOL:
            w = w / total
        object.__setattr__(self, "locations", _readonly(loc))
        object.__setattr__(self, "weights", _readonly(w))

    # -- basic quantities ---------------------------------------------------

    @property
    def total_mass(self):
        return float(self.weights.sum())

    @property
    def atoms(self):
        return list(zip(self.locations.tolist(), self.weights.tolist()))

    def __len__(self):
        return self.locations.size

    @property
    def max_location(self):
        return float(self.locations[-1])

    def mass_at(self, x, atol=0.0):
        sel = np.abs(self.locations - x) <= atol
        return float(self.weights[sel].sum())

    @property
    def mass_at_zero(self):
        return self.mass_at(0.0)

    def moment(self, k):
        return moment(self, k)

    def mean(self):
        return moment(self, 1)

    def cdf(self, x):
        # weights may sum to 1 within NORM_RTOL; keep the cdf inside [0, 1]
        cw = np.minimum(np.concatenate([[0.0], np.cumsum(self.weights)]), 1.0)
        idx = np.searchsorted(self.locations, np.asarray(x, dtype=float), side="right")
        return cw[idx]

    def scaled(self, s):
        """Law of ``s * X`` for ``X`` distributed by this measure."""
        if s <= 0:
            raise ConfigError("scale must be positive")
        return SpectralMeasure(self.locations * s, self.weights)

    def stieltjes(self, z):
        return stieltjes(self, z)

    # -- serialization --------------------------------------------------------

    def to_json(self):
        atoms = [[float(_fmt(l)), float(_fmt(w))] for l, w in zip(self.locations, self.weights)]
        return json.dumps({"atoms": atoms})

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        try:
            atoms = np.asarray(data["atoms"], dtype=float).reshape(-1, 2)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"not a measure JSON object: {exc}") from exc
        return cls(atoms[:, 0], atoms[:, 1])

    def to_csv(self):
        buf = io.StringIO()
        buf.write("location,weight\n")
        for l, w in zip(self.locations, self.weights):
            buf.write(f"{_fmt(l)},{_fmt(w)}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        rows = list(csv.reader(io.StringIO(text)))
        if rows and rows[0] and rows[0][0].strip() == "location":
            rows = rows[1:]
        rows = [r for r in rows if r]
        if not rows:
            raise ConfigError("empty measure CSV")
        arr = np.array([[float(a), float(b)] for a, b in rows])
        return cls(arr[:, 0], arr[:, 1])

    def __eq__(self, other):
        if not isinstance(other, SpectralMeasure):
            return NotImplemented
        return (np.array_equal(self.locations, other.locations)
                and np.array_equal(self.weights, other.weights))

    __hash__ = None


def dirac(x=1.0):
    return SpectralMeasure([float(x)], [1.0])


@dataclass(frozen=True)
class DensityGrid:
    """Sampled density of the absolutely continuous part of a spectrum.

    ``atom_at_zero`` carries the weight of a point mass at the origin, which
    a density cannot represent.
    """

    lambdas: np.ndarray
    densities: np.ndarray
    mass_estimate: float = field(default=float("nan"))
    atom_at_zero: float = 0.0

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=float).ravel()
        rho = np.asarray(self.densities, dtype=float).ravel()
        if lam.shape != rho.shape or lam.size < 2:
            raise ConfigError("density grid needs matching arrays of length >= 2")
        if np.any(np.diff(lam) <= 0) or lam[0] < 0:
            raise ConfigError("grid must be strictly increasing and nonnegative")
        if np.any(rho < 0):
            raise ConfigError("densities must be nonnegative")
        object.__setattr__(self, "lambdas", _readonly(lam))
        object.__setattr__(self, "densities", _readonly(rho))
        if np.isnan(self.mass_estimate):
            object.__setattr__(self, "mass_estimate", float(np.trapezoid(rho, lam)))

    def trapezoid_weights(self):
        lam = self.lambdas
        h = np.diff(lam)
        tw = np.zeros_like(lam)
        tw[:-1] += h / 2
        tw[1:] += h / 2
        return tw * self.densities

    def to_csv(self):
        """``lambda,density`` rows preceded by a ``# atom_at_zero=`` comment."""
        buf = io.StringIO()
        buf.write(f"# atom_at_zero={_fmt(self.atom_at_zero)}\n")
        buf.write("lambda,density\n")
        for l, d in zip(self.lambdas, self.densities):
            buf.write(f"{_fmt(l)},{_fmt(d)}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        atom = 0.0
        body = []
        for line in text.splitlines():
            t = line.strip()
            if t.startswith("#"):
                key, _, val = t[1:].partition("=")
                if key.strip() == "atom_at_zero":
                    atom = float(val)
            elif t:
                body.append(t)
        rows = list(csv.reader(body))
        if rows and rows[0][0].strip() == "lambda":
            rows = rows[1:]
        arr = np.array([[float(a), float(b)] for a, b in rows])
        return cls(arr[:, 0], arr[:, 1], atom_at_zero=atom)


@dataclass(frozen=True)
class EmpiricalSpectrum:
    """Sorted eigenvalues of one finite realization."""

    eigenvalues: np.ndarray
    n: int
    seed: int = 0
    label: str = ""
    replica: int = 0

    def __post_init__(self):
        ev = np.sort(np.asarray(self.eigenvalues, dtype=float).ravel())
        if ev.size != self.n:
            raise ConfigError(f"expected {self.n} eigenvalues, got {ev.size}")
        if ev.size and ev[0] < 0:
            raise ConfigError("eigenvalues must be nonnegative")
        object.__setattr__(self, "eigenvalues", _readonly(ev))

    def ncm(self):
        return ncm_from_eigenvalues(self.eigenvalues)

    def to_dict(self):
        return {"eigenvalues": [float(_fmt(x)) for x in self.eigenvalues],
                "n": self.n, "seed": self.seed, "replica": self.replica, "label": self.label}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["eigenvalues"], dtype=float), int(d["n"]),
                   int(d.get("seed", 0)), d.get("label", ""), int(d.get("replica", 0)))

    def to_csv(self):
        return "eigenvalue\n" + "".join(f"{_fmt(x)}\n" for x in self.eigenvalues)

    @classmethod
    def from_csv(cls, text, seed=0, label=""):
        rows = [r.strip() for r in text.splitlines() if r.strip()]
        if rows and rows[0] == "eigenvalue":
            rows = rows[1:]
        ev = np.array([float(r) for r in rows])
        return cls(ev, ev.size, seed, label)

    def __eq__(self, other):
        if not isinstance(other, EmpiricalSpectrum):
            return NotImplemented
        return (np.array_equal(self.eigenvalues, other.eigenvalues) and self.n == other.n
                and self.seed == other.seed and self.label == other.label
                and self.replica == other.replica)

    __hash__ = None


def ncm_from_eigenvalues(evals):
    """Normalized counting measure of a list of eigenvalues."""
    ev = np.asarray(evals, dtype=float).ravel()
    if ev.size == 0:
        raise ConfigError("no eigenvalues given")
    if np.any(~np.isfinite(ev)):
        raise NumericalError("non-finite eigenvalue", operation="ncm_from_eigenvalues")
    if ev.min() < EIGEN_CLAMP:
        raise NumericalError(
            f"eigenvalue {ev.min():.3e} is negative beyond round-off; "
            "the matrix is not positive semidefinite",
            operation="ncm_from_eigenvalues")
    ev = np.maximum(ev, 0.0)
    return SpectralMeasure(ev, np.full(ev.size, 1.0 / ev.size))


def moment(mu, k):
    if int(k) != k or k < 1:
        raise ConfigError("moment order must be a positive integer")
    return float(np.dot(mu.weights, mu.locations ** int(k)))


def stieltjes(mu, z):
    """Stieltjes transform ``sum w / (x - z)``; ``z`` may be an array."""
    z = np.asarray(z, dtype=complex)
    d = mu.locations[None, :] - z.reshape(-1, 1)
    if np.min(np.abs(d)) < 1e-12:
        raise ConfigError("z lies on an atom of the measure")
    out = (mu.weights[None, :] / d).sum(axis=1)
    return out.reshape(z.shape) if z.ndim else complex(out[0])


def ks_distance(a, b):
    """Sup distance between the distribution functions of two measures.

    Locations closer than the merge tolerance count as the same point: the
    distribution functions are compared just past each atom, at
    ``x * (1 + MERGE_RTOL)``, so round-off jitter in atom positions does not
    register as a full atom of discrepancy.
    """
    x = np.union1d(a.locations, b.locations)
    x = np.where(x > 0, x * (1.0 + MERGE_RTOL), x)
    return float(np.max(np.abs(a.cdf(x) - b.cdf(x))))


def mp_edges(c):
    s = np.sqrt(c)
    return (1 - s) ** 2, (1 + s) ** 2


def mp_density(lam, c=1.0):
    """Density of the absolutely continuous part of the Marchenko-Pastur law.

    Ratio convention: ``c = m/n`` for the ``m x m`` matrix ``X^T X / n``
    with ``X`` of shape ``n x m``. For ``c > 1`` the law also has an atom of
    weight ``1 - 1/c`` at zero, not included here.
    """
    lam = np.asarray(lam, dtype=float)
    a, b = mp_edges(c)
    out = np.zeros_like(lam)
    inside = (lam > a) & (lam < b) & (lam > 0)
    li = lam[inside]
    out[inside] = np.sqrt((b - li) * (li - a)) / (2 * np.pi * c * li)
    return out


def mp_reference(c=1.0, n_cells=500, nodes_per_cell=8):
    """Marchenko-Pastur law with ratio ``c`` as a quadrature atomization.

    Atoms sit at composite Gauss-Legendre nodes in the angle variable
    ``lam = a + (b - a) sin^2(theta)``, which removes the square-root
    behaviour at both edges (and the inverse square root at 0 when c = 1),
    so sums against the atoms are accurate quadratures.
    """
    if not c > 0:
        raise ConfigError("MP ratio c must be positive")
    a, b = mp_edges(c)
    x, wx = roots_legendre(nodes_per_cell)
    h = (np.pi / 2) / n_cells
    left = np.arange(n_cells) * h
    theta = (left[:, None] + (x[None, :] + 1) * h / 2).ravel()
    wt = np.tile(wx * h / 2, n_cells)
    s2, c2 = np.sin(theta) ** 2, np.cos(theta) ** 2
    lam = a + (b - a) * s2
    g = (b - a) ** 2 * s2 * c2 / (np.pi * c * lam)
    w = g * wt
    cont = min(1.0, 1.0 / c)
    if abs(w.sum() - cont) > 1e-8:
        raise NumericalError("MP atomization lost mass", operation="mp_reference")
    w *= cont / w.sum()
    if c > 1:
        lam = np.concatenate([[0.0], lam])
        w = np.concatenate([[1.0 - 1.0 / c], w])
    return SpectralMeasure(lam, w)
