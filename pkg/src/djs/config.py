"""Network description shared by the theory and simulation paths."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from djs.activations import Activation, get_activation, piecewise_linear, q_fixed_point
from djs.errors import ConfigError

INPUT_MODES = ("iid-unit", "explicit", "q1-target")
Q_RECURRENCES = ("with-bias", "without-bias")


@dataclass(frozen=True)
class NetworkConfig:
    """Depth, widths ``n_0..n_L``, bias variance, nonlinearity and input.

    ``q1`` is used by ``input_mode="q1-target"`` and is either a number or
    the string ``"fixed-point"``; the input is then the constant vector with
    ``n^{-1} |x0|^2 + sigma_b^2 = q1``.
    """

    L: int
    widths: tuple
    sigma_b2: float = 0.0
    activation: str = "tanh"
    input_mode: str = "iid-unit"
    x0: tuple | None = None
    q1: float | str | None = None
    seed: int = 0
    q_recurrence: str = "with-bias"
    unsafe_unbounded: bool = False
    knots: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(n) for n in self.widths))
        if self.x0 is not None:
            object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))
        if self.knots is not None:
            object.__setattr__(self, "knots", tuple(tuple(map(float, k)) for k in self.knots))
        self.validate()

    @classmethod
    def square(cls, L, n, **kw):
        return cls(L=L, widths=(n,) * (L + 1), **kw)

    def validate(self):
        if int(self.L) != self.L or self.L < 1:
            raise ConfigError("L must be an integer >= 1")
        if len(self.widths) != self.L + 1:
            raise ConfigError(f"widths must list n_0..n_L ({self.L + 1} values)")
        if min(self.widths) < 2:
            raise ConfigError("every width must be at least 2")
        if not self.sigma_b2 >= 0:
            raise ConfigError("sigma_b2 must be nonnegative")
        if self.input_mode not in INPUT_MODES:
            raise ConfigError(f"input_mode must be one of {INPUT_MODES}")
        if self.q_recurrence not in Q_RECURRENCES:
            raise ConfigError(f"q_recurrence must be one of {Q_RECURRENCES}")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError("seed must fit in 64 bits")
        act = self.act()
        if self.input_mode == "explicit":
            if self.x0 is None or len(self.x0) != self.widths[0]:
                raise ConfigError("explicit input needs x0 of length n_0")
        elif self.input_mode == "q1-target":
            if self.q1 is None:
                raise ConfigError("q1-target input needs q1")
            if isinstance(self.q1, str) and self.q1 != "fixed-point":
                raise ConfigError("q1 must be a number or 'fixed-point'")
        q1 = self.q1_value()
        # q1 == sigma_b2 (zero input) is admitted as a degenerate case
        if not q1 >= self.sigma_b2:
            raise ConfigError(f"q1 = {q1} must not be below sigma_b2 = {self.sigma_b2}")
        return act

    @property
    def with_bias(self):
        return self.q_recurrence == "with-bias"

    def act(self) -> Activation:
        if self.knots is not None:
            return piecewise_linear(self.knots, name=self.activation)
        return get_activation(self.activation, self.unsafe_unbounded)

    def q1_value(self):
        """Limiting ``q^1`` implied by the input specification."""
        if self.input_mode == "explicit":
            x = np.asarray(self.x0)
            return float(np.mean(x * x) + self.sigma_b2)
        if self.input_mode == "iid-unit":
            return 1.0 + self.sigma_b2
        if self.q1 == "fixed-point":
            return q_fixed_point(self.act(), self.sigma_b2, with_bias=self.with_bias)
        return float(self.q1)

    def input_vector(self, rng):
        n0 = self.widths[0]
        if self.input_mode == "explicit":
            return np.asarray(self.x0, dtype=float)
        if self.input_mode == "iid-unit":
            return rng.standard_normal(n0)
        return np.full(n0, math.sqrt(max(self.q1_value() - self.sigma_b2, 0.0)))

    @property
    def aspect_ratios(self):
        """``c_l = n_{l-1} / n_l`` for each layer."""
        return tuple(a / b for a, b in zip(self.widths[:-1], self.widths[1:]))

    def to_dict(self):
        d = asdict(self)
        d["widths"] = list(self.widths)
        if self.x0 is not None:
            d["x0"] = list(self.x0)
        if self.knots is not None:
            d["knots"] = [list(k) for k in self.knots]
        return d

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown network keys {sorted(unknown)}; valid keys: {sorted(known)}")
        return cls(**d)
