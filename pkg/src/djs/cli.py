"""Command line entry point.

    djs theory   --phi hard-tanh --L 2 --q1 fixed-point --sigma-b2 0.05
    djs simulate --phi tanh --L 3 --n 512 --reps 4 --seed 7
    djs compare  --phi tanh --L 3 --n 1024 --reps 20 --seed 7
    djs validate

Exit codes: 0 success, 2 configuration error, 3 numerical failure (or a
failed validation check). Errors are printed to stdout as a JSON object.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

from djs.config import NetworkConfig
from djs.errors import ConfigError, NumericalError
from djs.simulate import compare, pooled, simulate
from djs.solver import ExtrapolationWarning, SolverConfig, layer_measures, propagate_layers

MODES = ("theory", "simulate", "compare", "validate")
FORMATS = ("csv", "json")
TOP_KEYS = ("mode", "network", "solver", "reps", "output_dir", "formats")
# config-file aliases for solver keys
SOLVER_ALIASES = {"c": "aspect_c"}
DEFAULT_N = 512


@dataclass
class ExperimentSpec:
    mode: str
    network: NetworkConfig
    solver: SolverConfig = field(default_factory=SolverConfig)
    reps: int = 1
    output_dir: str = "djs-out"
    formats: tuple = FORMATS

    def __post_init__(self):
        self.formats = tuple(self.formats)
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {list(MODES)}")
        if int(self.reps) != self.reps or self.reps < 1:
            raise ConfigError("reps must be an integer >= 1")
        bad = set(self.formats) - set(FORMATS)
        if bad or not self.formats:
            raise ConfigError(f"formats must be a nonempty subset of {list(FORMATS)}")

    def to_dict(self):
        return {"mode": self.mode, "network": self.network.to_dict(), "solver": self.solver.to_dict(),
                "reps": self.reps, "output_dir": self.output_dir, "formats": list(self.formats)}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(TOP_KEYS)
        if unknown:
            raise ConfigError(f"unknown keys {sorted(unknown)}; valid keys: {list(TOP_KEYS)}")
        return cls(d.get("mode", "theory"), NetworkConfig.from_dict(d["network"]),
                   SolverConfig.from_dict(d.get("solver", {})), d.get("reps", 1),
                   d.get("output_dir", "djs-out"), tuple(d.get("formats", FORMATS)))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


# -- parsing -------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser():
    p = _Parser(prog="djs", description="Limiting Jacobian spectra of deep random networks.")
    p.add_argument("mode_pos", nargs="?", choices=MODES, metavar="MODE",
                   help="one of: " + ", ".join(MODES))
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--config", help="JSON experiment file; flags override its values")
    p.add_argument("--phi", help="activation name (tanh, hard-tanh, erf, scaled-shifted-tanh, relu)")
    p.add_argument("--L", type=int, help="depth (default 1)")
    p.add_argument("--n", type=int, help=f"common width (default {DEFAULT_N})")
    p.add_argument("--widths", help="comma-separated n_0,...,n_L")
    p.add_argument("--sigma-b2", type=float, help="bias variance (default 0)")
    p.add_argument("--q1", help="target q^1 (number or 'fixed-point'); default iid unit input")
    p.add_argument("--seed", type=int, help="master seed (default 0)")
    p.add_argument("--reps", type=int, help="Monte Carlo replicas (default 1)")
    p.add_argument("--eps-ladder", help="comma-separated decreasing eps values")
    p.add_argument("--tol", type=float, help="solver tolerance")
    p.add_argument("--c", type=float, help="input aspect ratio n_0/n_1 when --widths is not given")
    p.add_argument("--output", help="output directory (default djs-out)")
    p.add_argument("--formats", help="comma-separated subset of csv,json")
    p.add_argument("--q-recurrence", choices=("with-bias", "without-bias"))
    p.add_argument("--unsafe-unbounded", action="store_true", default=None,
                   help="allow unbounded activations such as relu")
    return p


def _set_dotted(d, key, value):
    parts = key.split(".")
    cur = d
    for part in parts[:-1]:
        cur = cur.setdefault(part, {})
        if not isinstance(cur, dict):
            raise ConfigError(f"key {key!r} conflicts with a non-object value")
    cur[parts[-1]] = value


def _normalize(raw):
    """Expand dotted keys and solver aliases."""
    out = {}
    for k, v in raw.items():
        if isinstance(v, dict) and k in ("network", "solver"):
            for kk, vv in v.items():
                _set_dotted(out, f"{k}.{kk}", vv)
        else:
            _set_dotted(out, k, v)
    sol = out.get("solver", {})
    for a, real in SOLVER_ALIASES.items():
        if a in sol:
            sol[real] = sol.pop(a)
    return out


def load_config_file(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path!r}: {exc.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path!r} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a JSON object")
    return _normalize(raw)


def _floats(text, name):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--{name} must be a comma-separated list of numbers") from None


def parse_config(argv=None) -> ExperimentSpec:
    args = build_parser().parse_args(argv)
    d = load_config_file(args.config) if args.config else {}
    net = dict(d.get("network", {}))
    sol = dict(d.get("solver", {}))
    extra = set(d) - set(TOP_KEYS)
    if extra:
        raise ConfigError(f"unknown keys {sorted(extra)}; valid keys: {list(TOP_KEYS)}")

    mode = args.mode or args.mode_pos or d.get("mode")
    if mode is None:
        raise ConfigError(f"a mode is required: one of {list(MODES)}")

    n_file = net.pop("n", None)
    if args.phi is not None:
        net["activation"] = args.phi
    if args.sigma_b2 is not None:
        net["sigma_b2"] = args.sigma_b2
    if args.seed is not None:
        net["seed"] = args.seed
    if args.q_recurrence is not None:
        net["q_recurrence"] = args.q_recurrence
    if args.unsafe_unbounded:
        net["unsafe_unbounded"] = True
    if args.q1 is not None:
        net["input_mode"] = "q1-target"
        net["q1"] = args.q1 if args.q1 == "fixed-point" else _floats(args.q1, "q1")[0]
    if args.L is not None:
        net["L"] = args.L
    if args.widths is not None:
        w = _floats(args.widths, "widths")
        if any(int(x) != x for x in w):
            raise ConfigError("--widths must be integers")
        net["widths"] = [int(x) for x in w]
        if args.L is None:
            net["L"] = len(w) - 1
    elif args.n is not None or args.c is not None or "widths" not in net:
        L = net.setdefault("L", 1)
        if not isinstance(L, int) or L < 1:
            raise ConfigError("L must be an integer >= 1")
        n = args.n if args.n is not None else (n_file or DEFAULT_N)
        c = args.c if args.c is not None else 1.0
        if not c > 0:
            raise ConfigError("--c must be positive")
        net["widths"] = [max(2, int(round(c * n)))] + [int(n)] * L
    if args.eps_ladder is not None:
        sol["eps_ladder"] = _floats(args.eps_ladder, "eps-ladder")
    if args.tol is not None:
        sol["tol"] = args.tol
    if args.c is not None:
        sol["aspect_c"] = args.c

    reps = args.reps if args.reps is not None else d.get("reps", 1)
    out = args.output or d.get("output_dir", "djs-out")
    formats = _floats_to_formats(args.formats) if args.formats else d.get("formats", FORMATS)
    return ExperimentSpec(mode, NetworkConfig.from_dict(net), SolverConfig.from_dict(sol),
                          reps, out, tuple(formats))


def _floats_to_formats(text):
    return [f.strip() for f in text.split(",") if f.strip()]


# -- running ---------------------------------------------------------------------


def _outdir(spec):
    p = Path(spec.output_dir)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {str(p)!r}: {exc.strerror}") from None
    if not os.access(p, os.W_OK):
        raise ConfigError(f"output directory {str(p)!r} is not writable")
    return p


def _write(path, text):
    path.write_text(text)
    return str(path)


def run(spec: ExperimentSpec, stream=None):
    """Execute ``spec``; returns the exit code."""
    stream = stream or sys.stdout
    out = _outdir(spec)
    files = [_write(out / "experiment.json", spec.to_json())]
    status = 0
    summary = {}
    if spec.mode == "theory":
        sched, ks = layer_measures(spec.network)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", ExtrapolationWarning)
            mu, grid = propagate_layers(ks, spec.solver, spec.network.aspect_ratios, return_grid=True)
        if "csv" in spec.formats:
            files.append(_write(out / "density.csv", grid.to_csv()))
        if "json" in spec.formats:
            files.append(_write(out / "measure.json", mu.to_json()))
            files.append(_write(out / "qschedule.json", sched.to_json()))
        summary = {"mean": mu.moment(1), "atom_at_zero": mu.mass_at_zero,
                   "density_mass": grid.mass_estimate + grid.atom_at_zero,
                   "warnings": [str(w.message) for w in caught]}
    elif spec.mode == "simulate":
        recs = simulate(spec.network, spec.reps)
        emp = pooled(recs)
        if "csv" in spec.formats:
            files.append(_write(out / "eigenvalues.csv", emp.to_csv()))
        if "json" in spec.formats:
            files.append(_write(out / "run_records.json",
                                json.dumps([r.to_dict() for r in recs])))
        summary = {"eigenvalues": emp.n, "mean": float(emp.eigenvalues.mean()),
                   "per_layer_q": [r.per_layer_q for r in recs][0]}
    elif spec.mode == "compare":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ExtrapolationWarning)
            rep = compare(spec.network, spec.solver, spec.reps)
        files.append(_write(out / "report.json", rep.to_json()))
        summary = {"ks": rep.ks, "moment_gaps": rep.moment_gaps}
    else:
        from djs.validate import run_checks

        checks = run_checks(spec.solver)
        files.append(_write(out / "validate.json", json.dumps({"checks": checks}, indent=2)))
        status = 0 if all(c["passed"] for c in checks) else 3
        summary = {"checks": {c["name"]: c["passed"] for c in checks}}
    json.dump({"status": "ok" if status == 0 else "failed", "mode": spec.mode,
               "files": files, "summary": summary}, stream, indent=2, default=float)
    stream.write("\n")
    return status


def _error(exc, code, stream):
    err = {"type": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, NumericalError):
        err["operation"] = exc.operation
        err["context"] = {k: (v if isinstance(v, (int, float, str)) else str(v))
                          for k, v in exc.context.items()}
    json.dump({"error": err}, stream, indent=2)
    stream.write("\n")
    return code


def main(argv=None):
    stream = sys.stdout
    try:
        spec = parse_config(argv)
        return run(spec, stream)
    except ConfigError as exc:
        return _error(exc, 2, stream)
    except NumericalError as exc:
        return _error(exc, 3, stream)


if __name__ == "__main__":
    sys.exit(main())
