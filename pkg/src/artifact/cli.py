"""Command-line entry point.

Every subcommand accepts ``--config FILE`` holding flat ``key = value`` lines
whose keys are flag names without the leading dashes; explicit flags win over
the file. Outputs are written atomically and each gets a JSON manifest
(``<output>.manifest.json``) recording inputs, seed and resolved settings.

Exit status: 0 on success, 2 on usage errors, 1 on computation errors (with a
JSON error record on stderr).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import platform
import sys
import tempfile
from dataclasses import asdict, fields, is_dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import __name__ as _pkg_name
from .data import load_dataset, summarize
from .errors import ArtifactError
from .estimator import EstimateConfig, first_sample_nw, plugin_estimate, pooled_nw
from .inference import bootstrap, cv_usefulness
from .kernels import KernelSpec
from .registration import RegistrationConfig, register
from .simulate import SimSpec, co2_like_mean, monte_carlo, tabulated_mean
from .theory import (KernelConstants, ModelSpec, asymptotic_mse, improvement_ratios,
                     lower_extension_sequence, symmetric_decomposition_check)
from .warp import PiecewiseLinearWarp

log = logging.getLogger(_pkg_name)

COMMANDS = ("summarize", "register", "estimate", "bootstrap", "cv", "simulate",
            "asymptotics", "symmetry")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --------------------------------------------------------------------------
# config files and output plumbing
# --------------------------------------------------------------------------

def read_flat_config(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise UsageError(f"{path}:{lineno}: empty key")
        out[key] = value
    return out


def write_atomic(path, text: str):
    """Write ``text`` to ``path`` via a temporary file in the same directory and a rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _jsonable(obj):
    if is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _jsonable(getattr(obj, f.name)) for f in fields(obj)
                if not callable(getattr(obj, f.name))}
    if isinstance(obj, KernelSpec):
        return str(obj)
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if callable(obj):
        return getattr(obj, "__name__", repr(obj))
    return obj


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def _versions() -> dict:
    import scipy

    from importlib import metadata
    try:
        own = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        own = "unknown"
    return {"artifact": own, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__}


class Run:
    """Collects outputs of one command and writes them with manifests."""

    def __init__(self, command: str, args: argparse.Namespace):
        self.command = command
        self.args = args
        self.inputs = {}
        self.tuning = {}

    def add_input(self, name, path):
        if path is None:
            return
        p = Path(path)
        if not p.is_file():
            raise UsageError(f"input file not found: {path}")
        self.inputs[name] = {"path": str(path), "sha256": _sha256(p)}

    def write(self, path, text: str):
        write_atomic(path, text)
        manifest = {
            "command": self.command,
            "output": str(path),
            "inputs": self.inputs,
            "seed": getattr(self.args, "seed", None),
            "settings": {k: v for k, v in sorted(vars(self.args).items())
                         if k not in ("threads", "config", "func", "log_level")},
            "resolved": self.tuning,
            "versions": _versions(),
        }
        write_atomic(f"{path}.manifest.json", dumps(manifest))


# --------------------------------------------------------------------------
# option groups
# --------------------------------------------------------------------------

def _auto_or_float(text):
    if text is None or str(text).strip().lower() == "auto":
        return None
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'auto' or a number, got {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError("bandwidth must be positive")
    return v


def _float_list(text):
    try:
        vals = tuple(float(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals or any(not v > 0 for v in vals):
        raise argparse.ArgumentTypeError("bandwidth grid must hold positive numbers")
    return vals


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("expected a positive integer")
    return v


def _common(p, seed=False, seed_required=False):
    p.add_argument("--config", help="flat key = value file; flags override it")
    p.add_argument("--threads", type=int, default=0, help="worker threads (0: all cores)")
    p.add_argument("--log-level", default="WARNING")
    if seed:
        p.add_argument("--seed", type=int, required=seed_required, default=None)


def _pair_inputs(p, ds2_required=True):
    p.add_argument("--ds1", required=True, help="first dataset CSV (reference time scale)")
    p.add_argument("--ds2", required=ds2_required, help="second dataset CSV")
    p.add_argument("--resolve-ties", action="store_true", help="nudge duplicate time stamps apart")


def _registration_opts(p):
    p.add_argument("--knots", type=_positive_int, default=None)
    p.add_argument("--rounds", type=_positive_int, default=None)
    p.add_argument("--window", type=float, default=None)
    p.add_argument("--steps", type=_positive_int, default=None)
    p.add_argument("--refine", type=float, default=None)
    p.add_argument("--ht", type=_auto_or_float, default=None, help="'auto' or value")
    p.add_argument("--hy", type=_auto_or_float, default=None, help="'auto' or value")


def _estimate_opts(p):
    p.add_argument("--hn", type=_auto_or_float, default=None, help="'auto' (LOOCV) or value")
    p.add_argument("--hn-grid", type=_float_list, default=None, help="comma-separated LOOCV grid")
    p.add_argument("--grid", type=_positive_int, default=512, help="evaluation grid size")


def _warp_choice(p, required=True):
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument("--warp", help="warp JSON from 'register'")
    g.add_argument("--auto", action="store_true", help="register ds2 onto ds1 first")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="artifact", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("summarize", help="size and ranges of datasets")
    _common(p)
    p.add_argument("--input", action="append", required=True, help="dataset CSV (repeatable)")
    p.add_argument("--resolve-ties", action="store_true")
    p.add_argument("--out", help="also write the summary as JSON")

    p = sub.add_parser("register", help="estimate the warp from ds2's to ds1's time scale")
    _common(p)
    _pair_inputs(p)
    _registration_opts(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("estimate", help="pooled mean-function estimate")
    _common(p)
    _pair_inputs(p, ds2_required=False)
    _warp_choice(p, required=False)
    _registration_opts(p)
    _estimate_opts(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("bootstrap", help="bootstrap standard errors, intervals and band")
    _common(p, seed=True, seed_required=True)
    _pair_inputs(p)
    _warp_choice(p, required=False)
    _registration_opts(p)
    _estimate_opts(p)
    p.add_argument("--B", type=_positive_int, default=1000)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--no-reregister", action="store_true", help="keep the fitted warp in replicates")
    p.add_argument("--out", required=True)

    p = sub.add_parser("cv", help="leave-one-out check of whether pooling helps")
    _common(p, seed=True)
    _pair_inputs(p)
    _registration_opts(p)
    _estimate_opts(p)
    p.add_argument("--mode", choices=("fast", "exact"), default="fast")
    p.add_argument("--cv-max-deletions", type=_positive_int, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("simulate", help="Monte Carlo comparison of the three estimators")
    _common(p, seed=True, seed_required=True)
    p.add_argument("--runs", type=_positive_int, default=1000)
    p.add_argument("--n1", type=_positive_int, default=500)
    p.add_argument("--n2", type=_positive_int, default=500)
    p.add_argument("--noise-frac", type=float, default=0.10)
    p.add_argument("--mean", default="builtin", help="'builtin' or a t,y CSV to interpolate")
    _registration_opts(p)
    _estimate_opts(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("asymptotics", help="leading-order MSE and improvement ratios")
    _common(p)
    p.add_argument("--model", required=True, help="model file of key = value formulas")
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--n", type=_positive_int, required=True)
    p.add_argument("--h", type=float, required=True)
    p.add_argument("--out", help="also write the JSON report here")

    p = sub.add_parser("symmetry", help="symmetric decomposition check for a sawtooth warp")
    _common(p)
    p.add_argument("--t0", type=float, required=True)
    p.add_argument("--r", type=float, required=True)
    p.add_argument("--terms", type=_positive_int, default=50)
    p.add_argument("--out", help="also write the JSON report here")
    return parser


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        if not Path(args.config).is_file():
            raise UsageError(f"config file not found: {args.config}")
        values = read_flat_config(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest: a for a in sub._actions}
        argv_cfg = []
        for key, value in values.items():
            dest = key.replace("-", "_")
            if dest not in known or dest in ("config", "help"):
                raise UsageError(f"unknown config key {key!r} for {args.command}")
            action = known[dest]
            flag = action.option_strings[-1] if action.option_strings else None
            if flag is None:
                raise UsageError(f"config key {key!r} is not a flag")
            if isinstance(action, (argparse._StoreTrueAction,)):
                if value.lower() in ("1", "true", "yes"):
                    argv_cfg.append(flag)
            elif isinstance(action, argparse._AppendAction):
                for part in value.split(","):
                    argv_cfg += [flag, part.strip()]
            else:
                argv_cfg += [flag, value]
        # config first, explicit flags after: the later occurrence wins
        args = parser.parse_args([args.command] + argv_cfg + list(argv[1:]))
    return args


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def _reg_cfg(args) -> RegistrationConfig:
    kw = {}
    for flag, name in (("knots", "knot_count"), ("rounds", "rounds"), ("window", "window"),
                       ("steps", "steps"), ("refine", "refine"), ("ht", "h_t"), ("hy", "h_y")):
        v = getattr(args, flag, None)
        if v is not None:
            kw[name] = v
    return RegistrationConfig(**kw)


def _est_cfg(args) -> EstimateConfig:
    return EstimateConfig(h_n=args.hn, cv_grid=args.hn_grid, grid_size=args.grid)


def _load_pair(run: Run, args):
    run.add_input("ds1", args.ds1)
    ds1 = load_dataset(args.ds1, label="ds1", resolve_ties=args.resolve_ties)
    ds2 = None
    if args.ds2:
        run.add_input("ds2", args.ds2)
        ds2 = load_dataset(args.ds2, label="ds2", resolve_ties=args.resolve_ties)
    return ds1, ds2


def _fit(run: Run, args, ds1, ds2):
    reg_cfg = _reg_cfg(args)
    est_cfg = _est_cfg(args)
    if getattr(args, "warp", None):
        run.add_input("warp", args.warp)
        warp = PiecewiseLinearWarp.from_json(Path(args.warp).read_text(encoding="utf-8"))
        from .registration import RegistrationResult

        reg = RegistrationResult(warp=warp, config=reg_cfg)
        curve = pooled_nw(ds1, ds2, warp, est_cfg)
    else:
        reg, curve = plugin_estimate(ds1, ds2, reg_cfg, est_cfg)
    run.tuning.update({"registration": reg.config.resolve(ds1, ds2), "h_n": curve.h_n,
                       "grid_size": est_cfg.grid_size})
    return reg, curve, reg_cfg, est_cfg


def cmd_summarize(args, run: Run):
    rows = []
    for path in args.input:
        run.add_input(path, path)
        ds = load_dataset(path, resolve_ties=args.resolve_ties)
        s = summarize(ds)
        rows.append({"file": path, **s.as_dict(),
                     "dropped_blank_rows": ds.diagnostics.get("dropped_blank_rows", 0)})
    print(f"{'file':<32} {'size':>6} {'t_min':>12} {'t_max':>12} {'y_min':>12} {'y_max':>12}")
    for r in rows:
        print(f"{r['file']:<32} {r['size']:>6d} {r['t_range'][0]:>12.6g} {r['t_range'][1]:>12.6g} "
              f"{r['y_range'][0]:>12.6g} {r['y_range'][1]:>12.6g}")
    if args.out:
        run.write(args.out, dumps(rows))


def cmd_register(args, run: Run):
    ds1, ds2 = _load_pair(run, args)
    cfg = _reg_cfg(args)
    res = register(ds1, ds2, cfg)
    run.tuning.update({"registration": res.config, "criterion_trace": res.criterion_trace,
                       "evaluations": res.evaluations})
    run.write(args.out, res.warp.to_json())


def cmd_estimate(args, run: Run):
    ds1, ds2 = _load_pair(run, args)
    if ds2 is None:
        if args.warp or args.auto:
            raise UsageError("--warp/--auto need --ds2")
        est_cfg = _est_cfg(args)
        curve = first_sample_nw(ds1, est_cfg)
        run.tuning.update({"h_n": curve.h_n, "grid_size": est_cfg.grid_size})
    else:
        if not (args.warp or args.auto):
            raise UsageError("estimate with --ds2 needs --warp FILE or --auto")
        _, curve, _, _ = _fit(run, args, ds1, ds2)
    run.tuning["diagnostics"] = curve.diagnostics
    run.write(args.out, curve.to_csv())


def cmd_bootstrap(args, run: Run):
    if not 0 < args.alpha < 1:
        raise UsageError("--alpha must lie in (0, 1)")
    if args.B < 2:
        raise UsageError("--B must be at least 2")
    ds1, ds2 = _load_pair(run, args)
    reg, curve, reg_cfg, est_cfg = _fit(run, args, ds1, ds2)
    summary = bootstrap(ds1, ds2, (reg, curve), B=args.B, alpha=args.alpha, seed=args.seed,
                        reg_cfg=reg_cfg, est_cfg=est_cfg, reregister=not args.no_reregister,
                        threads=args.threads)
    run.tuning.update({"replicates_used": summary.B, "replicates_failed": summary.failed})
    run.write(args.out, summary.to_csv())


def cmd_cv(args, run: Run):
    if args.cv_max_deletions is not None and args.seed is None:
        raise UsageError("--cv-max-deletions draws a random subset and needs --seed")
    ds1, ds2 = _load_pair(run, args)
    rep = cv_usefulness(ds1, ds2, _reg_cfg(args), _est_cfg(args), mode=args.mode,
                        max_deletions=args.cv_max_deletions, seed=args.seed or 0,
                        threads=args.threads)
    run.write(args.out, dumps(rep.as_dict()))


def cmd_simulate(args, run: Run):
    if args.runs < 2:
        raise UsageError("--runs must be at least 2")
    if args.mean == "builtin":
        mean = co2_like_mean
    else:
        run.add_input("mean", args.mean)
        mean = tabulated_mean(args.mean)
    spec = SimSpec(n1=args.n1, n2=args.n2, mean=mean, noise_frac=args.noise_frac, seed=args.seed)
    est_cfg = EstimateConfig(h_n=args.hn, cv_grid=args.hn_grid)
    rep = monte_carlo(spec, args.runs, est_cfg, _reg_cfg(args), threads=args.threads)
    run.tuning.update({"mean": args.mean, "diagnostics": rep.diagnostics, "failed": rep.failed})
    run.write(args.out, rep.to_csv())


_MODEL_KEYS = {"f1", "f2", "m", "g0", "g0_inverse", "a", "b", "c", "d", "sigma1_sq", "sigma2_sq",
               "xi", "kernel"}


def load_model(path):
    """Model file: formulas in ``t`` for f1, f2, m, g0 (optional g0_inverse), supports
    a, b, c, d, noise variances, xi and an optional kernel name."""
    raw = read_flat_config(path)
    unknown = set(raw) - _MODEL_KEYS
    if unknown:
        raise UsageError(f"unknown model keys: {', '.join(sorted(unknown))}")
    for key in ("f1", "m"):
        if key not in raw:
            raise UsageError(f"model file lacks {key!r}")
    a, b = float(raw.get("a", 0)), float(raw.get("b", 1))
    spec = ModelSpec.from_expressions(
        f1=raw["f1"], f2=raw.get("f2", raw["f1"]), m=raw["m"], g0=raw.get("g0", "t"),
        g0_inverse=raw.get("g0_inverse"), support1=(a, b),
        support2=(float(raw.get("c", a)), float(raw.get("d", b))),
        sigma1_sq=float(raw.get("sigma1_sq", 1.0)), sigma2_sq=float(raw.get("sigma2_sq", raw.get("sigma1_sq", 1.0))),
        xi=float(raw.get("xi", 0.5)))
    kernel = KernelSpec.parse(raw.get("kernel", "gaussian"))
    return spec, kernel, raw


def cmd_asymptotics(args, run: Run):
    run.add_input("model", args.model)
    spec, kernel, raw = load_model(args.model)
    kc = KernelConstants.of(kernel)
    mse = asymptotic_mse(spec, kc, args.t, args.n, args.h)
    report = {"t": args.t, "n": args.n, "h": args.h, "kernel": str(kernel),
              "k_l2": kc.k_l2, "mu2": kc.mu2, "variance_term": mse.variance,
              "bias_sq_term": mse.bias_sq, "total": mse.total, "diagnostics": mse.diagnostics,
              "model": raw}
    if spec.xi < 1:
        ratios = improvement_ratios(spec, args.t)
        report["improvement_ratios"] = {
            "variance_factor2": ratios.variance_factor2,
            "variance_limit_factor1": ratios.variance_limit_factor1,
            "bias_factor2": ratios.bias_factor2, "bias_limit_factor1": ratios.bias_limit_factor1,
            "diagnostics": ratios.diagnostics}
    print(f"variance term : {mse.variance:.17g}")
    print(f"bias^2 term   : {mse.bias_sq:.17g}")
    print(f"total         : {mse.total:.17g}")
    if "improvement_ratios" in report:
        ir = report["improvement_ratios"]
        print(f"variance ratio factors: {ir['variance_factor2']:.17g} x {ir['variance_limit_factor1']:.17g}")
        print(f"bias^2 ratio factors  : {ir['bias_factor2']:.17g} x {ir['bias_limit_factor1']:.17g}")
    text = dumps(report)
    print(text, end="")
    if args.out:
        run.write(args.out, text)


def cmd_symmetry(args, run: Run):
    exists, diag = symmetric_decomposition_check(args.t0, args.r)
    t_seq, g1 = lower_extension_sequence(args.t0, args.r, args.terms)
    diffs = np.abs(np.diff(g1))
    report = {"t0": args.t0, "r": args.r, "exists": exists, "diagnostics": diag,
              "terms": args.terms, "t_seq": t_seq, "g1_seq": g1,
              "final_step_gap": float(diffs[-1])}
    print(f"sawtooth warp t0={args.t0:.17g} r={args.r:.17g} (lower slope v={diag['v']:.17g})")
    print(f"symmetric decomposition exists: {'yes' if exists else 'no'}")
    print(f"  g1(t0) forced by lower piece : {diag['required_g1_t0']:.17g}")
    print(f"  g1(t0) from canonical pair   : {diag['canonical_g1_t0']:.17g}")
    print(f"  gap                          : {diag['gap']:.17g}")
    roots = ", ".join(f"{r['r']:.17g} ({'feasible' if r['feasible'] else 'infeasible'})"
                      for r in diag["roots"])
    print(f"  quadratic roots in r         : {roots}")
    print(f"  |g1(t_n) - g1(t_n+1)| after {args.terms} terms: {diffs[-1]:.17g}")
    text = dumps(report)
    print(text, end="")
    if args.out:
        run.write(args.out, text)


HANDLERS = {"summarize": cmd_summarize, "register": cmd_register, "estimate": cmd_estimate,
            "bootstrap": cmd_bootstrap, "cv": cmd_cv, "simulate": cmd_simulate,
            "asymptotics": cmd_asymptotics, "symmetry": cmd_symmetry}


def _fail(kind: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    return code


def main(argv: Optional[list] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except UsageError as exc:
        return _fail("usage", str(exc), 2)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    run = Run(args.command, args)
    try:
        HANDLERS[args.command](args, run)
    except UsageError as exc:
        return _fail("usage", str(exc), 2)
    except (ArtifactError, ValueError, ArithmeticError, OSError) as exc:
        return _fail(type(exc).__name__, str(exc), 1)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
