"""Command-line interface: fitting, testing, power tables, influence
profiles, and Monte Carlo runs.

Inputs are CSV with a mandatory header (data files: ``y,x1,...,xk``); outputs
are plot-ready CSV or JSON tagged with ``"schema": 1``.  Exit codes: 0 on
success, 2 for input errors, 3 for numerical failures.  An optional
``key = value`` config file seeds any flag; explicit flags win.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys

import numpy as np

from . import __version__
from .chisq import chi2_quantile, noncentral_chi2_sf
from .errors import DpdError
from .glm import (FixedDesign, NormalLinearModel, PoissonLogModel,
                  glm_sandwich, normal_contiguous_delta)
from .mc import McConfig, run_mc
from .mdpde import fit_mdpde, sandwich_cov
from .robustness import default_grid, if2_profile, pif_profile
from .wald import LinearHypothesis, wald_composite, wald_simple

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3

DEFAULT_TAU_GRID = (0.0, 0.1, 0.3, 0.5, 0.7, 1.0)

TABLE1_DX = (0.0, 2.0, 5.0, 10.0, 15.0, 20.0, 25.0, 50.0)
TABLE2_LAYOUT = (
    ("design-1", 1, (0.0, 2.0, 3.0, 5.0, 7.0, 10.0)),
    ("design-1", 2, (0.0, 2.0, 3.0, 5.0, 7.0, 10.0)),
    ("design-2", 1, (0.0, 1.0, 2.0, 3.0, 5.0, 7.0)),
    ("design-2", 2, (0.0, 1.0, 2.0, 3.0, 5.0, 7.0)),
    ("design-3", 1, (0.0, 0.01, 0.05, 0.1, 0.2, 0.5)),
    ("design-3", 2, (0.0, 0.01, 0.05, 0.1, 0.2, 0.5)),
    ("design-4", 2, (0.0, 10.0, 20.0, 30.0, 50.0, 70.0)),
    ("design-4", 3, (0.0, 10.0, 20.0, 30.0, 50.0, 70.0)),
)


class InputError(Exception):
    """User-input problem; maps to exit code 2."""


def load_data_csv(path):
    """Read a ``y,x1,...,xk`` CSV into (y, X)."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise InputError(f"{path}: no observations") from None
            header = [h.strip() for h in header]
            k = len(header) - 1
            if k < 1 or header[0] != "y" or header[1:] != [f"x{j + 1}" for j in range(k)]:
                raise InputError(
                    f"{path}: header must be y,x1,...,xk; got {','.join(header)}")
            rows = []
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != k + 1:
                    raise InputError(f"{path}: row {lineno} has {len(row)} fields, "
                                     f"expected {k + 1}")
                try:
                    rows.append([float(v) for v in row])
                except ValueError as exc:
                    raise InputError(f"{path}: row {lineno}: {exc}") from None
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from None
    if not rows:
        raise InputError(f"{path}: no observations")
    arr = np.asarray(rows, dtype=float)
    return arr[:, 0], arr[:, 1:]


def build_family(name, design):
    if name == "normal":
        return NormalLinearModel(design)
    if name == "poisson":
        return PoissonLogModel(design)
    raise InputError(f"unknown family {name!r}; use normal or poisson")


def build_design(spec, n=None):
    if spec == "design-1":
        return FixedDesign.design1(n)
    if spec == "design-2":
        return FixedDesign.design2(n)
    if spec == "design-3":
        return FixedDesign.design3(n)
    if spec == "design-4":
        return FixedDesign.design4(n)
    try:
        return FixedDesign.from_csv(spec)
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot load design {spec!r}: {exc}") from None


def parse_taus(text):
    try:
        taus = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise InputError(f"bad tau grid {text!r}") from None
    if any(t < 0 for t in taus):
        raise InputError("tau values must be >= 0")
    return taus


def parse_vector(text):
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise InputError(f"bad numeric vector {text!r}") from None


def parse_hypothesis(text, k):
    """Either ``h=J`` (test the J-th coefficient, 1-based, equal to zero) or
    ``a,b;c,d:e,f`` giving the rows of L and the vector l0."""
    text = text.strip()
    if text.startswith("h="):
        try:
            index = int(text[2:])
        except ValueError:
            raise InputError(f"bad hypothesis {text!r}") from None
        if not 1 <= index <= k:
            raise InputError(f"coefficient index {index} outside 1..{k}")
        return LinearHypothesis.coefficient(index - 1, k)
    if ":" not in text:
        raise InputError(f"bad hypothesis {text!r}; expected 'h=J' or 'L-rows:l0'")
    left, right = text.rsplit(":", 1)
    try:
        L = np.array([[float(v) for v in row.split(",")] for row in left.split(";")])
        l0 = parse_vector(right)
        return LinearHypothesis(L, l0)
    except (ValueError, InputError) as exc:
        raise InputError(f"bad hypothesis {text!r}: {exc}") from None


def read_config_file(path):
    values = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise InputError(f"{path}: line {lineno}: expected key = value")
                key, _, value = line.partition("=")
                values[key.strip().replace("-", "_")] = value.strip()
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from None
    return values


def apply_config_file(args, parser):
    """Fill parser defaults from the config file; explicit flags keep priority
    because argparse has already written them over the defaults."""
    if not getattr(args, "config", None):
        return args
    values = read_config_file(args.config)
    known = {a.dest for a in parser._actions}
    for key, raw in values.items():
        if key not in known:
            raise InputError(f"unknown config key {key!r}")
        # only adopt the config value when the flag was left at its default
        if parser.get_default(key) == getattr(args, key):
            setattr(args, key, raw)
    return args


def write_json(path, payload):
    payload = {"schema": 1, **payload}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_fit(args, parser):
    args = apply_config_file(args, parser)
    y, X = load_data_csv(args.data)
    family = build_family(args.family, FixedDesign(X))
    taus = parse_taus(args.tau)
    fits = []
    for tau in taus:
        result = fit_mdpde(family, y, tau)
        cov = sandwich_cov(family, result.theta, tau)
        entry = {
            "tau": tau,
            "theta": result.theta.tolist(),
            "converged": result.converged,
            "iterations": result.iterations,
            "eq_norm": result.eq_norm,
            "sigma_diag": np.diag(cov.sigma).tolist(),
            "std_errors": (np.sqrt(np.diag(cov.sigma) / family.n)).tolist(),
        }
        if family.has_dispersion:
            entry["beta"] = result.theta[: family.k].tolist()
            entry["phi"] = float(result.theta[family.k])
        else:
            entry["beta"] = result.theta.tolist()
        fits.append(entry)
    write_json(args.out, {"family": args.family, "n": family.n, "k": family.k,
                          "fits": fits})
    return EXIT_OK


def cmd_test(args, parser):
    args = apply_config_file(args, parser)
    y, X = load_data_csv(args.data)
    family = build_family(args.family, FixedDesign(X))
    taus = parse_taus(args.tau)
    if (args.null is None) == (args.hypothesis is None):
        raise InputError("provide exactly one of --null (simple) or "
                         "--hypothesis (composite)")
    prior_fits = {}
    if args.fit:
        try:
            with open(args.fit, encoding="utf-8") as fh:
                payload = json.load(fh)
            for entry in payload["fits"]:
                prior_fits[float(entry["tau"])] = np.asarray(entry["theta"], dtype=float)
        except (OSError, KeyError, ValueError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot load fit file {args.fit}: {exc}") from None
    reports = []
    for tau in taus:
        theta_hat = prior_fits.get(tau)
        if theta_hat is None:
            theta_hat = fit_mdpde(family, y, tau).theta
        if args.null is not None:
            theta0 = parse_vector(args.null)
            if theta0.size != family.p:
                raise InputError(f"--null has length {theta0.size}, expected {family.p}")
            cov = sandwich_cov(family, theta0, tau)
            report = wald_simple(theta_hat, theta0, cov, family.n, args.alpha, tau=tau)
        else:
            hyp = parse_hypothesis(args.hypothesis, family.k)
            cov = sandwich_cov(family, theta_hat, tau)
            report = wald_composite(theta_hat, hyp, cov, family.n, args.alpha, tau=tau)
        reports.append(report.to_dict())
    write_json(args.out, {"family": args.family, "n": family.n, "tests": reports})
    return EXIT_OK


def cmd_power_table(args, parser):
    args = apply_config_file(args, parser)
    taus = parse_taus(args.tau)
    alpha = args.alpha
    if args.table == 1:
        rows = []
        for k in (1, 20):
            crit = chi2_quantile(k, alpha)
            for dx in TABLE1_DX:
                for tau in taus:
                    delta = normal_contiguous_delta(dx, 1.0, tau)
                    power = noncentral_chi2_sf(crit, k, delta) if dx > 0 else alpha
                    rows.append([k, dx, tau, f"{power:.6f}", ""])
        write_csv(args.out, ["k", "dx", "tau", "power", "note"], rows)
        return EXIT_OK
    if args.table == 2:
        crit = chi2_quantile(1, alpha)
        rows = []
        for design_name, h, dvals in TABLE2_LAYOUT:
            design = build_design(design_name, n=args.n)
            family = PoissonLogModel(design)
            note = "seed-dependent" if design_name == "design-2" else ""
            for tau in taus:
                beta0 = np.ones(design.k)
                beta0[h - 1] = 0.0
                sigma = glm_sandwich(family, beta0, tau).sigma
                shh = sigma[h - 1, h - 1]
                for d in dvals:
                    power = (noncentral_chi2_sf(crit, 1, d * d / shh)
                             if d > 0 else alpha)
                    rows.append([design_name, h, d, tau, f"{power:.6f}", note])
        write_csv(args.out, ["design", "h", "d", "tau", "power", "note"], rows)
        return EXIT_OK
    raise InputError(f"unknown table {args.table}; choose 1 or 2")


def _profile_family(args):
    design = build_design(args.design, n=args.n)
    family = build_family(args.family, design)
    beta0 = (parse_vector(args.beta0) if args.beta0
             else np.ones(design.k))
    if beta0.size != design.k:
        raise InputError(f"beta0 has length {beta0.size}, expected {design.k}")
    if family.has_dispersion:
        theta0 = family.pack(beta0, args.phi0)
    else:
        theta0 = beta0
    return family, theta0


def cmd_if_profile(args, parser):
    args = apply_config_file(args, parser)
    family, theta0 = _profile_family(args)
    taus = parse_taus(args.tau)
    hyp = parse_hypothesis(args.hypothesis, family.k) if args.hypothesis else None
    direction = "all" if args.direction == "all" else int(args.direction) - 1
    grid = default_grid(family, theta0)
    rows = []
    for tau in taus:
        profile = if2_profile(family, theta0, tau, direction=direction,
                              hyp=hyp, grid=grid)
        rows.extend([f"{t:.10g}", tau, f"{v:.12g}"]
                    for t, v in zip(profile.grid, profile.values))
    write_csv(args.out, ["t", "tau", "value"], rows)
    return EXIT_OK


def cmd_pif_profile(args, parser):
    args = apply_config_file(args, parser)
    family, theta0 = _profile_family(args)
    taus = parse_taus(args.tau)
    if args.d is None:
        raise InputError("pif-profile needs a drift --d")
    d_beta = parse_vector(args.d)
    if d_beta.size != family.k:
        raise InputError(f"--d has length {d_beta.size}, expected {family.k}")
    hyp = parse_hypothesis(args.hypothesis, family.k) if args.hypothesis else None
    if hyp is None:
        # test the full regression coefficient block by default
        hyp = LinearHypothesis(np.eye(family.k), np.zeros(family.k))
    d_full = np.zeros(family.p)
    d_full[: family.k] = d_beta
    direction = "all" if args.direction == "all" else int(args.direction) - 1
    grid = default_grid(family, theta0)
    rows = []
    for tau in taus:
        profile = pif_profile(family, theta0, tau, d_full, direction=direction,
                              alpha=args.alpha, hyp=hyp, grid=grid)
        rows.extend([f"{t:.10g}", tau, f"{v:.12g}"]
                    for t, v in zip(profile.grid, profile.values))
    write_csv(args.out, ["t", "tau", "value"], rows)
    return EXIT_OK


def cmd_mc(args, parser):
    args = apply_config_file(args, parser)
    design = build_design(args.design, n=args.n)
    family = build_family(args.family, design)
    theta0 = parse_vector(args.theta0)
    if theta0.size != family.p:
        raise InputError(f"--theta0 has length {theta0.size}, expected {family.p}")
    config = McConfig(
        scenario=args.scenario,
        replications=args.replications,
        n=args.n,
        seed=args.seed,
        tau_grid=parse_taus(args.tau),
        theta0=tuple(theta0),
        alpha=args.alpha,
        theta_star=tuple(parse_vector(args.theta_star)) if args.theta_star else None,
        d=tuple(parse_vector(args.d)) if args.d else None,
        epsilon=args.epsilon,
        contamination_point=args.contamination_point,
    )
    hyp = parse_hypothesis(args.hypothesis, family.k) if args.hypothesis else None
    report = run_mc(config, family, hyp)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(report.to_csv())
    if args.json_out:
        with open(args.json_out, "w", encoding="utf-8") as fh:
            fh.write(report.to_json())
            fh.write("\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_common(sub):
    sub.add_argument("--config", help="key = value config file; flags override it")
    sub.add_argument("--alpha", type=float, default=0.05)
    sub.add_argument("--tau", default=",".join(str(t) for t in DEFAULT_TAU_GRID),
                     help="comma-separated tau grid")
    sub.add_argument("--out", required=True, help="output path")


def make_parser():
    parser = argparse.ArgumentParser(
        prog="dpdwald",
        description="Robust Wald-type tests based on minimum density power "
                    "divergence estimation",
    )
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("fit", help="fit the MDPDE over a tau grid")
    p.add_argument("--data", required=True, help="CSV with header y,x1,...,xk")
    p.add_argument("--family", required=True, choices=["normal", "poisson"])
    _add_common(p)
    p.set_defaults(func=cmd_fit)

    p = subs.add_parser("test", help="Wald-type test per tau")
    p.add_argument("--data", required=True)
    p.add_argument("--family", required=True, choices=["normal", "poisson"])
    p.add_argument("--null", help="simple null theta0 as comma-separated values")
    p.add_argument("--hypothesis", help="'h=J' or 'L-rows:l0' composite restriction")
    p.add_argument("--fit", help="reuse estimates from a fit JSON file")
    _add_common(p)
    p.set_defaults(func=cmd_test)

    p = subs.add_parser("power-table", help="regenerate the contiguous-power tables")
    p.add_argument("--table", type=int, required=True, choices=[1, 2])
    p.add_argument("--n", type=int, default=50)
    _add_common(p)
    p.set_defaults(func=cmd_power_table)

    for name, func in (("if-profile", cmd_if_profile),
                       ("pif-profile", cmd_pif_profile)):
        p = subs.add_parser(name, help=f"{name} over a contamination grid")
        p.add_argument("--family", required=True, choices=["normal", "poisson"])
        p.add_argument("--design", required=True,
                       help="design-1..design-4 or a CSV path")
        p.add_argument("--n", type=int, default=50)
        p.add_argument("--beta0", help="null regression coefficients (default all 1)")
        p.add_argument("--phi0", type=float, default=1.0)
        p.add_argument("--direction", default="all",
                       help="'all' or a 1-based observation index")
        p.add_argument("--hypothesis", help="composite restriction (optional)")
        if name == "pif-profile":
            p.add_argument("--d", help="contiguous drift in the coefficients")
        _add_common(p)
        p.set_defaults(func=func)

    p = subs.add_parser("mc", help="seeded Monte Carlo experiment")
    p.add_argument("--scenario", required=True,
                   choices=["null", "fixed-alt", "contiguous",
                            "contaminated-level", "contaminated-power"])
    p.add_argument("--family", required=True, choices=["normal", "poisson"])
    p.add_argument("--design", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--replications", type=int, default=2000)
    p.add_argument("--seed", type=int, default=20230815)
    p.add_argument("--theta0", required=True)
    p.add_argument("--theta-star", dest="theta_star")
    p.add_argument("--d")
    p.add_argument("--epsilon", type=float, default=0.0)
    p.add_argument("--contamination-point", dest="contamination_point", type=float)
    p.add_argument("--hypothesis")
    p.add_argument("--json-out", dest="json_out")
    _add_common(p)
    p.set_defaults(func=cmd_mc)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except DpdError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
