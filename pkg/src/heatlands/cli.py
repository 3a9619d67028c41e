"""Batch front-end: symbol certification, kernel synthesis, verification.

Verbs:

* ``symbol``      -- certify strong ellipticity of a spec file, write the
  constants report.
* ``kernel``      -- synthesize kernels (Fourier on the abelian model,
  parametrix on group models), write data files, run the requested checks.
* ``verify-all``  -- run the named verification registry, write the
  consolidated report.

Exit codes: 0 pass, 1 verification failure, 2 usage/parse error,
3 resource limit.  All flags can also be set in a JSON config file
(``--config``); command-line flags win.  ``HEATLANDS_THREADS`` caps the
convolution backend's thread pool; ``--seed`` pins every random draw, and
identical configurations produce byte-identical reports up to the
``volatile`` section (timing, timestamp).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import euclid, liegroup, parametrix, symbolcore, verify
from .errors import NotStronglyElliptic

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_USAGE = 2
EXIT_RESOURCE = 3

EUCLID_CHECKS = ("semigroup", "gaussfit")
GROUP_CHECKS = ("residual", "semigroup")

DEFAULTS = {
    "group": "euclid",
    "out": ".",
    "seed": 0,
    "only": [],
    "tol": {},
    "checks": None,
    "grid_n": None,
    "spacing": None,
    "t_grid": [0.25, 0.5, 1.0],
}


def _parse_tol(items):
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ValueError(f"--tol expects NAME=VALUE, got {item!r}")
        name, value = item.split("=", 1)
        out[name] = float(value)
    return out


def load_config(args):
    """Merge defaults, config file, and command-line flags (flags win)."""
    cfg = dict(DEFAULTS)
    if args.config:
        with open(args.config) as fh:
            cfg.update(json.load(fh))
    for key in ("group", "spec", "out", "seed"):
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    if getattr(args, "only", None):
        cfg["only"] = args.only
    cfg["tol"] = {**cfg.get("tol", {}), **_parse_tol(getattr(args, "tol", None))}
    if getattr(args, "checks", None):
        cfg["checks"] = args.checks.split(",")
    cfg["seed"] = int(cfg["seed"])
    return cfg


def _load_spec(path):
    with open(path) as fh:
        return symbolcore.EllipticOperatorSpec.from_json(fh.read())


def _report_path(cfg, name):
    os.makedirs(cfg["out"], exist_ok=True)
    return os.path.join(cfg["out"], name)


def cmd_symbol(cfg):
    spec = _load_spec(cfg["spec"])
    try:
        rep = symbolcore.certify_ellipticity(spec)
        doc = {
            "is_strongly_elliptic": True,
            "mu": rep.mu,
            "lambda": rep.lam,
            "omega": rep.omega,
            "witness_xi": list(map(float, rep.witness_xi)),
            "principal_nonvanishing": rep.principal_nonvanishing,
        }
        status = EXIT_PASS
    except NotStronglyElliptic as exc:
        doc = {
            "is_strongly_elliptic": False,
            "witness_xi": list(map(float, exc.witness)),
            "principal_minimum": exc.minimum,
        }
        status = EXIT_FAIL
    with open(_report_path(cfg, "ellipticity.json"), "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print("strongly elliptic" if status == EXIT_PASS else "NOT strongly elliptic")
    return status


def _euclid_kernel(cfg, spec, tol):
    report = symbolcore.certify_ellipticity(spec)
    if cfg["grid_n"] and cfg["spacing"]:
        grid = euclid.LatticeGrid(spec.d, int(cfg["grid_n"]), float(cfg["spacing"]))
    else:
        grid = euclid.grid_for(spec, report=report)
    checks = cfg["checks"] or list(EUCLID_CHECKS)
    results = {}
    for i, t in enumerate(cfg["t_grid"]):
        k = euclid.synthesize_kernel(spec, t, grid, report=report)[0]
        euclid.field_to_binary(k, _report_path(cfg, f"kernel_{i}.bin"))
    if unknown := set(checks) - set(EUCLID_CHECKS):
        print(
            f"unknown checks {sorted(unknown)}; valid: {list(EUCLID_CHECKS)}",
            file=sys.stderr,
        )
        return EXIT_USAGE, {}
    t0 = cfg["t_grid"][0]
    if "semigroup" in checks:
        ks = euclid.synthesize_kernel(spec, t0, grid, report=report)[0]
        k2 = euclid.synthesize_kernel(spec, 2 * t0, grid, report=report)[0]
        conv = euclid.convolve(ks, ks)
        defect = euclid.KernelField(grid, 2 * t0, conv.values - k2.values).l1()
        bound = tol.get("semigroup", 1e-6)
        results["semigroup"] = {
            "defect": defect, "tolerance": bound, "passed": defect <= bound,
        }
    if "gaussfit" in checks:
        t_fit = cfg["t_grid"][-1]
        k = euclid.synthesize_kernel(spec, t_fit, grid, report=report)[0]
        fit = euclid.fit_gaussian_envelope(k, spec.m, t_fit)
        bound = tol.get("gaussfit", 0.5)
        results["gaussfit"] = {
            "a": fit.a, "b": fit.b, "residual": fit.residual,
            "tolerance": bound, "passed": fit.residual <= bound,
        }
    return EXIT_PASS, {"grid": {"n": grid.n, "spacing": grid.spacing},
                       "checks": results}


def _group_kernel(cfg, spec, tol):
    model = liegroup.builtin_model(cfg["group"], d=spec.d)
    n = int(cfg["grid_n"] or 32)
    spacing = float(cfg["spacing"] or 2 * model.chart_radius / n)
    grid = euclid.LatticeGrid(spec.d, n, spacing)
    checks = cfg["checks"] or list(GROUP_CHECKS)
    if unknown := set(checks) - set(GROUP_CHECKS):
        print(
            f"unknown checks {sorted(unknown)}; valid: {list(GROUP_CHECKS)}",
            file=sys.stderr,
        )
        return EXIT_USAGE, {}
    t_focus = min(cfg["t_grid"])
    t_nodes = sorted(
        set(parametrix.residual_stencil_times(t_focus)) | {2 * t_focus}
    )
    exp = parametrix.ParametrixExpansion(
        model, spec, grid, n_max=1, t_list=t_nodes, quad_points=3, fine_n=32
    )
    exp.build()
    for i, t in enumerate(t_nodes):
        field = exp.kernel(t)
        kf = euclid.KernelField(grid, t, field.values)
        euclid.field_to_binary(kf, _report_path(cfg, f"kernel_{i}.bin"))
    parametrix.ledger_to_csv(exp.ledger_rows(), _report_path(cfg, "ledger.csv"))
    results = {}
    if "residual" in checks:
        resid = exp.heat_residual(t_focus)
        bound = tol.get("residual", 5e-2)
        results["residual"] = {
            "value": resid, "t": t_focus, "tolerance": bound,
            "passed": resid <= bound,
        }
    if "semigroup" in checks:
        defect = exp.semigroup_defect(t_focus, t_focus)
        bound = tol.get("semigroup", 5e-2)
        results["semigroup"] = {
            "defect": defect, "s": t_focus, "t": t_focus,
            "tolerance": bound, "passed": defect <= bound,
        }
    return EXIT_PASS, {"grid": {"n": grid.n, "spacing": spacing},
                       "t_nodes": t_nodes, "checks": results}


def cmd_kernel(cfg):
    spec = _load_spec(cfg["spec"])
    tol = cfg["tol"]
    try:
        if cfg["group"] == "euclid":
            status, doc = _euclid_kernel(cfg, spec, tol)
        else:
            status, doc = _group_kernel(cfg, spec, tol)
    except MemoryError as exc:
        print(f"resource limit: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    if status != EXIT_PASS:
        return status
    doc["group"] = cfg["group"]
    doc["seed"] = cfg["seed"]
    with open(_report_path(cfg, "kernel_report.json"), "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")
    failed = [k for k, v in doc["checks"].items() if not v["passed"]]
    for name, chk in doc["checks"].items():
        print(f"{name}: {'passed' if chk['passed'] else 'FAILED'}")
    return EXIT_FAIL if failed else EXIT_PASS


def cmd_verify_all(cfg):
    try:
        report = verify.run_all(
            seed=cfg["seed"], only=cfg["only"] or None, tol=cfg["tol"]
        )
    except MemoryError as exc:
        print(f"resource limit: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    verify.write_report(report, _report_path(cfg, "verify_report.json"))
    for line in verify.summary_lines(report):
        print(line)
    return EXIT_PASS if report["passed"] else EXIT_FAIL


def build_parser():
    parser = argparse.ArgumentParser(
        prog="heatlands",
        description="semigroup kernels of strongly elliptic operators",
    )
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in ("symbol", "kernel", "verify-all"):
        p = sub.add_parser(verb)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--group", help="group model name (default euclid)")
        p.add_argument("--spec", help="operator spec JSON file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="RNG seed")
        p.add_argument(
            "--only", action="append",
            help="restrict verify-all to a module (repeatable)",
        )
        p.add_argument(
            "--tol", action="append", metavar="NAME=VALUE",
            help="tolerance override (repeatable)",
        )
        if verb == "kernel":
            p.add_argument("--checks", help="comma-separated check names")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.verb in ("symbol", "kernel") and not cfg.get("spec"):
        print("a spec file is required (--spec or config)", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.verb == "symbol":
            return cmd_symbol(cfg)
        if args.verb == "kernel":
            return cmd_kernel(cfg)
        return cmd_verify_all(cfg)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
