"""Named verification checks over the shipped models and specs.

Each check builds its own fixtures, runs deterministically for a given seed,
and returns a JSON-ready report: fitted constants, measured slopes, the
tolerances applied, and a pass flag.  The CLI ``verify-all`` verb and the
acceptance suite both run through this registry, so a green suite and a
green report mean the same thing.

Reports are reproducible byte for byte: anything that varies between runs
of the same configuration (wall-clock timing) lives under the ``volatile``
key, which :func:`canonical_bytes` strips before serialization.
"""

from __future__ import annotations

import json
import math
import time

import numpy as np

from . import euclid, liegroup, parametrix, symbolcore, transfer

SPEC_M2 = symbolcore.EllipticOperatorSpec(d=1, m=2, coeffs={(1, 1): -1.0})
SPEC_M4 = symbolcore.EllipticOperatorSpec(d=1, m=4, coeffs={(1, 1, 1, 1): 1.0})
SPEC_BAD = symbolcore.EllipticOperatorSpec(d=1, m=2, coeffs={(1, 1): 1.0})
SPEC_HEIS = symbolcore.EllipticOperatorSpec(
    d=3, m=2, coeffs={(1, 1): -1.0, (2, 2): -1.0, (3, 3): -1.0}
)

# t nodes for the Heisenberg expansion: five-point residual stencils at the
# endpoints of the tested window plus the node used by the defect check
HEIS_T_FOCUS = (0.05, 0.2)
HEIS_DEFECT_S = 0.05


def _tol(overrides, name, default):
    if overrides and name in overrides:
        return float(overrides[name])
    return default


def _grid1(n, length):
    return euclid.LatticeGrid(1, n, length / n)


def _closed_form_heat(grid, t):
    x = grid.axis()
    return np.exp(-(x**2) / (4 * t)) / math.sqrt(4 * math.pi * t)


def check_euclid_exactness(seed=0, tol=None):
    """Synthesized m=2 kernel against (4 pi t)^{-1/2} e^{-x^2/4t}."""
    rel_tol = _tol(tol, "rel_linf", 1e-6)
    grid = _grid1(256, 16.0)
    start = time.perf_counter()
    errs = {}
    for t in (0.25, 0.5, 1.0):
        k = euclid.synthesize_kernel(SPEC_M2, t, grid)[0]
        exact = _closed_form_heat(grid, t)
        errs[str(t)] = float(
            np.max(np.abs(k.values - exact)) / np.max(np.abs(exact))
        )
    runtime = time.perf_counter() - start
    return {
        "constants": {"rel_linf": errs},
        "tolerances": {"rel_linf": rel_tol, "runtime_s": 1.0},
        "passed": max(errs.values()) <= rel_tol and runtime < 1.0,
        "grid": {"n": grid.n, "spacing": grid.spacing},
        "volatile": {"runtime_s": runtime},
    }


def check_semigroup_identity(seed=0, tol=None):
    """||K_s * K_t - K_{s+t}||_1 at s = t = 0.25 for m = 2 and m = 4."""
    tol2 = _tol(tol, "defect_m2", 1e-6)
    tol4 = _tol(tol, "defect_m4", 1e-4)
    defects = {}
    for spec, key in ((SPEC_M2, "m2"), (SPEC_M4, "m4")):
        grid = _grid1(512, 32.0)
        ks = euclid.synthesize_kernel(spec, 0.25, grid)[0]
        kst = euclid.synthesize_kernel(spec, 0.5, grid)[0]
        conv = euclid.convolve(ks, ks)
        diff = euclid.KernelField(grid, 0.5, conv.values - kst.values)
        defects[key] = diff.l1()
    return {
        "constants": {"defect": defects},
        "tolerances": {"defect_m2": tol2, "defect_m4": tol4},
        "passed": defects["m2"] <= tol2 and defects["m4"] <= tol4,
        "grid": {"n": 512, "spacing": 32.0 / 512},
    }


def check_gaussian_envelope(seed=0, tol=None):
    """Fitted decay constant b: 0.25 for m=2; 10%-stable across t for m=4."""
    b_tol = _tol(tol, "b_m2_abs", 0.02)
    stab_tol = _tol(tol, "b_m4_rel", 0.10)
    grid = _grid1(256, 16.0)
    k2 = euclid.synthesize_kernel(SPEC_M2, 1.0, grid)[0]
    fit2 = euclid.fit_gaussian_envelope(k2, 2, 1.0)
    b4 = {}
    for t in (0.5, 1.0):
        k4 = euclid.synthesize_kernel(SPEC_M4, t, grid)[0]
        b4[str(t)] = euclid.fit_gaussian_envelope(k4, 4, t).b
    spread = abs(b4["0.5"] - b4["1.0"]) / max(b4.values())
    return {
        "constants": {"b_m2": fit2.b, "b_m4": b4, "b_m4_spread": spread},
        "tolerances": {"b_m2_abs": b_tol, "b_m4_rel": stab_tol},
        "passed": abs(fit2.b - 0.25) <= b_tol and spread <= stab_tol,
        "grid": {"n": grid.n, "spacing": grid.spacing},
    }


def check_derivative_slopes_euclid(seed=0, tol=None):
    """log-log slope of ||d^a K_t||_inf vs t: -(d+|a|)/m, |a| <= 2."""
    slope_tol = _tol(tol, "slope_abs", 0.15)
    ts = np.array([0.25, 0.5, 1.0])
    slopes = {}
    worst = 0.0
    for spec, key in ((SPEC_M2, "m2"), (SPEC_M4, "m4")):
        grid = _grid1(512, 32.0)
        for alpha in ((), (1,), (1, 1)):
            sups = []
            for t in ts:
                fields = euclid.synthesize_kernel(
                    spec, t, grid, derivs=(alpha,) if alpha else ()
                )
                sups.append(fields[-1].linf())
            slope = float(np.polyfit(np.log(ts), np.log(sups), 1)[0])
            want = -(1 + len(alpha)) / spec.m
            slopes[f"{key}_a{len(alpha)}"] = {"slope": slope, "want": want}
            worst = max(worst, abs(slope - want))
    return {
        "constants": {"slopes": slopes, "worst_deviation": worst},
        "tolerances": {"slope_abs": slope_tol},
        "passed": worst <= slope_tol,
        "grid": {"n": 512, "spacing": 32.0 / 512},
    }


def check_derivative_slopes_heisenberg(seed=0, tol=None):
    """Heisenberg m=2 derivative sup slopes: -(3+|a|)/2 within 0.15."""
    slope_tol = _tol(tol, "slope_abs", 0.15)
    model = liegroup.builtin_model("heisenberg3")
    grid = euclid.LatticeGrid(3, 32, 2 * model.chart_radius / 32)
    t_lo, t_hi = 0.05, 0.2
    exp = parametrix.ParametrixExpansion(
        model, SPEC_HEIS, grid, n_max=1, t_list=[t_lo, t_hi],
        quad_points=3, fine_n=32,
    )
    exp.build()
    slopes = {}
    worst = 0.0
    for alpha in ((), (1,), (1, 1)):
        s_lo = exp.derivative_sup(t_lo, alpha)
        s_hi = exp.derivative_sup(t_hi, alpha)
        slope = math.log(s_hi / s_lo) / math.log(t_hi / t_lo)
        want = -(3 + len(alpha)) / 2.0
        slopes[f"a{len(alpha)}"] = {"slope": slope, "want": want}
        worst = max(worst, abs(slope - want))
    return {
        "constants": {"slopes": slopes, "worst_deviation": worst},
        "tolerances": {"slope_abs": slope_tol},
        "passed": worst <= slope_tol,
        "grid": {"n": 32, "spacing": grid.spacing},
    }


def check_parametrix_abelian(seed=0, tol=None):
    """Parametrix partial sums against the closed-form abelian kernel."""
    rel_tol = _tol(tol, "rel_l1", 1e-2)
    decay_tol = _tol(tol, "ledger_ratio", 0.5)
    model = liegroup.builtin_model("euclid", d=1)
    grid = euclid.LatticeGrid(1, 256, 2 * model.chart_radius / 256)
    exp = parametrix.ParametrixExpansion(
        model, SPEC_M2, grid, n_max=4, t_max=0.25, t_nodes=6
    )
    exp.build()
    errs = {}
    for t in (0.1, 0.25):
        k = exp.kernel(t)
        exact = _closed_form_heat(grid, t)
        errs[str(t)] = float(
            np.sum(np.abs(k.values - exact)) / np.sum(np.abs(exact))
        )
    by_n = {}
    for n, t, l1, linf, env in exp.ledger_rows():
        by_n[n] = max(by_n.get(n, 0.0), l1)
    orders = sorted(by_n)
    ratios = [by_n[b] / by_n[a] for a, b in zip(orders, orders[1:])]
    return {
        "constants": {
            "rel_l1": errs,
            "ledger_max_l1": {str(n): by_n[n] for n in orders},
            "ledger_ratios": ratios,
        },
        "tolerances": {"rel_l1": rel_tol, "ledger_ratio": decay_tol},
        "passed": max(errs.values()) <= rel_tol
        and all(r < decay_tol for r in ratios),
        "grid": {"n": grid.n, "spacing": grid.spacing},
    }


def heisenberg_expansion(n_max=2, quad_points=4, fine_n=64):
    """The desk-scale Heisenberg expansion used by the pipeline check."""
    model = liegroup.builtin_model("heisenberg3")
    grid = euclid.LatticeGrid(3, 32, 2 * model.chart_radius / 32)
    t_nodes = sorted(
        set(
            t
            for focus in HEIS_T_FOCUS
            for t in parametrix.residual_stencil_times(focus)
        )
        | {2 * HEIS_DEFECT_S}
    )
    exp = parametrix.ParametrixExpansion(
        model, SPEC_HEIS, grid, n_max=n_max, t_list=t_nodes,
        quad_points=quad_points, fine_n=fine_n,
    )
    exp.build()
    return exp


def check_heisenberg_pipeline(seed=0, tol=None):
    """Heat residual and semigroup defect of the Heisenberg expansion."""
    res_tol = _tol(tol, "residual", 1e-2)
    def_tol = _tol(tol, "defect", 1e-2)
    start = time.perf_counter()
    exp = heisenberg_expansion()
    residuals = {str(t): exp.heat_residual(t) for t in HEIS_T_FOCUS}
    s = HEIS_DEFECT_S
    defect = exp.semigroup_defect(s, s)
    runtime = time.perf_counter() - start
    return {
        "constants": {"residuals": residuals, "defect": defect},
        "tolerances": {"residual": res_tol, "defect": def_tol,
                       "runtime_s": 300.0},
        "passed": max(residuals.values()) <= res_tol
        and defect <= def_tol
        and runtime < 300.0,
        "grid": {"n": 32, "spacing": exp.grid.spacing},
        "volatile": {"runtime_s": runtime},
    }


def check_resolvent(seed=0, tol=None):
    """Resolvent kernel at lambda=5 against (1/2) l^{-1/2} e^{-sqrt(l)|x|}."""
    def_tol = _tol(tol, "defect", 1e-3)
    rel_tol = _tol(tol, "rel_l1", 1e-2)
    lam = 5.0
    grid = _grid1(512, 32.0)
    kernel, defect = parametrix.resolvent_kernel(SPEC_M2, lam, grid)
    x = grid.axis()
    exact = 0.5 * lam**-0.5 * np.exp(-math.sqrt(lam) * np.abs(x))
    rel = float(np.sum(np.abs(kernel.values - exact)) / np.sum(np.abs(exact)))
    return {
        "constants": {"defect": defect, "rel_l1": rel, "lambda": lam},
        "tolerances": {"defect": def_tol, "rel_l1": rel_tol},
        "passed": defect <= def_tol and rel <= rel_tol,
        "grid": {"n": grid.n, "spacing": grid.spacing},
    }


def check_garding(seed=0, tol=None):
    """Garding constants: exact for -d^2, positive for d^4, divergent for +d^2."""
    lam2_tol = _tol(tol, "lambda_m2", 0.999)
    nu2_tol = _tol(tol, "nu_m2", 1e-6)
    lam4_tol = _tol(tol, "lambda_m4", 0.99)
    rep = transfer.TranslationHandle(512, 24.0 / 512)
    res2 = transfer.garding_check(SPEC_M2, rep, trials=200, seed=seed)
    res4 = transfer.garding_check(SPEC_M4, rep, trials=200, seed=seed)
    cap = 0.25 * math.pi / rep.spacing
    low = transfer.garding_check(
        SPEC_BAD, rep, trials=50, seed=seed, freq_cap=cap
    )
    high = transfer.garding_check(
        SPEC_BAD, rep, trials=50, seed=seed, freq_cap=2 * cap
    )
    negative_ok = (
        low.lambda_hat == 0.0 and high.nu_hat > 2 * low.nu_hat > 0.0
    )
    return {
        "constants": {
            "lambda_m2": res2.lambda_hat,
            "nu_m2": res2.nu_hat,
            "lambda_m4": res4.lambda_hat,
            "mu_m4": res4.mu,
            "nu_bad_capF": low.nu_hat,
            "nu_bad_cap2F": high.nu_hat,
        },
        "tolerances": {
            "lambda_m2": lam2_tol, "nu_m2": nu2_tol, "lambda_m4": lam4_tol,
        },
        "passed": res2.lambda_hat >= lam2_tol
        and res2.nu_hat <= nu2_tol
        and res4.lambda_hat >= lam4_tol * res4.mu
        and negative_ok,
        "seed": seed,
        "trials": 200,
    }


def check_factorial_growth(seed=0, tol=None):
    """Factorial seminorm envelope and analytic-radius scaling, m=2."""
    res_tol = _tol(tol, "envelope_residual", 0.5)
    slope_tol = _tol(tol, "radius_slope_abs", 0.15)
    model = liegroup.builtin_model("euclid", d=1)
    grid = euclid.LatticeGrid(1, 256, 2 * model.chart_radius / 256)
    rep = transfer.TranslationHandle(grid.n, grid.spacing)
    rep.measure_continuity(seed=seed)
    om = np.abs(rep.freqs)
    hat = np.where(om >= 0.75, np.maximum(om, 0.75) ** -0.75, 0.0)
    xi = np.fft.ifft(hat)
    h = euclid.symbol_on_dual(SPEC_M2, grid)

    def kernel_at(t):
        vals = euclid.inverse_transform(grid, np.exp(-t * h))
        return parametrix.GroupField(model, grid, t, vals)

    t_list = [0.1, 0.5, 1.0]
    prof = transfer.growth_profile(
        kernel_at, rep, xi, t_list, n_max=6, m=2, threshold=0.0
    )
    radii = transfer.analytic_radius(prof)
    slope = math.log(radii[t_list[-1]] / radii[t_list[0]]) / math.log(
        t_list[-1] / t_list[0]
    )
    return {
        "constants": {
            "a": prof.a,
            "b": prof.b,
            "envelope_residual": prof.max_residual,
            "radius_slope": slope,
            "radii": {str(t): radii[t] for t in t_list},
        },
        "tolerances": {
            "envelope_residual": res_tol, "radius_slope_abs": slope_tol,
        },
        "passed": prof.max_residual <= res_tol
        and abs(slope - 0.5) <= slope_tol,
        "seed": seed,
        "grid": {"n": grid.n, "spacing": grid.spacing},
    }


def check_representation_independence(seed=0, tol=None):
    """One growth rate from ||K_t||_1 bounds the form on three handles."""
    slack = _tol(tol, "form_slack", 1e-3)
    model = liegroup.builtin_model("heisenberg3")
    grid = euclid.LatticeGrid(3, 32, 2 * model.chart_radius / 32)
    ts = [0.05, 0.1, 0.2]
    exp = parametrix.ParametrixExpansion(
        model, SPEC_HEIS, grid, n_max=1, t_list=ts, quad_points=3, fine_n=32
    )
    exp.build()
    l1s = [exp.kernel(t).l1() for t in ts]
    omega_hat = transfer.fit_growth_rate(ts, l1s)
    handles = {
        "translation": transfer.TranslationHandle(256, 12.0 / 256, ngen=3),
        "left_regular": transfer.LeftRegularHandle(
            model, 16, 2 * model.chart_radius / 16
        ),
        "schrodinger": transfer.SchrodingerHandle(128, 16.0 / 128),
    }
    infima = {
        name: transfer.form_infimum(SPEC_HEIS, rep, trials=25, seed=seed)
        for name, rep in handles.items()
    }
    passed = all(v >= -omega_hat - slack for v in infima.values())
    return {
        "constants": {
            "omega_hat": omega_hat,
            "kernel_l1": {str(t): v for t, v in zip(ts, l1s)},
            "form_infima": infima,
        },
        "tolerances": {"form_slack": slack},
        "passed": passed,
        "seed": seed,
        "trials": 25,
    }


REGISTRY = {
    "euclid_exactness": ("euclid", check_euclid_exactness),
    "semigroup_identity": ("euclid", check_semigroup_identity),
    "gaussian_envelope": ("euclid", check_gaussian_envelope),
    "derivative_slopes_euclid": ("euclid", check_derivative_slopes_euclid),
    "derivative_slopes_heisenberg": (
        "parametrix", check_derivative_slopes_heisenberg,
    ),
    "parametrix_abelian": ("parametrix", check_parametrix_abelian),
    "heisenberg_pipeline": ("parametrix", check_heisenberg_pipeline),
    "resolvent": ("parametrix", check_resolvent),
    "garding": ("transfer", check_garding),
    "factorial_growth": ("transfer", check_factorial_growth),
    "representation_independence": (
        "transfer", check_representation_independence,
    ),
}


def check_names():
    return list(REGISTRY)


def run_check(name, seed=0, tol=None):
    """Run one named check; returns its report dict."""
    if name not in REGISTRY:
        raise KeyError(
            f"unknown check {name!r}; valid: {', '.join(REGISTRY)}"
        )
    module, func = REGISTRY[name]
    start = time.perf_counter()
    report = func(seed=seed, tol=tol)
    runtime = time.perf_counter() - start
    report["name"] = name
    report["module"] = module
    report.setdefault("seed", seed)
    volatile = report.setdefault("volatile", {})
    volatile.setdefault("runtime_s", runtime)
    return report


def run_all(seed=0, only=None, tol=None):
    """Run every registered check (or the ``only`` modules), consolidated.

    Checks outside the ``only`` selection are reported with status
    "skipped" rather than dropped, so the report shape is stable.
    """
    checks = {}
    all_pass = True
    start = time.perf_counter()
    for name, (module, _) in REGISTRY.items():
        if only and module not in only:
            checks[name] = {
                "name": name, "module": module, "status": "skipped",
            }
            continue
        report = run_check(name, seed=seed, tol=tol)
        report["status"] = "passed" if report["passed"] else "failed"
        checks[name] = report
        all_pass = all_pass and report["passed"]
    total = time.perf_counter() - start
    return {
        "seed": seed,
        "only": sorted(only) if only else None,
        "passed": all_pass,
        "checks": checks,
        "volatile": {"timestamp": time.time(), "runtime_s": total},
    }


def _strip_volatile(obj):
    if isinstance(obj, dict):
        return {
            k: _strip_volatile(v) for k, v in obj.items() if k != "volatile"
        }
    if isinstance(obj, list):
        return [_strip_volatile(v) for v in obj]
    return obj


def canonical_bytes(report):
    """Deterministic serialization: volatile fields out, keys sorted."""
    return json.dumps(
        _strip_volatile(report), sort_keys=True, indent=2
    ).encode()


def write_report(report, path):
    """Full report (volatile fields included) to a JSON file."""
    with open(path, "w") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
        fh.write("\n")


def summary_lines(report):
    """Human-readable one-line-per-check table."""
    lines = []
    for name, chk in report["checks"].items():
        status = chk.get("status", "passed" if chk.get("passed") else "failed")
        rt = chk.get("volatile", {}).get("runtime_s")
        suffix = f"  ({rt:.1f}s)" if rt is not None else ""
        lines.append(f"{name:32s} {status}{suffix}")
    lines.append(
        f"{'TOTAL':32s} "
        + ("passed" if report["passed"] else "FAILED")
        + f"  ({report['volatile']['runtime_s']:.1f}s)"
    )
    return lines
