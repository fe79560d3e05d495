"""Command-line entry point.

Subcommands: tower, diagonal, gaussian, boundary, verify.  Each run reads
one YAML config (see config.py for the schema), writes a reproducibility
bundle (summary.json, per-artifact CSVs, resolved config copy) into the
output directory, and exits with a category code on failure: 2 input,
3 model, 4 numerical, 5 resource.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from .boundary import (
    ProductCylinderWeights,
    boundary_feature_gram,
    build_doob,
    cylinder_measure,
    gauge_from_tower,
    intertwining_check,
    normalization_commutes,
    sample_path,
)
from .config import Config, load_config, parse_config
from .diagonal import (
    blowup_detect,
    diagonal_trace,
    layer_cake_check,
    lyapunov_verify,
)
from .errors import EXIT_NUMERICAL, InputError, KernelTowerError
from .gaussian import (
    TowerSampler,
    empirical_covariance,
    export_batch_csv,
    limit_fields,
    martingale_checks,
    sample_covariance,
)
from .kernels import apply_L, gram, psd_check, set_default_workers
from .models import FiniteStateModel, Model, WordTreeModel, build_model
from .points import orbit_closure, point_label
from .reports import Bundle, RunReport
from .tower import (
    build_tower,
    estimate_K_infinity,
    invariance_residual,
    level_via_words,
    subinvariance_check,
)
from .verify import VerifyContext, run_checks


def _resolve_base(cfg: Config, model: Model):
    if cfg.base_points:
        base = model.points(cfg.base_points)
    elif isinstance(model, FiniteStateModel):
        base = model.all_states()
    else:
        raise InputError("config base_points: required for this model")
    if cfg.closure_depth > 0:
        base = orbit_closure(model.branch, base, cfg.closure_depth, cfg.pair_cap)
    return base


def _resolve_certificate(cfg: Config, model: Model, base):
    """Build and verify the configured Lyapunov certificate, or report why not."""
    spec = cfg.certificate
    if spec in ("none", None):
        return None, "disabled"
    if spec == "auto":
        if isinstance(model, WordTreeModel):
            r_fn, C, beta = model.defect_lyapunov()
        elif isinstance(model, FiniteStateModel) and model.lyapunov:
            values = [float(x) for x in model.lyapunov["r"]]
            r_fn = lambda s: values[s]
            C, beta = float(model.lyapunov["C"]), float(model.lyapunov["beta"])
        else:
            return None, "no certificate available for this model"
    else:
        C, beta = float(spec["C"]), float(spec["beta"])
        r_spec = spec["r"]
        if not isinstance(r_spec, dict) or "kind" not in r_spec:
            raise InputError("config certificate.r: mapping with a 'kind' key required")
        if r_spec["kind"] == "length-decay":
            bb = float(r_spec["base"])
            r_fn = lambda s: bb ** len(s)
        elif r_spec["kind"] == "table":
            values = {model.point(k): float(v) for k, v in r_spec["values"].items()}
            r_fn = lambda s: values[s]
        else:
            raise InputError(f"config certificate.r.kind: unknown {r_spec['kind']!r}")
    if getattr(model, "has_oracle", False) and hasattr(model, "oracle_defect"):
        d0 = lambda s: model.oracle_defect(0, s, s)
    else:
        LK = apply_L(model.kernel, model.branch)
        d0 = lambda s: LK(s, s) - model.kernel(s, s)
    domain = orbit_closure(model.branch, base, min(cfg.horizon + 1, 8), cfg.pair_cap)
    outcome = lyapunov_verify(d0, model.branch, r_fn, C, beta, domain)
    if hasattr(outcome, "bound"):
        return outcome, "verified"
    return None, f"refuted: {outcome}"


def cmd_tower(cfg: Config, outdir: Path, verbose: bool) -> int:
    t0 = time.perf_counter()
    model = build_model(cfg.model_kind, cfg.model_params)
    base = _resolve_base(cfg, model)
    bundle = Bundle(outdir, cfg.formats)
    results = {}

    sub_pts = orbit_closure(model.branch, base, min(cfg.horizon, 2), cfg.pair_cap)
    base_psd = psd_check(gram(model.kernel, sub_pts), cfg.tol)
    sub_defect = subinvariance_check(model.kernel, model.branch, sub_pts, cfg.tol)
    results["subinvariance"] = {
        "base_psd_min_eig": base_psd.min_eigenvalue,
        "defect_psd_min_eig": sub_defect.min_eigenvalue,
        "defect_psd": sub_defect.psd,
        "tolerance": cfg.tol,
        "points": len(sub_pts),
    }

    tower = build_tower(model.kernel, model.branch, base, cfg.horizon, cfg.tol, cfg.pair_cap)
    for n, lvl in enumerate(tower.levels):
        bundle.add_gram_csv(f"gram_level_{n:02d}.csv", tower.points, lvl)
    for n, D in enumerate(tower.defects):
        bundle.add_gram_csv(f"gram_defect_{n:02d}.csv", tower.points, D)
    results["tower"] = {
        "horizon": cfg.horizon,
        "telescoping_rel_residual": tower.telescoping_residual,
        "telescoping_tolerance": 1e-12,
        "defect_min_eigs": [r.min_eigenvalue for r in tower.defect_reports],
        "trace_increments": tower.trace_increments,
    }

    word_n = min(cfg.horizon, 8)
    worst_word = 0.0
    for n in range(word_n + 1):
        W = level_via_words(model.kernel, model.branch, base, n, cfg.pair_cap)
        worst_word = max(worst_word, float(np.max(np.abs(W.entries - tower.levels[n]))))
    results["word_expansion"] = {
        "levels_checked": word_n,
        "max_abs_residual": worst_word,
        "tolerance": 1e-12,
    }

    cert, cert_status = _resolve_certificate(cfg, model, base)
    est_base = orbit_closure(model.branch, base, 1, cfg.pair_cap)
    est = estimate_K_infinity(
        model.kernel, model.branch, est_base,
        tol=cfg.tol, trace_eps=cfg.trace_eps, max_levels=cfg.max_levels,
        ceiling=cfg.ceiling, certificate=cert, pair_cap=cfg.pair_cap,
    )
    bundle.add_gram_csv("gram_completion.csv", est.points, est.entries)
    bundle.add_gram_csv("completion_bounds.csv", est.points, est.bound)
    inv_res = invariance_residual(est, model.branch, base)
    results["completion"] = {
        "levels_used": est.levels_used,
        "converged_by_trace": est.converged,
        "bound_label": est.bound_label,
        "certificate": cert_status,
        "max_bound": float(np.max(est.bound)) if np.all(np.isfinite(est.bound)) else "inf",
        "invariance_residual": inv_res,
    }

    report = RunReport("tower", cfg.resolved(), results,
                       timings={"total_s": time.perf_counter() - t0})
    bundle.finish(report, cfg.echo_yaml())
    if verbose:
        print(f"tower: wrote {outdir} in {report.timings['total_s']:.2f}s", file=sys.stderr)
    print(report.summary_json(), end="")
    return 0


def cmd_diagonal(cfg: Config, outdir: Path, verbose: bool) -> int:
    t0 = time.perf_counter()
    model = build_model(cfg.model_kind, cfg.model_params)
    base = _resolve_base(cfg, model)
    bundle = Bundle(outdir, cfg.formats)
    results = {"traces": {}, "layer_cake": {}}

    rows = []
    verdicts = {}
    for s in base:
        trace = diagonal_trace(
            model.kernel, model.branch, s, cfg.horizon,
            trace_eps=cfg.trace_eps, ceiling=cfg.ceiling, cap=cfg.pair_cap,
        )
        label = point_label(s)
        verdicts[label] = trace.verdict
        results["traces"][label] = {"verdict": trace.verdict, "values": trace.values}
        for n, u in enumerate(trace.values):
            rows.append((label, n, u))
    bundle.add_csv("diagonal_traces.csv", ["point", "level", "u_n"], rows)

    worst_cake = 0.0
    for s in base:
        for n in range(min(cfg.horizon, 8) + 1):
            lc = layer_cake_check(model.kernel, model.branch, s, n, cfg.pair_cap)
            worst_cake = max(worst_cake, lc.residual / max(1.0, abs(lc.word_sum)))
    results["layer_cake"] = {"max_rel_residual": worst_cake, "tolerance": 1e-12}

    cert, cert_status = _resolve_certificate(cfg, model, base)
    results["certificate"] = {"status": cert_status}
    if cert is not None:
        results["certificate"].update({"C": cert.C, "beta": cert.beta,
                                       "domain_size": len(cert.domain)})
    elif any(v != "converging" for v in verdicts.values()):
        levels = list(range(1, min(cfg.horizon, 8) + 1))
        witness = blowup_detect(
            model.kernel, model.branch, base[0], lambda x: True,
            1.0, float(model.branch.m), levels, cfg.pair_cap,
        )
        results["blowup_witness"] = {
            "valid": witness.valid,
            "levels": witness.levels,
            "counts": witness.counts,
            "epsilon": witness.epsilon,
            "rho": witness.rho,
        }

    report = RunReport("diagonal", cfg.resolved(), results,
                       timings={"total_s": time.perf_counter() - t0})
    bundle.finish(report, cfg.echo_yaml())
    print(report.summary_json(), end="")
    return 0


def cmd_gaussian(cfg: Config, outdir: Path, verbose: bool) -> int:
    t0 = time.perf_counter()
    if cfg.seed is None:
        raise InputError("config seed: required for the gaussian subcommand")
    model = build_model(cfg.model_kind, cfg.model_params)
    base = _resolve_base(cfg, model)
    bundle = Bundle(outdir, cfg.formats)

    tower = build_tower(model.kernel, model.branch, base, cfg.horizon, cfg.tol, cfg.pair_cap)
    sampler = TowerSampler(tower, cfg.seed, cfg.tol)
    batch = sampler.sample(cfg.nsamples)

    cov, se = empirical_covariance(batch, batch.top_level)
    z_top = np.zeros_like(cov)
    mask = se > 0
    z_top[mask] = np.abs(cov - tower.levels[-1])[mask] / se[mask]
    mart = martingale_checks(batch, tower)
    fields = limit_fields(sampler, cfg.nsamples)
    covY, _ = sample_covariance(fields.Y)
    covD, _ = sample_covariance(fields.Z - fields.Y)

    bundle.add_gram_csv("empirical_covariance.csv", tower.points, cov)
    bundle.add_gram_csv("empirical_covariance_se.csv", tower.points, se)
    if cfg.gaussian.get("export_samples"):
        export_batch_csv(batch, Path(outdir) / "samples.csv")

    results = {
        "generator": "philox4x64-10",
        "seed": cfg.seed,
        "nsamples": cfg.nsamples,
        "top_level_max_z": float(np.max(z_top)),
        "martingale": {
            "max_mean_z": mart.max_mean_z,
            "max_cross_z": mart.max_cross_z,
            "max_qv_z": mart.max_qv_z,
            "threshold": mart.threshold,
            "passed": mart.passed,
        },
        "compression": {
            "covY_vs_K_max_abs": float(np.max(np.abs(covY - tower.levels[0]))),
            "covZmY_vs_defects_max_abs": float(
                np.max(np.abs(covD - (tower.levels[-1] - tower.levels[0])))
            ),
        },
    }
    report = RunReport("gaussian", cfg.resolved(), results,
                       timings={"total_s": time.perf_counter() - t0})
    bundle.finish(report, cfg.echo_yaml())
    print(report.summary_json(), end="")
    return 0


def cmd_boundary(cfg: Config, outdir: Path, verbose: bool) -> int:
    t0 = time.perf_counter()
    model = build_model(cfg.model_kind, cfg.model_params)
    base = _resolve_base(cfg, model)
    bundle = Bundle(outdir, cfg.formats)
    cyl_levels = cfg.boundary["cylinder_levels"]
    feat_levels = cfg.boundary["feature_levels"]

    gauge_info = {}
    if getattr(model, "has_oracle", False) and hasattr(model, "oracle_gauge"):
        gauge = model.oracle_gauge
        domain = orbit_closure(model.branch, base, max(cyl_levels, feat_levels), cfg.pair_cap)
        gauge_info["source"] = "closed-form"
    else:
        closure = orbit_closure(model.branch, base, 1, cfg.pair_cap)
        gtower = build_tower(model.kernel, model.branch, closure, cfg.horizon, cfg.tol, cfg.pair_cap)
        gauge, positive = gauge_from_tower(gtower)
        domain = positive
        gauge_info["source"] = f"tower diagonal at level {cfg.horizon}"
        cert, cert_status = _resolve_certificate(cfg, model, base)
        gauge_info["certificate"] = cert_status
        if cert is not None:
            cert_domain = set(cert.domain)
            tail = max(cert.bound(s, s, cfg.horizon) for s in positive if s in cert_domain)
            gauge_info["harmonicity_budget"] = tail
    chain = build_doob(gauge, model.branch, domain, cfg.tol)
    gauge_info["harmonicity_residual"] = chain.harmonicity_residual
    base = [s for s in base if chain.in_domain(s)]
    if not base:
        raise InputError("no base points inside the gauge-positive domain")

    rows = []
    level_sum_err = 0.0
    for s in base:
        table = cylinder_measure(chain, s, cyl_levels, cfg.pair_cap)
        label = point_label(s)
        for w, p in sorted(table.table.items()):
            rows.append((label, "".join(map(str, w)) or "-", p))
        level_sum_err = max(
            level_sum_err,
            max(abs(table.level_sum(k) - 1.0) for k in range(cyl_levels + 1)),
        )
    bundle.add_csv("cylinders.csv", ["anchor_label", "word", "probability"], rows)

    f = (lambda s: 0.5 ** len(s)) if isinstance(model, WordTreeModel) else (lambda s: float(s) + 1.0)
    inter = intertwining_check(chain, f, base[0], min(cyl_levels, 5), cfg.pair_cap)
    norm_res = normalization_commutes(model.kernel, chain, base, min(feat_levels, 5))

    tower = build_tower(model.kernel, model.branch, base, feat_levels, cfg.tol, cfg.pair_cap)
    nu = ProductCylinderWeights(cfg.boundary["nu"])
    nu_alt = ProductCylinderWeights(cfg.boundary["nu_alt"])
    bg = boundary_feature_gram(model.kernel, tower, chain, nu, feat_levels, cfg.tol, cfg.pair_cap)
    bg_alt = boundary_feature_gram(model.kernel, tower, chain, nu_alt, feat_levels, cfg.tol, cfg.pair_cap)
    nu_shift = float(np.max(np.abs(bg.entries - bg_alt.entries)))
    bundle.add_gram_csv("boundary_gram.csv", bg.points, bg.entries)

    results = {
        "gauge": gauge_info,
        "cylinders": {
            "levels": cyl_levels,
            "max_level_sum_error": level_sum_err,
            "tolerance": 1e-12,
        },
        "intertwining": {
            "one_step_residual": inter.one_step_residual,
            "markov_residual": inter.markov_residual,
            "normalization_residual": norm_res,
            "tolerance": 1e-12,
        },
        "boundary_gram": {
            "levels": feat_levels,
            "residual": bg.residual,
            "nu": nu.describe(),
            "nu_alt": nu_alt.describe(),
            "nu_invariance": nu_shift,
            "tolerances": {"residual": 1e-10, "nu_invariance": 1e-12},
        },
    }
    if cfg.seed is not None:
        path = sample_path(chain, base[0], min(cyl_levels, 16), cfg.seed)
        results["sample_path"] = {
            "word": "".join(map(str, path.word)),
            "points": [point_label(x) for x in path.points],
        }
    report = RunReport("boundary", cfg.resolved(), results,
                       timings={"total_s": time.perf_counter() - t0})
    bundle.finish(report, cfg.echo_yaml())
    print(report.summary_json(), end="")
    return 0


def cmd_verify(cfg: Config, outdir: Path, verbose: bool) -> int:
    ctx = VerifyContext(
        seed=cfg.seed if cfg.seed is not None else 20250809,
        nsamples=cfg.nsamples,
        tol=cfg.tol,
        ceiling=cfg.ceiling,
        fault=cfg.fault_injection,
    )
    results = run_checks(ctx, progress=lambda r: print(r.line()))
    bundle = Bundle(outdir, cfg.formats)
    bundle.add_csv(
        "verify_results.csv",
        ["criterion", "name", "passed"],
        [(r.criterion, r.name, r.passed) for r in results],
    )
    report = RunReport(
        "verify",
        cfg.resolved(),
        {
            "checks": {
                r.name: {"criterion": r.criterion, "passed": r.passed, **r.metrics}
                for r in results
            },
            "all_passed": all(r.passed for r in results),
        },
        timings={r.name: r.elapsed for r in results},
    )
    bundle.finish(report, cfg.echo_yaml())
    failures = [r for r in results if not r.passed]
    if failures:
        first = failures[0]
        print(
            f"verify FAILED at criterion {first.criterion} ({first.name}): {first.detail}",
            file=sys.stderr,
        )
        return EXIT_NUMERICAL
    if verbose:
        total = sum(r.elapsed for r in results)
        print(f"verify: all {len(results)} criteria passed in {total:.1f}s", file=sys.stderr)
    return 0


COMMANDS = {
    "tower": cmd_tower,
    "diagonal": cmd_diagonal,
    "gaussian": cmd_gaussian,
    "boundary": cmd_boundary,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kerneltower",
        description="Kernel towers under branching maps: completion, diagnostics, simulation, boundary.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} pipeline")
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--seed", type=int, help="override config seed")
        p.add_argument("--out", help="output directory (default runs/<command>)")
        p.add_argument("--format", choices=["csv", "json", "both"], help="bundle formats")
        p.add_argument("--tol", type=float, help="override PSD/identity tolerance")
        p.add_argument("--max-level", type=int, dest="max_level", help="override horizon")
        p.add_argument("--threads", type=int, default=1, help="worker cap for Gram assembly")
        p.add_argument("--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.config:
            cfg = load_config(args.config)
        elif args.command == "verify":
            cfg = parse_config({"model": {"kind": "word-tree"}})
        else:
            raise InputError("--config is required for this subcommand")
        if args.seed is not None:
            cfg.seed = args.seed
        if args.tol is not None:
            if args.tol <= 0:
                raise InputError("--tol must be positive")
            cfg.tol = args.tol
        if args.max_level is not None:
            if args.max_level < 0:
                raise InputError("--max-level must be nonnegative")
            cfg.horizon = args.max_level
        if args.format:
            cfg.formats = ["csv", "json"] if args.format == "both" else [args.format]
        set_default_workers(args.threads)
        outdir = Path(args.out) if args.out else Path("runs") / args.command
        return COMMANDS[args.command](cfg, outdir, args.verbose)
    except KernelTowerError as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
