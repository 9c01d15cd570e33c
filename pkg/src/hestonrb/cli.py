"""Command-line front end: offline training, online queries, sweeps,
scenario tables, and config validation.

Exit codes: 0 on success, 2 for configuration problems, 3 for unreadable
or incompatible model files.  All delimited outputs are CSV with a header
row, 17 significant digits, LF line endings, written atomically; figures
are rendered as PNG next to them.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import time

import numpy as np

from . import figures
from .bundle import ModelBundle, ModelFormatError, load_model, save_model
from .config import ConfigError, RunConfig
from .payoff import PayoffSpec, payoff_coeffs
from .pipeline import (
    WindowNorm,
    assemble_problem,
    run_scenarios,
    train_offline,
)
from .rbm import rb_online_solve
from .truth import project_initial

__all__ = ["main"]


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def _atomic_write_text(path: str, text: str) -> None:
    """Write text with LF endings via a same-directory rename."""
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _cell(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def write_csv(path: str, header, rows) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(_cell(v) for v in row) for row in rows)
    _atomic_write_text(path, "\n".join(lines) + "\n")


def _write_report(path: str, report: dict) -> None:
    _atomic_write_text(path, json.dumps(report, indent=2, sort_keys=True) + "\n")


def _load_config(path) -> RunConfig:
    cfg = RunConfig.from_file(path) if path else RunConfig()
    cfg.validate()
    return cfg


def _merge_query_sections(base: RunConfig, overlay: RunConfig) -> RunConfig:
    """Overlay the query-side sections of one config onto another.

    Geometry and training sections always come from ``base`` (the model's
    embedded configuration); payoff, query, sweep, and output sections are
    taken from ``overlay``.
    """
    merged = RunConfig(values={s: dict(kv) for s, kv in base.values.items()})
    for sec in ("payoff", "query", "sweep", "output", "domain"):
        merged.values[sec] = dict(overlay.values[sec])
    merged.validate()
    return merged


# ---------------------------------------------------------------------------
# shared model-side helpers
# ---------------------------------------------------------------------------

def _query_spec(cfg: RunConfig) -> PayoffSpec:
    return PayoffSpec(
        kind=cfg.get("payoff", "kind"),
        strike=cfg.get("payoff", "strike"),
        values=cfg.get("payoff", "values") or None,
    )


def _solve_query(model: ModelBundle, cfg: RunConfig, rho: float):
    beta = payoff_coeffs(_query_spec(cfg), model.knots)
    alpha0, R_init, norm_mu0 = model.online_init.project(beta)
    sol = rb_online_solve(alpha0, rho, model.evol, R_init=R_init, norm_mu0=norm_mu0)
    lo, hi = model.rho_trained
    sol.out_of_range = not (lo <= rho <= hi)
    return beta, sol


def _check_rho_domain(cfg: RunConfig, rho: float) -> None:
    lo, hi = cfg.get("domain", "rho_min"), cfg.get("domain", "rho_max")
    if not (lo <= rho <= hi):
        raise ConfigError(
            f"query rho {rho} outside the declared correlation domain [{lo}, {hi}]"
        )


def _rebuild_problem(model: ModelBundle):
    problem = assemble_problem(model.config)
    J = model.meta.get("J")
    if J is not None and int(J) != problem.mesh.J:
        raise ModelFormatError(
            f"model was trained with J={J} interior vertices but the embedded "
            f"configuration rebuilds J={problem.mesh.J}"
        )
    M = model.meta.get("M")
    if M is not None and int(M) != problem.mesh.J:
        raise ModelFormatError("surface reconstruction requires models with H^M = V^J")
    return problem


def _reduced_nodal(model: ModelBundle, sol) -> np.ndarray:
    row0 = sol.alpha0 @ model.init_rb.basis
    steps = model.evol.reconstruct_steps(sol.coeffs)
    if steps is None:
        steps = np.zeros((1, row0.size))
    return np.vstack([row0[None, :], steps])


# ---------------------------------------------------------------------------
# verbs
# ---------------------------------------------------------------------------

def cmd_offline(args) -> int:
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg.set("output", "seed", int(args.seed))
    np.random.seed(cfg.get("output", "seed"))
    os.makedirs(args.out, exist_ok=True)

    t_total = time.time()
    result = train_offline(cfg)
    model = ModelBundle.from_offline(result)
    save_model(model, os.path.join(args.out, "model.npz"))

    lam = result.init_rb.eigenvalues
    if lam is not None:
        write_csv(
            os.path.join(args.out, "eigdecay.csv"),
            ["mode", "eigenvalue"],
            [(i + 1, float(v)) for i, v in enumerate(lam)],
        )
        figures.plot_eigenvalue_decay(
            lam, os.path.join(args.out, "eigdecay.png"), n_kept=result.init_rb.N0
        )
    write_csv(
        os.path.join(args.out, "init_errors.csv"),
        ["candidate", "rel_projection_error"],
        [(i + 1, float(e)) for i, e in enumerate(result.cand_errors)],
    )
    write_csv(
        os.path.join(args.out, "greedy.csv"),
        ["iteration", "cand_index", "rho", "estimator"],
        [(e.iteration, e.cand_index, e.rho, e.estimator) for e in result.evol.log],
    )
    figures.plot_greedy_decay(
        result.evol.log,
        os.path.join(args.out, "greedy.png"),
        tol=cfg.get("training", "tol_evol"),
        label=cfg.get("training", "selector"),
    )

    timings = dict(result.timings)
    timings["total"] = time.time() - t_total
    report = {
        "config_hash": cfg.config_hash(),
        "N0": result.init_rb.N0,
        "N1": result.evol.N1,
        "status": result.evol.status,
        "rel_truncation": result.init_rb.rel_truncation,
        "mean_candidate_error": float(result.cand_errors.mean()),
        "greedy_log_length": len(result.evol.log),
        "timings_seconds": {k: round(v, 3) for k, v in timings.items()},
        "warnings": result.warnings,
    }
    _write_report(os.path.join(args.out, "report.json"), report)

    print(f"offline phase done in {timings['total']:.1f} s")
    print(
        f"  initial space: N0 = {result.init_rb.N0} "
        f"(mean candidate error {result.cand_errors.mean():.4f})"
    )
    print(f"  evolution space: N1 = {result.evol.N1} ({result.evol.status})")
    for w in result.warnings:
        print(f"  note: {w}")
    print(f"  model written to {os.path.join(args.out, 'model.npz')}")
    return 0


def cmd_online(args) -> int:
    model = load_model(args.model)
    cfg = model.config
    if args.config:
        cfg = _merge_query_sections(cfg, _load_config(args.config))
    rho = cfg.get("query", "rho")
    _check_rho_domain(cfg, rho)
    np.random.seed(args.seed if args.seed is not None else cfg.get("output", "seed"))
    os.makedirs(args.out, exist_ok=True)

    t0 = time.time()
    beta, sol = _solve_query(model, cfg, rho)
    online_seconds = time.time() - t0
    breakdown = sol.breakdown(model.beta_LB)

    est_header = ["rho", "R_init", "R_evol", "delta1", "delta", "norm_mu0", "out_of_range"]
    est_row = [rho, sol.R_init, sol.R_evol, breakdown.delta_evol, breakdown.delta,
               sol.norm_mu0, sol.out_of_range]

    problem = _rebuild_problem(model)
    nodal = _reduced_nodal(model, sol)
    window = cfg.get("output", "window")
    wnorm = WindowNorm(problem.mesh, problem.gramian, problem.mass, problem.grid, window)
    coords = problem.mesh.interior_coords()[wnorm.index]
    surf_rows = [
        (float(y), float(nu), float(np.exp(y)), float(u0), float(uT))
        for (y, nu), u0, uT in zip(coords, nodal[0, wnorm.index], nodal[-1, wnorm.index])
    ]

    if args.truth:
        mu0 = project_initial(beta, problem.N_LM, problem.coupling.M_init)
        truth = problem.solver.cn_solve(rho, mu0)
        diff = truth.nodal(problem.coupling) - nodal
        est_header += ["true_error_window", "true_error_full"]
        est_row += [wnorm.norm(diff), problem.solver.xbar_norm(diff)]

    write_csv(os.path.join(args.out, "estimator.csv"), est_header, [est_row])
    write_csv(
        os.path.join(args.out, "surface.csv"),
        ["y", "nu", "S", "u_t0", "u_tT"],
        surf_rows,
    )
    figures.plot_surface(
        problem.mesh, nodal[0], window,
        os.path.join(args.out, "surface_t0.png"),
        title=f"reduced solution at t = 0 (rho = {rho:g})",
    )
    figures.plot_surface(
        problem.mesh, nodal[-1], window,
        os.path.join(args.out, "surface_tT.png"),
        title=f"reduced solution at t = T (rho = {rho:g})",
    )

    print(f"online query at rho = {rho:g} ({online_seconds * 1e3:.2f} ms reduced solve)")
    print(f"  R_init = {sol.R_init:.6e}, R_evol = {sol.R_evol:.6e}")
    print(f"  certified error estimate delta = {breakdown.delta:.6e}")
    if sol.out_of_range:
        lo, hi = model.rho_trained
        print(
            f"  WARNING: rho = {rho:g} is outside the trained range [{lo:g}, {hi:g}]; "
            "the estimator is reported but not certified there"
        )
    if args.truth:
        print(f"  true error (window) = {est_row[-2]:.6e}, (full) = {est_row[-1]:.6e}")
    return 0


def cmd_sweep(args) -> int:
    model = load_model(args.model)
    cfg = model.config
    if args.config:
        cfg = _merge_query_sections(cfg, _load_config(args.config))
    np.random.seed(args.seed if args.seed is not None else cfg.get("output", "seed"))
    rhos = np.linspace(
        cfg.get("sweep", "rho_min"), cfg.get("sweep", "rho_max"), cfg.get("sweep", "count")
    )
    for r in rhos:
        _check_rho_domain(cfg, float(r))
    os.makedirs(args.out, exist_ok=True)

    problem = None
    wnorm = None
    truth_mu0 = None
    if args.truth:
        problem = _rebuild_problem(model)
        wnorm = WindowNorm(
            problem.mesh, problem.gramian, problem.mass, problem.grid,
            cfg.get("output", "window"),
        )

    rows = []
    plot_rows = []
    for r in rhos:
        r = float(r)
        beta, sol = _solve_query(model, cfg, r)
        breakdown = sol.breakdown(model.beta_LB)
        row = {
            "rho": r, "R_init": sol.R_init, "R_evol": sol.R_evol,
            "delta1": breakdown.delta_evol, "delta": breakdown.delta,
            "out_of_range": sol.out_of_range,
        }
        if args.truth:
            if truth_mu0 is None:
                truth_mu0 = project_initial(beta, problem.N_LM, problem.coupling.M_init)
            truth = problem.solver.cn_solve(r, truth_mu0)
            diff = truth.nodal(problem.coupling) - _reduced_nodal(model, sol)
            row["true_error"] = problem.solver.xbar_norm(diff)
            row["true_error_window"] = wnorm.norm(diff)
        rows.append(row)
        plot_rows.append(row)

    header = ["rho", "R_init", "R_evol", "delta1", "delta", "out_of_range"]
    if args.truth:
        header += ["true_error", "true_error_window"]
    write_csv(
        os.path.join(args.out, "sweep.csv"), header,
        [[row[k] for k in header] for row in rows],
    )
    figures.plot_sweep(plot_rows, os.path.join(args.out, "sweep.png"), truth=args.truth)

    worst = max(rows, key=lambda row: row["delta"])
    print(f"sweep over {len(rows)} correlation values written to sweep.csv")
    print(f"  worst certified estimate delta = {worst['delta']:.6e} at rho = {worst['rho']:g}")
    if any(row["out_of_range"] for row in rows):
        lo, hi = model.rho_trained
        print(f"  WARNING: sweep leaves the trained range [{lo:g}, {hi:g}]")
    return 0


def cmd_scenarios(args) -> int:
    cfg = _load_config(args.config)
    np.random.seed(args.seed if args.seed is not None else cfg.get("output", "seed"))
    os.makedirs(args.out, exist_ok=True)
    t0 = time.time()
    rows = run_scenarios(cfg, verbose=True)
    write_csv(
        os.path.join(args.out, "scenarios.csv"),
        ["scenario", "span_requested", "span_used", "train_requested", "train_used",
         "N1", "status", "R_init", "err_window", "err_full"],
        [
            (r.scenario, r.span_requested, r.span_used, r.train_requested, r.train_used,
             r.N1, r.status, r.R_init, r.err_window, r.err_full)
            for r in rows
        ],
    )
    figures.plot_scenarios(rows, os.path.join(args.out, "scenarios.png"))
    print(f"4 scenarios finished in {time.time() - t0:.1f} s; table in scenarios.csv")
    return 0


def cmd_validate_config(args) -> int:
    cfg = _load_config(args.config)
    print(f"configuration OK (hash {cfg.config_hash()[:16]})")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="hestonrb",
        description=(
            "Certified reduced-basis solver for the Heston pricing PDE in "
            "space-time form, with parametric payoffs."
        ),
    )
    sub = p.add_subparsers(dest="verb", required=True)

    def add_common(sp, model=False, out=True):
        sp.add_argument("--config", metavar="PATH", help="configuration file")
        if model:
            sp.add_argument("--model", metavar="PATH", required=True,
                            help="trained model bundle (.npz)")
        if out:
            sp.add_argument("--out", metavar="DIR", required=True, help="output directory")
        sp.add_argument("--seed", metavar="N", type=int, default=None,
                        help="random seed override")

    sp = sub.add_parser("offline", help="train and persist a reduced model")
    add_common(sp)
    sp.set_defaults(func=cmd_offline)

    sp = sub.add_parser("online", help="answer one reduced query from a model")
    add_common(sp, model=True)
    sp.add_argument("--truth", action="store_true",
                    help="also run the full solver and report true errors")
    sp.set_defaults(func=cmd_online)

    sp = sub.add_parser("sweep", help="evaluate estimator across a correlation grid")
    add_common(sp, model=True)
    sp.add_argument("--truth", action="store_true",
                    help="also run the full solver per grid point")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("scenarios", help="training-set comparison table")
    add_common(sp)
    sp.set_defaults(func=cmd_scenarios)

    sp = sub.add_parser("validate-config", help="check a configuration file")
    add_common(sp, out=False)
    sp.set_defaults(func=cmd_validate_config)

    return p


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except ModelFormatError as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
