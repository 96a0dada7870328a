"""``sddpde solve|verify|study [--config PATH] [--out DIR] [--seed N]``.

Exit codes: 0 success, 1 verification failure, 2 config error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import replace

import numpy as np

from . import analysis, scenario
from .history import norm_H
from .integrator import SolverError, solve
from .scenario import ConfigError

log = logging.getLogger("sddpde")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3

ESTIMATES = ("energy", "continuous_dependence", "dissipativity", "lemma1", "hb", "eta",
             "manifold", "semigroup", "remark4", "remark5")
STUDIES = ("galerkin", "dissipativity", "sweep")


def _out_dir(args, sc) -> str:
    out = args.out or sc.output.dir
    os.makedirs(out, exist_ok=True)
    return out


def _path(out, sc, name):
    return os.path.join(out, (sc.output.prefix + name) if sc.output.prefix else name)


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(analysis._jsonable(obj), fh, indent=2, sort_keys=True)


def _write_rows(path, rows, columns=None):
    columns = columns or list(rows[0].keys()) if rows else columns or []
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in columns})


# ------------------------------------------------------------------- solve
def cmd_solve(sc, args) -> int:
    out = _out_dir(args, sc)
    rhs = sc.rhs()
    phi = sc.initial_history(rhs)
    traj = solve(phi, rhs, sc.solver_config(), meta={"provenance": sc.provenance()})
    energy = analysis.verify_energy(traj, sc.provenance())
    csv_path = _path(out, sc, "trajectory.csv")
    traj.to_csv(csv_path)
    # plot data: energy and delay at the nodes
    lam = rhs.basis.eigenvalues
    t = traj.node_times
    y = np.sum(lam * traj.states ** 2, axis=1)
    eta = np.array([traj.be.delay_at(traj.times, traj.Y, traj.DL, traj.DR, traj.P, traj.inv_lam,
                                     i, rhs.eta.code, rhs.eta.params, rhs.r)
                    for i in range(traj.i0, traj.i_last + 1)])
    np.savetxt(_path(out, sc, "solve_plot.csv"), np.column_stack([t, y, eta]), delimiter=",",
               header="t,A12_norm_sq,eta", comments="", fmt="%.10g")
    final = traj.final()
    manifest = traj.manifest({
        "config_hash": sc.config_hash(),
        "seed": sc.seed,
        "config": sc.to_dict(),
        "solver_config": analysis._jsonable(traj.cfg.__dict__),
        "outputs": {"trajectory": csv_path},
        "final_norm_H": norm_H(final),
        "invariants": {"energy": energy.to_dict(),
                       "initial_manifold_residual": traj.meta.get("initial_manifold_residual")},
    })
    _write_json(_path(out, sc, "manifest.json"), manifest)
    print(f"trajectory written to {csv_path}")
    print(f"worst energy margin: {energy.details['min_margin']:.6g} (tolerance 1e-6*(1+t)); "
          f"{'PASS' if energy.passed else 'FAIL'}")
    print(f"||u_T||_H = {norm_H(final):.17g}")
    return EXIT_OK


# ------------------------------------------------------------------ verify
def run_estimates(sc, ids, seed: int) -> list:
    prov = {**sc.provenance(), "seed": seed}
    v = sc.verify
    rhs = sc.rhs()
    cfg = sc.solver_config()
    reports = []
    phi = None

    def initial():
        nonlocal phi
        if phi is None:
            phi = sc.initial_history(rhs)
        return phi

    for est in ids:
        log.info("running estimate %s", est)
        if est == "energy":
            reports.append(analysis.verify_energy(solve(initial(), rhs, cfg), prov))
        elif est == "continuous_dependence":
            cd_cfg = replace(cfg, T=cfg.dt * round(v.cd_T / cfg.dt))
            psi = analysis.smooth_perturbation(initial(), v.cd_perturbation)
            rH, rL, _ = analysis.verify_continuous_dependence(initial(), psi, rhs, cd_cfg, prov, v.workers)
            reports += [rH, rL]
        elif est == "dissipativity":
            R2 = analysis.absorbing_radius_sq(rhs)
            inits = analysis.random_initials(rhs, v.n_initials, v.initial_factor * R2, seed)
            reports.append(analysis.verify_dissipativity(rhs, cfg, inits, v.T_max, provenance=prov,
                                                         workers=v.workers))
        elif est == "lemma1":
            reports.append(analysis.audit_lemma1(rhs, v.n_samples, seed, prov))
        elif est == "hb":
            reports.append(analysis.audit_HB(rhs, v.n_samples, seed))
        elif est == "eta":
            reports.append(analysis.audit_eta(rhs, max(1, v.n_samples // 2), seed))
        elif est == "manifold":
            reports.append(analysis.verify_manifold_invariance(initial(), rhs, cfg, min(3.0, cfg.T),
                                                               provenance=prov, workers=v.workers))
        elif est == "semigroup":
            reports.append(analysis.verify_semigroup(initial(), rhs, cfg, seed=seed, provenance=prov,
                                                     workers=v.workers))
        elif est in ("remark4", "remark5"):
            rep = {r.estimate: r for r in analysis.verify_timeshift(prov)}
            reports.append(rep[est])
            if est == "remark4":
                print(f"remark4 limit = {rep[est].observed:.12g}")
            else:
                print(f"remark5 limit = {rep[est].observed:.12g}")
    for r in reports:
        r.provenance = {**prov, **r.provenance}
    return reports


def cmd_verify(sc, args) -> int:
    ids = args.ids or list(sc.verify.estimates)
    bad = [i for i in ids if i not in ESTIMATES]
    if bad:
        print(f"unknown estimate id(s): {', '.join(bad)}; valid ids: {', '.join(ESTIMATES)}",
              file=sys.stderr)
        return EXIT_CONFIG
    out = _out_dir(args, sc)
    seed = sc.seed if args.seed is None else args.seed
    start = time.perf_counter()
    reports = run_estimates(sc, ids, seed)
    for r in reports:
        print(r.line())
    payload = {r.estimate: {"bound": r.bound, "observed": r.observed, "margin": r.margin,
                            "pass": r.passed, "tol": r.tol, "details": r.details,
                            "provenance": r.provenance} for r in reports}
    payload["_meta"] = {**sc.provenance(), "seed": seed, "wall_time_s": time.perf_counter() - start}
    path = _path(out, sc, "report.json")
    _write_json(path, payload)
    print(f"report written to {path}")
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAIL


# ------------------------------------------------------------------- study
def cmd_study(sc, args) -> int:
    kind = args.kind
    if kind not in STUDIES:
        print(f"unknown study kind {kind!r}; valid kinds: {', '.join(STUDIES)}", file=sys.stderr)
        return EXIT_CONFIG
    out = _out_dir(args, sc)
    seed = sc.seed if args.seed is None else args.seed
    st = sc.study
    cfg = sc.solver_config()
    if st.T is not None:
        cfg = replace(cfg, T=cfg.dt * round(st.T / cfg.dt))
    ok = True
    if kind == "galerkin":
        rows = analysis.galerkin_convergence_study(sc.initial_shape(), lambda m: sc.rhs(m=m),
                                                   st.m_list, cfg, workers=st.workers)
        dists = [r["distance"] for r in rows]
        ok = all(b <= a for a, b in zip(dists, dists[1:]))
        _write_rows(_path(out, sc, "study_galerkin.csv"), rows,
                    ["m", "m_next", "distance", "distance_low", "ratio", "sup_A12_m", "sup_A12_next"])
        np.savetxt(_path(out, sc, "study_galerkin_plot.csv"),
                   np.array([[r["m"], r["distance"]] for r in rows]), delimiter=",",
                   header="m,distance_H", comments="", fmt="%.10g")
        for r in rows:
            print(f"m={r['m']:>3} -> {r['m_next']:>3}: distance_H={r['distance']:.6e}"
                  + (f" ratio={r['ratio']:.3f}" if r["ratio"] else ""))
    elif kind == "dissipativity":
        rhs = sc.rhs()
        R2 = analysis.absorbing_radius_sq(rhs)
        inits = analysis.random_initials(rhs, sc.verify.n_initials, sc.verify.initial_factor * R2, seed)
        rep = analysis.verify_dissipativity(rhs, cfg, inits, sc.verify.T_max, workers=st.workers,
                                            provenance={**sc.provenance(), "seed": seed})
        rows = []
        for i, (run, pred) in enumerate(zip(rep.details["runs"], rep.details["predicted"])):
            rows.append({"run": i, "y0": run["y0"], "predicted_entry": pred,
                         "entry_time": run["entry_time"], "violation": run["violation"],
                         "sup_A34_after_entry": run["sup_A34_after_entry"]})
        _write_rows(_path(out, sc, "study_dissipativity.csv"), rows)
        # plot data: energy along each run up to entry + r
        with open(_path(out, sc, "study_dissipativity_plot.csv"), "w") as fh:
            fh.write("run,t,A12_norm_sq\n")
            for i, h in enumerate(inits):
                T_run = rep.details["runs"][i]["t_reached"]
                tr = solve(h, rhs, replace(cfg, T=cfg.dt * round(T_run / cfg.dt)))
                y = np.sum(rhs.basis.eigenvalues * tr.states ** 2, axis=1)
                stride = max(1, len(y) // 500)
                for t, v in zip(tr.node_times[::stride], y[::stride]):
                    fh.write(f"{i},{t:.10g},{v:.10g}\n")
        print(rep.line())
        print(f"status: {rep.details['status']}; entry times: "
              + ", ".join("none" if e is None else f"{e:.4g}" for e in rep.details["entry_times"]))
        ok = rep.passed
    else:
        rows = []
        for value in st.sweep_values:
            s2 = sc.with_override(st.sweep_parameter, value)
            rhs = s2.rhs()
            tr = solve(s2.initial_history(rhs), rhs, cfg)
            e = analysis.verify_energy(tr)
            y = np.sqrt(np.sum(rhs.basis.eigenvalues * tr.states ** 2, axis=1))
            rows.append({"parameter": st.sweep_parameter, "value": value,
                         "final_norm_H": norm_H(tr.final()), "sup_A12": float(y.max()),
                         "energy_margin": e.details["min_margin"], "energy_pass": e.passed,
                         "max_fp_iterations": int(tr.iteration_counts.max()) if tr.steps_done else 0})
            ok &= e.passed
        _write_rows(_path(out, sc, "study_sweep.csv"), rows)
        np.savetxt(_path(out, sc, "study_sweep_plot.csv"),
                   np.array([[r["value"], r["final_norm_H"]] for r in rows], dtype=float),
                   delimiter=",", header="value,final_norm_H", comments="", fmt="%.10g")
        for r in rows:
            print(f"{r['parameter']}={r['value']}: ||u_T||_H={r['final_norm_H']:.6g} "
                  f"energy margin={r['energy_margin']:.4g}")
    print(f"study written to {out}")
    return EXIT_OK if ok else EXIT_FAIL


# -------------------------------------------------------------------- main
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sddpde", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="scenario YAML (default: shipped Nicholson scenario)")
        sp.add_argument("--out", help="output directory (default: output.dir of the config)")
        sp.add_argument("--seed", type=int, help="seed for randomized checks (default: config seed)")

    common(sub.add_parser("solve", help="integrate the scenario and write the trajectory"))
    sp = sub.add_parser("verify", help="run estimate checks and write a JSON report")
    common(sp)
    sp.add_argument("ids", nargs="*", help=f"estimate ids ({', '.join(ESTIMATES)}); default: config list")
    sp = sub.add_parser("study", help="parameter studies")
    common(sp)
    sp.add_argument("kind", help=f"one of {', '.join(STUDIES)}")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        sc = scenario.load(args.config)
        if args.seed is not None:
            sc = replace(sc, seed=args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    handler = {"solve": cmd_solve, "verify": cmd_verify, "study": cmd_study}[args.command]
    try:
        return handler(sc, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (RuntimeError, ValueError, ArithmeticError, OSError) as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
