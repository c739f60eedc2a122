"""Configuration-driven command line interface.

Subcommands: solve, dtn, evolve, verify, converge.  A run is fully described
by an INI config plus a seed; outputs (CSV tables, JSON summaries and PNG
figures) land in <out>/<command>/<config-stem>/ and are deterministic for a
fixed (config, seed).  The exit status is 0 iff every requested check passed.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

from . import __version__
from .extension import (DirichletBC, ExtensionProblem, RobinBC, SolverConfig,
                        audit_estimates, solve, write_solution_csv,
                        discretization_tolerance)
from .mesh import FracParams, ZMesh, auto_zmesh, t_of_z
from .monops import MonotoneOp, operator_from_spec
from .verify import (bessel_dtn_constant, bessel_scalar_extension,
                     brute_force_bvp, check_complete_contraction,
                     default_j_set, sample_pairs, spectral_frac_power)
from . import dtn as dtn_mod
from . import semigroup as sg


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config handling


def load_config(path) -> dict:
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    return {sec: dict(cp[sec]) for sec in cp.sections()}


def config_hash(path, seed: int) -> str:
    with open(path, "rb") as fh:
        blob = fh.read()
    return hashlib.sha256(blob + str(seed).encode()).hexdigest()


def _float(cfg, section, key, default=None, lo=None, hi=None):
    raw = cfg.get(section, {}).get(key, default)
    if raw is None:
        raise ConfigError(f"{section}.{key}: required value missing")
    try:
        val = float(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{section}.{key}: not a number: {raw!r}")
    if lo is not None and not (lo < val):
        raise ConfigError(f"{section}.{key}: must be > {lo}, got {val}")
    if hi is not None and not (val < hi):
        raise ConfigError(f"{section}.{key}: must be < {hi}, got {val}")
    return val


def _int(cfg, section, key, default=None, lo=None):
    raw = cfg.get(section, {}).get(key, default)
    if raw is None:
        raise ConfigError(f"{section}.{key}: required value missing")
    try:
        val = int(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{section}.{key}: not an integer: {raw!r}")
    if lo is not None and val < lo:
        raise ConfigError(f"{section}.{key}: must be >= {lo}, got {val}")
    return val


def s_values(cfg) -> list:
    frac = cfg.get("frac", {})
    if "s_list" in frac:
        out = []
        for tok in str(frac["s_list"]).split(","):
            try:
                s = float(tok)
            except ValueError:
                raise ConfigError(f"frac.s_list: not a number: {tok!r}")
            if not (0.0 < s < 1.0):
                raise ConfigError(f"frac.s_list: must lie in (0, 1), got {s}")
            out.append(s)
        return out
    return [_float(cfg, "frac", "s", lo=0.0, hi=1.0)]


def build_operator(cfg) -> MonotoneOp:
    spec = cfg.get("operator")
    if spec is None:
        raise ConfigError("operator: section missing")
    try:
        return operator_from_spec(spec)
    except ValueError as exc:
        raise ConfigError(str(exc))


def build_mesh(cfg, p: FracParams, op: MonotoneOp) -> ZMesh:
    spec = cfg.get("mesh", {})
    n = _int(cfg, "mesh", "n_nodes", default="1024", lo=8)
    zm = spec.get("z_max", "auto")
    gr = spec.get("grading", "auto")
    far = spec.get("far_bc", "dirichlet_at_zero")
    try:
        return auto_zmesh(
            p, N=n,
            curvature=op.curvature_hint,
            z_max=None if zm == "auto" else float(zm),
            grading=None if gr == "auto" else float(gr),
            far_bc=far)
    except ValueError as exc:
        raise ConfigError(f"mesh: {exc}")


def build_solver(cfg) -> SolverConfig:
    spec = cfg.get("solver", {})
    return SolverConfig(
        method=spec.get("method", "splitting"),
        split_step=_float(cfg, "solver", "split_step", default="1.0", lo=0.0),
        relaxation=_float(cfg, "solver", "relaxation", default="1.0",
                          lo=0.0, hi=2.0),
        max_iters=_int(cfg, "solver", "max_iters", default="50000", lo=1),
        tol=_float(cfg, "solver", "tol", default="1e-10", lo=0.0))


def load_phi(cfg, section, op: MonotoneOp) -> np.ndarray:
    """One boundary vector per row, from an inline list or a CSV file."""
    spec = cfg.get(section, {})
    if "phi_csv" in spec:
        arr = np.loadtxt(spec["phi_csv"], delimiter=",", ndmin=2)
    elif "phi" in spec:
        arr = np.array([[float(x) for x in str(spec["phi"]).split(",")]])
    else:
        raise ConfigError(f"{section}.phi: boundary data missing "
                          f"(phi=... or phi_csv=...)")
    if arr.shape[1] != op.dim:
        raise ConfigError(
            f"{section}.phi: dimension {arr.shape[1]} does not match "
            f"operator dimension {op.dim}")
    return arr


# ---------------------------------------------------------------------------
# output helpers


def _run_dir(out, command, config_path):
    stem = os.path.splitext(os.path.basename(config_path))[0]
    path = os.path.join(out, command, stem)
    os.makedirs(path, exist_ok=True)
    return path


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_manifest(run_dir, args, command):
    _write_json(os.path.join(run_dir, "manifest.json"), {
        "command": command,
        "config_hash": config_hash(args.config, args.seed),
        "seed": args.seed,
        "package_version": __version__,
    })


def _fig_solution(path, mesh, p, vals, title):
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    z = mesh.nodes
    for k in range(vals.shape[1]):
        ax.plot(z, vals[:, k], lw=1.0)
    ax.set_xlabel("z")
    ax.set_ylabel("v(z)")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _fig_trajectory(path, traj, title):
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for k in range(traj.states.shape[1]):
        ax.plot(traj.times, traj.states[:, k], lw=1.0)
    ax.set_xlabel("t")
    ax.set_ylabel("state")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _fig_convergence(path, xs, errs, xlabel, title):
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.loglog(xs, errs, "o-")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("error")
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


# ---------------------------------------------------------------------------
# commands


def _boundary_from_cfg(cfg, section, phi):
    kind = cfg.get(section, {}).get("boundary", "dirichlet")
    if kind == "dirichlet":
        return DirichletBC(phi)
    if kind == "robin":
        lam = _float(cfg, section, "lambda", lo=0.0)
        return RobinBC(lam, phi)
    raise ConfigError(f"{section}.boundary: unknown kind {kind!r}")


def cmd_solve(cfg, args, run_dir) -> bool:
    op = build_operator(cfg)
    solver = build_solver(cfg)
    phis = load_phi(cfg, "solve", op)
    do_audit = cfg.get("solve", {}).get("audit", "true") == "true"
    results = []

    def run_one(item):
        s, j, phi = item
        p = FracParams(s)
        mesh = build_mesh(cfg, p, op)
        problem = ExtensionProblem(op, p, mesh,
                                   _boundary_from_cfg(cfg, "solve", phi),
                                   solver)
        sol = solve(problem)
        tag = f"s{s}_phi{j}"
        write_solution_csv(sol, problem, os.path.join(run_dir, f"solution_{tag}.csv"))
        if args.figures:
            _fig_solution(os.path.join(run_dir, f"solution_{tag}.png"),
                          mesh, p, sol.v.values, f"extension profile ({tag})")
        entry = {"s": s, "phi_index": j, "converged": sol.converged,
                 "iterations": sol.iterations,
                 "residual": sol.inclusion_residual,
                 "trace_fit_residual": sol.trace_diagnostics["fit_residual"]}
        ok = sol.converged
        if do_audit:
            rep = audit_estimates(sol, problem)
            entry["audit"] = rep.to_dict()
            ok = ok and rep.all_passed
        return ok, entry

    items = [(s, j, phi) for s in s_values(cfg)
             for j, phi in enumerate(phis)]
    oks = _map_jobs(run_one, items, args.jobs)
    passed = all(ok for ok, _ in oks)
    results = [entry for _, entry in oks]
    _write_json(os.path.join(run_dir, "summary.json"),
                {"command": "solve", "pass": passed, "runs": results})
    return passed


def cmd_dtn(cfg, args, run_dir) -> bool:
    op = build_operator(cfg)
    solver = build_solver(cfg)
    phis = load_phi(cfg, "dtn", op)
    mode = cfg.get("dtn", {}).get("mode", "apply")
    if mode not in ("apply", "resolve"):
        raise ConfigError(f"dtn.mode: unknown mode {mode!r}")
    results = []
    passed = True
    for s in s_values(cfg):
        p = FracParams(s)
        mesh = build_mesh(cfg, p, op)
        for j, phi in enumerate(phis):
            if mode == "apply":
                res = dtn_mod.apply_lambda_s(op, p, phi, mesh, solver)
                entry = {"s": s, "phi_index": j,
                         "lambda_s_phi": res.lambda_s_phi.tolist(),
                         "trace_diagnostics": res.trace_diagnostics}
                if args.figures:
                    _fig_solution(
                        os.path.join(run_dir, f"extension_s{s}_phi{j}.png"),
                        mesh, p, res.solution_ref.v.values,
                        f"Dirichlet extension (s={s})")
            else:
                lam = _float(cfg, "dtn", "lambda", lo=0.0)
                u, sol = dtn_mod.resolve_lambda_s(op, p, lam, phi, mesh,
                                                  solver, return_solution=True)
                lam_u = dtn_mod.apply_lambda_s(op, p, u, mesh, solver)
                identity = float(np.linalg.norm(
                    u + lam * lam_u.lambda_s_phi - phi))
                bound = 5.0 * solver.tol * (1.0 + float(np.linalg.norm(phi)))
                entry = {"s": s, "phi_index": j, "lambda": lam,
                         "resolvent": u.tolist(),
                         "resolve_identity_residual": identity,
                         "resolve_identity_bound": bound}
                passed = passed and identity <= bound
            results.append(entry)
    _write_json(os.path.join(run_dir, "summary.json"),
                {"command": "dtn", "mode": mode, "pass": passed,
                 "runs": results})
    return passed


def cmd_evolve(cfg, args, run_dir) -> bool:
    op = build_operator(cfg)
    solver = build_solver(cfg)
    phis = load_phi(cfg, "evolve", op)
    t_final = _float(cfg, "evolve", "t_final", lo=0.0)
    m = _int(cfg, "evolve", "substeps", default="64", lo=1)
    record_u = cfg.get("evolve", {}).get("record_u", "false") == "true"
    stride = _int(cfg, "evolve", "record_stride", default="1", lo=1)
    results = []
    for s in s_values(cfg):
        p = FracParams(s)
        mesh = build_mesh(cfg, p, op)
        for j, phi in enumerate(phis):
            traj = sg.evolve(op, p, phi, t_final, m, record_U=record_u,
                             record_stride=stride, mesh=mesh, cfg=solver)
            tag = f"s{s}_phi{j}"
            sg.write_trajectory_csv(traj, os.path.join(
                run_dir, f"trajectory_{tag}.csv"))
            if record_u:
                subdir = os.path.join(run_dir, f"ufield_{tag}")
                os.makedirs(subdir, exist_ok=True)
                sg.write_ufield_csvs(traj, p, subdir)
            if args.figures:
                _fig_trajectory(os.path.join(run_dir, f"trajectory_{tag}.png"),
                                traj, f"semigroup trajectory (s={s})")
            results.append({"s": s, "phi_index": j,
                            "final_state": traj.states[-1].tolist()})
    _write_json(os.path.join(run_dir, "summary.json"),
                {"command": "evolve", "pass": True, "runs": results})
    return True


def cmd_verify(cfg, args, run_dir) -> bool:
    op = build_operator(cfg)
    solver = build_solver(cfg)
    checks = [c.strip() for c in
              cfg.get("verify", {}).get("checks", "spectral").split(",")]
    rng = np.random.default_rng(args.seed)
    results = []
    passed = True
    for s in s_values(cfg):
        p = FracParams(s)
        mesh = build_mesh(cfg, p, op)
        for check in checks:
            if check == "spectral":
                entry, ok = _verify_spectral(cfg, op, p, mesh, solver, rng)
            elif check == "complete_contraction":
                entry, ok = _verify_cc(cfg, op, p, mesh, solver, rng)
            elif check == "bessel":
                entry, ok = _verify_bessel(p)
            elif check == "cross":
                entry, ok = _verify_cross(cfg, op, p, solver)
            else:
                raise ConfigError(f"verify.checks: unknown check {check!r}")
            entry.update({"s": s, "check": check})
            results.append(entry)
            passed = passed and ok
    _write_json(os.path.join(run_dir, "summary.json"),
                {"command": "verify", "pass": passed, "checks": results})
    return passed


def _verify_spectral(cfg, op, p, mesh, solver, rng):
    if op.direct_eval is None or not op.label.startswith(("linear_spd", "scalar")):
        raise ConfigError("verify.checks: spectral check needs a linear operator")
    M = op.direct_eval(np.eye(op.dim))
    target = bessel_dtn_constant(p.s) * spectral_frac_power(M, p.s)
    lam_map = dtn_mod.lambda_s_map(op, p, mesh, solver)
    phis = rng.standard_normal((5, op.dim))
    got = lam_map(phis)
    want = phis @ target.T
    rel = float(np.max(np.linalg.norm(got - want, axis=1)
                       / np.linalg.norm(want, axis=1)))
    thr = float(cfg.get("verify", {}).get("spectral_rtol", 1e-3))
    return {"rel_error": rel, "threshold": thr}, rel <= thr


def _verify_cc(cfg, op, p, mesh, solver, rng):
    n_pairs = int(cfg.get("verify", {}).get("n_pairs", 200))
    lam = float(cfg.get("verify", {}).get("lambda", 1.0))
    j_map = dtn_mod.resolvent_map(op, p, lam, mesh, solver)
    rep = check_complete_contraction(
        j_map, lambda r, n: sample_pairs(r, op.dim, n),
        j_set=default_j_set(), n_pairs=n_pairs, rng=rng)
    return ({"worst_margin": rep.worst_margin,
             "entries": [e.to_dict() for e in rep.entries]}, rep.passed)


def _verify_bessel(p):
    # the oracle must satisfy the defining equation it claims to solve
    a = 2.0
    ts = np.linspace(0.3, 3.0, 7)
    u, du, _ = bessel_scalar_extension(a, p.s, 1.0, ts)
    h = 1e-5
    up, _, _ = bessel_scalar_extension(a, p.s, 1.0, ts + h)
    um, _, _ = bessel_scalar_extension(a, p.s, 1.0, ts - h)
    d2 = (up - 2 * u + um) / h ** 2
    resid = float(np.max(np.abs(
        d2 + (1.0 - 2.0 * p.s) / ts * du - a * u)))
    return {"ode_residual": resid, "threshold": 1e-5}, resid <= 1e-5


def _verify_cross(cfg, op, p, solver):
    n = int(cfg.get("verify", {}).get("cross_nodes", 10))
    zmax = float(cfg.get("verify", {}).get("cross_z_max", 15.0))
    from .mesh import graded_zmesh
    mesh = graded_zmesh(n, zmax, 2.0)
    phi = np.asarray(op.zero) + 1.0
    tolcmp = 1e-6
    prob_s = ExtensionProblem(op, p, mesh, DirichletBC(phi),
                              SolverConfig(tol=1e-11))
    prob_r = ExtensionProblem(op, p, mesh, DirichletBC(phi),
                              SolverConfig(tol=1e-11, method="regularized_path"))
    vs = solve(prob_s)
    vr = solve(prob_r)
    bf = brute_force_bvp(op, p, phi, mesh)
    d1 = float(np.max(np.abs(vs.v.values - vr.v.values)))
    d2 = float(np.max(np.abs(vs.v.values - bf.values)))
    ok = max(d1, d2) <= tolcmp
    return {"split_vs_path": d1, "split_vs_brute_force": d2,
            "threshold": tolcmp}, ok


def cmd_converge(cfg, args, run_dir) -> bool:
    op = build_operator(cfg)
    solver = build_solver(cfg)
    phis = load_phi(cfg, "converge", op)
    phi = phis[0]
    spec = cfg.get("converge", {})
    n_list = [int(x) for x in spec.get("n_list", "64,128,256,512").split(",")]
    rows = []
    for s in s_values(cfg):
        p = FracParams(s)
        sols = []
        for n in sorted(n_list) + [2 * max(n_list)]:
            mesh = build_mesh({**cfg, "mesh": {**cfg.get("mesh", {}),
                                               "n_nodes": str(n)}}, p, op)
            problem = ExtensionProblem(op, p, mesh, DirichletBC(phi), solver)
            sols.append((n, solve(problem), mesh))
        # compare each level against the next refinement at shared nodes
        for (n, sol, mesh), (n2, sol2, mesh2) in zip(sols, sols[1:]):
            vals2 = sol2.v.values[::2] if 2 * n == n2 else None
            err = float(np.max(np.abs(sol.v.values - vals2))) \
                if vals2 is not None else float("nan")
            rows.append({"s": s, "n": n, "diff_to_refined": err})
    csv_path = os.path.join(run_dir, "convergence.csv")
    with open(csv_path, "w") as fh:
        fh.write("s,n,diff_to_refined\n")
        for r in rows:
            fh.write(f"{r['s']},{r['n']},{r['diff_to_refined']:.17g}\n")
    decreasing = all(
        a["diff_to_refined"] >= b["diff_to_refined"]
        for a, b in zip(rows, rows[1:]) if a["s"] == b["s"])
    if args.figures and rows:
        for s in s_values(cfg):
            sub = [r for r in rows if r["s"] == s]
            _fig_convergence(os.path.join(run_dir, f"convergence_s{s}.png"),
                             [r["n"] for r in sub],
                             [r["diff_to_refined"] for r in sub],
                             "N", f"mesh refinement (s={s})")
    _write_json(os.path.join(run_dir, "summary.json"),
                {"command": "converge", "pass": decreasing, "rows": rows})
    return decreasing


def _map_jobs(fn, items, jobs):
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------------------
# entry point


_COMMANDS = {"solve": cmd_solve, "dtn": cmd_dtn, "evolve": cmd_evolve,
             "verify": cmd_verify, "converge": cmd_converge}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="fracmono",
        description="fractional powers of monotone operators via the "
                    "extension problem")
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="INI config file")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--no-figures", dest="figures", action="store_false")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        run_dir = _run_dir(args.out, args.command, args.config)
        _write_manifest(run_dir, args, args.command)
        ok = _COMMANDS[args.command](cfg, args, run_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    print(f"{args.command}: {'pass' if ok else 'FAIL'} (outputs in {run_dir})")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
