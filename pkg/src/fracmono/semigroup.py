"""Contraction semigroup generated by minus the fractional power.

Trajectories are produced by the exponential formula: m implicit Euler steps,
each one application of the DtN resolvent with step dt = t/m.  This is the
resolvent-product construction natural to maximal monotone operators and is
unconditionally contractive.  Optionally every recorded state is re-extended
in the z-variable, yielding the two-variable field U(r, t).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .extension import ExtensionWorkspace, SolverConfig
from .hilbert import as_hvector
from .mesh import FracParams, ZMesh, auto_zmesh, t_of_z
from .monops import MonotoneOp


@dataclass
class SemigroupTrajectory:
    times: np.ndarray
    states: np.ndarray  # (m+1, dim), states[0] = phi
    substeps: int
    U_field: np.ndarray | None = None  # (n_recorded, n_nodes, dim)
    U_times: np.ndarray | None = None
    mesh: ZMesh | None = None


def _workspaces(op, p, mesh, cfg):
    cfg = cfg or SolverConfig()
    mesh = mesh if mesh is not None else auto_zmesh(
        p, N=1024, curvature=op.curvature_hint)
    return mesh, cfg, ExtensionWorkspace(op, p, mesh, cfg, robin=True)


def step(op: MonotoneOp, p: FracParams, dt: float, state,
         mesh: ZMesh | None = None, cfg: SolverConfig | None = None):
    """One implicit Euler step: the DtN resolvent with parameter dt."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    state = as_hvector(state, op.dim)
    mesh, cfg, ws = _workspaces(op, p, mesh, cfg)
    vals, info = ws.solve_robin(1.0 / dt, state[None, :] / dt)
    if not info["converged"]:
        raise RuntimeError("implicit Euler step did not converge")
    return vals[0, 0, :]


def evolve(op: MonotoneOp, p: FracParams, phi, t_final: float, m: int,
           record_U: bool = False, record_stride: int = 1,
           mesh: ZMesh | None = None,
           cfg: SolverConfig | None = None) -> SemigroupTrajectory:
    """Evolve phi to time t_final with m uniform resolvent steps.

    Successive steps warm-start the splitting from the previous internal
    state, so a trajectory costs far less than m independent solves.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    if t_final <= 0:
        raise ValueError("t_final must be positive")
    phi = as_hvector(phi, op.dim)
    mesh, cfg, ws = _workspaces(op, p, mesh, cfg)
    dt = t_final / m
    times = np.linspace(0.0, t_final, m + 1)
    states = np.empty((m + 1, op.dim))
    states[0] = phi
    x0 = None
    for k in range(1, m + 1):
        vals, info = ws.solve_robin(1.0 / dt, states[k - 1][None, :] / dt,
                                    x0=x0)
        if not info["converged"]:
            raise RuntimeError(f"implicit Euler step {k} did not converge")
        states[k] = vals[0, 0, :]
        x0 = info["state"]
    traj = SemigroupTrajectory(times=times, states=states, substeps=m,
                               mesh=mesh)
    if record_U:
        ws_d = ExtensionWorkspace(op, p, mesh, cfg, robin=False)
        rec = list(range(0, m + 1, record_stride))
        if rec[-1] != m:
            rec.append(m)
        U = np.empty((len(rec), mesh.nodes.shape[0], op.dim))
        for j, k in enumerate(rec):
            vals, info = ws_d.solve_dirichlet(states[k][None, :])
            if not info["converged"]:
                raise RuntimeError("extension recording did not converge")
            U[j] = vals[0]
        traj.U_field = U
        traj.U_times = times[rec]
    return traj


# ---------------------------------------------------------------------------
# audits


@dataclass
class TrajectoryAuditReport:
    max_distance_increase: float
    order_violation: float | None
    l1_expansion: float | None
    linf_expansion: float | None
    threshold: float
    passed: bool


def trajectory_audit(traj_a: SemigroupTrajectory, traj_b: SemigroupTrajectory,
                     op: MonotoneOp | None = None,
                     threshold: float = 1e-8) -> TrajectoryAuditReport:
    """Pairwise contraction along two trajectories; for lattice operators the
    order and L1/Linf non-expansion between the paired states as well."""
    if traj_a.times.shape != traj_b.times.shape or \
            not np.allclose(traj_a.times, traj_b.times):
        raise ValueError("trajectories must share the time grid")
    d = np.linalg.norm(traj_a.states - traj_b.states, axis=1)
    inc = float(np.max(np.diff(d), initial=0.0))
    order = l1 = linf = None
    ok = inc <= threshold
    if op is not None and op.is_lattice:
        diff0 = traj_a.states[0] - traj_b.states[0]
        order = 0.0
        if np.all(diff0 <= 0.0):
            # ordered initial data must stay ordered
            order = float(np.max(traj_a.states - traj_b.states, initial=0.0))
        l1n = np.sum(np.abs(traj_a.states - traj_b.states), axis=1)
        linfn = np.max(np.abs(traj_a.states - traj_b.states), axis=1)
        l1 = float(np.max(l1n - l1n[0], initial=0.0))
        linf = float(np.max(linfn - linfn[0], initial=0.0))
        ok = ok and order <= threshold and l1 <= threshold * max(1.0, l1n[0]) \
            and linf <= threshold * max(1.0, linfn[0])
    return TrajectoryAuditReport(
        max_distance_increase=inc, order_violation=order, l1_expansion=l1,
        linf_expansion=linf, threshold=threshold, passed=bool(ok))


@dataclass
class GeneratorConsistencyReport:
    max_mismatch: float
    tolerance: float
    passed: bool


def generator_consistency(traj: SemigroupTrajectory, op: MonotoneOp,
                          p: FracParams,
                          cfg: SolverConfig | None = None) -> GeneratorConsistencyReport:
    """Backward differences of the trajectory against minus the DtN map.

    The implicit Euler construction makes (states[k] - states[k-1])/dt equal
    to -DtN(states[k]) up to solver error; the comparison tolerance is the
    Euler increment scale dt * max||rate||.
    """
    from .dtn import lambda_s_map
    lam_map = lambda_s_map(op, p, traj.mesh, cfg)
    dt = traj.times[1] - traj.times[0]
    rates = np.diff(traj.states, axis=0) / dt
    targets = -lam_map(traj.states[1:])
    mism = float(np.max(np.linalg.norm(rates - targets, axis=1)))
    tol = dt * max(1.0, float(np.max(np.linalg.norm(targets, axis=1))))
    return GeneratorConsistencyReport(max_mismatch=mism, tolerance=tol,
                                      passed=mism <= tol)


# ---------------------------------------------------------------------------
# CSV dumps


def write_trajectory_csv(traj: SemigroupTrajectory, path) -> None:
    """Columns t and the coordinates of the state."""
    d = traj.states.shape[1]
    with open(path, "w") as fh:
        fh.write(",".join(["t"] + [f"u{k}" for k in range(d)]) + "\n")
        for i, t in enumerate(traj.times):
            row = [f"{t:.17g}"] + [f"{x:.17g}" for x in traj.states[i]]
            fh.write(",".join(row) + "\n")


def write_ufield_csvs(traj: SemigroupTrajectory, p: FracParams,
                      directory) -> list:
    """One CSV per recorded time: columns z, t(z), coordinates of U(., t_k)."""
    import os
    if traj.U_field is None:
        raise ValueError("trajectory was evolved without record_U")
    paths = []
    z = traj.mesh.nodes
    r = t_of_z(p, z)
    for j, tk in enumerate(traj.U_times):
        path = os.path.join(directory, f"ufield_{j:04d}.csv")
        d = traj.U_field.shape[2]
        with open(path, "w") as fh:
            fh.write(f"# t={tk:.17g}\n")
            fh.write(",".join(["z", "r"] + [f"U{k}" for k in range(d)]) + "\n")
            for i in range(len(z)):
                row = [f"{z[i]:.17g}", f"{r[i]:.17g}"] + \
                    [f"{traj.U_field[j, i, k]:.17g}" for k in range(d)]
                fh.write(",".join(row) + "\n")
        paths.append(path)
    return paths
