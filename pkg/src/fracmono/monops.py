"""Maximal monotone operators exposed through their resolvents.

Every operator is a :class:`MonotoneOp`: a resolvent oracle u = (I + mu*A)^{-1} w
plus optional direct evaluation of the minimal selection, a known zero, and
metadata.  Resolvents are batched: the input may be a single vector of shape
(dim,) or a stack of shape (K, dim), and the output has the same shape.  All
built-in operators vectorize over the batch, which is what makes the extension
solver's node-wise resolvent sweeps fast.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .hilbert import as_hvector

_MIN_SELECTION_LAMBDAS = (1e-2, 5e-3, 2.5e-3)
#: residual ||u + mu A u - w|| <= _INNER_TOL * (1 + ||w||); kept near the
#: float floor so the inner error never limits outer fixed-point accuracy
_INNER_TOL = 1e-13


class ResolventError(RuntimeError):
    """Inner solver of a resolvent failed to converge; carries the residual."""

    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


@dataclass
class MonotoneOp:
    """A maximal monotone operator on R^dim given by its resolvent.

    resolvent(mu, w) solves u + mu*A(u) contains w.  direct_eval, when present,
    is the (single-valued) minimal selection on D(A).  zero is a point y with
    0 in A(y).  domain_projection maps onto the closure of D(A).
    """

    dim: int
    resolvent: Callable[[float, np.ndarray], np.ndarray]
    zero: np.ndarray
    direct_eval: Callable[[np.ndarray], np.ndarray] | None = None
    domain_projection: Callable[[np.ndarray], np.ndarray] | None = None
    label: str = ""
    curvature_hint: float | None = None  # smallest curvature (truncation)
    curvature_max: float | None = None   # largest curvature (mesh grading)
    is_lattice: bool = False  # states live on a measure grid (order structure)

    def __post_init__(self):
        self.zero = as_hvector(self.zero, self.dim)


def _batched(w, dim):
    w = np.asarray(w, dtype=float)
    single = w.ndim == 1
    if single:
        w = w[None, :]
    if w.shape[-1] != dim:
        raise ValueError(f"expected vectors of dimension {dim}, got {w.shape}")
    return w, single


def resolve(op: MonotoneOp, mu: float, w) -> np.ndarray:
    """Evaluate the resolvent u = (I + mu*A)^{-1} w."""
    if mu <= 0:
        raise ValueError(f"resolvent parameter must be positive, got {mu}")
    wa, single = _batched(w, op.dim)
    u = op.resolvent(float(mu), wa)
    return u[0] if single else u


def yosida(op: MonotoneOp, lam: float, u) -> np.ndarray:
    """Yosida approximation A_lam u = (u - J_lam u) / lam."""
    if lam <= 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    ua, single = _batched(u, op.dim)
    out = (ua - op.resolvent(float(lam), ua)) / lam
    return out[0] if single else out


def minimal_selection(op: MonotoneOp, u) -> np.ndarray:
    """Least-norm element of A(u): direct evaluation when available, otherwise
    the lam -> 0 limit of the Yosida approximation by Richardson extrapolation.

    Divergence of the lambda-sequence (norm growth beyond 10x between steps)
    signals u outside D(A) and raises.
    """
    ua, single = _batched(u, op.dim)
    if op.direct_eval is not None:
        out = op.direct_eval(ua)
        return out[0] if single else out
    tiers = [yosida(op, lam, ua) for lam in _MIN_SELECTION_LAMBDAS]
    norms = [np.linalg.norm(t, axis=-1) for t in tiers]
    ratios = [b / (a + 1e-30) for a, b in zip(norms, norms[1:])]
    # points outside D(A) make ||A_lam u|| grow like 1/lam: factor ~2 per
    # halving, sustained; convergent sequences have ratios tending to 1
    if any(np.any(r > 10.0) for r in ratios) or \
            all(np.any(r >= 1.9) for r in ratios):
        raise ValueError(
            "Yosida values diverge as lambda -> 0; point appears to lie "
            "outside D(A)")
    # A_lam = A0 + c1*lam + c2*lam^2 + ...; two Richardson stages on halving
    r1 = 2.0 * tiers[1] - tiers[0]
    r2 = 2.0 * tiers[2] - tiers[1]
    out = (4.0 * r2 - r1) / 3.0
    return out[0] if single else out


# ---------------------------------------------------------------------------
# concrete operators


def make_linear_spd(M) -> MonotoneOp:
    """Linear operator A = M for symmetric positive semidefinite M.

    The resolvent factorizes I + mu*M once per step size (Cholesky) and reuses
    the factor across calls.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("matrix must be square")
    scale = max(1.0, float(np.max(np.abs(M))))
    if float(np.max(np.abs(M - M.T))) > 1e-12 * scale:
        raise ValueError("matrix is not symmetric")
    dim = M.shape[0]
    eigs = sla.eigvalsh(M)
    eigmin, eigmax = float(eigs[0]), float(eigs[-1])
    if eigmin < -1e-10 * scale:
        raise ValueError(f"matrix is not positive semidefinite (min eig {eigmin})")
    factors: dict[float, tuple] = {}

    def resolvent(mu, w):
        key = mu
        if key not in factors:
            factors[key] = sla.cho_factor(np.eye(dim) + mu * M)
        return sla.cho_solve(factors[key], w.T).T

    return MonotoneOp(
        dim=dim, resolvent=resolvent, zero=np.zeros(dim),
        direct_eval=lambda u: u @ M.T,
        label=f"linear_spd({dim}x{dim})",
        curvature_hint=max(eigmin, 0.0) if eigmin > 1e-14 * scale else None,
        curvature_max=eigmax if eigmax > 0 else None)


def make_scalar(a: float, dim: int = 1) -> MonotoneOp:
    """A = a * identity with a >= 0."""
    if a < 0:
        raise ValueError("coefficient must be nonnegative")
    return MonotoneOp(
        dim=dim, resolvent=lambda mu, w: w / (1.0 + mu * a),
        zero=np.zeros(dim), direct_eval=lambda u: a * u,
        label=f"scalar({a})", curvature_hint=a if a > 0 else None,
        curvature_max=a if a > 0 else None)


def make_box(lo: float, hi: float, dim: int = 1) -> MonotoneOp:
    """Subdifferential of the indicator of the box [lo, hi]^dim.

    The resolvent is the componentwise clamp for every mu; the known zero is
    the projection of the origin onto the box.
    """
    if not lo < hi:
        raise ValueError("box requires lo < hi")
    clamp = lambda u: np.clip(u, lo, hi)
    return MonotoneOp(
        dim=dim, resolvent=lambda mu, w: clamp(w),
        zero=clamp(np.zeros(dim)), domain_projection=clamp,
        label=f"box[{lo},{hi}]^{dim}")


def make_power_prox(q: float, coeff: float = 1.0, dim: int = 1) -> MonotoneOp:
    """Componentwise power operator A(u) = coeff * |u|^(q-2) u, q > 1."""
    if q <= 1:
        raise ValueError("exponent q must exceed 1")
    if coeff <= 0:
        raise ValueError("coefficient must be positive")

    def resolvent(mu, w):
        # solve r + mu*c*r^(q-1) = |w| componentwise, r >= 0, by bisection
        target = np.abs(w)
        lo = np.zeros_like(target)
        hi = target.copy()
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            g = mid + mu * coeff * mid ** (q - 1.0) - target
            high = g > 0
            hi = np.where(high, mid, hi)
            lo = np.where(high, lo, mid)
            if np.max(hi - lo) <= 1e-16 * (1.0 + np.max(target)):
                break
        return np.sign(w) * 0.5 * (lo + hi)

    return MonotoneOp(
        dim=dim, resolvent=resolvent, zero=np.zeros(dim),
        direct_eval=lambda u: coeff * np.abs(u) ** (q - 2.0) * u
        if q >= 2 else coeff * np.sign(u) * np.abs(u) ** (q - 1.0),
        label=f"power({q})")


# ---------------------------------------------------------------------------
# Leray-Lions / p-Laplace operators on grids


def plaplace_flux(p: float) -> Callable:
    """Edge flux a(x, xi) = |xi|^(p-2) xi of the p-Laplacian."""
    def flux(x, xi):
        return np.abs(xi) ** (p - 2.0) * xi if p != 2.0 else xi
    return flux


def weighted_plaplace_flux(p: float, coeff: Callable) -> Callable:
    """Flux c(x) |xi|^(p-2) xi with a strictly positive coefficient c."""
    def flux(x, xi):
        c = coeff(x)
        return c * np.abs(xi) ** (p - 2.0) * xi if p != 2.0 else c * xi
    return flux


@dataclass
class LerayLionsField:
    """Monotone edge flux with p-growth plus the lateral boundary condition.

    lateral_bc is "dirichlet", "neumann", or ("robin", b) where b >= 0 is the
    boundary coefficient (scalar or per-boundary-node array).  The flux acts on
    directional edge gradients; this covers the p-Laplace prototype and its
    weighted variants on grids.
    """

    p: float
    eta: float = 1.0
    flux: Callable | None = None
    dflux: Callable | None = None
    lateral_bc: object = "dirichlet"

    def __post_init__(self):
        if self.p <= 1:
            raise ValueError("p must exceed 1")
        if self.eta <= 0:
            raise ValueError("coercivity constant must be positive")
        if self.flux is None:
            p = self.p
            self.flux = plaplace_flux(p)
            self.dflux = lambda x, xi: (p - 1.0) * np.abs(xi) ** (p - 2.0) \
                if p != 2.0 else np.ones_like(xi)

    def d_flux(self, x, xi):
        if self.dflux is not None:
            return self.dflux(x, xi)
        h = 1e-6 * (1.0 + np.abs(xi))
        return (self.flux(x, xi + h) - self.flux(x, xi - h)) / (2.0 * h)

    def check_coercivity(self, rng, n_samples: int = 200) -> float:
        """Worst sampled margin of a(x,xi)*xi - eta*|xi|^p (should be >= 0)."""
        x = rng.uniform(0.0, 1.0, n_samples)
        xi = rng.standard_normal(n_samples) * 3.0
        margin = self.flux(x, xi) * xi - self.eta * np.abs(xi) ** self.p
        return float(np.min(margin))

    def check_monotonicity(self, rng, n_samples: int = 200) -> float:
        """Worst sampled value of (a(x,xi1)-a(x,xi2))*(xi1-xi2) over xi1 != xi2."""
        x = rng.uniform(0.0, 1.0, n_samples)
        xi1 = rng.standard_normal(n_samples) * 3.0
        xi2 = xi1 + rng.standard_normal(n_samples) * 2.0 + 1e-3
        return float(np.min(
            (self.flux(x, xi1) - self.flux(x, xi2)) * (xi1 - xi2)))


@dataclass(frozen=True)
class GridSpec:
    """Rectangular lattice: shape (n,) or (nx, ny), spacing dx.

    dx = 1 gives the unweighted graph operator (no cell measure), which is the
    convention for the small graph examples.
    """

    shape: tuple
    dx: float = 1.0

    def __post_init__(self):
        if len(self.shape) not in (1, 2) or any(n < 1 for n in self.shape):
            raise ValueError("grid must be 1-D or 2-D with positive extents")
        if self.dx <= 0:
            raise ValueError("dx must be positive")


def _lattice_edges(shape):
    """Node pairs of nearest-neighbour edges and the boundary node list."""
    if len(shape) == 1:
        n = shape[0]
        edges = [(i, i + 1) for i in range(n - 1)]
        boundary = [0, n - 1] if n > 1 else [0]
        return n, edges, sorted(set(boundary))
    nx, ny = shape
    idx = lambda i, j: i * ny + j
    edges = []
    for i in range(nx):
        for j in range(ny):
            if i + 1 < nx:
                edges.append((idx(i, j), idx(i + 1, j)))
            if j + 1 < ny:
                edges.append((idx(i, j), idx(i, j + 1)))
    boundary = [idx(i, j) for i in range(nx) for j in range(ny)
                if i in (0, nx - 1) or j in (0, ny - 1)]
    return nx * ny, edges, sorted(set(boundary))


def make_plap_grid(field: LerayLionsField, grid: GridSpec) -> MonotoneOp:
    """Discrete -div(a(x, grad u)) on a lattice with the selected lateral BC.

    Dirichlet pins zero ghost values outside the lattice ends, Neumann acts on
    the mean-zero subspace, Robin adds b|u|^(p-2)u at boundary nodes.  The
    resolvent runs a damped Newton iteration on the strictly monotone system,
    batched over query points.
    """
    n, interior_edges, boundary = _lattice_edges(grid.shape)
    dx = grid.dx
    bc = field.lateral_bc
    bc_kind = bc[0] if isinstance(bc, tuple) else bc
    if bc_kind not in ("dirichlet", "neumann", "robin"):
        raise ValueError(f"unknown lateral boundary condition {bc!r}")

    rows, cols, signs, xpos = [], [], [], []
    for e, (i, j) in enumerate(interior_edges):
        rows += [e, e]
        cols += [i, j]
        signs += [-1.0, 1.0]
        xpos.append(0.5 * (i + j) * dx)  # edge midpoint (flattened index for 2-D)
    n_int = len(interior_edges)
    ghost = []
    if bc_kind == "dirichlet":
        for k, i in enumerate(boundary):
            e = n_int + k
            rows.append(e)
            cols.append(i)
            signs.append(1.0)
            xpos.append(i * dx)
            ghost.append(e)
    n_edges = n_int + len(ghost)
    D = sp.csr_matrix(
        (np.array(signs) / dx, (rows, cols)), shape=(n_edges, n))
    Dd = D.toarray()  # lattice sizes here are small; dense Jacobians are fine
    edge_x = np.array(xpos)
    node_measure = dx ** len(grid.shape) if dx != 1.0 else 1.0
    edge_measure = dx ** len(grid.shape)  # length*cross-section of an edge cell

    robin_b = None
    if bc_kind == "robin":
        b = np.asarray(bc[1], dtype=float) if not np.isscalar(bc[1]) else \
            np.full(len(boundary), float(bc[1]))
        if np.any(b < 0):
            raise ValueError("Robin coefficient must be nonnegative")
        robin_b = np.zeros(n)
        robin_b[boundary] = b
        bd_measure = dx ** (len(grid.shape) - 1)

    p = field.p
    eps_reg = 1e-12 if p < 2 else 0.0
    chain = len(grid.shape) == 1  # tridiagonal Jacobians, solved by Thomas

    def apply_B(u):
        # u: (K, n) -> (K, n)
        xi = u @ Dd.T
        a = field.flux(edge_x[None, :], xi) * (edge_measure / node_measure)
        out = a @ Dd
        if robin_b is not None:
            out = out + (bd_measure / node_measure) * robin_b * \
                np.sign(u) * np.abs(u) ** (p - 1.0)
        return out

    def project(u):
        return u - np.mean(u, axis=-1, keepdims=True)

    def jacobian_diags(mu, u):
        """Tridiagonal Jacobian bands of u + mu*B(u) for 1-D chains."""
        xi = u @ Dd.T
        if eps_reg:
            xi = np.sign(xi) * np.sqrt(xi * xi + eps_reg ** 2)
        wgt = field.d_flux(edge_x[None, :], xi) * \
            (mu * edge_measure / node_measure) / dx ** 2
        wint = wgt[:, :n - 1]
        diag = np.ones_like(u)
        diag[:, :-1] += wint
        diag[:, 1:] += wint
        if bc_kind == "dirichlet":
            diag[:, boundary] += wgt[:, n - 1:]
        if robin_b is not None:
            usq = u * u + eps_reg ** 2
            diag += mu * (p - 1.0) * usq ** ((p - 2.0) / 2.0) * robin_b * \
                (bd_measure / node_measure)
        return -wint, diag, -wint  # sub, diag, super

    def thomas(sub, diag, sup, rhs):
        # batched tridiagonal solve; diagonally dominant by construction
        K, m = rhs.shape
        if m == 1:
            return rhs / diag
        c = np.empty((K, m - 1))
        d = np.empty((K, m))
        c[:, 0] = sup[:, 0] / diag[:, 0]
        d[:, 0] = rhs[:, 0] / diag[:, 0]
        for i in range(1, m):
            den = diag[:, i] - sub[:, i - 1] * c[:, i - 1]
            if i < m - 1:
                c[:, i] = sup[:, i] / den
            d[:, i] = (rhs[:, i] - sub[:, i - 1] * d[:, i - 1]) / den
        x = np.empty((K, m))
        x[:, -1] = d[:, -1]
        for i in range(m - 2, -1, -1):
            x[:, i] = d[:, i] - c[:, i] * x[:, i + 1]
        return x

    warm: dict = {}

    def resolvent(mu, w):
        # the divergence form has zero column sums, so the resolvent preserves
        # means; the Neumann operator formally lives on the mean-zero subspace
        # (domain_projection), but no projection is forced here
        K = w.shape[0]
        u = warm.get((K, mu))
        u = w.copy() if u is None else u.copy()

        def residual(u):
            return u + mu * apply_B(u) - w

        r = residual(u)
        rn = np.linalg.norm(r, axis=1)
        tol = _INNER_TOL * (1.0 + np.linalg.norm(w, axis=1))
        for _ in range(100):
            if np.all(rn <= tol):
                break
            if chain:
                step = thomas(*jacobian_diags(mu, u), r)
            else:
                xi = u @ Dd.T
                if eps_reg:
                    xi = np.sign(xi) * np.sqrt(xi * xi + eps_reg ** 2)
                wgt = field.d_flux(edge_x[None, :], xi)
                J = np.eye(n)[None, :, :] + (mu * edge_measure / node_measure) * \
                    np.einsum("ei,ke,ej->kij", Dd, wgt, Dd)
                if robin_b is not None:
                    usq = u * u + eps_reg ** 2
                    dr = (p - 1.0) * usq ** ((p - 2.0) / 2.0) * robin_b * \
                        (bd_measure / node_measure)
                    J += mu * dr[:, None, :] * np.eye(n)[None, :, :]
                step = np.linalg.solve(J, r[..., None])[..., 0]
            alpha = np.ones(K)
            for _ in range(40):
                trial = u - alpha[:, None] * step
                rtn = np.linalg.norm(residual(trial), axis=1)
                worse = rtn > (1.0 - 1e-4 * alpha) * rn
                if not np.any(worse):
                    break
                alpha = np.where(worse, alpha * 0.5, alpha)
            u = u - alpha[:, None] * step
            r = residual(u)
            rn = np.linalg.norm(r, axis=1)
        if np.any(rn > tol):
            raise ResolventError(
                "grid operator resolvent stagnated",
                residual=float(np.max(rn)))
        warm[(K, mu)] = u.copy()
        return u

    return MonotoneOp(
        dim=n, resolvent=resolvent, zero=np.zeros(n),
        direct_eval=lambda u: apply_B(u),
        domain_projection=project if bc_kind == "neumann" else None,
        label=f"leray_lions(p={p},{bc_kind},{'x'.join(map(str, grid.shape))})",
        is_lattice=True)


# ---------------------------------------------------------------------------
# CLI-facing constructor


def operator_from_spec(spec: dict) -> MonotoneOp:
    """Build an operator from a flat key/value mapping (the CLI config section).

    kind selects the family; matrices are referenced as CSV paths.
    """
    kind = spec.get("kind")
    if kind == "linear_spd":
        path = spec.get("matrix")
        if path is None:
            raise ValueError("operator.matrix: CSV path required for linear_spd")
        M = np.loadtxt(path, delimiter=",", ndmin=2)
        return make_linear_spd(M)
    if kind == "scalar":
        return make_scalar(float(spec.get("a", 1.0)), int(spec.get("dim", 1)))
    if kind == "box":
        return make_box(float(spec.get("lo", 0.0)), float(spec.get("hi", 1.0)),
                        int(spec.get("dim", 1)))
    if kind == "power_prox":
        return make_power_prox(float(spec.get("q", 3.0)),
                               float(spec.get("coeff", 1.0)),
                               int(spec.get("dim", 1)))
    if kind in ("plap_grid", "leray_lions"):
        p = float(spec.get("p", 2.0))
        bc = spec.get("bc", "dirichlet")
        if bc == "robin":
            bc = ("robin", float(spec.get("b", 1.0)))
        shape = tuple(int(x) for x in str(spec.get("n", "8")).split("x"))
        field = LerayLionsField(p=p, eta=float(spec.get("eta", 1.0)),
                                lateral_bc=bc)
        return make_plap_grid(field, GridSpec(shape, float(spec.get("dx", 1.0))))
    raise ValueError(f"operator.kind: unknown operator kind {kind!r}")
