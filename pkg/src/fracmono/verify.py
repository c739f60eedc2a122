"""Independent oracles and structural checkers used by the acceptance suite.

Nothing here shares solver code with the extension module: the spectral power
comes from a full eigendecomposition, the scalar extension profile from the
modified Bessel function evaluated by its integral representation, and the
brute-force reference solves the coupled discrete system by a damped
monotone-inclusion iteration with tiny steps.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .extension import (DirichletBC, RobinBC, neumann_trace_weights,
                        trace_window_scale)
from .hilbert import GridFunction, as_hvector
from .mesh import FracParams, ZMesh
from .monops import MonotoneOp, resolve


# ---------------------------------------------------------------------------
# normal contractions


@dataclass(frozen=True)
class NormalContraction:
    """Convex j: R -> [0, inf) with j(0) = 0, used to probe complete contractions.

    kinds: "pos_power" ([r]+)^q, "abs_power" |r|^q (q >= 1),
    "trunc" [|r| - k]+ (k >= 0).
    """

    kind: str
    param: float

    def __post_init__(self):
        if self.kind in ("pos_power", "abs_power") and self.param < 1.0:
            raise ValueError("power must be >= 1")
        if self.kind == "trunc" and self.param < 0.0:
            raise ValueError("truncation level must be >= 0")
        if self.kind not in ("pos_power", "abs_power", "trunc"):
            raise ValueError(f"unknown kind {self.kind!r}")

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == "pos_power":
            return np.maximum(r, 0.0) ** self.param
        if self.kind == "abs_power":
            return np.abs(r) ** self.param
        return np.maximum(np.abs(r) - self.param, 0.0)

    def validate(self, rng=None) -> bool:
        """Sampled convexity and j(0) = 0."""
        if float(self(0.0)) != 0.0:
            return False
        rng = rng or np.random.default_rng(0)
        a = rng.uniform(-5, 5, 500)
        b = rng.uniform(-5, 5, 500)
        lam = rng.uniform(0, 1, 500)
        lhs = self(lam * a + (1 - lam) * b)
        rhs = lam * self(a) + (1 - lam) * self(b)
        return bool(np.all(lhs <= rhs + 1e-12))

    @property
    def label(self) -> str:
        return f"{self.kind}({self.param})"


def default_j_set():
    return [NormalContraction("pos_power", 2.0),
            NormalContraction("abs_power", 1.0),
            NormalContraction("trunc", 0.1),
            NormalContraction("trunc", 1.0)]


# ---------------------------------------------------------------------------
# spectral oracle


def spectral_frac_power(M, s: float) -> np.ndarray:
    """V diag(lam^s) V^T from the full eigendecomposition of symmetric PSD M."""
    M = np.asarray(M, dtype=float)
    scale = max(1.0, float(np.max(np.abs(M))))
    if float(np.max(np.abs(M - M.T))) > 1e-12 * scale:
        raise ValueError("matrix is not symmetric")
    lam, V = sla.eigh(M)
    if lam[0] < -1e-10 * scale:
        raise ValueError("matrix is not positive semidefinite")
    lam = np.clip(lam, 0.0, None)
    return (V * lam ** s) @ V.T


# ---------------------------------------------------------------------------
# scalar Bessel oracle


def _bessel_k(nu: float, x) -> np.ndarray:
    """Modified Bessel function of the second kind via the Laplace-type
    integral  K_nu(x) = int_0^inf exp(-x cosh(tau)) cosh(nu tau) dtau,
    truncated adaptively and evaluated by composite Simpson quadrature."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(x <= 0):
        raise ValueError("argument must be positive")
    xmin = float(np.min(x))
    # choose T with x*cosh(T) - |nu| T >= log-budget for a 1e-18 tail
    budget = -np.log(1e-18)
    T = float(np.arccosh(max(2.0, budget / xmin)))
    for _ in range(4):
        T = float(np.arccosh(max(2.0, (budget + abs(nu) * T) / xmin)))
    n = 8 * max(200, int(40 * T))  # Simpson needs an even interval count
    tau = np.linspace(0.0, T, n + 1)
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    w *= T / n / 3.0
    # exponent kept in log-form to avoid overflow of cosh(nu tau)
    expo = -np.outer(x, np.cosh(tau))
    lc = np.log(np.cosh(nu * tau)) if nu != 0 else np.zeros_like(tau)
    return np.exp(expo + lc[None, :]) @ w


#: arguments beyond this underflow exp(-x) in float64
_UNDERFLOW_X = 700.0


def bessel_scalar_extension(a: float, s: float, phi: float, t):
    """Bounded solution of  u'' + ((1-2s)/t) u' = a u,  u(0) = phi,
    and its derivative:  u(t) = phi * 2^(1-s)/Gamma(s) * (sqrt(a) t)^s K_s(...).

    Returns (u, du, underflowed).  For t beyond the underflow range both
    values are 0 with the flag set.  At t = 0, u = phi and du is the
    (possibly infinite) limit of the derivative.
    """
    if a <= 0:
        raise ValueError("curvature a must be positive")
    p = FracParams(s)  # validates s
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    scalar = np.ndim(t) == 0
    u = np.empty_like(t_arr)
    du = np.empty_like(t_arr)
    flag = np.zeros(t_arr.shape, dtype=bool)
    c = 2.0 ** (1.0 - s) / math.gamma(s)
    sq = math.sqrt(a)
    x = sq * t_arr
    zero = t_arr == 0.0
    over = x >= _UNDERFLOW_X
    mid = ~zero & ~over
    if np.any(mid):
        xm = x[mid]
        ks = _bessel_k(s, xm)
        k1s = _bessel_k(1.0 - s, xm)
        u[mid] = phi * c * xm ** s * ks
        # d/dx [x^s K_s(x)] = -x^s K_{s-1}(x) and K_{-nu} = K_nu
        du[mid] = -phi * c * sq * xm ** s * k1s
    if np.any(zero):
        u[zero] = phi
        if s > 0.5:
            du[zero] = 0.0
        elif s == 0.5:
            du[zero] = -sq * phi
        else:
            du[zero] = -math.inf * np.sign(phi) if phi != 0 else 0.0
    if np.any(over):
        u[over] = 0.0
        du[over] = 0.0
        flag[over] = True
    if scalar:
        return float(u[0]), float(du[0]), bool(flag[0])
    return u, du, flag


def bessel_dtn_constant(s: float) -> float:
    """The scalar DtN normalization C(s) = lim_{t->0} -t^(1-2s) u'(t) for the
    unit-curvature profile with phi = 1, derived from the Bessel oracle by
    Richardson extrapolation in the known correction exponents (powers of
    t^(2-2s) interleaved with t^2)."""
    p = FracParams(s)

    def g(t):
        _, du, _ = bessel_scalar_extension(1.0, s, 1.0, t)
        return -t ** (1.0 - 2.0 * s) * du

    e0 = 2.0 - 2.0 * s
    expos = sorted({e0, 2.0 * e0, 3.0 * e0, 2.0, 2.0 + e0})
    # merge near-degenerate exponents (s near 0 makes 2-2s approach 2)
    merged = [expos[0]]
    for e in expos[1:]:
        if e - merged[-1] > 0.1:
            merged.append(e)
    levels = merged[:3]
    t0 = 1e-3
    vals = [g(t0 / 2.0 ** k) for k in range(len(levels) + 1)]
    for e in levels:
        vals = [(2.0 ** e * vals[i + 1] - vals[i]) / (2.0 ** e - 1.0)
                for i in range(len(vals) - 1)]
    return float(vals[0])


# ---------------------------------------------------------------------------
# brute-force reference for coarse meshes


def brute_force_bvp(op: MonotoneOp, p: FracParams, phi, mesh: ZMesh,
                    boundary: object | None = None, tol: float = 1e-12,
                    max_iters: int = 4_000_000) -> GridFunction:
    """Reference solution of the coupled discrete system on a coarse mesh.

    The full inclusion over all nodes is solved at once by a forward-backward
    iteration with a tiny step (forward on the weighted second-difference
    part, backward on the node-wise operator), independent of the splitting
    solver.  Intended for dim * nodes <= 200.
    """
    phi = as_hvector(phi, op.dim)
    z = mesh.nodes
    N = mesh.n_intervals
    d = op.dim
    if d * (N + 1) > 200:
        raise ValueError("brute-force reference is restricted to small instances")
    beta = p.zexp
    h = np.diff(z)
    robin = isinstance(boundary, RobinBC)

    # hat-function moments of r^beta, re-derived cell by cell
    def cell_rise(a, b):
        return ((b ** (beta + 2) - a ** (beta + 2)) / (beta + 2)
                - a * (b ** (beta + 1) - a ** (beta + 1)) / (beta + 1)) / (b - a)

    def cell_fall(a, b):
        return (b * (b ** (beta + 1) - a ** (beta + 1)) / (beta + 1)
                - (b ** (beta + 2) - a ** (beta + 2)) / (beta + 2)) / (b - a)

    n = (N - 1) + (1 if robin else 0)
    k0 = 1 if robin else 0
    L = np.zeros((n, n))
    me = np.zeros(n)
    b0 = np.zeros((n, d))
    y = op.zero
    far_dirichlet = mesh.far_bc == "dirichlet_at_zero"
    for i in range(1, N):  # grid node i, unknown index i-1+k0
        r = i - 1 + k0
        me[r] = cell_rise(z[i - 1], z[i]) + cell_fall(z[i], z[i + 1])
        L[r, r] = 1.0 / h[i - 1] + 1.0 / h[i]
        if i - 1 >= 1 or robin:
            L[r, r - 1] = -1.0 / h[i - 1]
        else:
            b0[r] += phi / h[0]
        if i + 1 <= N - 1:
            L[r, r + 1] = -1.0 / h[i]
        elif far_dirichlet:
            b0[r] += y / h[i]
        else:
            L[r, r] -= 1.0 / h[i]  # zero far flux
    tc = p.trace_const
    if robin:
        me[0] = h[0] / 2.0
        lam_t = boundary.lam
        pt = boundary.phi
        w = neumann_trace_weights(mesh, p,
                                  window_scale=trace_window_scale(op, p))
        m_fit = len(w)
        # row: -tc * sum w_i (v_i - v0) + lam_t v0 = pt
        L[0, 0] = lam_t + tc * np.sum(w)
        L[0, 1:1 + m_fit] = -tc * w
        b0[0] = pt

    Lw = L / me[:, None]
    bw = b0 / me[:, None]
    # safe forward step from a crude norm bound of the weighted matrix
    tau = 0.9 / float(np.linalg.norm(Lw, 2))
    V = np.tile(phi, (n, 1))
    scale = 1.0 + float(np.linalg.norm(phi))
    check_every = 500
    for it in range(1, max_iters + 1):
        G = V - tau * (Lw @ V) + tau * bw
        Vn = G.copy()
        Vn[k0:] = resolve(op, tau, G[k0:])
        if it % check_every == 0 or it == max_iters:
            disp = float(np.max(np.abs(Vn - V))) / tau
            if disp <= tol * scale:
                V = Vn
                break
        V = Vn
    else:
        raise RuntimeError("brute-force iteration did not converge in budget")
    if robin:
        inner = V
    else:
        inner = np.vstack([phi[None, :], V])
    far = y[None, :] if far_dirichlet else inner[-1:, :]
    return GridFunction(mesh, np.vstack([inner, far]))


# ---------------------------------------------------------------------------
# complete-contraction checker


def sample_pairs(rng, dim: int, n_pairs: int, radius: float = 10.0):
    """Half generic pairs with norm <= radius, half ordered pairs
    (u, u + nonnegative perturbation)."""
    n_ord = n_pairs // 2
    U = rng.standard_normal((n_pairs, dim))
    norms = np.linalg.norm(U, axis=1, keepdims=True)
    U *= np.minimum(1.0, radius / np.maximum(norms, 1e-12))
    V = np.empty_like(U)
    V[:n_pairs - n_ord] = rng.standard_normal((n_pairs - n_ord, dim))
    nv = np.linalg.norm(V[:n_pairs - n_ord], axis=1, keepdims=True)
    V[:n_pairs - n_ord] *= np.minimum(1.0, radius / np.maximum(nv, 1e-12))
    V[n_pairs - n_ord:] = U[n_pairs - n_ord:] + \
        np.abs(rng.standard_normal((n_ord, dim)))
    ordered = np.zeros(n_pairs, dtype=bool)
    ordered[n_pairs - n_ord:] = True
    return U, V, ordered


@dataclass
class CheckEntry:
    check: str
    instances: int
    worst_margin: float
    passed: bool

    def to_dict(self):
        return {"check": self.check, "instances": self.instances,
                "worst_margin": self.worst_margin, "pass": self.passed}


@dataclass
class ContractionReport:
    entries: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def worst_margin(self) -> float:
        return min((e.worst_margin for e in self.entries), default=0.0)

    def to_json(self) -> str:
        return json.dumps([e.to_dict() for e in self.entries], indent=2)


def check_complete_contraction(map_fn, sampler, j_set=None, n_pairs: int = 200,
                               rng=None, margin: float = -1e-8,
                               batched: bool = True) -> ContractionReport:
    """Assert sum_i j((Su - Su')_i) <= sum_i j((u - u')_i) for each normal
    contraction j over sampled pairs; additionally reports order preservation
    on ordered pairs and L1/Linf non-expansion.

    map_fn maps a batch (K, dim) to (K, dim) when batched=True, otherwise a
    single vector to a single vector.  sampler(rng, n_pairs) must return
    (U, V, ordered_mask).
    """
    rng = rng or np.random.default_rng(0)
    j_set = j_set if j_set is not None else default_j_set()
    for j in j_set:
        if not j.validate(rng):
            raise ValueError(f"{j.label} is not a normal contraction")
    U, V, ordered = sampler(rng, n_pairs)
    if batched:
        SU = np.asarray(map_fn(U))
        SV = np.asarray(map_fn(V))
    else:
        SU = np.stack([np.asarray(map_fn(u)) for u in U])
        SV = np.stack([np.asarray(map_fn(v)) for v in V])
    din = U - V
    dout = SU - SV
    report = ContractionReport()
    for j in j_set:
        margins = np.sum(j(din), axis=1) - np.sum(j(dout), axis=1)
        worst = float(np.min(margins))
        report.entries.append(CheckEntry(
            check=f"complete_contraction[{j.label}]", instances=n_pairs,
            worst_margin=worst, passed=worst >= margin))
    if np.any(ordered):
        # ordered pairs have V >= U componentwise; outputs must stay ordered
        viol = float(np.min((SV - SU)[ordered]))
        report.entries.append(CheckEntry(
            check="order_preservation", instances=int(np.sum(ordered)),
            worst_margin=viol, passed=viol >= margin))
    l1 = np.sum(np.abs(din), axis=1) - np.sum(np.abs(dout), axis=1)
    linf = np.max(np.abs(din), axis=1) - np.max(np.abs(dout), axis=1)
    for name, m in (("l1_nonexpansion", l1), ("linf_nonexpansion", linf)):
        worst = float(np.min(m))
        report.entries.append(CheckEntry(
            check=name, instances=n_pairs, worst_margin=worst,
            passed=worst >= margin))
    return report
