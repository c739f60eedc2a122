"""Finite-dimensional Hilbert-space primitives and weighted norms on grids.

The state space H is R^n with the Euclidean inner product.  Functions of the
extension variable are stored as :class:`GridFunction` objects: one H-vector
per mesh node.  The weighted norms integrate against the Haar measure dz/z,
which is what all a-priori estimates of the solver are stated in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DimensionMismatchError(ValueError):
    pass


class SingularWeightError(ValueError):
    """Raised when a weighted integral has a non-integrable singularity at 0."""


def as_hvector(x, dim: int | None = None) -> np.ndarray:
    """Validate and return a 1-D float array usable as an H-vector."""
    v = np.asarray(x, dtype=float)
    if v.ndim == 0:
        v = v.reshape(1)
    if v.ndim != 1:
        raise DimensionMismatchError(f"H-vector must be 1-D, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("H-vector entries must be finite")
    if dim is not None and v.shape[0] != dim:
        raise DimensionMismatchError(f"expected dimension {dim}, got {v.shape[0]}")
    return v


def inner(a, b) -> float:
    """Euclidean inner product on H; rejects mismatched dimensions."""
    va = as_hvector(a)
    vb = as_hvector(b)
    if va.shape != vb.shape:
        raise DimensionMismatchError(f"dimension mismatch: {va.shape} vs {vb.shape}")
    return float(va @ vb)


def hnorm(a) -> float:
    v = as_hvector(a)
    return float(np.linalg.norm(v))


@dataclass(frozen=True)
class GridFunction:
    """H-valued function sampled on a 1-D mesh: values[i] is the vector at node i."""

    mesh: object  # anything exposing .nodes (ZMesh, TMesh)
    values: np.ndarray  # shape (n_nodes, dim)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        object.__setattr__(self, "values", vals)
        nodes = np.asarray(self.mesh.nodes)
        if vals.shape[0] != nodes.shape[0]:
            raise DimensionMismatchError(
                f"{vals.shape[0]} values for {nodes.shape[0]} mesh nodes")
        if not np.all(np.isfinite(vals)):
            raise ValueError("grid function values must be finite")

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def n_nodes(self) -> int:
        return self.values.shape[0]


def _sq_norms(values: np.ndarray) -> np.ndarray:
    return np.sum(values * values, axis=1)


def weighted_l2_star_norm(f: GridFunction, weight_exponent: float) -> float:
    """Norm ( int ||z^w f(z)||^2 dz/z )^(1/2) by trapezoidal quadrature in log z.

    The substitution tau = log z turns the Haar measure dz/z into dtau, so the
    trapezoidal rule is applied on the log-grid; this keeps the accuracy
    uniform on graded meshes.  If the mesh starts at 0, the first cell is
    integrated analytically assuming f constant there, which requires w > 0
    whenever f(0) != 0.
    """
    nodes = np.asarray(f.mesh.nodes, dtype=float)
    vals = f.values
    w = float(weight_exponent)
    first_cell = 0.0
    if nodes[0] == 0.0:
        f0_sq = float(_sq_norms(vals[:1])[0])
        if f0_sq > 0.0 and w <= 0.0:
            raise SingularWeightError(
                "integrand z^(2w-1)||f||^2 is not integrable at 0 for w <= 0 "
                "with f(0) != 0")
        if w > 0.0:
            # int_0^{z1} z^(2w) f(0)^2 dz/z with f frozen at its value at 0
            first_cell = f0_sq * nodes[1] ** (2 * w) / (2 * w)
        nodes = nodes[1:]
        vals = vals[1:]
    if nodes.shape[0] < 2:
        return float(np.sqrt(first_cell))
    tau = np.log(nodes)
    integrand = nodes ** (2 * w) * _sq_norms(vals)
    total = float(np.trapezoid(integrand, tau)) + first_cell
    return float(np.sqrt(max(total, 0.0)))


def sobolev_mixed_norm(f: GridFunction, df: GridFunction,
                       w1: float, w2: float) -> float:
    """Mixed-weight first-order norm (||z^w1 f||^2 + ||z^w2 f'||^2)^(1/2)."""
    if f.n_nodes != df.n_nodes or f.dim != df.dim:
        raise DimensionMismatchError("f and df must live on the same mesh")
    a = weighted_l2_star_norm(f, w1)
    b = weighted_l2_star_norm(df, w2)
    return float(np.hypot(a, b))
