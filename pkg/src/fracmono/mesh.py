"""Graded meshes for the extension variable z and the t <-> z change of variable.

The transformed equation lives on the half line in the variable
z = (t / 2s)^(2s); its solutions are C^1 up to z = 0 but carry a z^(1/s)
kink in the second derivative, so meshes are graded toward 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .hilbert import GridFunction

DIRICHLET_AT_ZERO = "dirichlet_at_zero"
HOMOGENEOUS_NEUMANN = "homogeneous_neumann"

#: decay budget for automatic truncation: exp(-sqrt(curvature) * t(Z)) <= 1e-10
_DECAY_LOG = -np.log(1e-10)


@dataclass(frozen=True)
class FracParams:
    """Exponent s and every derived constant the equations use."""

    s: float

    def __post_init__(self):
        if not (0.0 < self.s < 1.0):
            raise ValueError(f"s must lie in (0, 1), got {self.s}")

    @property
    def alpha(self) -> float:
        """Singular coefficient 1 - 2s of the t-variable equation."""
        return 1.0 - 2.0 * self.s

    @property
    def zexp(self) -> float:
        """Weight exponent (1 - 2s)/s multiplying A in the z-variable equation."""
        return (1.0 - 2.0 * self.s) / self.s

    @property
    def underline_s(self) -> float:
        return (1.0 - self.s) / (2.0 * self.s)

    @property
    def overline_s(self) -> float:
        return (3.0 * self.s - 1.0) / (2.0 * self.s)

    @property
    def trace_const(self) -> float:
        """(2s)^(1-2s): converts the z-derivative at 0 into the Neumann limit."""
        return (2.0 * self.s) ** (1.0 - 2.0 * self.s)


@dataclass(frozen=True)
class ZMesh:
    """Strictly increasing nodes with nodes[0] = 0; carries the far-field policy."""

    nodes: np.ndarray
    grading: float = 1.0
    far_bc: str = DIRICHLET_AT_ZERO

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        object.__setattr__(self, "nodes", nodes)
        if nodes.ndim != 1 or nodes.shape[0] < 9:
            raise ValueError("mesh needs at least 9 nodes (N >= 8 intervals)")
        if nodes[0] != 0.0:
            raise ValueError("z-mesh must start at 0")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("mesh nodes must be strictly increasing")
        if self.far_bc not in (DIRICHLET_AT_ZERO, HOMOGENEOUS_NEUMANN):
            raise ValueError(f"unknown far_bc {self.far_bc!r}")

    @property
    def Z(self) -> float:
        return float(self.nodes[-1])

    @property
    def n_intervals(self) -> int:
        return self.nodes.shape[0] - 1


@dataclass(frozen=True)
class TMesh:
    """Image of a ZMesh under the change of variable; nodes are t-values."""

    nodes: np.ndarray = field()

    def __post_init__(self):
        object.__setattr__(self, "nodes", np.asarray(self.nodes, dtype=float))


def graded_zmesh(N: int, Z: float, gamma: float = 1.0,
                 far_bc: str = DIRICHLET_AT_ZERO) -> ZMesh:
    """Mesh with nodes Z*(i/N)^gamma, i = 0..N."""
    if N < 8:
        raise ValueError("N must be at least 8")
    if Z <= 0:
        raise ValueError("Z must be positive")
    if gamma < 1.0:
        raise ValueError("grading exponent must be >= 1")
    i = np.arange(N + 1, dtype=float)
    return ZMesh(Z * (i / N) ** gamma, grading=float(gamma), far_bc=far_bc)


def default_grading(p: FracParams, N: int = 1024,
                    curvature_ratio: float | None = None) -> float:
    """Grading that compensates the solution curvature near 0.

    Stiff operators (large curvature ratio) need the boundary layer of their
    fastest mode resolved on a mesh whose extent serves the slowest mode; the
    logarithmic boost shrinks the leading cells accordingly.  The cap keeps
    the boundary functionals above the float noise floor.
    """
    base = max(2.0, 1.0 / (2.0 * p.s))
    if curvature_ratio is not None and curvature_ratio > 1.0 and N > 8:
        base += p.s * np.log(curvature_ratio) / np.log(N / 8.0)
    return min(base, 3.0)


def default_truncation(p: FracParams, curvature: float) -> float:
    """Z large enough that a linear mode with the given smallest curvature has
    decayed below 1e-10 at the far end (in the original variable)."""
    if curvature <= 0:
        raise ValueError("curvature must be positive for automatic truncation")
    return float((_DECAY_LOG / (2.0 * p.s * np.sqrt(curvature))) ** (2.0 * p.s))


def auto_zmesh(p: FracParams, N: int = 1024, curvature: float | None = None,
               z_max: float | None = None, grading: float | None = None,
               curvature_max: float | None = None,
               far_bc: str = DIRICHLET_AT_ZERO) -> ZMesh:
    """Resolve 'auto' mesh parameters.  Nonlinear operators have no proven decay
    rate, so they must supply z_max explicitly (checked by Z-doubling in tests)."""
    if z_max is None:
        if curvature is None:
            raise ValueError(
                "z_max must be given when the operator has no curvature hint")
        z_max = default_truncation(p, curvature)
    if grading is None:
        ratio = None
        if curvature is not None and curvature_max is not None:
            ratio = curvature_max / curvature
        grading = default_grading(p, N, ratio)
    return graded_zmesh(N, z_max, grading, far_bc)


def z_of_t(p: FracParams, t):
    """Change of variable z = (t / 2s)^(2s)."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be nonnegative")
    out = (t / (2.0 * p.s)) ** (2.0 * p.s)
    return out if out.ndim else float(out)


def t_of_z(p: FracParams, z):
    """Inverse change of variable t = 2s * z^(1/(2s))."""
    z = np.asarray(z, dtype=float)
    if np.any(z < 0):
        raise ValueError("z must be nonnegative")
    out = 2.0 * p.s * z ** (1.0 / (2.0 * p.s))
    return out if out.ndim else float(out)


def pullback_to_t(p: FracParams, f: GridFunction,
                  derivative: bool = False) -> GridFunction:
    """Transport a grid function from the z-mesh to the image t-mesh.

    Values transport node-wise: u(t) = v(z(t)).  With derivative=True the input
    is interpreted as v' and transported by the chain rule
    u'(t) = v'(z) * z^(-(1-2s)/(2s)); the node at z = 0 is dropped because the
    factor is singular there for s < 1/2.
    """
    z = np.asarray(f.mesh.nodes, dtype=float)
    t = t_of_z(p, z)
    if not derivative:
        return GridFunction(TMesh(t), f.values.copy())
    keep = z > 0
    factor = z[keep] ** (-(1.0 - 2.0 * p.s) / (2.0 * p.s))
    return GridFunction(TMesh(t[keep]), f.values[keep] * factor[:, None])
