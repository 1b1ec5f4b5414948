"""Fault surfaces, parameter box, quadrature grids and the H^1_0 sine basis.

Lengths are in kilometers throughout.  A fault is the plane
``x3 = a*x1 + b*x2 + d`` restricted to the square source region
``R = [-L, L]^2``; data are observed on the square ``V = [-W, W]^2`` of the
free surface ``x3 = 0``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PARAM_NAMES = ("a", "b", "d")


@dataclass(frozen=True)
class FaultParams:
    """Geometry parameter m = (a, b, d) of a planar fault."""

    a: float
    b: float
    d: float

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.b, self.d], dtype=float)

    @classmethod
    def from_array(cls, values) -> "FaultParams":
        a, b, d = (float(v) for v in values)
        return cls(a, b, d)

    def shifted(self, delta) -> "FaultParams":
        return FaultParams.from_array(self.as_array() + np.asarray(delta, dtype=float))

    def distance(self, other: "FaultParams") -> float:
        return float(np.linalg.norm(self.as_array() - other.as_array()))

    def max_depth_over(self, half_width: float) -> float:
        """Largest x3 reached by the fault over R (attained at a corner)."""
        return half_width * (abs(self.a) + abs(self.b)) + self.d


@dataclass(frozen=True)
class ParamBox:
    """Box constraint B on (a, b, d); intervals are stored low-to-high."""

    lower: tuple = (-2.0, -2.0, -60.0)
    upper: tuple = (2.0, 2.0, -10.0)

    def __post_init__(self):
        if len(self.lower) != 3 or len(self.upper) != 3:
            raise ValueError("box needs three lower and three upper bounds")
        for name, lo, hi in zip(PARAM_NAMES, self.lower, self.upper):
            if not lo < hi:
                raise ValueError(f"invalid box: {name}_min={lo} must be below {name}_max={hi}")
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.lower)

    @property
    def hi(self) -> np.ndarray:
        return np.array(self.upper)

    def contains(self, m: FaultParams) -> bool:
        v = m.as_array()
        return bool(np.all(v >= self.lo) and np.all(v <= self.hi))

    def sample(self, rng: np.random.Generator) -> FaultParams:
        return FaultParams.from_array(rng.uniform(self.lo, self.hi))

    def to_unit(self, values) -> np.ndarray:
        """Affine rescale of raw (a, b, d) rows to [0, 1]^3."""
        return (np.asarray(values, dtype=float) - self.lo) / (self.hi - self.lo)

    def from_unit(self, t) -> np.ndarray:
        return self.lo + np.asarray(t, dtype=float) * (self.hi - self.lo)


def fault_point(m: FaultParams, y1, y2) -> np.ndarray:
    """Point of the fault surface above (y1, y2); broadcasts over arrays."""
    y1 = np.asarray(y1, dtype=float)
    y2 = np.asarray(y2, dtype=float)
    y1, y2 = np.broadcast_arrays(y1, y2)
    return np.stack([y1, y2, m.a * y1 + m.b * y2 + m.d], axis=-1)


@dataclass(frozen=True, eq=False)
class ObservationGrid:
    """Measurement points P_j on the free surface with area weights C'(j)."""

    points: np.ndarray
    weights: np.ndarray
    half_width: float = 200.0
    n_per_axis: int | None = None
    rule: str = "trapezoid"

    @property
    def size(self) -> int:
        return len(self.weights)

    @property
    def area(self) -> float:
        return (2.0 * self.half_width) ** 2

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, values))

    def nested_rows(self, coarse: "ObservationGrid") -> np.ndarray:
        """Row indices of ``coarse`` points inside this grid; raises if not nested."""
        lookup = {tuple(p): i for i, p in enumerate(self.points.tolist())}
        try:
            return np.array([lookup[tuple(p)] for p in coarse.points.tolist()], dtype=int)
        except KeyError as exc:
            raise ValueError("coarse grid is not a subset of this grid") from exc

    def describe(self) -> dict:
        return {"rule": self.rule, "n_per_axis": self.n_per_axis,
                "half_width": self.half_width, "M": self.size}


def observation_grid(n_per_axis: int, half_width: float = 200.0) -> ObservationGrid:
    """Uniform tensor grid on V with trapezoid weights (exact for constants)."""
    if int(n_per_axis) != n_per_axis or n_per_axis < 2:
        raise ValueError(f"n_per_axis must be an integer >= 2, got {n_per_axis}")
    n = int(n_per_axis)
    x = np.linspace(-half_width, half_width, n)
    h = 2.0 * half_width / (n - 1)
    w1 = np.full(n, h)
    w1[0] = w1[-1] = h / 2
    X1, X2 = np.meshgrid(x, x, indexing="ij")
    points = np.column_stack([X1.ravel(), X2.ravel()])
    weights = np.outer(w1, w1).ravel()
    return ObservationGrid(points, weights, half_width, n, "trapezoid")


def gauss_legendre_1d(half_width: float, cells: int, order: int):
    """Composite Gauss-Legendre nodes and weights on [-half_width, half_width]."""
    if cells < 1 or order < 1:
        raise ValueError("cells and order must be positive")
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(-half_width, half_width, cells + 1)
    h = edges[1] - edges[0]
    nodes = (edges[:-1, None] + (x[None, :] + 1.0) * (h / 2)).ravel()
    weights = np.tile(w * (h / 2), cells)
    return nodes, weights


def gauss_legendre_2d(half_width: float, cells: int, order: int):
    nodes, w = gauss_legendre_1d(half_width, cells, order)
    Y1, Y2 = np.meshgrid(nodes, nodes, indexing="ij")
    return np.column_stack([Y1.ravel(), Y2.ravel()]), np.outer(w, w).ravel()


def gauss_observation_grid(cells: int, order: int, half_width: float = 200.0) -> ObservationGrid:
    """High-order rule on V, used as the continuous-norm oracle."""
    points, weights = gauss_legendre_2d(half_width, cells, order)
    return ObservationGrid(points, weights, half_width, None, f"gauss{cells}x{order}")


@dataclass(frozen=True)
class SourceRegion:
    half_width: float = 150.0
    cells: int = 8
    order: int = 8

    def quadrature(self):
        if self.order < 2:
            raise ValueError(f"quad_order must be >= 2, got {self.order}")
        return gauss_legendre_2d(self.half_width, self.cells, self.order)


@dataclass(frozen=True, eq=False)
class SineBasis:
    """Tensor sine modes on R = [-L, L]^2, normalized to unit H^1_0 norm.

    Raw mode: phi_kl(y) = sin(k pi (y1+L)/2L) sin(l pi (y2+L)/2L), whose
    Dirichlet norm is pi sqrt(k^2+l^2)/2 regardless of L.
    """

    K: int
    L: float = 150.0
    modes: np.ndarray = field(init=False, repr=False)
    norm_consts: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if self.L <= 0:
            raise ValueError(f"L must be positive, got {self.L}")
        kk, ll = np.meshgrid(np.arange(1, self.K + 1), np.arange(1, self.K + 1), indexing="ij")
        modes = np.column_stack([kk.ravel(), ll.ravel()])
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "norm_consts", 2.0 / (np.pi * np.sqrt((modes ** 2).sum(axis=1))))

    @property
    def size(self) -> int:
        return self.K * self.K

    def raw_h1_norms(self) -> np.ndarray:
        return np.pi * np.sqrt((self.modes ** 2).sum(axis=1)) / 2

    def _phases(self, y):
        y = np.atleast_2d(np.asarray(y, dtype=float))
        scale = np.pi / (2 * self.L)
        t1 = scale * (y[:, 0:1] + self.L) * self.modes[:, 0]
        t2 = scale * (y[:, 1:2] + self.L) * self.modes[:, 1]
        return t1, t2, scale

    def evaluate(self, y, normalized: bool = True) -> np.ndarray:
        """Mode values at points y, shape (N, K^2)."""
        t1, t2, _ = self._phases(y)
        vals = np.sin(t1) * np.sin(t2)
        return vals * self.norm_consts if normalized else vals

    def gradient(self, y, normalized: bool = True) -> np.ndarray:
        """Mode gradients at points y, shape (N, K^2, 2)."""
        t1, t2, scale = self._phases(y)
        g1 = scale * self.modes[:, 0] * np.cos(t1) * np.sin(t2)
        g2 = scale * self.modes[:, 1] * np.sin(t1) * np.cos(t2)
        g = np.stack([g1, g2], axis=-1)
        if normalized:
            g = g * self.norm_consts[None, :, None]
        return g

    def describe(self) -> dict:
        return {"K": self.K, "L": self.L}


def sine_basis(K: int, L: float = 150.0) -> SineBasis:
    return SineBasis(int(K), float(L))


def h1_norm(basis: SineBasis, coeffs) -> float:
    """H^1_0(R) norm of sum_i coeffs[i] * mode_i (the basis is orthonormal)."""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (basis.size,):
        raise ValueError(f"expected {basis.size} coefficients, got shape {coeffs.shape}")
    return float(np.linalg.norm(coeffs))
