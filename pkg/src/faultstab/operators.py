"""Discretized slip-to-data operator A_m and its singular subspaces.

The operator acts on H^1_0-orthonormal sine coefficients and returns data at
the observation points with row j scaled by sqrt(C'(j)), so Euclidean norms
of outputs are discrete L^2(V) norms and the adjoint eigenproblem reduces to
a plain matrix SVD.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AssemblyError, PreconditionError, SingularityError
from .geometry import FaultParams, ObservationGrid, SineBasis, SourceRegion, observation_grid, sine_basis
from .kernel import DEFAULT_KERNEL, KernelConfig, kernel_matrix, kernel_matrix_dq

DEFAULT_QUAD_ORDER = 8
DEFAULT_QUAD_CELLS = 8


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    m: FaultParams
    weighted: np.ndarray
    row_scale: np.ndarray
    basis: SineBasis
    grid: ObservationGrid
    cfg: KernelConfig
    quad_order: int
    cells: int

    @property
    def shape(self):
        return self.weighted.shape

    def __matmul__(self, coeffs):
        return self.weighted @ coeffs

    def restrict(self, coarse: ObservationGrid, rows=None) -> "OperatorMatrix":
        """Operator on a coarser grid whose points are a subset of this grid."""
        if rows is None:
            rows = self.grid.nested_rows(coarse)
        scale = np.sqrt(coarse.weights)
        weighted = self.weighted[rows] / self.row_scale[rows, None] * scale[:, None]
        return OperatorMatrix(self.m, weighted, scale, self.basis, coarse, self.cfg,
                              self.quad_order, self.cells)


@dataclass(frozen=True, eq=False)
class SvdSubspace:
    """Leading right singular subspace E_m of an operator."""

    singular_values: np.ndarray
    vectors: np.ndarray
    q: int
    left: np.ndarray = field(repr=False, default=None)

    @property
    def basis(self) -> np.ndarray:
        """Columns spanning E_m, shape (K^2, q)."""
        return self.vectors[:, : self.q]

    @property
    def sigma_q(self) -> float:
        return float(self.singular_values[self.q - 1])

    @property
    def sigma_next(self) -> float:
        return float(self.singular_values[self.q])

    @property
    def beta(self) -> float:
        """A threshold strictly inside (sigma_{q+1}, sigma_q) when the gap is open."""
        return 0.5 * (self.sigma_q + self.sigma_next)

    @property
    def relative_gap(self) -> float:
        return (self.sigma_q - self.sigma_next) / self.sigma_q

    @property
    def projector(self) -> np.ndarray:
        U = self.basis
        return U @ U.T


@dataclass(frozen=True)
class ForwardSetup:
    """Everything besides m that determines the discrete operator."""

    basis: SineBasis = field(default_factory=lambda: sine_basis(8))
    grid: ObservationGrid = field(default_factory=lambda: observation_grid(11))
    cfg: KernelConfig = DEFAULT_KERNEL
    quad_order: int = DEFAULT_QUAD_ORDER
    cells: int = DEFAULT_QUAD_CELLS

    def assemble(self, m: FaultParams, grid: ObservationGrid | None = None, cache=None) -> OperatorMatrix:
        return assemble(m, self.basis, grid or self.grid, self.cfg, self.quad_order,
                        cells=self.cells, cache=cache)

    def derivative(self, m: FaultParams, q_dir, grid: ObservationGrid | None = None) -> OperatorMatrix:
        return directional_derivative(m, q_dir, self.basis, grid or self.grid, self.cfg,
                                      self.quad_order, cells=self.cells)

    def describe(self) -> dict:
        return {"basis": self.basis.describe(), "grid": self.grid.describe(),
                "kernel": self.cfg.describe(), "quad_order": self.quad_order, "cells": self.cells}


_SOURCE_CACHE: dict = {}


def _weighted_modes(basis: SineBasis, quad_order: int, cells: int):
    """Quadrature nodes on R and basis values times quadrature weights."""
    key = (basis.K, basis.L, quad_order, cells)
    if key not in _SOURCE_CACHE:
        nodes, w = SourceRegion(basis.L, cells, quad_order).quadrature()
        _SOURCE_CACHE[key] = (nodes, basis.evaluate(nodes) * w[:, None])
    return _SOURCE_CACHE[key]


def _check_depth(m: FaultParams, basis: SineBasis, cfg: KernelConfig):
    if not cfg.cutoff_enabled and m.max_depth_over(basis.L) > cfg.d0:
        raise AssemblyError(
            f"fault {m} rises to x3={m.max_depth_over(basis.L):.3f} over R, above d0={cfg.d0}; "
            "enable the depth cutoff or shrink the parameter box")


def assemble(m: FaultParams, basis: SineBasis, grid: ObservationGrid,
             cfg: KernelConfig = DEFAULT_KERNEL, quad_order: int = DEFAULT_QUAD_ORDER,
             cells: int = DEFAULT_QUAD_CELLS, cache=None) -> OperatorMatrix:
    """Entry (j, kl) = sqrt(C'(j)) * sum_n w_n H(m, P_j, y_n) phi_kl(y_n)."""
    if quad_order < 2:
        raise ValueError(f"quad_order must be >= 2, got {quad_order}")
    _check_depth(m, basis, cfg)
    if cache is not None:
        hit = cache.get(m, basis, grid, cfg, quad_order, cells)
        if hit is not None:
            return hit
    nodes, wmodes = _weighted_modes(basis, quad_order, cells)
    try:
        K = kernel_matrix(m, grid.points, nodes, cfg)
    except SingularityError as exc:
        raise AssemblyError(f"assembly failed for m={m}: {exc}") from exc
    scale = np.sqrt(grid.weights)
    weighted = (K @ wmodes) * scale[:, None]
    if not np.all(np.isfinite(weighted)):
        raise AssemblyError(f"non-finite operator entries for m={m}")
    op = OperatorMatrix(m, weighted, scale, basis, grid, cfg, quad_order, cells)
    if cache is not None:
        cache.put(op)
    return op


def forward(A: OperatorMatrix, coeffs) -> np.ndarray:
    """Pointwise data values A_m u (P_j), undoing the row weighting."""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape[0] != A.weighted.shape[1]:
        raise ValueError(f"expected {A.weighted.shape[1]} coefficients, got {coeffs.shape[0]}")
    out = A.weighted @ coeffs
    scale = A.row_scale if out.ndim == 1 else A.row_scale[:, None]
    return out / scale


def _fix_signs(Vt: np.ndarray) -> np.ndarray:
    # largest-magnitude entry of each singular vector made positive
    idx = np.argmax(np.abs(Vt), axis=1)
    signs = np.sign(Vt[np.arange(len(Vt)), idx])
    signs[signs == 0] = 1.0
    return signs


def svd_subspace(A: OperatorMatrix, q: int) -> SvdSubspace:
    W = A.weighted
    n = W.shape[1]
    if not 1 <= q < n:
        raise ValueError(f"q must satisfy 1 <= q < {n}, got {q}")
    # full V is only needed when there are fewer rows than modes
    U, s, Vt = np.linalg.svd(W, full_matrices=W.shape[0] < n)
    sv = np.zeros(n)
    sv[: len(s)] = s
    signs = _fix_signs(Vt)
    Vt = Vt * signs[:, None]
    k = min(U.shape[1], n)
    left = U[:, :k] * signs[None, :k]
    sub = SvdSubspace(sv, Vt.T.copy(), int(q), left)
    # worst case of ||A u|| / ||u|| over E_m is the smallest singular value of A restricted to E_m
    worst = np.linalg.svd(W @ sub.basis, compute_uv=False)[-1]
    if worst < (1 - 1e-10) * sub.sigma_q:
        raise AssemblyError(f"lower bound violated on E_m: {worst} < sigma_q={sub.sigma_q}")
    return sub


def require_gap(sub: SvdSubspace, min_gap: float, where: str = ""):
    if sub.relative_gap < min_gap:
        raise PreconditionError(
            f"spectral gap at rank q={sub.q}{where} is {sub.relative_gap:.3g} < {min_gap}: "
            f"sigma_q={sub.sigma_q:.6g}, sigma_q+1={sub.sigma_next:.6g}")


def project(sub: SvdSubspace, coeffs) -> np.ndarray:
    """Orthogonal projection onto E_m in H^1_0 coordinates."""
    coeffs = np.asarray(coeffs, dtype=float)
    U = sub.basis
    if coeffs.shape[0] != U.shape[0]:
        raise ValueError(f"expected {U.shape[0]} coefficients, got {coeffs.shape[0]}")
    return U @ (U.T @ coeffs)


def directional_derivative(m: FaultParams, q_dir, basis: SineBasis, grid: ObservationGrid,
                           cfg: KernelConfig = DEFAULT_KERNEL, quad_order: int = DEFAULT_QUAD_ORDER,
                           cells: int = DEFAULT_QUAD_CELLS) -> OperatorMatrix:
    """Weighted matrix of grad_m A_m . q_dir."""
    q_dir = np.asarray(q_dir, dtype=float)
    if q_dir.shape != (3,) or abs(np.linalg.norm(q_dir) - 1) > 1e-12:
        raise ValueError(f"q_dir must be a unit 3-vector, got {q_dir}")
    _check_depth(m, basis, cfg)
    nodes, wmodes = _weighted_modes(basis, quad_order, cells)
    try:
        K = kernel_matrix_dq(m, q_dir, grid.points, nodes, cfg)
    except SingularityError as exc:
        raise AssemblyError(f"derivative assembly failed for m={m}: {exc}") from exc
    scale = np.sqrt(grid.weights)
    return OperatorMatrix(m, (K @ wmodes) * scale[:, None], scale, basis, grid, cfg, quad_order, cells)


# ---------------------------------------------------------------------------
# binary matrix cache: versioned text header line, then row-major float64 (LE)

MATRIX_MAGIC = "faultstab-matrix"
MATRIX_VERSION = 1


def save_matrix(path, array: np.ndarray, meta: dict | None = None):
    array = np.ascontiguousarray(array, dtype="<f8")
    header = {"version": MATRIX_VERSION, "shape": list(array.shape), "meta": meta or {}}
    with open(path, "wb") as fh:
        fh.write(f"{MATRIX_MAGIC} {json.dumps(header, sort_keys=True)}\n".encode())
        fh.write(array.tobytes(order="C"))


def load_matrix(path):
    with open(path, "rb") as fh:
        line = fh.readline().decode()
        magic, _, rest = line.partition(" ")
        if magic != MATRIX_MAGIC:
            raise ValueError(f"{path}: not a matrix file")
        header = json.loads(rest)
        if header.get("version") != MATRIX_VERSION:
            raise ValueError(f"{path}: unsupported matrix version {header.get('version')}")
        shape = tuple(header["shape"])
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != int(np.prod(shape)):
        raise ValueError(f"{path}: expected {np.prod(shape)} values, found {data.size}")
    return data.reshape(shape).astype(float), header["meta"]


class OperatorCache:
    """On-disk cache of assembled operators keyed by a hash of all inputs."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def key(m, basis, grid, cfg, quad_order, cells) -> str:
        h = hashlib.sha256()
        h.update(json.dumps({"m": [m.a, m.b, m.d], "basis": basis.describe(), "cfg": cfg.describe(),
                             "quad_order": quad_order, "cells": cells}, sort_keys=True).encode())
        h.update(np.ascontiguousarray(grid.points, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(grid.weights, dtype="<f8").tobytes())
        return h.hexdigest()[:32]

    def _path(self, key):
        return self.directory / f"{key}.bin"

    def get(self, m, basis, grid, cfg, quad_order, cells):
        path = self._path(self.key(m, basis, grid, cfg, quad_order, cells))
        if not path.exists():
            return None
        weighted, _ = load_matrix(path)
        return OperatorMatrix(m, weighted, np.sqrt(grid.weights), basis, grid, cfg, quad_order, cells)

    def put(self, op: OperatorMatrix):
        key = self.key(op.m, op.basis, op.grid, op.cfg, op.quad_order, op.cells)
        tmp = self._path(key).with_suffix(f".tmp{os.getpid()}")
        save_matrix(tmp, op.weighted, {"m": [op.m.a, op.m.b, op.m.d]})
        os.replace(tmp, self._path(key))
