"""Half-space Laplace crack kernel with method-of-images reflection.

For a fault point Y on the plane x3 = a*y1 + b*y2 + d and an evaluation point
x, the kernel is

    H = [grad_y Phi(x, Y) + grad_y Phi(xbar, Y)] . (-a, -b, 1) * chi(Y3)

with Phi the free-space Green function and xbar = (x1, x2, -x3).  The vector
(-a, -b, 1) is the unit normal times the surface element, so integrating H
against a slip over dy1 dy2 gives the surface displacement.  chi is an
optional C-infinity cutoff that removes fault points shallower than d0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .errors import SingularityError
from .geometry import FaultParams

INV_4PI = 1.0 / (4.0 * np.pi)

KERNELS = ("laplace-halfspace",)


@dataclass(frozen=True)
class KernelConfig:
    cutoff_enabled: bool = True
    d0: float = -5.0
    kind: str = "laplace-halfspace"

    def __post_init__(self):
        if not self.d0 < 0:
            raise ValueError(f"d0 must be negative, got {self.d0}")
        if self.kind not in KERNELS:
            raise NotImplementedError(f"kernel {self.kind!r} is not available; known: {KERNELS}")

    def describe(self) -> dict:
        return {"kind": self.kind, "cutoff_enabled": self.cutoff_enabled, "d0": self.d0}


DEFAULT_KERNEL = KernelConfig()


def green_phi(x, y):
    """Free-space Laplace Green function 1 / (4 pi |x - y|)."""
    r = np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(y, dtype=float), axis=-1)
    if np.any(r == 0):
        raise SingularityError("green_phi evaluated at x == y")
    return INV_4PI / r


# ---------------------------------------------------------------------------
# cutoff


def _bump(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    pos = s > 0
    out[pos] = np.exp(-1.0 / s[pos])
    return out


def _bump_prime(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    pos = s > 0
    out[pos] = np.exp(-1.0 / s[pos]) / s[pos] ** 2
    return out


def _check_d0(d0):
    if not d0 < 0:
        raise ValueError(f"d0 must be negative, got {d0}")


def cutoff_chi(t, d0: float):
    """Smooth step: 1 for t <= 2*d0, 0 for t >= d0, exp(-1/s) blend between."""
    _check_d0(d0)
    s = (np.asarray(t, dtype=float) - 2 * d0) / (-d0)
    f_lo, f_hi = _bump(1.0 - s), _bump(s)
    out = f_lo / (f_lo + f_hi)
    return out if out.ndim else float(out)


def cutoff_chi_prime(t, d0: float):
    """d chi / d t."""
    _check_d0(d0)
    s = (np.asarray(t, dtype=float) - 2 * d0) / (-d0)
    f_lo, f_hi = _bump(1.0 - s), _bump(s)
    g_lo, g_hi = _bump_prime(1.0 - s), _bump_prime(s)
    den = f_lo + f_hi
    out = -(g_lo * f_hi + f_lo * g_hi) / den ** 2 / (-d0)
    return out if out.ndim else float(out)


def _chi_and_prime(t, cfg: KernelConfig):
    if not cfg.cutoff_enabled:
        return np.ones_like(t), np.zeros_like(t)
    return np.asarray(cutoff_chi(t, cfg.d0)), np.asarray(cutoff_chi_prime(t, cfg.d0))


# ---------------------------------------------------------------------------
# pointwise kernel (vectorized reference implementation)


def _prepare(m: FaultParams, x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[-1] == 2:
        x = np.concatenate([x, np.zeros(x.shape[:-1] + (1,))], axis=-1)
    Y3 = m.a * y[..., 0] + m.b * y[..., 1] + m.d
    D1 = x[..., 0] - y[..., 0]
    D2 = x[..., 1] - y[..., 1]
    D3 = x[..., 2] - Y3
    D3_img = -x[..., 2] - Y3
    D1, D2, D3, D3_img, Y3 = np.broadcast_arrays(D1, D2, D3, D3_img, Y3)
    return D1, D2, D3, D3_img, Y3


def _term(m, D1, D2, D3):
    """grad_y Phi(x, Y) . (-a, -b, 1) for offset D = x - Y; also returns r^2."""
    r2 = D1 * D1 + D2 * D2 + D3 * D3
    return (-m.a * D1 - m.b * D2 + D3) * INV_4PI / (r2 * np.sqrt(r2)), r2


def _active(chi, r2, r2_img):
    live = chi != 0
    if np.any(live & ((r2 == 0) | (r2_img == 0))):
        raise SingularityError("kernel evaluated where the fault point meets the evaluation point")
    return live


def kernel_terms(m: FaultParams, x, y):
    """Direct and image terms of the kernel, without the cutoff."""
    D1, D2, D3, D3i, _ = _prepare(m, x, y)
    with np.errstate(divide="ignore", invalid="ignore"):
        t, r2 = _term(m, D1, D2, D3)
        ti, r2i = _term(m, D1, D2, D3i)
    _active(np.ones_like(r2), r2, r2i)
    return t, ti


def kernel_H(m: FaultParams, x, y, cfg: KernelConfig = DEFAULT_KERNEL):
    """Kernel value for evaluation point x (2-D on the surface, or 3-D) and
    source coordinates y = (y1, y2) in R."""
    D1, D2, D3, D3i, Y3 = _prepare(m, x, y)
    chi, _ = _chi_and_prime(Y3, cfg)
    with np.errstate(divide="ignore", invalid="ignore"):
        t, r2 = _term(m, D1, D2, D3)
        ti, r2i = _term(m, D1, D2, D3i)
    live = _active(chi, r2, r2i)
    out = np.where(live, (t + ti) * chi, 0.0)
    return out if out.ndim else float(out)


def _term_grad_x(m, D1, D2, D3):
    r2 = D1 * D1 + D2 * D2 + D3 * D3
    r3 = r2 * np.sqrt(r2)
    r5 = r3 * r2
    dot = -m.a * D1 - m.b * D2 + D3
    g1 = (-m.a / r3 - 3 * dot * D1 / r5) * INV_4PI
    g2 = (-m.b / r3 - 3 * dot * D2 / r5) * INV_4PI
    return g1, g2, r2


def kernel_H_grad_x(m: FaultParams, x, y, cfg: KernelConfig = DEFAULT_KERNEL):
    """Gradient of kernel_H in (x1, x2), shape (..., 2)."""
    D1, D2, D3, D3i, Y3 = _prepare(m, x, y)
    chi, _ = _chi_and_prime(Y3, cfg)
    with np.errstate(divide="ignore", invalid="ignore"):
        g1, g2, r2 = _term_grad_x(m, D1, D2, D3)
        h1, h2, r2i = _term_grad_x(m, D1, D2, D3i)
    live = _active(chi, r2, r2i)
    out = np.stack([np.where(live, (g1 + h1) * chi, 0.0),
                    np.where(live, (g2 + h2) * chi, 0.0)], axis=-1)
    return out


def _term_dm(m, D1, D2, D3, y1, y2):
    """Derivatives of one term in (a, b) through the normal and in Y3."""
    r2 = D1 * D1 + D2 * D2 + D3 * D3
    r3 = r2 * np.sqrt(r2)
    r5 = r3 * r2
    dot = -m.a * D1 - m.b * D2 + D3
    val = dot * INV_4PI / r3
    dY3 = (-1.0 / r3 + 3 * dot * D3 / r5) * INV_4PI
    da_normal = -D1 * INV_4PI / r3
    db_normal = -D2 * INV_4PI / r3
    return val, dY3 * y1 + da_normal, dY3 * y2 + db_normal, dY3, r2


def kernel_H_dm(m: FaultParams, x, y, cfg: KernelConfig = DEFAULT_KERNEL):
    """Partial derivatives of kernel_H in (a, b, d), shape (..., 3)."""
    D1, D2, D3, D3i, Y3 = _prepare(m, x, y)
    y = np.asarray(y, dtype=float)
    y1 = np.broadcast_to(y[..., 0], Y3.shape)
    y2 = np.broadcast_to(y[..., 1], Y3.shape)
    chi, dchi = _chi_and_prime(Y3, cfg)
    with np.errstate(divide="ignore", invalid="ignore"):
        v, da, db, dd, r2 = _term_dm(m, D1, D2, D3, y1, y2)
        vi, dai, dbi, ddi, r2i = _term_dm(m, D1, D2, D3i, y1, y2)
    live = _active(chi, r2, r2i)
    total = v + vi
    parts = [
        (da + dai) * chi + total * dchi * y1,
        (db + dbi) * chi + total * dchi * y2,
        (dd + ddi) * chi + total * dchi,
    ]
    return np.stack([np.where(live, p, 0.0) for p in parts], axis=-1)


# ---------------------------------------------------------------------------
# compiled matrix fills for observation points on x3 = 0, where the image
# term coincides with the direct term


@numba.njit(cache=True)
def _chi_scalar(t, d0):
    s = (t - 2.0 * d0) / (-d0)
    f_lo = np.exp(-1.0 / (1.0 - s)) if s < 1.0 else 0.0
    f_hi = np.exp(-1.0 / s) if s > 0.0 else 0.0
    return f_lo / (f_lo + f_hi)


@numba.njit(cache=True)
def _chi_prime_scalar(t, d0):
    s = (t - 2.0 * d0) / (-d0)
    if s <= 0.0 or s >= 1.0:
        return 0.0
    f_lo = np.exp(-1.0 / (1.0 - s))
    f_hi = np.exp(-1.0 / s)
    g_lo = f_lo / (1.0 - s) ** 2
    g_hi = f_hi / s ** 2
    den = f_lo + f_hi
    return -(g_lo * f_hi + f_lo * g_hi) / (den * den) / (-d0)


@numba.njit(cache=True)
def _source_terms(a, b, d, Y, use_cutoff, d0):
    n = Y.shape[0]
    Y3 = np.empty(n)
    chi = np.empty(n)
    dchi = np.empty(n)
    for j in range(n):
        Y3[j] = a * Y[j, 0] + b * Y[j, 1] + d
        if use_cutoff:
            chi[j] = _chi_scalar(Y3[j], d0)
            dchi[j] = _chi_prime_scalar(Y3[j], d0)
        else:
            chi[j] = 1.0
            dchi[j] = 0.0
    return Y3, chi, dchi


@numba.njit(cache=True)
def _fill_kernel(a, b, d, X, Y, use_cutoff, d0, out):
    Y3, chi, _ = _source_terms(a, b, d, Y, use_cutoff, d0)
    bad = 0
    for i in range(X.shape[0]):
        x1 = X[i, 0]
        x2 = X[i, 1]
        for j in range(Y.shape[0]):
            if chi[j] == 0.0:
                out[i, j] = 0.0
                continue
            D1 = x1 - Y[j, 0]
            D2 = x2 - Y[j, 1]
            D3 = -Y3[j]
            r2 = D1 * D1 + D2 * D2 + D3 * D3
            if r2 == 0.0:
                bad += 1
                out[i, j] = 0.0
                continue
            out[i, j] = 2.0 * (-a * D1 - b * D2 + D3) * INV_4PI / (r2 * np.sqrt(r2)) * chi[j]
    return bad


@numba.njit(cache=True)
def _fill_kernel_dq(a, b, d, qa, qb, qd, X, Y, use_cutoff, d0, out):
    Y3, chi, dchi = _source_terms(a, b, d, Y, use_cutoff, d0)
    bad = 0
    for i in range(X.shape[0]):
        x1 = X[i, 0]
        x2 = X[i, 1]
        for j in range(Y.shape[0]):
            if chi[j] == 0.0 and dchi[j] == 0.0:
                out[i, j] = 0.0
                continue
            D1 = x1 - Y[j, 0]
            D2 = x2 - Y[j, 1]
            D3 = -Y3[j]
            r2 = D1 * D1 + D2 * D2 + D3 * D3
            if r2 == 0.0:
                bad += 1
                out[i, j] = 0.0
                continue
            r3 = r2 * np.sqrt(r2)
            r5 = r3 * r2
            dot = -a * D1 - b * D2 + D3
            dY3q = qa * Y[j, 0] + qb * Y[j, 1] + qd
            val = 2.0 * dot * INV_4PI / r3
            dY3 = 2.0 * (-1.0 / r3 + 3.0 * dot * D3 / r5) * INV_4PI
            dnormal = 2.0 * (-qa * D1 - qb * D2) * INV_4PI / r3
            out[i, j] = (dY3 * dY3q + dnormal) * chi[j] + val * dchi[j] * dY3q
    return bad


def kernel_matrix(m: FaultParams, points, sources, cfg: KernelConfig = DEFAULT_KERNEL) -> np.ndarray:
    """Kernel values H(m, P_i, y_j) for surface points P_i, shape (M, N)."""
    points = np.ascontiguousarray(points, dtype=float)
    sources = np.ascontiguousarray(sources, dtype=float)
    out = np.empty((len(points), len(sources)))
    bad = _fill_kernel(m.a, m.b, m.d, points, sources, cfg.cutoff_enabled, cfg.d0, out)
    if bad:
        raise SingularityError(f"fault {m} touches {bad} observation point(s)")
    return out


def kernel_matrix_dq(m: FaultParams, q_dir, points, sources, cfg: KernelConfig = DEFAULT_KERNEL) -> np.ndarray:
    """Directional m-derivative grad_m H . q_dir on surface points, shape (M, N)."""
    qa, qb, qd = (float(v) for v in q_dir)
    points = np.ascontiguousarray(points, dtype=float)
    sources = np.ascontiguousarray(sources, dtype=float)
    out = np.empty((len(points), len(sources)))
    bad = _fill_kernel_dq(m.a, m.b, m.d, qa, qb, qd, points, sources,
                          cfg.cutoff_enabled, cfg.d0, out)
    if bad:
        raise SingularityError(f"fault {m} touches {bad} observation point(s)")
    return out
