"""Scaled conjugate gradient minimization (Moller's algorithm).

No line search: the curvature along the search direction comes from a finite
difference of gradients, regularized by a Levenberg-style scale ``lam`` that
is raised when the quadratic model predicts the decrease badly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SIGMA0 = 1e-4
LAM_MIN = 1e-15
LAM_MAX = 1e100


@dataclass
class ScgResult:
    x: np.ndarray
    fun: float
    iterations: int
    trace: list = field(default_factory=list)  # J after every iteration
    accepted: list = field(default_factory=list)
    reason: str = "max_iters"


def scg(fun, grad, x0, max_iters: int = 1000, lam: float = 1.0, tol_x: float = 0.0,
        tol_f: float = 0.0, check=None) -> ScgResult:
    """Minimize ``fun`` from ``x0``.

    ``check(it, value)`` is called on every new objective value and may raise,
    which is how callers turn a non-finite loss into their own error.
    Rejected steps leave x unchanged, so the trace never increases.
    """
    x = np.array(x0, dtype=float)
    n = x.size
    f_old = float(fun(x))
    if check:
        check(0, f_old)
    g_new = grad(x)
    g_old = g_new
    d = -g_new
    success = True
    n_success = 0
    mu = kappa = theta = 0.0
    res = ScgResult(x, f_old, 0, [f_old], [True])

    for it in range(1, max_iters + 1):
        if success:
            mu = d @ g_new
            if mu >= 0:
                d = -g_new
                mu = d @ g_new
            kappa = d @ d
            if kappa < np.finfo(float).eps:
                res.reason = "zero_direction"
                break
            sigma = SIGMA0 / np.sqrt(kappa)
            theta = d @ (grad(x + sigma * d) - g_new) / sigma

        # scaled curvature; force positive definiteness
        delta = theta + lam * kappa
        if delta <= 0:
            delta = lam * kappa
            lam = lam - theta / kappa
        alpha = -mu / delta

        x_new = x + alpha * d
        f_new = float(fun(x_new))
        if check:
            check(it, f_new)
        ratio = 2.0 * (f_new - f_old) / (alpha * mu)
        success = ratio >= 0
        if success:
            n_success += 1
            x = x_new
        res.trace.append(f_new if success else f_old)
        res.accepted.append(success)
        res.iterations = it

        if success:
            if np.max(np.abs(alpha * d)) < tol_x and abs(f_new - f_old) < tol_f:
                f_old = f_new
                res.reason = "converged"
                break
            f_old = f_new
            g_old = g_new
            g_new = grad(x)
            if g_new @ g_new == 0:
                res.reason = "zero_gradient"
                break

        if ratio < 0.25:
            lam = min(4.0 * lam, LAM_MAX)
        if ratio > 0.75:
            lam = max(0.5 * lam, LAM_MIN)

        if n_success == n:
            d = -g_new
            n_success = 0
        elif success:
            beta = (g_old - g_new) @ g_new / mu
            d = beta * d - g_new

    res.x = x
    res.fun = f_old
    return res
