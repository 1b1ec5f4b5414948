"""Sampling estimates of the stability constants.

All estimators sample lower bounds: a minimum over random pairs can only
overestimate the true infimum, never certify it.
"""
from __future__ import annotations

import functools
import io
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ._parallel import parallel_map
from .errors import ConfigError, ReportError
from .geometry import FaultParams, ObservationGrid, ParamBox, observation_grid, sine_basis
from .kernel import DEFAULT_KERNEL, KernelConfig
from .operators import (ForwardSetup, OperatorMatrix, SvdSubspace, forward, require_gap,
                        svd_subspace)

PILOT_STREAM = 0xA1A1


@dataclass(frozen=True)
class StabilityConfig:
    A1: float | None = None  # None: 5% of the median data norm of unit slips
    A2: float = 1.0
    q: int = 5
    trials: int = 1000
    seed: int = 0
    pair_separation_min: float = 1.0
    min_gap: float = 0.1
    pilot: int = 32
    hist_bins: int = 20

    def __post_init__(self):
        if self.A1 is not None and not self.A1 > 0:
            raise ConfigError(f"A1 must be positive, got {self.A1}")
        if not self.A2 > 0:
            raise ConfigError(f"A2 must be positive, got {self.A2}")
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        if not self.pair_separation_min > 0:
            raise ConfigError(f"pair_separation_min must be positive, got {self.pair_separation_min}")
        if self.q < 1:
            raise ConfigError(f"q must be >= 1, got {self.q}")


@dataclass(frozen=True)
class StabilityContext:
    """Dense grid standing in for the continuous L^2(V) norm, plus the
    coarser measurement grid of the discrete problem (nested in the dense one)."""

    setup: ForwardSetup
    discrete: ObservationGrid
    box: ParamBox = ParamBox()

    @classmethod
    def default(cls, K: int = 8, dense_n: int = 65, discrete_n: int = 33,
                cfg: KernelConfig = DEFAULT_KERNEL, quad_order: int = 8, cells: int = 8,
                box: ParamBox = ParamBox()) -> "StabilityContext":
        setup = ForwardSetup(sine_basis(K), observation_grid(dense_n), cfg, quad_order, cells)
        return cls(setup, observation_grid(discrete_n), box)

    @functools.cached_property
    def discrete_rows(self) -> np.ndarray:
        return self.setup.grid.nested_rows(self.discrete)

    def operators(self, m: FaultParams):
        A = self.setup.assemble(m)
        return A, A.restrict(self.discrete, self.discrete_rows)

    def describe(self) -> dict:
        return {"setup": self.setup.describe(), "discrete_grid": self.discrete.describe(),
                "box": {"lower": list(self.box.lower), "upper": list(self.box.upper)}}


@dataclass
class TrialRecord:
    index: int
    status: str
    m: tuple = ()
    m_prime: tuple = ()
    dist: float = math.nan
    v_norm: float = math.nan
    data_norm: float = math.nan
    data_norm_disc: float = math.nan
    ratio: float = math.nan
    ratio_disc: float = math.nan
    u: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)


@dataclass
class StabilityReport:
    c_hat: float
    c_hat_disc: float
    min_disc_over_cont: float
    argmin: dict
    hist_edges: np.ndarray
    hist_counts: np.ndarray
    n_trials: int
    skipped: dict
    A1: float
    A2: float
    config: dict
    metadata: dict
    records: list = field(repr=False, default_factory=list)

    @property
    def completed(self) -> list:
        return [r for r in self.records if r.status == "ok"]

    def ratios(self) -> np.ndarray:
        return np.array([r.ratio for r in self.completed])

    def disc_ratios(self) -> np.ndarray:
        return np.array([r.ratio_disc for r in self.completed])

    def to_text(self) -> str:
        out = io.StringIO()
        def kv(k, v):
            out.write(f"{k}={v}\n")
        kv("c_hat", repr(self.c_hat))
        kv("c_hat_disc", repr(self.c_hat_disc))
        kv("min_disc_over_cont", repr(self.min_disc_over_cont))
        kv("n_trials", self.n_trials)
        kv("n_completed", len(self.completed))
        for reason, count in sorted(self.skipped.items()):
            kv(f"skipped.{reason}", count)
        kv("A1", repr(self.A1))
        kv("A2", repr(self.A2))
        for k, v in self.argmin.items():
            kv(f"argmin.{k}", " ".join(repr(float(x)) for x in np.atleast_1d(v)))
        kv("hist.edges", " ".join(repr(float(x)) for x in self.hist_edges))
        kv("hist.counts", " ".join(str(int(c)) for c in self.hist_counts))
        for k, v in _flatten("config", self.config).items():
            kv(k, v)
        for k, v in _flatten("meta", self.metadata).items():
            kv(k, v)
        return out.getvalue()

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("trial,status,a,b,d,a_prime,b_prime,d_prime,dist,v_norm,data_norm,data_norm_disc,ratio,ratio_disc\n")
        for r in self.records:
            m = r.m or (math.nan,) * 3
            mp = r.m_prime or (math.nan,) * 3
            vals = [*m, *mp, r.dist, r.v_norm, r.data_norm, r.data_norm_disc, r.ratio, r.ratio_disc]
            out.write(f"{r.index},{r.status}," + ",".join(repr(float(v)) for v in vals) + "\n")
        return out.getvalue()


def _flatten(prefix, obj) -> dict:
    if isinstance(obj, dict):
        out = {}
        for k, v in obj.items():
            out.update(_flatten(f"{prefix}.{k}", v))
        return out
    if isinstance(obj, (list, tuple)):
        return {prefix: " ".join(str(x) for x in obj)}
    return {prefix: obj}


# ---------------------------------------------------------------------------
# shared pieces


def min_residual(A: OperatorMatrix, sub: SvdSubspace, target: np.ndarray):
    """min over u in E_m of ||A u - target||: returns (residual norm, coeffs of u)."""
    B = A.weighted @ sub.basis
    c, *_ = np.linalg.lstsq(B, target, rcond=None)
    return float(np.linalg.norm(B @ c - target)), sub.basis @ c


def _unit_direction(rng, dim):
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def _pilot(cfg: StabilityConfig, ctx: StabilityContext):
    norms, tops = [], []
    for i in range(cfg.pilot):
        rng = np.random.default_rng([cfg.seed, PILOT_STREAM, i])
        m = ctx.box.sample(rng)
        A = ctx.setup.assemble(m)
        sub = svd_subspace(A, cfg.q)
        v = sub.basis @ _unit_direction(rng, cfg.q)
        norms.append(np.linalg.norm(A.weighted @ v))
        tops.append(sub.singular_values[0])
    return float(np.median(norms)), float(np.max(tops))


def resolve_A1(cfg: StabilityConfig, ctx: StabilityContext) -> float:
    median_norm, top = _pilot(cfg, ctx)
    A1 = cfg.A1 if cfg.A1 is not None else 0.05 * median_norm
    if A1 > cfg.A2 * top:
        raise ConfigError(f"A1={A1:.4g} is unattainable with ||v|| <= A2={cfg.A2}: "
                          f"largest pilot singular value is {top:.4g}")
    return A1


def _histogram(ratios, bins):
    ratios = np.asarray(ratios)
    lo, hi = np.log10(ratios.min()), np.log10(ratios.max())
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.logspace(lo, hi, bins + 1)
    counts, _ = np.histogram(np.clip(ratios, edges[0], edges[-1]), bins=edges)
    return edges, counts


# ---------------------------------------------------------------------------
# uniform constant over pairs


def _pair_trial(t, cfg: StabilityConfig, ctx: StabilityContext, A1: float) -> TrialRecord:
    rng = np.random.default_rng([cfg.seed, t])
    m = ctx.box.sample(rng)
    mp = ctx.box.sample(rng)
    dist = m.distance(mp)
    direction = _unit_direction(rng, cfg.q)
    radius = cfg.A2 * rng.uniform(0.0, 1.0)
    rec = TrialRecord(t, "ok", tuple(m.as_array()), tuple(mp.as_array()), dist)
    if dist < cfg.pair_separation_min:
        rec.status = "separation"
        return rec
    Ap, Ap_disc = ctx.operators(mp)
    sub_p = svd_subspace(Ap, cfg.q)
    v = sub_p.basis @ direction * radius
    target = Ap.weighted @ v
    rec.v, rec.v_norm = v, radius
    rec.data_norm = float(np.linalg.norm(target))
    if rec.data_norm < A1:
        rec.status = "below_A1"
        return rec
    A, A_disc = ctx.operators(m)
    sub = svd_subspace(A, cfg.q)
    res, u = min_residual(A, sub, target)
    target_disc = Ap_disc.weighted @ v
    rec.data_norm_disc = float(np.linalg.norm(target_disc))
    res_disc, _ = min_residual(A_disc, sub, target_disc)
    rec.u = u
    rec.ratio = res / dist
    rec.ratio_disc = res_disc / dist
    return rec


def _finish(records, cfg, ctx, A1, extra_meta=None) -> StabilityReport:
    done = [r for r in records if r.status == "ok"]
    skipped = {}
    for r in records:
        if r.status != "ok":
            skipped[r.status] = skipped.get(r.status, 0) + 1
    if not done:
        raise ReportError(f"all {len(records)} trials were skipped: {skipped}")
    ratios = np.array([r.ratio for r in done])
    disc = np.array([r.ratio_disc for r in done])
    best = done[int(np.argmin(ratios))]
    edges, counts = _histogram(ratios, cfg.hist_bins)
    meta = ctx.describe()
    meta.update(extra_meta or {})
    return StabilityReport(
        c_hat=float(ratios.min()),
        c_hat_disc=float(disc.min()),
        min_disc_over_cont=float(np.min(disc / ratios)),
        argmin={"trial": best.index, "m": best.m, "m_prime": best.m_prime, "u": best.u, "v": best.v},
        hist_edges=edges,
        hist_counts=counts,
        n_trials=len(records),
        skipped=skipped,
        A1=A1,
        A2=cfg.A2,
        config=asdict(cfg),
        metadata=meta,
        records=records,
    )


def empirical_lipschitz(cfg: StabilityConfig, ctx: StabilityContext | None = None,
                        workers: int = 1) -> StabilityReport:
    """Minimum of ||A_m u - A_m' v|| / |m - m'| over random admissible pairs,
    with u chosen by least squares over E_m; both the dense-grid (continuous)
    norm and the discrete-grid norm are reported per pair."""
    ctx = ctx or StabilityContext.default()
    A1 = resolve_A1(cfg, ctx)
    fn = functools.partial(_pair_trial, cfg=cfg, ctx=ctx, A1=A1)
    records = parallel_map(fn, range(cfg.trials), workers)
    return _finish(records, cfg, ctx, A1)


def _fixed_trial(t, m0, v0, target, target_disc, cfg, ctx) -> TrialRecord:
    rng = np.random.default_rng([cfg.seed, t])
    m = ctx.box.sample(rng)
    dist = m.distance(m0)
    rec = TrialRecord(t, "ok", tuple(m.as_array()), tuple(m0.as_array()), dist)
    if dist < cfg.pair_separation_min:
        rec.status = "separation"
        return rec
    A, A_disc = ctx.operators(m)
    sub = svd_subspace(A, cfg.q)
    res, u = min_residual(A, sub, target)
    res_disc, _ = min_residual(A_disc, sub, target_disc)
    rec.v, rec.u = v0, u
    rec.v_norm = float(np.linalg.norm(v0))
    rec.data_norm = float(np.linalg.norm(target))
    rec.data_norm_disc = float(np.linalg.norm(target_disc))
    rec.ratio = res / dist
    rec.ratio_disc = res_disc / dist
    return rec


def fixed_target_lipschitz(m0: FaultParams, v0, cfg: StabilityConfig,
                           ctx: StabilityContext | None = None, workers: int = 1) -> StabilityReport:
    """Minimum of ||A_m u - A_m0 v0|| / |m - m0| for a fixed source v0, which
    need not lie in any E_m."""
    ctx = ctx or StabilityContext.default()
    v0 = np.asarray(v0, dtype=float)
    if v0.shape != (ctx.setup.basis.size,):
        raise ValueError(f"v0 must have {ctx.setup.basis.size} coefficients")
    if not np.any(v0):
        raise ValueError("v0 must be nonzero")
    A0, A0_disc = ctx.operators(m0)
    fn = functools.partial(_fixed_trial, m0=m0, v0=v0, target=A0.weighted @ v0,
                           target_disc=A0_disc.weighted @ v0, cfg=cfg, ctx=ctx)
    records = parallel_map(fn, range(cfg.trials), workers)
    return _finish(records, cfg, ctx, A1=float("nan"),
                   extra_meta={"m0": list(m0.as_array()), "v0_norm": float(np.linalg.norm(v0))})


# ---------------------------------------------------------------------------
# quadrature order


@dataclass
class QuadCheck:
    n_list: list
    M_list: list
    errors: dict
    slopes: dict


def quadrature_order_check(test_functions, n_list=(6, 11, 21, 41), half_width: float = 200.0,
                           exact_tol: float = 1e-12) -> QuadCheck:
    """Fit log|sum_j C'(j) f(P_j) - int_V f| against log M_n for each test
    function given as (name, f(points) -> values, exact integral).

    A function integrated exactly at every n (up to rounding) gets slope -inf.
    """
    n_list = list(n_list)
    if len(n_list) < 3:
        raise ValueError("need at least 3 grid sizes to fit a slope")
    grids = [observation_grid(n, half_width) for n in n_list]
    M = np.array([g.size for g in grids], dtype=float)
    errors, slopes = {}, {}
    for name, f, exact in test_functions:
        err = np.array([abs(g.integrate(f(g.points)) - exact) for g in grids])
        errors[name] = err
        scale = max(abs(exact), float(np.max([g.integrate(np.abs(f(g.points))) for g in grids[:1]])))
        if np.all(err <= exact_tol * max(scale, 1e-300)):
            slopes[name] = -math.inf
        else:
            slopes[name] = float(np.polyfit(np.log(M), np.log(np.maximum(err, 1e-300)), 1)[0])
    return QuadCheck(n_list, [int(x) for x in M], errors, slopes)


def cosine_test_function(scale: float = 50.0, half_width: float = 200.0):
    exact = (2 * scale * math.sin(half_width / scale)) ** 2
    return ("cos", lambda P: np.cos(P[:, 0] / scale) * np.cos(P[:, 1] / scale), exact)


def forward_data_test_function(setup: ForwardSetup, seed: int = 0, box: ParamBox = ParamBox(),
                               oracle_cells: int = 40, oracle_order: int = 6):
    """Data of a seeded random (m, u), with a composite Gauss-Legendre rule on V
    as the integral oracle."""
    from .geometry import gauss_observation_grid

    rng = np.random.default_rng(seed)
    m = box.sample(rng)
    u = rng.standard_normal(setup.basis.size)
    u /= np.linalg.norm(u)
    oracle = gauss_observation_grid(oracle_cells, oracle_order, setup.grid.half_width)
    exact = oracle.integrate(forward(setup.assemble(m, grid=oracle), u))

    def f(points):
        g = ObservationGrid(points, np.ones(len(points)), setup.grid.half_width)
        return forward(setup.assemble(m, grid=g), u)

    return (f"data(m=({m.a:.4f}, {m.b:.4f}, {m.d:.4f}))", f, exact)


# ---------------------------------------------------------------------------
# projections and the local constant


@dataclass
class ProjectionCheck:
    ratios: np.ndarray
    distances: np.ndarray
    gap0: float

    @property
    def max_ratio(self) -> float:
        return float(self.ratios.max())

    @property
    def median_ratio(self) -> float:
        return float(np.median(self.ratios))


def projection_lipschitz_check(m0: FaultParams, radius: float, trials: int, q: int,
                               setup: ForwardSetup | None = None, seed: int = 0,
                               min_gap: float = 0.1) -> ProjectionCheck:
    """Ratios ||P_m - P_m0||_2 / |m - m0| for m sampled in a ball around m0."""
    setup = setup or ForwardSetup()
    sub0 = svd_subspace(setup.assemble(m0), q)
    require_gap(sub0, min_gap, f" at m0={m0}")
    P0 = sub0.projector
    rng = np.random.default_rng(seed)
    ratios, dists = [], []
    for _ in range(trials):
        direction = _unit_direction(rng, 3)
        r = radius * (1.0 - rng.uniform(0.0, 1.0)) ** (1 / 3)  # in (0, radius]
        m = m0.shifted(r * direction)
        sub = svd_subspace(setup.assemble(m), q)
        require_gap(sub, min_gap, f" at m={m}")
        ratios.append(np.linalg.norm(sub.projector - P0, 2) / r)
        dists.append(r)
    return ProjectionCheck(np.array(ratios), np.array(dists), sub0.relative_gap)


@dataclass
class LocalConstant:
    value: float
    residual: np.ndarray  # columns: G v_i with the A_m E_m component removed
    range_basis: np.ndarray
    gap: float


def local_constant(m: FaultParams, q_dir, q: int = 5, setup: ForwardSetup | None = None,
                   h: float = 1e-4, min_gap: float = 0.1) -> LocalConstant:
    """dist((d_q A_m + A_m d_q P_m) v, A_m E_m) minimized over unit v in E_m."""
    setup = setup or ForwardSetup()
    q_dir = np.asarray(q_dir, dtype=float)
    A = setup.assemble(m)
    sub = svd_subspace(A, q)
    require_gap(sub, min_gap, f" at m={m}")
    dA = setup.derivative(m, q_dir)
    P_plus = svd_subspace(setup.assemble(m.shifted(h * q_dir)), q).projector
    P_minus = svd_subspace(setup.assemble(m.shifted(-h * q_dir)), q).projector
    dP = (P_plus - P_minus) / (2 * h)
    U = sub.basis
    G = dA.weighted @ U + A.weighted @ (dP @ U)
    Q, _ = np.linalg.qr(A.weighted @ U)
    R = G - Q @ (Q.T @ G)
    value = float(np.linalg.svd(R, compute_uv=False)[-1])
    return LocalConstant(value, R, Q, sub.relative_gap)


def directional_ratio(m: FaultParams, q_dir, step: float, q: int = 5,
                      setup: ForwardSetup | None = None) -> float:
    """min over unit v in E_m' and u in E_m of ||A_m u - A_m' v|| / step,
    with m' = m + step * q_dir."""
    setup = setup or ForwardSetup()
    q_dir = np.asarray(q_dir, dtype=float)
    A = setup.assemble(m)
    U = svd_subspace(A, q).basis
    mp = m.shifted(step * q_dir)
    Ap = setup.assemble(mp)
    Up = svd_subspace(Ap, q).basis
    Q, _ = np.linalg.qr(A.weighted @ U)
    T = Ap.weighted @ Up
    R = T - Q @ (Q.T @ T)
    return float(np.linalg.svd(R, compute_uv=False)[-1]) / step
