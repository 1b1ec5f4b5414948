"""MLP surrogate for the data-to-parameter map and the nearest-neighbor baselines."""
from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DataFormatError, TrainingError
from .scg import scg

MODEL_MAGIC = "faultstab-mlp"
MODEL_VERSION = 1
NORM_TOL = 1e-8


class FeatureNormWarning(UserWarning):
    pass


def _minmax(x: np.ndarray):
    lo, hi = x.min(axis=0), x.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return lo, span


@dataclass(eq=False)
class MlpModel:
    dims: tuple  # (M, h1, ..., 3)
    params: np.ndarray  # flat: per layer W (in x out) row-major, then b
    x_lo: np.ndarray
    x_span: np.ndarray
    t_lo: np.ndarray
    t_span: np.ndarray
    gamma: float = 0.2
    seed: int = 0
    iterations: int = 0
    loss_trace: list = field(default_factory=list, repr=False)
    activation: str = "tanh"

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if self.params.size != n_params(self.dims):
            raise ValueError(f"{self.params.size} parameters do not fit dims {self.dims}")

    @property
    def final_loss(self) -> float:
        return self.loss_trace[-1] if self.loss_trace else float("nan")

    def layers(self, params=None):
        return _unpack(self.params if params is None else params, self.dims)

    def scale_inputs(self, x):
        return 2.0 * (x - self.x_lo) / self.x_span - 1.0

    def unscale_outputs(self, y):
        return self.t_lo + 0.5 * (y + 1.0) * self.t_span

    def raw_output(self, features) -> np.ndarray:
        h = self.scale_inputs(features)
        layers = self.layers()
        for W, b in layers[:-1]:
            h = np.tanh(h @ W + b)
        W, b = layers[-1]
        return self.unscale_outputs(h @ W + b)


def n_params(dims) -> int:
    return sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))


def n_weights(dims) -> int:
    return sum(a * b for a, b in zip(dims[:-1], dims[1:]))


def _unpack(params, dims):
    out, k = [], 0
    for a, b in zip(dims[:-1], dims[1:]):
        W = params[k:k + a * b].reshape(a, b)
        k += a * b
        out.append((W, params[k:k + b]))
        k += b
    return out


def init_params(dims, rng: np.random.Generator) -> np.ndarray:
    chunks = []
    for a, b in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (a + b))
        chunks.append(rng.uniform(-limit, limit, size=a * b))
        chunks.append(np.zeros(b))
    return np.concatenate(chunks)


def _weight_mask(dims) -> np.ndarray:
    mask = []
    for a, b in zip(dims[:-1], dims[1:]):
        mask.append(np.ones(a * b, dtype=bool))
        mask.append(np.zeros(b, dtype=bool))
    return np.concatenate(mask)


class Objective:
    """J(w) = gamma * mean(weights^2) + (1 - gamma) * MSE.

    The MSE is taken in target units after undoing the output scaling; biases
    are not penalized.
    """

    def __init__(self, dims, xs, targets, t_lo, t_span, gamma):
        self.dims = tuple(dims)
        self.xs = xs  # already scaled inputs
        self.t = targets
        self.t_lo, self.t_span = t_lo, t_span
        self.gamma = float(gamma)
        self.mask = _weight_mask(self.dims)
        self.nw = int(self.mask.sum())

    def _forward(self, params):
        layers = _unpack(params, self.dims)
        acts = [self.xs]
        h = self.xs
        for W, b in layers[:-1]:
            h = np.tanh(h @ W + b)
            acts.append(h)
        W, b = layers[-1]
        y = self.t_lo + 0.5 * (h @ W + b + 1.0) * self.t_span
        return layers, acts, y

    def value(self, params) -> float:
        _, _, y = self._forward(params)
        w = params[self.mask]
        return self.gamma * (w @ w) / self.nw + (1 - self.gamma) * np.mean((y - self.t) ** 2)

    def gradient(self, params) -> np.ndarray:
        layers, acts, y = self._forward(params)
        grads = []
        delta = (1 - self.gamma) * 2.0 * (y - self.t) / self.t.size * 0.5 * self.t_span
        for i in range(len(layers) - 1, -1, -1):
            W, _ = layers[i]
            gW = acts[i].T @ delta + (2.0 * self.gamma / self.nw) * W
            grads.append((gW.ravel(), delta.sum(axis=0)))
            if i:
                delta = (delta @ W.T) * (1.0 - acts[i] ** 2)
        return np.concatenate([c for gw, gb in reversed(grads) for c in (gw, gb)])


def train_mlp(features, targets=None, hidden=(64, 32, 16), gamma: float = 0.2,
              max_iters: int = 2000, seed: int = 0, init=None) -> MlpModel:
    """Fit a tanh MLP by scaled conjugate gradient.

    ``features`` may be a Dataset, in which case its targets are used.
    Inputs and targets are min-max scaled to [-1, 1] from the training data.
    """
    if targets is None:
        features, targets = features.features, features.targets
    X = np.asarray(features, dtype=float)
    T = np.asarray(targets, dtype=float)
    if X.ndim != 2 or T.ndim != 2 or len(X) != len(T):
        raise ValueError(f"features {X.shape} and targets {T.shape} are inconsistent")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    if max_iters < 0:
        raise ValueError("max_iters must be nonnegative")
    dims = (X.shape[1], *[int(h) for h in hidden], T.shape[1])
    x_lo, x_span = _minmax(X)
    t_lo, t_span = _minmax(T)
    obj = Objective(dims, 2.0 * (X - x_lo) / x_span - 1.0, T, t_lo, t_span, gamma)
    p0 = init_params(dims, np.random.default_rng(seed)) if init is None else np.asarray(init, float)

    def check(it, value):
        if not np.isfinite(value):
            raise TrainingError(f"non-finite loss {value} at iteration {it}")

    res = scg(obj.value, obj.gradient, p0, max_iters=max_iters, check=check)
    return MlpModel(dims, res.x, x_lo, x_span, t_lo, t_span, gamma=float(gamma), seed=int(seed),
                    iterations=res.iterations, loss_trace=[float(v) for v in res.trace])


def _as_unit_rows(features, n_in=None):
    X = np.atleast_2d(np.asarray(features, dtype=float))
    if n_in is not None and X.shape[1] != n_in:
        raise ValueError(f"expected {n_in} features, got {X.shape[1]}")
    norms = np.linalg.norm(X, axis=1)
    off = np.abs(norms - 1.0) > NORM_TOL
    if off.any():
        warnings.warn(f"{int(off.sum())} feature rows were not unit norm and were rescaled",
                      FeatureNormWarning, stacklevel=3)
        X = X / norms[:, None]
    return X


def predict(model: MlpModel, features) -> np.ndarray:
    """Normalized parameter estimates in [0, 1]^3, one row per input row."""
    single = np.ndim(features) == 1
    X = _as_unit_rows(features, model.dims[0])
    out = np.clip(model.raw_output(X), 0.0, 1.0)
    return out[0] if single else out


def save_model(model: MlpModel, path):
    header = {"version": MODEL_VERSION, "dims": list(model.dims), "activation": model.activation,
              "gamma": model.gamma, "seed": model.seed, "iterations": model.iterations,
              "final_loss": model.final_loss}
    payload = np.concatenate([model.params, model.x_lo, model.x_span, model.t_lo, model.t_span])
    with open(path, "wb") as fh:
        fh.write(f"{MODEL_MAGIC} {json.dumps(header, sort_keys=True)}\n".encode())
        fh.write(payload.astype("<f8").tobytes())


def load_model(path) -> MlpModel:
    with open(path, "rb") as fh:
        line = fh.readline().decode()
        body = fh.read()
    magic, _, rest = line.partition(" ")
    if magic != MODEL_MAGIC:
        raise DataFormatError(f"{path}: not a model file")
    header = json.loads(rest)
    if header.get("version") != MODEL_VERSION:
        raise DataFormatError(f"{path}: model version {header.get('version')} unsupported")
    dims = tuple(header["dims"])
    M, k = dims[0], dims[-1]
    npar = n_params(dims)
    data = np.frombuffer(body, dtype="<f8")
    if data.size != npar + 2 * M + 2 * k:
        raise DataFormatError(f"{path}: payload has {data.size} values, header implies {npar + 2 * M + 2 * k}")
    data = data.astype(float)
    parts = np.split(data, np.cumsum([npar, M, M, k]))
    return MlpModel(dims, *parts, gamma=header["gamma"], seed=header["seed"],
                    iterations=header["iterations"], loss_trace=[header["final_loss"]],
                    activation=header["activation"])


# ---------------------------------------------------------------------------
# nearest-neighbor baselines


@dataclass(eq=False)
class SampleBank:
    features: np.ndarray
    targets: np.ndarray
    label: str = "S"

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=float)
        self.targets = np.asarray(self.targets, dtype=float)
        if len(self.features) == 0:
            raise ValueError(f"sample bank {self.label} is empty")
        if len(self.features) != len(self.targets):
            raise ValueError("bank features and targets differ in length")
        self._sq = np.einsum("ij,ij->i", self.features, self.features)

    def __len__(self):
        return len(self.features)

    @classmethod
    def from_dataset(cls, ds, label="S") -> "SampleBank":
        return cls(ds.features, ds.targets, label)

    def subsample(self, size: int, seed: int, label="S0") -> "SampleBank":
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(len(self), size=size, replace=False))
        return SampleBank(self.features[idx], self.targets[idx], label)


def nn_index(bank: SampleBank, features, block: int = 512) -> np.ndarray:
    """Index of the closest bank row (Euclidean), lowest index on ties.

    Squared distances come from one matrix product per block; rows within a
    rounding margin of the block minimum are then re-scored exactly.
    """
    Q = np.atleast_2d(np.asarray(features, dtype=float))
    if Q.shape[1] != bank.features.shape[1]:
        raise ValueError(f"expected {bank.features.shape[1]} features, got {Q.shape[1]}")
    out = np.empty(len(Q), dtype=np.int64)
    F = bank.features
    for s in range(0, len(Q), block):
        q = Q[s:s + block]
        qq = np.einsum("ij,ij->i", q, q)
        d2 = bank._sq[None, :] - 2.0 * (q @ F.T) + qq[:, None]
        best = d2.min(axis=1)
        margin = 1e-10 * (1.0 + bank._sq.max() + qq)
        for r in range(len(q)):
            cand = np.flatnonzero(d2[r] <= best[r] + margin[r])
            exact = np.sum((F[cand] - q[r]) ** 2, axis=1)
            out[s + r] = cand[np.argmin(exact)]
    return out


def nn_search(bank: SampleBank, features) -> np.ndarray:
    single = np.ndim(features) == 1
    out = bank.targets[nn_index(bank, features)]
    return out[0] if single else out


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class Evaluation:
    name: str
    abs_errors: np.ndarray  # (N, 3)
    predictions: np.ndarray
    load_time: float
    run_time: float

    @property
    def mae(self) -> np.ndarray:
        return self.abs_errors.mean(axis=0)


def evaluate(name: str, method, testset, load_time: float = 0.0) -> Evaluation:
    """Run ``method`` (features -> normalized m) on the whole test batch."""
    t0 = time.perf_counter()
    pred = np.asarray(method(testset.features), dtype=float)
    run = time.perf_counter() - t0
    return Evaluation(name, np.abs(pred - testset.targets), pred, load_time, run)


def timed_load(loader, path):
    t0 = time.perf_counter()
    obj = loader(path)
    return obj, time.perf_counter() - t0


def prediction_lipschitz(model: MlpModel, features, pairs: int = 1000, seed: int = 0) -> dict:
    """Ratios |predict(f1) - predict(f2)| / |f1 - f2| over random row pairs."""
    X = np.asarray(features, dtype=float)
    rng = np.random.default_rng(seed)
    i = rng.integers(0, len(X), pairs)
    j = rng.integers(0, len(X), pairs)
    keep = i != j
    i, j = i[keep], j[keep]
    P = predict(model, X)
    num = np.linalg.norm(P[i] - P[j], axis=1)
    den = np.linalg.norm(X[i] - X[j], axis=1)
    ok = den > 0
    ratios = num[ok] / den[ok]
    return {"pairs": int(ok.sum()), "max": float(ratios.max()), "median": float(np.median(ratios)),
            "finite": bool(np.all(np.isfinite(ratios)))}

