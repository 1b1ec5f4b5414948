"""Synthetic training and test data: random geometries, Gaussian slips on
the leading singular subspace, unit-normalized surface data."""
from __future__ import annotations

import functools
import gzip
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ._parallel import parallel_map
from .errors import DataFormatError, SampleError
from .geometry import PARAM_NAMES, FaultParams, ParamBox, observation_grid, sine_basis
from .kernel import KernelConfig
from .operators import ForwardSetup, forward, svd_subspace

FORMAT_VERSION = 1
NOISE_STREAM = 1
MAX_RESAMPLE = 10


@dataclass(frozen=True)
class DatasetMeta:
    seed: int
    count: int
    q: int
    start: int = 0
    n_grid: int = 11
    half_width_v: float = 200.0
    K: int = 8
    L: float = 150.0
    quad_order: int = 8
    cells: int = 8
    cutoff_enabled: bool = True
    d0: float = -5.0
    box_lower: tuple = ParamBox().lower
    box_upper: tuple = ParamBox().upper
    noise_level: float = 0.0
    version: int = FORMAT_VERSION

    @property
    def box(self) -> ParamBox:
        return ParamBox(tuple(self.box_lower), tuple(self.box_upper))

    def setup(self) -> ForwardSetup:
        return ForwardSetup(sine_basis(self.K, self.L), observation_grid(self.n_grid, self.half_width_v),
                            KernelConfig(self.cutoff_enabled, self.d0), self.quad_order, self.cells)

    @classmethod
    def from_setup(cls, setup: ForwardSetup, box: ParamBox, **kw) -> "DatasetMeta":
        if setup.grid.n_per_axis is None:
            raise ValueError("dataset generation needs a uniform observation grid")
        return cls(n_grid=setup.grid.n_per_axis, half_width_v=setup.grid.half_width,
                   K=setup.basis.K, L=setup.basis.L, quad_order=setup.quad_order, cells=setup.cells,
                   cutoff_enabled=setup.cfg.cutoff_enabled, d0=setup.cfg.d0,
                   box_lower=box.lower, box_upper=box.upper, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["box_lower"] = list(self.box_lower)
        d["box_upper"] = list(self.box_upper)
        return d


@dataclass(frozen=True)
class Sample:
    features: np.ndarray
    target: np.ndarray
    raw_m: FaultParams
    source_rank: int


@dataclass(eq=False)
class Dataset:
    features: np.ndarray  # (N, M), unit rows
    raw_m: np.ndarray  # (N, 3)
    meta: DatasetMeta
    targets: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.raw_m = np.asarray(self.raw_m, dtype=float)
        if len(self.features) != len(self.raw_m):
            raise ValueError("features and raw_m row counts differ")
        self.targets = self.meta.box.to_unit(self.raw_m)

    def __len__(self):
        return len(self.features)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def sample(self, i: int) -> Sample:
        return Sample(self.features[i], self.targets[i], FaultParams.from_array(self.raw_m[i]), self.meta.q)

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices)
        return Dataset(self.features[indices], self.raw_m[indices], self.meta)


def normalize_rows(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def _noisy(raw: np.ndarray, level: float, rng: np.random.Generator) -> np.ndarray:
    sn = np.max(np.abs(raw))
    return normalize_rows(raw + rng.normal(0.0, sn * level, size=raw.shape))


def add_noise(features, level: float, seed: int, indices=None) -> np.ndarray:
    """Add N(0, (sn*level)^2 I) to each row, sn being the row's sup norm, then
    re-normalize.  Row i draws from a stream keyed by (seed, indices[i])."""
    features = np.atleast_2d(np.asarray(features, dtype=float))
    if level == 0:
        return features.copy()
    if level < 0:
        raise ValueError(f"noise level must be nonnegative, got {level}")
    if indices is None:
        indices = range(len(features))
    return np.array([_noisy(row, level, np.random.default_rng([seed, i, NOISE_STREAM]))
                     for row, i in zip(features, indices)])


def _generate_one(index: int, meta: DatasetMeta, setup: ForwardSetup, weights_fn=None):
    rng = np.random.default_rng([meta.seed, index])
    m = meta.box.sample(rng)
    A = setup.assemble(m)
    sub = svd_subspace(A, meta.q)
    for _ in range(MAX_RESAMPLE):
        w = weights_fn(rng, meta.q) if weights_fn else rng.standard_normal(meta.q)
        data = forward(A, sub.basis @ w)
        if np.linalg.norm(data) >= 1e-14:
            break
    else:
        raise SampleError(f"sample {index}: data vector degenerate after {MAX_RESAMPLE} draws")
    feats = data / np.linalg.norm(data)
    if meta.noise_level > 0:
        feats = _noisy(data, meta.noise_level, np.random.default_rng([meta.seed, index, NOISE_STREAM]))
    return feats, m.as_array()


def generate(count: int, q: int, seed: int, setup: ForwardSetup | None = None,
             box: ParamBox = ParamBox(), noise_level: float = 0.0, start: int = 0,
             workers: int = 1, weights_fn=None) -> Dataset:
    """Samples start .. start+count-1 of the stream defined by ``seed``.

    Each sample draws m uniformly in the box and w ~ N(0, I_q), forms the data
    of sum_i w_i u_i over the top-q right singular vectors u_i of A_m, and
    normalizes it.  Per-sample generators are keyed by (seed, index), so index
    ranges give disjoint, reproducible splits.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if q < 1:
        raise ValueError(f"q must be >= 1, got {q}")
    setup = setup or ForwardSetup()
    meta = DatasetMeta.from_setup(setup, box, seed=int(seed), count=int(count), q=int(q),
                                  start=int(start), noise_level=float(noise_level))
    fn = functools.partial(_generate_one, meta=meta, setup=setup, weights_fn=weights_fn)
    rows = parallel_map(fn, range(start, start + count), workers)
    return Dataset(np.array([r[0] for r in rows]), np.array([r[1] for r in rows]), meta)


# ---------------------------------------------------------------------------
# persistence: CSV body (a,b,d,f_1..f_M) + JSON sidecar


def _open(path, mode):
    path = str(path)
    if path.endswith(".gz"):
        return gzip.open(path, mode + "t", encoding="utf-8", newline="") if "b" not in mode else gzip.open(path, mode)
    return open(path, mode, encoding="utf-8", newline="")


def sidecar_path(path) -> Path:
    return Path(str(path) + ".meta.json")


def save(dataset: Dataset, path):
    M = dataset.n_features
    buf = io.StringIO()
    buf.write(",".join(list(PARAM_NAMES) + [f"f_{j + 1}" for j in range(M)]) + "\n")
    for m, f in zip(dataset.raw_m, dataset.features):
        buf.write(",".join(repr(float(v)) for v in m) + "," + ",".join(repr(float(v)) for v in f) + "\n")
    if str(path).endswith(".gz"):
        # fixed mtime keeps the archive byte-identical across runs
        with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0, filename="") as gz:
            gz.write(buf.getvalue().encode())
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(buf.getvalue())
    side = {"format": "faultstab-dataset", "version": FORMAT_VERSION, "n_features": M,
            "n_samples": len(dataset), "meta": dataset.meta.to_dict()}
    sidecar_path(path).write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")


def load(path) -> Dataset:
    side_file = sidecar_path(path)
    if not side_file.exists():
        raise DataFormatError(f"{path}: missing metadata sidecar {side_file}")
    side = json.loads(side_file.read_text())
    if side.get("format") != "faultstab-dataset" or side.get("version") != FORMAT_VERSION:
        raise DataFormatError(f"{side_file}: unsupported format/version "
                              f"{side.get('format')}/{side.get('version')}")
    M = int(side["n_features"])
    meta_d = dict(side["meta"])
    meta_d["box_lower"] = tuple(meta_d["box_lower"])
    meta_d["box_upper"] = tuple(meta_d["box_upper"])
    meta = DatasetMeta(**meta_d)
    with _open(path, "r") as fh:
        header = fh.readline().rstrip("\r\n").split(",")
        expected = list(PARAM_NAMES) + [f"f_{j + 1}" for j in range(M)]
        if header != expected:
            raise DataFormatError(f"{path}:1: header has {len(header)} columns, "
                                  f"metadata implies {len(expected)}")
        raw_m, feats = [], []
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\r\n")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != M + 3:
                raise DataFormatError(f"{path}:{lineno}: expected {M + 3} fields, found {len(parts)}")
            try:
                vals = [float(p) for p in parts]
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
            raw_m.append(vals[:3])
            feats.append(vals[3:])
    if len(raw_m) != int(side["n_samples"]):
        raise DataFormatError(f"{path}:{len(raw_m) + 2}: file ends after {len(raw_m)} rows, "
                              f"metadata lists {side['n_samples']}")
    return Dataset(np.array(feats).reshape(-1, M), np.array(raw_m).reshape(-1, 3), meta)
