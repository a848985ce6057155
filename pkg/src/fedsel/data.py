"""Synthetic datasets, heterogeneous client partitions and partition I/O."""

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from . import _kernels
from .errors import ConfigError, PartitionError

FEASIBILITY_TOL = 0.05


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise ConfigError(
                f"features {self.features.shape} and labels {self.labels.shape} disagree"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ConfigError(f"labels must lie in [0, {self.class_count})")

    def __len__(self):
        return self.labels.shape[0]

    @property
    def dims(self) -> int:
        return self.features.shape[1]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.class_count)

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.class_count)


def gen_synthetic(
    class_count: int, per_class: int, dims: int, sep: float, seed: int, noise: float = 1.0
) -> Dataset:
    """Isotropic Gaussian clusters, one per class.

    Class means are random directions rescaled so the closest pair sits exactly
    ``sep`` apart; samples have per-coordinate standard deviation ``noise``.
    Rows are shuffled, so labels are not sorted.
    """
    if min(class_count, per_class, dims) <= 0:
        raise ConfigError("class_count, per_class and dims must be positive")
    if sep < 0:
        raise ConfigError("must be >= 0", "sep")
    rng = np.random.default_rng(seed)
    means = rng.standard_normal((class_count, dims))
    if class_count > 1:
        diff = means[:, None, :] - means[None, :, :]
        dist = np.sqrt((diff ** 2).sum(-1))
        closest = dist[np.triu_indices(class_count, 1)].min()
        means *= sep / closest
    else:
        means[:] = 0.0
    labels = np.repeat(np.arange(class_count), per_class)
    X = means[labels] + noise * rng.standard_normal((labels.size, dims))
    order = rng.permutation(labels.size)
    return Dataset(X[order], labels[order], class_count)


def split_per_class(ds: Dataset, holdout_per_class: int) -> Tuple[Dataset, Dataset]:
    """Move the first ``holdout_per_class`` samples of each class into a held-out set."""
    hold = []
    for c in range(ds.class_count):
        idx = np.flatnonzero(ds.labels == c)
        if idx.size < holdout_per_class:
            raise ConfigError(f"class {c} has only {idx.size} samples", "eval_per_class")
        hold.append(idx[:holdout_per_class])
    hold = np.sort(np.concatenate(hold)) if hold else np.zeros(0, dtype=np.int64)
    mask = np.ones(len(ds), dtype=bool)
    mask[hold] = False
    return ds.subset(np.flatnonzero(mask)), ds.subset(hold)


@dataclass(frozen=True)
class PartitionSpec:
    scheme: str
    num_clients: int
    shards_per_client: int = 1
    zeta: float = 0.2
    seed: int = 0
    max_draws: int = 50

    def __post_init__(self):
        if self.scheme not in ("shards", "dirichlet"):
            raise ConfigError(f"unknown scheme {self.scheme!r}", "scheme")
        if self.num_clients <= 0:
            raise ConfigError("must be positive", "num_clients")
        if self.scheme == "shards" and self.shards_per_client <= 0:
            raise ConfigError("must be positive", "shards_per_client")
        if self.scheme == "dirichlet" and not self.zeta > 0:
            raise ConfigError("must be positive", "zeta")
        if self.max_draws <= 0:
            raise ConfigError("must be positive", "max_draws")

    @classmethod
    def shards(cls, num_clients, shards_per_client, seed=0):
        return cls("shards", num_clients, shards_per_client=shards_per_client, seed=seed)

    @classmethod
    def dirichlet(cls, num_clients, zeta, seed=0, max_draws=50):
        return cls("dirichlet", num_clients, zeta=zeta, seed=seed, max_draws=max_draws)


@dataclass
class Partition:
    assignment: List[np.ndarray]
    label_histogram: np.ndarray
    info: dict = field(default_factory=dict)

    @property
    def num_clients(self) -> int:
        return len(self.assignment)

    def sizes(self) -> np.ndarray:
        return np.array([a.size for a in self.assignment], dtype=np.int64)

    def validate(self, ds: Dataset) -> None:
        """Raise ``PartitionError`` unless disjoint, in range and histogram-consistent."""
        seen = np.zeros(len(ds), dtype=bool)
        for i, idx in enumerate(self.assignment):
            if idx.size and (idx.min() < 0 or idx.max() >= len(ds)):
                raise PartitionError(f"client {i} holds an out-of-range index")
            if seen[idx].any() or np.unique(idx).size != idx.size:
                raise PartitionError(f"client {i} shares samples with another client")
            seen[idx] = True
            hist = np.bincount(ds.labels[idx], minlength=ds.class_count)
            if not np.array_equal(hist, self.label_histogram[i]):
                raise PartitionError(f"client {i} label histogram is stale")


def _histograms(ds: Dataset, assignment) -> np.ndarray:
    return np.array(
        [np.bincount(ds.labels[a], minlength=ds.class_count) for a in assignment],
        dtype=np.int64,
    ).reshape(len(assignment), ds.class_count)


def partition_shards(ds: Dataset, spec: PartitionSpec) -> Partition:
    """Sort by label, cut into ``N*s`` equal shards and deal ``s`` random shards per client."""
    if spec.scheme != "shards":
        raise ConfigError("partition_shards needs a shards spec", "scheme")
    n_shards = spec.num_clients * spec.shards_per_client
    if len(ds) < n_shards or len(ds) % n_shards:
        raise ConfigError(
            f"{len(ds)} samples cannot be cut into {n_shards} equal shards", "shards_per_client"
        )
    size = len(ds) // n_shards
    order = np.lexsort((np.arange(len(ds)), ds.labels))
    shards = order.reshape(n_shards, size)
    perm = np.random.default_rng(spec.seed).permutation(n_shards)
    s = spec.shards_per_client
    assignment = [np.sort(shards[perm[i * s:(i + 1) * s]].ravel()) for i in range(spec.num_clients)]
    return Partition(assignment, _histograms(ds, assignment), {"shard_size": size})


def largest_remainder(values: np.ndarray, total: int) -> np.ndarray:
    """Integers summing to ``total`` that floor ``values`` and hand the rest to the largest fractions."""
    values = np.asarray(values, dtype=np.float64)
    base = np.floor(values).astype(np.int64)
    short = int(total) - int(base.sum())
    if short < 0 or short > values.size:
        raise ValueError(f"cannot round {values.sum():.3f} to {total}")
    frac = values - base
    # stable sort: equal fractions go to the lower index
    for i in np.argsort(-frac, kind="stable")[:short]:
        base[i] += 1
    return base


def _round_capped(values: np.ndarray, cap: int) -> np.ndarray:
    """Largest-remainder rounding of ``values`` to a total of at most ``cap``."""
    total = float(values.sum())
    target = int(np.floor(total + 0.5))
    if target > cap:
        values = values * (cap / total)
        target = cap
    return largest_remainder(values, target)


@dataclass
class LeastNormResult:
    x: np.ndarray
    x_real: np.ndarray
    residual: float
    iterations: int


def solve_least_norm(
    Q,
    d,
    lam: float = 1e-6,
    max_iter: int = 100_000,
    tol: float = 1e-8,
    feasibility_tol: float = FEASIBILITY_TOL,
) -> LeastNormResult:
    """Nonnegative client sizes ``x`` with ``Q x ~= d`` and small ``||x||``.

    Projected gradient on ``||Qx - d||^2 + lam ||x||^2`` over ``x >= 0`` started
    from zero, stopped after ``max_iter`` steps or once the relative residual
    drops below ``tol``. The real solution is rounded by largest remainder to
    at most ``sum(d)`` samples.

    Raises
    ------
    PartitionError
        If the relative residual ``||Qx - d|| / ||d||`` exceeds ``feasibility_tol``.
    """
    Q = np.ascontiguousarray(Q, dtype=np.float64)
    d = np.ascontiguousarray(d, dtype=np.float64)
    if Q.ndim != 2 or d.shape != (Q.shape[0],):
        raise ConfigError(f"Q {Q.shape} and d {d.shape} are incompatible")
    if (Q < 0).any() or not np.allclose(Q.sum(axis=0), 1.0, atol=1e-8):
        raise ConfigError("columns of Q must be probability vectors")
    if (d < 0).any():
        raise ConfigError("label totals must be nonnegative")

    lipschitz = 2.0 * (np.linalg.norm(Q, 2) ** 2 + lam)
    x_real, iters = _kernels.pg_least_norm(Q, d, float(lam), 1.0 / lipschitz, int(max_iter), float(tol))
    dnorm = np.linalg.norm(d)
    residual = float(np.linalg.norm(Q @ x_real - d) / dnorm) if dnorm > 0 else 0.0
    if residual > feasibility_tol:
        raise PartitionError(
            f"least-norm allocation is infeasible (relative residual {residual:.4f} > "
            f"{feasibility_tol}); try a larger zeta or more clients",
            residual=residual,
        )
    x = _round_capped(x_real, int(d.sum()))
    return LeastNormResult(x=x, x_real=x_real, residual=residual, iterations=int(iters))


def partition_dirichlet(ds: Dataset, spec: PartitionSpec) -> Partition:
    """Dirichlet label mixtures with client sizes from the least-norm allocation.

    Each client's label distribution is drawn from ``Dir(zeta * p)`` with ``p``
    the empirical label prior. When the draw admits no allocation within the
    feasibility tolerance, the whole fraction matrix is redrawn from the same
    seeded stream, up to ``spec.max_draws`` times.
    """
    if spec.scheme != "dirichlet":
        raise ConfigError("partition_dirichlet needs a dirichlet spec", "scheme")
    counts = ds.class_counts()
    if (counts == 0).any():
        raise ConfigError("every class needs at least one sample")
    prior = counts / counts.sum()
    rng = np.random.default_rng(spec.seed)
    d = counts.astype(np.float64)
    err = None
    for draw in range(1, spec.max_draws + 1):
        Q = rng.dirichlet(spec.zeta * prior, size=spec.num_clients).T
        # tiny concentrations can underflow a whole column; renormalise defensively
        Q = Q / Q.sum(axis=0, keepdims=True)
        try:
            sol = solve_least_norm(Q, d)
            break
        except PartitionError as exc:
            err = exc
    else:
        raise PartitionError(
            f"no feasible allocation in {spec.max_draws} draws "
            f"(last residual {err.residual:.4f}); try a larger zeta or more clients",
            residual=err.residual,
        )

    want = Q * sol.x[None, :]
    per_label = np.array([_round_capped(want[c], int(counts[c])) for c in range(ds.class_count)])

    chunks = [[] for _ in range(spec.num_clients)]
    for c in range(ds.class_count):
        pool = rng.permutation(np.flatnonzero(ds.labels == c))
        bounds = np.concatenate([[0], np.cumsum(per_label[c])])
        for i in range(spec.num_clients):
            chunks[i].append(pool[bounds[i]:bounds[i + 1]])
    assignment = [np.sort(np.concatenate(ch)).astype(np.int64) for ch in chunks]
    info = {"residual": sol.residual, "draws": draw, "iterations": sol.iterations, "sizes": sol.x.tolist()}
    return Partition(assignment, _histograms(ds, assignment), info)


def make_partition(ds: Dataset, spec: PartitionSpec) -> Partition:
    if spec.scheme == "shards":
        return partition_shards(ds, spec)
    return partition_dirichlet(ds, spec)


@dataclass(frozen=True)
class PartitionStats:
    clients: int
    samples: int
    mean_size: float
    std_size: float
    min_size: int
    max_size: int
    mean_labels: float
    std_labels: float


def partition_stats(p: Partition) -> PartitionStats:
    """Per-client size and label-count summary (population standard deviations)."""
    if p.num_clients == 0:
        raise ConfigError("partition has no clients")
    sizes = p.sizes()
    labels = (p.label_histogram > 0).sum(axis=1)
    return PartitionStats(
        clients=p.num_clients,
        samples=int(sizes.sum()),
        mean_size=float(sizes.mean()),
        std_size=float(sizes.std()),
        min_size=int(sizes.min()),
        max_size=int(sizes.max()),
        mean_labels=float(labels.mean()),
        std_labels=float(labels.std()),
    )


def write_partition(p: Partition, path) -> None:
    """One line per client: the client's sample indices, ascending, space separated."""
    lines = [" ".join(str(int(i)) for i in np.sort(a)) for a in p.assignment]
    Path(path).write_text("\n".join(lines) + "\n")


def read_partition(path, ds: Dataset) -> Partition:
    text = Path(path).read_text()
    rows = text.split("\n")
    if rows and rows[-1] == "":
        rows = rows[:-1]
    try:
        assignment = [np.array([int(t) for t in row.split()], dtype=np.int64) for row in rows]
    except ValueError as exc:
        raise PartitionError(f"{path}: malformed index ({exc})") from None
    p = Partition(assignment, _histograms(ds, assignment) if assignment else np.zeros((0, ds.class_count), np.int64))
    p.validate(ds)
    return p


_IDX_TYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}


def load_idx(path) -> np.ndarray:
    """Read an IDX file (e.g. MNIST ``0x00000803`` images, ``0x00000801`` labels); ``.gz`` allowed."""
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise PartitionError(f"{path}: not an IDX file")
    dtype = _IDX_TYPES.get(raw[2])
    if dtype is None:
        raise PartitionError(f"{path}: unknown IDX element type 0x{raw[2]:02x}")
    ndim = raw[3]
    shape = struct.unpack(f">{ndim}I", raw[4:4 + 4 * ndim])
    body = raw[4 + 4 * ndim:]
    if len(body) != int(np.prod(shape)) * dtype.itemsize:
        raise PartitionError(f"{path}: expected {shape} elements, file is truncated or padded")
    return np.frombuffer(body, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))


def load_idx_dataset(images, labels, limit: Optional[int] = None, class_count: Optional[int] = None) -> Dataset:
    X = load_idx(images)
    y = load_idx(labels).astype(np.int64)
    if X.shape[0] != y.shape[0]:
        raise PartitionError(f"{X.shape[0]} images but {y.shape[0]} labels")
    if limit is not None:
        X, y = X[:limit], y[:limit]
    X = X.reshape(X.shape[0], -1).astype(np.float64)
    if X.size and X.max() > 1.0:
        X = X / 255.0
    return Dataset(X, y, class_count or int(y.max()) + 1)
