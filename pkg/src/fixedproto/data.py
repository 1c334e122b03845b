"""Datasets: a synthetic generator with controllable ground-truth factors,
tabular file ingestion, and deterministic stratified splits.

The file format is delimiter-separated text with a header row naming the
columns ``f0..f{p-1}, label, alpha_0..alpha_{m-1}``; factor columns are
optional.  Floats are written with ``repr`` so save/load round-trips exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import random_orthonormal_basis

LABEL_SUM_TOL = 1e-9

# Per-level value bands used by the generator: one unit wide, centered on
# -1, 0, +1.  Draws are uniform in [low, high), so a value maps back to its
# generating level unambiguously.
LEVEL_BANDS = ((-1.5, -0.5), (-0.5, 0.5), (0.5, 1.5))


@dataclass
class Sample:
    """One observation: features, soft label, optional factor values.

    ``factors`` holds raw per-factor values (m,) or soft level codes (m, 3);
    ``None`` when the dataset has no factor columns.
    """

    x: np.ndarray
    y: np.ndarray
    factors: np.ndarray | None = None


@dataclass(eq=False)
class Dataset:
    X: np.ndarray  # (n, p)
    Y: np.ndarray  # (n, C), rows on the class simplex
    factors: np.ndarray | None  # (n, m) raw values, or None
    class_names: tuple
    factor_names: tuple

    def __post_init__(self):
        X = np.ascontiguousarray(np.asarray(self.X, dtype=np.float64))
        Y = np.ascontiguousarray(np.asarray(self.Y, dtype=np.float64))
        if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0]:
            raise ValueError("X and Y must be 2-D with matching row counts")
        if not np.all(np.isfinite(X)):
            raise ValueError("features contain non-finite entries")
        if np.any(Y < 0) or np.max(np.abs(Y.sum(axis=1) - 1.0), initial=0.0) > LABEL_SUM_TOL:
            raise ValueError("labels must be nonnegative and sum to 1 per row")
        if len(self.class_names) != Y.shape[1]:
            raise ValueError("one class name per label column required")
        if self.factors is not None:
            F = np.ascontiguousarray(np.asarray(self.factors, dtype=np.float64))
            if F.ndim != 2 or F.shape[0] != X.shape[0]:
                raise ValueError("factors must be (n, m) with one row per sample")
            if len(self.factor_names) != F.shape[1]:
                raise ValueError("one factor name per factor column required")
            self.factors = F
        elif self.factor_names:
            raise ValueError("factor names given but no factor values")
        self.X = X
        self.Y = Y
        self.class_names = tuple(str(c) for c in self.class_names)
        self.factor_names = tuple(str(f) for f in self.factor_names)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def input_dim(self) -> int:
        return self.X.shape[1]

    @property
    def class_count(self) -> int:
        return self.Y.shape[1]

    @property
    def factor_count(self) -> int:
        return 0 if self.factors is None else self.factors.shape[1]

    def sample(self, i: int) -> Sample:
        f = None if self.factors is None else self.factors[i]
        return Sample(x=self.X[i], y=self.Y[i], factors=f)

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        f = None if self.factors is None else self.factors[idx]
        return Dataset(
            X=self.X[idx],
            Y=self.Y[idx],
            factors=f,
            class_names=self.class_names,
            factor_names=self.factor_names,
        )

    def class_indices(self) -> np.ndarray:
        return np.argmax(self.Y, axis=1)


@dataclass
class SynthConfig:
    """Generator settings.

    ``factor_tables`` gives, per factor, a (class_count, 3) row-stochastic
    table of level probabilities conditioned on the class; ``None`` means
    uniform levels for every class.  Requires ``input_dim >= class_count +
    factor_count`` so class and factor signal directions can be mutually
    orthogonal.
    """

    class_count: int
    input_dim: int
    samples_per_class: int
    factor_count: int = 0
    factor_tables: np.ndarray | None = None
    class_separation: float = 3.0
    noise_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.class_count < 2:
            raise ValueError("class_count must be >= 2")
        if self.input_dim < 1 or self.samples_per_class < 1:
            raise ValueError("input_dim and samples_per_class must be >= 1")
        if self.factor_count < 0:
            raise ValueError("factor_count must be >= 0")
        if self.input_dim < self.class_count + self.factor_count:
            raise ValueError(
                f"input_dim {self.input_dim} must be >= class_count + factor_count "
                f"({self.class_count + self.factor_count}) for orthogonal signal directions"
            )
        if self.class_separation <= 0:
            raise ValueError("class_separation must be > 0")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")
        if self.factor_tables is not None:
            T = np.asarray(self.factor_tables, dtype=np.float64)
            if T.shape != (self.factor_count, self.class_count, 3):
                raise ValueError(
                    f"factor_tables must have shape ({self.factor_count}, {self.class_count}, 3)"
                )
            for f in range(self.factor_count):
                rows = T[f].sum(axis=1)
                if np.any(T[f] < 0) or np.max(np.abs(rows - 1.0)) > 1e-9:
                    raise ValueError(f"factor {f}: probability table rows must sum to 1")
            self.factor_tables = T

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthConfig":
        known = {
            "class_count",
            "input_dim",
            "samples_per_class",
            "factor_count",
            "factor_tables",
            "class_separation",
            "noise_scale",
            "seed",
        }
        unknown = set(doc) - known - {"schema_version"}
        if unknown:
            raise ValueError(f"unknown generator config fields: {sorted(unknown)}")
        kwargs = {k: doc[k] for k in known if k in doc}
        if kwargs.get("factor_tables") is not None:
            kwargs["factor_tables"] = np.asarray(kwargs["factor_tables"], dtype=np.float64)
        return cls(**kwargs)

    def to_dict(self) -> dict:
        tables = None if self.factor_tables is None else self.factor_tables.tolist()
        return {
            "schema_version": 1,
            "class_count": self.class_count,
            "input_dim": self.input_dim,
            "samples_per_class": self.samples_per_class,
            "factor_count": self.factor_count,
            "factor_tables": tables,
            "class_separation": self.class_separation,
            "noise_scale": self.noise_scale,
            "seed": self.seed,
        }


def generate_synthetic(config: SynthConfig) -> Dataset:
    """Generate a dataset where class and factors are both recoverable.

    Class centroids and per-factor signal directions are mutually orthogonal
    unit vectors in input space; each sample is its class centroid (scaled by
    ``class_separation``) plus its factor values along the factor directions
    plus isotropic Gaussian noise.  Factor levels are drawn per sample from
    the class-conditional tables, then the continuous value uniformly within
    that level's band.

    Draw order (levels per factor, then values, then noise) is fixed, so a
    seed pins the dataset exactly.
    """
    C, p, m = config.class_count, config.input_dim, config.factor_count
    n = C * config.samples_per_class
    dir_seed, draw_seed = np.random.SeedSequence(config.seed).spawn(2)
    directions = random_orthonormal_basis(C + m, p, dir_seed).vectors
    centroids = config.class_separation * directions[:C]
    rng = np.random.default_rng(draw_seed)

    class_idx = np.repeat(np.arange(C), config.samples_per_class)
    X = centroids[class_idx].copy()
    factors = None
    if m > 0:
        if config.factor_tables is None:
            tables = np.full((m, C, 3), 1.0 / 3.0)
        else:
            tables = config.factor_tables
        bands = np.asarray(LEVEL_BANDS)
        factors = np.empty((n, m))
        for f in range(m):
            probs = tables[f][class_idx]  # (n, 3)
            cdf = np.cumsum(probs, axis=1)
            u = rng.random(n)
            levels = (u[:, None] > cdf[:, :2]).sum(axis=1)
            factors[:, f] = rng.uniform(bands[levels, 0], bands[levels, 1])
        X += factors @ directions[C:]
    if config.noise_scale > 0:
        X += config.noise_scale * rng.standard_normal((n, p))

    Y = np.identity(C)[class_idx]
    return Dataset(
        X=X,
        Y=Y,
        factors=factors,
        class_names=tuple(str(c) for c in range(C)),
        factor_names=tuple(f"alpha_{i}" for i in range(m)),
    )


def true_levels(factors) -> np.ndarray:
    """Recover generating levels from generated factor values.

    Inverts the generator's level bands exactly: values below -0.5 were drawn
    as level 0, values from -0.5 up to (excluding) 0.5 as level 1, the rest
    as level 2.  Only meaningful for data from :func:`generate_synthetic`.
    """
    a = np.asarray(factors, dtype=np.float64)
    return (a >= LEVEL_BANDS[0][1]).astype(np.int64) + (a >= LEVEL_BANDS[1][1]).astype(np.int64)


def save_dataset(dataset: Dataset, path) -> None:
    """Write the documented tabular text format (hard labels only)."""
    p = dataset.input_dim
    header = [f"f{j}" for j in range(p)] + ["label"] + list(dataset.factor_names)
    class_idx = dataset.class_indices()
    lines = [",".join(header)]
    for i in range(dataset.n):
        cells = [repr(float(v)) for v in dataset.X[i]]
        cells.append(dataset.class_names[class_idx[i]])
        if dataset.factors is not None:
            cells.extend(repr(float(v)) for v in dataset.factors[i])
        lines.append(",".join(cells))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _ordered_class_names(names) -> tuple:
    names = list(dict.fromkeys(names))
    try:
        return tuple(sorted(names, key=int))
    except ValueError:
        return tuple(sorted(names))


def load_table(path, class_names=None) -> Dataset:
    """Load a dataset from the documented tabular text format.

    The header determines the schema: ``f*`` columns are features (in file
    order), ``label`` is the class column, ``alpha_*`` columns are factors.
    Row order is preserved; labels become one-hot rows.  When ``class_names``
    is given it fixes the class order and unlisted names are rejected.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh]
    lines = [line for line in lines if line.strip()]
    if not lines:
        raise ValueError(f"{path}: empty file")
    header = [c.strip() for c in lines[0].split(",")]
    try:
        label_col = header.index("label")
    except ValueError:
        raise ValueError(f"{path}: header has no 'label' column") from None
    feature_cols = [i for i, name in enumerate(header) if name.startswith("f")]
    factor_cols = [i for i, name in enumerate(header) if name.startswith("alpha_")]
    if [header[i] for i in feature_cols] != [f"f{j}" for j in range(len(feature_cols))]:
        raise ValueError(f"{path}: feature columns must be named f0..f{{p-1}} in order")
    if not feature_cols:
        raise ValueError(f"{path}: no feature columns found")

    rows_x, rows_f, labels = [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        cells = [c.strip() for c in line.split(",")]
        if len(cells) != len(header):
            raise ValueError(f"{path}: row {lineno}: expected {len(header)} cells, got {len(cells)}")

        def parse(col):
            try:
                return float(cells[col])
            except ValueError:
                raise ValueError(
                    f"{path}: row {lineno}, column {header[col]!r}: "
                    f"could not parse {cells[col]!r} as a number"
                ) from None

        rows_x.append([parse(c) for c in feature_cols])
        rows_f.append([parse(c) for c in factor_cols])
        labels.append(cells[label_col])

    if class_names is None:
        class_names = _ordered_class_names(labels)
    else:
        class_names = tuple(str(c) for c in class_names)
    index = {name: i for i, name in enumerate(class_names)}
    Y = np.zeros((len(labels), len(class_names)))
    for i, name in enumerate(labels):
        if name not in index:
            raise ValueError(f"{path}: row {i + 2}: unknown class name {name!r}")
        Y[i, index[name]] = 1.0

    factors = np.array(rows_f) if factor_cols else None
    return Dataset(
        X=np.array(rows_x),
        Y=Y,
        factors=factors,
        class_names=class_names,
        factor_names=tuple(header[i] for i in factor_cols),
    )


def split(dataset: Dataset, train_fraction: float, seed) -> tuple:
    """Deterministic stratified split into (train, validation).

    Disjoint and exhaustive; every class keeps at least one sample on each
    side, so per-class proportions hold within one sample.  Indices within
    each side stay in original order.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    class_idx = dataset.class_indices()
    train_ids, val_ids = [], []
    for c in range(dataset.class_count):
        members = np.flatnonzero(class_idx == c)
        if members.size < 2:
            raise ValueError(f"class {dataset.class_names[c]!r} has fewer than 2 samples")
        perm = rng.permutation(members)
        n_train = int(np.clip(round(train_fraction * members.size), 1, members.size - 1))
        train_ids.extend(perm[:n_train])
        val_ids.extend(perm[n_train:])
    train_ids = np.sort(np.asarray(train_ids))
    val_ids = np.sort(np.asarray(val_ids))
    return dataset.subset(train_ids), dataset.subset(val_ids)


def joint_probability_table(dataset: Dataset, coder) -> np.ndarray:
    """Empirical joint probabilities of (class, factor level), per factor.

    Returns an (m, C, 3) array; each factor's C-by-3 slice sums to 1.
    """
    if dataset.factors is None:
        raise ValueError("dataset has no factor values")
    levels = coder.level_indices(dataset.factors)  # (n, m)
    class_idx = dataset.class_indices()
    m = dataset.factor_count
    out = np.zeros((m, dataset.class_count, 3))
    for f in range(m):
        np.add.at(out[f], (class_idx, levels[:, f]), 1.0)
    return out / dataset.n
