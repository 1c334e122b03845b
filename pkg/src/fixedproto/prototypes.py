"""Fixed (non-trainable) prototype extractors.

A prototype extractor maps a (soft) class label and optional factor values to
a target point in embedding space.  It is frozen at construction and never
updated by training.  Two constructions are provided:

* class-orthogonal: one prototype per class.  When the embedding has room
  (k >= C) the prototypes are mutually orthonormal; otherwise orthonormal
  vectors in R^C are pushed through a Johnson-Lindenstrauss projection into
  R^k, which nearly preserves their pairwise distances.
* factor-coded: prototypes encode named, human-meaningful factors as
  three-level one-hot codes (low/medium/high by training-set terciles),
  concatenated and padded with a zero block.  Labels are ignored; the zero
  block leaves the trailing dimensions free for factors nobody named.

Both kinds are linear in the soft label / soft level-code inputs, so a convex
mix of inputs yields the same convex mix of prototypes.  That is what makes
label-mixing augmentation compatible with prototype matching.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .linalg import jlt_create, random_orthonormal_basis

LEVELS_PER_FACTOR = 3
LEVEL_NAMES = ("low", "medium", "high")

# Hyndman & Fan type 4: linear interpolation of the empirical CDF.  With this
# convention the terciles of {1..9} are exactly (3, 6) and equal-count level
# bins stay exact up to ties.
QUANTILE_METHOD = "interpolated_inverted_cdf"

EXTRACTOR_FORMAT = "prototype-extractor"
EXTRACTOR_VERSION = 1

LABEL_SUM_TOL = 1e-9


def _validate_simplex(vec: np.ndarray, what: str, length: int | None = None) -> np.ndarray:
    v = np.asarray(vec, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"{what} must be 1-D, got shape {v.shape}")
    if length is not None and v.shape[0] != length:
        raise ValueError(f"{what} has length {v.shape[0]}, expected {length}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{what} contains non-finite entries")
    if np.any(v < 0):
        raise ValueError(f"{what} has negative entries")
    if abs(float(v.sum()) - 1.0) > LABEL_SUM_TOL:
        raise ValueError(f"{what} must sum to 1 (got {float(v.sum())!r})")
    return v


@dataclass(frozen=True, eq=False)
class FactorCoder:
    """Per-factor tercile thresholds mapping raw values to 3-level codes.

    ``lower`` and ``upper`` hold the 1/3 and 2/3 training-set quantiles per
    factor, in the raw units of each factor.  A value lands in the lower bin
    when it is <= the lower threshold, in the middle bin when it is <= the
    upper threshold, and in the upper bin otherwise.
    """

    names: tuple
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.ascontiguousarray(np.asarray(self.lower, dtype=np.float64))
        hi = np.ascontiguousarray(np.asarray(self.upper, dtype=np.float64))
        if lo.ndim != 1 or hi.ndim != 1 or lo.shape != hi.shape:
            raise ValueError("lower and upper must be 1-D arrays of equal length")
        if len(self.names) != lo.shape[0]:
            raise ValueError("one name per factor required")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("thresholds must be finite")
        if np.any(lo > hi):
            raise ValueError("lower thresholds must not exceed upper thresholds")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "names", tuple(str(n) for n in self.names))
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def factor_count(self) -> int:
        return self.lower.shape[0]

    def level_indices(self, values) -> np.ndarray:
        """Map raw values (..., m) to integer levels 0/1/2 per factor."""
        v = np.asarray(values, dtype=np.float64)
        if v.shape[-1] != self.factor_count:
            raise ValueError(f"expected {self.factor_count} factor values, got {v.shape[-1]}")
        return (v > self.lower).astype(np.int64) + (v > self.upper).astype(np.int64)

    def code(self, values) -> np.ndarray:
        """Map raw values (..., m) to hard one-hot level codes (..., m, 3)."""
        idx = self.level_indices(values)
        return np.identity(LEVELS_PER_FACTOR)[idx]


def fit_factor_coder(values_per_factor, names=None) -> FactorCoder:
    """Fit tercile thresholds from per-factor lists of training values.

    Quantiles use the ``interpolated_inverted_cdf`` convention (linear
    interpolation of the empirical CDF); the convention is recorded in the
    serialized document since bin boundaries shift between conventions.
    Raises ``ValueError`` for a degenerate factor with fewer than 3 distinct
    values.
    """
    columns = [np.asarray(col, dtype=np.float64) for col in values_per_factor]
    if not columns:
        raise ValueError("at least one factor required")
    if names is None:
        names = tuple(f"alpha_{i}" for i in range(len(columns)))
    names = tuple(str(n) for n in names)
    if len(names) != len(columns):
        raise ValueError("one name per factor required")
    lower = np.empty(len(columns))
    upper = np.empty(len(columns))
    for i, col in enumerate(columns):
        if col.ndim != 1 or col.size == 0:
            raise ValueError(f"factor {names[i]!r}: values must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(col)):
            raise ValueError(f"factor {names[i]!r}: values contain non-finite entries")
        distinct = np.unique(col).size
        if distinct < 3:
            raise ValueError(
                f"factor {names[i]!r} is degenerate: needs >= 3 distinct values, got {distinct}"
            )
        lower[i] = np.quantile(col, 1.0 / 3.0, method=QUANTILE_METHOD)
        upper[i] = np.quantile(col, 2.0 / 3.0, method=QUANTILE_METHOD)
    return FactorCoder(names=names, lower=lower, upper=upper)


def code_factor(coder: FactorCoder, factor_index: int, value: float) -> np.ndarray:
    """Code a single raw value as (1,0,0), (0,1,0) or (0,0,1).

    Ties fall into the lower bin: a value exactly equal to a threshold codes
    as the bin below it.
    """
    if not 0 <= factor_index < coder.factor_count:
        raise ValueError(f"factor_index {factor_index} out of range [0, {coder.factor_count})")
    value = float(value)
    level = int(value > coder.lower[factor_index]) + int(value > coder.upper[factor_index])
    out = np.zeros(LEVELS_PER_FACTOR)
    out[level] = 1.0
    return out


@dataclass(frozen=True, eq=False)
class FactorLayout:
    """Which embedding dimensions belong to which factor.

    Factor ``i`` owns dimensions ``[3i, 3i+3)``; the trailing
    ``embedding_dim - 3m`` dimensions form the zero block.
    """

    names: tuple
    embedding_dim: int

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(str(n) for n in self.names))
        if self.coded_dim > self.embedding_dim:
            raise ValueError(
                f"embedding_dim {self.embedding_dim} is too small for "
                f"{self.factor_count} factors (needs >= {self.coded_dim})"
            )

    @property
    def factor_count(self) -> int:
        return len(self.names)

    @property
    def coded_dim(self) -> int:
        return LEVELS_PER_FACTOR * self.factor_count

    @property
    def zero_dim(self) -> int:
        return self.embedding_dim - self.coded_dim

    def factor_slice(self, i: int) -> slice:
        if not 0 <= i < self.factor_count:
            raise ValueError(f"factor index {i} out of range")
        return slice(LEVELS_PER_FACTOR * i, LEVELS_PER_FACTOR * (i + 1))

    @property
    def zero_slice(self) -> slice:
        return slice(self.coded_dim, self.embedding_dim)

    def dim_labels(self) -> list:
        """One human-readable label per embedding dimension."""
        labels = [f"{name}:{level}" for name in self.names for level in LEVEL_NAMES]
        labels += [f"other factor {j}" for j in range(self.zero_dim)]
        return labels


@dataclass(frozen=True, eq=False)
class ClassOrthogonalExtractor:
    """Prototype per class; orthonormal rows when k >= C, JLT images otherwise."""

    class_count: int
    embedding_dim: int
    seed: int
    table: np.ndarray

    def __post_init__(self):
        table = np.ascontiguousarray(np.asarray(self.table, dtype=np.float64))
        if table.shape != (self.class_count, self.embedding_dim):
            raise ValueError(
                f"table shape {table.shape} does not match "
                f"({self.class_count}, {self.embedding_dim})"
            )
        if not np.all(np.isfinite(table)):
            raise ValueError("prototype table contains non-finite entries")
        if self.embedding_dim >= self.class_count:
            gram = table @ table.T
            if np.max(np.abs(gram - np.eye(self.class_count))) > 1e-10:
                raise ValueError("prototype table rows must be orthonormal when k >= C")
        table.setflags(write=False)
        object.__setattr__(self, "table", table)

    @property
    def kind(self) -> str:
        return "class-orthogonal"

    def extract(self, label, factors=None) -> np.ndarray:
        """Prototype for a (soft) label: the label-weighted mix of class rows.

        Linear in the label and constant in ``factors`` (accepted and
        ignored).
        """
        y = _validate_simplex(label, "label", self.class_count)
        return self.table.T @ y

    def extract_batch(self, labels, codes=None) -> np.ndarray:
        labels = np.asarray(labels, dtype=np.float64)
        if labels.ndim != 2 or labels.shape[1] != self.class_count:
            raise ValueError(f"labels must have shape (n, {self.class_count})")
        return labels @ self.table


@dataclass(frozen=True, eq=False)
class FactorCodedExtractor:
    """Prototype from factor level codes; labels are accepted and ignored."""

    coder: FactorCoder
    layout: FactorLayout

    def __post_init__(self):
        if self.coder.factor_count != self.layout.factor_count:
            raise ValueError("coder and layout disagree on factor count")
        if self.coder.names != self.layout.names:
            raise ValueError("coder and layout disagree on factor names")

    @property
    def kind(self) -> str:
        return "factor-coded"

    @property
    def embedding_dim(self) -> int:
        return self.layout.embedding_dim

    def _codes_from(self, factors) -> np.ndarray:
        m = self.layout.factor_count
        f = np.asarray(factors, dtype=np.float64)
        if f.ndim == 1:
            if f.shape[0] != m:
                raise ValueError(f"expected {m} factor values, got {f.shape[0]}")
            return self.coder.code(f)
        if f.ndim == 2:
            if f.shape != (m, LEVELS_PER_FACTOR):
                raise ValueError(f"soft level codes must have shape ({m}, {LEVELS_PER_FACTOR})")
            for i in range(m):
                _validate_simplex(f[i], f"level code for factor {self.layout.names[i]!r}")
            return f
        raise ValueError("factors must be raw values (m,) or level codes (m, 3)")

    def extract(self, label=None, factors=None) -> np.ndarray:
        """Prototype from raw factor values or (soft) level codes.

        The coded dimensions carry the level codes in factor order; the
        remaining dimensions are exactly zero.  Linear in soft level codes
        and constant in the label.
        """
        if factors is None:
            raise ValueError("factor-coded extractor requires factor values or level codes")
        if label is not None:
            _validate_simplex(label, "label")
        codes = self._codes_from(factors)
        out = np.zeros(self.layout.embedding_dim)
        out[: self.layout.coded_dim] = codes.ravel()
        return out

    def extract_batch(self, labels=None, codes=None) -> np.ndarray:
        """Prototypes for pre-coded (possibly soft) level codes (n, m, 3)."""
        if codes is None:
            raise ValueError("factor-coded extractor requires level codes")
        c = np.asarray(codes, dtype=np.float64)
        m = self.layout.factor_count
        if c.ndim != 3 or c.shape[1:] != (m, LEVELS_PER_FACTOR):
            raise ValueError(f"codes must have shape (n, {m}, {LEVELS_PER_FACTOR})")
        out = np.zeros((c.shape[0], self.layout.embedding_dim))
        out[:, : self.layout.coded_dim] = c.reshape(c.shape[0], -1)
        return out


def class_orthogonal_extractor(class_count: int, embedding_dim: int, seed: int) -> ClassOrthogonalExtractor:
    """Build the class-orthogonal extractor.

    With k >= C the table is a seeded orthonormal set.  With k < C an
    orthonormal basis of R^C is projected to R^k by a dense Gaussian JLT, so
    pairwise prototype distances stay close to sqrt(2).  The basis and the
    projection draw from independent child seeds of ``seed``.
    """
    if class_count < 2:
        raise ValueError("class_count must be >= 2")
    if embedding_dim < 1:
        raise ValueError("embedding_dim must be >= 1")
    if embedding_dim >= class_count:
        table = random_orthonormal_basis(class_count, embedding_dim, seed).vectors
    else:
        basis_seed, jlt_seed = np.random.SeedSequence(seed).spawn(2)
        basis = random_orthonormal_basis(class_count, class_count, basis_seed)
        T = jlt_create(class_count, embedding_dim, jlt_seed)
        table = basis.vectors @ T.T
    return ClassOrthogonalExtractor(
        class_count=class_count, embedding_dim=embedding_dim, seed=int(seed), table=table
    )


def factor_coded_extractor(coder: FactorCoder, factor_count: int, embedding_dim: int) -> FactorCodedExtractor:
    """Build the factor-coded extractor over a fitted coder.

    Requires ``embedding_dim >= 3 * factor_count``; the leftover dimensions
    form the zero block (possibly empty).
    """
    if factor_count != coder.factor_count:
        raise ValueError(f"factor_count {factor_count} does not match coder ({coder.factor_count})")
    if embedding_dim < LEVELS_PER_FACTOR * factor_count:
        raise ValueError(
            f"embedding_dim {embedding_dim} is too small for {factor_count} factors "
            f"(needs >= {LEVELS_PER_FACTOR * factor_count})"
        )
    layout = FactorLayout(names=coder.names, embedding_dim=embedding_dim)
    return FactorCodedExtractor(coder=coder, layout=layout)


def extract_prototype(extractor, label, factors=None) -> np.ndarray:
    """Prototype for one sample; dispatches on extractor kind."""
    return extractor.extract(label, factors)


def extractor_to_doc(extractor) -> dict:
    """Serialize an extractor to a versioned, JSON-ready document."""
    if isinstance(extractor, ClassOrthogonalExtractor):
        return {
            "format": EXTRACTOR_FORMAT,
            "version": EXTRACTOR_VERSION,
            "kind": extractor.kind,
            "class_count": extractor.class_count,
            "embedding_dim": extractor.embedding_dim,
            "seed": extractor.seed,
            "table": extractor.table.tolist(),
        }
    if isinstance(extractor, FactorCodedExtractor):
        return {
            "format": EXTRACTOR_FORMAT,
            "version": EXTRACTOR_VERSION,
            "kind": extractor.kind,
            "embedding_dim": extractor.embedding_dim,
            "quantile_method": QUANTILE_METHOD,
            "factors": [
                {
                    "name": name,
                    "lower": float(extractor.coder.lower[i]),
                    "upper": float(extractor.coder.upper[i]),
                }
                for i, name in enumerate(extractor.coder.names)
            ],
        }
    raise TypeError(f"not a prototype extractor: {type(extractor).__name__}")


def extractor_from_doc(doc: dict):
    """Rebuild an extractor from its serialized document."""
    if doc.get("format") != EXTRACTOR_FORMAT:
        raise ValueError(f"not a prototype extractor document: {doc.get('format')!r}")
    if doc.get("version") != EXTRACTOR_VERSION:
        raise ValueError(f"unsupported extractor document version {doc.get('version')!r}")
    kind = doc.get("kind")
    if kind == "class-orthogonal":
        return ClassOrthogonalExtractor(
            class_count=int(doc["class_count"]),
            embedding_dim=int(doc["embedding_dim"]),
            seed=int(doc["seed"]),
            table=np.array(doc["table"], dtype=np.float64),
        )
    if kind == "factor-coded":
        factors = doc["factors"]
        coder = FactorCoder(
            names=tuple(f["name"] for f in factors),
            lower=np.array([f["lower"] for f in factors], dtype=np.float64),
            upper=np.array([f["upper"] for f in factors], dtype=np.float64),
        )
        return factor_coded_extractor(coder, len(factors), int(doc["embedding_dim"]))
    raise ValueError(f"unknown extractor kind {kind!r}")


def extractor_to_json(extractor) -> str:
    return json.dumps(extractor_to_doc(extractor), indent=2) + "\n"


def extractor_from_json(text: str):
    return extractor_from_doc(json.loads(text))
