"""Training: the prototype-matching loss, mixup over labels and coded
factors, SGD/Adam, and the minibatch loop.

The per-sample loss is ``CE(y, softmax(logits)) + lambda_p * ||z - p||^2``
with ``p`` the fixed prototype for that sample's label/factors and
``lambda_p`` defaulting to ``1/embedding_dim``.  With ``lambda_p = 0`` the
prototype machinery is skipped entirely, so such a run executes exactly the
same arithmetic as the plain cross-entropy baseline and yields bit-identical
parameters for the same seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, Sample
from .metrics import accuracy
from .model import (
    backward,
    forward,
    init_classifier,
    init_embedder,
    log_softmax,
    model_param_arrays,
)

OPTIMIZERS = ("adam", "sgd")
LOSS_KINDS = ("proto", "ce")


class DivergenceError(RuntimeError):
    """Raised when a batch loss stops being finite."""

    def __init__(self, epoch: int, batch: int, value: float):
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch
        self.value = value


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    mixup_alpha: float = 0.0
    lambda_p: float | None = None  # None means 1/embedding_dim
    loss: str = "proto"
    hidden_dims: tuple = (64, 64)
    embedding_dim: int = 16
    train_fraction: float = 1.0
    seed: int = 0
    extractor: dict = field(default_factory=lambda: {"kind": "class-orthogonal"})

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.mixup_alpha < 0:
            raise ValueError("mixup_alpha must be >= 0")
        if self.lambda_p is not None and self.lambda_p < 0:
            raise ValueError("lambda_p must be >= 0")
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"loss must be one of {LOSS_KINDS}")
        if self.embedding_dim < 1:
            raise ValueError("embedding_dim must be >= 1")
        if not 0.0 < self.train_fraction <= 1.0:
            raise ValueError("train_fraction must be in (0, 1]")
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        if self.extractor is not None and "kind" not in self.extractor:
            raise ValueError("extractor config needs a 'kind' field")

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        known = {
            "epochs",
            "batch_size",
            "learning_rate",
            "optimizer",
            "adam_beta1",
            "adam_beta2",
            "adam_eps",
            "mixup_alpha",
            "lambda_p",
            "loss",
            "hidden_dims",
            "embedding_dim",
            "train_fraction",
            "seed",
            "extractor",
        }
        unknown = set(doc) - known - {"schema_version"}
        if unknown:
            raise ValueError(f"unknown training config fields: {sorted(unknown)}")
        return cls(**{k: doc[k] for k in known if k in doc})

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "optimizer": self.optimizer,
            "adam_beta1": self.adam_beta1,
            "adam_beta2": self.adam_beta2,
            "adam_eps": self.adam_eps,
            "mixup_alpha": self.mixup_alpha,
            "lambda_p": self.lambda_p,
            "loss": self.loss,
            "hidden_dims": list(self.hidden_dims),
            "embedding_dim": self.embedding_dim,
            "train_fraction": self.train_fraction,
            "seed": self.seed,
            "extractor": self.extractor,
        }

    def effective_lambda(self) -> float:
        return 1.0 / self.embedding_dim if self.lambda_p is None else float(self.lambda_p)


@dataclass
class LossResult:
    """Loss values and the partials the backward pass needs.

    Scalars for a single sample, per-sample vectors for a batched trace.
    ``grad_z_extra`` is None when there is no prototype term.
    """

    total: np.ndarray
    ce: np.ndarray
    proto_sq: np.ndarray
    grad_logits: np.ndarray
    grad_z_extra: np.ndarray | None


def loss(y, trace, prototype, lambda_p: float) -> LossResult:
    """Cross-entropy plus the prototype-matching penalty.

    ``prototype=None`` is allowed only with ``lambda_p == 0`` and drops the
    penalty term (and its gradient) entirely.  Cross-entropy is computed from
    logits through log-softmax, so it stays finite for logits up to very
    large magnitudes.
    """
    y = np.asarray(y, dtype=np.float64)
    logp = log_softmax(trace.logits)
    ce = -(y * logp).sum(axis=-1)
    grad_logits = trace.probs - y
    if prototype is None:
        if lambda_p != 0.0:
            raise ValueError("a prototype is required when lambda_p != 0")
        return LossResult(
            total=ce, ce=ce, proto_sq=np.zeros_like(ce), grad_logits=grad_logits, grad_z_extra=None
        )
    p = np.asarray(prototype, dtype=np.float64)
    diff = trace.z - p
    proto_sq = (diff * diff).sum(axis=-1)
    return LossResult(
        total=ce + lambda_p * proto_sq,
        ce=ce,
        proto_sq=proto_sq,
        grad_logits=grad_logits,
        grad_z_extra=(2.0 * lambda_p) * diff,
    )


def mix_samples(sample_a: Sample, sample_b: Sample, lam: float) -> Sample:
    """Convex combination of two samples with a known coefficient.

    Factors must be pre-coded (soft level codes) to mix; mixing raw factor
    values and re-discretizing would break linearity of the prototypes.
    """
    lam = float(lam)
    x = lam * sample_a.x + (1.0 - lam) * sample_b.x
    y = lam * sample_a.y + (1.0 - lam) * sample_b.y
    fa, fb = sample_a.factors, sample_b.factors
    if fa is None and fb is None:
        factors = None
    elif fa is None or fb is None:
        raise ValueError("cannot mix a sample with factors against one without")
    else:
        fa = np.asarray(fa, dtype=np.float64)
        fb = np.asarray(fb, dtype=np.float64)
        if fa.ndim != 2 or fb.ndim != 2:
            raise ValueError("factors must be coded as (m, 3) level codes before mixing")
        factors = lam * fa + (1.0 - lam) * fb
    return Sample(x=x, y=y, factors=factors)


def mixup(sample_a: Sample, sample_b: Sample, alpha: float, rng) -> Sample:
    """Mix two samples with lambda drawn from Beta(alpha, alpha)."""
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    return mix_samples(sample_a, sample_b, rng.beta(alpha, alpha))


class SGD:
    """Plain gradient descent: p <- p - lr * g, in place."""

    def __init__(self, learning_rate: float):
        self.learning_rate = float(learning_rate)

    def step(self, params, grads) -> None:
        for p, g in zip(params, grads):
            p -= self.learning_rate * g


class Adam:
    """Adam with bias correction; moment state is created lazily."""

    def __init__(self, learning_rate: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params, grads) -> None:
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.learning_rate * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(config: TrainConfig):
    if config.optimizer == "sgd":
        return SGD(config.learning_rate)
    return Adam(config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps)


@dataclass
class EpochStats:
    epoch: int
    total_loss: float
    ce_loss: float
    proto_loss: float
    train_accuracy: float
    val_accuracy: float | None


@dataclass
class TrainHistory:
    rows: list

    def __post_init__(self):
        for row in self.rows:
            vals = [row.total_loss, row.ce_loss, row.proto_loss, row.train_accuracy]
            if row.val_accuracy is not None:
                vals.append(row.val_accuracy)
            if not np.all(np.isfinite(vals)):
                raise ValueError(f"non-finite history entry at epoch {row.epoch}")

    def to_csv_text(self) -> str:
        lines = ["epoch,total_loss,ce_loss,prototype_loss,train_accuracy,val_accuracy"]
        for r in self.rows:
            val = "" if r.val_accuracy is None else repr(r.val_accuracy)
            lines.append(
                f"{r.epoch},{r.total_loss!r},{r.ce_loss!r},{r.proto_loss!r},"
                f"{r.train_accuracy!r},{val}"
            )
        return "\n".join(lines) + "\n"

    def to_doc(self) -> dict:
        return {
            "format": "train-history",
            "version": 1,
            "rows": [
                {
                    "epoch": r.epoch,
                    "total_loss": r.total_loss,
                    "ce_loss": r.ce_loss,
                    "prototype_loss": r.proto_loss,
                    "train_accuracy": r.train_accuracy,
                    "val_accuracy": r.val_accuracy,
                }
                for r in self.rows
            ],
        }

    @property
    def final(self) -> EpochStats:
        return self.rows[-1]


def train(dataset: Dataset, extractor, config: TrainConfig, val: Dataset | None = None):
    """Minibatch training; returns (embedder, classifier, history).

    Per batch: forward all samples, look up their fixed prototypes, average
    the per-sample losses, and take one optimizer step on the exact batch
    gradient.  The extractor is read-only throughout.  Runs are deterministic
    for a fixed config seed: initialization, shuffling and mixup draw from
    independent child streams of it, in a fixed order.
    """
    if dataset.n == 0:
        raise ValueError("dataset is empty")
    lambda_p = config.effective_lambda()
    use_proto = config.loss == "proto" and lambda_p != 0.0
    if use_proto and extractor is None:
        raise ValueError("prototype loss requires an extractor")

    codes = None
    if use_proto:
        if extractor.embedding_dim != config.embedding_dim:
            raise ValueError(
                f"extractor embedding_dim {extractor.embedding_dim} "
                f"does not match config embedding_dim {config.embedding_dim}"
            )
        if extractor.kind == "factor-coded":
            if dataset.factors is None:
                raise ValueError("factor-coded extractor needs a dataset with factor values")
            if dataset.factor_count != extractor.layout.factor_count:
                raise ValueError(
                    f"dataset has {dataset.factor_count} factors, "
                    f"extractor expects {extractor.layout.factor_count}"
                )
            codes = extractor.coder.code(dataset.factors)  # (n, m, 3)
        elif extractor.class_count != dataset.class_count:
            raise ValueError(
                f"extractor has {extractor.class_count} classes, "
                f"dataset has {dataset.class_count}"
            )

    emb_seed, clf_seed, shuffle_seed, mix_seed = np.random.SeedSequence(config.seed).spawn(4)
    embedder = init_embedder(dataset.input_dim, config.hidden_dims, config.embedding_dim, emb_seed)
    classifier = init_classifier(config.embedding_dim, dataset.class_count, clf_seed)
    rng_shuffle = np.random.default_rng(shuffle_seed)
    rng_mix = np.random.default_rng(mix_seed)
    params = model_param_arrays(embedder, classifier)
    opt = make_optimizer(config)

    X, Y = dataset.X, dataset.Y
    n = dataset.n
    rows = []
    for epoch in range(config.epochs):
        order = rng_shuffle.permutation(n)
        ce_sum = 0.0
        proto_sum = 0.0
        for batch_i, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start : start + config.batch_size]
            xb, yb = X[idx], Y[idx]
            cb = None if codes is None else codes[idx]
            if config.mixup_alpha > 0:
                perm = rng_mix.permutation(idx.size)
                lam = rng_mix.beta(config.mixup_alpha, config.mixup_alpha, size=idx.size)
                xb = lam[:, None] * xb + (1.0 - lam)[:, None] * xb[perm]
                yb = lam[:, None] * yb + (1.0 - lam)[:, None] * yb[perm]
                if cb is not None:
                    cb = lam[:, None, None] * cb + (1.0 - lam)[:, None, None] * cb[perm]
            trace = forward(embedder, classifier, xb)
            proto = extractor.extract_batch(yb, cb) if use_proto else None
            res = loss(yb, trace, proto, lambda_p if use_proto else 0.0)
            batch_mean = float(np.mean(res.total))
            if not np.isfinite(batch_mean):
                raise DivergenceError(epoch, batch_i, batch_mean)
            ce_sum += float(np.sum(res.ce))
            proto_sum += float(np.sum(res.proto_sq))
            scale = 1.0 / idx.size
            extra = None if res.grad_z_extra is None else res.grad_z_extra * scale
            grads = backward(trace, res.grad_logits * scale, extra)
            opt.step(params, grads.arrays())
        ce_mean = ce_sum / n
        proto_mean = proto_sum / n
        total_mean = ce_mean + (lambda_p if use_proto else 0.0) * proto_mean
        train_acc = accuracy(forward(embedder, classifier, X).probs, Y)
        val_acc = None
        if val is not None:
            val_acc = accuracy(forward(embedder, classifier, val.X).probs, val.Y)
        rows.append(
            EpochStats(
                epoch=epoch,
                total_loss=total_mean,
                ce_loss=ce_mean,
                proto_loss=proto_mean,
                train_accuracy=train_acc,
                val_accuracy=val_acc,
            )
        )
    return embedder, classifier, TrainHistory(rows=rows)
