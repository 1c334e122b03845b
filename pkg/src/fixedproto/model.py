"""Trainable model: a small ReLU feed-forward embedder, a bias-free linear
classifier head, exact reverse-mode gradients, and per-prediction relevance.

The head has no bias on purpose: every class logit then decomposes exactly
into per-dimension contributions (the relevance matrix), with nothing left
over.  Forward and backward accept a single input vector or a batch matrix;
batched backward returns gradients summed over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ACTIVATIONS = ("relu", "identity")


@dataclass
class Layer:
    weight: np.ndarray  # (fan_out, fan_in)
    bias: np.ndarray  # (fan_out,)
    activation: str

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ValueError("layer weight/bias shapes are inconsistent")
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise ValueError("layer parameters contain non-finite entries")


@dataclass
class EmbedderParams:
    """Feed-forward embedder parameters; ReLU hidden layers, identity output."""

    layers: list

    def __post_init__(self):
        if not self.layers:
            raise ValueError("embedder needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.weight.shape[0] != nxt.weight.shape[1]:
                raise ValueError("consecutive layer shapes do not compose")

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def embedding_dim(self) -> int:
        return self.layers[-1].weight.shape[0]


@dataclass
class ClassifierParams:
    """Bias-free linear head; logits are ``weight.T @ z``."""

    weight: np.ndarray  # (embedding_dim, class_count)

    def __post_init__(self):
        if self.weight.ndim != 2:
            raise ValueError("classifier weight must be 2-D (embedding_dim, class_count)")
        if not np.all(np.isfinite(self.weight)):
            raise ValueError("classifier weight contains non-finite entries")

    @property
    def embedding_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def class_count(self) -> int:
        return self.weight.shape[1]


def init_embedder(input_dim: int, hidden_dims, embedding_dim: int, seed) -> EmbedderParams:
    """Fan-in-scaled uniform initialization, deterministic per seed.

    Weights are drawn from U(-sqrt(6/fan_in), sqrt(6/fan_in)); biases start
    at zero.  Hidden layers use ReLU, the output layer is linear.
    """
    dims = [int(input_dim), *[int(h) for h in hidden_dims], int(embedding_dim)]
    if any(d < 1 for d in dims):
        raise ValueError("all layer widths must be >= 1")
    rng = np.random.default_rng(seed)
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
        limit = np.sqrt(6.0 / fan_in)
        weight = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        activation = "relu" if i < len(dims) - 2 else "identity"
        layers.append(Layer(weight=weight, bias=np.zeros(fan_out), activation=activation))
    return EmbedderParams(layers=layers)


def init_classifier(embedding_dim: int, class_count: int, seed) -> ClassifierParams:
    """Fan-in-scaled uniform initialization of the bias-free head."""
    if embedding_dim < 1 or class_count < 1:
        raise ValueError("dimensions must be >= 1")
    rng = np.random.default_rng(seed)
    limit = np.sqrt(6.0 / embedding_dim)
    return ClassifierParams(weight=rng.uniform(-limit, limit, size=(embedding_dim, class_count)))


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax over the last axis (max subtraction)."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


@dataclass
class ForwardTrace:
    """Everything the backward pass needs, plus the public outputs.

    ``z``, ``logits`` and ``probs`` match the input's shape convention: 1-D
    for a single sample, (n, .) for a batch.  The cached per-layer arrays are
    always 2-D.
    """

    embedder: EmbedderParams
    classifier: ClassifierParams
    inputs: list  # activations entering each layer, batched
    pre_activations: list  # per layer, batched
    z: np.ndarray
    logits: np.ndarray
    probs: np.ndarray
    single: bool


def forward(embedder: EmbedderParams, classifier: ClassifierParams, x) -> ForwardTrace:
    """Run the embedder and head, caching what backward needs."""
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    A = np.atleast_2d(X)
    if A.shape[1] != embedder.input_dim:
        raise ValueError(f"input has length {A.shape[1]}, embedder expects {embedder.input_dim}")
    if classifier.embedding_dim != embedder.embedding_dim:
        raise ValueError("classifier embedding_dim does not match embedder output")
    inputs = []
    pres = []
    for layer in embedder.layers:
        inputs.append(A)
        S = A @ layer.weight.T + layer.bias
        pres.append(S)
        A = np.maximum(S, 0.0) if layer.activation == "relu" else S
    z2d = A
    logits2d = z2d @ classifier.weight
    probs2d = softmax(logits2d)
    squeeze = (lambda a: a[0]) if single else (lambda a: a)
    return ForwardTrace(
        embedder=embedder,
        classifier=classifier,
        inputs=inputs,
        pre_activations=pres,
        z=squeeze(z2d),
        logits=squeeze(logits2d),
        probs=squeeze(probs2d),
        single=single,
    )


@dataclass
class ModelGrads:
    """Gradients in parameter order: per-layer (weight, bias), then head weight."""

    layer_grads: list  # [(dW, db), ...]
    classifier_weight: np.ndarray

    def arrays(self) -> list:
        out = []
        for dw, db in self.layer_grads:
            out.append(dw)
            out.append(db)
        out.append(self.classifier_weight)
        return out


def model_param_arrays(embedder: EmbedderParams, classifier: ClassifierParams) -> list:
    """Live parameter arrays in the same order as ``ModelGrads.arrays``."""
    out = []
    for layer in embedder.layers:
        out.append(layer.weight)
        out.append(layer.bias)
    out.append(classifier.weight)
    return out


def backward(trace: ForwardTrace, grad_logits, grad_z_extra=None) -> ModelGrads:
    """Exact reverse-mode gradients for all parameters.

    ``grad_logits`` and ``grad_z_extra`` are the partials of a scalar loss
    with respect to the logits and (directly) the embedding; for a batched
    trace they carry one row per sample and the returned gradients are the
    sums over the batch.  ``grad_z_extra=None`` means the loss has no direct
    embedding term.
    """
    gL = np.atleast_2d(np.asarray(grad_logits, dtype=np.float64))
    n = trace.inputs[0].shape[0]
    C = trace.classifier.class_count
    if gL.shape != (n, C):
        raise ValueError(f"grad_logits has shape {gL.shape}, expected ({n}, {C})")
    z2d = np.atleast_2d(trace.z)
    gZ = gL @ trace.classifier.weight.T
    if grad_z_extra is not None:
        gE = np.atleast_2d(np.asarray(grad_z_extra, dtype=np.float64))
        if gE.shape != z2d.shape:
            raise ValueError(f"grad_z_extra has shape {gE.shape}, expected {z2d.shape}")
        gZ = gZ + gE
    d_clf = z2d.T @ gL
    layer_grads = []
    gA = gZ
    for layer, A_in, S in zip(
        reversed(trace.embedder.layers), reversed(trace.inputs), reversed(trace.pre_activations)
    ):
        gS = gA * (S > 0) if layer.activation == "relu" else gA
        dW = gS.T @ A_in
        db = gS.sum(axis=0)
        gA = gS @ layer.weight
        layer_grads.append((dW, db))
    layer_grads.reverse()
    return ModelGrads(layer_grads=layer_grads, classifier_weight=d_clf)


@dataclass(frozen=True, eq=False)
class RelevanceMatrix:
    """Per-dimension logit contributions for one embedding.

    ``gamma[j, c] = weight[j, c] * z[j]``; ``logits`` holds the column sums,
    so the decomposition is exact by construction (same accumulation order).
    """

    gamma: np.ndarray  # (embedding_dim, class_count)
    logits: np.ndarray  # (class_count,)


def relevance(classifier: ClassifierParams, z) -> RelevanceMatrix:
    """Relevance matrix of one embedding under the bias-free head."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1 or z.shape[0] != classifier.embedding_dim:
        raise ValueError(f"z must be 1-D of length {classifier.embedding_dim}")
    gamma = classifier.weight * z[:, None]
    return RelevanceMatrix(gamma=gamma, logits=gamma.sum(axis=0))


def embedder_to_doc(embedder: EmbedderParams) -> dict:
    return {
        "layers": [
            {
                "weight": layer.weight.tolist(),
                "bias": layer.bias.tolist(),
                "activation": layer.activation,
            }
            for layer in embedder.layers
        ]
    }


def embedder_from_doc(doc: dict) -> EmbedderParams:
    return EmbedderParams(
        layers=[
            Layer(
                weight=np.array(d["weight"], dtype=np.float64),
                bias=np.array(d["bias"], dtype=np.float64),
                activation=d["activation"],
            )
            for d in doc["layers"]
        ]
    )


def classifier_to_doc(classifier: ClassifierParams) -> dict:
    return {"weight": classifier.weight.tolist()}


def classifier_from_doc(doc: dict) -> ClassifierParams:
    return ClassifierParams(weight=np.array(doc["weight"], dtype=np.float64))
