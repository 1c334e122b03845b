"""Per-prediction explanations from the relevance decomposition.

Each class logit is an exact sum of per-dimension contributions
``gamma[j, c] = weight[j, c] * z[j]``.  For factor-coded runs the rows carry
factor-slot labels (factor name plus level, then "other factor j" for the
free dimensions), so an explanation reads as "which factor levels pushed the
prediction where".
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ClassifierParams, EmbedderParams, forward, relevance


def dim_labels(layout, embedding_dim: int) -> list:
    """Row labels for a relevance matrix; generic when no layout is given."""
    if layout is None:
        return [f"dim {j}" for j in range(embedding_dim)]
    if layout.embedding_dim != embedding_dim:
        raise ValueError(
            f"layout embedding_dim {layout.embedding_dim} does not match {embedding_dim}"
        )
    return layout.dim_labels()


def _top_contributions(column: np.ndarray, count: int = 3):
    """Strongest positive and negative entries, by absolute value."""
    order = np.argsort(-np.abs(column), kind="stable")
    pos = [(int(j), float(column[j])) for j in order if column[j] > 0][:count]
    neg = [(int(j), float(column[j])) for j in order if column[j] < 0][:count]
    return pos, neg


@dataclass
class Explanation:
    sample_id: int
    class_names: tuple
    probabilities: np.ndarray  # (C,)
    gamma: np.ndarray  # (k, C)
    logits: np.ndarray  # (C,), column sums of gamma
    row_labels: list
    top_positive: list  # per class: [(dim, contribution), ...]
    top_negative: list


def explain_sample(
    embedder: EmbedderParams,
    classifier: ClassifierParams,
    x,
    sample_id: int = 0,
    layout=None,
    class_names=None,
) -> Explanation:
    """Forward one sample and decompose its logits dimension by dimension."""
    trace = forward(embedder, classifier, np.asarray(x, dtype=np.float64))
    if not trace.single:
        raise ValueError("explain_sample takes a single input vector")
    rel = relevance(classifier, trace.z)
    k, C = rel.gamma.shape
    if class_names is None:
        class_names = tuple(str(c) for c in range(C))
    if len(class_names) != C:
        raise ValueError(f"expected {C} class names, got {len(class_names)}")
    labels = dim_labels(layout, k)
    tops = [_top_contributions(rel.gamma[:, c]) for c in range(C)]
    return Explanation(
        sample_id=int(sample_id),
        class_names=tuple(str(c) for c in class_names),
        probabilities=trace.probs,
        gamma=rel.gamma,
        logits=rel.logits,
        row_labels=labels,
        top_positive=[t[0] for t in tops],
        top_negative=[t[1] for t in tops],
    )


def explanation_to_csv_text(expl: Explanation) -> str:
    """Labeled k-row, C-column table of contributions."""
    lines = ["dimension," + ",".join(expl.class_names)]
    for j, label in enumerate(expl.row_labels):
        lines.append(label + "," + ",".join(repr(float(v)) for v in expl.gamma[j]))
    return "\n".join(lines) + "\n"


def explanation_to_doc(expl: Explanation) -> dict:
    return {
        "format": "explanation",
        "version": 1,
        "sample_id": expl.sample_id,
        "class_names": list(expl.class_names),
        "probabilities": expl.probabilities.tolist(),
        "logits": expl.logits.tolist(),
        "row_labels": list(expl.row_labels),
        "top_positive": {
            name: [{"dimension": j, "label": expl.row_labels[j], "contribution": v} for j, v in entries]
            for name, entries in zip(expl.class_names, expl.top_positive)
        },
        "top_negative": {
            name: [{"dimension": j, "label": expl.row_labels[j], "contribution": v} for j, v in entries]
            for name, entries in zip(expl.class_names, expl.top_negative)
        },
    }


def zero_block_activity(embeddings, layout) -> np.ndarray:
    """Mean absolute activation of each zero-block dimension.

    Values near zero say the named factors explain the predictions almost
    entirely; values well away from zero say unnamed factors carry weight
    too.
    """
    if layout.zero_dim == 0:
        raise ValueError("layout has an empty zero block")
    Z = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    if Z.shape[1] != layout.embedding_dim:
        raise ValueError(f"embeddings have width {Z.shape[1]}, layout expects {layout.embedding_dim}")
    return np.abs(Z[:, layout.zero_slice]).mean(axis=0)
