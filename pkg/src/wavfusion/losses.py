"""Training objective and evaluation metrics.

The margin loss operates on a batch of (modality, label, embedding) entries:
anchors are pulled toward same-emotion embeddings from other modalities and
pushed from different-emotion embeddings of their own modality. All loss
functions return graph-connected scalars; metrics are plain floats.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DataError
from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Triplet:
    """Indices into a batch of (modality, label, embedding) entries with
    anchor/positive differing in modality, anchor/negative sharing it,
    anchor/positive sharing the label, and anchor/negative differing."""
    anchor: int
    positive: int
    negative: int


def build_triplets(batch) -> list[Triplet]:
    """Exhaustively enumerate valid (anchor, positive, negative) triples,
    in lexicographic index order. ``batch`` holds (modality, label) pairs."""
    n = len(batch)
    out = []
    for i in range(n):
        mod_i, lab_i = batch[i][0], batch[i][1]
        for j in range(n):
            if batch[j][0] == mod_i or batch[j][1] != lab_i:
                continue
            for k in range(n):
                if batch[k][0] == mod_i and batch[k][1] != lab_i:
                    out.append(Triplet(i, j, k))
    return out


def _cosine(a: Tensor, b: Tensor, norms: dict, idx_a: int, idx_b: int, strict: bool):
    """Graph cosine similarity between two embeddings; zero-norm inputs yield
    a constant 0 (or DataError in strict mode)."""
    na, nb = norms[idx_a], norms[idx_b]
    if float(na.data) == 0.0 or float(nb.data) == 0.0:
        if strict:
            raise DataError(f"zero-norm embedding at index {idx_a if float(na.data) == 0 else idx_b}")
        log.warning("margin loss: zero-norm embedding; treating cosine as 0")
        return Tensor(np.zeros((), dtype=a.data.dtype))
    return (a * b).sum() / (na * nb)


def margin_loss(embeddings, triplets, alpha: float, strict: bool = False) -> Tensor:
    """Mean hinge over the triplet set:
    max(0, alpha - cos(anchor, positive) + cos(anchor, negative)).

    Returns a constant 0 (with a logged notice) when the set is empty.
    Cosine similarity makes the loss invariant to positive rescaling of the
    embeddings.
    """
    if not triplets:
        log.info("margin loss: empty triplet set; contributing 0")
        dtype = embeddings[0].data.dtype if embeddings else np.float64
        return Tensor(np.zeros((), dtype=dtype))
    norms = {}
    for idx in {t.anchor for t in triplets} | {t.positive for t in triplets} | {t.negative for t in triplets}:
        e = embeddings[idx]
        norms[idx] = (e * e).sum().sqrt()
    cos_cache = {}

    def cos(i, j):
        key = (i, j) if i <= j else (j, i)
        if key not in cos_cache:
            cos_cache[key] = _cosine(embeddings[key[0]], embeddings[key[1]], norms, key[0], key[1], strict)
        return cos_cache[key]

    terms = [((cos(t.anchor, t.negative) - cos(t.anchor, t.positive)) + alpha).relu()
             for t in triplets]
    return T.add_n(terms).scale(1.0 / len(terms))


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood over rows of ``logits`` [N x c],
    stabilized through max-subtracted log-sum-exp."""
    labels = list(labels)
    if logits.ndim != 2 or logits.shape[0] != len(labels):
        raise DataError(f"cross_entropy: logits {list(logits.shape)} vs {len(labels)} labels")
    c = logits.shape[1]
    for lab in labels:
        if not 0 <= int(lab) < c:
            raise DataError(f"label {lab} outside [0, {c})")
    row_max = Tensor(logits.data.max(axis=-1, keepdims=True))
    shifted = logits.sub_col(row_max)
    log_norm = shifted.exp().sum_last_keep().log()          # [N x 1]
    picked = shifted.take_last([int(x) for x in labels])    # [N x 1]
    return (log_norm - picked).sum().scale(1.0 / len(labels))


def total_loss(task: Tensor, margin: Tensor, balance: float) -> Tensor:
    """Combined objective: task + balance * margin."""
    return task + margin.scale(float(balance))


def metrics(predictions, labels, num_classes: int):
    """(accuracy, weighted F1). Zero-support classes carry zero weight;
    precision or recall with an empty denominator counts as 0."""
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape or predictions.ndim != 1:
        raise DataError(f"metrics: got {predictions.shape} predictions for {labels.shape} labels")
    n = labels.shape[0]
    if n == 0:
        raise DataError("metrics need at least one sample")
    acc = float((predictions == labels).sum() / n)
    wf1 = 0.0
    for k in range(num_classes):
        support = int((labels == k).sum())
        if support == 0:
            continue
        tp = int(((predictions == k) & (labels == k)).sum())
        pred_k = int((predictions == k).sum())
        precision = tp / pred_k if pred_k else 0.0
        recall = tp / support
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        wf1 += (support / n) * f1
    return acc, wf1
