"""Brute-force reference computations, deliberately independent of the
production code paths: plain Python loops and ``math`` arithmetic only.
Used by the oracle CLI commands and by tests as the second route of
dual-route checks.
"""

from __future__ import annotations

import math


def cosine_reference(u, v) -> float:
    """Cosine similarity with the zero-norm-means-zero convention."""
    dot = 0.0
    nu = 0.0
    nv = 0.0
    for a, b in zip(u, v):
        dot += a * b
        nu += a * a
        nv += b * b
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return dot / (math.sqrt(nu) * math.sqrt(nv))


def margin_loss_reference(entries, alpha: float) -> float:
    """Mean triplet hinge computed by exhaustive triple loops over
    ``entries`` = [(modality, label, vector), ...]."""
    n = len(entries)
    total = 0.0
    count = 0
    for i in range(n):
        mod_i, lab_i, vec_i = entries[i]
        for j in range(n):
            mod_j, lab_j, vec_j = entries[j]
            if mod_j == mod_i or lab_j != lab_i:
                continue
            for k in range(n):
                mod_k, lab_k, vec_k = entries[k]
                if mod_k != mod_i or lab_k == lab_i:
                    continue
                term = alpha - cosine_reference(vec_i, vec_j) + cosine_reference(vec_i, vec_k)
                total += term if term > 0.0 else 0.0
                count += 1
    if count == 0:
        return 0.0
    return total / count
