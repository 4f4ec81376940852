"""Training objectives: supervised cross-entropy, instance contrast, category contrast.

The category contrastive loss compares each target query against one key
per category and slot of the categorical dictionary. Per slot it is the
log loss of a C-way softmax classifier whose positive is the key sharing
the query's (pseudo) category; the result is averaged over slots and then
over the query batch. Keys are constants: gradients reach the queries only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .dictionary import CategoricalDictionary
from .errors import ContractError, DimensionError, NotWarmError, ParameterError
from .labels import CategoryLabel, as_probability_vector


@dataclass
class LossValue:
    """A scalar, grad-enabled loss together with the number of queries in it."""

    value: Tensor
    batch_size: int

    def item(self) -> float:
        return self.value.item()


def supervised_loss(logits: Tensor, labels: Sequence[CategoryLabel]) -> LossValue:
    """Mean cross-entropy of (batch, C) logits against hard labels."""
    if logits.data.ndim != 2:
        raise DimensionError("supervised_loss expects (batch, C) logits")
    if logits.shape[0] != len(labels):
        raise DimensionError(
            f"batch mismatch: {logits.shape[0]} logit rows, {len(labels)} labels"
        )
    idx = np.array([lab.index - 1 for lab in labels], dtype=np.intp)
    picked = ad.take_per_row(ad.log_softmax(logits, 1.0), idx)
    return LossValue(ad.neg(ad.reduce_mean(picked)), len(labels))


def info_nce(q: Tensor, keys: Tensor, positive_mask, tau: float) -> LossValue:
    """Instance contrastive loss of one query against N+1 keys.

    positive_mask is a 0/1 vector flagging the positive key(s);
    loss = -log( sum_pos exp(q.k_i/tau) / sum_all exp(q.k_i/tau) ).
    """
    if float(tau) <= 0.0:
        raise ParameterError(f"temperature must be positive, got {tau}")
    mask = np.asarray(positive_mask)
    if not (mask != 0).any():
        raise ContractError("info_nce needs at least one positive key")
    logits = ad.scale(ad.matvec(keys, q), 1.0 / float(tau))
    loss = ad.sub(ad.logsumexp(logits), ad.logsumexp(logits, mask))
    return LossValue(loss, 1)


def prediction_entropy(probs) -> float:
    """Shannon entropy (natural log) of a probability vector, with 0*log(0) = 0."""
    p = as_probability_vector(probs)
    p = np.clip(p, 0.0, None)
    nz = p[p > 0.0]
    return float(-(nz * np.log(nz)).sum())


def key_temperature(tau_base: float, entropy: float, num_categories: int) -> float:
    """Per-key temperature scaled by prediction entropy.

    Confident keys keep the base temperature; maximally uncertain ones get
    twice it: tau * (1 + H / log C).
    """
    if tau_base <= 0.0:
        raise ParameterError(f"base temperature must be positive, got {tau_base}")
    if num_categories < 2:
        raise ParameterError("entropy scaling needs at least 2 categories")
    h_max = math.log(num_categories)
    if entropy < 0.0 or entropy > h_max + 1e-9:
        raise ParameterError(f"entropy {entropy} outside [0, log C]")
    h = min(max(entropy, 0.0), h_max)
    return tau_base * (1.0 + h / h_max)


def cat_nce(
    queries: Tensor,
    query_labels: Sequence[CategoryLabel],
    dictionary: CategoricalDictionary,
) -> LossValue:
    """Category contrastive loss of a (batch, d) query block against a warm dictionary.

    Callers must pass unit-norm, grad-enabled queries and detached labels.
    """
    if not dictionary.is_warm():
        raise NotWarmError("category contrast needs every queue at full capacity")
    if queries.data.ndim != 2:
        raise DimensionError("cat_nce expects (batch, d) queries")
    batch, dim = queries.shape
    if batch != len(query_labels):
        raise DimensionError(
            f"batch mismatch: {batch} queries, {len(query_labels)} labels"
        )
    num_cat, capacity = dictionary.num_categories, dictionary.capacity
    key_dim = dictionary.group(1)[0].vector.shape[0]
    if key_dim != dim:
        raise DimensionError(f"query dim {dim} does not match key dim {key_dim}")

    # one row per (slot, category), each key pre-divided by its temperature
    scaled = np.empty((capacity * num_cat, dim))
    for m in range(1, capacity + 1):
        for c, key in enumerate(dictionary.group(m)):
            scaled[(m - 1) * num_cat + c] = key.vector / key.temperature

    logits = ad.matmul(queries, Tensor(scaled.T))          # (batch, M*C)
    per_group = ad.reshape(logits, (batch * capacity, num_cat))
    idx = np.repeat([lab.index - 1 for lab in query_labels], capacity)
    positives = ad.take_per_row(per_group, idx)
    loss = ad.reduce_mean(ad.sub(ad.row_logsumexp(per_group), positives))
    return LossValue(loss, batch)
