"""Category labels: argmax pseudo-labels for targets, ground truth for source keys.

Category indices are 1-based and live in [1..C]; the matching one-hot
vector is a vertex of the probability simplex.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import ContractError

SOURCE = "source"
TARGET = "target"

_SIMPLEX_TOL = 1e-9


@dataclass(frozen=True)
class CategoryLabel:
    """A hard category assignment: index in [1..C] plus its one-hot vertex."""

    index: int
    one_hot: np.ndarray

    @classmethod
    def of(cls, index: int, num_categories: int) -> "CategoryLabel":
        if not 1 <= index <= num_categories:
            raise ContractError(f"label index {index} outside [1..{num_categories}]")
        hot = np.zeros(num_categories)
        hot[index - 1] = 1.0
        hot.flags.writeable = False
        return cls(int(index), hot)

    def __eq__(self, other) -> bool:
        return isinstance(other, CategoryLabel) and self.index == other.index \
            and len(self.one_hot) == len(other.one_hot)

    def __hash__(self) -> int:
        return hash((self.index, len(self.one_hot)))


def as_probability_vector(probs) -> np.ndarray:
    p = probs.data if isinstance(probs, Tensor) else np.asarray(probs, dtype=np.float64)
    if p.ndim != 1:
        raise ContractError(f"expected a probability vector, got shape {p.shape}")
    if abs(p.sum() - 1.0) > _SIMPLEX_TOL or p.min() < -_SIMPLEX_TOL:
        raise ContractError("probabilities are not on the simplex")
    return p


def assign_pseudo_label(probs) -> CategoryLabel:
    """Hard label at the argmax of a probability vector; ties go to the lowest index."""
    p = as_probability_vector(probs)
    return CategoryLabel.of(int(np.argmax(p)) + 1, p.shape[0])


def key_label(sample_domain: str, ground_truth: CategoryLabel | None, probs) -> CategoryLabel:
    """Label a dictionary key: ground truth for source, pseudo-label for target."""
    if sample_domain == SOURCE:
        if ground_truth is None:
            raise ContractError("source samples must carry a ground-truth label")
        return ground_truth
    if sample_domain == TARGET:
        return assign_pseudo_label(probs)
    raise ContractError(f"unknown domain {sample_domain!r}")
