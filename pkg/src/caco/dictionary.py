"""Category-balanced key store: one FIFO queue of capacity M per category.

Keys are unit-norm embeddings frozen at enqueue time together with their
category, per-key temperature and domain of origin. When every queue is
full ("warm"), slot m of each queue lines up into a group of C keys, one
per category, which is the comparison unit of the category contrastive
loss. Single writer; snapshots are safe to read from anywhere.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from typing import IO, Iterator

import numpy as np

from .errors import ContractError, NotWarmError, ParameterError
from .labels import SOURCE, TARGET

_UNIT_TOL = 1e-9


@dataclass(frozen=True)
class CategoricalKey:
    """An immutable dictionary entry."""

    vector: np.ndarray
    category: int
    temperature: float
    domain: str
    age: int


class CategoricalDictionary:
    """C FIFO queues of capacity M holding categorical keys."""

    def __init__(self, num_categories: int, capacity: int):
        if num_categories < 1:
            raise ParameterError(f"need at least one category, got {num_categories}")
        if capacity < 1:
            raise ParameterError(f"queue capacity must be positive, got {capacity}")
        self.num_categories = int(num_categories)
        self.capacity = int(capacity)
        self._queues: list[deque[CategoricalKey]] = [
            deque(maxlen=self.capacity) for _ in range(self.num_categories)
        ]
        self._next_age = 0
        self.enqueued_by_domain = {SOURCE: 0, TARGET: 0}

    def enqueue(self, vector, category: int, temperature: float, domain: str) -> CategoricalKey:
        """Append a key to its category queue, evicting the oldest when full."""
        if not isinstance(category, (int, np.integer)) or not 1 <= category <= self.num_categories:
            raise ContractError(
                f"category {category} outside [1..{self.num_categories}]"
            )
        if domain not in (SOURCE, TARGET):
            raise ContractError(f"unknown domain {domain!r}")
        if temperature <= 0.0:
            raise ParameterError(f"key temperature must be positive, got {temperature}")
        vec = np.asarray(vector, dtype=np.float64).copy()
        if abs(np.linalg.norm(vec) - 1.0) > _UNIT_TOL:
            raise ContractError("key vectors must be unit-norm")
        vec.flags.writeable = False
        key = CategoricalKey(vec, int(category), float(temperature), domain, self._next_age)
        self._next_age += 1
        self._queues[category - 1].append(key)
        self.enqueued_by_domain[domain] += 1
        return key

    def group(self, m: int) -> list[CategoricalKey]:
        """The m-th newest key of every category, in category order (m >= 1)."""
        if m < 1:
            raise ContractError(f"slot index must be >= 1, got {m}")
        for c, queue in enumerate(self._queues, start=1):
            if len(queue) < m:
                raise NotWarmError(f"queue {c} holds {len(queue)} keys, slot {m} requested")
        return [queue[-m] for queue in self._queues]

    def is_warm(self) -> bool:
        return all(len(q) == self.capacity for q in self._queues)

    def queue_lengths(self) -> list[int]:
        return [len(q) for q in self._queues]

    def keys(self) -> Iterator[CategoricalKey]:
        """All keys, by category then oldest to newest."""
        for queue in self._queues:
            yield from queue

    def __len__(self) -> int:
        return sum(len(q) for q in self._queues)

    def snapshot(self) -> "CategoricalDictionary":
        """A copy safe to read while the original keeps being updated."""
        copy = CategoricalDictionary(self.num_categories, self.capacity)
        for c, queue in enumerate(self._queues):
            copy._queues[c].extend(queue)
        copy._next_age = self._next_age
        copy.enqueued_by_domain = dict(self.enqueued_by_domain)
        return copy

    def dump_jsonl(self, fp: IO[str]) -> None:
        """One JSON record per key: category, domain, age, temperature, vector."""
        for key in self.keys():
            fp.write(json.dumps({
                "category": key.category,
                "domain": key.domain,
                "age": key.age,
                "temperature": key.temperature,
                "vector": key.vector.tolist(),
            }))
            fp.write("\n")
