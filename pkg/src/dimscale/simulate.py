"""Synthetic data from known parameters, plus independent reference oracles."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import (
    ItemPartition,
    ModelParameters,
    ResponseMatrix,
    ValidationError,
    check_compatible,
    conditional_probabilities,
)

BRUTE_FORCE_MAX_CLASSES = 8
BRUTE_FORCE_MAX_ITEMS = 12


@dataclass(frozen=True)
class SimulationSpec:
    n_respondents: int
    true_parameters: ModelParameters
    true_partition: ItemPartition
    seed: int
    item_ids: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.n_respondents < 1:
            raise ValidationError("n_respondents must be positive")
        if self.seed < 0:
            raise ValidationError("seed must be non-negative")
        check_compatible(self.true_parameters, self.true_partition)
        if self.item_ids is not None and len(self.item_ids) != self.true_partition.n_items:
            raise ValidationError("item_ids length does not match the number of items")

    @property
    def ids(self) -> tuple[str, ...]:
        if self.item_ids is not None:
            return tuple(self.item_ids)
        return tuple(f"item{j + 1}" for j in range(self.true_partition.n_items))

    def to_dict(self) -> dict:
        p = self.true_parameters
        return {
            "n_respondents": self.n_respondents,
            "seed": self.seed,
            "item_ids": list(self.ids),
            "partition": [[self.ids[j] for j in g] for g in self.true_partition.groups],
            "class_weights": p.class_weights.tolist(),
            "abilities": p.abilities.tolist(),
            "difficulties": p.difficulties.tolist(),
            "discriminations": p.discriminations.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> SimulationSpec:
        try:
            ids = [str(i) for i in d["item_ids"]]
            index = {item: j for j, item in enumerate(ids)}
            groups = tuple(tuple(index[str(i)] for i in g) for g in d["partition"])
            params = ModelParameters(d["class_weights"], d["abilities"], d["difficulties"], d["discriminations"])
            return cls(int(d["n_respondents"]), params, ItemPartition(groups), int(d["seed"]), tuple(ids))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed simulation spec: {exc!r}") from exc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> SimulationSpec:
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: not valid JSON ({exc})") from exc


def generate(spec: SimulationSpec) -> ResponseMatrix:
    """Draw class then item responses for each respondent.

    Respondent i uses its own PCG64 stream spawned from ``SeedSequence(seed)``,
    so any respondent can be regenerated independently of the others.
    """
    lam = conditional_probabilities(spec.true_parameters, spec.true_partition)
    cum = np.cumsum(spec.true_parameters.class_weights)
    cum[-1] = 1.0
    n_items = lam.shape[1]
    out = np.empty((spec.n_respondents, n_items), dtype=np.uint8)
    children = np.random.SeedSequence(spec.seed).spawn(spec.n_respondents)
    for i, child in enumerate(children):
        u = np.random.Generator(np.random.PCG64(child)).random(n_items + 1)
        c = int(np.searchsorted(cum, u[0], side="right"))
        c = min(c, lam.shape[0] - 1)
        out[i] = u[1:] < lam[c]
    return ResponseMatrix(out, spec.ids)


def ability_pattern(n_classes: int, n_dims: int, scale: float = 3.0) -> np.ndarray:
    """Abilities whose dimension columns point in well-spread directions.

    Column d of the free rows is ``scale * cos(phi_d - (c - 1) * pi / (k - 1))``
    with angles spread over a half turn, so no two dimensions are
    proportional once k >= 3.
    """
    theta = np.zeros((n_classes, n_dims))
    if n_classes == 1:
        return theta
    phis = math.pi * (np.arange(n_dims) + 0.5) / n_dims
    for c in range(1, n_classes):
        shift = (c - 1) * math.pi / max(n_classes - 1, 2)
        theta[c] = scale * np.cos(phis - shift)
    return theta


def random_spec(
    n_respondents: int,
    n_items: int,
    n_classes: int,
    n_dims: int,
    seed: int,
    scale: float = 3.0,
    gamma_range: tuple[float, float] = (0.8, 2.0),
) -> SimulationSpec:
    """Contiguous equal-size item blocks with well-separated class abilities."""
    if not 1 <= n_dims <= n_items:
        raise ValidationError(f"need 1 <= dims <= items, got dims={n_dims}, items={n_items}")
    if n_classes < 1:
        raise ValidationError("need at least one class")
    rng = np.random.default_rng([seed, 0x5EED])
    labels = [j * n_dims // n_items for j in range(n_items)]
    partition = ItemPartition.from_labels(labels)
    theta = ability_pattern(n_classes, n_dims, scale)
    gamma = rng.uniform(*gamma_range, size=n_items)
    gamma[list(partition.reference_items)] = 1.0
    beta = theta.mean(axis=0)[partition.dimension_of] + rng.uniform(-0.5, 0.5, size=n_items)
    pi = np.full(n_classes, 1.0 / n_classes)
    return SimulationSpec(n_respondents, ModelParameters(pi, theta, beta, gamma), partition, seed)


def brute_force_loglik(params: ModelParameters, partition: ItemPartition, matrix) -> float:
    """Mixture log-likelihood by plain summation of class products.

    Uses extended precision and no log-space tricks; meant as a reference
    for small problems only.
    """
    data = matrix.data if isinstance(matrix, ResponseMatrix) else np.asarray(matrix)
    k, n_items = params.n_classes, params.n_items
    if k > BRUTE_FORCE_MAX_CLASSES or n_items > BRUTE_FORCE_MAX_ITEMS:
        raise ValidationError(
            f"brute force limited to k<={BRUTE_FORCE_MAX_CLASSES}, J<={BRUTE_FORCE_MAX_ITEMS}"
        )
    if data.ndim != 2 or data.shape[1] != n_items:
        raise ValidationError("matrix does not match the parameters")
    one = np.longdouble(1)
    lam = [[None] * n_items for _ in range(k)]
    for d, group in enumerate(partition.groups):
        for j in group:
            g = np.longdouble(params.discriminations[j])
            b = np.longdouble(params.difficulties[j])
            for c in range(k):
                lam[c][j] = one / (one + np.exp(-g * (np.longdouble(params.abilities[c, d]) - b)))
    total = np.longdouble(0)
    for row in data:
        mix = np.longdouble(0)
        for c in range(k):
            prod = np.longdouble(params.class_weights[c])
            for j in range(n_items):
                prod *= lam[c][j] if row[j] == 1 else one - lam[c][j]
            mix += prod
        total += np.log(mix)
    return float(total)


def partition_recovery_score(true: ItemPartition, estimated: ItemPartition) -> float:
    """Adjusted Rand index between two item partitions."""
    if true.n_items != estimated.n_items:
        raise ValidationError(f"partitions cover {true.n_items} and {estimated.n_items} items")
    n = true.n_items
    a, b = true.labels(), estimated.labels()
    table: dict[tuple[int, int], int] = {}
    for x, y in zip(a, b):
        table[x, y] = table.get((x, y), 0) + 1
    rows = [a.count(x) for x in set(a)]
    cols = [b.count(y) for y in set(b)]
    pairs = math.comb(n, 2)
    index = sum(math.comb(v, 2) for v in table.values())
    sum_rows = sum(math.comb(v, 2) for v in rows)
    sum_cols = sum(math.comb(v, 2) for v in cols)
    expected = sum_rows * sum_cols / pairs if pairs else 0.0
    max_index = 0.5 * (sum_rows + sum_cols)
    if max_index == expected:
        # both partitions trivial in the same way (or n < 2)
        return 1.0 if true == estimated else 0.0
    return (index - expected) / (max_index - expected)

