"""Multidimensional latent-class 2-PL model: domain types and likelihood.

Each item j loads on exactly one dimension d(j) and the probability of a
positive response for respondents in latent class c is

    logit(lambda_{j|c}) = gamma_j * (theta_{c, d(j)} - beta_j).

Class 0 anchors the origin of every dimension (theta_{0, d} = 0) and the
lowest-indexed item of each group anchors its unit (gamma = 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.special import expit, logsumexp

PROB_FLOOR = 1e-12


class ValidationError(ValueError):
    """Raised when inputs violate a documented contract."""


@dataclass(frozen=True)
class ResponseMatrix:
    """N x J binary responses with item identifiers.

    ``missing_counts`` and ``warnings`` are provenance from preprocessing;
    they do not take part in equality.
    """

    data: NDArray[np.uint8]
    item_ids: tuple[str, ...]
    missing_counts: dict[str, int] = field(default_factory=dict, compare=False)
    warnings: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise ValidationError("response matrix must be two-dimensional")
        n, j = data.shape
        if n < 1 or j < 1:
            raise ValidationError(f"response matrix must be non-empty, got {n}x{j}")
        if not np.isin(data, (0, 1)).all():
            raise ValidationError("response matrix cells must be 0 or 1")
        item_ids = tuple(str(i) for i in self.item_ids)
        if len(item_ids) != j:
            raise ValidationError(f"{len(item_ids)} item ids for {j} columns")
        if len(set(item_ids)) != j:
            raise ValidationError("item ids must be unique")
        data = data.astype(np.uint8)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "item_ids", item_ids)

    @classmethod
    def from_array(cls, data, item_ids: Sequence[str] | None = None) -> ResponseMatrix:
        data = np.asarray(data)
        if item_ids is None:
            item_ids = [f"item{j + 1}" for j in range(data.shape[1])]
        return cls(data, tuple(item_ids))

    @property
    def n_respondents(self) -> int:
        return self.data.shape[0]

    @property
    def n_items(self) -> int:
        return self.data.shape[1]

    def patterns(self) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Distinct response patterns (lexicographic order) and their counts."""
        uniq, counts = np.unique(self.data, axis=0, return_counts=True)
        return uniq.astype(np.float64), counts.astype(np.float64)


@dataclass(frozen=True)
class ItemPartition:
    """Disjoint, exhaustive grouping of item indices into dimensions.

    Groups are stored sorted internally and ordered by their smallest
    item, so two partitions with the same blocks compare equal.
    """

    groups: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        groups = [tuple(sorted(int(i) for i in g)) for g in self.groups]
        if not groups:
            raise ValidationError("partition needs at least one group")
        if any(len(g) == 0 for g in groups):
            raise ValidationError("partition groups must be non-empty")
        flat = [i for g in groups for i in g]
        if len(flat) != len(set(flat)):
            raise ValidationError("partition groups overlap")
        if sorted(flat) != list(range(len(flat))):
            raise ValidationError(f"partition must cover items 0..{len(flat) - 1} exactly")
        groups.sort(key=lambda g: g[0])
        object.__setattr__(self, "groups", tuple(groups))

    @classmethod
    def singletons(cls, n_items: int) -> ItemPartition:
        return cls(tuple((j,) for j in range(n_items)))

    @classmethod
    def single_group(cls, n_items: int) -> ItemPartition:
        return cls((tuple(range(n_items)),))

    @classmethod
    def from_labels(cls, labels: Sequence[int]) -> ItemPartition:
        blocks: dict[int, list[int]] = {}
        for j, lab in enumerate(labels):
            blocks.setdefault(lab, []).append(j)
        return cls(tuple(tuple(b) for b in blocks.values()))

    @property
    def n_items(self) -> int:
        return sum(len(g) for g in self.groups)

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @property
    def dimension_of(self) -> NDArray[np.intp]:
        """Group index d(j) for every item j."""
        out = np.empty(self.n_items, dtype=np.intp)
        for d, g in enumerate(self.groups):
            out[list(g)] = d
        return out

    @property
    def reference_items(self) -> tuple[int, ...]:
        return tuple(g[0] for g in self.groups)

    def indicator(self) -> NDArray[np.int_]:
        """The J x s membership matrix delta_{jd}."""
        delta = np.zeros((self.n_items, self.n_groups), dtype=np.int_)
        delta[np.arange(self.n_items), self.dimension_of] = 1
        return delta

    def labels(self) -> list[int]:
        return self.dimension_of.tolist()

    def merge(self, a: int, b: int) -> ItemPartition:
        """Partition with groups ``a`` and ``b`` joined."""
        if a == b or not (0 <= a < self.n_groups and 0 <= b < self.n_groups):
            raise ValidationError(f"cannot merge groups {a} and {b}")
        merged = self.groups[a] + self.groups[b]
        rest = [g for d, g in enumerate(self.groups) if d not in (a, b)]
        return ItemPartition(tuple(rest + [merged]))


@dataclass(frozen=True)
class ModelParameters:
    """Class weights (k), abilities (k x s), difficulties and discriminations (J)."""

    class_weights: NDArray[np.float64]
    abilities: NDArray[np.float64]
    difficulties: NDArray[np.float64]
    discriminations: NDArray[np.float64]

    def __post_init__(self):
        pi = np.array(self.class_weights, dtype=np.float64).ravel()
        theta = np.array(self.abilities, dtype=np.float64)
        beta = np.array(self.difficulties, dtype=np.float64).ravel()
        gamma = np.array(self.discriminations, dtype=np.float64).ravel()
        if theta.ndim != 2 or theta.shape[0] != pi.size:
            raise ValidationError(f"abilities must be k x s with k={pi.size}, got {theta.shape}")
        if beta.size != gamma.size:
            raise ValidationError("difficulties and discriminations differ in length")
        if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-12:
            raise ValidationError(f"class weights must be a probability vector, got {pi}")
        if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(beta))):
            raise ValidationError("abilities and difficulties must be finite")
        if not (np.all(np.isfinite(gamma)) and np.all(gamma > 0)):
            raise ValidationError("discriminations must be finite and positive")
        if np.any(theta[0] != 0.0):
            raise ValidationError("abilities of the first class must be zero")
        for arr in (pi, theta, beta, gamma):
            arr.setflags(write=False)
        object.__setattr__(self, "class_weights", pi)
        object.__setattr__(self, "abilities", theta)
        object.__setattr__(self, "difficulties", beta)
        object.__setattr__(self, "discriminations", gamma)

    @property
    def n_classes(self) -> int:
        return self.class_weights.size

    @property
    def n_dimensions(self) -> int:
        return self.abilities.shape[1]

    @property
    def n_items(self) -> int:
        return self.difficulties.size


def check_compatible(params: ModelParameters, partition: ItemPartition) -> None:
    if params.n_items != partition.n_items:
        raise ValidationError(f"parameters cover {params.n_items} items, partition {partition.n_items}")
    if params.n_dimensions != partition.n_groups:
        raise ValidationError(
            f"parameters have {params.n_dimensions} dimensions, partition {partition.n_groups}"
        )
    refs = params.discriminations[list(partition.reference_items)]
    if np.any(refs != 1.0):
        raise ValidationError("reference items must have discrimination 1")


def logits(params: ModelParameters, partition: ItemPartition) -> NDArray[np.float64]:
    """k x J matrix of gamma_j * (theta_{c,d(j)} - beta_j)."""
    theta_items = params.abilities[:, partition.dimension_of]
    return params.discriminations * (theta_items - params.difficulties)


def conditional_probabilities(params: ModelParameters, partition: ItemPartition) -> NDArray[np.float64]:
    """k x J matrix of lambda_{j|c} (unclamped)."""
    check_compatible(params, partition)
    return expit(logits(params, partition))


def success_probability(params: ModelParameters, partition: ItemPartition, item: int, klass: int) -> float:
    if not 0 <= item < params.n_items:
        raise IndexError(f"item {item} out of range 0..{params.n_items - 1}")
    if not 0 <= klass < params.n_classes:
        raise IndexError(f"class {klass} out of range 0..{params.n_classes - 1}")
    d = partition.dimension_of[item]
    z = params.discriminations[item] * (params.abilities[klass, d] - params.difficulties[item])
    return float(expit(z))


def _clamped_logs(lam: NDArray[np.float64]) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    lam = np.clip(lam, PROB_FLOOR, 1.0 - PROB_FLOOR)
    return np.log(lam), np.log1p(-lam)


def class_log_likelihoods(lam: NDArray[np.float64], rows: NDArray[np.float64]) -> NDArray[np.float64]:
    """n x k matrix of log P(row | class) given a k x J lambda matrix."""
    log1, log0 = _clamped_logs(lam)
    return rows @ log1.T + (1.0 - rows) @ log0.T


def log_class_weights(pi: NDArray[np.float64]) -> NDArray[np.float64]:
    with np.errstate(divide="ignore"):
        return np.log(pi)


def _as_rows(rows, n_items: int) -> NDArray[np.float64]:
    rows = np.asarray(rows)
    if rows.ndim == 1:
        rows = rows[None, :]
    if rows.shape[-1] != n_items:
        raise ValidationError(f"expected {n_items} responses per row, got {rows.shape[-1]}")
    if not np.isin(rows, (0, 1)).all():
        raise ValidationError("responses must be 0 or 1")
    return rows.astype(np.float64)


def pattern_log_likelihood(params: ModelParameters, partition: ItemPartition, row) -> float:
    rows = _as_rows(row, params.n_items)
    if rows.shape[0] != 1:
        raise ValidationError("expected a single response row")
    lam = conditional_probabilities(params, partition)
    joint = class_log_likelihoods(lam, rows) + log_class_weights(params.class_weights)
    return float(min(logsumexp(joint, axis=1)[0], 0.0))


def dataset_log_likelihood(
    params: ModelParameters, partition: ItemPartition, matrix: ResponseMatrix | NDArray, aggregate: bool = True
) -> float:
    """Sum of pattern log-likelihoods over all rows.

    With ``aggregate`` the rows are collapsed to distinct patterns first.
    """
    data = matrix.data if isinstance(matrix, ResponseMatrix) else np.asarray(matrix)
    if data.ndim != 2 or data.shape[1] != params.n_items:
        raise ValidationError(f"matrix has {data.shape[-1]} columns, parameters {params.n_items} items")
    if aggregate:
        uniq, counts = np.unique(data, axis=0, return_counts=True)
        rows, weights = _as_rows(uniq, params.n_items), counts.astype(np.float64)
    else:
        rows, weights = _as_rows(data, params.n_items), np.ones(data.shape[0])
    lam = conditional_probabilities(params, partition)
    joint = class_log_likelihoods(lam, rows) + log_class_weights(params.class_weights)
    per_row = np.minimum(logsumexp(joint, axis=1), 0.0)
    return float(np.dot(weights, per_row))


def posterior_class_probabilities(params: ModelParameters, partition: ItemPartition, row) -> NDArray[np.float64]:
    rows = _as_rows(row, params.n_items)
    lam = conditional_probabilities(params, partition)
    joint = class_log_likelihoods(lam, rows) + log_class_weights(params.class_weights)
    post = np.exp(joint - logsumexp(joint, axis=1, keepdims=True))
    post /= post.sum(axis=1, keepdims=True)
    return post[0] if np.ndim(row) == 1 else post


def permute_classes(params: ModelParameters, partition: ItemPartition, order: Sequence[int]) -> ModelParameters:
    """Relabel classes so that new class i is old class ``order[i]``.

    The new first class becomes the anchor: abilities are shifted by its row
    and difficulties by the same amount, leaving every lambda_{j|c} intact.
    """
    order = list(order)
    if sorted(order) != list(range(params.n_classes)):
        raise ValidationError(f"{order} is not a permutation of the classes")
    theta = params.abilities[order]
    shift = theta[0].copy()
    theta = theta - shift
    beta = params.difficulties - shift[partition.dimension_of]
    return ModelParameters(params.class_weights[order], theta, beta, params.discriminations)


def dimension_frequency(params: ModelParameters, partition: ItemPartition) -> NDArray[np.float64]:
    """Class-weighted mean success probability of each dimension's items."""
    lam = conditional_probabilities(params, partition)
    per_class = np.stack([lam[:, list(g)].mean(axis=1) for g in partition.groups], axis=1)
    return params.class_weights @ per_class
