"""Hierarchical clustering of items into dimensions.

Starting from one dimension per item, every step fits the model for each
way of joining two current groups and keeps the merge with the highest
log-likelihood. All candidates at a step have the same number of free
parameters, so this is the likelihood-ratio winner.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .estimation import EmConfig, FitResult, fit
from .model import ItemPartition, ModelParameters, ResponseMatrix, ValidationError
from .selection import lr_statistic

log = logging.getLogger(__name__)

HEIGHT_SLACK = 1e-6


@dataclass(frozen=True)
class ClusteringStep:
    step_index: int
    merged_pair: tuple[int, int]
    partition: ItemPartition
    fit: FitResult
    deviance_from_initial: float
    candidate_log_likelihoods: tuple[float, ...] = ()
    n_nonconverged_candidates: int = 0


@dataclass
class ClusteringPath:
    initial_fit: FitResult
    steps: list[ClusteringStep]
    selected_step: int | None = None
    n_classes: int = 1

    @property
    def n_items(self) -> int:
        return self.initial_fit.partition.n_items

    def validate(self) -> None:
        """Check step count and that each partition is one merge away from the last."""
        if len(self.steps) != self.n_items - 1:
            raise ValidationError(f"path has {len(self.steps)} steps, expected {self.n_items - 1}")
        prev = self.initial_fit.partition
        for step in self.steps:
            a, b = step.merged_pair
            if prev.merge(a, b) != step.partition:
                raise ValidationError(f"step {step.step_index} is not a single merge of the previous partition")
            prev = step.partition

    def fits(self) -> list[FitResult]:
        return [self.initial_fit] + [s.fit for s in self.steps]

    def partition_at(self, step: int) -> ItemPartition:
        return self.initial_fit.partition if step == 0 else self.steps[step - 1].partition

    def fit_at(self, step: int) -> FitResult:
        return self.initial_fit if step == 0 else self.steps[step - 1].fit


def candidate_merges(partition: ItemPartition) -> list[tuple[int, int]]:
    """All unordered pairs of current group indices, lexicographically."""
    return list(combinations(range(partition.n_groups), 2))


def merged_warm_start(parent: ModelParameters, partition: ItemPartition, a: int, b: int) -> ModelParameters:
    """Parent estimates mapped onto the partition with groups a and b joined.

    The joined dimension's abilities are the size-weighted average of the two
    parent columns. The joined group's reference item already has gamma 1.
    """
    merged = partition.merge(a, b)
    sizes = np.array([len(g) for g in partition.groups], dtype=float)
    parent_of = {g[0]: d for d, g in enumerate(partition.groups)}
    columns = []
    for g in merged.groups:
        if set(g) == set(partition.groups[a]) | set(partition.groups[b]):
            w = sizes[[a, b]] / sizes[[a, b]].sum()
            columns.append(parent.abilities[:, a] * w[0] + parent.abilities[:, b] * w[1])
        else:
            columns.append(parent.abilities[:, parent_of[g[0]]])
    theta = np.stack(columns, axis=1)
    return ModelParameters(parent.class_weights, theta, parent.difficulties, parent.discriminations)


def _fit_candidate(args) -> FitResult:
    matrix, partition, n_classes, config, warm = args
    return fit(matrix, partition, n_classes, config, warm_start=warm)


def resolve_workers(threads: int | None) -> int:
    if threads is None:
        threads = int(os.environ.get("DIMSCALE_THREADS", "1") or 1)
    return max(1, threads)


def best_merge(
    matrix: ResponseMatrix,
    n_classes: int,
    partition: ItemPartition,
    config: EmConfig | None = None,
    parent: FitResult | None = None,
    initial_log_likelihood: float | None = None,
    threads: int | None = None,
) -> ClusteringStep:
    """Fit every candidate merge and return the best as a clustering step.

    Deviance is measured against ``initial_log_likelihood`` when given,
    otherwise against the parent fit (or 0 if neither is available).
    """
    config = config or EmConfig()
    if partition.n_groups < 2:
        raise ValidationError("need at least two groups to merge")
    pairs = candidate_merges(partition)
    jobs = []
    for a, b in pairs:
        warm = None if parent is None else merged_warm_start(parent.parameters, partition, a, b)
        jobs.append((matrix, partition.merge(a, b), n_classes, config, warm))
    workers = resolve_workers(threads)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(_fit_candidate, jobs))
    else:
        results = [_fit_candidate(job) for job in jobs]

    best = 0
    for i, res in enumerate(results):
        if res.log_likelihood > results[best].log_likelihood:
            best = i
    nonconverged = sum(not r.converged for r in results)
    if nonconverged:
        log.warning("%d of %d candidate fits did not converge", nonconverged, len(results))
    if initial_log_likelihood is None:
        initial_log_likelihood = parent.log_likelihood if parent is not None else results[best].log_likelihood
    winner = results[best]
    return ClusteringStep(
        step_index=matrix.n_items - winner.partition.n_groups,
        merged_pair=pairs[best],
        partition=winner.partition,
        fit=winner,
        deviance_from_initial=lr_statistic(winner.log_likelihood, initial_log_likelihood),
        candidate_log_likelihoods=tuple(r.log_likelihood for r in results),
        n_nonconverged_candidates=nonconverged,
    )


def run_clustering(
    matrix: ResponseMatrix, n_classes: int, config: EmConfig | None = None, threads: int | None = None
) -> ClusteringPath:
    """Greedy agglomeration from J singleton dimensions down to one."""
    config = config or EmConfig()
    if matrix.n_items < 2:
        raise ValidationError("clustering needs at least two items")
    initial = fit(matrix, ItemPartition.singletons(matrix.n_items), n_classes, config)
    log.info("initial model: s=%d loglik=%.4f", matrix.n_items, initial.log_likelihood)
    steps: list[ClusteringStep] = []
    current = initial
    while current.partition.n_groups > 1:
        step = best_merge(matrix, n_classes, current.partition, config, current, initial.log_likelihood, threads)
        log.info(
            "step %d: s=%d loglik=%.4f bic=%.4f",
            step.step_index,
            step.partition.n_groups,
            step.fit.log_likelihood,
            step.fit.bic,
        )
        steps.append(step)
        current = step.fit
    return ClusteringPath(initial, steps, n_classes=n_classes)


@dataclass(frozen=True)
class DendrogramNode:
    node_id: int
    left: int
    right: int
    height: float
    raw_height: float
    members: tuple[int, ...]


@dataclass
class Dendrogram:
    """Binary merge tree; leaves 0..J-1 are items, node J+t-1 is step t."""

    item_ids: tuple[str, ...]
    nodes: list[DendrogramNode]
    leaf_order: list[int]
    violations: list[tuple[int, float]] = field(default_factory=list)
    cut_step: int | None = None

    @property
    def n_leaves(self) -> int:
        return len(self.item_ids)

    def heights(self) -> list[float]:
        return [n.height for n in self.nodes]

    def cut_height(self) -> float | None:
        """Deviance level separating the selected model from the next merge."""
        if self.cut_step is None:
            return None
        below = self.nodes[self.cut_step - 1].height if self.cut_step > 0 else 0.0
        if self.cut_step >= len(self.nodes):
            return below
        return 0.5 * (below + self.nodes[self.cut_step].height)

    def linkage(self) -> np.ndarray:
        """SciPy-style linkage matrix (left, right, height, size)."""
        return np.array([[n.left, n.right, n.height, len(n.members)] for n in self.nodes], dtype=float)

    def to_dict(self) -> dict:
        return {
            "item_ids": list(self.item_ids),
            "leaf_order": [self.item_ids[i] for i in self.leaf_order],
            "cut_step": self.cut_step,
            "cut_height": self.cut_height(),
            "height_violations": [{"step": s, "decrease": d} for s, d in self.violations],
            "nodes": [
                {
                    "id": n.node_id,
                    "step": n.node_id - self.n_leaves + 1,
                    "left": n.left,
                    "right": n.right,
                    "height": n.height,
                    "raw_height": n.raw_height,
                    "members": [self.item_ids[i] for i in n.members],
                }
                for n in self.nodes
            ],
        }

    def to_dot(self) -> str:
        lines = ["digraph dendrogram {", "  rankdir=BT;", '  node [shape=box, fontname="Helvetica"];']
        cut = self.cut_height()
        if cut is not None:
            s = self.n_leaves - self.cut_step
            lines.append(f'  label="cut at deviance {cut!r} (s={s})";')
        for leaf in self.leaf_order:
            lines.append(f'  n{leaf} [label="{self.item_ids[leaf]}"];')
        for n in self.nodes:
            above = self.cut_step is not None and n.node_id - self.n_leaves + 1 > self.cut_step
            style = ", style=dashed" if above else ""
            lines.append(f'  n{n.node_id} [shape=point, xlabel="{n.height!r}"{style}];')
            lines.append(f"  n{n.left} -> n{n.node_id};")
            lines.append(f"  n{n.right} -> n{n.node_id};")
        lines.append("}")
        return "\n".join(lines) + "\n"


def build_dendrogram(path: ClusteringPath, item_ids=None) -> Dendrogram:
    """Merge tree with running-maximum deviance heights."""
    path.validate()
    n = path.n_items
    ids = tuple(item_ids) if item_ids is not None else tuple(f"item{j + 1}" for j in range(n))
    if len(ids) != n:
        raise ValidationError("item_ids length does not match the path")
    node_of = {(j,): j for j in range(n)}
    prev = path.initial_fit.partition
    nodes, violations = [], []
    running = 0.0
    for step in path.steps:
        a, b = step.merged_pair
        ga, gb = prev.groups[a], prev.groups[b]
        raw = step.deviance_from_initial
        if raw < running - HEIGHT_SLACK:
            violations.append((step.step_index, running - raw))
        running = max(running, raw)
        node_id = n + len(nodes)
        members = tuple(sorted(ga + gb))
        nodes.append(DendrogramNode(node_id, node_of.pop(ga), node_of.pop(gb), running, raw, members))
        node_of[members] = node_id
        prev = step.partition
    if violations:
        log.warning("deviance decreased beyond slack at steps %s", [s for s, _ in violations])

    leaf_order: list[int] = []
    stack = [nodes[-1].node_id] if nodes else list(range(n))
    while stack:
        node = stack.pop()
        if node < n:
            leaf_order.append(node)
        else:
            nd = nodes[node - n]
            stack.extend((nd.right, nd.left))
    return Dendrogram(ids, nodes, leaf_order, violations, path.selected_step)
