"""EM estimation of the latent-class 2-PL model for a fixed item partition.

Responses are collapsed to distinct patterns. The E-step reduces them to
per-class expected counts (``n_c``) and expected positives (``y_cj``), which
are sufficient for the M-step: a concave binomial problem solved by blockwise
Newton-Raphson, per item for (beta_j, gamma_j) and per (class, dimension)
for the free abilities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.special import expit, logsumexp

from .model import (
    ItemPartition,
    ModelParameters,
    ResponseMatrix,
    ValidationError,
    check_compatible,
    class_log_likelihoods,
    log_class_weights,
    logits,
)
from .selection import aic, bic

GAMMA_BOUNDS = (1e-3, 1e3)
# |theta| <= 20 on the reported (reference-anchored) scale; the item intercept
# gamma * beta is bounded by 20 * max(gamma, 1), i.e. |beta| <= 20 for gamma >= 1
LOCATION_BOUND = 20.0
_RIDGE = 1e-10
_MAX_HALVINGS = 40
_NEGLIGIBLE = 1e-13


@dataclass(frozen=True)
class EmConfig:
    max_iterations: int = 5000
    rel_tolerance: float = 1e-8
    n_starts: int = 5
    seed: int = 0
    m_step_max_newton: int = 25
    m_step_tolerance: float = 1e-10

    def __post_init__(self):
        if self.rel_tolerance <= 0 or self.m_step_tolerance <= 0:
            raise ValidationError("tolerances must be positive")
        if self.n_starts < 1:
            raise ValidationError("n_starts must be at least 1")
        if self.max_iterations < 1 or self.m_step_max_newton < 1:
            raise ValidationError("iteration limits must be positive")
        if self.seed < 0:
            raise ValidationError("seed must be non-negative")


@dataclass(frozen=True)
class FitResult:
    parameters: ModelParameters
    partition: ItemPartition
    log_likelihood: float
    n_parameters: int
    n_respondents: int
    bic: float
    aic: float
    n_em_iterations: int
    converged: bool
    start_index: int
    trace: tuple[float, ...] = field(default=(), repr=False)
    chain_log_likelihoods: tuple[float, ...] = ()
    newton_fallbacks: int = 0
    warnings: tuple[str, ...] = ()


def parameter_count(n_items: int, n_classes: int, n_dims: int) -> int:
    """Free parameters: weights, abilities, difficulties, discriminations."""
    if not 1 <= n_dims <= n_items or n_classes < 1:
        raise ValidationError(f"invalid sizes J={n_items}, k={n_classes}, s={n_dims}")
    k1 = n_classes - 1
    return k1 + k1 * n_dims + n_items + (n_items - n_dims)


class _Data:
    """Pattern-aggregated responses shared by every EM iteration."""

    def __init__(self, matrix: ResponseMatrix):
        self.rows, self.weights = matrix.patterns()
        self.n = matrix.n_respondents
        self.n_items = matrix.n_items


@dataclass
class _Stats:
    log_likelihood: float
    class_counts: NDArray[np.float64]  # n_c
    positives: NDArray[np.float64]  # y_cj


def _e_step(params: ModelParameters, partition: ItemPartition, data: _Data) -> _Stats:
    lam = expit(logits(params, partition))
    joint = class_log_likelihoods(lam, data.rows) + log_class_weights(params.class_weights)
    per_row = logsumexp(joint, axis=1, keepdims=True)
    post = np.exp(joint - per_row) * data.weights[:, None]
    ll = float(np.dot(data.weights, np.minimum(per_row[:, 0], 0.0)))
    return _Stats(ll, post.sum(axis=0), post.T @ data.rows)


def _q_terms(eta: NDArray, stats: _Stats) -> NDArray:
    """Per-(class, item) expected complete-data log-likelihood."""
    return stats.positives * eta - stats.class_counts[:, None] * np.logaddexp(0.0, eta)


def _item_block(theta_items, beta, gamma, free_gamma, stats, gamma_cap) -> tuple[NDArray, NDArray, int]:
    """One damped Newton step on every item's (beta, gamma).

    Works in the natural parameters (gamma, u = gamma * beta), in which the
    item objective is concave. ``gamma_cap`` is the per-item upper bound.
    """
    eta = gamma * (theta_items - beta)
    lam = expit(eta)
    resid = stats.positives - stats.class_counts[:, None] * lam
    w = stats.class_counts[:, None] * lam * (1.0 - lam)
    g_gamma = np.where(free_gamma, (resid * theta_items).sum(axis=0), 0.0)
    g_u = -resid.sum(axis=0)
    h_gg = np.where(free_gamma, (w * theta_items**2).sum(axis=0), 0.0) + _RIDGE
    h_gu = np.where(free_gamma, -(w * theta_items).sum(axis=0), 0.0)
    h_uu = w.sum(axis=0) + _RIDGE
    det = h_gg * h_uu - h_gu**2
    step_gamma = (h_uu * g_gamma - h_gu * g_u) / det
    step_u = (h_gg * g_u - h_gu * g_gamma) / det

    q_old = _q_terms(eta, stats).sum(axis=0)
    u = gamma * beta
    new_beta, new_gamma = beta.copy(), gamma.copy()

    # rescaling may leave a weak item below the nominal bound; do not snap it back
    lower = np.minimum(GAMMA_BOUNDS[0], gamma)

    def search(d_gamma, d_u, pending):
        t = np.ones_like(beta)
        size = np.abs(d_gamma) / (1.0 + gamma) + np.abs(d_u) / (1.0 + np.abs(u))
        for _ in range(_MAX_HALVINGS):
            pending = pending & (t * size > _NEGLIGIBLE)
            if not pending.any():
                break
            cg = np.clip(gamma + t * d_gamma, lower, gamma_cap)
            cap = LOCATION_BOUND * np.maximum(cg, 1.0)
            cu = np.clip(u + t * d_u, -cap, cap)
            cb = cu / cg
            q_new = _q_terms(cg * theta_items - cu, stats).sum(axis=0)
            accept = pending & (q_new >= q_old)
            new_beta[accept], new_gamma[accept] = cb[accept], cg[accept]
            pending = pending & ~accept
            t = np.where(pending, 0.5 * t, t)
        return pending

    finite = np.isfinite(step_gamma) & np.isfinite(step_u)
    failed = search(np.where(finite, step_gamma, 0.0), np.where(finite, step_u, 0.0), finite)
    failed |= ~finite
    fallbacks = 0
    if failed.any():
        # Newton did not improve these items; retry along the scaled gradient
        fallbacks = int(failed.sum())
        search(g_gamma / h_gg, g_u / h_uu, failed)
    return new_beta, new_gamma, fallbacks


def _theta_block(theta, beta, gamma, dim_of, delta, stats, bound) -> NDArray:
    """One damped Newton step on every free ability theta_{cd}, c >= 1.

    ``bound`` holds the per-dimension limit on |theta_{cd}|.
    """
    k = theta.shape[0]
    if k == 1:
        return theta
    eta = gamma * (theta[:, dim_of] - beta)
    lam = expit(eta)
    resid = stats.positives - stats.class_counts[:, None] * lam
    w = stats.class_counts[:, None] * lam * (1.0 - lam)
    grad = (resid * gamma) @ delta
    hess = (w * gamma**2) @ delta + _RIDGE
    step = grad / hess
    step[0] = 0.0

    q_old = _q_terms(eta, stats) @ delta
    new_theta = theta.copy()
    pending = np.ones(theta.shape, dtype=bool)
    pending[0] = False
    t = np.ones_like(theta)
    size = np.abs(step) / (1.0 + np.abs(theta))
    for _ in range(_MAX_HALVINGS):
        pending &= t * size > _NEGLIGIBLE
        if not pending.any():
            break
        cand = np.clip(theta + t * step, -bound, bound)
        q_new = _q_terms(gamma * (cand[:, dim_of] - beta), stats) @ delta
        accept = pending & (q_new >= q_old)
        new_theta[accept] = cand[accept]
        pending &= ~accept
        t = np.where(pending, t * 0.5, t)
    return new_theta


def _rescale(params: ModelParameters, partition: ItemPartition, scale) -> ModelParameters:
    """Exact reparametrisation theta*a, beta*a, gamma/a per dimension."""
    per_item = scale[partition.dimension_of]
    return ModelParameters(
        params.class_weights,
        params.abilities * scale,
        params.difficulties * per_item,
        params.discriminations / per_item,
    )


def _unit_max_gamma(params: ModelParameters, partition: ItemPartition) -> ModelParameters:
    scale = np.array([params.discriminations[list(g)].max() for g in partition.groups])
    return _rescale(params, partition, scale)


def anchor_to_reference(params: ModelParameters, partition: ItemPartition) -> ModelParameters:
    """Rescale each dimension so its reference item has discrimination 1."""
    scale = params.discriminations[list(partition.reference_items)].copy()
    out = _rescale(params, partition, scale)
    gamma = np.array(out.discriminations)
    gamma[list(partition.reference_items)] = 1.0
    return ModelParameters(out.class_weights, out.abilities, out.difficulties, gamma)


def _m_step(
    params: ModelParameters, partition: ItemPartition, stats: _Stats, config: EmConfig
) -> tuple[ModelParameters, int]:
    """Blockwise Newton ascent on the expected complete-data log-likelihood.

    Every discrimination is updated, and afterwards each dimension is rescaled
    so that its largest discrimination is 1. Fixing the unit on whichever item
    currently discriminates most keeps the problem well conditioned when a
    reference item barely loads on its dimension.
    """
    pi = stats.class_counts / stats.class_counts.sum()
    pi = pi / pi.sum()
    theta = np.array(params.abilities)
    beta = np.array(params.difficulties)
    gamma = np.array(params.discriminations)
    dim_of = partition.dimension_of
    delta = partition.indicator().astype(np.float64)
    free_gamma = np.full(gamma.size, theta.shape[0] > 1)
    refs = list(partition.reference_items)
    fallbacks = 0
    for _ in range(config.m_step_max_newton):
        # |theta| is bounded on the reported scale, where it equals
        # |theta * gamma_ref|; a reference item may not grow past that limit
        cap = np.full(gamma.size, GAMMA_BOUNDS[1])
        spread = np.abs(theta).max(axis=0)
        with np.errstate(divide="ignore"):
            cap[refs] = np.minimum(cap[refs], LOCATION_BOUND / spread)
        cap = np.maximum(cap, gamma)
        new_beta, new_gamma, fb = _item_block(theta[:, dim_of], beta, gamma, free_gamma, stats, cap)
        fallbacks += fb
        bound = np.maximum(LOCATION_BOUND / new_gamma[refs], np.abs(theta).max(axis=0))
        new_theta = _theta_block(theta, new_beta, new_gamma, dim_of, delta, stats, bound)
        change = max(
            np.max(np.abs(new_beta - beta)),
            np.max(np.abs(new_gamma - gamma)),
            np.max(np.abs(new_theta - theta)),
        )
        theta, beta, gamma = new_theta, new_beta, new_gamma
        if change < config.m_step_tolerance:
            break
    new = ModelParameters(pi, theta, beta, gamma)
    if theta.shape[0] > 1:
        new = _unit_max_gamma(new, partition)
    return new, fallbacks


def em_step(
    params: ModelParameters, partition: ItemPartition, matrix: ResponseMatrix, config: EmConfig | None = None
) -> tuple[ModelParameters, float]:
    """One EM iteration; returns the updated parameters and their log-likelihood.

    An update that would lower the log-likelihood is rejected and the input
    returned unchanged.
    """
    config = config or EmConfig()
    check_compatible(params, partition)
    if matrix.n_items != params.n_items:
        raise ValidationError(f"matrix has {matrix.n_items} items, parameters {params.n_items}")
    data = _Data(matrix)
    stats = _e_step(params, partition, data)
    new, _ = _m_step(params, partition, stats, config)
    new_ll = _e_step(new, partition, data).log_likelihood
    if new_ll < stats.log_likelihood:
        return params, stats.log_likelihood
    return anchor_to_reference(new, partition), new_ll


def _ability_grid(n_classes: int) -> NDArray[np.float64]:
    """0 for the anchor class, then +-step, +-2*step, ... within [-2, 2]."""
    if n_classes == 1:
        return np.zeros(1)
    step = 2.0 / math.ceil((n_classes - 1) / 2)
    values = [0.0]
    for c in range(1, n_classes):
        mag = step * ((c + 1) // 2)
        values.append(mag if c % 2 == 1 else -mag)
    return np.array(values)


def initialize(
    matrix: ResponseMatrix, partition: ItemPartition, n_classes: int, start_index: int = 0, seed: int = 0
) -> ModelParameters:
    """Starting values: deterministic for ``start_index`` 0, jittered otherwise."""
    if n_classes < 1:
        raise ValidationError("need at least one latent class")
    if partition.n_items != matrix.n_items:
        raise ValidationError("partition and matrix disagree on the number of items")
    s = partition.n_groups
    means = np.clip(matrix.data.mean(axis=0), 0.01, 0.99)
    beta = -np.log(means / (1.0 - means))
    theta = np.repeat(_ability_grid(n_classes)[:, None], s, axis=1)
    gamma = np.ones(matrix.n_items)
    if start_index > 0:
        rng = np.random.default_rng([seed, start_index])
        theta[1:] += rng.normal(0.0, 0.5, size=(n_classes - 1, s))
        beta = beta + rng.normal(0.0, 0.2, size=beta.size)
    pi = np.full(n_classes, 1.0 / n_classes)
    return ModelParameters(pi, theta, beta, gamma)


@dataclass
class _Chain:
    params: ModelParameters
    log_likelihood: float
    iterations: int
    converged: bool
    trace: list[float]
    fallbacks: int


def _run_chain(params, partition, data: _Data, config: EmConfig) -> _Chain:
    if params.n_classes > 1:
        params = _unit_max_gamma(params, partition)
    stats = _e_step(params, partition, data)
    ll = stats.log_likelihood
    trace = [ll]
    converged, fallbacks, it = False, 0, 0
    for it in range(1, config.max_iterations + 1):
        new, fb = _m_step(params, partition, stats, config)
        fallbacks += fb
        new_stats = _e_step(new, partition, data)
        if new_stats.log_likelihood < ll:
            # reject non-improving update: the chain cannot move any further
            trace.append(ll)
            converged = True
            break
        gain = new_stats.log_likelihood - ll
        params, stats, ll = new, new_stats, new_stats.log_likelihood
        trace.append(ll)
        if gain <= config.rel_tolerance * max(abs(ll), 1e-300):
            converged = True
            break
    return _Chain(anchor_to_reference(params, partition), ll, it, converged, trace, fallbacks)


def fit(
    matrix: ResponseMatrix,
    partition: ItemPartition,
    n_classes: int,
    config: EmConfig | None = None,
    warm_start: ModelParameters | None = None,
) -> FitResult:
    """Multi-start EM; keeps the chain with the highest log-likelihood.

    Chains are numbered in the order they run: the optional ``warm_start``
    first, then ``config.n_starts`` standard starts (deterministic, then
    seeded perturbations). Ties go to the lowest chain number.
    """
    config = config or EmConfig()
    if partition.n_items != matrix.n_items:
        raise ValidationError(f"partition covers {partition.n_items} items, matrix has {matrix.n_items}")
    data = _Data(matrix)
    warnings = []
    if n_classes > data.rows.shape[0]:
        warnings.append(f"{n_classes} classes exceed {data.rows.shape[0]} distinct response patterns")
    starts = [] if warm_start is None else [warm_start]
    starts += [initialize(matrix, partition, n_classes, i, config.seed) for i in range(config.n_starts)]

    best, best_index, chain_lls = None, -1, []
    for index, start in enumerate(starts):
        check_compatible(start, partition)
        chain = _run_chain(start, partition, data, config)
        chain_lls.append(chain.log_likelihood)
        if best is None or chain.log_likelihood > best.log_likelihood:
            best, best_index = chain, index

    n_par = parameter_count(matrix.n_items, n_classes, partition.n_groups)
    return FitResult(
        parameters=best.params,
        partition=partition,
        log_likelihood=best.log_likelihood,
        n_parameters=n_par,
        n_respondents=data.n,
        bic=bic(best.log_likelihood, n_par, data.n),
        aic=aic(best.log_likelihood, n_par),
        n_em_iterations=best.iterations,
        converged=best.converged,
        start_index=best_index,
        trace=tuple(best.trace),
        chain_log_likelihoods=tuple(chain_lls),
        newton_fallbacks=best.fallbacks,
        warnings=tuple(warnings),
    )
