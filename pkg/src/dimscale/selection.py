"""Information criteria, likelihood-ratio statistic and the dendrogram cut."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Sequence

if TYPE_CHECKING:
    from .clustering import ClusteringPath


def bic(log_likelihood: float, n_parameters: int, n: int) -> float:
    if n < 1:
        raise ValueError("sample size must be positive")
    return -2.0 * log_likelihood + n_parameters * math.log(n)


def aic(log_likelihood: float, n_parameters: int) -> float:
    return -2.0 * log_likelihood + 2.0 * n_parameters


def lr_statistic(loglik_restricted: float, loglik_general: float) -> float:
    """Twice the log-likelihood gain of the general model.

    Not clamped at zero: a negative value means EM stopped short on the
    general model, and callers may want to see that.
    """
    return 2.0 * (loglik_general - loglik_restricted)


@dataclass(frozen=True)
class CriterionRow:
    step: int
    s: int
    log_likelihood: float
    n_parameters: int
    bic: float
    aic: float
    lr_vs_previous: float | None


@dataclass(frozen=True)
class CriterionReport:
    rows: tuple[CriterionRow, ...]
    selected_step: int
    selected_s: int

    def to_dict(self) -> dict:
        return {
            "selected_step": self.selected_step,
            "selected_s": self.selected_s,
            "rows": [vars(r) for r in self.rows],
        }


def select_min_bic(rows: Iterable[tuple[int, int, float]]) -> tuple[int, int]:
    """Pick ``(step, s)`` with the smallest BIC; ties go to the smaller s."""
    best = None
    for step, s, value in rows:
        key = (value, s, step)
        if best is None or key < best:
            best = key
    if best is None:
        raise ValueError("no models to choose from")
    return best[2], best[1]


def criterion_report(path: ClusteringPath) -> CriterionReport:
    fits = [(0, path.initial_fit)] + [(st.step_index, st.fit) for st in path.steps]
    rows = []
    prev_ll = None
    for step, fit in fits:
        rows.append(
            CriterionRow(
                step=step,
                s=fit.partition.n_groups,
                log_likelihood=fit.log_likelihood,
                n_parameters=fit.n_parameters,
                bic=fit.bic,
                aic=fit.aic,
                lr_vs_previous=None if prev_ll is None else lr_statistic(fit.log_likelihood, prev_ll),
            )
        )
        prev_ll = fit.log_likelihood
    step, s = select_min_bic((r.step, r.s, r.bic) for r in rows)
    return CriterionReport(tuple(rows), step, s)


def cut_by_min_bic(path: ClusteringPath | Sequence[tuple[int, int, float]]) -> tuple[int, int]:
    """Cut at the minimum-BIC model and return ``(step, s)``.

    ``path`` is either a clustering path (its ``selected_step`` is set, step
    0 being the all-singletons model) or a plain sequence of
    ``(step, s, bic)`` rows.
    """
    if isinstance(path, Sequence):
        return select_min_bic(path)
    report = criterion_report(path)
    path.selected_step = report.selected_step
    return report.selected_step, report.selected_s
