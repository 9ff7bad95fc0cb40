"""Two-coin Dawid-Skene EM over boolean detector outputs.

Each method m is modelled by a 2x2 confusion matrix ``pi[m, a, b]``, the
probability that it votes ``b`` on a record whose latent class is ``a``,
with class 0 = outlier and class 1 = inlier. Sensitivity is
``pi[m, 0, 0]`` and specificity ``pi[m, 1, 1]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import math

import numpy as np

from .core import DimensionError, RatePanel

OUTLIER, INLIER = 0, 1


@dataclass(frozen=True, eq=False)
class LabelMatrix:
    """``votes[i, m]`` is True when method ``m`` flags record ``i``."""

    votes: np.ndarray
    method_ids: tuple[str, ...] = ()

    def __post_init__(self):
        v = np.asarray(self.votes, dtype=bool)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise DimensionError(f"votes must be a non-empty n x M matrix, got shape {v.shape}")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "votes", v)
        ids = tuple(self.method_ids) or tuple(f"m{j}" for j in range(v.shape[1]))
        if len(ids) != v.shape[1]:
            raise DimensionError(f"{len(ids)} method ids for {v.shape[1]} vote columns")
        object.__setattr__(self, "method_ids", ids)

    @classmethod
    def from_results(cls, results) -> "LabelMatrix":
        return cls(np.column_stack([r.record_flags for r in results]), tuple(r.method for r in results))

    @property
    def n(self) -> int:
        return self.votes.shape[0]

    @property
    def m(self) -> int:
        return self.votes.shape[1]


@dataclass(frozen=True, eq=False)
class EnsembleModel:
    pi: np.ndarray  # (M, 2, 2)
    priors: np.ndarray  # (p_outlier, p_inlier)
    posteriors: np.ndarray  # (n, 2)
    labels: np.ndarray
    iterations: int
    converged: bool
    method_ids: tuple[str, ...] = ()
    objective: tuple[float, ...] = field(default_factory=tuple)

    @property
    def p_outlier(self) -> float:
        return float(self.priors[OUTLIER])

    def report(self) -> str:
        """Human-readable summary of confusion matrices and priors."""
        lines = [
            f"methods: {len(self.method_ids)}",
            f"records: {self.labels.size}",
            f"iterations: {self.iterations}",
            f"converged: {self.converged}",
            f"prior_outlier: {self.priors[OUTLIER]:.6f}",
            f"prior_inlier: {self.priors[INLIER]:.6f}",
            f"consensus_outliers: {int(self.labels.sum())}",
        ]
        for m, name in enumerate(self.method_ids):
            p = self.pi[m]
            lines += [
                f"[{name}]",
                f"  sensitivity (pi_oo): {p[0, 0]:.6f}",
                f"  pi_oi: {p[0, 1]:.6f}",
                f"  pi_io: {p[1, 0]:.6f}",
                f"  specificity (pi_ii): {p[1, 1]:.6f}",
            ]
        return "\n".join(lines) + "\n"


def _m_step(votes: np.ndarray, post: np.ndarray, s: float):
    """Smoothed soft-count estimates of the confusion matrices and priors."""
    n, _ = votes.shape
    vf = votes.astype(float)
    class_mass = post.sum(axis=0)  # (2,)
    # flagged[a, m] = sum_i post[i, a] * votes[i, m]
    flagged = post.T @ vf
    pi = np.empty((votes.shape[1], 2, 2))
    for a in (OUTLIER, INLIER):
        p_out = (flagged[a] + s) / (class_mass[a] + 2 * s)
        pi[:, a, OUTLIER] = p_out
        pi[:, a, INLIER] = 1.0 - p_out
    priors = (class_mass + s) / (n + 2 * s)
    return pi, priors


def _log_joint(votes: np.ndarray, pi: np.ndarray, priors: np.ndarray) -> np.ndarray:
    """``log p(class a, votes_i)`` for every record and class, shape (n, 2)."""
    log_pi = np.log(pi)
    vf = votes.astype(float)
    out = np.empty((votes.shape[0], 2))
    for a in (OUTLIER, INLIER):
        out[:, a] = np.log(priors[a]) + vf @ log_pi[:, a, OUTLIER] + (1.0 - vf) @ log_pi[:, a, INLIER]
    return out


def _e_step(votes, pi, priors):
    lj = _log_joint(votes, pi, priors)
    top = lj.max(axis=1, keepdims=True)
    w = np.exp(lj - top)
    norm = w.sum(axis=1, keepdims=True)
    return w / norm, float(np.sum(top[:, 0] + np.log(norm[:, 0])))


def _objective(votes, pi, priors, s: float) -> float:
    # smoothed marginal log-likelihood; EM (as a MAP algorithm under the
    # pseudo-count prior) never decreases it
    lj = _log_joint(votes, pi, priors)
    top = lj.max(axis=1)
    ll = math.fsum(top + np.log(np.exp(lj - top[:, None]).sum(axis=1)))
    return ll + s * (math.fsum(np.log(pi).ravel()) + math.fsum(np.log(priors)))


def majority_posteriors(votes: np.ndarray) -> np.ndarray:
    """Hard majority-vote initialization; an exact tie gets 0.5/0.5."""
    frac = votes.mean(axis=1)
    p_out = np.where(frac > 0.5, 1.0, np.where(frac < 0.5, 0.0, 0.5))
    return np.column_stack([p_out, 1.0 - p_out])


def _swap_classes(pi, priors, post):
    # relabel latent classes; votes keep their meaning, so pi[a, b] -> pi[1-a, b]
    return pi[:, ::-1, :].copy(), priors[::-1].copy(), post[:, ::-1].copy()


def em_fit(
    votes,
    max_iter: int = 200,
    tol: float = 1e-7,
    smoothing: float = 1e-6,
    init_posteriors: Optional[np.ndarray] = None,
    stop_on_stable_labels: bool = True,
) -> EnsembleModel:
    """Jointly estimate latent outlier labels, confusion matrices and priors.

    Each iteration runs an M-step (soft-count confusion matrices and priors
    with additive smoothing) followed by an E-step (class posteriors). The
    loop stops when no posterior moves by more than ``tol``, when the hard
    labels did not change, or after ``max_iter`` iterations. If the fitted
    outlier prior exceeds 0.5 the two latent classes are swapped, so the
    outlier class is always the minority.

    ``objective`` records the smoothed marginal log-likelihood after every
    iteration; it is non-decreasing.
    """
    lm = votes if isinstance(votes, LabelMatrix) else LabelMatrix(votes)
    v = lm.votes
    post = majority_posteriors(v) if init_posteriors is None else np.asarray(init_posteriors, dtype=float)
    if post.shape != (lm.n, 2):
        raise DimensionError(f"init_posteriors must have shape ({lm.n}, 2)")
    labels = post[:, OUTLIER] >= 0.5
    trace = []
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        pi, priors = _m_step(v, post, smoothing)
        new_post, _ = _e_step(v, pi, priors)
        trace.append(_objective(v, pi, priors, smoothing))
        new_labels = new_post[:, OUTLIER] >= 0.5
        delta = float(np.max(np.abs(new_post - post)))
        same = bool(np.array_equal(new_labels, labels))
        post, labels = new_post, new_labels
        if delta < tol or (same and stop_on_stable_labels):
            converged = True
            break
    if priors[OUTLIER] > 0.5:
        pi, priors, post = _swap_classes(pi, priors, post)
    labels = post[:, OUTLIER] >= 0.5
    for a in (post, pi, priors, labels):
        a.setflags(write=False)
    return EnsembleModel(
        pi=pi,
        priors=priors,
        posteriors=post,
        labels=labels,
        iterations=it,
        converged=converged,
        method_ids=lm.method_ids,
        objective=tuple(trace),
    )


def consensus_flags(model: EnsembleModel) -> np.ndarray:
    return model.labels


def method_rates(model: EnsembleModel, m) -> RatePanel:
    """Rate panel of method ``m`` (index or id) under the fitted model."""
    if isinstance(m, str):
        if m not in model.method_ids:
            raise IndexError(f"unknown method {m!r}")
        m = model.method_ids.index(m)
    if not 0 <= m < model.pi.shape[0]:
        raise IndexError(f"method index {m} out of range")
    return RatePanel(
        alpha=float(model.pi[m, OUTLIER, OUTLIER]),
        beta=float(model.pi[m, INLIER, INLIER]),
        gamma=model.p_outlier,
    )


def fit_results(results: Sequence, **kwargs) -> EnsembleModel:
    """Fit the ensemble to detection results that share one scope."""
    return em_fit(LabelMatrix.from_results(results), **kwargs)
