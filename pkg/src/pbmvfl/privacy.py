"""Renyi differential-privacy accounting for the quantized-sum mechanism.

Closed-form feature/sample budgets plus an exact numerical Renyi-divergence
oracle over the mechanism's output distributions, used to property-test the
closed forms. The guarantees carry an unknown universal constant, so every
reported epsilon is expressed in units of that constant (`c0_units=True`);
only ratios and trends across parameter settings are meaningful in absolute
terms. Logarithms are natural throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .pbm import PbmParams, success_probability

__all__ = [
    "RdpBudget",
    "DiscreteDist",
    "feature_budget",
    "per_round_feature_budget",
    "sample_group_factor",
    "sample_budget",
    "pbm_sum_distribution",
    "renyi_divergence",
    "corollary4_chain",
]


@dataclass(frozen=True)
class RdpBudget:
    """An (alpha, eps) Renyi-DP budget; eps is in units of the universal constant."""

    alpha: float
    eps: float
    kind: str  # "feature" | "per_round_feature" | "sample"
    c0_units: bool = True

    def __post_init__(self) -> None:
        if not self.alpha > 1:
            raise ValueError(f"alpha must exceed 1, got {self.alpha}")
        if self.eps < 0:
            raise ValueError(f"eps must be non-negative, got {self.eps}")


def _check_budget_args(alpha: float, beta: float, **counts: int) -> None:
    if not alpha > 1:
        raise ValueError(f"alpha must exceed 1, got {alpha}")
    if not 0.0 <= beta <= 0.25:
        raise ValueError(f"beta must lie in [0, 0.25], got {beta}")
    for name, value in counts.items():
        if value < 1:
            raise ValueError(f"{name} must be positive, got {value}")


def feature_budget(
    alpha: float,
    iters: int,
    batch: int,
    embed_dim: int,
    trials: int,
    beta: float,
    parties: int,
    samples: int,
) -> RdpBudget:
    """Cumulative feature-privacy budget after `iters` training iterations.

    eps = T * B * P * b * beta^2 * alpha / (M * N): each sample participates in
    an expected T*B/N iterations, each costing P coordinates of the
    per-coordinate mechanism budget b*beta^2*alpha/M.
    """
    _check_budget_args(
        alpha, beta, batch=batch, embed_dim=embed_dim, trials=trials,
        parties=parties, samples=samples,
    )
    if iters < 0:
        raise ValueError(f"iters must be non-negative, got {iters}")
    eps = iters * batch * embed_dim * trials * beta**2 * alpha / (parties * samples)
    return RdpBudget(alpha=alpha, eps=eps, kind="feature")


def per_round_feature_budget(
    alpha: float, embed_dim: int, trials: int, beta: float, parties: int
) -> RdpBudget:
    """Feature-privacy budget of one sample's one iteration: P*b*beta^2*alpha/M."""
    _check_budget_args(alpha, beta, embed_dim=embed_dim, trials=trials, parties=parties)
    eps = embed_dim * trials * beta**2 * alpha / parties
    return RdpBudget(alpha=alpha, eps=eps, kind="per_round_feature")


def sample_group_factor(parties: int, alpha: float) -> float:
    """Group-privacy factor S_M(alpha) for protecting a whole sample (M >= 2).

    S_M(alpha) = (2^(M+1) - 2^(M-1) - 2)*alpha - (3*2^(M-1) - 3M)
                 + (2^(M-1) - 1) / (2^(M-2) * (alpha - 1))
    """
    if parties < 2:
        raise ValueError(f"the sample bound needs at least 2 parties, got {parties}")
    if not alpha > 1:
        raise ValueError(f"alpha must exceed 1, got {alpha}")
    m = parties
    linear = (2 ** (m + 1) - 2 ** (m - 1) - 2) * alpha
    constant = 3 * 2 ** (m - 1) - 3 * m
    tail = (2 ** (m - 1) - 1) / (2 ** (m - 2) * (alpha - 1))
    return linear - constant + tail


def sample_budget(
    alpha: float, embed_dim: int, trials: int, beta: float, parties: int
) -> RdpBudget:
    """Budget for revealing one sample's aggregated output once.

    Protecting a sample means protecting all M of its embeddings at once, so
    the per-round feature budget's alpha factor is replaced by the group
    factor: eps = P * b * beta^2 * S_M(alpha) / M.
    """
    _check_budget_args(alpha, beta, embed_dim=embed_dim, trials=trials, parties=parties)
    eps = embed_dim * trials * beta**2 * sample_group_factor(parties, alpha) / parties
    return RdpBudget(alpha=alpha, eps=eps, kind="sample")


@dataclass(frozen=True)
class DiscreteDist:
    """A PMF over consecutive integers starting at `offset`."""

    offset: int
    pmf: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.pmf, dtype=np.float64)
        object.__setattr__(self, "pmf", p)
        if p.ndim != 1 or p.size == 0:
            raise ValueError("pmf must be a non-empty 1-D array")
        if p.min() < 0:
            raise ValueError("probabilities must be non-negative")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"pmf sums to {p.sum()!r}, not 1")

    @property
    def support(self) -> np.ndarray:
        return np.arange(self.offset, self.offset + self.pmf.size)


def _binomial_pmf(trials: int, prob: float) -> np.ndarray:
    return np.array(
        [
            math.comb(trials, k) * prob**k * (1.0 - prob) ** (trials - k)
            for k in range(trials + 1)
        ]
    )


_MAX_SUPPORT = 10_001


def pbm_sum_distribution(inputs: Sequence[float], params: PbmParams) -> DiscreteDist:
    """Exact distribution of the summed quantized values for fixed inputs.

    Convolves one binomial PMF per input; support is {0, ..., trials * M}.
    """
    xs = list(inputs)
    if not xs:
        raise ValueError("need at least one input")
    support = params.trials * len(xs) + 1
    if support > _MAX_SUPPORT:
        raise ValueError(
            f"support of {support} points exceeds the exact-convolution cap {_MAX_SUPPORT}"
        )
    pmf = np.array([1.0])
    for x in xs:
        pmf = np.convolve(pmf, _binomial_pmf(params.trials, success_probability(x, params)))
    # Guard against drift from repeated convolution; renormalization here is
    # a no-op to ~1e-15.
    pmf = pmf / pmf.sum()
    return DiscreteDist(offset=0, pmf=pmf)


def renyi_divergence(p: DiscreteDist, q: DiscreteDist, alpha: float) -> float:
    """D_alpha(p || q) = (1/(alpha-1)) * ln sum_x q(x) * (p(x)/q(x))^alpha.

    Returns math.inf if p puts mass anywhere q does not.
    """
    if not alpha > 1:
        raise ValueError(f"alpha must exceed 1, got {alpha}")
    lo = min(p.offset, q.offset)
    hi = max(p.offset + p.pmf.size, q.offset + q.pmf.size)
    pv = np.zeros(hi - lo)
    qv = np.zeros(hi - lo)
    pv[p.offset - lo : p.offset - lo + p.pmf.size] = p.pmf
    qv[q.offset - lo : q.offset - lo + q.pmf.size] = q.pmf
    if np.any(pv[qv == 0.0] > 0.0):
        return math.inf
    mask = qv > 0.0
    total = float(np.sum(qv[mask] * (pv[mask] / qv[mask]) ** alpha))
    return math.log(total) / (alpha - 1.0)


def corollary4_chain(
    eps_fn: Callable[[float], float], steps: int
) -> Callable[[float], float]:
    """Iterate the triangle-like inequality for Renyi divergences `steps` times.

    One step bounds D_alpha(P, Q) by ((alpha - 1/2)/(alpha - 1)) * eps_fn(2*alpha)
    + (previous bound at order 2*alpha - 1), where eps_fn(a) bounds the
    divergence of two distributions differing in a single summand. With
    steps = M - 1 this bounds distributions differing in all M summands, and
    for linear eps_fn it reproduces sample_group_factor's closed form.
    """
    if steps < 0:
        raise ValueError(f"steps must be non-negative, got {steps}")

    def bound(alpha: float) -> float:
        if not alpha > 1:
            raise ValueError(f"alpha must exceed 1, got {alpha}")
        remaining = steps
        order = alpha
        total = 0.0
        while remaining > 0:
            total += (order - 0.5) / (order - 1.0) * eps_fn(2.0 * order)
            order = 2.0 * order - 1.0
            remaining -= 1
        return total + eps_fn(order)

    return bound
