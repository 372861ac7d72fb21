"""Poisson binomial mechanism: private quantization of bounded reals.

A real value x in [-bound, bound] is encoded as the success probability
p = 1/2 + (beta / bound) * x of a binomial sample with a fixed trial count.
Adding the integer samples of several parties and unscaling yields an unbiased
estimate of the sum of their inputs; the noise level is set by (trials, beta).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ProtocolError

__all__ = [
    "PbmParams",
    "success_probability",
    "quantize",
    "quantize_array",
    "estimate_sum",
    "estimate_sum_array",
    "theoretical_variance",
]


@dataclass(frozen=True)
class PbmParams:
    """Mechanism parameters.

    trials: number of Bernoulli draws per quantized value (the binomial trial
        count; at most a few hundred in practice).
    beta: privacy scale in [0, 1/4]; larger means less noise and more leakage.
    bound: inputs must lie in [-bound, bound].
    """

    trials: int
    beta: float
    bound: float = 1.0

    def __post_init__(self) -> None:
        if not isinstance(self.trials, int) or self.trials < 1:
            raise ValueError(f"trials must be a positive integer, got {self.trials!r}")
        if not 0.0 <= self.beta <= 0.25:
            raise ValueError(f"beta must lie in [0, 0.25], got {self.beta!r}")
        if not self.bound > 0.0:
            raise ValueError(f"bound must be positive, got {self.bound!r}")


def success_probability(x: float, params: PbmParams) -> float:
    """Map an input in [-bound, bound] to its Bernoulli success probability.

    Raises ValueError for out-of-range inputs: upstream code guarantees the
    bound (embeddings pass through tanh), so a violation is a bug and clamping
    would silently bias the sum estimate.
    """
    if abs(x) > params.bound:
        raise ValueError(
            f"input {x!r} outside [-{params.bound}, {params.bound}]; refusing to clamp"
        )
    return 0.5 + (params.beta / params.bound) * x


def quantize(x: float, params: PbmParams, rng: np.random.Generator) -> int:
    """Draw one binomial sample encoding x, as `trials` explicit Bernoulli draws."""
    p = success_probability(x, params)
    return int((rng.random(params.trials) < p).sum())


def quantize_array(values: np.ndarray, params: PbmParams, rng: np.random.Generator) -> np.ndarray:
    """Vectorized quantize: one binomial sample per element of `values`.

    Consumes trials uniform draws per element in element order, so the sample
    sequence matches repeated scalar quantize() calls on the same generator.
    """
    flat = np.asarray(values, dtype=np.float64).ravel()
    if flat.size and np.max(np.abs(flat)) > params.bound:
        bad = flat[np.argmax(np.abs(flat))]
        raise ValueError(
            f"input {bad!r} outside [-{params.bound}, {params.bound}]; refusing to clamp"
        )
    probs = 0.5 + (params.beta / params.bound) * flat
    draws = rng.random((flat.size, params.trials))
    counts = (draws < probs[:, None]).sum(axis=1).astype(np.int64)
    return counts.reshape(np.shape(values))


def estimate_sum(q_hat: int, parties: int, params: PbmParams) -> float:
    """Unscale an aggregated quantized value into an unbiased sum estimate.

    q_hat must be the sum of `parties` quantized values, hence in [0, trials *
    parties]; anything else indicates protocol corruption.
    """
    if parties < 1:
        raise ValueError(f"parties must be a positive integer, got {parties!r}")
    if params.beta == 0.0:
        raise ValueError("beta = 0 carries no signal; cannot unscale a sum estimate")
    if not 0 <= q_hat <= params.trials * parties:
        raise ProtocolError(
            f"aggregated value {q_hat} outside [0, {params.trials * parties}]"
        )
    scale = params.bound / (params.beta * params.trials)
    return scale * (q_hat - params.trials * parties / 2)


def estimate_sum_array(q_hat: np.ndarray, parties: int, params: PbmParams) -> np.ndarray:
    """Vectorized estimate_sum over an array of aggregated values."""
    if parties < 1:
        raise ValueError(f"parties must be a positive integer, got {parties!r}")
    if params.beta == 0.0:
        raise ValueError("beta = 0 carries no signal; cannot unscale a sum estimate")
    arr = np.asarray(q_hat)
    if arr.size and (arr.min() < 0 or arr.max() > params.trials * parties):
        raise ProtocolError(
            f"aggregated values outside [0, {params.trials * parties}]"
        )
    scale = params.bound / (params.beta * params.trials)
    return scale * (arr.astype(np.float64) - params.trials * parties / 2)


def theoretical_variance(parties: int, params: PbmParams) -> float:
    """Worst-case variance of the sum estimate: bound^2 * M / (4 * beta^2 * trials).

    Exact when every input is 0 (success probability 1/2); an upper bound
    otherwise, since per-input variance shrinks as inputs approach +/-bound.
    """
    if parties < 1:
        raise ValueError(f"parties must be a positive integer, got {parties!r}")
    if params.beta == 0.0:
        raise ValueError("beta = 0 has unbounded estimator variance")
    return params.bound**2 * parties / (4 * params.beta**2 * params.trials)
