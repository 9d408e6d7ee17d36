"""Gradient privatization: per-sample clipping, noising, Poisson batches.

The update rule is the usual one: clip every per-sample gradient to L2
norm C, sum, add N(0, C^2 sigma^2 I) noise to the sum, divide by the
batch size.  Batches are Poisson subsamples so the accountant's
subsampling amplification applies; empty batches are simply skipped and
never charged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .accountant import RdpLedger, accumulate_step, to_epsilon_delta
from .errors import PrivacyError


@dataclass(frozen=True)
class PrivacyParams:
    epsilon_target: float
    delta: float
    sigma: float
    clip_norm: float
    sample_rate: float

    def __post_init__(self) -> None:
        if self.epsilon_target <= 0.0:
            raise PrivacyError(f"epsilon target must be positive, got {self.epsilon_target}")
        if not 0.0 < self.delta < 1.0:
            raise PrivacyError(f"delta must be in (0, 1), got {self.delta}")
        if self.sigma <= 0.0:
            raise PrivacyError(f"noise multiplier must be positive, got {self.sigma}")
        if self.clip_norm <= 0.0:
            raise PrivacyError(f"clipping norm must be positive, got {self.clip_norm}")
        if not 0.0 < self.sample_rate <= 1.0:
            raise PrivacyError(f"sample rate must be in (0, 1], got {self.sample_rate}")


def clip_per_sample(grads: np.ndarray, clip_norm: float) -> np.ndarray:
    """Scale each row to L2 norm at most clip_norm: g / max(1, |g| / C)."""
    if clip_norm <= 0.0:
        raise PrivacyError(f"clipping norm must be positive, got {clip_norm}")
    grads = np.asarray(grads, dtype=np.float64)
    norms = np.linalg.norm(grads, axis=1, keepdims=True)
    return grads / np.maximum(1.0, norms / clip_norm)


def privatize_batch_gradient(
    grads: np.ndarray, params: PrivacyParams, rng: np.random.Generator
) -> np.ndarray:
    """Noisy mean gradient of one batch: (sum_i clip(g_i) + noise) / B."""
    grads = np.asarray(grads, dtype=np.float64)
    batch = grads.shape[0]
    if batch == 0:
        raise PrivacyError("cannot privatize an empty batch")
    clipped = clip_per_sample(grads, params.clip_norm)
    noise = rng.normal(0.0, params.clip_norm * params.sigma, size=grads.shape[1])
    return (clipped.sum(axis=0) + noise) / batch


def poisson_sample(n_rows: int, sample_rate: float, rng: np.random.Generator) -> np.ndarray:
    """Indices of a Poisson subsample: each row joins independently w.p. q."""
    if not 0.0 < sample_rate <= 1.0:
        raise PrivacyError(f"sample rate must be in (0, 1], got {sample_rate}")
    if n_rows < 1:
        raise PrivacyError(f"need at least one row, got {n_rows}")
    mask = rng.random(n_rows) < sample_rate
    return np.flatnonzero(mask)


def gaussian_sigma(epsilon: float, delta: float) -> float:
    """Classical Gaussian-mechanism calibration sigma = sqrt(2 ln(1.25/delta)) / epsilon.

    Only a reference point for picking a noise multiplier; the RDP ledger,
    not this formula, decides when a training run must stop.
    """
    if epsilon <= 0.0:
        raise PrivacyError(f"epsilon must be positive, got {epsilon}")
    if not 0.0 < delta < 1.0:
        raise PrivacyError(f"delta must be in (0, 1), got {delta}")
    return math.sqrt(2.0 * math.log(1.25 / delta)) / epsilon


def budget_exhausted(ledger: RdpLedger, params: PrivacyParams) -> bool:
    """True iff charging one more step would push epsilon past the target.

    Checked before each update, so the epsilon reported at halt never
    exceeds the target.
    """
    hypothetical = accumulate_step(ledger, params.sample_rate, params.sigma)
    return to_epsilon_delta(hypothetical, params.delta) > params.epsilon_target
