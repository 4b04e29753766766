"""Boundary learning: recursive average splitting plus the perceptron update.

A fresh bucket is initialised by splitting its samples at their mean and
taking the sub-region means as boundaries. Later samples nudge each stored
boundary toward the freshly computed one by ``alpha`` times the error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from .knowledge_base import BoundarySet, KBSnapshot, KnowledgeBaseError, TimeBucketKey

SUPPORTED_TERM_COUNTS = (2, 3, 5)


class LearningError(ValueError):
    pass


class InsufficientSamplesError(LearningError):
    pass


class DegenerateDataError(LearningError):
    """A split produced an empty region; keep the previous boundaries."""


class BoundaryCrossingError(LearningError):
    pass


@dataclass(frozen=True)
class LearnerConfig:
    alpha: float = 0.1
    input_gain: float = 1.0
    min_samples: int = 12
    # boundaries closer than epsilon_spread * max(1, |center|) are pushed apart
    epsilon_spread: float = 1e-6
    # None means 1% of the variable's domain width
    stability_tol: float | None = None

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must be in (0, 1]")
        if not self.epsilon_spread > 0:
            raise ValueError("epsilon_spread must be positive")
        if self.min_samples < 1:
            raise ValueError("min_samples must be positive")
        if self.stability_tol is not None and self.stability_tol < 0:
            raise ValueError("stability_tol must be nonnegative")
        if not math.isfinite(self.input_gain):
            raise ValueError("input_gain must be finite")

    def tolerance_for(self, domain_min: float, domain_max: float) -> float:
        if self.stability_tol is not None:
            return self.stability_tol
        return 0.01 * (domain_max - domain_min)


@dataclass(frozen=True)
class SampleWindow:
    variable: str
    bucket: TimeBucketKey
    values: Sequence[float]
    period: float = 3600.0


@dataclass(frozen=True)
class UpdateStep:
    w_prev: float
    v_observed: float
    error: float
    delta: float
    w_next: float


def _mean(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values)


def _split(values: Sequence[float]) -> tuple[float, list[float], list[float]]:
    m = _mean(values)
    low = [v for v in values if v <= m]
    high = [v for v in values if v > m]
    return m, low, high


def _spread(bounds: list[float], eps: float) -> list[float]:
    n = len(bounds)
    if n > 1 and all(b == bounds[0] for b in bounds):
        e = eps * max(1.0, abs(bounds[0]))
        return [bounds[0] + (2 * j - (n - 1)) * e for j in range(n)]
    out = list(bounds)
    for i in range(len(out) - 1):
        a, b = out[i], out[i + 1]
        center = (a + b) / 2
        e = eps * max(1.0, abs(center))
        if b - a < e:
            out[i], out[i + 1] = center - e, center + e
    return out


def recursive_average_partition(values: Sequence[float], k_terms: int,
                                cfg: LearnerConfig = LearnerConfig()) -> list[float]:
    """Return ``k_terms - 1`` increasing boundaries for ``values``.

    k=2 splits at the mean. k=3 splits at the mean and returns the means of
    the low (``<= mean``) and high regions. k=5 additionally splits the low
    and high regions at their own means, keeping the middle region whole.
    Constant data is widened by the spread guard instead of failing.
    """
    if k_terms not in SUPPORTED_TERM_COUNTS:
        raise LearningError(f"k_terms must be one of {SUPPORTED_TERM_COUNTS}, got {k_terms}")
    if len(values) < max(1, cfg.min_samples):
        raise InsufficientSamplesError(f"need at least {cfg.min_samples} samples, got {len(values)}")
    if not all(math.isfinite(v) for v in values):
        raise LearningError("non-finite sample")

    m0, low, high = _split(values)
    if k_terms == 2:
        bounds = [m0]
    elif not high:
        # every value equals the mean
        bounds = [m0] * (k_terms - 1)
    else:
        mean_low, mean_high = _mean(low), _mean(high)
        if k_terms == 3:
            bounds = [mean_low, mean_high]
        else:
            _, low_low, low_high = _split(low)
            _, high_low, high_high = _split(high)
            if not (low_high and high_high):
                raise DegenerateDataError("empty sub-region in the five-term split")
            bounds = [_mean(low_low), _mean(low_high), _mean(high_low), _mean(high_high)]

    bounds = _spread(bounds, cfg.epsilon_spread)
    if any(b2 <= b1 for b1, b2 in zip(bounds, bounds[1:])):
        raise DegenerateDataError(f"could not separate boundaries {bounds}")
    return bounds


def perceptron_update(w_prev: float, v_observed: float, cfg: LearnerConfig = LearnerConfig()) -> UpdateStep:
    """One step of ``w <- w + alpha * gain * (observed - w)``."""
    if not (math.isfinite(w_prev) and math.isfinite(v_observed)):
        raise LearningError("non-finite input to perceptron_update")
    error = v_observed - w_prev
    delta = cfg.alpha * cfg.input_gain * error
    return UpdateStep(w_prev, v_observed, error, delta, w_prev + delta)


def learn_tick(snap: KBSnapshot, window: SampleWindow, cfg: LearnerConfig = LearnerConfig()) -> BoundarySet:
    """Compute the entry to commit for ``window``'s variable and bucket.

    Raises ``DegenerateDataError``/``InsufficientSamplesError`` when the
    window is unusable and ``BoundaryCrossingError`` when an update would
    break ordering; callers drop the tick in all three cases.
    """
    var = snap.variable(window.variable)
    fresh = recursive_average_partition(window.values, len(var.terms), cfg)
    fresh = [min(max(b, var.domain_min), var.domain_max) for b in fresh]
    n_new = len(window.values)
    batch_mean = _mean(window.values)

    prev = snap.get(var.name, window.bucket)
    if prev is None:
        bounds = fresh
        count = n_new
        mean = batch_mean
    else:
        bounds = [perceptron_update(w, v, cfg).w_next for w, v in zip(prev.boundaries, fresh)]
        count = prev.sample_count + n_new
        old_mean = prev.mean if prev.mean is not None else batch_mean
        mean = (old_mean * prev.sample_count + batch_mean * n_new) / count
    try:
        bs = BoundarySet(tuple(bounds), count, mean)
        bs.check_domain(var)
    except KnowledgeBaseError as exc:
        raise BoundaryCrossingError(str(exc)) from None
    return bs


def stability_metric(history: Sequence[BoundarySet | Sequence[float]]) -> float:
    """Largest per-boundary change between the last two entries."""
    if len(history) < 2:
        raise LearningError("stability needs at least two history entries")
    a, b = history[-2], history[-1]
    a = a.boundaries if isinstance(a, BoundarySet) else a
    b = b.boundaries if isinstance(b, BoundarySet) else b
    if len(a) != len(b):
        raise LearningError("history entries have different arity")
    return max(abs(x - y) for x, y in zip(a, b))


@dataclass
class LearnerStats:
    commits: int = 0
    dropped: int = 0
    drop_reasons: dict[str, int] = field(default_factory=dict)

    def drop(self, reason: str) -> None:
        self.dropped += 1
        self.drop_reasons[reason] = self.drop_reasons.get(reason, 0) + 1
