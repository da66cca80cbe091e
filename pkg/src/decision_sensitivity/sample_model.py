"""In-memory Monte Carlo model: posterior draws, loss matrices and weights."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

WEIGHT_SUM_TOL = 1e-9


class InputError(ValueError):
    """Raised for malformed or out-of-domain user input."""


def _finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains non-finite entries")


@dataclass(frozen=True)
class SampleBag:
    """m posterior draws plus optional per-draw density information.

    ``log_density`` is the unnormalised log posterior at each draw,
    ``log_lik_terms`` holds log f(x_j | theta_i) with one column per datum
    and ``log_prior`` the log prior at each draw.
    """

    samples: np.ndarray
    log_density: Optional[np.ndarray] = None
    log_lik_terms: Optional[np.ndarray] = None
    log_prior: Optional[np.ndarray] = None
    columns: tuple[str, ...] = ()

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim == 1:
            samples = samples[:, None]
        if samples.ndim != 2:
            raise InputError("samples must be an m x d matrix")
        if samples.shape[0] < 2:
            raise InputError(f"need at least 2 samples, got {samples.shape[0]}")
        _finite("samples", samples)
        object.__setattr__(self, "samples", samples)
        m = samples.shape[0]
        for name in ("log_density", "log_lik_terms", "log_prior"):
            value = getattr(self, name)
            if value is None:
                continue
            value = np.asarray(value, dtype=float)
            if name == "log_lik_terms" and value.ndim == 1:
                value = value[:, None]
            if value.shape[0] != m:
                raise InputError(f"{name} has leading dimension {value.shape[0]}, expected {m}")
            _finite(name, value)
            object.__setattr__(self, name, value)
        if not self.columns:
            object.__setattr__(self, "columns", tuple(f"x{j + 1}" for j in range(samples.shape[1])))

    @property
    def m(self) -> int:
        return self.samples.shape[0]

    @property
    def d(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True)
class NormalizedLossMatrix:
    """An m x k loss matrix rescaled to [0, 1] with one global affine map.

    ``to_raw`` undoes the rescaling. When every raw loss is identical the
    matrix is filled with 0.5 and ``degenerate`` is set.
    """

    values: np.ndarray
    loss_min: float
    loss_max: float
    action_labels: tuple[str, ...]
    degenerate: bool = False
    normalized: bool = True

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def k(self) -> int:
        return self.values.shape[1]

    @property
    def scale(self) -> float:
        return self.loss_max - self.loss_min

    def column(self, action: int | str) -> np.ndarray:
        return self.values[:, self.index(action)]

    def index(self, action: int | str) -> int:
        if isinstance(action, (int, np.integer)):
            if not 0 <= action < self.k:
                raise InputError(f"action index {action} out of range for {self.k} actions")
            return int(action)
        try:
            return self.action_labels.index(action)
        except ValueError:
            raise InputError(f"unknown action {action!r}") from None

    def to_raw(self, x):
        """Map normalised loss values (or expectations of them) back to raw units."""
        if self.degenerate:
            return np.zeros_like(np.asarray(x, dtype=float)) + self.loss_min
        return self.loss_min + np.asarray(x, dtype=float) * self.scale

    def expected_losses(self) -> np.ndarray:
        """Baseline expected loss of every action under uniform weights."""
        w = uniform_weights(self.m)
        return np.array([expected_loss(w, self.values[:, a]) for a in range(self.k)])

    def bayes_action(self) -> int:
        """Index of the expected-loss minimiser, smallest index on ties."""
        return int(np.argmin(self.expected_losses()))


def _labels(labels: Optional[Sequence[str]], k: int) -> tuple[str, ...]:
    if labels is None:
        return tuple(f"a{j + 1}" for j in range(k))
    labels = tuple(str(s) for s in labels)
    if len(labels) != k:
        raise InputError(f"got {len(labels)} action labels for {k} loss columns")
    if len(set(labels)) != k:
        raise InputError("action labels must be unique")
    return labels


def _as_loss_matrix(raw) -> np.ndarray:
    raw = np.asarray(raw, dtype=float)
    if raw.ndim == 1:
        raw = raw[:, None]
    if raw.ndim != 2:
        raise InputError("losses must be an m x k matrix")
    m, k = raw.shape
    if m < 2:
        raise InputError(f"need at least 2 loss rows, got {m}")
    if k < 1:
        raise InputError("need at least one action")
    _finite("losses", raw)
    return raw


def normalize_losses(raw, labels: Optional[Sequence[str]] = None) -> NormalizedLossMatrix:
    """Rescale a raw loss matrix to [0, 1] using its global min and max.

    A single transformation is applied to every column, so the ranking of
    actions by expected loss is unchanged.

    >>> normalize_losses([[2, 4], [6, 4]]).values.tolist()
    [[0.0, 0.5], [1.0, 0.5]]
    """
    raw = _as_loss_matrix(raw)
    labels = _labels(labels, raw.shape[1])
    lo, hi = float(raw.min()), float(raw.max())
    if hi == lo:
        values = np.full_like(raw, 0.5)
        return NormalizedLossMatrix(values, lo, hi, labels, degenerate=True)
    values = (raw - lo) / (hi - lo)
    # pin the extremes so the [0, 1] span is exact after rounding
    values[raw == lo] = 0.0
    values[raw == hi] = 1.0
    return NormalizedLossMatrix(values, lo, hi, labels)


def unscaled_losses(raw, labels: Optional[Sequence[str]] = None) -> NormalizedLossMatrix:
    """Wrap raw losses with an identity back-transform (normalisation disabled)."""
    raw = _as_loss_matrix(raw)
    labels = _labels(labels, raw.shape[1])
    degenerate = bool(raw.max() == raw.min())
    return NormalizedLossMatrix(raw.copy(), 0.0, 1.0, labels, degenerate=degenerate, normalized=False)


def uniform_weights(m: int) -> np.ndarray:
    return np.full(m, 1.0 / m)


def check_weights(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise InputError("weights must be a non-empty vector")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise InputError("weights must be finite and nonnegative")
    if abs(w.sum() - 1.0) > WEIGHT_SUM_TOL:
        raise InputError(f"weights sum to {w.sum()!r}, expected 1")
    return w


def expected_loss(weights, losses) -> float:
    """Weighted mean sum_i w_i L_i."""
    w = check_weights(weights)
    losses = np.asarray(losses, dtype=float)
    if losses.shape != w.shape:
        raise InputError(f"weights have length {w.size} but losses have shape {losses.shape}")
    return float(np.dot(w, losses))


def effective_sample_size(weights) -> float:
    """Kish effective sample size 1 / sum w_i^2, in [1, m]."""
    w = check_weights(weights)
    return float(1.0 / np.dot(w, w))
