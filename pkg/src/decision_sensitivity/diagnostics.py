"""Quantile-loss diagnostics: VaR, CVaR, trimmed mean, cumulative expected loss,
leave-one-out sensitivity and density/loss scatter data."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .sample_model import (
    InputError,
    NormalizedLossMatrix,
    SampleBag,
    effective_sample_size,
    expected_loss,
    uniform_weights,
)

KINDS = ("var", "cvar", "trimmed", "cel")
DEFAULT_Q_POINTS = 512
MAX_LOG_WEIGHT = 700.0


@dataclass(frozen=True)
class QCurve:
    q: np.ndarray
    value: np.ndarray
    action_label: str
    kind: str


@dataclass(frozen=True)
class LOOReport:
    """Leave-one-out expected losses.

    ``psi_loo[a, j]`` is the expected loss of action ``a`` with datum ``j``
    removed; ``psi_no_prior[a]`` the same with the prior removed.
    """

    psi_loo: Optional[np.ndarray]
    psi_no_prior: Optional[np.ndarray]
    baseline: np.ndarray
    ess_loo: Optional[np.ndarray]
    ess_no_prior: Optional[float]


def default_q_grid(n: int = DEFAULT_Q_POINTS) -> np.ndarray:
    return np.linspace(0.0, 1.0, n)


def _check_grid(q_grid) -> np.ndarray:
    q = np.atleast_1d(np.asarray(q_grid, dtype=float))
    if q.size == 0:
        raise InputError("q grid is empty")
    if np.any(q < 0) or np.any(q > 1) or not np.all(np.isfinite(q)):
        raise InputError("q grid must lie in [0, 1]")
    if q.size > 1 and np.any(np.diff(q) <= 0):
        raise InputError("q grid must be strictly increasing")
    return q


def _check_losses(losses) -> np.ndarray:
    losses = np.asarray(losses, dtype=float)
    if losses.ndim != 1:
        raise InputError("expected a single loss column")
    if losses.size < 2:
        raise InputError("need at least 2 losses")
    if not np.all(np.isfinite(losses)):
        raise InputError("losses contain non-finite entries")
    return losses


def _sorted_desc(losses: np.ndarray) -> np.ndarray:
    # stable on the negated values: ties keep original sample order
    return losses[np.argsort(-losses, kind="stable")]


def _tail_sums(losses: np.ndarray) -> np.ndarray:
    """Sums of the k largest losses for k = 0..m."""
    return np.concatenate(([0.0], np.cumsum(_sorted_desc(losses))))


def var_curve(losses, q_grid, action_label: str = "") -> QCurve:
    """Quantile loss F^{-1}(1 - q) by interpolating (k/m, k-th largest loss).

    Below q = 1/m the curve is held at the maximum loss, so q = 0 gives the
    minimax value.
    """
    losses = _check_losses(losses)
    q = _check_grid(q_grid)
    m = losses.size
    x = np.arange(1, m + 1) / m
    value = np.interp(q, x, _sorted_desc(losses))
    return QCurve(q, value, action_label, "var")


def _cvar_values(losses: np.ndarray, q: np.ndarray) -> np.ndarray:
    m = losses.size
    k = np.arange(1, m + 1)
    mean = expected_loss(uniform_weights(m), losses)
    g = _tail_sums(losses)[1:] / k
    g[-1] = mean
    # the mean of the top k never drops below the overall mean; clamps rounding noise
    np.maximum(g, mean, out=g)
    # the top-1 mean is the max itself; the clamp above can overshoot it by an ulp
    g[0] = min(g[0], losses.max())
    return np.interp(q, k / m, g)


def cvar_curve(losses, q_grid, action_label: str = "") -> QCurve:
    """Mean of the worst q-fraction of losses.

    The estimator averages the k largest losses at q = k/m and interpolates
    linearly in between. q = 0 reports the q -> 0 limit, the maximum loss.
    """
    losses = _check_losses(losses)
    q = _check_grid(q_grid)
    return QCurve(q, _cvar_values(losses, q), action_label, "cvar")


def trimmed_mean(losses, q: float) -> float:
    """Two-sided trimmed mean dropping floor(q*m/2) losses from each tail."""
    losses = _check_losses(losses)
    if not 0 <= q < 1:
        raise InputError(f"trim fraction must be in [0, 1), got {q}")
    m = losses.size
    t = int(np.floor(q * m / 2))
    if t == 0:
        return expected_loss(uniform_weights(m), losses)
    kept = np.sort(losses, kind="stable")[t : m - t]
    if kept.size == 0:
        raise InputError(f"trimming q={q} removes every sample")
    return float(kept.mean())


def trimmed_curve(losses, q_grid, action_label: str = "") -> QCurve:
    """Trimmed mean on the grid points q < 1 (q = 1 would trim everything)."""
    losses = _check_losses(losses)
    q = _check_grid(q_grid)
    q = q[q < 1]
    if q.size == 0:
        raise InputError("q grid has no points below 1 for the trimmed mean")
    value = np.array([trimmed_mean(losses, float(qi)) for qi in q])
    return QCurve(q, value, action_label, "trimmed")


def cel_curve(losses, q_grid, action_label: str = "") -> QCurve:
    """Cumulative expected loss: the share of expected loss contributed by the
    worst q-fraction of outcomes.

    J(k/m) is the sum of the k largest losses divided by m, interpolated
    linearly. J(0) = 0 and J(1) is the expected loss; the slope near 0 is
    the maximum loss.
    """
    losses = _check_losses(losses)
    q = _check_grid(q_grid)
    m = losses.size
    mean = expected_loss(uniform_weights(m), losses)
    j = _tail_sums(losses) / m
    j[-1] = mean
    if losses.min() >= 0:
        # partial sums of nonnegative terms never exceed the total
        np.minimum(j, mean, out=j)
    value = np.interp(q, np.arange(m + 1) / m, j)
    return QCurve(q, value, action_label, "cel")


_CURVES = {"var": var_curve, "cvar": cvar_curve, "trimmed": trimmed_curve, "cel": cel_curve}


def all_curves(loss_matrix: NormalizedLossMatrix, q_grid, kinds=KINDS) -> list[QCurve]:
    """Every requested curve for every action, ordered by action then kind."""
    curves = []
    for a, label in enumerate(loss_matrix.action_labels):
        column = loss_matrix.values[:, a]
        for kind in kinds:
            curves.append(_CURVES[kind](column, q_grid, label))
    return curves


def cvar_optimal_actions(loss_matrix: NormalizedLossMatrix, q_grid) -> np.ndarray:
    """Index of the CVaR(q)-minimising action at each grid point (smallest index on ties)."""
    q = _check_grid(q_grid)
    values = np.column_stack(
        [_cvar_values(_check_losses(loss_matrix.values[:, a]), q) for a in range(loss_matrix.k)]
    )
    return np.argmin(values, axis=1)


def cvar_crossing(loss_matrix: NormalizedLossMatrix, q_grid) -> Optional[float]:
    """First grid q, scanning down from 1, where the Bayes action stops being CVaR-optimal.

    Returns None when the expected-loss optimal action stays CVaR-optimal on the
    whole grid.
    """
    if loss_matrix.k < 2:
        return None
    q = _check_grid(q_grid)
    best = loss_matrix.bayes_action()
    optimal = cvar_optimal_actions(loss_matrix, q)
    for i in range(q.size - 1, -1, -1):
        if optimal[i] != best:
            return float(q[i])
    return None


def _log_reweight(log_w: np.ndarray) -> np.ndarray:
    log_w = log_w - log_w.max()
    w = np.exp(np.minimum(log_w, MAX_LOG_WEIGHT))
    return w / w.sum()


def loo_sensitivity(
    bag: SampleBag,
    loss_matrix: NormalizedLossMatrix,
    data: bool = True,
    prior: bool = True,
) -> LOOReport:
    """Importance-sampling leave-one-out expected losses.

    Removing datum j reweights sample i by 1/f(x_j | theta_i); removing the
    prior reweights by 1/pi(theta_i). Weights are formed in log space.

    Parameters
    ----------
    bag : SampleBag
        Must carry ``log_lik_terms`` when ``data`` is set and ``log_prior``
        when ``prior`` is set.
    loss_matrix : NormalizedLossMatrix
        Losses aligned row-for-row with ``bag``.
    """
    if bag.m != loss_matrix.m:
        raise InputError(f"sample bag has {bag.m} rows but loss matrix has {loss_matrix.m}")
    if data and bag.log_lik_terms is None:
        raise InputError("leave-one-out by datum needs log-likelihood columns loglik_*")
    if prior and bag.log_prior is None:
        raise InputError("leave-prior-out needs a log_prior column")
    losses = loss_matrix.values
    baseline = loss_matrix.expected_losses()

    psi_loo = ess_loo = None
    if data:
        n = bag.log_lik_terms.shape[1]
        psi_loo = np.empty((loss_matrix.k, n))
        ess_loo = np.empty(n)
        for j in range(n):
            w = _log_reweight(-bag.log_lik_terms[:, j])
            psi_loo[:, j] = w @ losses
            ess_loo[j] = effective_sample_size(w)

    psi_prior = ess_prior = None
    if prior:
        w = _log_reweight(-bag.log_prior)
        psi_prior = w @ losses
        ess_prior = effective_sample_size(w)

    return LOOReport(psi_loo, psi_prior, baseline, ess_loo, ess_prior)


def density_loss_scatter(bag: SampleBag, losses) -> list[tuple[float, float]]:
    """(log density, loss) pairs in sample order, for spotting high loss in the tails."""
    if bag.log_density is None:
        raise InputError("density/loss scatter needs a log_density column")
    losses = np.asarray(losses, dtype=float)
    if losses.shape != (bag.m,):
        raise InputError(f"expected {bag.m} losses, got shape {losses.shape}")
    return [(float(d), float(z)) for d, z in zip(bag.log_density, losses)]
