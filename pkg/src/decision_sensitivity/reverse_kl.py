"""Extreme reweightings under the reverse constraint KL(pi_I || pi) <= C.

On the atom set the constraint reads -(1/m) sum log(m w_i) <= C, a convex
program in w. Stationarity of its Lagrangian gives w_i = mu / (m (nu - L_i))
with nu above every loss (sup) or below every loss (inf), so the whole
problem reduces to a monotone scalar search over nu.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kl_tilt import INF, SUP, _check_c_grid
from .sample_model import InputError, NormalizedLossMatrix, check_weights

C_RTOL = 1e-8
C_ATOL = 1e-12
_EPS = 1e-12
_MAX_ITER = 500


@dataclass(frozen=True)
class ReverseSolution:
    """Optimal reweighting for one loss column.

    ``gap`` is |nu - extreme loss|, kept separately because for large radii it
    drops below the spacing of floats near the loss and ``nu`` rounds onto it.
    """

    weights: np.ndarray
    nu: float
    kl_rev: float
    psi: float
    direction: str
    degenerate: bool = False
    gap: float = math.inf


def reverse_kl(weights) -> float:
    """(1/m) sum log(1 / (m w_i)); infinite as soon as one weight is zero."""
    w = check_weights(weights)
    if np.any(w == 0):
        return math.inf
    return float(-np.mean(np.log(w.size * w)))


def _kl_at_gap(u_scaled: np.ndarray, gap: float) -> float:
    # u_scaled holds (max L - L_i); the weights are proportional to 1 / (1 + u_i / gap)
    u = u_scaled / gap
    return float(np.mean(np.log1p(u)) + math.log1p(-np.mean(u / (1.0 + u))))


def _weights_at_gap(u_scaled: np.ndarray, gap: float) -> np.ndarray:
    inv = 1.0 / (1.0 + u_scaled / gap)
    return inv / inv.sum()


def _solve_sup(losses: np.ndarray, C: float) -> tuple[np.ndarray, float, float]:
    """Return (weights, gap nu - max L, realised KL) for the sup problem."""
    top = float(losses.max())
    u = top - losses
    tol = C * C_RTOL if C >= 1e-8 else C_ATOL
    gap = float(u.max()) + _EPS
    kl = _kl_at_gap(u, gap)
    # larger gap -> closer to uniform -> smaller KL
    if kl > C:
        lo = gap
        while kl > C:
            lo, gap = gap, 2.0 * gap
            kl = _kl_at_gap(u, gap)
        small, large = lo, gap
    else:
        hi = gap
        while kl < C:
            hi, gap = gap, 0.5 * gap
            kl = _kl_at_gap(u, gap)
        small, large = gap, hi
    best_gap, best_err = gap, abs(kl - C)
    for _ in range(_MAX_ITER):
        if best_err <= tol:
            break
        mid = math.sqrt(small * large)
        if not small < mid < large:
            break
        kl = _kl_at_gap(u, mid)
        err = abs(kl - C)
        if err < best_err:
            best_gap, best_err = mid, err
        if kl > C:
            small = mid
        else:
            large = mid
    return _weights_at_gap(u, best_gap), best_gap, _kl_at_gap(u, best_gap)


def solve_reverse(losses, C: float, direction: str = SUP) -> ReverseSolution:
    """Maximise (sup) or minimise (inf) the expected loss over reweightings with
    reverse KL at most ``C``.

    The realised reverse KL matches ``C`` to 1e-8 relative. Every weight stays
    strictly positive for finite ``C``.

    >>> sol = solve_reverse([0.0, 1.0], 0.5 * (math.log(2) + math.log(2 / 3)))
    >>> sol.weights.round(8).tolist(), round(sol.nu, 8)
    ([0.25, 0.75], 1.5)
    """
    losses = np.asarray(losses, dtype=float)
    if losses.ndim != 1 or losses.size < 2 or not np.all(np.isfinite(losses)):
        raise InputError("expected a finite loss vector with at least 2 entries")
    if direction not in (SUP, INF):
        raise InputError(f"direction must be 'sup' or 'inf', got {direction!r}")
    if not C >= 0 or math.isinf(C):
        raise InputError(f"reverse KL radius must be finite and nonnegative, got {C}")
    m = losses.size
    uniform = np.full(m, 1.0 / m)
    degenerate = bool(losses.max() == losses.min())
    if C == 0 or degenerate:
        nu = math.inf if direction == SUP else -math.inf
        return ReverseSolution(uniform, nu, 0.0, float(np.dot(uniform, losses)), direction, degenerate)

    if direction == SUP:
        w, gap, kl = _solve_sup(losses, C)
        nu = float(losses.max()) + gap
    else:
        w, gap, kl = _solve_sup(-losses, C)
        nu = float(losses.min()) - gap
    return ReverseSolution(w, nu, kl, float(np.dot(w, losses)), direction, gap=gap)


@dataclass(frozen=True)
class ReverseEnvelope:
    """Reverse-KL solutions indexed [action, grid point] for one direction."""

    C: np.ndarray
    action_labels: tuple[str, ...]
    direction: str
    nu: np.ndarray
    psi: np.ndarray
    kl_rev: np.ndarray
    min_weight: np.ndarray


def reverse_envelope(loss_matrix: NormalizedLossMatrix, C_grid, direction: str = SUP) -> ReverseEnvelope:
    C = _check_c_grid(C_grid)
    shape = (loss_matrix.k, C.size)
    nu, psi, kl, wmin = np.empty(shape), np.empty(shape), np.empty(shape), np.empty(shape)
    for a in range(loss_matrix.k):
        for j, c in enumerate(C):
            sol = solve_reverse(loss_matrix.values[:, a], float(c), direction)
            nu[a, j], psi[a, j], kl[a, j] = sol.nu, sol.psi, sol.kl_rev
            wmin[a, j] = sol.weights.min()
    return ReverseEnvelope(C, loss_matrix.action_labels, direction, nu, psi, kl, wmin)
