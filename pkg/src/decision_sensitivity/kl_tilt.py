"""Least- and most-favourable reweightings inside a KL ball around the sample bag.

Within {pi : KL(pi || pi_I) <= C} the expected-loss maximiser is the
exponential tilt w_i ~ exp(lambda * L_i) of the uniform atom weights, with
lambda >= 0 set so the ball constraint is active. The minimiser tilts with
-lambda. Everything here works on one loss column at a time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .sample_model import InputError, NormalizedLossMatrix

SUP = "sup"
INF = "inf"
C_RTOL = 1e-8
C_ATOL = 1e-12
DEFAULT_C_POINTS = 64
DEFAULT_C_MIN = 1e-4
_MAX_ITER = 400


@dataclass(frozen=True)
class TiltedWeights:
    """Exponentially tilted atom weights.

    ``lam`` is the (nonnegative) tilting strength, applied with the sign of
    ``direction``. ``log_z`` is log E_uniform[exp(+-lam * L)], infinite for
    the point-mass limit. ``saturated`` marks requests that hit the finite
    KL ceiling of the atom set (or a constant loss column).
    """

    lam: float
    weights: np.ndarray
    kl: float
    psi: float
    ess: float
    direction: str
    log_z: float
    baseline: float
    saturated: bool = False


def _check_direction(direction: str) -> float:
    if direction == SUP:
        return 1.0
    if direction == INF:
        return -1.0
    raise InputError(f"direction must be 'sup' or 'inf', got {direction!r}")


def _check_column(losses) -> np.ndarray:
    losses = np.asarray(losses, dtype=float)
    if losses.ndim != 1 or losses.size < 2:
        raise InputError("expected a loss vector with at least 2 entries")
    if not np.all(np.isfinite(losses)):
        raise InputError("losses contain non-finite entries")
    return losses


def _extreme(losses: np.ndarray, sign: float) -> float:
    return float(losses.max() if sign > 0 else losses.min())


def _log_ratio(losses: np.ndarray, t: float, ext: float):
    """Return (log(m * w_i), w_i) for tilt exp(t * L) with t having the sign of the tilt.

    Shifting by the extreme loss keeps every exponent <= 0; expm1/log1p keep
    small tilts accurate.
    """
    d = t * (losses - ext)
    e = np.expm1(d)
    mz = e.mean()
    log_mw = d - math.log1p(mz)
    w = (e + 1.0) / (losses.size * (1.0 + mz))
    return log_mw, w, mz


def _kl_of(losses: np.ndarray, t: float, ext: float) -> float:
    log_mw, w, _ = _log_ratio(losses, t, ext)
    return float(np.dot(w, log_mw))


def _point_mass(losses: np.ndarray, sign: float) -> np.ndarray:
    target = losses == _extreme(losses, sign)
    return target / target.sum()


def _kl_ceiling(losses: np.ndarray, sign: float) -> float:
    n = int(np.count_nonzero(losses == _extreme(losses, sign)))
    return math.log(losses.size / n)


def tilt_weights(losses, lam: float, direction: str = SUP) -> TiltedWeights:
    """Tilt the uniform weights by exp(+-lam * L).

    >>> tw = tilt_weights([0.0, 1.0], math.log(3))
    >>> tw.weights.round(12).tolist(), round(tw.psi, 12)
    ([0.25, 0.75], 0.75)
    """
    losses = _check_column(losses)
    sign = _check_direction(direction)
    if not lam >= 0:
        raise InputError(f"lambda must be nonnegative, got {lam}")
    m = losses.size
    baseline = float(np.dot(np.full(m, 1.0 / m), losses))
    ext = _extreme(losses, sign)
    if math.isinf(lam):
        w = _point_mass(losses, sign)
        return TiltedWeights(
            lam, w, _kl_ceiling(losses, sign), float(np.dot(w, losses)),
            float(1.0 / np.dot(w, w)), direction, math.inf, baseline,
        )
    t = sign * lam
    log_mw, w, mz = _log_ratio(losses, t, ext)
    kl = float(np.dot(w, log_mw))
    log_z = t * ext + math.log1p(mz)
    psi = float(np.dot(w, losses))
    return TiltedWeights(lam, w, max(kl, 0.0), psi, float(1.0 / np.dot(w, w)), direction, log_z, baseline)


def solve_lambda_for_C(losses, C: float, direction: str = SUP, lam_hint: float = 0.0) -> TiltedWeights:
    """Find the tilt whose KL to the uniform weights equals ``C``.

    The KL of the tilt rises monotonically with lambda, so lambda is bracketed
    by doubling from 1 and then bisected until the KL matches ``C`` to 1e-8
    relative (1e-12 absolute below C = 1e-8).

    On m atoms the KL of any reweighting is at most log(m / n_ext), where
    n_ext counts the atoms attaining the extreme loss. Larger ``C`` returns the
    point mass on those atoms flagged ``saturated``. A constant loss column
    returns the uniform weights, also flagged.

    ``lam_hint`` is a known lower bound on the answer (e.g. the solution at a
    smaller C) used to shorten the bracket search.
    """
    losses = _check_column(losses)
    sign = _check_direction(direction)
    if not C >= 0:
        raise InputError(f"KL radius must be nonnegative, got {C}")
    if losses.max() == losses.min():
        tw = tilt_weights(losses, 0.0, direction)
        return replace(tw, saturated=True)
    if C == 0:
        return tilt_weights(losses, 0.0, direction)

    tol = C * C_RTOL if C >= 1e-8 else C_ATOL
    # solve on losses rescaled to unit spread so tiny spreads cannot push
    # lambda out of floating-point range. Ties are counted after rescaling:
    # losses an ulp apart can merge, and the ceiling must match the column
    # the search actually runs on.
    low, spread = float(losses.min()), float(losses.max() - losses.min())
    z = (losses - low) / spread
    ceiling = _kl_ceiling(z, sign)
    if C >= ceiling - tol:
        return _unscale(tilt_weights(z, math.inf, direction), losses, spread, low, sign, C > ceiling)

    ext = _extreme(z, sign)
    lo = max(float(lam_hint) * spread, 0.0)
    hi = max(1.0, 2.0 * lo)
    kl_hi = _kl_of(z, sign * hi, ext)
    while kl_hi < C:
        lo, hi = hi, 2.0 * hi
        if not math.isfinite(hi):
            return _unscale(tilt_weights(z, math.inf, direction), losses, spread, low, sign, True)
        kl_hi = _kl_of(z, sign * hi, ext)
    best_lam, best_err = hi, abs(kl_hi - C)
    for _ in range(_MAX_ITER):
        if best_err <= tol:
            break
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        kl = _kl_of(z, sign * mid, ext)
        err = abs(kl - C)
        if err < best_err:
            best_lam, best_err = mid, err
        if kl < C:
            lo = mid
        else:
            hi = mid
    return _unscale(tilt_weights(z, best_lam, direction), losses, spread, low, sign)


def _unscale(tw: TiltedWeights, losses: np.ndarray, spread: float, low: float, sign: float,
             saturated: bool = False) -> TiltedWeights:
    """Express a tilt of (losses - low) / spread in the units of ``losses``."""
    if spread == 1.0 and low == 0.0:
        return replace(tw, saturated=saturated)
    lam = tw.lam / spread
    log_z = tw.log_z if math.isinf(lam) else tw.log_z + sign * lam * low
    return replace(
        tw,
        lam=lam,
        psi=float(np.dot(tw.weights, losses)),
        baseline=float(np.dot(np.full(losses.size, 1.0 / losses.size), losses)),
        log_z=log_z,
        saturated=saturated,
    )


def local_sensitivity(losses) -> float:
    """Derivative of the least-favourable expected loss in lambda at lambda = 0.

    Equals the (population) variance of the losses under the uniform weights.
    """
    losses = _check_column(losses)
    return float(np.var(losses))


def tilted_variance(tw: TiltedWeights, losses) -> float:
    """Variance of the losses under the tilted weights: d psi / d lambda."""
    losses = np.asarray(losses, dtype=float)
    return float(np.dot(tw.weights, (losses - tw.psi) ** 2))


def default_c_grid(m: int, n: int = DEFAULT_C_POINTS) -> np.ndarray:
    return np.geomspace(DEFAULT_C_MIN, math.log(m), n)


def _check_c_grid(C_grid) -> np.ndarray:
    C = np.atleast_1d(np.asarray(C_grid, dtype=float))
    if C.size == 0:
        raise InputError("C grid is empty")
    if np.any(C < 0) or not np.all(np.isfinite(C)):
        raise InputError("C grid must be finite and nonnegative")
    if C.size > 1 and np.any(np.diff(C) <= 0):
        raise InputError("C grid must be strictly increasing")
    return C


@dataclass(frozen=True)
class EnvelopeCurve:
    """Per-action expected-loss interval [psi_inf(C), psi_sup(C)] over a C grid.

    Arrays are indexed [action, grid point]; psi values are in the units of
    the loss matrix handed in (normalised unless normalisation was disabled).
    """

    C: np.ndarray
    action_labels: tuple[str, ...]
    psi_sup: np.ndarray
    psi_inf: np.ndarray
    lambda_sup: np.ndarray
    lambda_inf: np.ndarray
    ess_sup: np.ndarray
    ess_inf: np.ndarray
    saturated_sup: np.ndarray
    saturated_inf: np.ndarray
    bayes_action: int
    crossing: Optional[float]


def envelope_curve(loss_matrix: NormalizedLossMatrix, C_grid) -> EnvelopeCurve:
    """Solve both tilts for every action and radius, and locate the first radius
    where some rival's best case undercuts the Bayes action's worst case."""
    C = _check_c_grid(C_grid)
    k, n = loss_matrix.k, C.size
    out = {name: np.empty((k, n)) for name in ("psi_sup", "psi_inf", "lambda_sup", "lambda_inf", "ess_sup", "ess_inf")}
    sat = {SUP: np.zeros((k, n), dtype=bool), INF: np.zeros((k, n), dtype=bool)}
    for a in range(k):
        column = loss_matrix.values[:, a]
        for direction in (SUP, INF):
            hint = 0.0
            for j, c in enumerate(C):
                tw = solve_lambda_for_C(column, float(c), direction, lam_hint=hint)
                if math.isfinite(tw.lam):
                    hint = tw.lam
                out[f"psi_{direction}"][a, j] = tw.psi
                out[f"lambda_{direction}"][a, j] = tw.lam
                out[f"ess_{direction}"][a, j] = tw.ess
                sat[direction][a, j] = tw.saturated

    best = loss_matrix.bayes_action()
    crossing = None
    if k > 1:
        rivals = np.delete(out["psi_inf"], best, axis=0).min(axis=0)
        below = np.nonzero(rivals < out["psi_sup"][best])[0]
        if below.size:
            crossing = float(C[below[0]])
    return EnvelopeCurve(
        C, loss_matrix.action_labels, out["psi_sup"], out["psi_inf"], out["lambda_sup"],
        out["lambda_inf"], out["ess_sup"], out["ess_inf"], sat[SUP], sat[INF], best, crossing,
    )


def regret_column(loss_matrix: NormalizedLossMatrix, a, a_prime) -> np.ndarray:
    ia, ib = loss_matrix.index(a), loss_matrix.index(a_prime)
    if ia == ib:
        raise InputError("regret needs two distinct actions")
    return loss_matrix.values[:, ia] - loss_matrix.values[:, ib]


def regret_tilt(loss_matrix: NormalizedLossMatrix, a, a_prime, C: float) -> TiltedWeights:
    """Worst-case tilt of the regret L_a - L_a' inside the KL ball of radius C.

    ``psi`` of the result is the worst-case expected regret of choosing a over a'.
    """
    return solve_lambda_for_C(regret_column(loss_matrix, a, a_prime), C, SUP)


def _psi_of(losses: np.ndarray, t: float, ext: float) -> float:
    _, w, _ = _log_ratio(losses, t, ext)
    return float(np.dot(w, losses))


def regret_zero_crossing(regret) -> float:
    """Largest KL radius at which the worst-case expected regret stays negative.

    0 when the baseline regret is already >= 0, +inf when every regret entry is
    negative, and the KL ceiling when the largest regret is exactly 0.
    """
    r = _check_column(regret)
    if r.mean() >= 0:
        return 0.0
    top = float(r.max())
    if top < 0:
        return math.inf
    if top == 0:
        return _kl_ceiling(r, 1.0)
    lo, hi = 0.0, 1.0
    while _psi_of(r, hi, top) < 0:
        lo, hi = hi, 2.0 * hi
    for _ in range(_MAX_ITER):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi or hi - lo <= 1e-12 * hi:
            break
        psi = _psi_of(r, mid, top)
        if abs(psi) <= 1e-15:
            lo = hi = mid
            break
        if psi < 0:
            lo = mid
        else:
            hi = mid
    return _kl_of(r, 0.5 * (lo + hi), top)


def c_star(loss_matrix: NormalizedLossMatrix, a) -> tuple[float, Optional[int]]:
    """Local admissibility level of action ``a`` and the rival that binds it.

    C* is the largest radius up to which the worst-case regret of ``a``
    against every rival stays strictly negative. Returns (C*, rival index);
    the rival is None when no rival binds (C* infinite) or there is none.
    """
    ia = loss_matrix.index(a)
    if loss_matrix.k < 2:
        return math.inf, None
    best, binding = math.inf, None
    for b in range(loss_matrix.k):
        if b == ia:
            continue
        level = regret_zero_crossing(regret_column(loss_matrix, ia, b))
        if level < best:
            best, binding = level, b
    return best, binding


@dataclass(frozen=True)
class AdmissibilityReport:
    """C* per action, its binding rival, and worst-case regret curves.

    ``regret[a]`` maps each rival index to psi_sup of the regret on ``C``;
    only the actions listed in ``curve_actions`` carry curves.
    """

    action_labels: tuple[str, ...]
    c_star: np.ndarray
    binding_rival: list[Optional[int]]
    C: np.ndarray
    regret: dict[int, dict[int, np.ndarray]]


def admissibility_report(loss_matrix: NormalizedLossMatrix, C_grid, curve_actions=None) -> AdmissibilityReport:
    """C* for every action plus regret curves for ``curve_actions``
    (default: the Bayes action only, against each rival)."""
    C = _check_c_grid(C_grid)
    levels = np.empty(loss_matrix.k)
    binding = []
    for a in range(loss_matrix.k):
        levels[a], rival = c_star(loss_matrix, a)
        binding.append(rival)
    if curve_actions is None:
        curve_actions = [loss_matrix.bayes_action()]
    curves: dict[int, dict[int, np.ndarray]] = {}
    for a in curve_actions:
        ia = loss_matrix.index(a)
        curves[ia] = {}
        for b in range(loss_matrix.k):
            if b == ia:
                continue
            r = regret_column(loss_matrix, ia, b)
            values, hint = np.empty(C.size), 0.0
            for j, c in enumerate(C):
                tw = solve_lambda_for_C(r, float(c), SUP, lam_hint=hint)
                if math.isfinite(tw.lam):
                    hint = tw.lam
                values[j] = tw.psi
            curves[ia][b] = values
    return AdmissibilityReport(loss_matrix.action_labels, levels, binding, C, curves)


@dataclass(frozen=True)
class CalibrationReport:
    """Weight-degeneracy statistics of the least-favourable tilt along a C grid.

    ``top_mass`` is the total weight on the ceil(0.01 m) heaviest atoms;
    ``top_fraction`` records that count as a fraction of m (exactly 1% only
    when 100 divides m). ``c_max`` is the first grid radius putting 99% of
    the mass on those atoms.
    """

    C: np.ndarray
    weight_variance: np.ndarray
    top_mass: np.ndarray
    ess: np.ndarray
    saturated: np.ndarray
    n_top: int
    top_fraction: float
    c_max: Optional[float]


def calibration_report(losses, C_grid, mass: float = 0.99, fraction: float = 0.01) -> CalibrationReport:
    losses = _check_column(losses)
    C = _check_c_grid(C_grid)
    m = losses.size
    n_top = max(1, math.ceil(fraction * m))
    variance, top, ess = np.empty(C.size), np.empty(C.size), np.empty(C.size)
    saturated = np.zeros(C.size, dtype=bool)
    hint = 0.0
    for j, c in enumerate(C):
        tw = solve_lambda_for_C(losses, float(c), SUP, lam_hint=hint)
        if math.isfinite(tw.lam):
            hint = tw.lam
        w = tw.weights
        variance[j] = np.mean((w - 1.0 / m) ** 2)
        top[j] = np.sort(w)[m - n_top:].sum()
        ess[j] = tw.ess
        saturated[j] = tw.saturated
    reached = np.nonzero(top >= mass)[0]
    c_max = float(C[reached[0]]) if reached.size else None
    return CalibrationReport(C, variance, top, ess, saturated, n_top, n_top / m, c_max)
