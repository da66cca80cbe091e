"""Random reweightings of the sample bag from a Dirichlet process centred on it.

With the atoms held fixed, a draw from DP(alpha, pi_I) is approximated by
Dirichlet(alpha/m, ..., alpha/m) weights on the m samples. Large alpha keeps
draws close to the uniform weights; small alpha lets them wander.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import betaln

from .sample_model import InputError, NormalizedLossMatrix

DEFAULT_ALPHA_POINTS = 25
DEFAULT_ALPHA_RANGE = (1.0, 1e6)
DEFAULT_DRAWS = 4000
DEFAULT_BAND_ATOMS = 1000
# fixed so that draws do not depend on how the work is chunked
_CHUNK = 512


@dataclass(frozen=True)
class DirichletDrawSet:
    alpha: float
    n_draws: int
    seed: int
    draws: np.ndarray
    redrawn: int = 0
    per_draw_psi: np.ndarray | None = None


def default_alpha_grid(n: int = DEFAULT_ALPHA_POINTS) -> np.ndarray:
    return np.geomspace(*DEFAULT_ALPHA_RANGE, n)


def _rng(seed: int, stream: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stream,))))


def _dirichlet_block(rng: np.random.Generator, shape: float, n: int, m: int) -> tuple[np.ndarray, int]:
    """n rows of Dirichlet(shape, ..., shape) weights and the number of rows redrawn."""
    if shape >= 1.0:
        g = rng.standard_gamma(shape, size=(n, m))
    else:
        # Gamma(a) = Gamma(a + 1) * U^(1/a); done in logs since U^(1/a) underflows for small a
        log_g = np.log(rng.standard_gamma(shape + 1.0, size=(n, m)))
        with np.errstate(divide="ignore"):
            log_g += np.log(rng.random((n, m))) / shape
        log_g -= log_g.max(axis=1, keepdims=True)
        g = np.exp(log_g)
    total = g.sum(axis=1)
    bad = ~(np.isfinite(total) & (total > 0))
    redrawn = int(bad.sum())
    if redrawn:
        fresh, more = _dirichlet_block(rng, shape, redrawn, m)
        g[bad] = fresh
        total[bad] = 1.0
        redrawn += more
    return g / total[:, None], redrawn


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not alpha > 0 or not math.isfinite(alpha):
        raise InputError(f"concentration alpha must be positive and finite, got {alpha}")
    return alpha


def _iter_blocks(rng, alpha: float, m: int, n_draws: int):
    done = 0
    while done < n_draws:
        n = min(_CHUNK, n_draws - done)
        yield _dirichlet_block(rng, alpha / m, n, m)
        done += n


def draw_dirichlet_weights(alpha: float, m: int, n_draws: int, seed: int) -> DirichletDrawSet:
    """n_draws weight vectors from Dirichlet(alpha/m, ..., alpha/m), reproducible from ``seed``."""
    alpha = _check_alpha(alpha)
    if m < 2:
        raise InputError(f"need at least 2 atoms, got {m}")
    if n_draws < 1:
        raise InputError("n_draws must be positive")
    blocks, redrawn = [], 0
    for block, r in _iter_blocks(_rng(seed), alpha, m, n_draws):
        blocks.append(block)
        redrawn += r
    return DirichletDrawSet(alpha, n_draws, seed, np.vstack(blocks), redrawn)


def reweighted_expected_losses(draws: DirichletDrawSet, loss_matrix: NormalizedLossMatrix) -> DirichletDrawSet:
    """Attach the expected loss of every action under every drawn reweighting."""
    if draws.draws.shape[1] != loss_matrix.m:
        raise InputError("draw width does not match the number of samples")
    return DirichletDrawSet(
        draws.alpha, draws.n_draws, draws.seed, draws.draws, draws.redrawn, draws.draws @ loss_matrix.values
    )


@dataclass(frozen=True)
class OptimalityProfile:
    """Probability that each action minimises expected loss under a DP draw.

    ``prob`` and ``stderr`` are indexed [alpha, action]. ``mean_psi`` and
    ``psi_stderr`` summarise the drawn expected losses themselves.
    """

    alpha: np.ndarray
    action_labels: tuple[str, ...]
    prob: np.ndarray
    stderr: np.ndarray
    mean_psi: np.ndarray
    psi_stderr: np.ndarray
    n_draws: int
    seed: int
    redrawn: int


def probability_of_optimality(
    loss_matrix: NormalizedLossMatrix,
    alpha_grid,
    n_draws: int = DEFAULT_DRAWS,
    seed: int = 0,
) -> OptimalityProfile:
    """Monte Carlo frequency with which each action is optimal, per alpha.

    Each alpha uses its own substream of ``seed``. Ties go to the smallest
    action index, so every draw names exactly one winner.
    """
    alpha = np.atleast_1d(np.asarray(alpha_grid, dtype=float))
    if alpha.size == 0:
        raise InputError("alpha grid is empty")
    if alpha.size > 1 and np.any(np.diff(alpha) <= 0):
        raise InputError("alpha grid must be strictly increasing")
    for a in alpha:
        _check_alpha(a)
    if n_draws < 1:
        raise InputError("n_draws must be positive")
    k, m = loss_matrix.k, loss_matrix.m
    counts = np.zeros((alpha.size, k), dtype=np.int64)
    mean_psi = np.empty((alpha.size, k))
    psi_se = np.empty((alpha.size, k))
    redrawn = 0
    for j, a in enumerate(alpha):
        rng = _rng(seed, j)
        total = np.zeros(k)
        total_sq = np.zeros(k)
        for block, r in _iter_blocks(rng, float(a), m, n_draws):
            redrawn += r
            psi = block @ loss_matrix.values
            counts[j] += np.bincount(np.argmin(psi, axis=1), minlength=k)
            total += psi.sum(axis=0)
            total_sq += (psi**2).sum(axis=0)
        mean_psi[j] = total / n_draws
        var = np.maximum(total_sq / n_draws - mean_psi[j] ** 2, 0.0)
        psi_se[j] = np.sqrt(var / n_draws)
    prob = counts / n_draws
    stderr = np.sqrt(prob * (1.0 - prob) / n_draws)
    return OptimalityProfile(alpha, loss_matrix.action_labels, prob, stderr, mean_psi, psi_se, n_draws, seed, redrawn)


def expected_l1_distance(alpha: float, x: float) -> float:
    """E|v - x| for v ~ Beta(x alpha, (1 - x) alpha).

    Closed form (2/alpha) [x^x (1-x)^(1-x)]^alpha / B(x alpha, (1-x) alpha),
    evaluated in logs.

    >>> expected_l1_distance(2.0, 0.5)
    0.25
    """
    alpha = _check_alpha(alpha)
    x = float(x)
    if not 0 < x < 1:
        raise InputError(f"x must lie strictly between 0 and 1, got {x}")
    log_val = alpha * (x * math.log(x) + (1 - x) * math.log1p(-x)) - betaln(x * alpha, (1 - x) * alpha)
    return (2.0 / alpha) * math.exp(log_val)


def l1_loss_distance(losses_sorted, weights) -> float:
    """L1 distance between the loss CDF under ``weights`` and under uniform weights.

    ``losses_sorted`` must be ascending; the CDFs step at each loss, so the
    distance is sum_i |v_i - i/m| (L_{i+1} - L_i) with v the cumulative weights.
    """
    z = np.asarray(losses_sorted, dtype=float)
    w = np.asarray(weights, dtype=float)
    if z.ndim != 1 or z.shape != w.shape:
        raise InputError("losses and weights must be vectors of the same length")
    if np.any(np.diff(z) < 0):
        raise InputError("losses must be sorted ascending")
    m = z.size
    v = np.cumsum(w)[:-1]
    x = np.arange(1, m) / m
    return float(np.dot(np.abs(v - x), np.diff(z)))


def expected_l1_loss_distance(losses_sorted, alpha: float) -> float:
    """Expected L1 distance of a Dirichlet-reweighted loss CDF from the reference one.

    For losses in [0, 1] this is at most 1/2, since E|v - x| <= 2x(1 - x).
    """
    z = np.asarray(losses_sorted, dtype=float)
    if np.any(np.diff(z) < 0):
        raise InputError("losses must be sorted ascending")
    m = z.size
    mad = np.array([expected_l1_distance(alpha, i / m) for i in range(1, m)])
    return float(np.dot(mad, np.diff(z)))


@dataclass(frozen=True)
class ConfidenceBand:
    alpha: float
    level: float
    z: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    median: np.ndarray


def confidence_bands(
    alpha: float,
    level: float,
    z_grid,
    n_draws: int = DEFAULT_DRAWS,
    seed: int = 0,
    n_atoms: int = DEFAULT_BAND_ATOMS,
) -> ConfidenceBand:
    """Pointwise bands for a DP-reweighted uniform loss distribution.

    The reference loss distribution has atoms at i/n_atoms, so its CDF is
    F(z) = z on the atoms. Each Dirichlet draw reweights the atoms and the
    band at z spans the central ``level`` mass of the reweighted F(z).
    """
    alpha = _check_alpha(alpha)
    if not 0 < level < 1:
        raise InputError(f"level must lie in (0, 1), got {level}")
    z = np.atleast_1d(np.asarray(z_grid, dtype=float))
    if z.size == 0 or np.any(z < 0) or np.any(z > 1):
        raise InputError("z grid must be non-empty and lie in [0, 1]")
    if n_atoms < 2:
        raise InputError("need at least 2 reference atoms")
    # number of atoms i/n_atoms at or below z; the small slack absorbs rounding of i/n
    idx = np.floor(z * n_atoms + 1e-9).astype(int)
    values = []
    for block, _ in _iter_blocks(_rng(seed), alpha, n_atoms, n_draws):
        cdf = np.concatenate((np.zeros((block.shape[0], 1)), np.cumsum(block, axis=1)), axis=1)
        values.append(cdf[:, idx])
    values = np.vstack(values)
    tail = (1.0 - level) / 2.0
    lower, median, upper = np.quantile(values, [tail, 0.5, 1.0 - tail], axis=0)
    return ConfidenceBand(alpha, level, z, lower, upper, median)
