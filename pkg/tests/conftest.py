from __future__ import annotations

import numpy as np
import pytest


def forward_kl(w):
    """KL(w || uniform) on m atoms, row-wise for a matrix of weight vectors."""
    w = np.asarray(w, dtype=float)
    m = w.shape[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(w > 0, w * np.log(m * w), 0.0)
    return terms.sum(axis=-1)


def backward_kl(w):
    """KL(uniform || w) on m atoms, row-wise; infinite if any weight is zero."""
    w = np.asarray(w, dtype=float)
    m = w.shape[-1]
    with np.errstate(divide="ignore"):
        return -np.mean(np.log(m * w), axis=-1)


def _simplex_points(center, radius, n):
    """Grid of simplex points whose first m-1 coordinates lie in a box around ``center``."""
    d = center.size
    axes = [np.linspace(c - radius, c + radius, n) for c in center]
    head = np.array(np.meshgrid(*axes, indexing="ij")).reshape(d, -1).T
    last = 1.0 - head.sum(axis=1)
    pts = np.column_stack([head, last])
    keep = np.all(pts >= 0, axis=1)
    return pts[keep]


def grid_envelope(losses, C, divergence=forward_kl, sign=1.0, zoom_steps=30):
    """Optimise sign * E_w[L] over {w : divergence(w) <= C} on a zooming simplex grid.

    The feasible set is convex and the objective linear, so refining the grid
    around the best feasible point converges to the global optimum.
    """
    losses = np.asarray(losses, dtype=float)
    m = losses.size
    n = {2: 401, 3: 101, 4: 41}[m]
    center = np.full(m - 1, 0.5)
    radius = 0.5
    best_val, best_w = -np.inf, None
    for _ in range(zoom_steps):
        pts = _simplex_points(center, radius, n)
        kl = divergence(pts)
        ok = kl <= C
        if ok.any():
            vals = sign * (pts[ok] @ losses)
            i = int(np.argmax(vals))
            if vals[i] > best_val:
                best_val, best_w = float(vals[i]), pts[ok][i]
        center = best_w[:-1]
        # shrink slowly: near-optimal points on a curved boundary can sit
        # several grid cells away from the optimum
        radius *= 0.6
    return sign * best_val, best_w


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def write_toy_inputs(tmp_path, m=30, k=3, n_data=4, seed=0):
    """Samples file with log_density/log_prior/loglik columns and a matching loss file."""
    r = np.random.default_rng(seed)
    theta = r.normal(size=m)
    data = r.normal(0.3, 1.0, size=n_data)
    loglik = -0.5 * (data[None, :] - theta[:, None]) ** 2
    log_prior = -0.5 * theta**2
    log_density = log_prior + loglik.sum(axis=1)
    samples = tmp_path / "samples.csv"
    header = ["theta", "log_density", "log_prior"] + [f"loglik_{j + 1}" for j in range(n_data)]
    rows = np.column_stack([theta, log_density, log_prior, loglik])
    samples.write_text(
        ",".join(header) + "\n" + "\n".join(",".join(format(v, ".17g") for v in row) for row in rows) + "\n"
    )
    actions = np.linspace(-1, 1, k)
    losses = (theta[:, None] - actions[None, :]) ** 2
    loss_path = tmp_path / "losses.csv"
    loss_path.write_text(
        ",".join(f"act{j}" for j in range(k)) + "\n"
        + "\n".join(",".join(format(v, ".17g") for v in row) for row in losses)
        + "\n"
    )
    return samples, loss_path


@pytest.fixture
def toy_files(tmp_path):
    return write_toy_inputs(tmp_path)


__all__ = ["forward_kl", "backward_kl", "grid_envelope", "write_toy_inputs"]
