"""Acceptance checks, one test per criterion, at the stated tolerances."""

from __future__ import annotations

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import backward_kl, forward_kl, grid_envelope, write_toy_inputs
from decision_sensitivity.cli import main
from decision_sensitivity.diagnostics import cel_curve, cvar_curve, trimmed_mean, var_curve
from decision_sensitivity.dp_neighborhood import (
    confidence_bands,
    expected_l1_distance,
    probability_of_optimality,
)
from decision_sensitivity.kl_tilt import INF, SUP, local_sensitivity, solve_lambda_for_C, tilt_weights, tilted_variance
from decision_sensitivity.reverse_kl import solve_reverse
from decision_sensitivity.sample_model import expected_loss, normalize_losses, uniform_weights
from decision_sensitivity.screening_sim import TransitionParams, generate_dataset


def test_ac01_two_atom_tilt_oracle():
    losses = np.array([0.0, 1.0])
    lam = math.log(3)
    tw = tilt_weights(losses, lam, SUP)
    assert np.allclose(tw.weights, [0.25, 0.75], rtol=0, atol=1e-12)
    assert tw.psi == pytest.approx(0.75, abs=1e-12)
    assert tw.kl == pytest.approx(0.130812, abs=5e-7)
    assert abs(tw.kl - (lam * tw.psi - tw.log_z)) <= 1e-9
    timings = []
    for _ in range(20):
        t0 = time.perf_counter()
        tilt_weights(losses, lam, SUP)
        timings.append(time.perf_counter() - t0)
    assert min(timings) < 1e-3


def test_ac02_lambda_c_inversion():
    rng = np.random.default_rng(2)
    cases = []
    for _ in range(100):
        m = int(rng.integers(3, 1001))
        losses = rng.random(m)
        if rng.random() < 0.3:
            losses[rng.choice(m, size=int(rng.integers(2, 4)), replace=False)] = 1.0
        n_top = np.count_nonzero(losses == losses.max())
        ceiling = math.log(m / n_top)
        C = float(np.exp(rng.uniform(math.log(1e-6), math.log(0.95 * ceiling))))
        cases.append((losses, C, ceiling))
    t0 = time.perf_counter()
    results = [solve_lambda_for_C(losses, C, SUP) for losses, C, _ in cases]
    elapsed = time.perf_counter() - t0
    for (losses, C, ceiling), tw in zip(cases, results):
        assert not tw.saturated
        assert abs(forward_kl(tw.weights) - C) <= 1e-8 * C
    assert elapsed < 1.0
    # saturation above log(m / #argmax), none below it
    for losses, _, ceiling in cases[:20]:
        assert solve_lambda_for_C(losses, ceiling * 1.01 + 1e-9, SUP).saturated
        assert not solve_lambda_for_C(losses, ceiling * 0.99, SUP).saturated


def _psi(losses, lam):
    if lam >= 0:
        return tilt_weights(losses, lam, SUP).psi
    return tilt_weights(losses, -lam, INF).psi


def test_ac03_derivative_is_tilted_variance():
    rng = np.random.default_rng(3)
    h = 1e-4
    for _ in range(20):
        losses = rng.random(int(rng.integers(2, 500)))
        for lam in (0.0, 0.5, 2.0):
            fd = (_psi(losses, lam + h) - _psi(losses, lam - h)) / (2 * h)
            var = tilted_variance(tilt_weights(losses, lam, SUP), losses)
            assert fd == pytest.approx(var, rel=1e-3)
        assert local_sensitivity(losses) == pytest.approx(np.var(losses), rel=1e-12)
        assert tilted_variance(tilt_weights(losses, 0.0), losses) == pytest.approx(local_sensitivity(losses), rel=1e-12)


def test_ac04_brute_force_envelope_oracle():
    rng = np.random.default_rng(4)
    for m in (2, 3, 4):
        for _ in range(3):
            losses = rng.random(m)
            for C in (0.01, 0.05, 0.2):
                for direction, sign in ((SUP, 1.0), (INF, -1.0)):
                    best, _ = grid_envelope(losses, C, forward_kl, sign)
                    got = solve_lambda_for_C(losses, C, direction).psi
                    assert abs(got - best) <= 1e-4, (m, C, direction, got, best)


def test_ac05_jensen_bound_and_monotonicity():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        m = int(rng.integers(2, 200))
        losses = rng.random(m)
        C = np.geomspace(1e-4, math.log(m), 8)
        base = float(losses.mean())
        for direction in (SUP, INF):
            psi, hint = [], 0.0
            for c in C:
                tw = solve_lambda_for_C(losses, float(c), direction, lam_hint=hint)
                if math.isfinite(tw.lam):
                    hint = tw.lam
                    gain = tw.psi - base if direction == SUP else base - tw.psi
                    assert tw.kl <= tw.lam * gain + 1e-9
                psi.append(tw.psi)
            steps = np.diff(psi)
            if direction == SUP:
                assert np.all(steps >= -1e-12)
            else:
                assert np.all(steps <= 1e-12)


def test_ac06_reverse_kl():
    rng = np.random.default_rng(6)
    failures = {"support": 0, "radius": 0, "oracle": 0, "forward_ge_reverse": 0}
    n_solutions = 0
    for m in (2, 3, 4, 10, 100):
        for _ in range(4):
            losses = rng.random(m)
            for C in (0.01, 0.05, 0.2, 1.0):
                for direction, sign in ((SUP, 1.0), (INF, -1.0)):
                    sol = solve_reverse(losses, C, direction)
                    n_solutions += 1
                    w = sol.weights
                    if not np.all(w > 0):
                        failures["support"] += 1
                    if abs(float(backward_kl(w)) - C) > 1e-8 * C:
                        failures["radius"] += 1
                    if m <= 4 and C <= 0.2:
                        best, _ = grid_envelope(losses, C, backward_kl, sign)
                        if abs(sol.psi - best) > 1e-4:
                            failures["oracle"] += 1
                    if float(forward_kl(w)) < float(backward_kl(w)):
                        failures["forward_ge_reverse"] += 1
    assert failures == {k: 0 for k in failures}, f"failures over {n_solutions} solutions: {failures}"


def test_ac07_dp_analytic_formula():
    t0 = time.perf_counter()
    assert expected_l1_distance(2.0, 0.5) == 0.25
    rng = np.random.default_rng(7)
    n = 100_000
    for alpha in (0.5, 5.0, 50.0):
        for x in (0.1, 0.5, 0.8):
            v = rng.beta(x * alpha, (1 - x) * alpha, size=n)
            dev = np.abs(v - x)
            se = dev.std(ddof=1) / math.sqrt(n)
            assert abs(dev.mean() - expected_l1_distance(alpha, x)) <= 3 * se, (alpha, x)
    assert time.perf_counter() - t0 < 5.0


def test_ac08_dp_mean_preservation_and_concentration():
    rng = np.random.default_rng(8)
    raw = rng.random((200, 3))
    raw[:, 0] -= 0.15  # a clear Bayes action
    lm = normalize_losses(raw)
    best = lm.bayes_action()
    base = lm.expected_losses()
    assert np.sort(base)[1] - np.sort(base)[0] > 0.05
    alphas = [1.0, 10.0, 100.0, 1e4, 1e6]
    prof = probability_of_optimality(lm, alphas, n_draws=4000, seed=8)
    for i in range(len(alphas)):
        assert np.all(np.abs(prof.mean_psi[i] - base) <= 4 * prof.psi_stderr[i] + 1e-15)
    assert prof.prob[-1, best] >= 0.95
    widths = []
    for alpha in (1.0, 10.0, 100.0, 1000.0, 10000.0):
        band = confidence_bands(alpha, 0.95, [0.5], n_draws=4000, seed=8)
        widths.append(float(band.upper[0] - band.lower[0]))
    assert all(a > b for a, b in zip(widths, widths[1:])), widths


def test_ac09_diagnostics_structure():
    rng = np.random.default_rng(9)
    for _ in range(100):
        m = int(rng.integers(2, 400))
        losses = rng.random(m)
        mean = expected_loss(uniform_weights(m), losses)
        assert var_curve(losses, [0.0]).value[0] == losses.max()
        assert cvar_curve(losses, [1.0]).value[0] == mean
        q = np.arange(m + 1) / m
        cel = cel_curve(losses, q).value
        assert cel[-1] == mean
        slope = (cel[1] - cel[0]) / q[1]
        assert slope == pytest.approx(losses.max(), rel=1e-12)
        assert trimmed_mean(losses, 0.0) == mean


def test_ac10_screening_demo(tmp_path):
    out = tmp_path / "demo"
    t0 = time.perf_counter()
    assert main(["simulate-screening", "--demo", "--out", str(out), "--seed", "1"]) == 0
    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0, elapsed
    for sub in ("", "diagnose", "kl", "dp"):
        assert (out / sub / "manifest.json").exists()

    params = TransitionParams()
    assert (params.weibull_shape, params.weibull_scale, params.r) == (7.233, 82.651, 1e-3)
    ds = generate_dataset(params, m=2000, seed=1)
    assert ds.losses.shape == (2000, 40)
    csv_losses = np.loadtxt(out / "losses.csv", delimiter=",", skiprows=1)
    assert np.array_equal(csv_losses, ds.losses)
    # bimodal: every loss is k*r or 1 + k*r
    clinical = ds.losses >= 1.0
    k = (ds.losses - clinical) / params.r
    assert np.all(np.abs(k - np.rint(k)) < 1e-6)
    assert np.all(np.rint(k) >= 0)

    best = int(np.argmin(ds.losses.mean(axis=0)))
    column = ds.losses[:, best]
    freq = float(ds.clinical[:, best].mean())
    mean = float(column.mean())
    cel = cel_curve(column, [0.1, 1.0]).value
    share = cel[0] / cel[1]
    assert freq * 1.0 > mean / 2, (freq, mean)
    assert share > 0.5, share


def _comparable_manifest(path: Path) -> dict:
    manifest = json.loads(path.read_text())
    manifest.pop("duration_seconds")
    manifest["config"].pop("out")
    return manifest


def test_ac11_determinism(tmp_path):
    samples, losses = write_toy_inputs(tmp_path, m=40, k=3, n_data=3, seed=11)
    common = ["--seed", "11"]
    commands = {
        "diagnose": ["diagnose", "--samples", samples, "--losses", losses, "--loo", "--scatter"],
        "kl": ["kl", "--losses", losses, "--c-grid", "0.001:1:6:log"],
        "reverse-kl": ["reverse-kl", "--losses", losses, "--c-grid", "0.001:1:6:log"],
        "dp": ["dp", "--losses", losses, "--alpha-grid", "1:1e4:3:log", "--draws", "700", "--band-atoms", "50"],
        "loo": ["loo", "--samples", samples, "--losses", losses],
        "calibrate": ["calibrate", "--losses", losses, "--c-grid", "0.001:1:6:log"],
        "simulate-screening": ["simulate-screening", "--m", "300"],
    }
    for name, args in commands.items():
        dirs = []
        for rep in ("a", "b"):
            d = tmp_path / f"{name}_{rep}"
            assert main([str(a) for a in args] + common + ["--out", str(d)]) == 0
            dirs.append(d)
        files_a = sorted(p.name for p in dirs[0].iterdir())
        files_b = sorted(p.name for p in dirs[1].iterdir())
        assert files_a == files_b
        for fname in files_a:
            if fname == "manifest.json":
                assert _comparable_manifest(dirs[0] / fname) == _comparable_manifest(dirs[1] / fname)
            else:
                assert (dirs[0] / fname).read_bytes() == (dirs[1] / fname).read_bytes(), (name, fname)
