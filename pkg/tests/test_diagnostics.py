from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from decision_sensitivity.diagnostics import (
    all_curves,
    cel_curve,
    cvar_crossing,
    cvar_curve,
    density_loss_scatter,
    loo_sensitivity,
    trimmed_curve,
    trimmed_mean,
    var_curve,
)
from decision_sensitivity.sample_model import InputError, SampleBag, normalize_losses, unscaled_losses

unit = st.floats(0, 1, allow_nan=False)
loss_vectors = arrays(float, st.integers(2, 60), elements=unit)


def test_var_two_atoms():
    # points (1/2, 1) and (1, 0) interpolate to 1 at q = 1/2 and 0.5 at q = 3/4
    c = var_curve([0.0, 1.0], [0.0, 0.5, 0.75, 1.0])
    assert c.value.tolist() == [1.0, 1.0, 0.5, 0.0]


def test_cvar_values():
    c = cvar_curve([0.0, 1.0, 0.5, 0.5], [0.25, 0.5, 1.0])
    assert c.value.tolist() == [1.0, 0.75, 0.5]


def test_trimmed_mean_drops_tails():
    assert trimmed_mean([0.0, 1.0, 2.0, 100.0], 0.5) == 1.5
    assert trimmed_mean([0.0, 1.0, 2.0, 100.0], 0.0) == 25.75
    with pytest.raises(InputError):
        trimmed_mean([0.0, 1.0], 1.0)
    assert trimmed_curve([0.0, 1.0], [0.0, 0.5, 1.0]).q.tolist() == [0.0, 0.5]


def test_cel_two_atoms():
    c = cel_curve([0.0, 1.0], [0.0, 0.25, 0.5, 1.0])
    assert c.value.tolist() == [0.0, 0.25, 0.5, 0.5]


@settings(max_examples=200, deadline=None)
@given(loss_vectors)
def test_curve_endpoints_and_monotonicity(losses):
    q = np.linspace(0, 1, 41)
    mean = float(np.mean(losses))
    var = var_curve(losses, q).value
    cvar = cvar_curve(losses, q).value
    cel = cel_curve(losses, q).value
    assert var[0] == losses.max()
    assert var[-1] == losses.min()
    assert np.all(np.diff(var) <= 0)
    assert cvar[0] == losses.max()
    assert cvar[-1] == pytest.approx(mean, abs=1e-15)
    assert np.all(np.diff(cvar) <= 1e-15)
    assert cel[0] == 0.0
    assert cel[-1] == pytest.approx(mean, abs=1e-15)
    assert np.all(np.diff(cel) >= -1e-15)
    # CVaR dominates VaR pointwise
    assert np.all(cvar >= var - 1e-12)


@settings(max_examples=100, deadline=None)
@given(loss_vectors)
def test_cel_is_concave(losses):
    q = np.arange(losses.size + 1) / losses.size
    cel = cel_curve(losses, q).value
    assert np.all(np.diff(cel, 2) <= 1e-12)


def test_all_curves_inventory():
    lm = normalize_losses(np.random.default_rng(0).random((10, 2)))
    curves = all_curves(lm, np.linspace(0, 1, 5))
    assert len(curves) == 8
    assert {(c.action_label, c.kind) for c in curves} == {
        (a, k) for a in ("a1", "a2") for k in ("var", "cvar", "trimmed", "cel")
    }


def test_cvar_crossing_found():
    lm = unscaled_losses(np.array([[0.0, 0.45], [1.0, 0.6]]), ["A", "B"])
    assert lm.bayes_action() == 0
    q = np.linspace(0, 1, 101)
    crossing = cvar_crossing(lm, q)
    # on [1/2, 1] CVaR_A = 1.5 - q and CVaR_B = 0.675 - 0.15 q, equal at q = 0.825 / 0.85
    assert crossing == pytest.approx(0.97)
    assert cvar_crossing(lm, [0.5, 0.825 / 0.85 + 1e-9, 1.0]) == 0.5


def test_cvar_crossing_absent():
    lm = unscaled_losses(np.array([[0.0, 0.3], [0.9, 0.5]]), ["A", "B"])
    assert cvar_crossing(lm, np.linspace(0, 1, 101)) is None
    single = normalize_losses(np.array([[0.0], [1.0]]))
    assert cvar_crossing(single, [0.5]) is None


def test_loo_matches_direct_reweighting():
    r = np.random.default_rng(1)
    m, n = 50, 3
    ll = r.normal(size=(m, n))
    prior = r.normal(size=m)
    losses = normalize_losses(r.random((m, 2)))
    bag = SampleBag(r.normal(size=(m, 1)), log_lik_terms=ll, log_prior=prior)
    rep = loo_sensitivity(bag, losses)
    for j in range(n):
        w = np.exp(-ll[:, j])
        w /= w.sum()
        assert np.allclose(rep.psi_loo[:, j], w @ losses.values, rtol=1e-12)
        assert rep.ess_loo[j] == pytest.approx(1 / np.sum(w**2))
    w = np.exp(-prior)
    w /= w.sum()
    assert np.allclose(rep.psi_no_prior, w @ losses.values, rtol=1e-12)


def test_loo_huge_log_weights_stay_finite():
    ll = np.array([[-5000.0], [0.0], [10.0]])
    bag = SampleBag(np.zeros((3, 1)), log_lik_terms=ll)
    rep = loo_sensitivity(bag, normalize_losses([[0.0], [0.5], [1.0]]), prior=False)
    assert np.all(np.isfinite(rep.psi_loo))
    assert rep.psi_loo[0, 0] == pytest.approx(0.0)


def test_loo_missing_columns_named():
    bag = SampleBag(np.zeros((3, 1)))
    lm = normalize_losses([[0.0], [0.5], [1.0]])
    with pytest.raises(InputError, match="loglik_"):
        loo_sensitivity(bag, lm, prior=False)
    with pytest.raises(InputError, match="log_prior"):
        loo_sensitivity(bag, lm, data=False)


def test_scatter_pairs():
    bag = SampleBag(np.zeros((2, 1)), log_density=np.array([-1.0, -2.0]))
    assert density_loss_scatter(bag, [0.3, 0.7]) == [(-1.0, 0.3), (-2.0, 0.7)]
    with pytest.raises(InputError):
        density_loss_scatter(SampleBag(np.zeros((2, 1))), [0.0, 1.0])
