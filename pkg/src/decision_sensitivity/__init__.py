"""Decision sensitivity to model misspecification from Monte Carlo samples and a loss matrix."""

from __future__ import annotations

__version__ = "0.1.0"

from .sample_model import (  # noqa: E402
    InputError,
    NormalizedLossMatrix,
    SampleBag,
    effective_sample_size,
    expected_loss,
    normalize_losses,
    unscaled_losses,
    uniform_weights,
)

__all__ = [
    "InputError",
    "NormalizedLossMatrix",
    "SampleBag",
    "effective_sample_size",
    "expected_loss",
    "normalize_losses",
    "unscaled_losses",
    "uniform_weights",
]
