"""Four-state semi-Markov disease model and screening-schedule losses.

Individuals are characterised by three times (years): tB, the age at which a
preclinical tumour appears; tC, its sojourn until clinical onset; tD, the
age at death. A schedule screens at t0, t0 + delta, t0 + 2 delta, ... and its
loss for an individual is r * (number of screens) + 1[clinical disease].

Only the Weibull death-time parameters (7.233, 82.651) and r = 1e-3 have a
published anchor. The lognormal, log-logistic and false-negative parameters
below are placeholders chosen to give a plausible lifetime incidence; pass
fitted values for any substantive use.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .sample_model import InputError, SampleBag

DEFAULT_AGES = (55, 57, 59, 61, 63, 65, 67, 69)
DEFAULT_FREQUENCIES_MONTHS = (9, 12, 15, 18, 24)
# detection draws are shared between screens falling in the same month of age
_LATTICE_PER_YEAR = 12


@dataclass(frozen=True)
class TransitionParams:
    weibull_shape: float = 7.233
    weibull_scale: float = 82.651
    # placeholders, not fitted values
    lognormal_mu: float = math.log(95.0)
    lognormal_sigma2: float = 0.1
    loglogistic_kappa: float = 3.0
    loglogistic_rho: float = 3.0
    b0: float = -1.5
    b1: float = -0.05
    t_bar: float = 50.0
    r: float = 1e-3

    def __post_init__(self):
        for name in ("weibull_shape", "weibull_scale", "lognormal_sigma2", "loglogistic_kappa", "loglogistic_rho", "r"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise InputError(f"{name} must be positive and finite, got {value}")
        for name in ("lognormal_mu", "b0", "b1", "t_bar"):
            if not math.isfinite(getattr(self, name)):
                raise InputError(f"{name} must be finite")

    def false_negative(self, age):
        """Probability that a screen at ``age`` misses a preclinical tumour."""
        return 1.0 / (1.0 + np.exp(-self.b0 - self.b1 * (np.asarray(age, dtype=float) - self.t_bar)))


@dataclass(frozen=True)
class ScheduleAction:
    t0: float
    delta: float

    def __post_init__(self):
        if not (self.t0 > 0 and self.delta > 0):
            raise InputError(f"schedule needs t0 > 0 and delta > 0, got ({self.t0}, {self.delta})")

    @property
    def label(self) -> str:
        return f"{self.t0:g}y_{self.delta:g}m"

    def ages(self, until: float) -> np.ndarray:
        """Screen ages strictly below ``until``."""
        step = self.delta / 12.0
        n = max(0, math.ceil((until - self.t0) / step))
        ages = self.t0 + step * np.arange(n)
        return ages[ages < until]


@dataclass(frozen=True)
class IndividualTimes:
    tB: float
    tC: float
    tD: float

    def __post_init__(self):
        for name in ("tB", "tC", "tD"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise InputError(f"{name} must be positive and finite, got {value}")


def default_schedules() -> list[ScheduleAction]:
    return [ScheduleAction(t0, d) for t0 in DEFAULT_AGES for d in DEFAULT_FREQUENCIES_MONTHS]


def _draw_times(params: TransitionParams, rng: np.random.Generator, n: int):
    tD = params.weibull_scale * rng.weibull(params.weibull_shape, n)
    tB = rng.lognormal(params.lognormal_mu, math.sqrt(params.lognormal_sigma2), n)
    u = rng.random(n)
    # log-logistic inverse CDF: scale rho (the median), shape kappa
    tC = params.loglogistic_rho * (u / (1.0 - u)) ** (1.0 / params.loglogistic_kappa)
    return tB, tC, tD


def sample_individual(params: TransitionParams, rng: np.random.Generator) -> IndividualTimes:
    """One (tB, tC, tD) triple; the three times are drawn independently."""
    tB, tC, tD = _draw_times(params, rng, 1)
    return IndividualTimes(float(tB[0]), float(tC[0]), float(tD[0]))


@dataclass
class ScreenOutcome:
    loss: float
    n_screens: int
    clinical: int


def loss_for_schedule(
    action: ScheduleAction,
    times: IndividualTimes,
    params: TransitionParams,
    rng: np.random.Generator | None = None,
    detect_u=None,
) -> ScreenOutcome:
    """Screens, clinical indicator and loss of one individual under one schedule.

    Screening runs while the individual is alive, the tumour is undetected and
    clinical onset has not happened. A screen at age s inside [tB, tB + tC)
    detects with probability 1 - beta(s). The clinical indicator is 1 when
    onset falls within life (tB + tC < tD) and either no screen caught the
    tumour or it appeared before t0.

    ``detect_u`` maps a screen age to a uniform draw (detection iff
    u >= beta(s)); otherwise uniforms come from ``rng`` in screen order.
    """
    if detect_u is None:
        if rng is None:
            raise InputError("loss_for_schedule needs either rng or detect_u")
        detect_u = lambda _age: rng.random()  # noqa: E731
    onset = times.tB + times.tC
    stop = min(times.tD, onset)
    n_screens, detected = 0, False
    for s in action.ages(stop):
        n_screens += 1
        if times.tB <= s < onset:
            u = detect_u(s)
            if u >= params.false_negative(s):
                detected = True
                break
    clinical = int(onset < times.tD and (not detected or times.tB < action.t0))
    return ScreenOutcome(params.r * n_screens + clinical, n_screens, clinical)


def _schedule_outcomes(action: ScheduleAction, tB, tC, tD, u_lattice, lattice_start, params):
    """Vectorised loss_for_schedule over individuals, with lattice detection draws."""
    onset = tB + tC
    stop = np.minimum(tD, onset)
    ages = action.ages(float(stop.max()))
    if ages.size == 0:
        n = np.zeros(tB.size, dtype=np.int64)
        detected = np.zeros(tB.size, dtype=bool)
    else:
        slot = np.rint(ages * _LATTICE_PER_YEAR).astype(np.int64) - lattice_start
        screened = ages[None, :] < stop[:, None]
        window = (ages[None, :] >= tB[:, None]) & (ages[None, :] < onset[:, None])
        hit = screened & window & (u_lattice[:, slot] >= params.false_negative(ages)[None, :])
        detected = hit.any(axis=1)
        first = np.argmax(hit, axis=1)
        n = np.where(detected, first + 1, screened.sum(axis=1))
    clinical = (onset < tD) & (~detected | (tB < action.t0))
    return n, clinical.astype(np.int64)


@dataclass(frozen=True)
class ScreeningDataset:
    bag: SampleBag
    losses: np.ndarray
    n_screens: np.ndarray
    clinical: np.ndarray
    schedules: list[ScheduleAction]
    params: TransitionParams
    seed: int

    @property
    def labels(self) -> list[str]:
        return [s.label for s in self.schedules]


def generate_dataset(
    params: TransitionParams,
    schedules: list[ScheduleAction] | None = None,
    m: int = 2000,
    seed: int = 0,
) -> ScreeningDataset:
    """Simulate m individuals and the loss of every schedule for each of them.

    Detection uniforms are drawn once per individual and month of age, so
    schedules screening at the same age see the same detection outcome
    (common random numbers).
    """
    if schedules is None:
        schedules = default_schedules()
    if not schedules:
        raise InputError("need at least one schedule")
    if m < 2:
        raise InputError(f"need at least 2 individuals, got {m}")
    ss = np.random.SeedSequence(seed)
    times_seq, detect_seq = ss.spawn(2)
    tB, tC, tD = _draw_times(params, np.random.default_rng(times_seq), m)

    lattice_start = int(math.floor(min(s.t0 for s in schedules) * _LATTICE_PER_YEAR))
    lattice_end = int(math.ceil(float(np.minimum(tD, tB + tC).max()) * _LATTICE_PER_YEAR)) + 1
    width = max(lattice_end - lattice_start, 1)
    u_lattice = np.random.default_rng(detect_seq).random((m, width))

    losses = np.empty((m, len(schedules)))
    n_screens = np.empty((m, len(schedules)), dtype=np.int64)
    clinical = np.empty((m, len(schedules)), dtype=np.int64)
    for j, action in enumerate(schedules):
        n, c = _schedule_outcomes(action, tB, tC, tD, u_lattice, lattice_start, params)
        n_screens[:, j] = n
        clinical[:, j] = c
        losses[:, j] = params.r * n + c
    bag = SampleBag(np.column_stack([tB, tC, tD]), columns=("tB", "tC", "tD"))
    return ScreeningDataset(bag, losses, n_screens, clinical, list(schedules), params, seed)


@dataclass
class ScreeningConfig:
    """Flat configuration accepted by the simulate-screening command."""

    weibull_shape: float = TransitionParams.weibull_shape
    weibull_scale: float = TransitionParams.weibull_scale
    lognormal_mu: float = TransitionParams.lognormal_mu
    lognormal_sigma2: float = TransitionParams.lognormal_sigma2
    loglogistic_kappa: float = TransitionParams.loglogistic_kappa
    loglogistic_rho: float = TransitionParams.loglogistic_rho
    b0: float = TransitionParams.b0
    b1: float = TransitionParams.b1
    t_bar: float = TransitionParams.t_bar
    r: float = TransitionParams.r
    ages: list[float] = field(default_factory=lambda: list(DEFAULT_AGES))
    frequencies_months: list[float] = field(default_factory=lambda: list(DEFAULT_FREQUENCIES_MONTHS))
    m: int = 2000
    seed: int | None = None

    @classmethod
    def from_mapping(cls, data: dict) -> "ScreeningConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise InputError(f"unknown screening config keys: {', '.join(unknown)}")
        return cls(**data)

    def params(self) -> TransitionParams:
        names = {f.name for f in fields(TransitionParams)}
        return TransitionParams(**{k: v for k, v in asdict(self).items() if k in names})

    def schedules(self) -> list[ScheduleAction]:
        if not self.ages or not self.frequencies_months:
            raise InputError("ages and frequencies_months must be non-empty")
        return [ScheduleAction(float(a), float(d)) for a in self.ages for d in self.frequencies_months]
