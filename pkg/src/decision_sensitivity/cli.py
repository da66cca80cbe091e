"""Command-line entry point: ``decision-sensitivity <subcommand> ...``.

Every subcommand reads CSV inputs, runs one analysis, and writes tidy CSVs,
a ``summary.json`` and a ``manifest.json`` into ``--out``. Input errors exit
with status 2 and a single ``INPUT_ERROR: ...`` line on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import secrets
import sys
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import __version__
from .diagnostics import all_curves, cvar_crossing, default_q_grid, density_loss_scatter, loo_sensitivity
from .dp_neighborhood import (
    DEFAULT_BAND_ATOMS,
    DEFAULT_DRAWS,
    confidence_bands,
    default_alpha_grid,
    expected_l1_distance,
    probability_of_optimality,
)
from .io import ensure_dir, parse_grid, read_losses, read_samples, sha256_file, write_csv, write_json
from .kl_tilt import INF, SUP, admissibility_report, calibration_report, default_c_grid, envelope_curve
from .reverse_kl import reverse_envelope
from .sample_model import InputError, NormalizedLossMatrix, normalize_losses, unscaled_losses
from .screening_sim import ScreeningConfig, generate_dataset

SUBCOMMANDS = ("diagnose", "kl", "reverse-kl", "dp", "loo", "calibrate", "simulate-screening")
DEFAULT_BAND_ALPHAS = "1,10,100,1000,10000"
DEFAULT_BAND_Z = "0:1:21:linear"
DEFAULT_L1_X = "0.05:0.95:19:linear"


@dataclass
class RunConfig:
    subcommand: str
    out: str
    samples: Optional[str] = None
    losses: Optional[str] = None
    q_grid: Optional[str] = None
    c_grid: Optional[str] = None
    alpha_grid: Optional[str] = None
    n_draws: int = DEFAULT_DRAWS
    seed: int = 0
    normalize: bool = True
    options: dict = field(default_factory=dict)


class Run:
    """Collects outputs of one subcommand and writes them, plus the manifest, at the end."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.started = time.perf_counter()
        self.warnings: list[str] = []
        self.inputs: dict[str, str] = {}
        self.tables: list[tuple[str, list, list]] = []
        self.summary: dict = {}

    def record_input(self, path: str) -> None:
        self.inputs[path] = sha256_file(path)

    def warn(self, message: str) -> None:
        self.warnings.append(message)

    def table(self, name: str, header, rows) -> None:
        self.tables.append((name, list(header), list(rows)))

    def write(self) -> list[str]:
        out = ensure_dir(self.config.out)
        written = []
        for name, header, rows in self.tables:
            write_csv(os.path.join(out, name), header, rows)
            written.append(name)
        write_json(os.path.join(out, "summary.json"), self.summary)
        written.append("summary.json")
        manifest = {
            "tool": "decision-sensitivity",
            "version": __version__,
            "config": asdict(self.config),
            "inputs": self.inputs,
            "outputs": written,
            "warnings": self.warnings,
            "duration_seconds": time.perf_counter() - self.started,
        }
        write_json(os.path.join(out, "manifest.json"), manifest)
        for message in self.warnings:
            print(f"warning: {message}", file=sys.stderr)
        return written


# ---------------------------------------------------------------- helpers


def _load(run: Run, need_samples: bool = False):
    cfg = run.config
    if not cfg.losses:
        raise InputError("--losses is required")
    run.record_input(cfg.losses)
    labels, raw = read_losses(cfg.losses)
    bag = None
    if cfg.samples:
        run.record_input(cfg.samples)
        bag = read_samples(cfg.samples)
        if bag.m != raw.shape[0]:
            raise InputError(f"samples file has {bag.m} rows but losses file has {raw.shape[0]}")
    elif need_samples:
        raise InputError("--samples is required for this analysis")
    if raw.shape[0] < 2:
        raise InputError("need at least 2 sample rows")
    losses = normalize_losses(raw, labels) if cfg.normalize else unscaled_losses(raw, labels)
    if losses.degenerate:
        run.warn("degenerate loss matrix: every loss is equal, normalised losses set to 0.5")
    return bag, losses


def _grid(spec: Optional[str], default: np.ndarray, name: str) -> np.ndarray:
    grid = parse_grid(spec, name)
    return default if grid is None else grid


def _baseline_summary(losses: NormalizedLossMatrix) -> dict:
    psi = losses.expected_losses()
    return {
        "action_labels": list(losses.action_labels),
        "expected_loss": dict(zip(losses.action_labels, psi)),
        "expected_loss_raw": dict(zip(losses.action_labels, losses.to_raw(psi))),
        "bayes_action": losses.action_labels[losses.bayes_action()],
        "loss_min": losses.loss_min,
        "loss_max": losses.loss_max,
        "normalized": losses.normalized,
        "degenerate": losses.degenerate,
        "m": losses.m,
    }


def _ess_warning(run: Run, ess, m: int, what: str) -> None:
    ess = np.asarray(ess, dtype=float)
    low = int(np.sum(ess < m / 100.0))
    if low:
        run.warn(f"low effective sample size: {low} {what} below m/100 = {m / 100.0:g} (min {ess.min():.4g})")


def _loo_tables(run: Run, bag, losses: NormalizedLossMatrix, require_data: bool) -> None:
    data = bag.log_lik_terms is not None
    prior = bag.log_prior is not None
    if require_data and not data:
        raise InputError("leave-one-out needs log-likelihood columns loglik_* in the samples file")
    if not (data or prior):
        raise InputError("leave-one-out needs loglik_* or log_prior columns in the samples file")
    report = loo_sensitivity(bag, losses, data=data, prior=prior)
    rows = []
    for a, label in enumerate(losses.action_labels):
        if data:
            for j in range(report.psi_loo.shape[1]):
                rows.append((label, j + 1, report.psi_loo[a, j], report.baseline[a], report.ess_loo[j]))
        if prior:
            rows.append((label, "prior", report.psi_no_prior[a], report.baseline[a], report.ess_no_prior))
    run.table("loo.csv", ("action", "datum", "psi_loo", "psi_base", "ess"), rows)
    if data:
        _ess_warning(run, report.ess_loo, losses.m, "leave-one-out weightings")
    if prior:
        _ess_warning(run, [report.ess_no_prior], losses.m, "leave-prior-out weightings")


# ------------------------------------------------------------ subcommands


def cmd_diagnose(run: Run) -> None:
    opts = run.config.options
    bag, losses = _load(run, need_samples=opts.get("loo") or opts.get("scatter"))
    q = _grid(run.config.q_grid, default_q_grid(), "--q-grid")
    rows = []
    for curve in all_curves(losses, q):
        rows.extend((curve.action_label, curve.kind, qi, v) for qi, v in zip(curve.q, curve.value))
    run.table("curves.csv", ("action", "kind", "q", "value"), rows)
    if opts.get("loo"):
        _loo_tables(run, bag, losses, require_data=True)
    if opts.get("scatter"):
        rows = []
        for a, label in enumerate(losses.action_labels):
            pairs = density_loss_scatter(bag, losses.values[:, a])
            rows.extend((label, i + 1, d, z) for i, (d, z) in enumerate(pairs))
        run.table("scatter.csv", ("action", "sample", "log_density", "loss"), rows)
    run.summary = _baseline_summary(losses)
    run.summary["cvar_crossing_q"] = cvar_crossing(losses, q)


def cmd_loo(run: Run) -> None:
    bag, losses = _load(run, need_samples=True)
    _loo_tables(run, bag, losses, require_data=False)
    run.summary = _baseline_summary(losses)


def _calibration_rows(losses: NormalizedLossMatrix, C: np.ndarray, actions):
    rows, c_max = [], {}
    for a in actions:
        label = losses.action_labels[a]
        rep = calibration_report(losses.values[:, a], C)
        c_max[label] = rep.c_max
        for j, c in enumerate(rep.C):
            rows.append((label, c, rep.weight_variance[j], rep.top_mass[j], rep.ess[j], rep.saturated[j]))
    return rows, c_max


_CALIBRATION_HEADER = ("action", "C", "weight_variance", "top1pct_mass", "ess", "saturated")


def cmd_kl(run: Run) -> None:
    _, losses = _load(run)
    C = _grid(run.config.c_grid, default_c_grid(losses.m), "--c-grid")
    env = envelope_curve(losses, C)
    rows = []
    for a, label in enumerate(losses.action_labels):
        for j, c in enumerate(C):
            rows.append((
                label, c, env.lambda_sup[a, j], env.psi_sup[a, j], env.psi_inf[a, j], env.ess_sup[a, j],
                bool(env.saturated_sup[a, j] or env.saturated_inf[a, j]),
                env.lambda_inf[a, j], env.ess_inf[a, j],
            ))
    run.table(
        "envelope.csv",
        ("action", "C", "lambda", "psi_sup", "psi_inf", "ess", "saturated", "lambda_inf", "ess_inf"),
        rows,
    )

    adm = admissibility_report(losses, C)
    rows = []
    for a, rivals in adm.regret.items():
        for b, values in rivals.items():
            rows.extend(
                (losses.action_labels[a], losses.action_labels[b], c, v) for c, v in zip(C, values)
            )
    run.table("regret.csv", ("action", "rival", "C", "psi_regret"), rows)
    run.table(
        "admissibility.csv",
        ("action", "c_star", "binding_rival"),
        [
            (label, adm.c_star[a], None if adm.binding_rival[a] is None else losses.action_labels[adm.binding_rival[a]])
            for a, label in enumerate(losses.action_labels)
        ],
    )
    rows, c_max = _calibration_rows(losses, C, range(losses.k))
    run.table("calibration.csv", _CALIBRATION_HEADER, rows)

    n_sat = int(env.saturated_sup.sum() + env.saturated_inf.sum())
    if n_sat:
        run.warn(
            f"saturation: {n_sat} tilts requested a radius above the finite-atom ceiling log(m/#extreme) "
            "and were returned as point masses"
        )
    _ess_warning(run, np.concatenate((env.ess_sup.ravel(), env.ess_inf.ravel())), losses.m, "tilted weightings")
    run.summary = _baseline_summary(losses)
    run.summary.update({
        "envelope_crossing_C": env.crossing,
        "c_star": dict(zip(losses.action_labels, adm.c_star)),
        "c_max": c_max,
    })


def cmd_calibrate(run: Run) -> None:
    _, losses = _load(run)
    C = _grid(run.config.c_grid, default_c_grid(losses.m), "--c-grid")
    action = run.config.options.get("action")
    actions = range(losses.k) if action is None else [losses.index(action)]
    rows, c_max = _calibration_rows(losses, C, actions)
    run.table("calibration.csv", _CALIBRATION_HEADER, rows)
    n_sat = sum(1 for r in rows if r[-1])
    if n_sat:
        run.warn(f"saturation: {n_sat} calibration tilts hit the finite-atom KL ceiling")
    _ess_warning(run, [r[4] for r in rows], losses.m, "tilted weightings")
    run.summary = _baseline_summary(losses)
    run.summary["c_max"] = c_max


def cmd_reverse_kl(run: Run) -> None:
    _, losses = _load(run)
    C = _grid(run.config.c_grid, default_c_grid(losses.m), "--c-grid")
    header = ("action", "C", "nu", "psi", "kl_rev", "min_weight")
    for direction, name in ((SUP, "reverse_kl.csv"), (INF, "reverse_kl_inf.csv")):
        env = reverse_envelope(losses, C, direction)
        rows = []
        for a, label in enumerate(losses.action_labels):
            rows.extend(
                (label, c, env.nu[a, j], env.psi[a, j], env.kl_rev[a, j], env.min_weight[a, j])
                for j, c in enumerate(C)
            )
        run.table(name, header, rows)
    run.summary = _baseline_summary(losses)


def cmd_dp(run: Run) -> None:
    _, losses = _load(run)
    cfg = run.config
    alpha = _grid(cfg.alpha_grid, default_alpha_grid(), "--alpha-grid")
    if np.any(alpha <= 0):
        raise InputError("--alpha-grid values must be positive")
    if cfg.n_draws < 1:
        raise InputError("--draws must be positive")
    profile = probability_of_optimality(losses, alpha, cfg.n_draws, cfg.seed)
    rows = []
    for i, a in enumerate(alpha):
        rows.extend(
            (a, label, profile.prob[i, j], profile.stderr[i, j]) for j, label in enumerate(losses.action_labels)
        )
    run.table("profile.csv", ("alpha", "action", "prob_optimal", "stderr"), rows)

    opts = cfg.options
    band_alpha = parse_grid(opts.get("band_alpha") or DEFAULT_BAND_ALPHAS, "--band-alpha")
    z = parse_grid(opts.get("band_z") or DEFAULT_BAND_Z, "--band-z")
    level = float(opts.get("level", 0.95))
    n_atoms = int(opts.get("band_atoms", DEFAULT_BAND_ATOMS))
    rows = []
    for a in band_alpha:
        band = confidence_bands(float(a), level, z, cfg.n_draws, cfg.seed, n_atoms)
        rows.extend((a, zi, lo, hi) for zi, lo, hi in zip(band.z, band.lower, band.upper))
    run.table("bands.csv", ("alpha", "z", "lower", "upper"), rows)

    x = parse_grid(DEFAULT_L1_X, "x")
    run.table(
        "expected_l1.csv",
        ("alpha", "x", "expected_l1"),
        [(a, xi, expected_l1_distance(float(a), float(xi))) for a in alpha for xi in x],
    )
    if profile.redrawn:
        run.warn(f"{profile.redrawn} Dirichlet draws underflowed and were redrawn")
    best = losses.bayes_action()
    run.summary = _baseline_summary(losses)
    run.summary.update({
        "seed": cfg.seed,
        "n_draws": cfg.n_draws,
        "bayes_prob_optimal": dict(zip((float(a) for a in alpha), profile.prob[:, best])),
        "band_level": level,
    })


def cmd_simulate_screening(run: Run) -> None:
    cfg = run.config
    opts = cfg.options
    data = {}
    if opts.get("config"):
        path = opts["config"]
        run.record_input(path)
        try:
            with open(path) as handle:
                data = json.load(handle)
        except OSError as exc:
            raise InputError(f"cannot open {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
        if not isinstance(data, dict):
            raise InputError(f"{path}: expected a JSON object")
    if opts.get("m") is not None:
        data["m"] = opts["m"]
    data["seed"] = cfg.seed
    try:
        sim_cfg = ScreeningConfig.from_mapping(data)
    except TypeError as exc:
        raise InputError(f"bad screening config: {exc}") from None
    ds = generate_dataset(sim_cfg.params(), sim_cfg.schedules(), int(sim_cfg.m), cfg.seed)
    run.table("samples.csv", ("tB", "tC", "tD"), ds.bag.samples.tolist())
    run.table("losses.csv", ds.labels, ds.losses.tolist())
    mean = ds.losses.mean(axis=0)
    best = int(np.argmin(mean))
    run.summary = {
        "m": int(sim_cfg.m),
        "seed": cfg.seed,
        "parameters": asdict(sim_cfg.params()),
        "loglogistic_parameterisation": "kappa shape, rho scale (median)",
        "n_schedules": len(ds.schedules),
        "mean_loss": dict(zip(ds.labels, mean)),
        "clinical_rate": dict(zip(ds.labels, ds.clinical.mean(axis=0))),
        "mean_screens": dict(zip(ds.labels, ds.n_screens.mean(axis=0))),
        "best_schedule": ds.labels[best],
    }


COMMANDS = {
    "diagnose": cmd_diagnose,
    "kl": cmd_kl,
    "reverse-kl": cmd_reverse_kl,
    "dp": cmd_dp,
    "loo": cmd_loo,
    "calibrate": cmd_calibrate,
    "simulate-screening": cmd_simulate_screening,
}


def execute(config: RunConfig) -> Run:
    run = Run(config)
    COMMANDS[config.subcommand](run)
    run.write()
    return run


def _demo(config: RunConfig) -> None:
    """Chain simulate-screening into diagnose, kl and dp, one subdirectory each."""
    sim_out = config.out
    samples = os.path.join(sim_out, "samples.csv")
    losses = os.path.join(sim_out, "losses.csv")
    for name in ("diagnose", "kl", "dp"):
        sub = RunConfig(
            subcommand=name,
            out=os.path.join(sim_out, name),
            samples=samples,
            losses=losses,
            q_grid=config.q_grid,
            c_grid=config.c_grid,
            alpha_grid=config.alpha_grid,
            n_draws=config.n_draws,
            seed=config.seed,
            normalize=config.normalize,
        )
        run = execute(sub)
        _report(run)


def _report(run: Run) -> None:
    s = run.summary
    cfg = run.config
    line = f"{cfg.subcommand}: wrote {len(run.tables) + 2} files to {cfg.out}"
    if "bayes_action" in s:
        line += f"; Bayes action {s['bayes_action']}"
    if "best_schedule" in s:
        line += f"; best schedule {s['best_schedule']}"
    if s.get("cvar_crossing_q") is not None:
        line += f"; CVaR crossing at q = {s['cvar_crossing_q']:.6g}"
    if s.get("envelope_crossing_C") is not None:
        line += f"; envelope crossing at C = {s['envelope_crossing_C']:.6g}"
    print(line)


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--samples", metavar="PATH", help="samples CSV (parameters, log_density, log_prior, loglik_*)")
    common.add_argument("--losses", metavar="PATH", help="loss CSV, one column per action")
    common.add_argument("--out", metavar="DIR", required=True, help="output directory")
    common.add_argument("--seed", type=int, default=None, help="random seed (generated and recorded if omitted)")
    common.add_argument("--q-grid", metavar="SPEC", help="start:stop:count:linear|log or comma list")
    common.add_argument("--c-grid", metavar="SPEC", help="KL radius grid")
    common.add_argument("--alpha-grid", metavar="SPEC", help="Dirichlet concentration grid")
    common.add_argument("--draws", type=int, default=DEFAULT_DRAWS, help="Dirichlet draws per alpha (default %(default)s)")
    common.add_argument("--no-normalize", action="store_true", help="use raw losses instead of rescaling to [0, 1]")

    parser = argparse.ArgumentParser(
        prog="decision-sensitivity",
        description="Sensitivity of loss-minimising decisions to model misspecification.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("diagnose", parents=[common], help="VaR, CVaR, trimmed-mean and CEL curves")
    p.add_argument("--loo", action="store_true", help="also write leave-one-out sensitivities")
    p.add_argument("--scatter", action="store_true", help="also write log-density/loss pairs")

    sub.add_parser("kl", parents=[common], help="KL-ball envelopes, regret, admissibility and calibration")
    sub.add_parser("reverse-kl", parents=[common], help="reverse-KL envelopes")

    p = sub.add_parser("dp", parents=[common], help="Dirichlet-process probability of optimality and bands")
    p.add_argument("--level", type=float, default=0.95, help="band coverage (default %(default)s)")
    p.add_argument("--band-alpha", metavar="SPEC", help=f"concentrations for bands (default {DEFAULT_BAND_ALPHAS})")
    p.add_argument("--band-z", metavar="SPEC", help=f"band evaluation points (default {DEFAULT_BAND_Z})")
    p.add_argument("--band-atoms", type=int, default=DEFAULT_BAND_ATOMS, help="reference atoms for bands")

    sub.add_parser("loo", parents=[common], help="leave-one-datum-out and leave-prior-out sensitivities")

    p = sub.add_parser("calibrate", parents=[common], help="weight degeneracy along the C grid")
    p.add_argument("--action", help="restrict to one action label")

    p = sub.add_parser("simulate-screening", parents=[common], help="generate the screening case-study data")
    p.add_argument("--config", metavar="JSON", help="screening parameters (flat JSON object)")
    p.add_argument("--m", type=int, default=None, help="number of simulated individuals")
    p.add_argument("--demo", action="store_true", help="then run diagnose, kl and dp on the generated data")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    seed = args.seed if args.seed is not None else secrets.randbits(63)
    options = {}
    for name in ("loo", "scatter", "level", "band_alpha", "band_z", "band_atoms", "action", "config", "m", "demo"):
        if hasattr(args, name):
            options[name] = getattr(args, name)
    return RunConfig(
        subcommand=args.subcommand,
        out=args.out,
        samples=args.samples,
        losses=args.losses,
        q_grid=args.q_grid,
        c_grid=args.c_grid,
        alpha_grid=args.alpha_grid,
        n_draws=args.draws,
        seed=seed,
        normalize=not args.no_normalize,
        options=options,
    )


def _one_line(message: str) -> str:
    return " ".join(str(message).split())


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = config_from_args(args)
        run = execute(config)
        _report(run)
        if config.subcommand == "simulate-screening" and config.options.get("demo"):
            _demo(config)
    except InputError as exc:
        print(f"INPUT_ERROR: {_one_line(exc)}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"IO_ERROR: {_one_line(exc)}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
