"""Batch front door.

Subcommands: simulate, bound, coverage, tightness, tail, rl-td, rl-q,
rl-offpolicy, verify, report.  Every subcommand is deterministic given the
spec file; the parallelism degree only shards replications.  All numeric
output is written with 17 significant digits so tables are comparable
byte-for-byte across runs.  Exit codes: 0 success, 1 verdict failure,
2 spec error.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path

import numpy as np

from . import bounds as bnd
from . import mdp as mdpmod
from . import verify as verifymod
from ._rng import make_rng
from .montecarlo import (
    Experiment,
    coverage_test,
    empirical_quantile,
    median_slope,
    run_ensemble,
    tail_diagnostics,
    tightness_check,
    truncated_mgf_divergence,
)
from .norms import NormSpec
from .operators import (
    make_linear_additive,
    make_multiplicative_gaussian,
    make_pair_gaussian_example,
    make_random_contractive,
    make_two_point_multiplicative,
)
from .schedules import StepSchedule, geometric_checkpoints
from .specfile import SpecError, SpecFile, required


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


def write_csv(path: Path, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------


def build_schedule(spec: SpecFile) -> StepSchedule:
    try:
        return StepSchedule(
            alpha=required(spec, "get_float", "schedule", "alpha"),
            h=required(spec, "get_float", "schedule", "h"),
            xi=required(spec, "get_float", "schedule", "xi"),
        )
    except ValueError as exc:
        raise SpecError(f"[schedule] {exc}", spec.path,
                        spec.section_lines.get("schedule"))


def build_operator(spec: SpecFile):
    kind = required(spec, "get_str", "operator", "kind")
    try:
        if kind == "pair_gaussian":
            return make_pair_gaussian_example(
                required(spec, "get_int", "operator", "d"),
                required(spec, "get_float", "operator", "sigma_bar"))
        if kind == "multiplicative_gaussian":
            return make_multiplicative_gaussian()
        if kind == "two_point_multiplicative":
            return make_two_point_multiplicative(
                required(spec, "get_float", "operator", "a"),
                required(spec, "get_int", "operator", "n_mass"))
        if kind == "random_contractive":
            return make_random_contractive(
                required(spec, "get_int", "operator", "d"),
                required(spec, "get_float", "operator", "gamma_c"),
                required(spec, "get_float", "operator", "noise_scale"),
                required(spec, "get_int", "operator", "op_seed"))
        if kind == "linear_additive":
            A = required(spec, "get_matrix", "operator", "a_matrix")
            b = np.asarray(required(spec, "get_floats", "operator", "b"))
            scale = spec.get_float("operator", "noise_scale")
            if scale is not None:
                cov = scale ** 2 * np.eye(len(b))
            else:
                cov = required(spec, "get_matrix", "operator", "noise_cov")
            return make_linear_additive(A, b, cov)
    except SpecError:
        raise
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise spec.err("operator", "kind", str(exc)) from None
    raise spec.err("operator", "kind", f"unknown operator kind {kind!r}")


def build_norm(spec: SpecFile, raw: str) -> NormSpec:
    if raw == "euclidean":
        return NormSpec.euclidean()
    if raw == "max":
        return NormSpec.sup()
    if raw.startswith("p:"):
        parts = raw.split(":")
        p = float(parts[1])
        if len(parts) > 2:
            weights = [float(t) for t in parts[2].split(",")]
        else:
            dim = spec.get_int("operator", "d", 0) or 1
            weights = np.ones(dim)
        return NormSpec.weighted(p, weights)
    raise spec.err("run", "norm", f"unknown norm {raw!r}")


def build_experiment(spec: SpecFile) -> Experiment:
    op = build_operator(spec)
    sched = build_schedule(spec)
    horizon = required(spec, "get_int", "run", "horizon")
    raw_cp = spec.get_str("run", "checkpoints", "geometric:1.3")
    if raw_cp.startswith("geometric"):
        parts = raw_cp.split(":")
        ratio = float(parts[1]) if len(parts) > 1 else 1.3
        cps = geometric_checkpoints(horizon, ratio=ratio)
    else:
        cps = spec.get_ints("run", "checkpoints")
    raw_x0 = spec.get_str("run", "x0", "zero")
    if raw_x0 == "zero":
        x0 = np.zeros(op.dim)
    elif raw_x0 == "fixed_point":
        x0 = op.fixed_point()
    else:
        x0 = np.asarray(spec.get_floats("run", "x0"))
        if x0.size != op.dim:
            raise spec.err("run", "x0", f"expected {op.dim} coordinates, got {x0.size}")
    norm = build_norm(spec, spec.get_str("run", "norm", "euclidean"))
    try:
        return Experiment(op=op, schedule=sched, x0=x0, horizon=horizon,
                          checkpoints=tuple(cps), norm=norm)
    except ValueError as exc:
        raise SpecError(f"[run] {exc}", spec.path, spec.section_lines.get("run"))


def build_envelope(spec: SpecFile, sched: StepSchedule) -> bnd.TailEnvelope:
    kind = required(spec, "get_str", "envelope", "kind")
    if kind == "constant":
        return bnd.TailEnvelope.constant(required(spec, "get_float", "envelope", "value"))
    if kind == "additive":
        cfg = bnd.AdditiveNoiseConfig(
            sigma_sq=required(spec, "get_float", "envelope", "sigma_sq"),
            gamma_c=required(spec, "get_float", "envelope", "gamma_c"),
            mu=required(spec, "get_float", "envelope", "mu"),
            c_d=required(spec, "get_float", "envelope", "c_d"),
            x0_err_sq=required(spec, "get_float", "envelope", "x0_err_sq"),
            l_smooth=spec.get_float("envelope", "l_smooth", 1.0),
            u_cm=spec.get_float("envelope", "u_cm"),
            l_cm=spec.get_float("envelope", "l_cm"),
            u_m_cstar=spec.get_float("envelope", "u_m_cstar"),
            l_cs=spec.get_float("envelope", "l_cs", 1.0),
            u_cs=spec.get_float("envelope", "u_cs", 1.0),
            u_ccstar=spec.get_float("envelope", "u_ccstar", 1.0),
        )
        return bnd.additive_envelope(cfg, sched)
    if kind == "multiplicative":
        cfg = bnd.MultiplicativeConfig(
            beta1=spec.get_float("envelope", "beta1", 1.0),
            beta2=spec.get_float("envelope", "beta2", 1.0),
            beta3=spec.get_float("envelope", "beta3", 1.0),
            beta4=required(spec, "get_float", "envelope", "beta4"),
            u0=required(spec, "get_float", "envelope", "u0"),
            alpha0=spec.get_float("envelope", "alpha0"),
        )
        return bnd.multiplicative_envelope(cfg, sched)
    raise spec.err("envelope", "kind", f"unknown envelope kind {kind!r}")


def check_schedule_gate(spec: SpecFile, sched: StepSchedule) -> None:
    """Exit-2 gate: an additive envelope whose schedule offset is below
    the certified threshold must be explicitly acknowledged in the spec."""
    if spec.get_str("envelope", "kind", "") != "additive":
        return
    env = build_envelope(spec, sched)
    warning = env.meta.get("warning")
    if warning and not spec.get_bool("envelope", "acknowledge_warning", False):
        raise SpecError(
            f"[envelope] {warning} (set acknowledge_warning = true to proceed)",
            spec.path, spec.lines.get(("schedule", "h"),
                                      spec.section_lines.get("schedule")))


def build_bound_params(spec: SpecFile, sched: StepSchedule) -> bnd.BoundParams:
    try:
        return bnd.BoundParams(
            nu=required(spec, "get_float", "bound", "nu"),
            smoothness=required(spec, "get_float", "bound", "smoothness"),
            curvature=spec.get_float("bound", "curvature", 0.0),
            radius=spec.get_float("bound", "radius", math.inf),
            sigma_bar_sq=required(spec, "get_float", "bound", "sigma_bar_sq"),
            sigma_hat_sq=spec.get_float("bound", "sigma_hat_sq", 0.0),
            u_c2=spec.get_float("bound", "u_c2", 1.0),
            dim=required(spec, "get_int", "bound", "dim"),
            schedule=sched,
            second_term_u_exponent=spec.get_int("bound", "u_exponent", 4),
        )
    except ValueError as exc:
        raise SpecError(f"[bound] {exc}", spec.path, spec.section_lines.get("bound"))


def build_bound_fn(spec: SpecFile, sched: StepSchedule):
    """(k, delta) -> bound value, per the [bound] section."""
    kind = required(spec, "get_str", "bound", "kind")
    if kind == "infinite":
        return lambda k, d: math.inf
    if kind == "exact_pair_quantile":
        sigma = spec.get_float("bound", "sigma_bar", 1.0)
        return lambda k, d: (sigma * math.sqrt(k * math.log(1 / d)) / (k + 1)) ** 2
    if kind == "subweibull":
        c0 = required(spec, "get_float", "bound", "c0")
        m = required(spec, "get_float", "bound", "m")
        return lambda k, d: bnd.subweibull_template(c0, m, d, k)
    if kind in ("main", "crude", "combined"):
        params = build_bound_params(spec, sched)
        env = build_envelope(spec, sched)
        fn = {"main": bnd.main_bound, "crude": bnd.crude_bound,
              "combined": bnd.combined_bound}[kind]
        return lambda k, d: fn(params, env, d, k)
    raise spec.err("bound", "kind", f"unknown bound kind {kind!r}")


def load_spec(path: str) -> SpecFile:
    try:
        return SpecFile.parse(path)
    except FileNotFoundError:
        raise SpecError("spec file not found", str(path))


def build_mdp(spec: SpecFile) -> mdpmod.TabularMdp:
    if spec.has("mdp", "file"):
        path = spec.get_str("mdp", "file")
        try:
            return mdpmod.load_mdp(path)
        except (OSError, ValueError) as exc:
            raise spec.err("mdp", "file", str(exc)) from None
    try:
        return mdpmod.random_mdp(
            required(spec, "get_int", "mdp", "n_states"),
            required(spec, "get_int", "mdp", "n_actions"),
            required(spec, "get_float", "mdp", "gamma"),
            spec.get_float("mdp", "r_max", 1.0),
            required(spec, "get_int", "mdp", "mdp_seed"),
        )
    except ValueError as exc:
        raise SpecError(f"[mdp] {exc}", spec.path, spec.section_lines.get("mdp"))


def build_policy(spec: SpecFile, section: str, key: str, mdp) -> mdpmod.Policy:
    raw = spec.get_str(section, key, "uniform")
    if raw == "uniform":
        return mdpmod.Policy.uniform(mdp.n_states, mdp.n_actions)
    if raw.startswith("random:"):
        return mdpmod.Policy.random(mdp.n_states, mdp.n_actions, int(raw.split(":")[1]))
    raise spec.err(section, key, f"unknown policy {raw!r}")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    spec = load_spec(args.spec)
    exp = build_experiment(spec)
    check_schedule_gate(spec, exp.schedule)
    n_reps = args.reps or required(spec, "get_int", "run", "n_reps")
    seed = args.seed if args.seed is not None else required(spec, "get_int", "run", "base_seed")
    ens = run_ensemble(exp, n_reps, seed, parallel=args.parallel)
    out = Path(args.out)
    rows = []
    for i, k in enumerate(ens.checkpoints):
        for rep in range(ens.err_y.shape[1]):
            rows.append((k, rep, ens.err_x[i, rep], ens.err_y[i, rep]))
    write_csv(out / "ensemble.csv", ["checkpoint", "replicate", "err_x", "err_y"], rows)
    summary = [(k, float(np.median(ens.err_x[i])), float(np.median(ens.err_y[i])),
                float(ens.err_x[i].mean()), float(ens.err_y[i].mean()),
                ens.n_reps, ens.divergence_count)
               for i, k in enumerate(ens.checkpoints)]
    write_csv(out / "ensemble_summary.csv",
              ["checkpoint", "median_err_x", "median_err_y", "mean_err_x",
               "mean_err_y", "n_reps", "divergence_count"], summary)
    print(f"wrote {out / 'ensemble.csv'} ({len(rows)} rows, "
          f"{ens.divergence_count} divergent)")
    return 0


def cmd_bound(args) -> int:
    spec = load_spec(args.spec)
    sched = build_schedule(spec)
    kind = spec.get_str("bound", "kind", "combined")
    if kind not in ("main", "crude", "combined"):
        raise spec.err("bound", "kind", "bound tables need kind main|crude|combined")
    params = build_bound_params(spec, sched)
    env = build_envelope(spec, sched)
    ks = spec.get_ints("bound", "ks", [10, 100, 1000, 10000])
    deltas = spec.get_floats("bound", "deltas", [0.1, 0.05, 0.01])
    rows = bnd.bound_table(params, env, ks, deltas)
    out = Path(args.out)
    write_csv(out / "bound_table.csv",
              ["k", "delta", "eps_tilde", "eps_bar", "main", "crude", "combined",
               "f_value", "k0"],
              [tuple(r[c] for c in ("k", "delta", "eps_tilde", "eps_bar", "main",
                                    "crude", "combined", "f_value", "k0"))
               for r in rows])
    print(f"wrote {out / 'bound_table.csv'} (u-exponent form: "
          f"{params.second_term_u_exponent})")
    return 0


def _coverage_rows(ens, bound_fn, deltas, slack):
    rows, all_pass = [], True
    for delta in deltas:
        verdicts = coverage_test(ens, bound_fn, delta, slack=slack)
        for v in verdicts:
            i = ens.checkpoints.index(v.checkpoint)
            qe = empirical_quantile(ens.err_y[i], 1 - delta)
            rows.append((v.checkpoint, delta, qe.value, qe.ci_lo, qe.ci_hi,
                         float(bound_fn(v.checkpoint, delta)), v.exceed_count,
                         v.binomial_upper_ci, "pass" if v.passed else "fail"))
            all_pass &= v.passed
    return rows, all_pass


def cmd_coverage(args) -> int:
    spec = load_spec(args.spec)
    exp = build_experiment(spec)
    check_schedule_gate(spec, exp.schedule)
    bound_fn = build_bound_fn(spec, exp.schedule)
    n_reps = args.reps or required(spec, "get_int", "run", "n_reps")
    seed = args.seed if args.seed is not None else required(spec, "get_int", "run", "base_seed")
    deltas = spec.get_floats("coverage", "deltas", [0.05])
    slack = spec.get_float("coverage", "slack", 1.0)
    ens = run_ensemble(exp, n_reps, seed, parallel=args.parallel)
    rows, all_pass = _coverage_rows(ens, bound_fn, deltas, slack)
    write_csv(Path(args.out) / "coverage.csv",
              ["checkpoint", "delta", "quantile", "ci_lo", "ci_hi", "bound",
               "exceed_count", "exceed_upper_ci", "verdict"], rows)
    print(f"coverage: {'all pass' if all_pass else 'FAILURES'} "
          f"({len(rows)} verdicts)")
    return 0 if all_pass else 1


def cmd_tightness(args) -> int:
    spec = load_spec(args.spec)
    exp = build_experiment(spec)
    sigma = spec.get_float("tightness", "sigma_bar",
                           spec.get_float("operator", "sigma_bar", 1.0))
    deltas = spec.get_floats("tightness", "deltas",
                             [spec.get_float("tightness", "delta", 0.1)])
    k = spec.get_int("tightness", "k", exp.checkpoints[-1])
    n_reps = args.reps or required(spec, "get_int", "run", "n_reps")
    seed = args.seed if args.seed is not None else required(spec, "get_int", "run", "base_seed")
    ens = run_ensemble(exp, n_reps, seed, parallel=args.parallel)
    rows, ok = [], True
    for delta in deltas:
        rep = tightness_check(ens, delta, k, sigma_bar=sigma)
        rows.append((k, delta, rep.empirical, rep.empirical_ci[0], rep.empirical_ci[1],
                     rep.exact, rep.leading, rep.ratio_empirical_exact,
                     rep.ratio_leading_exact, rep.predicted_factor))
        ok &= rep.ratio_leading_exact <= rep.predicted_factor + 0.1
    write_csv(Path(args.out) / "tightness.csv",
              ["k", "delta", "empirical_quantile", "ci_lo", "ci_hi", "exact",
               "leading_term", "ratio_empirical_exact", "ratio_leading_exact",
               "predicted_factor"], rows)
    print(f"tightness: {'within predicted factor' if ok else 'FACTOR EXCEEDED'}")
    return 0 if ok else 1


def cmd_tail(args) -> int:
    spec = load_spec(args.spec)
    mode = spec.get_str("tail", "mode", "diagnostics")
    out = Path(args.out)
    if mode == "mgf":
        radii = spec.get_floats("tail", "radii", [2, 3, 4, 5, 6])
        ts = spec.get_floats("tail", "t_values")
        if ts is None:
            raise spec.err("tail", "t_values", "mgf mode needs t_values")
        x0 = spec.get_float("tail", "x0", 1.0)
        a0 = spec.get_float("tail", "alpha0", 0.25)
        a1 = spec.get_float("tail", "alpha1", 0.25)
        rows = []
        for t in ts:
            rep = truncated_mgf_divergence(t, radii, x0=x0, alpha0=a0, alpha1=a1)
            for r, v in zip(rep.radii, rep.values):
                rows.append((t, rep.t_critical, r, v, rep.last_ratio,
                             rep.growth_factor, "yes" if rep.convergent else "no"))
        write_csv(out / "mgf.csv",
                  ["t", "t_critical", "radius", "value", "last_ratio",
                   "growth_factor", "convergent"], rows)
        print(f"wrote {out / 'mgf.csv'}")
        return 0
    exp = build_experiment(spec)
    n_reps = args.reps or required(spec, "get_int", "run", "n_reps")
    seed = args.seed if args.seed is not None else required(spec, "get_int", "run", "base_seed")
    with np.errstate(over="ignore", invalid="ignore"):
        ens = run_ensemble(exp, n_reps, seed, parallel=args.parallel)
    k = spec.get_int("tail", "checkpoint", ens.checkpoints[-1])
    _, err_y = ens.at(k)
    diag = tail_diagnostics(err_y)
    rows = [(k, frac, idx) for frac, idx in diag.hill_indices.items()]
    write_csv(out / "tail_hill.csv", ["checkpoint", "top_fraction", "hill_index"], rows)
    write_csv(out / "tail.csv",
              ["checkpoint", "hill_stable", "exp_slope", "exp_residual",
               "poly_slope", "poly_residual", "verdict"],
              [(k, diag.hill_stable, diag.exp_slope, diag.exp_residual,
                diag.poly_slope, diag.poly_residual, diag.verdict)])
    print(f"tail verdict at k={k}: {diag.verdict}")
    return 0


def cmd_rl_td(args) -> int:
    spec = load_spec(args.spec)
    mdp = build_mdp(spec)
    pi = build_policy(spec, "td", "policy", mdp)
    n = spec.get_int("td", "n", 1)
    rep = mdpmod.td_operator_report(mdp, pi, n)
    out = Path(args.out)
    decay = 1 - mdp.gamma ** n
    rows = [(s, rep.mu_pi[s], rep.nu_pi[s], rep.a_pi[s].sum(),
             abs(rep.a_pi[s].sum() - (1 - decay * rep.mu_pi[s])),
             rep.fixed_point[s]) for s in range(mdp.n_states)]
    write_csv(out / "td_report.csv",
              ["state", "mu_pi", "nu_pi", "a_row_sum", "row_sum_residual",
               "value_fixed_point"], rows)
    if not spec.has("run"):
        print(f"wrote {out / 'td_report.csv'}")
        return 0

    sched = build_schedule(spec)
    horizon = required(spec, "get_int", "run", "horizon")
    cps = spec.get_ints("run", "checkpoints", [horizon])
    n_reps = args.reps or required(spec, "get_int", "run", "n_reps")
    seed = args.seed if args.seed is not None else required(spec, "get_int", "run", "base_seed")
    sampler = mdpmod.make_td_sampler(mdp, pi, n)
    x0 = np.zeros(mdp.n_states)
    exp = Experiment(op=sampler, schedule=sched, x0=x0, horizon=horizon,
                     checkpoints=tuple(cps), norm=NormSpec.sup())
    ens = run_ensemble(exp, n_reps, seed, parallel=args.parallel)
    bound_fn = mdpmod.td_error_bound(mdp, pi, n, sched, x0)
    deltas = spec.get_floats("coverage", "deltas", [0.05])
    slack = spec.get_float("coverage", "slack", 1.0)
    rows, all_pass = _coverage_rows(ens, bound_fn, deltas, slack)
    lead_rows = [(k, d, bnd.leading_td_bound(mdp.r_max, mdp.gamma, n, rep.mu_min,
                                             mdp.n_states, d, k))
                 for k in ens.checkpoints for d in deltas]
    write_csv(out / "td_coverage.csv",
              ["checkpoint", "delta", "quantile", "ci_lo", "ci_hi", "bound",
               "exceed_count", "exceed_upper_ci", "verdict"], rows)
    write_csv(out / "td_leading.csv", ["checkpoint", "delta", "leading_term"], lead_rows)
    print(f"td coverage: {'all pass' if all_pass else 'FAILURES'}")
    return 0 if all_pass else 1


def cmd_rl_q(args) -> int:
    spec = load_spec(args.spec)
    mdp = build_mdp(spec)
    pib = build_policy(spec, "q", "behavior", mdp)
    sampler = mdpmod.make_q_sampler(mdp, pib)
    out = Path(args.out)
    res = sampler.qstar
    write_csv(out / "q_report.csv",
              ["rho_b", "greedy_gap", "bellman_residual", "sup_contraction_factor"],
              [(sampler.rho_b, res.greedy_gap, res.residual,
                1 - (1 - mdp.gamma) * sampler.rho_b)])
    if not spec.has("run"):
        print(f"wrote {out / 'q_report.csv'}")
        return 0

    sched = build_schedule(spec)
    horizon = required(spec, "get_int", "run", "horizon")
    cps = spec.get_ints("run", "checkpoints", [horizon])
    n_reps = args.reps or required(spec, "get_int", "run", "n_reps")
    seed = args.seed if args.seed is not None else required(spec, "get_int", "run", "base_seed")
    x0 = np.zeros(sampler.dim)
    exp = Experiment(op=sampler, schedule=sched, x0=x0, horizon=horizon,
                     checkpoints=tuple(cps), norm=NormSpec.sup())
    ens = run_ensemble(exp, n_reps, seed, parallel=args.parallel)
    bound_fn = mdpmod.q_error_bound(mdp, pib, sched, x0)
    deltas = spec.get_floats("coverage", "deltas", [0.05])
    slack = spec.get_float("coverage", "slack", 1.0)
    rows, all_pass = _coverage_rows(ens, bound_fn, deltas, slack)
    lead_rows = [(k, d, bnd.leading_q_bound(mdp.r_max, mdp.gamma, sampler.rho_b,
                                            mdp.n_states, mdp.n_actions, d, k))
                 for k in ens.checkpoints for d in deltas]
    write_csv(out / "q_coverage.csv",
              ["checkpoint", "delta", "quantile", "ci_lo", "ci_hi", "bound",
               "exceed_count", "exceed_upper_ci", "verdict"], rows)
    write_csv(out / "q_leading.csv", ["checkpoint", "delta", "leading_term"], lead_rows)
    print(f"q coverage: {'all pass' if all_pass else 'FAILURES'}")
    return 0 if all_pass else 1


def cmd_rl_offpolicy(args) -> int:
    spec = load_spec(args.spec)
    mdp = build_mdp(spec)
    pi = build_policy(spec, "offpolicy", "target", mdp)
    pib = build_policy(spec, "offpolicy", "behavior", mdp)
    n = spec.get_int("offpolicy", "n", 10)
    feats = spec.get_str("offpolicy", "features", "identity")
    if feats == "identity":
        phi = np.eye(mdp.n_states)
    elif feats.startswith("random:"):
        _, d, fseed = feats.split(":")
        phi = make_rng(int(fseed), 0xF17A).standard_normal((mdp.n_states, int(d)))
    else:
        raise spec.err("offpolicy", "features", f"unknown features {feats!r}")

    probe = mdpmod.LfaConfig(phi=phi, pi=pi, pi_b=pib, n=n, zeta=1.0)
    probe_sampler = mdpmod.make_offpolicy_td_sampler(probe, mdp)
    is_hurwitz, abscissa = mdpmod.hurwitz_check(probe_sampler.a_bar)
    if not is_hurwitz:
        raise spec.err("offpolicy", "n",
                       f"mean update matrix is not Hurwitz (abscissa {abscissa:.3e}); "
                       "increase the lookback")
    lyap = mdpmod.lyapunov_contraction_norm(probe_sampler.a_bar)
    zraw = spec.get_str("offpolicy", "zeta", "auto")
    zeta = lyap.zeta_star if zraw == "auto" else float(zraw)
    cfg = mdpmod.LfaConfig(phi=phi, pi=pi, pi_b=pib, n=n, zeta=zeta)
    sampler = mdpmod.make_offpolicy_td_sampler(cfg, mdp)
    out = Path(args.out)
    fp_residual = float(np.max(np.abs(sampler.a_bar @ sampler.fixed_point()
                                      + sampler.b_bar)))
    write_csv(out / "offpolicy_report.csv",
              ["hurwitz", "abscissa", "zeta_star", "contraction_ratio", "zeta_used",
               "fixed_point_residual"],
              [(is_hurwitz, abscissa, lyap.zeta_star, lyap.ratio, zeta, fp_residual)])
    if not spec.has("run"):
        print(f"wrote {out / 'offpolicy_report.csv'}")
        return 0

    sched = build_schedule(spec)
    horizon = required(spec, "get_int", "run", "horizon")
    raw_cp = spec.get_str("run", "checkpoints", "geometric:1.5")
    if raw_cp.startswith("geometric"):
        parts = raw_cp.split(":")
        cps = geometric_checkpoints(horizon, float(parts[1]) if len(parts) > 1 else 1.5)
    else:
        cps = spec.get_ints("run", "checkpoints")
    n_reps = args.reps or required(spec, "get_int", "run", "n_reps")
    seed = args.seed if args.seed is not None else required(spec, "get_int", "run", "base_seed")
    exp = Experiment(op=sampler, schedule=sched, x0=np.zeros(sampler.dim),
                     horizon=horizon, checkpoints=tuple(cps), norm=NormSpec.euclidean())
    ens = run_ensemble(exp, n_reps, seed, parallel=args.parallel)
    delta = spec.get_float("coverage", "delta", 0.1)
    rows = []
    for i, k in enumerate(ens.checkpoints):
        qe = empirical_quantile(ens.err_y[i], 1 - delta)
        rows.append((k, delta, qe.value, qe.ci_lo, qe.ci_hi))
    write_csv(out / "offpolicy_decay.csv",
              ["checkpoint", "delta", "quantile_err_y", "ci_lo", "ci_hi"], rows)
    ks = [r[0] for r in rows if r[0] >= 10]
    slope = median_slope(ks, [r[2] for r in rows if r[0] >= 10])
    print(f"offpolicy quantile decay slope: {slope:.3f}")
    return 0


def cmd_verify(args) -> int:
    spec = load_spec(args.spec) if args.spec else None
    mdp_file = spec.get_str("mdp", "file") if spec and spec.has("mdp", "file") else None
    results = verifymod.run_manifest(mdp_file=mdp_file)
    width = max(len(r.name) for r in results)
    failures = 0
    for r in results:
        tag = "PASS" if r.passed else "FAIL"
        print(f"{tag}  {r.name:<{width}}  {r.detail}")
        failures += not r.passed
    print(f"{len(results) - failures}/{len(results)} invariants pass")
    return 0 if failures == 0 else 1


def cmd_report(args) -> int:
    from . import report as reportmod

    made = reportmod.render_all(Path(args.out))
    for p in made:
        print(f"wrote {p}")
    if not made:
        print("no recognized tables found; nothing rendered")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="salab",
        description="Averaged stochastic approximation: simulation, bounds, verification",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    handlers = {
        "simulate": cmd_simulate,
        "bound": cmd_bound,
        "coverage": cmd_coverage,
        "tightness": cmd_tightness,
        "tail": cmd_tail,
        "rl-td": cmd_rl_td,
        "rl-q": cmd_rl_q,
        "rl-offpolicy": cmd_rl_offpolicy,
        "verify": cmd_verify,
        "report": cmd_report,
    }
    for name, fn in handlers.items():
        p = sub.add_parser(name)
        if name != "report":
            p.add_argument("--spec", required=(name != "verify"),
                           help="experiment spec file")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--reps", type=int, default=None,
                       help="override replication count")
        p.add_argument("--seed", type=int, default=None, help="override base seed")
        p.add_argument("--parallel", type=int, default=None,
                       help="shard replications (never changes outputs)")
        p.set_defaults(handler=fn)
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except SpecError as exc:
        print(f"spec error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
