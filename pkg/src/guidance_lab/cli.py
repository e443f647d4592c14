"""Config-driven experiment runner.

Usage::

    guidance-lab <kind> [--config cfg.json] [--out DIR] [--seed N] [--threads N]

with ``kind`` one of ``verify``, ``trace_divergence``, ``sweep_beta``,
``sweep_omega``, ``sample_compare``.  Without ``--config`` the built-in
default configuration for the kind is used.  All artifacts are CSV/JSON
files in the output directory; runs are deterministic per (config, seed),
so re-running a config reproduces its outputs byte for byte.  Exit status
0 means every check in the run passed (for ``verify``) or the run
completed (for the experiment kinds); configuration problems exit 2.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import config as cfg_mod
from . import divergence as dvg
from . import guidance as gd
from . import metrics
from . import mixture as mix
from . import sampler as smp
from . import schedule as sched
from . import verify
from .errors import GuidanceLabError
from .tables import Table


def _child_seed(base, *branch):
    return int(np.random.SeedSequence([int(base), *branch]).generate_state(1)[0])


def _write_json(payload, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    print(f"wrote {path}")


def _write_table(table, path):
    table.write_csv(path)
    print(f"wrote {path}")


def _reference_trajectory(config):
    """Conditional-only trajectory whose states anchor the profiles.

    Every divergence row of an experiment is evaluated at the same states
    so that sweep values are compared at identical points; conditional
    sampling (CFG at scale 1) defines those states.
    """
    reference_rule = gd.GuidanceConfig(
        rule=gd.GuidanceRule.CFG, guidance_scale=1.0, min_scale=0.0,
        decay_power=0.0, parallel_scale=1.0,
    )
    x0 = smp.draw_initial_state(config.pair.dim, config.sampler.seed)
    return smp.integrate(
        x0, config.pair, config.schedule, reference_rule, config.sampler
    )


def _projected(config, beta=None, omega=None):
    """The configured guidance forced to the projected rule, with overrides."""
    base = config.guidance
    return dataclasses.replace(
        base,
        rule=gd.GuidanceRule.PROJECTED,
        parallel_scale=base.parallel_scale if beta is None else float(beta),
        guidance_scale=base.guidance_scale if omega is None else float(omega),
        min_scale=min(base.min_scale, base.guidance_scale if omega is None
                      else float(omega)),
    )


def _cfg_rule(omega):
    return gd.GuidanceConfig(
        rule=gd.GuidanceRule.CFG, guidance_scale=float(omega), min_scale=0.0,
        decay_power=0.0, parallel_scale=1.0,
    )


def run_verify(config):
    results = verify.run_all_checks(config)
    report = verify.report_dict(results)
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        print(f"[{status}] {res.name}: measured={res.measured:.3e} "
              f"tolerance={res.tolerance:.3e}")
    _write_json(report, os.path.join(config.output_dir, "verify_report.json"))
    return 0 if report["passed"] else 1


def run_trace_divergence(config):
    pair, schedule = config.pair, config.schedule
    record = _reference_trajectory(config)
    fields = {
        "cond": gd.velocity_field(pair.conditional, schedule),
        "uncond": gd.velocity_field(pair.unconditional, schedule),
    }
    for beta in config.beta_sweep:
        rule = _projected(config, beta=beta)
        fields[f"g_beta_{beta:g}"] = gd.projected_update_field(
            pair.conditional, pair.unconditional, schedule, rule
        )
    table = dvg.divergence_profile(fields, record, method="exact")
    _write_table(table, os.path.join(config.output_dir, "trace_divergence.csv"))
    return 0


def run_sweep_beta(config):
    pair, schedule = config.pair, config.schedule
    record = _reference_trajectory(config)
    g_field = gd.residual_field(pair.conditional, pair.unconditional, schedule)
    par_field = gd.parallel_component_field(
        pair.conditional, pair.unconditional, schedule,
        normal_source=config.guidance.normal_source,
    )
    betas = list(config.beta_sweep)
    columns = ["step", "t", "div_g", "div_g_par", "div_g_perp"]
    for beta in betas:
        tag = f"{beta:g}"
        columns += [f"div_update_beta_{tag}", f"div_update_par_beta_{tag}",
                    f"div_update_perp_beta_{tag}"]
    dim = pair.dim
    rows = []
    base_rule = _projected(config)
    for k, (t, x) in enumerate(zip(record.times, record.states)):
        t = float(t)
        div_g = g_field.divergence(x, t)
        div_par = par_field.divergence(x, t)
        div_perp = div_g - div_par
        row = [k, t, abs(div_g) / dim, abs(div_par) / dim, abs(div_perp) / dim]
        omega = sched.guidance_scale_at(base_rule, t)
        for beta in betas:
            total = omega * (div_g - (1.0 - beta) * div_par)
            row += [abs(total) / dim, abs(omega * beta * div_par) / dim,
                    abs(omega * div_perp) / dim]
        rows.append(row)
    table = Table(columns=columns, rows=rows)
    _write_table(table, os.path.join(config.output_dir, "sweep_beta.csv"))
    return 0


def _terminal_run(config, rule, sampler_seed):
    sampler_cfg = dataclasses.replace(config.sampler, seed=sampler_seed)
    return smp.batch_integrate(
        config.sample_count, config.pair, config.schedule, rule, sampler_cfg
    )


def _oracle_terminal_draws(config, count, seed):
    marg = mix.marginal_at(
        config.pair.conditional, config.schedule, config.sampler.t_end
    )
    return marg.sample(count, seed=seed)


def run_sweep_omega(config):
    rows = []
    summary = {}
    for oi, omega in enumerate(config.omega_sweep):
        sampler_seed = _child_seed(config.seed, 1, oi)
        oracle = _oracle_terminal_draws(
            config, config.sample_count, _child_seed(config.seed, 2, oi)
        )
        for ri, (rule_name, rule) in enumerate(
            [("cfg", _cfg_rule(omega)), ("projected", _projected(config, omega=omega))]
        ):
            batch = _terminal_run(config, rule, sampler_seed)
            result = metrics.permutation_test(
                batch.terminal, oracle, n_perm=config.n_perm,
                seed=_child_seed(config.seed, 3, oi, ri),
            )
            rows.append([
                rule_name, float(omega), result.statistic,
                result.null_quantiles[0.95],
                float(batch.mean_log_density_cond[-1]),
            ])
            summary[f"{rule_name}_omega_{omega:g}"] = result.statistic
    table = Table(
        columns=["rule", "omega", "energy_distance", "null_q95",
                 "mean_log_p_cond"],
        rows=rows,
    )
    _write_table(table, os.path.join(config.output_dir, "sweep_omega.csv"))
    top = max(config.omega_sweep)
    report = {
        "energy_distances": summary,
        "omega_max": float(top),
        "projected_le_cfg_at_omega_max": bool(
            summary[f"projected_omega_{top:g}"] <= summary[f"cfg_omega_{top:g}"]
        ),
    }
    _write_json(report, os.path.join(config.output_dir, "sweep_omega_report.json"))
    return 0


def _samples_table(matrix):
    dim = matrix.shape[1]
    return Table(
        columns=[f"x_{i}" for i in range(dim)],
        rows=[[float(v) for v in row] for row in matrix],
    )


def run_sample_compare(config):
    oracle = _oracle_terminal_draws(
        config, config.sample_count, _child_seed(config.seed, 4)
    )
    _write_table(
        _samples_table(oracle),
        os.path.join(config.output_dir, "samples_oracle.csv"),
    )
    report = {"sample_count": config.sample_count,
              "guidance_scale": config.guidance.guidance_scale, "rules": {}}
    omega = config.guidance.guidance_scale
    for ri, (rule_name, rule) in enumerate(
        [("cfg", _cfg_rule(omega)), ("projected", _projected(config))]
    ):
        batch = _terminal_run(config, rule, config.sampler.seed)
        _write_table(
            _samples_table(batch.terminal),
            os.path.join(config.output_dir, f"samples_{rule_name}.csv"),
        )
        result = metrics.permutation_test(
            batch.terminal, oracle, n_perm=config.n_perm,
            seed=_child_seed(config.seed, 5, ri),
        )
        report["rules"][rule_name] = {
            "energy_distance": result.statistic,
            "null_quantiles": {repr(q): v
                               for q, v in result.null_quantiles.items()},
            "n_perm": result.n_perm,
            "mean_terminal_log_p_cond": float(batch.mean_log_density_cond[-1]),
        }
    _write_json(report, os.path.join(config.output_dir,
                                     "sample_compare_report.json"))
    return 0


_RUNNERS = {
    "verify": run_verify,
    "trace_divergence": run_trace_divergence,
    "sweep_beta": run_sweep_beta,
    "sweep_omega": run_sweep_omega,
    "sample_compare": run_sample_compare,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="guidance-lab",
        description="Guided probability-flow sampling laboratory with "
                    "exact Gaussian-mixture oracles.",
    )
    parser.add_argument("kind", choices=cfg_mod.KINDS,
                        help="experiment to run")
    parser.add_argument("--config", default=None,
                        help="JSON config path; built-in defaults when omitted")
    parser.add_argument("--out", default=None,
                        help="output directory (overrides the config)")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the experiment and sampler seeds")
    parser.add_argument("--threads", type=int, default=1,
                        help="reserved; execution is single-threaded for "
                             "reproducibility")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise GuidanceLabError(f"--threads must be >= 1, got {args.threads}")
        if args.config is None:
            config = cfg_mod.default_config(args.kind)
        else:
            config = cfg_mod.load_config(args.config)
            if config.kind != args.kind:
                raise GuidanceLabError(
                    f"config kind {config.kind!r} does not match requested "
                    f"{args.kind!r}"
                )
        overrides = cfg_mod.config_to_dict(config)
        if args.out is not None:
            overrides["output_dir"] = args.out
        if args.seed is not None:
            overrides["seed"] = args.seed
            overrides["sampler"]["seed"] = args.seed
        config = cfg_mod.config_from_dict(overrides)
        os.makedirs(config.output_dir, exist_ok=True)
        return _RUNNERS[config.kind](config)
    except GuidanceLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
