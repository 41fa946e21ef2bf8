"""Command-line entry points.

    repchain run <scenario>             simulate one scenario
    repchain compare <scenario>         baseline versus roll-up + channels
    repchain attack <kind> <scenario>   run with an attack stream enabled
    repchain contract-sweep <scenario>  optimize contracts over random states
    repchain channel-stress <scenario>  transfer atomicity under delays

Common flags: --seed, --rounds, --out (default from REPCHAIN_OUT or ./out),
--format csv|json.  Exit codes: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import os
from pathlib import Path

import click
import numpy as np

from .attacks import check_threat_bound
from .contracts import ContractEnv, Grid, moral_hazard_audit, optimize_contract, random_market_states
from .assessment import FeeModel, FusionParams
from .errors import RepchainError
from .experiments import channel_stress as run_channel_stress
from .metrics import MetricsSink
from .scenario import Scenario, load_scenario
from .simulation import run_scenario


def _load(path: str, seed, rounds) -> Scenario:
    scenario = load_scenario(path)
    if seed is not None:
        scenario.run.seed = seed
    if rounds is not None:
        scenario.run.rounds = rounds
    scenario.validate()
    return scenario


def _write(sink: MetricsSink, out_dir: Path, fmt: str) -> None:
    if fmt == "json":
        path = sink.write_json(out_dir)
        click.echo(f"wrote {path}")
    else:
        for path in sink.write_csv(out_dir):
            click.echo(f"wrote {path}")


def _out_option():
    default = os.environ.get("REPCHAIN_OUT", "out")
    return click.option("--out", "out_dir", default=default, show_default=True,
                        type=click.Path(file_okay=False, path_type=Path))


common_options = [
    click.option("--seed", type=int, default=None, help="Override the scenario seed."),
    click.option("--rounds", type=int, default=None, help="Override the round count."),
    click.option("--format", "fmt", type=click.Choice(["csv", "json"]),
                 default="csv", show_default=True),
]


def _apply(options, fn):
    for option in reversed(options):
        fn = option(fn)
    return fn


@click.group()
def main() -> None:
    """Deterministic two-layer service-market chain simulator."""


def _command(name):
    def decorate(fn):
        fn = _domain_errors(fn)
        fn = _out_option()(fn)
        fn = _apply(common_options, fn)
        return main.command(name)(fn)
    return decorate


def _domain_errors(fn):
    """Surface domain failures as exit code 1 with a diagnostic."""
    import functools

    @functools.wraps(fn)
    def wrapped(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except RepchainError as exc:
            raise click.ClickException(str(exc)) from exc
    return wrapped


@_command("run")
@click.argument("scenario_file", type=click.Path(exists=True, dir_okay=False))
def run_cmd(scenario_file, seed, rounds, fmt, out_dir) -> None:
    """Simulate one scenario and write its metric tables."""
    scenario = _load(scenario_file, seed, rounds)
    sink = run_scenario(scenario)
    _write(sink, out_dir, fmt)


@_command("compare")
@click.argument("scenario_file", type=click.Path(exists=True, dir_okay=False))
def compare_cmd(scenario_file, seed, rounds, fmt, out_dir) -> None:
    """Run baseline and roll-up variants and print a comparison summary."""
    scenario = _load(scenario_file, seed, rounds)
    layered = run_scenario(scenario)
    base = run_scenario(scenario, baseline=True)
    _write(layered, Path(out_dir) / "rollup", fmt)
    _write(base, Path(out_dir) / "baseline", fmt)
    summary = {row[2]: row[3] for row in layered.rows("summary")
               if row[2] in ("ledger_bytes", "throughput_tps")}
    base_summary = {row[2]: row[3] for row in base.rows("summary")
                    if row[2] in ("ledger_bytes", "throughput_tps")}
    saved = 0.0
    if base_summary.get("ledger_bytes"):
        saved = 100.0 * (1 - summary["ledger_bytes"] / base_summary["ledger_bytes"])
    click.echo(f"{'metric':<22}{'baseline':>16}{'rollup':>16}")
    click.echo(f"{'ledger bytes':<22}{base_summary['ledger_bytes']:>16}"
               f"{summary['ledger_bytes']:>16}")
    click.echo(f"{'throughput tps':<22}{base_summary['throughput_tps']:>16.2f}"
               f"{summary['throughput_tps']:>16.2f}")
    click.echo(f"storage saving: {saved:.2f}%")


@_command("attack")
@click.argument("kind", type=click.Choice(["flooding", "long_range", "dusting"]))
@click.argument("scenario_file", type=click.Path(exists=True, dir_okay=False))
def attack_cmd(kind, scenario_file, seed, rounds, fmt, out_dir) -> None:
    """Run the scenario with the given attack stream enabled."""
    scenario = _load(scenario_file, seed, rounds)
    scenario.attack.kind = kind
    scenario.validate()
    targets = sum(1 for j in range(scenario.population.providers)
                  if j % scenario.population.levels == scenario.attack.target_level - 1)
    check_threat_bound(targets, scenario.population.providers)
    sink = run_scenario(scenario)
    _write(sink, out_dir, fmt)


@_command("contract-sweep")
@click.argument("scenario_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--states", "n_states", type=int, default=20, show_default=True)
def contract_sweep_cmd(scenario_file, seed, rounds, fmt, out_dir, n_states) -> None:
    """Optimize contracts over random market states; export the sweep."""
    scenario = _load(scenario_file, seed, rounds)
    rng = np.random.default_rng(scenario.run.seed)
    cfg = scenario.contract
    assess = scenario.assessment
    fee_model = FeeModel(assess.fee_min, assess.fee_max, assess.fee_bands)
    sink = MetricsSink(seed=scenario.run.seed,
                       scenario_id=scenario.run.scenario_id)
    for state_id, state in enumerate(random_market_states(n_states, rng)):
        env = ContractEnv(fee_model=fee_model,
                          fusion=FusionParams(alpha=assess.alpha,
                                              objective_bounds=(assess.objective_lo,
                                                                assess.objective_hi)),
                          subjective_score=float(rng.uniform(0.2, 1.0)),
                          expected_assessment=assess.expected)
        solution = optimize_contract(state, env, Grid(*cfg.bonus_grid),
                                     Grid(*cfg.fixed_grid), Grid(*cfg.compute_grid),
                                     Grid(*cfg.fee_grid), cfg.provider_threshold)
        if solution.feasible:
            audit = moral_hazard_audit(solution.contract, state, env,
                                       Grid(*cfg.compute_grid), Grid(*cfg.fee_grid))
            if not audit.no_profitable_deviation:
                raise RepchainError("profitable deviation found in audit")
            sink.add("contracts", state_id, solution.contract.bonus_rate,
                     solution.contract.fixed_fee, solution.action.compute_rate,
                     solution.action.channel_fee, solution.client_utility,
                     solution.provider_utility, True)
        else:
            sink.add("contracts", state_id, 0.0, 0.0, 0.0, 0.0,
                     float("nan"), float("nan"), False)
    _write(sink, out_dir, fmt)


@_command("channel-stress")
@click.argument("scenario_file", type=click.Path(exists=True, dir_okay=False))
def channel_stress_cmd(scenario_file, seed, rounds, fmt, out_dir) -> None:
    """Exercise transfer rounds under delays and halts; export atomicity."""
    scenario = _load(scenario_file, seed, rounds)
    per_level = max(1, (rounds or 10_000) // 3)
    reports = run_channel_stress(rounds_per_level=per_level,
                                 timers=scenario.channel.timers,
                                 seed=scenario.run.seed)
    sink = MetricsSink(seed=scenario.run.seed,
                       scenario_id=scenario.run.scenario_id)
    for report in reports:
        sink.add("atomicity", report.delay_prob, report.rounds,
                 report.completed, report.rolled_back, report.violations)
        if not report.atomic:
            raise RepchainError(f"atomicity violated at delay={report.delay_prob}")
    _write(sink, out_dir, fmt)


if __name__ == "__main__":
    main()
