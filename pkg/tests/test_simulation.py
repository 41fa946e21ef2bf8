"""End-to-end runs: determinism, conservation, convergence, CLI surface."""

import copy

import pytest
from click.testing import CliRunner

from repchain.cli import main
from repchain.scenario import Scenario, parse_scenario
from repchain.simulation import run_scenario


def _small_scenario(rounds=25, **population):
    scenario = Scenario()
    scenario.run.rounds = rounds
    scenario.run.scenario_id = "test"
    for key, value in population.items():
        setattr(scenario.population, key, value)
    return scenario


class TestDeterminism:
    def test_same_seed_is_bit_identical(self):
        scenario = _small_scenario()
        a = run_scenario(scenario, seed=5)
        b = run_scenario(scenario, seed=5)
        assert a.digest() == b.digest()

    def test_different_seed_differs(self):
        scenario = _small_scenario()
        assert run_scenario(scenario, seed=5).digest() != \
            run_scenario(scenario, seed=6).digest()

    def test_run_does_not_mutate_the_scenario(self):
        scenario = _small_scenario()
        snapshot = copy.deepcopy(scenario)
        run_scenario(scenario, seed=5, baseline=True)
        assert scenario == snapshot


class TestSemantics:
    def test_single_level_population_converges_to_a_narrow_band(self):
        # fully symmetric: one level, one client type
        scenario = _small_scenario(rounds=200, levels=1, level_probs=(0.95,),
                                   providers=4, clients=16,
                                   provider_capacity=4, client_types=1,
                                   sensitivities=(0.5,), strictness=(0.0,))
        scenario.service.compute_rates = (30.0,)
        sink = run_scenario(scenario, seed=3)
        last_round = max(r[2] for r in sink.rows("reputation"))
        finals = [r[5] for r in sink.rows("reputation") if r[2] == last_round]
        assert max(finals) - min(finals) < 0.05

    def test_rollup_and_baseline_agree_on_the_tree_root(self):
        scenario = _small_scenario()
        layered = run_scenario(scenario, seed=9)
        base = run_scenario(scenario, seed=9, baseline=True)
        root = {r[2]: r[3] for r in layered.rows("summary")}["tree_root"]
        base_root = {r[2]: r[3] for r in base.rows("summary")}["tree_root"]
        assert root == base_root

    def test_baseline_ledger_is_heavier_than_rollup(self):
        scenario = _small_scenario()
        layered = run_scenario(scenario, seed=9)
        base = run_scenario(scenario, seed=9, baseline=True)
        bytes_layered = {r[2]: r[3] for r in layered.rows("summary")}["ledger_bytes"]
        bytes_base = {r[2]: r[3] for r in base.rows("summary")}["ledger_bytes"]
        assert bytes_base > bytes_layered

    def test_metrics_tables_are_populated(self):
        sink = run_scenario(_small_scenario(), seed=2)
        for table in ("reputation", "ledger", "rollups", "latency",
                      "settlements", "summary"):
            assert sink.rows(table), table

    def test_settlements_conserve_the_deposits(self):
        sink = run_scenario(_small_scenario(), seed=2)
        for row in sink.rows("settlements"):
            _, _, _, rounds, fees, refund, digests = row
            assert digests <= rounds
            assert fees >= 0.0 and refund >= 0.0

    def test_reputation_rows_carry_seed_and_scenario(self):
        sink = run_scenario(_small_scenario(), seed=2)
        row = sink.rows("reputation")[0]
        assert row[0] == 2 and row[1] == "test"


SCN_TEXT = """
[population]
clients = 6
providers = 8
levels = 4
level_probs = 0.95, 0.85, 0.7, 0.55
client_types = 2
sensitivities = 0.2, 0.6
strictness = 0.0, 0.08

[run]
rounds = 10
seed = 4
scenario_id = cli-test
"""


class TestCli:
    def _write_scenario(self, tmp_path, text=SCN_TEXT):
        path = tmp_path / "case.scn"
        path.write_text(text)
        return path

    def test_run_writes_expected_csvs(self, tmp_path):
        path = self._write_scenario(tmp_path)
        out = tmp_path / "out"
        result = CliRunner().invoke(main, ["run", str(path), "--out", str(out)])
        assert result.exit_code == 0, result.output
        names = {p.name for p in out.iterdir()}
        assert {"reputation.csv", "ledger.csv", "latency.csv"} <= names

    def test_run_json_format(self, tmp_path):
        path = self._write_scenario(tmp_path)
        out = tmp_path / "out"
        result = CliRunner().invoke(main, ["run", str(path), "--out", str(out),
                                           "--format", "json"])
        assert result.exit_code == 0, result.output
        assert (out / "metrics.json").exists()

    def test_seed_and_rounds_overrides(self, tmp_path):
        path = self._write_scenario(tmp_path)
        out = tmp_path / "out"
        result = CliRunner().invoke(main, ["run", str(path), "--seed", "99",
                                           "--rounds", "5", "--out", str(out)])
        assert result.exit_code == 0
        header, first = (out / "reputation.csv").read_text().splitlines()[:2]
        assert first.startswith("99,")

    def test_compare_prints_storage_saving(self, tmp_path):
        path = self._write_scenario(tmp_path)
        result = CliRunner().invoke(main, ["compare", str(path), "--out",
                                           str(tmp_path / "cmp")])
        assert result.exit_code == 0, result.output
        assert "storage saving" in result.output

    def test_attack_subcommand_runs(self, tmp_path):
        path = self._write_scenario(tmp_path)
        result = CliRunner().invoke(main, ["attack", "flooding", str(path),
                                           "--out", str(tmp_path / "atk"),
                                           "--rounds", "8"])
        assert result.exit_code == 0, result.output

    def test_channel_stress_subcommand(self, tmp_path):
        path = self._write_scenario(tmp_path)
        result = CliRunner().invoke(main, ["channel-stress", str(path),
                                           "--rounds", "60",
                                           "--out", str(tmp_path / "stress")])
        assert result.exit_code == 0, result.output
        assert (tmp_path / "stress" / "atomicity.csv").exists()

    def test_contract_sweep_subcommand(self, tmp_path):
        path = self._write_scenario(tmp_path)
        result = CliRunner().invoke(main, ["contract-sweep", str(path),
                                           "--states", "3",
                                           "--out", str(tmp_path / "sweep")])
        assert result.exit_code == 0, result.output
        text = (tmp_path / "sweep" / "contracts.csv").read_text()
        assert text.splitlines()[0] == \
            "seed,scenario,state_id,mu_s,f_s,c_star,f_e_star,u_c,u_sp,feasible"

    def test_missing_file_is_a_usage_error(self, tmp_path):
        result = CliRunner().invoke(main, ["run", str(tmp_path / "absent.scn")])
        assert result.exit_code == 2

    def test_malformed_scenario_is_a_domain_error(self, tmp_path):
        path = tmp_path / "bad.scn"
        path.write_text("[run]\nrounds = never\n")
        result = CliRunner().invoke(main, ["run", str(path)])
        assert result.exit_code == 1
        assert "line 2" in result.output
