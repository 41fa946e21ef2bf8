"""Contract engine: utilities, best response, bilevel optimization, audit."""

import numpy as np
import pytest

from repchain.assessment import FeeModel, FusionParams
from repchain.contracts import (
    BestResponse,
    Contract,
    ContractEnv,
    Grid,
    MarketState,
    ProviderAction,
    assessment_for_actions,
    best_response,
    client_utility,
    moral_hazard_audit,
    optimize_contract,
    provider_utility,
    random_market_states,
    service_fee,
)


def _state(**overrides):
    defaults = dict(output_bytes=1e6, bandwidth=1e6, difficulty=50.0,
                    block_capacity=2000, client_count=16, avg_neighbors=4.0,
                    honest_prob=1.0, avg_queue_len=10.0, block_rate=0.2,
                    roi=0.2, compute_unit_cost=0.1, interaction_round=2)
    defaults.update(overrides)
    return MarketState(**defaults)


def _env(**overrides):
    defaults = dict(fee_model=FeeModel(0.05, 10.0, bands=2),
                    fusion=FusionParams(alpha=0.5, objective_bounds=(0.0, 1.0),
                                        subjective_bounds=(0.0, 1.0)),
                    subjective_score=0.8,
                    channel_active=True,
                    expected_assessment=0.5)
    defaults.update(overrides)
    return ContractEnv(**defaults)


class TestFeeAndUtilities:
    def test_service_fee_hand_example(self):
        assert service_fee(Contract(5.0, 10.0), 0.8) == pytest.approx(14.0)

    def test_flat_contract_ignores_assessment(self):
        assert service_fee(Contract(0.0, 10.0), 0.3) == 10.0
        assert service_fee(Contract(0.0, 10.0), 0.9) == 10.0

    def test_zero_assessment_pays_the_fixed_part(self):
        assert service_fee(Contract(5.0, 10.0), 0.0) == 10.0

    def test_client_utility_hand_example(self):
        # at expectation with 20% return on 14 paid: 1.2*14 - 14 = 2.8
        assert client_utility(14.0, 0.5, roi=0.2, expected=0.5) == pytest.approx(2.8)

    def test_break_even_at_expectation_without_return(self):
        assert client_utility(14.0, 0.5, roi=0.0, expected=0.5) == 0.0

    def test_below_expectation_is_a_loss_without_return(self):
        assert client_utility(14.0, 0.3, roi=0.0, expected=0.5) < 0.0

    def test_provider_utility_hand_example(self):
        # fee 14, channel fee 2 amortized over 2 rounds, r*c*T2 = r*D = 5
        state = _state(compute_unit_cost=0.1, difficulty=50.0,
                       interaction_round=2)
        value = provider_utility(Contract(0.0, 14.0), state, channel_fee=2.0,
                                 assessed=0.0)
        assert value == pytest.approx(14.0 - (1.0 + 5.0))

    def test_channel_cost_amortizes_away(self):
        state = _state(interaction_round=1_000_000)
        near = provider_utility(Contract(0.0, 14.0), state, 2.0, 0.0)
        assert near == pytest.approx(14.0 - 0.1 * 50.0, abs=1e-4)

    def test_compute_cost_is_invariant_in_the_rate(self):
        # r*c*(D/c) = r*D for any rate: the action's rate channel acts
        # only through the assessed quality
        state = _state()
        for rate in (1.0, 10.0, 77.0):
            t2 = state.difficulty / rate
            assert state.compute_unit_cost * rate * t2 == pytest.approx(
                state.compute_unit_cost * state.difficulty)


class TestBestResponse:
    def test_single_point_grid_returns_that_point(self):
        response = best_response(Contract(5.0, 10.0), _state(), _env(),
                                 Grid(20.0, 20.0, 1), Grid(1.0, 1.0, 1))
        assert response.action == ProviderAction(20.0, 1.0)

    def test_large_bonus_drives_to_max_compute(self):
        response = best_response(Contract(1000.0, 0.0), _state(), _env(),
                                 Grid(5.0, 50.0, 2), Grid(1.0, 1.0, 1))
        assert response.action.compute_rate == 50.0

    def test_no_bonus_minimizes_channel_fee(self):
        response = best_response(Contract(0.0, 10.0), _state(), _env(),
                                 Grid(5.0, 50.0, 4), Grid(0.1, 9.0, 5))
        assert response.action.channel_fee == 0.1

    def test_grid_refinement_never_decreases_utility(self):
        contract = Contract(8.0, 5.0)
        coarse = best_response(contract, _state(), _env(),
                               Grid(5.0, 50.0, 5), Grid(0.1, 9.0, 5))
        fine = best_response(contract, _state(), _env(),
                             Grid(5.0, 50.0, 9), Grid(0.1, 9.0, 9))
        assert fine.utility >= coarse.utility - 1e-12

    def test_tie_breaks_to_lowest_rate_then_fee(self):
        # a flat contract with fully amortized fees makes every action equal
        state = _state(interaction_round=10**9)
        response = best_response(Contract(0.0, 10.0), state, _env(),
                                 Grid(5.0, 50.0, 3), Grid(1.0, 9.0, 3))
        assert response.action.compute_rate == 5.0
        assert response.action.channel_fee == 1.0


def _flat_enumeration_oracle(state, env, bonus_grid, fixed_grid,
                             compute_grid, fee_grid, threshold):
    """Independent flat enumeration over every (contract, action) pair."""
    rates = compute_grid.values()
    fees = fee_grid.values()
    assessed = assessment_for_actions(state, env, rates, fees)
    best = None
    for mu in bonus_grid.values():
        for fs in fixed_grid.values():
            best_action = None
            for i, rate in enumerate(rates):
                for j, fee in enumerate(fees):
                    a = assessed[i, j]
                    i_m = fs + mu * a
                    u_sp = i_m - (fee / state.interaction_round
                                  + state.compute_unit_cost * state.difficulty)
                    key = (u_sp, -i, -j)
                    if best_action is None or key > best_action[0]:
                        best_action = (key, float(rate), float(fee),
                                       float(i_m), float(a), float(u_sp))
            _, rate, fee, i_m, a, u_sp = best_action
            if u_sp < threshold:
                continue
            u_c = (1.0 + state.roi) * i_m * (a / env.expected_assessment) - i_m
            key = (u_c, -mu, -fs)
            if best is None or key > best[0]:
                best = (key, Contract(float(mu), float(fs)),
                        ProviderAction(rate, fee), u_c, u_sp, a)
    return best


class TestOptimizer:
    def test_unbounded_threshold_never_binds(self):
        solution = optimize_contract(_state(), _env(), Grid(0.0, 20.0, 5),
                                     Grid(1.0, 20.0, 5), Grid(5.0, 50.0, 5),
                                     Grid(0.1, 9.0, 5), float("-inf"))
        assert solution.feasible

    def test_unreachable_threshold_is_infeasible(self):
        solution = optimize_contract(_state(), _env(), Grid(0.0, 2.0, 3),
                                     Grid(1.0, 2.0, 3), Grid(5.0, 50.0, 3),
                                     Grid(0.1, 9.0, 3), 1e9)
        assert not solution.feasible
        assert solution.contract is None

    def test_individual_rationality_holds_exactly(self):
        solution = optimize_contract(_state(), _env(), Grid(0.0, 20.0, 6),
                                     Grid(1.0, 20.0, 6), Grid(5.0, 50.0, 6),
                                     Grid(0.1, 9.0, 6), 5.0)
        assert solution.feasible
        assert solution.provider_utility >= 5.0

    def test_matches_flat_enumeration_exactly(self):
        state = _state()
        env = _env()
        grids = (Grid(0.0, 20.0, 5), Grid(1.0, 20.0, 5),
                 Grid(5.0, 50.0, 10), Grid(0.1, 9.0, 10))
        threshold = 3.0
        solution = optimize_contract(state, env, *grids, threshold)
        oracle = _flat_enumeration_oracle(state, env, *grids, threshold)
        assert solution.feasible and oracle is not None
        assert solution.contract == oracle[1]
        assert solution.action == oracle[2]
        assert solution.client_utility == oracle[3]
        assert solution.provider_utility == oracle[4]

    def test_oracle_equivalence_on_random_states(self):
        rng = np.random.default_rng(21)
        grids = (Grid(0.0, 20.0, 4), Grid(1.0, 20.0, 4),
                 Grid(5.0, 50.0, 6), Grid(0.1, 9.0, 6))
        for state in random_market_states(6, rng):
            env = _env(subjective_score=float(rng.uniform(0.2, 1.0)))
            threshold = float(rng.uniform(-5.0, 10.0))
            solution = optimize_contract(state, env, *grids, threshold)
            oracle = _flat_enumeration_oracle(state, env, *grids, threshold)
            if oracle is None:
                assert not solution.feasible
            else:
                assert solution.feasible
                assert solution.contract == oracle[1]
                assert solution.action == oracle[2]
                assert solution.client_utility == oracle[3]


class TestAudit:
    def test_self_deviation_is_zero_and_no_gain_anywhere(self):
        state = _state()
        env = _env()
        solution = optimize_contract(state, env, Grid(0.0, 20.0, 4),
                                     Grid(1.0, 20.0, 4), Grid(5.0, 50.0, 6),
                                     Grid(0.1, 9.0, 6), 0.0)
        report = moral_hazard_audit(solution.contract, state, env,
                                    Grid(5.0, 50.0, 6), Grid(0.1, 9.0, 6))
        assert report.max_delta == 0.0
        assert report.no_profitable_deviation
        best_rows = [row for row in report.rows if row.delta == 0.0]
        assert any(row.compute_rate == report.best.action.compute_rate
                   and row.channel_fee == report.best.action.channel_fee
                   for row in best_rows)

    def test_underinvestment_strictly_loses_when_quality_rises_with_compute(self):
        # active channel: latency depends on the rate alone, so the
        # assessment strictly increases with invested compute
        state = _state()
        env = _env(channel_active=True)
        contract = Contract(50.0, 5.0)
        report = moral_hazard_audit(contract, state, env,
                                    Grid(5.0, 50.0, 8), Grid(1.0, 1.0, 1))
        best_rate = report.best.action.compute_rate
        assert best_rate == 50.0
        for row in report.rows:
            if row.compute_rate < best_rate:
                assert row.delta < 0.0

    def test_surfaces_the_constant_compute_cost(self):
        state = _state()
        report = moral_hazard_audit(Contract(5.0, 5.0), state, _env(),
                                    Grid(5.0, 50.0, 3), Grid(0.1, 9.0, 3))
        assert report.compute_cost_constant == pytest.approx(
            state.compute_unit_cost * state.difficulty)


class TestGridAndStates:
    def test_grid_values(self):
        assert Grid(1.0, 3.0, 3).values().tolist() == [1.0, 2.0, 3.0]
        assert Grid(5.0, 9.0, 1).values().tolist() == [5.0]

    def test_random_states_are_valid_and_deterministic(self):
        a = random_market_states(5, np.random.default_rng(9))
        b = random_market_states(5, np.random.default_rng(9))
        assert a == b
        for state in a:
            assert state.interaction_round >= 1

    def test_market_state_rejects_nonpositive_components(self):
        from repchain.errors import DomainError

        with pytest.raises(DomainError):
            _state(bandwidth=0.0)
