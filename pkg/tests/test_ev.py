"""EV exchange: objectives, welfare optimum, iterative auction, hybrid."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridswap.errors import DomainError, InfeasibleError, InputError
from gridswap.ev import (
    ChargingEV,
    DischargingEV,
    HybridBuyer,
    HybridScenario,
    HybridSeller,
    _project_capped_sum,
    _project_feasible,
    apply_disconnection,
    compare_hybrid,
    discharge_cost,
    is_individually_rational,
    run_iterative_auction,
    satisfaction,
    simulate_trading,
    solve_social_welfare,
    welfare,
)

from oracles import bisect_scalar_root, ev_welfare_of


def charger(cid="c", w=1.0, c_min=0.0, c_max=math.inf):
    return ChargingEV(cid, w=w, c_min=c_min, c_max=c_max)


def discharger(did="d", l1=0.1, l2=0.05, d_max=20.0):
    return DischargingEV(did, l1=l1, l2=l2, d_max=d_max)


class TestObjectives:
    def test_satisfaction_at_exact_minimum(self):
        ev = charger(w=2.0, c_min=5.0)
        assert satisfaction(ev, [5.0], eta=1.0) == pytest.approx(0.0)

    def test_satisfaction_direct_substitution(self):
        ev = charger(w=1.0, c_min=5.0)
        assert satisfaction(ev, [4.0, 6.0], eta=0.9) == pytest.approx(math.log(5.0))

    def test_satisfaction_domain_error(self):
        ev = charger(w=1.0, c_min=5.0)
        with pytest.raises(DomainError):
            satisfaction(ev, [8.0], eta=0.5)

    def test_discharge_cost_quadratic(self):
        assert discharge_cost(discharger(l1=1.0, l2=0.0), [2.0, 3.0]) == pytest.approx(13.0)

    def test_discharge_cost_linear(self):
        assert discharge_cost(discharger(l1=0.0, l2=1.0), [2.0, 3.0]) == pytest.approx(5.0)

    def test_discharge_cost_zero_activity(self):
        assert discharge_cost(discharger(), [0.0, 0.0]) == 0.0

    def test_discharge_cost_rejects_negative(self):
        with pytest.raises(InputError):
            discharge_cost(discharger(), [-1.0])

    def test_ev_validation(self):
        with pytest.raises(InputError):
            ChargingEV("x", w=0.0, c_min=0.0)
        with pytest.raises(InputError):
            ChargingEV("x", w=1.0, c_min=5.0, c_max=4.0)
        with pytest.raises(InputError):
            DischargingEV("x", l1=0.0, l2=0.0, d_max=5.0)


class TestProjection:
    def test_capped_sum_simple(self):
        x = _project_capped_sum(np.array([2.0, -1.0]), 0.0, 10.0)
        assert x == pytest.approx([2.0, 0.0])

    def test_capped_sum_hits_upper(self):
        x = _project_capped_sum(np.array([3.0, 3.0]), 0.0, 4.0)
        assert x.sum() == pytest.approx(4.0)
        assert x == pytest.approx([2.0, 2.0])

    def test_capped_sum_raises_to_lower(self):
        x = _project_capped_sum(np.array([0.0, 1.0]), 3.0, 10.0)
        assert x.sum() == pytest.approx(3.0)
        assert x == pytest.approx([1.0, 2.0])

    @settings(max_examples=200, deadline=None)
    @given(
        y=st.lists(st.floats(-8, 8, allow_nan=False), min_size=1, max_size=6),
        bounds=st.tuples(st.floats(0, 5), st.floats(0, 5)),
    )
    def test_capped_sum_feasible_and_idempotent(self, y, bounds):
        lo, hi = sorted(bounds)
        x = _project_capped_sum(np.array(y), lo, hi)
        assert np.all(x >= -1e-12)
        assert lo - 1e-9 <= x.sum() <= hi + 1e-9
        again = _project_capped_sum(x, lo, hi)
        assert np.allclose(x, again, atol=1e-9)

    def test_capped_sum_optimality_against_samples(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            y = rng.normal(0, 3, size=4)
            lo, hi = sorted(rng.uniform(0, 6, size=2))
            x = _project_capped_sum(y, lo, hi)
            assert np.all(x >= -1e-12)
            assert lo - 1e-9 <= x.sum() <= hi + 1e-9
            dist = np.sum((x - y) ** 2)
            for _ in range(60):
                z = np.abs(rng.normal(0, 3, size=4))
                s = z.sum()
                if s > 0:
                    z *= rng.uniform(lo, hi) / s
                assert dist <= np.sum((z - y) ** 2) + 1e-9

    def test_feasible_projection_satisfies_constraints(self):
        rng = np.random.default_rng(7)
        row_caps = np.array([10.0, 8.0])
        col_lo = np.array([4.0, 3.0])
        col_hi = np.array([9.0, 7.0])
        for _ in range(50):
            y = rng.normal(0, 5, size=(2, 2))
            x = _project_feasible(y, row_caps, col_lo, col_hi)
            assert np.all(x >= -1e-9)
            assert np.all(x.sum(axis=1) <= row_caps + 1e-9)
            assert np.all(x.sum(axis=0) >= col_lo - 1e-8)
            assert np.all(x.sum(axis=0) <= col_hi + 1e-8)


class TestSocialWelfare:
    def test_symmetric_instance_symmetric_solution(self):
        chargers = [charger("c1", w=2.0, c_min=5.0, c_max=14.0),
                    charger("c2", w=2.0, c_min=5.0, c_max=14.0)]
        dischargers = [discharger("d1", 0.05, 0.02, 15.0),
                       discharger("d2", 0.05, 0.02, 15.0)]
        alloc, _ = solve_social_welfare(chargers, dischargers, eta=0.9)
        assert alloc.sent[0, 0] == pytest.approx(alloc.sent[1, 1], abs=1e-5)
        assert alloc.sent[0, 1] == pytest.approx(alloc.sent[1, 0], abs=1e-5)

    def test_scalar_case_matches_stationarity_bisection(self):
        # single pair: w/(d+1) = 2*l1*d + l2 at the optimum
        chargers = [charger("c", w=1.0, c_min=0.0)]
        dischargers = [discharger("d", l1=0.1, l2=0.05, d_max=50.0)]
        alloc, best = solve_social_welfare(chargers, dischargers, eta=1.0)
        root = bisect_scalar_root(lambda d: 1.0 / (d + 1.0) - 0.2 * d - 0.05, 0.0, 50.0)
        assert alloc.sent[0, 0] == pytest.approx(root, abs=1e-4)
        assert best == pytest.approx(math.log(root + 1) - 0.1 * root**2 - 0.05 * root,
                                     abs=1e-8)

    def test_welfare_beats_random_feasible_allocations(self):
        rng = np.random.default_rng(11)
        chargers = [charger("c1", 1.8, 6.0, 15.0), charger("c2", 1.1, 5.0, 13.0)]
        dischargers = [discharger("d1", 0.03, 0.02, 18.0), discharger("d2", 0.05, 0.04, 12.0)]
        alloc, best = solve_social_welfare(chargers, dischargers, eta=0.9)
        from gridswap.ev import _polytope

        row_caps, col_lo, col_hi = _polytope(chargers, dischargers, 0.9)
        for _ in range(1000):
            d = _project_feasible(rng.uniform(0, 10, size=(2, 2)), row_caps, col_lo, col_hi)
            assert welfare(d, chargers, dischargers, 0.9) <= best + 1e-6

    def test_monotone_in_willingness(self):
        chargers = [charger("c1", 1.0, 5.0, 16.0), charger("c2", 1.0, 5.0, 16.0)]
        dischargers = [discharger("d1", 0.02, 0.02, 15.0), discharger("d2", 0.03, 0.03, 15.0)]
        alloc, _ = solve_social_welfare(chargers, dischargers, eta=0.9)
        base = alloc.delivered_per_charger()[0]
        boosted = [charger("c1", 1.5, 5.0, 16.0), chargers[1]]
        alloc2, _ = solve_social_welfare(boosted, dischargers, eta=0.9)
        assert alloc2.delivered_per_charger()[0] >= base - 1e-6

    def test_energy_conservation(self):
        chargers = [charger("c1", 1.0, 4.0, 12.0)]
        dischargers = [discharger("d1", 0.05, 0.05, 10.0)]
        alloc, _ = solve_social_welfare(chargers, dischargers, eta=0.9)
        assert np.allclose(alloc.delivered, 0.9 * alloc.sent.T)

    def test_infeasible_names_constraint(self):
        chargers = [charger("c", 1.0, c_min=30.0)]
        dischargers = [discharger("d", d_max=10.0)]
        with pytest.raises(InfeasibleError, match="c_min"):
            solve_social_welfare(chargers, dischargers, eta=0.9)

    def test_oracle_welfare_helper_agrees(self):
        chargers = [charger("c1", 1.8, 6.0, 15.0)]
        dischargers = [discharger("d1", 0.03, 0.02, 18.0)]
        alloc, best = solve_social_welfare(chargers, dischargers, eta=0.9)
        assert ev_welfare_of(alloc.sent, chargers, dischargers, 0.9) == pytest.approx(best)


class TestIterativeAuction:
    def _instance(self):
        chargers = [charger("c1", 1.9, 6.0, 15.0), charger("c2", 1.4, 5.0, 14.0)]
        dischargers = [discharger("d1", 0.03, 0.02, 16.0), discharger("d2", 0.045, 0.03, 13.0)]
        return chargers, dischargers

    def test_symmetric_prices_for_symmetric_agents(self):
        chargers = [charger("c1", 1.5, 5.0, 14.0), charger("c2", 1.5, 5.0, 14.0)]
        dischargers = [discharger("d1", 0.04, 0.02, 15.0), discharger("d2", 0.04, 0.02, 15.0)]
        _, result = run_iterative_auction(chargers, dischargers, eta=0.9)
        assert result.trace.converged
        final_bids = result.trace.bid_history[-1]
        assert final_bids[0] == pytest.approx(final_bids[1], abs=1e-6)

    def test_converges_to_solver_welfare(self):
        chargers, dischargers = self._instance()
        eps = 1e-4
        alloc, result = run_iterative_auction(chargers, dischargers, eta=0.9, eps=eps)
        assert result.trace.converged
        _, best = solve_social_welfare(chargers, dischargers, eta=0.9)
        reached = welfare(alloc.sent, chargers, dischargers, 0.9)
        assert abs(best - reached) <= 10 * eps

    def test_iteration_cap_flags_nonconverged(self):
        chargers, dischargers = self._instance()
        _, result = run_iterative_auction(chargers, dischargers, eta=0.9,
                                          eps=1e-4, max_iter=1)
        assert not result.trace.converged
        assert result.trace.iterations == 1

    def test_fixed_point_prices_match_marginals(self):
        chargers, dischargers = self._instance()
        eps = 1e-5
        alloc, result = run_iterative_auction(chargers, dischargers, eta=0.9, eps=eps)
        assert result.trace.converged
        from gridswap.ev import _marginal_asks, _marginal_bids

        delivered = 0.9 * alloc.sent.sum(axis=0)
        assert np.max(np.abs(
            result.trace.bid_history[-1] - _marginal_bids(chargers, delivered))) < eps
        assert np.max(np.abs(
            result.trace.ask_history[-1] - _marginal_asks(dischargers, alloc.sent))) < eps

    def test_weak_budget_balance_and_ir(self):
        chargers, dischargers = self._instance()
        _, result = run_iterative_auction(chargers, dischargers, eta=0.9)
        assert result.settlement.collected_minus_paid() >= -1e-9
        assert is_individually_rational(result)

    def test_welfare_history_recorded(self):
        chargers, dischargers = self._instance()
        _, result = run_iterative_auction(chargers, dischargers, eta=0.9)
        assert len(result.trace.welfare_history) == result.trace.iterations


class TestDisconnection:
    def _result(self):
        chargers = [charger("c1", 1.9, 6.0, 15.0), charger("c2", 1.4, 5.0, 14.0)]
        dischargers = [discharger("d1", 0.03, 0.02, 16.0), discharger("d2", 0.045, 0.03, 13.0)]
        _, result = run_iterative_auction(chargers, dischargers, eta=0.9)
        return result

    def test_penalty_is_rate_times_allocation(self):
        result = self._result()
        amount = float(result.allocation.sent_per_discharger()[0])
        _, penalty = apply_disconnection(result, "d1", penalty_rate=0.02)
        assert penalty == pytest.approx(0.02 * amount)

    def test_zero_allocation_zero_penalty(self):
        chargers = [charger("c1", 1.5, 0.0, 6.0)]
        dischargers = [discharger("d1", 0.01, 0.01, 30.0),
                       DischargingEV("dx", 0.0, 5.0, 10.0)]  # priced out
        _, result = run_iterative_auction(chargers, dischargers, eta=0.9)
        assert result.allocation.sent_per_discharger()[1] == pytest.approx(0.0, abs=1e-6)
        _, penalty = apply_disconnection(result, "dx", penalty_rate=0.02)
        assert penalty == pytest.approx(0.0, abs=1e-7)

    def test_rerun_equals_fresh_auction(self):
        result = self._result()
        rerun, _ = apply_disconnection(result, "d2")
        fresh_alloc, fresh = run_iterative_auction(
            result.chargers, [d for d in result.dischargers if d.id != "d2"],
            eta=0.9)
        assert np.allclose(rerun.allocation.sent, fresh_alloc.sent, atol=1e-12)

    def test_departing_charger_pays_on_delivered_energy(self):
        result = self._result()
        delivered = float(result.allocation.delivered_per_charger()[0])
        rerun, penalty = apply_disconnection(result, "c1", penalty_rate=0.05)
        assert penalty == pytest.approx(0.05 * delivered)
        assert [c.id for c in rerun.chargers] == ["c2"]

    def test_unknown_agent_rejected(self):
        with pytest.raises(InputError):
            apply_disconnection(self._result(), "ghost")


class TestHybridComparison:
    def _scenario(self):
        buyers = (HybridBuyer("b1", 9.0), HybridBuyer("b2", 9.0))
        sellers = (HybridSeller("s1", 20.0, 0.15), HybridSeller("s2", 20.0, 0.15))
        return HybridScenario(buyers, sellers)

    def test_cheap_grid_dominates_buying(self):
        sc = self._scenario()
        row = compare_hybrid(sc, grid_sell_out_price=0.05, grid_buy_back_price=0.01)
        assert row["hybrid"]["avg_buying_price"] == pytest.approx(0.05)
        # every delivered kWh came from the grid
        assert all(v == 0.0 for v in row["hybrid"]["seller_receipts"].values())

    def test_expensive_grid_matches_p2p_prices(self):
        sc = self._scenario()
        row = compare_hybrid(sc, grid_sell_out_price=0.90, grid_buy_back_price=0.01)
        assert row["hybrid"]["avg_buying_price"] == pytest.approx(
            row["p2p"]["avg_buying_price"])

    def test_transmission_ratio_seven_ninths(self):
        sc = self._scenario()
        row = compare_hybrid(sc, grid_sell_out_price=0.90, grid_buy_back_price=0.01)
        p2p_rate = row["p2p"]["transmitted_kwh"] / row["p2p"]["delivered_kwh"]
        hybrid_rate = row["hybrid"]["transmitted_kwh"] / row["hybrid"]["delivered_kwh"]
        assert p2p_rate / hybrid_rate == pytest.approx(7.0 / 9.0, abs=1e-12)

    def test_sellers_divert_to_generous_grid(self):
        sc = self._scenario()
        out = simulate_trading(sc.buyers, sc.sellers, eta=0.7,
                               grid_sell_price=0.50, grid_buy_price=0.40)
        assert out["avg_selling_price"] == pytest.approx(0.40)
        assert out["avg_buying_price"] == pytest.approx(0.50)

    def test_p2p_supply_shortage_reported(self):
        buyers = (HybridBuyer("b", 100.0),)
        sellers = (HybridSeller("s", 10.0, 0.10),)
        out = simulate_trading(buyers, sellers, eta=0.9)
        assert out["unserved_kwh"] == pytest.approx(100.0 - 9.0)


class TestPopulationFile:
    def test_round_trip(self, tmp_path):
        from gridswap.ev import read_ev_population_csv

        path = tmp_path / "pop.csv"
        path.write_text(
            "id,role,w,l1,l2,c_min,c_max,d_max\n"
            "c1,charging,2.0,,,5,14,\n"
            "c2,charging,1.1,,,6,,\n"          # open-ended maximum demand
            "d1,discharging,,0.04,0.02,,,16\n"
        )
        chargers, dischargers = read_ev_population_csv(path)
        assert [c.id for c in chargers] == ["c1", "c2"]
        assert chargers[1].c_max == math.inf
        assert dischargers[0].d_max == 16.0

    def test_unknown_role_rejected(self, tmp_path):
        from gridswap.ev import read_ev_population_csv

        path = tmp_path / "pop.csv"
        path.write_text("id,role,w,l1,l2,c_min,c_max,d_max\nx,parked,1,,,,,\n")
        with pytest.raises(InputError, match="parked"):
            read_ev_population_csv(path)

    def test_missing_field_names_line(self, tmp_path):
        from gridswap.ev import read_ev_population_csv

        path = tmp_path / "pop.csv"
        path.write_text("id,role,w,l1,l2,c_min,c_max,d_max\nc1,charging,,,,5,14,\n")
        with pytest.raises(InputError, match=":2"):
            read_ev_population_csv(path)
