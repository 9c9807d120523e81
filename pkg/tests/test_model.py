import numpy as np
import pytest

from gridmarket.model import (
    MarketInstance,
    TradeState,
    ViolationKind,
    baseline_state,
    check_feasible,
    compute_trade_mask,
    der_gain,
    der_revenue,
    edge_trades,
    evaluate_objectives,
    load_expense,
    load_gain,
    pcc_distance,
    rationality_check,
    report_distance,
    state_from_trades,
    validate_instance,
)
from gridmarket.transform import build_layout
from conftest import random_instance


def _one_trade(inst, price, traded, disc):
    return state_from_trades(inst, [[price]], [[traded]], [[disc]])


class TestValidateInstance:
    def test_valid(self, single_pair, two_by_two):
        assert validate_instance(single_pair) == []
        assert validate_instance(two_by_two) == []

    def test_discount_cap_out_of_range(self, single_pair):
        violations = validate_instance(single_pair.with_discount_cap(1.5))
        assert [v.kind for v in violations] == [ViolationKind.DISCOUNT_CAP]
        assert "discount_cap" in str(violations[0])

    def test_target_exceeds_demand(self, single_pair):
        inst = MarketInstance.create([10.0], [5.0], [20.0], [50.0], [80.0], 0.3, [[6.0]])
        violations = validate_instance(inst)
        assert any(v.kind == ViolationKind.TARGET and v.indices == (1,) for v in violations)

    def test_length_mismatch(self):
        inst = MarketInstance.create([10.0, 5.0], [5.0], [20.0], [50.0], [80.0, 80.0], 0.3, [[1.0, 1.0]])
        violations = validate_instance(inst)
        assert any("pcc_buy_price" in str(v) for v in violations)

    def test_nonpositive_price(self):
        inst = MarketInstance.create([10.0], [5.0], [0.0], [50.0], [80.0], 0.3, [[1.0]])
        assert any("must be positive" in str(v) for v in validate_instance(inst))

    def test_bad_region(self):
        inst = MarketInstance.create([10.0], [5.0], [20.0], [50.0], [80.0], 0.3, [[1.0]], region_of_agent=[1, 0])
        assert [v.kind for v in validate_instance(inst)] == [ViolationKind.REGION]


class TestObjectives:
    def test_der_revenue(self, single_pair):
        state = _one_trade(single_pair, 30.0, 4.0, 3.0)
        assert der_revenue(single_pair, state, 0) == pytest.approx(30.0 * 4.0 + 6.0 * 20.0)

    def test_load_expense(self, single_pair):
        state = _one_trade(single_pair, 30.0, 4.0, 3.0)
        assert load_expense(single_pair, state, 0) == pytest.approx(27.0 * 4.0 + 1.0 * 50.0)

    def test_pcc_distance(self, single_pair):
        state = _one_trade(single_pair, 30.0, 4.0, 3.0)
        assert pcc_distance(single_pair, state, 0) == pytest.approx(1.0)
        assert report_distance(single_pair, state) == pytest.approx(1.0)

    def test_index_out_of_range(self, single_pair):
        state = baseline_state(single_pair)
        with pytest.raises(IndexError):
            der_revenue(single_pair, state, 1)
        with pytest.raises(IndexError):
            load_expense(single_pair, state, -1)

    def test_evaluate_objectives_baseline(self, two_by_two):
        values = evaluate_objectives(two_by_two, baseline_state(two_by_two))
        np.testing.assert_allclose(values.der_revenue, [800.0, 800.0])
        np.testing.assert_allclose(values.load_expense, [5000.0, 5000.0])
        np.testing.assert_allclose(values.pcc_distance, [1000.0, 1000.0])

    def test_der_revenue_is_indefinite(self):
        # U = p h + (E - h) gamma has Hessian [[0, 1], [1, 0]] in (p, h)
        inst = MarketInstance.create([10.0], [10.0], [20.0], [50.0], [80.0], 0.3, [[0.0]])

        def revenue(p, h):
            return der_revenue(inst, _one_trade(inst, p, h, 0.0), 0)

        p0, h0, step = 40.0, 4.0, 1e-3
        for z, expected in [((1.0, 1.0), 2.0), ((1.0, -1.0), -2.0)]:
            dp, dh = z[0] * step, z[1] * step
            second = (revenue(p0 + dp, h0 + dh) - 2 * revenue(p0, h0) + revenue(p0 - dp, h0 - dh)) / step ** 2
            assert second == pytest.approx(expected, abs=1e-6)


class TestTradeMask:
    def test_active_window(self, single_pair):
        assert compute_trade_mask(single_pair).pairs() == [(0, 0)]

    def test_inactive_when_buy_price_above_window(self):
        inst = MarketInstance.create([10.0], [5.0], [80.0], [50.0], [100.0], 0.3, [[5.0]])
        assert compute_trade_mask(inst).count() == 0

    def test_alpha_one_uses_price_cap(self):
        inst = MarketInstance.create([10.0], [5.0], [90.0], [50.0], [100.0], 1.0, [[5.0]])
        assert inst.price_window(0, 0) == (90.0, 100.0)
        assert compute_trade_mask(inst).count() == 1


class TestFeasibility:
    def test_baseline_is_feasible_and_rational(self, two_by_two):
        state = baseline_state(two_by_two)
        assert check_feasible(two_by_two, state) == []
        assert rationality_check(two_by_two, state) == []

    def test_offer_exceeds_surplus(self, single_pair):
        messages = [str(v) for v in check_feasible(single_pair, _one_trade(single_pair, 30.0, 12.0, 0.0))]
        assert "offer exceeds surplus for DER 1" in messages
        assert "peer demand exceeds need for load 1" in messages

    def test_price_cap(self, single_pair):
        messages = [str(v) for v in check_feasible(single_pair, _one_trade(single_pair, 90.0, 1.0, 0.0))]
        assert messages == ["price cap (1,1)"]

    def test_discount_cap(self, single_pair):
        messages = [str(v) for v in check_feasible(single_pair, _one_trade(single_pair, 40.0, 1.0, 20.0))]
        assert messages == ["discount cap (1,1)"]

    def test_consistency(self, single_pair):
        state = _one_trade(single_pair, 40.0, 2.0, 0.0)
        broken = TradeState(
            prices=state.prices,
            alloc=state.alloc,
            dem=np.array([[2.0, 3.0]]),
            disc=state.disc,
        )
        assert "consistency (1,1)" in [str(v) for v in check_feasible(single_pair, broken)]

    def test_price_below_buy_price(self, single_pair):
        violations = rationality_check(single_pair, _one_trade(single_pair, 10.0, 2.0, 0.0))
        messages = [str(v) for v in violations]
        assert "price below pcc buy price at (1,1)" in messages
        assert "DER 1 earns less than selling to the PCC" in messages

    def test_discounted_price_above_sell_price(self, single_pair):
        messages = [str(v) for v in rationality_check(single_pair, _one_trade(single_pair, 70.0, 2.0, 0.0))]
        assert "discounted price above pcc sell price at (1,1)" in messages

    def test_trade_on_inactive_pair(self):
        inst = MarketInstance.create([10.0], [5.0], [80.0], [50.0], [100.0], 0.3, [[5.0]])
        kinds = [v.kind for v in rationality_check(inst, _one_trade(inst, 85.0, 1.0, 25.0))]
        assert ViolationKind.INACTIVE_TRADE in kinds

    def test_window_edge_trades_pass_and_are_listed(self, single_pair):
        state = _one_trade(single_pair, 20.0, 2.0, 0.0)
        assert rationality_check(single_pair, state) == []
        assert edge_trades(single_pair, state) == [(1, 1)]
        assert edge_trades(single_pair, _one_trade(single_pair, 40.0, 2.0, 0.0)) == []

    def test_feasible_set_is_convex(self):
        rng = np.random.default_rng(7)
        inst = random_instance(rng, 2, 2)
        layout = build_layout(inst, floor=0.0)
        for _ in range(300):
            a = layout.to_state(inst, layout.project(rng.uniform(-10, 120, layout.size)), zero_below=0.0)
            b = layout.to_state(inst, layout.project(rng.uniform(-10, 120, layout.size)), zero_below=0.0)
            t = rng.uniform()
            mixed = state_from_trades(
                inst,
                t * a.prices + (1 - t) * b.prices,
                t * a.traded() + (1 - t) * b.traded(),
                t * a.disc + (1 - t) * b.disc,
            )
            assert check_feasible(inst, mixed) == []


TRIALS = 10 ** 4


def _market(rng, surplus=None, demand=None):
    """2x2 market; pass a huge surplus or demand to keep that side out of the way."""
    return MarketInstance.create(
        surplus=rng.uniform(5.0, 50.0, 2) if surplus is None else surplus,
        demand=rng.uniform(5.0, 50.0, 2) if demand is None else demand,
        pcc_buy_price=[20.0, 20.0],
        pcc_sell_price=[50.0, 50.0],
        price_cap=rng.uniform(60.0, 120.0, 2),
        discount_cap=rng.uniform(0.0, 1.0),
        target_demand=np.zeros((2, 2)),
    )


def _mix(rng, a, b):
    t = rng.uniform()
    return t * a + (1 - t) * b


class TestDomainConvexity:
    def test_prices(self):
        rng = np.random.default_rng(21)
        inst = _market(rng)
        none = np.zeros((2, 2))
        for _ in range(TRIALS):
            a = rng.uniform(1e-3, 1.0, (2, 2)) * inst.price_cap[:, None]
            b = rng.uniform(1e-3, 1.0, (2, 2)) * inst.price_cap[:, None]
            assert check_feasible(inst, state_from_trades(inst, _mix(rng, a, b), none, none)) == []

    def test_der_allocations(self):
        rng = np.random.default_rng(22)
        inst = _market(rng, demand=[1e6, 1e6])
        prices = np.full((2, 2), 40.0)
        for _ in range(TRIALS):
            # rows drawn on the simplex, slack column dropped
            a = rng.dirichlet(np.ones(3), 2)[:, 1:] * inst.surplus[:, None]
            b = rng.dirichlet(np.ones(3), 2)[:, 1:] * inst.surplus[:, None]
            state = state_from_trades(inst, prices, _mix(rng, a, b), np.zeros((2, 2)))
            assert check_feasible(inst, state) == []

    def test_load_demands(self):
        rng = np.random.default_rng(23)
        inst = _market(rng, surplus=[1e6, 1e6])
        prices = np.full((2, 2), 40.0)
        for _ in range(TRIALS):
            a = (rng.dirichlet(np.ones(3), 2)[:, 1:] * inst.demand[:, None]).T
            b = (rng.dirichlet(np.ones(3), 2)[:, 1:] * inst.demand[:, None]).T
            state = state_from_trades(inst, prices, _mix(rng, a, b), np.zeros((2, 2)))
            assert check_feasible(inst, state) == []

    def test_discounts(self):
        rng = np.random.default_rng(24)
        inst = _market(rng)
        none = np.zeros((2, 2))
        for _ in range(TRIALS):
            pa = rng.uniform(1e-3, 1.0, (2, 2)) * inst.price_cap[:, None]
            pb = rng.uniform(1e-3, 1.0, (2, 2)) * inst.price_cap[:, None]
            sa = rng.uniform(0.0, inst.discount_cap, (2, 2)) * pa.T
            sb = rng.uniform(0.0, inst.discount_cap, (2, 2)) * pb.T
            t = rng.uniform()
            state = state_from_trades(inst, t * pa + (1 - t) * pb, none, t * sa + (1 - t) * sb)
            assert check_feasible(inst, state) == []


class TestMaskSoundness:
    def test_rerouting_an_inactive_trade_helps_the_losing_side(self):
        rng = np.random.default_rng(25)
        checked = 0
        while checked < 1000:
            E, D = rng.uniform(5.0, 50.0, 2)
            inst = MarketInstance.create(
                [E], [D], [rng.uniform(40.0, 100.0)], [50.0], [rng.uniform(30.0, 120.0)], rng.uniform(0.0, 0.4), [[0.0]])
            if compute_trade_mask(inst).active[0, 0]:
                continue
            p = rng.uniform(1.0, inst.price_cap[0])
            s = rng.uniform(0.0, inst.discount_cap) * p
            d = rng.uniform(0.1, min(E, D))
            traded, rerouted = _one_trade(inst, p, d, s), baseline_state(inst)
            if p < inst.pcc_buy_price[0]:
                assert der_revenue(inst, rerouted, 0) > der_revenue(inst, traded, 0)
            else:
                assert load_expense(inst, rerouted, 0) < load_expense(inst, traded, 0)
            checked += 1


class TestGains:
    def test_der_gain_doubles_revenue(self):
        inst = MarketInstance.create([5.0], [5.0], [20.0], [50.0], [80.0], 0.3, [[0.0]])
        assert der_gain(inst, _one_trade(inst, 40.0, 5.0, 0.0)) == pytest.approx(100.0)

    def test_load_gain(self):
        inst = MarketInstance.create([5.0], [5.0], [20.0], [50.0], [80.0], 0.3, [[0.0]])
        # expense drops from 250 to 200
        assert load_gain(inst, _one_trade(inst, 40.0, 5.0, 0.0)) == pytest.approx(20.0)

    def test_baseline_gains_are_zero(self, two_by_two):
        state = baseline_state(two_by_two)
        assert der_gain(two_by_two, state) == 0.0
        assert load_gain(two_by_two, state) == 0.0

    def test_zero_baseline_is_nan(self):
        inst = MarketInstance.create([0.0], [5.0], [20.0], [50.0], [80.0], 0.3, [[0.0]])
        assert np.isnan(der_gain(inst, baseline_state(inst)))
