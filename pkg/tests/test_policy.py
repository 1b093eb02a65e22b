"""Agents: schedule mechanics, table lookups, and baseline dominance."""

import math

import numpy as np
import pytest

from artifact.hjb import Grid, Policy
from artifact.market_core import MarketParams, MarketState, utility
from artifact.order_flow import make_path_seed, simulate_path
from artifact.policy import (Agent, DoNothingAgent, ImmediateExecutionAgent,
                             TablePolicyAgent, TwapAgent, on_signal, on_state)

PARAMS = MarketParams()


def _state(lam=0.0, q=0.0, halted=False):
    return MarketState(lam=lam, q=q, p=100.0, x=0.0, halted=halted)


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------

def test_do_nothing_agent_never_trades():
    agent = DoNothingAgent()
    assert agent.name == "do-nothing"
    assert agent.on_state(0.0, _state(q=-8.0)) == 0.0
    assert agent.on_signal(0.5, _state(q=-8.0), -1) == 0.0
    assert agent.next_impulse(0.0, 1.0, _state(q=-8.0)) is None


def test_immediate_agent_trades_the_clipped_gap():
    agent = ImmediateExecutionAgent(0.0, PARAMS)
    assert agent.on_state(0.0, _state(lam=0.0, q=-8.0)) == 8.0
    assert agent.on_state(0.3, _state(lam=0.0, q=3.0)) == -3.0
    assert agent.on_state(0.0, _state(lam=0.0, q=0.0)) == 0.0
    # at thin liquidity only the available headroom trades
    assert agent.on_state(0.0, _state(lam=-38.0, q=-8.0)) == 2.0
    assert agent.on_state(0.0, _state(lam=-38.0, q=5.0)) == -2.0
    assert agent.on_state(0.0, _state(lam=-40.0, q=5.0)) == 0.0


def test_twap_agent_schedule():
    agent = TwapAgent(0.0, -8.0, PARAMS)
    times = [t for t, _ in agent.schedule]
    lots = [v for _, v in agent.schedule]
    assert times[:7] == [pytest.approx(k / 8.0) for k in range(1, 8)]
    assert times[7] == pytest.approx(PARAMS.horizon * (1.0 - 1e-6))
    assert lots == [1.0] * 8
    sell = TwapAgent(0.0, 3.0, PARAMS)
    assert [v for _, v in sell.schedule] == [-1.0] * 3
    assert TwapAgent(0.0, 0.0, PARAMS).schedule == ()
    with pytest.raises(ValueError, match="whole number of lots"):
        TwapAgent(0.0, -2.5, PARAMS)


def test_twap_agent_next_impulse_windows():
    agent = TwapAgent(0.0, -8.0, PARAMS)
    state = _state(lam=0.0, q=-8.0)
    # the tick must fall strictly inside the window
    assert agent.next_impulse(0.0, 0.125, state) is None
    assert agent.next_impulse(0.0, 0.2, state) == (0.125, 1.0)
    assert agent.next_impulse(0.125, 0.3, state) == (0.25, 1.0)
    # once at target the remaining ticks are dropped
    assert agent.next_impulse(0.9, 1.0, _state(q=0.0)) is None
    # thin liquidity clips the lot
    t_k, lot = agent.next_impulse(0.0, 0.2, _state(lam=-40.0, q=-8.0))
    assert (t_k, lot) == (0.125, 0.0)


# ---------------------------------------------------------------------------
# table lookups against a hand-built policy
# ---------------------------------------------------------------------------

@pytest.fixture()
def toy_table():
    grid = Grid.from_params(PARAMS, d_t=0.25, d_lambda=40.0,
                            q_min=-2.0, q_max=2.0)
    n_t = grid.n_steps + 1
    gamma = np.zeros((n_t, grid.n_lambda, grid.n_q, 2))
    delta = np.zeros((n_t, grid.n_lambda, grid.n_q))
    # at half horizon (slice 2), liquidity node 0, inventory -2: buy one lot
    delta[2, 2, 0] = 1.0
    # same node at the floor row: stored trade larger than the headroom
    delta[2, 1, 0] = 2.0
    # quarter-to-go (slice 1), provision signal: buy two lots
    gamma[1, 2, 0, 1] = 2.0
    policy = Policy(grid=grid, gamma_star=gamma, delta_star=delta, meta={})
    return TablePolicyAgent(policy, PARAMS)


def test_table_agent_state_lookup_rounds_to_nodes(toy_table):
    assert toy_table.on_state(0.5, _state(lam=0.3, q=-2.0)) == 1.0
    # nearest-node rounding in every coordinate
    assert toy_table.on_state(0.45, _state(lam=-15.0, q=-1.8)) == 1.0
    assert toy_table.on_state(0.5, _state(lam=0.3, q=0.0)) == 0.0
    assert toy_table.on_state(0.5, _state(lam=40.0, q=-2.0)) == 0.0


def test_table_agent_clips_at_the_floor(toy_table):
    # stored trade is 2 lots but only half a lot of headroom remains
    assert toy_table.on_state(0.5, _state(lam=-39.5, q=-2.0)) == 0.5


def test_table_agent_signal_lookup(toy_table):
    assert toy_table.on_signal(0.75, _state(lam=0.3, q=-2.0), 1) == 2.0
    assert toy_table.on_signal(0.75, _state(lam=0.3, q=-2.0), -1) == 0.0
    assert toy_table.on_signal(0.5, _state(lam=0.3, q=-2.0), 1) == 0.0
    with pytest.raises(ValueError, match="signal z"):
        toy_table.on_signal(0.75, _state(), 0)


def test_table_agent_liquidates_at_and_past_the_horizon(toy_table):
    assert toy_table.on_state(1.0, _state(lam=0.0, q=-8.0)) == 8.0
    assert toy_table.on_state(1.2, _state(lam=0.0, q=3.0)) == -3.0
    # ... but still clipped at the floor
    assert toy_table.on_state(1.0, _state(lam=-39.5, q=-8.0)) == 0.5
    assert toy_table.on_signal(1.0, _state(lam=0.0, q=-8.0), -1) == 0.0


def test_table_agent_next_impulse_walks_the_ticks(toy_table):
    state = _state(lam=0.3, q=-2.0)
    assert toy_table.next_impulse(0.4, 0.9, state) == (0.5, 1.0)
    # strictly-after semantics: the tick at t_from itself is skipped
    assert toy_table.next_impulse(0.5, 0.9, state) is None
    # the window is open on the right
    assert toy_table.next_impulse(0.4, 0.5, state) is None
    assert toy_table.next_impulse(0.0, 1.0, _state(lam=0.3, q=2.0)) is None


def test_module_hooks_guard_the_halted_market(toy_table):
    live = _state(lam=0.3, q=-2.0)
    assert on_signal(toy_table, 0.75, live, 1) == 2.0
    assert on_state(toy_table, 0.5, live) == 1.0
    with pytest.raises(ValueError, match="halted"):
        on_signal(toy_table, 0.75, _state(halted=True), 1)


def test_agent_base_class_contract():
    agent = Agent()
    assert agent.on_signal(0.1, _state(), -1) == 0.0
    assert agent.on_state(0.1, _state()) == 0.0
    assert agent.next_impulse(0.0, 1.0, _state()) is None


# ---------------------------------------------------------------------------
# the solved policy dominates the reference baselines
# ---------------------------------------------------------------------------

def test_table_policy_dominates_baselines(bench_params, marks_signal,
                                          solved_signal, start_short):
    """Mean utility of the tabulated policy is not beaten by any baseline
    (paired seeds, three-standard-error margin)."""
    _, policy = solved_signal
    agents = {
        "table": TablePolicyAgent(policy, bench_params),
        "do-nothing": DoNothingAgent(),
        "immediate": ImmediateExecutionAgent(0.0, bench_params),
        "twap": TwapAgent(0.0, start_short.q, bench_params),
    }
    n = 1500
    utils = {name: np.empty(n) for name in agents}
    for i in range(n):
        seed = make_path_seed(11, i)
        for name, agent in agents.items():
            rec = simulate_path(bench_params, marks_signal, agent,
                                start_short, seed)
            utils[name][i] = utility(rec.terminal_wealth, bench_params.alpha)
    for name in ("do-nothing", "immediate", "twap"):
        diff = utils["table"] - utils[name]
        se = diff.std(ddof=1) / math.sqrt(n)
        assert diff.mean() >= -3.0 * se, (
            f"{name}: paired utility gain {diff.mean():.4g} "
            f"(se {se:.4g})")
