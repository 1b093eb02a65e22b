"""Monte-Carlo evaluation: paired experiments, signal value, diagnostics.

Experiments simulate a set of agents over a common collection of seeded
paths: path ``i`` of every agent uses the same 128-bit stream key, so the
candidate event streams coincide and comparisons are paired.  Per-path
scalars are assembled in path order and every statistic is reduced
single-threaded from the assembled arrays, which makes results bit-identical
whatever the worker count.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .hjb import ValueSurface, interpolate_lambda
from .market_core import MarketParams, MarketState, utility
from .order_flow import MarkModel, PathRecord, make_path_seed, simulate_path

__all__ = [
    "EvalReport",
    "ConsistencyResult",
    "run_experiment",
    "signal_sharpe_ratio",
    "detect_speculation",
    "consistency_check",
    "report_to_dict",
    "write_report_json",
    "write_wealth_csv",
]


@dataclass
class EvalReport:
    """Summary of one agent's simulated wealth distribution."""

    agent: str
    n_sim: int
    base_seed: int
    wealth: np.ndarray
    mean: float
    variance: float            # population (1/n) variance
    speculation_fraction: float
    breaker_fraction: float
    histogram_edges: np.ndarray
    histogram_counts: np.ndarray
    config_echo: dict
    ssr: Optional[float] = None


@dataclass(frozen=True)
class ConsistencyResult:
    """Solver-versus-simulation agreement diagnostic."""

    passed: bool
    solver_value: float
    mc_mean: float
    mc_se: float
    abs_error: float
    tolerance: float


def detect_speculation(path: PathRecord, target_q: float = 0.0) -> bool:
    """Whether the path trades in both directions.

    Counts the executed signal- and state-based trades plus the implicit
    terminal liquidation of whatever inventory remains at the horizon
    (the execution programme always completes, by trade or by auction).
    A monotone execution towards the target never flags; any roundtrip
    does.
    """
    q_t = path.terminal_state.q
    bought = path.n_buy_trades > 0 or q_t < 0.0
    sold = path.n_sell_trades > 0 or q_t > 0.0
    return bought and sold


def _histogram(wealth: np.ndarray, bin_width: float):
    lo = math.floor(float(np.min(wealth)) / bin_width)
    hi = math.floor(float(np.max(wealth)) / bin_width) + 1
    edges = np.arange(lo, hi + 1) * bin_width
    counts, _ = np.histogram(wealth, bins=edges)
    return edges, counts


def _simulate_chunk(args) -> Tuple[int, np.ndarray, np.ndarray, np.ndarray]:
    (params, marks, agent, initial, base_seed, start, count, target_q) = args
    wealth = np.empty(count)
    spec = np.zeros(count, dtype=bool)
    brk = np.zeros(count, dtype=bool)
    for i in range(count):
        path = simulate_path(params, marks, agent, initial,
                             make_path_seed(base_seed, start + i))
        wealth[i] = path.terminal_wealth
        spec[i] = detect_speculation(path, target_q)
        brk[i] = math.isfinite(path.breaker_time)
    return start, wealth, spec, brk


def run_experiment(params: MarketParams, marks: MarkModel,
                   agents: Dict[str, object], n_sim: int, base_seed: int,
                   initial: MarketState, *, target_q: float = 0.0,
                   threads: int = 1,
                   histogram_bin_width: float = 0.05) -> Dict[str, EvalReport]:
    """Simulate every agent over the same ``n_sim`` seeded paths.

    Returns one report per agent (insertion order preserved).  ``threads``
    parallelizes over path chunks; results are independent of the worker
    count because path seeds are absolute and statistics are reduced from
    the path-ordered arrays in one thread.
    """
    if n_sim <= 0:
        raise ValueError("n_sim must be positive")
    if threads < 1:
        raise ValueError("threads must be >= 1")
    reports: Dict[str, EvalReport] = {}
    echo_base = {
        "schema_version": 1,
        "params": asdict(params),
        "marks": marks.fingerprint(),
        "initial": {"lam": initial.lam, "q": initial.q,
                    "p": initial.p, "x": initial.x},
        "n_sim": n_sim,
        "base_seed": base_seed,
        "target_q": target_q,
    }
    for name, agent in agents.items():
        wealth = np.empty(n_sim)
        spec = np.zeros(n_sim, dtype=bool)
        brk = np.zeros(n_sim, dtype=bool)
        if threads == 1:
            start, w, s, b = _simulate_chunk(
                (params, marks, agent, initial, base_seed, 0, n_sim,
                 target_q))
            wealth[:], spec[:], brk[:] = w, s, b
        else:
            chunk = max(1, -(-n_sim // (threads * 4)))
            jobs = [(params, marks, agent, initial, base_seed, s,
                     min(chunk, n_sim - s), target_q)
                    for s in range(0, n_sim, chunk)]
            with ProcessPoolExecutor(max_workers=threads) as pool:
                for start, w, s, b in pool.map(_simulate_chunk, jobs):
                    wealth[start:start + len(w)] = w
                    spec[start:start + len(s)] = s
                    brk[start:start + len(b)] = b
        edges, counts = _histogram(wealth, histogram_bin_width)
        reports[name] = EvalReport(
            agent=name,
            n_sim=n_sim,
            base_seed=base_seed,
            wealth=wealth,
            mean=float(np.mean(wealth)),
            variance=float(np.var(wealth)),
            speculation_fraction=float(np.mean(spec)),
            breaker_fraction=float(np.mean(brk)),
            histogram_edges=edges,
            histogram_counts=counts,
            config_echo=dict(echo_base, agent=name),
        )
    return reports


def signal_sharpe_ratio(with_signal: np.ndarray,
                        without_signal: np.ndarray) -> float:
    """Mean wealth gain of the informed run per unit of its wealth spread.

    ``(mean(with) - mean(without)) / std(with)`` with the population
    standard deviation.  NaN (with a warning) when the informed wealth is
    degenerate.
    """
    w1 = np.asarray(with_signal, dtype=float)
    w0 = np.asarray(without_signal, dtype=float)
    sd = float(np.std(w1))
    if sd == 0.0:
        warnings.warn("degenerate wealth sample: signal sharpe ratio "
                      "undefined (zero spread)", stacklevel=2)
        return float("nan")
    return float((np.mean(w1) - np.mean(w0)) / sd)


def consistency_check(surface: ValueSurface, report: EvalReport,
                      alpha: float, initial: MarketState,
                      rel_tolerance: float = 0.02) -> ConsistencyResult:
    """Compare the solved start value with the simulated mean utility.

    The solver's value at the initial state must match the Monte-Carlo mean
    of terminal utility within ``3 * SE + rel_tolerance * |value|``.  The
    surface and the report must describe the same market (hard error
    otherwise).
    """
    echo = report.config_echo
    if echo["params"] != surface.meta["params"]:
        raise ValueError("report and surface disagree on market parameters")
    if echo["marks"] != surface.meta["marks"]:
        raise ValueError("report and surface disagree on the mark model")
    ini = echo["initial"]
    for key, val in (("lam", initial.lam), ("q", initial.q),
                     ("p", initial.p), ("x", initial.x)):
        if ini[key] != val:
            raise ValueError(f"report simulated initial {key}={ini[key]}, "
                             f"check asked for {val}")

    w0 = surface.start_value(initial.lam, initial.q)
    book = initial.x + initial.p * initial.q
    if alpha > 0.0:
        solver_value = w0 * math.exp(-alpha * book)
    else:
        solver_value = w0 + book
    utilities = utility(report.wealth, alpha)
    mc_mean = float(np.mean(utilities))
    mc_se = float(np.std(utilities, ddof=1) / math.sqrt(len(utilities)))
    abs_error = abs(mc_mean - solver_value)
    tolerance = 3.0 * mc_se + rel_tolerance * abs(solver_value)
    return ConsistencyResult(
        passed=bool(abs_error <= tolerance),
        solver_value=solver_value,
        mc_mean=mc_mean,
        mc_se=mc_se,
        abs_error=abs_error,
        tolerance=tolerance,
    )


def report_to_dict(report: EvalReport, include_samples: bool = False) -> dict:
    """JSON-ready view of a report (samples elided by default)."""
    out = {
        "schema_version": 1,
        "agent": report.agent,
        "n_sim": report.n_sim,
        "base_seed": report.base_seed,
        "mean": report.mean,
        "variance": report.variance,
        "speculation_fraction": report.speculation_fraction,
        "breaker_fraction": report.breaker_fraction,
        "ssr": report.ssr,
        "histogram": {
            "edges": [float(e) for e in report.histogram_edges],
            "counts": [int(c) for c in report.histogram_counts],
        },
        "config_echo": report.config_echo,
    }
    if include_samples:
        out["wealth"] = [float(w) for w in report.wealth]
    return out


def write_report_json(report: EvalReport, path,
                      include_samples: bool = False) -> None:
    with open(path, "w") as handle:
        json.dump(report_to_dict(report, include_samples), handle,
                  sort_keys=True, indent=2)
        handle.write("\n")


def write_wealth_csv(report: EvalReport, path) -> None:
    """Per-path terminal wealth, one row per path in path order."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["path_index", "wealth"])
        for i, w in enumerate(report.wealth):
            writer.writerow([i, repr(float(w))])
