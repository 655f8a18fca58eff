"""Comparison bidders and the perfect-foresight dispatch optimum.

Four reference methods bracket the N-pair bidder: a self-scheduled power
quantity, a charge/discharge pair bid, a raw 2N-dimensional bid head, and
the curve bidder without its zero-band head.  The profit ceiling is a
perfect-foresight dynamic program over a discretized state of charge and a
discrete signed-power menu.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import data as mdata
from .bids import BidBounds, Hdb, clear_many, constant_bid
from .envs import TrainEnv, curve_bidder
from .ess import EssParams, power_split
from .nets import PolicyNet, nnsf_power


class BaselineKind(enum.Enum):
    SELF_BID = "self_bid"
    PAIR_BID = "pair_bid"
    DIRECT_HDB = "direct_hdb"
    HDB_WOA = "hdb_woa"


@dataclass(frozen=True)
class MethodSpec:
    """How a bidding method plugs into the shared training/backtest stack.

    ``includes_price``: whether the policy input carries the clearing price
    (only the supply-function methods see it).  ``head``: the policy head
    kind.  ``action_dim`` may depend on the bid size N.
    """

    name: str
    head: str
    includes_price: bool

    def action_dim(self, n_pairs: int) -> int:
        if self.name == "direct_hdb":
            return 2 * n_pairs
        return {"zero_band": 4, "power": 1}[self.head]


METHODS = {
    "hdb": MethodSpec("hdb", "zero_band", True),
    "hdb_woa": MethodSpec("hdb_woa", "power", True),
    "pair_bid": MethodSpec("pair_bid", "zero_band", False),
    "self_bid": MethodSpec("self_bid", "power", False),
    "direct_hdb": MethodSpec("direct_hdb", "direct_hdb", False),
}


def _check_range(action: np.ndarray) -> np.ndarray:
    a = np.asarray(action, dtype=np.float64)
    if np.any(np.abs(a) > 1.0 + 1e-12):
        raise ValueError("raw action outside [-1, 1]")
    return a


def _affine(x, lo, hi):
    return lo + (np.asarray(x, dtype=np.float64) + 1.0) * 0.5 * (hi - lo)


def pair_bid_from_action(action: np.ndarray, bounds: BidBounds) -> Hdb:
    """Charge/discharge pair bid as a 2-pair step bid.

    Head layout matches the zero-band head: (charge price, discharge price,
    charge power, discharge power).  Below the charge price the charge power
    clears (via the left segment); between the thresholds nothing clears; at
    or above the discharge price the discharge power clears.  An inverted
    pair (charge above discharge price) collapses the idle band, with the
    discharge side winning from its threshold up.
    """
    lam_c, lam_d, p_c, p_d = _check_range(action)
    lam_c = float(_affine(lam_c, bounds.lam_min, bounds.lam_max))
    lam_d = float(_affine(lam_d, bounds.lam_min, bounds.lam_max))
    charge = -abs(p_c) * bounds.p_max
    discharge = abs(p_d) * bounds.p_max
    if lam_c <= lam_d:
        prices = [lam_c, lam_d]
        powers = [0.0, discharge]
    else:
        prices = [lam_d, lam_d]
        powers = [discharge, discharge]
    return Hdb(np.array(prices), np.array(powers), bounds, p_left=charge)


def direct_hdb_from_action(action: np.ndarray, bounds: BidBounds) -> Hdb:
    """Raw 2N-value action to a legal bid: the first N values become prices
    and the last N become powers, each block sorted ascending and mapped
    affinely into its bounds."""
    a = _check_range(action)
    if len(a) < 2 or len(a) % 2:
        raise ValueError("direct bid action must hold 2N values")
    n = len(a) // 2
    prices = _affine(np.sort(a[:n]), bounds.lam_min, bounds.lam_max)
    powers = _affine(np.sort(a[n:]), bounds.p_min, bounds.p_max)
    return Hdb(prices, powers, bounds)


def baseline_action_to_bid(kind: BaselineKind, raw_action: np.ndarray,
                           bounds: BidBounds):
    """Map a policy action to the submitted market quantity for one hour.

    Self-scheduling returns a signed power in MW (always executed);
    the pair and direct methods return step bids.  The curve-based method
    has no per-action bid; its bids come from supply-curve extraction.
    """
    if kind == BaselineKind.SELF_BID:
        a = _check_range(raw_action)
        return float(a[0] if a.ndim else a) * bounds.p_max
    if kind == BaselineKind.PAIR_BID:
        return pair_bid_from_action(raw_action, bounds)
    if kind == BaselineKind.DIRECT_HDB:
        return direct_hdb_from_action(raw_action, bounds)
    raise ValueError(f"{kind} bids are extracted from the supply curve, not from one action")


def dispatch_rule(method: MethodSpec, n_pairs: int, lam_min: float, lam_max: float,
                  p_max: float):
    """Per-step power rule used inside training: clipped action -> power
    fraction at the realized normalized clearing price."""
    if method.head == "zero_band":
        return nnsf_power
    if method.head == "power":
        return lambda a, lam_norm: float(a[0])
    if method.head == "direct_hdb":
        bounds = BidBounds(lam_min, lam_max, -p_max, p_max)

        def rule(a, lam_norm):
            bid = direct_hdb_from_action(a, bounds)
            lam = _affine(lam_norm, lam_min, lam_max)
            return float(clear_many(bid, np.array([lam]))[0]) / p_max

        return rule
    raise ValueError(f"unknown head {method.head!r}")


def make_train_env(method_name: str, series: mdata.MarketSeries, params: EssParams,
                   lam_min: float, lam_max: float, reward_scale: float,
                   n_pairs: int) -> TrainEnv:
    method = METHODS[method_name]
    return TrainEnv(series, params, lam_min, lam_max, reward_scale,
                    include_price=method.includes_price,
                    action_to_power=dispatch_rule(method, n_pairs, lam_min, lam_max,
                                                  params.p_max),
                    action_dim=method.action_dim(n_pairs))


def make_bidder(method_name: str, n_pairs: int, m_samples: int, lam_min: float,
                lam_max: float, p_max: float, free_left: bool = False):
    """Hourly bid generator for the backtest engine.

    Returns a callable (policy, obs_vector) -> (bid, raw_curve, mono_curve);
    the curves are None for methods that do not sample a supply function.
    """
    method = METHODS[method_name]
    if method.head in ("zero_band", "power") and method.includes_price:
        return curve_bidder(n_pairs, m_samples, lam_min, lam_max, p_max, free_left)

    bounds = BidBounds(lam_min, lam_max, -p_max, p_max)

    def make_bid(policy: PolicyNet, obs_vec: np.ndarray):
        head = np.clip(policy.mean(obs_vec), -1.0, 1.0)
        if method.name == "self_bid":
            power = baseline_action_to_bid(BaselineKind.SELF_BID, head, bounds)
            return constant_bid(power, bounds, n_pairs), None, None
        if method.name == "pair_bid":
            return pair_bid_from_action(head, bounds), None, None
        return direct_hdb_from_action(head, bounds), None, None

    return make_bid


def optimal_bid_dp(prices: np.ndarray, params: EssParams, soc_levels: int = 201,
                   power_levels: int = 21, start_soc: float | None = None
                   ) -> tuple[float, np.ndarray]:
    """Perfect-foresight dispatch optimum over a discretized storage model.

    Dynamic program over a uniform SoC grid and a uniform signed-power menu
    (which must include 0, hence an odd ``power_levels``): at each 5-minute
    price the dispatch maximizes energy revenue minus depreciation.  The
    post-step SoC snaps to the nearest grid level, moves whose exact SoC
    leaves [0, e_max] are excluded, and money settles on the snapped energy
    change (the power actually banked or released), so grid rounding can
    neither create nor destroy cash flow.  Returns the optimum in USD and
    an argmax schedule of effective powers (MW per step, discharge positive).
    """
    if soc_levels < 2:
        raise ValueError("soc_levels must be >= 2")
    if power_levels < 3 or power_levels % 2 == 0:
        raise ValueError("power_levels must be an odd count >= 3 so the menu includes 0")
    prices = np.asarray(prices, dtype=np.float64)
    t_steps = len(prices)
    soc_grid = np.linspace(0.0, params.e_max, soc_levels)
    cell = soc_grid[1] - soc_grid[0]
    menu = np.linspace(-params.p_max, params.p_max, power_levels)

    # Per (power, soc-level): next level index, feasibility, traded energy.
    next_idx = np.empty((power_levels, soc_levels), dtype=np.int64)
    feasible = np.empty((power_levels, soc_levels), dtype=bool)
    sold = np.empty((power_levels, soc_levels))    # MWh delivered to the market
    bought = np.empty((power_levels, soc_levels))  # MWh drawn from the market
    for a, p in enumerate(menu):
        p_c, p_d = power_split(float(p), params)
        soc_next = soc_grid + params.tau * (params.eta_c * p_c - p_d / params.eta_d)
        feasible[a] = (soc_next >= -1e-12) & (soc_next <= params.e_max + 1e-12)
        next_idx[a] = np.clip(np.round(soc_next / cell).astype(np.int64), 0, soc_levels - 1)
        banked = soc_grid[next_idx[a]] - soc_grid  # snapped SoC change, signed
        sold[a] = np.maximum(-banked, 0.0) * params.eta_d
        bought[a] = np.maximum(banked, 0.0) / params.eta_c
    net_energy = sold - bought
    dep = params.lambda_dep * sold

    value = np.zeros(soc_levels)
    choice = np.empty((t_steps, soc_levels), dtype=np.int16)
    for t in range(t_steps - 1, -1, -1):
        cand = np.where(feasible, prices[t] * net_energy - dep + value[next_idx], -np.inf)
        best = cand.argmax(axis=0)
        value = cand[best, np.arange(soc_levels)]
        choice[t] = best
        if not np.isfinite(value).all():
            raise ValueError("no feasible dispatch from some SoC level; refine the grids")

    soc0 = params.e_max / 2.0 if start_soc is None else float(start_soc)
    s = int(np.clip(round(soc0 / cell), 0, soc_levels - 1))
    profit = float(value[s])
    schedule = np.empty(t_steps)
    for t in range(t_steps):
        a = int(choice[t, s])
        schedule[t] = net_energy[a, s] / params.tau
        s = int(next_idx[a, s])
    return profit, schedule


def refined_optimum(prices: np.ndarray, params: EssParams, soc_levels: int = 201,
                    power_levels: int = 21, start_soc: float | None = None) -> float:
    """DP optimum with a one-shot grid-refinement guard: the larger of the
    base grid and a doubled grid, so reported ceilings never understate."""
    base, _ = optimal_bid_dp(prices, params, soc_levels, power_levels, start_soc)
    fine, _ = optimal_bid_dp(prices, params, 2 * soc_levels - 1,
                             2 * power_levels - 1, start_soc)
    return max(base, fine)


def captured_ratio(profit: float, optimal: float) -> float:
    """A method's profit as a percentage of the perfect-foresight optimum."""
    if optimal <= 0.0:
        raise ValueError("captured ratio undefined for a non-positive optimum")
    return 100.0 * profit / optimal
