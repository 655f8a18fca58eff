"""Market environments: the per-step training loop and the hourly-bid backtest.

Training approximates the market outcome with the policy's power output at
the realized clearing price, one 5-minute step at a time.  The backtest runs
the real bidding protocol instead: one bid is generated per hour from the
observation at the hour start and cleared against the next 12 five-minute
prices, with the storage settling whatever is physically feasible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import data as mdata
from .bids import (Hdb, clear, discretize, generate_hdb, monotonize, price_grid,
                   sample_supply_curve)
from .ess import EssParams, EssState, power_split, reward, step_soc
from .nets import PolicyNet, nnsf_power

MONO_TOL = 1e-12


class TrainEnv:
    """Stateful 5-minute-step training environment over a price series.

    One episode is one simulated day (288 steps); episode start days cycle
    through the usable span of the series.  The state is the 15-component
    observation, with the normalized clearing price appended when
    ``include_price`` is set.  ``action_to_power`` maps a clipped raw action
    and the normalized price to a power fraction in [-1, 1]; the default is
    the zero-band rule of the 4-value policy head.
    """

    def __init__(self, series: mdata.MarketSeries, params: EssParams,
                 lam_min: float = mdata.LAMBDA_MIN, lam_max: float = mdata.LAMBDA_MAX,
                 reward_scale: float = 10.0, include_price: bool = True,
                 action_to_power=None, action_dim: int = 4):
        self.series = series
        self.params = params
        self.lam_min, self.lam_max = float(lam_min), float(lam_max)
        self.reward_scale = float(reward_scale)
        self.include_price = include_price
        self.action_to_power = action_to_power if action_to_power is not None else nnsf_power
        self.action_dim = int(action_dim)
        self.state_dim = mdata.OBS_DIM + (1 if include_price else 0)

        warmup = mdata.first_feature_index(series)
        self.start_day = math.ceil(warmup / mdata.RT_PER_DAY)
        self.n_episode_days = series.n_days - self.start_day
        if self.n_episode_days < 1:
            raise ValueError("series too short: no full day after the feature warm-up")
        self._feat_start = self.start_day * mdata.RT_PER_DAY
        self._features = mdata.precompute_market_features(
            series, self._feat_start, len(series.rt_ts), lam_min, lam_max)
        self._lam_norm = mdata.normalize_price(series.rt_price, lam_min, lam_max)

        self._episode_ptr = 0
        self._cursor = self._feat_start
        self._steps_left = 0
        self._state = EssState(params.e_max / 2.0)
        self.episode_active = False

    def _state_vec(self, cursor: int) -> np.ndarray:
        row = self._features[cursor - self._feat_start]
        soc_frac = self._state.soc / self.params.e_max
        if self.include_price:
            return np.concatenate([row, [soc_frac, self._lam_norm[cursor]]])
        return np.concatenate([row, [soc_frac]])

    def state_snapshot(self) -> np.ndarray:
        """Current state vector of the open episode."""
        if not self.episode_active:
            raise RuntimeError("no open episode")
        return self._state_vec(self._cursor)

    def reset(self, rng: np.random.Generator | None = None,
              soc: float | None = None) -> np.ndarray:
        """Start a new episode; SoC is drawn uniformly when ``soc`` is None."""
        day = self.start_day + (self._episode_ptr % self.n_episode_days)
        self._episode_ptr += 1
        self._cursor = day * mdata.RT_PER_DAY
        self._steps_left = mdata.RT_PER_DAY
        if soc is None:
            if rng is None:
                raise ValueError("reset needs an rng when soc is not fixed")
            soc = float(rng.uniform(0.0, self.params.e_max))
        self._state = EssState(float(soc))
        self.episode_active = True
        return self._state_vec(self._cursor)

    def step(self, raw_action: np.ndarray):
        """Returns (next_state, scaled_reward, done, info).

        The raw action is clipped into [-1, 1]^dim, mapped to a power
        fraction at the current clearing price, and settled against the
        storage; the reward (including any violation penalty) is divided by
        the configured scale.
        """
        if not self.episode_active:
            raise RuntimeError("step() called on a finished episode; call reset()")
        cursor = self._cursor
        lam = float(self.series.rt_price[cursor])
        lam_norm = float(self._lam_norm[cursor])
        a = np.clip(np.asarray(raw_action, dtype=np.float64), -1.0, 1.0)
        p_norm = float(self.action_to_power(a, lam_norm))
        p_c, p_d = power_split(p_norm * self.params.p_max, self.params)
        self._state, exec_c, exec_d, violated = step_soc(self._state, p_c, p_d, self.params)
        r_usd = reward(lam, exec_c, exec_d, violated, self.params)

        self._cursor += 1
        self._steps_left -= 1
        done = self._steps_left == 0
        if done:
            self.episode_active = False
        if self._cursor < len(self.series.rt_ts):
            next_state = self._state_vec(self._cursor)
        else:
            next_state = np.zeros(self.state_dim)
        info = {"reward_usd": r_usd, "soc": self._state.soc, "violated": violated,
                "lam": lam, "power": exec_d - exec_c}
        return next_state, r_usd / self.reward_scale, done, info


def curve_bidder(n: int, m: int, lam_min: float, lam_max: float, p_max: float,
                 free_left: bool = False):
    """Bid generator for supply-curve policies: sample, monotonize, discretize.

    Returns ``(bid, raw_curve, monotone_curve)`` so callers can also audit
    curve monotonicity and the bid's fidelity to the curve.
    """
    grid = price_grid(lam_min, lam_max, m)

    def make_bid(policy: PolicyNet, obs_vec: np.ndarray):
        raw = sample_supply_curve(policy, obs_vec, grid, p_scale=p_max)
        mono = monotonize(raw)
        hdb = discretize(mono, n, p_bounds=(-p_max, p_max), free_left=free_left)
        return hdb, raw, mono

    return make_bid


@dataclass
class BacktestResult:
    """Hourly-bidding simulation output plus curve-quality tallies."""

    node_id: str
    start_ts: int
    end_ts: int
    start_soc: float
    hours: list = field(default_factory=list)
    intervals: list = field(default_factory=list)
    total_profit_usd: float = 0.0
    n_violations: int = 0
    clearing_abs_err: float = 0.0
    clearing_n: int = 0
    curves_total: int = 0
    curves_monotone: int = 0
    segments_total: int = 0
    segments_monotone: int = 0

    @property
    def n_hours(self) -> int:
        return len(self.hours)

    @property
    def clearing_mae(self) -> float | None:
        if self.clearing_n == 0:
            return None
        return self.clearing_abs_err / self.clearing_n

    @property
    def monotone_curve_frac(self) -> float | None:
        return self.curves_monotone / self.curves_total if self.curves_total else None

    @property
    def monotone_segment_frac(self) -> float | None:
        return self.segments_monotone / self.segments_total if self.segments_total else None

    def to_report_obj(self) -> dict:
        per_hour = []
        k = 0
        for h in self.hours:
            clearings = []
            for _ in range(mdata.RT_PER_HOUR):
                iv = self.intervals[k]
                clearings.append({"lambda": iv["lambda"], "power": iv["power"],
                                  "soc_after": iv["soc_after"], "reward": iv["reward_usd"]})
                k += 1
            per_hour.append({"timestamp": mdata.format_timestamp(h["t"]),
                             "bid": h["bid"].to_json_obj(),
                             "clearings": clearings})
        return {
            "total_profit_usd": self.total_profit_usd,
            "node": self.node_id,
            "start": mdata.format_timestamp(self.start_ts),
            "end": mdata.format_timestamp(self.end_ts),
            "start_soc_mwh": self.start_soc,
            "n_violations": self.n_violations,
            "per_hour": per_hour,
        }


def backtest_window(series: mdata.MarketSeries) -> tuple[int, int]:
    """RT index range [start, stop) of whole hours with full observation history."""
    warmup = mdata.first_feature_index(series)
    start = ((warmup + mdata.RT_PER_HOUR - 1) // mdata.RT_PER_HOUR) * mdata.RT_PER_HOUR
    stop = (len(series.rt_ts) // mdata.RT_PER_HOUR) * mdata.RT_PER_HOUR
    if stop - start < mdata.RT_PER_HOUR:
        raise ValueError("series too short for a one-hour backtest after warm-up")
    return start, stop


def backtest(policy: PolicyNet, series: mdata.MarketSeries, params: EssParams,
             n: int = 10, m: int = 512,
             lam_min: float = mdata.LAMBDA_MIN, lam_max: float = mdata.LAMBDA_MAX,
             bidder=None, start_soc: float | None = None,
             free_left: bool = False) -> BacktestResult:
    """Run the hourly bidding protocol over the series' usable window.

    Each hour: freeze the observation at the hour start, generate one bid,
    clear it at the 12 realized prices, and settle the feasible part of each
    cleared power.  Rewards are market settlements in raw USD (energy revenue
    minus depreciation); SoC-bound violations scale the executed power and
    are counted, not fined.
    """
    if bidder is None:
        bidder = curve_bidder(n, m, lam_min, lam_max, params.p_max, free_left)
    start, stop = backtest_window(series)
    soc0 = params.e_max / 2.0 if start_soc is None else float(start_soc)
    state = EssState(soc0)
    result = BacktestResult(series.node_id, int(series.rt_ts[start]),
                            int(series.rt_ts[stop - 1]) + mdata.RT_STEP_S, soc0)

    for i0 in range(start, stop, mdata.RT_PER_HOUR):
        t0 = int(series.rt_ts[i0])
        obs = mdata.build_observation(series, t0, state.soc / params.e_max,
                                      lam_min, lam_max).vector()
        hdb, raw_curve, mono_curve = bidder(policy, obs)
        result.hours.append({"t": t0, "bid": hdb, "soc_start": state.soc})

        if raw_curve is not None:
            diffs = np.diff(raw_curve.powers)
            ok = diffs >= -MONO_TOL
            result.curves_total += 1
            result.curves_monotone += bool(ok.all())
            result.segments_total += len(diffs)
            result.segments_monotone += int(ok.sum())

        for k in range(mdata.RT_PER_HOUR):
            i = i0 + k
            lam = float(series.rt_price[i])
            p_bid = clear(hdb, lam)
            if mono_curve is not None:
                result.clearing_abs_err += abs(p_bid - float(mono_curve.value_at(lam))) / params.p_max
                result.clearing_n += 1
            p_c, p_d = power_split(p_bid, params)
            state, exec_c, exec_d, violated = step_soc(state, p_c, p_d, params)
            r_usd = reward(lam, exec_c, exec_d, False, params)
            result.n_violations += violated
            result.total_profit_usd += r_usd
            result.intervals.append({
                "t": int(series.rt_ts[i]), "lambda": lam, "power": exec_d - exec_c,
                "soc_after": state.soc, "reward_usd": r_usd, "violated": violated,
            })
    return result


def clearing_approx_gap(policy: PolicyNet, series: mdata.MarketSeries, params: EssParams,
                        n: int = 10, m: int = 512,
                        lam_min: float = mdata.LAMBDA_MIN,
                        lam_max: float = mdata.LAMBDA_MAX,
                        free_left: bool = False) -> float:
    """Mean absolute gap (fraction of p_max) between the cleared bid power
    and the monotone supply curve's value, over all backtest intervals."""
    result = backtest(policy, series, params, n, m, lam_min, lam_max, free_left=free_left)
    mae = result.clearing_mae
    if mae is None:
        raise ValueError("policy does not expose a supply curve")
    return mae


def monotonicity_stats(policy: PolicyNet, series: mdata.MarketSeries, params: EssParams,
                       m: int = 512, lam_min: float = mdata.LAMBDA_MIN,
                       lam_max: float = mdata.LAMBDA_MAX) -> tuple[float, float]:
    """(fraction of fully monotone sampled curves, fraction of monotone segments)
    over the backtest trajectory's bid-time observations."""
    result = backtest(policy, series, params, n=2, m=m, lam_min=lam_min, lam_max=lam_max)
    return result.monotone_curve_frac, result.monotone_segment_frac
