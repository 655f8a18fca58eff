"""Multi-pair market bids: clearing, supply-curve sampling, and extraction.

A bid is N (price, power) pairs, non-decreasing in both coordinates, that
clears as a step function of the market price.  A trained policy network is
turned into such a bid in three steps: sample its price-to-power map on a
uniform price grid, force the samples monotone with a running maximum, and
fit N pairs to the monotone curve by coordinate-descent quantization — each
sweep moves every pair price to the curve's crossing of the neighbouring
power midpoint and resets the pair power to the curve mean over its segment,
which are the stationarity conditions of the integrated squared error between
curve and step function.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nets import PolicyNet, nnsf_power_batch


@dataclass(frozen=True)
class BidBounds:
    lam_min: float
    lam_max: float
    p_min: float
    p_max: float


@dataclass(frozen=True)
class Hdb:
    """An N-pair bid: prices and powers both non-decreasing, inside bounds.

    ``p_left`` is the power cleared when the market price falls below the
    first pair's price; by market convention it defaults to the lower power
    bound (full charge).
    """

    prices: np.ndarray
    powers: np.ndarray
    bounds: BidBounds
    p_left: float | None = None

    def __post_init__(self):
        prices = np.asarray(self.prices, dtype=np.float64)
        powers = np.asarray(self.powers, dtype=np.float64)
        object.__setattr__(self, "prices", prices)
        object.__setattr__(self, "powers", powers)
        if self.p_left is None:
            object.__setattr__(self, "p_left", self.bounds.p_min)
        validate_hdb(self)

    @property
    def n_pairs(self) -> int:
        return len(self.prices)

    def to_json_obj(self) -> list[dict]:
        return [{"price": float(l), "power": float(p)} for l, p in zip(self.prices, self.powers)]


def validate_hdb(hdb: Hdb, tol: float = 1e-9) -> None:
    """Check the market bid rules; raises ValueError on any violation."""
    b = hdb.bounds
    if hdb.prices.ndim != 1 or hdb.prices.shape != hdb.powers.shape or len(hdb.prices) < 1:
        raise ValueError("bid must hold N >= 1 price/power pairs")
    if np.any(np.diff(hdb.prices) < -tol) or np.any(np.diff(hdb.powers) < -tol):
        raise ValueError("bid pairs must be non-decreasing in price and power")
    if hdb.prices.min() < b.lam_min - tol or hdb.prices.max() > b.lam_max + tol:
        raise ValueError("bid price outside bounds")
    lo = min(float(hdb.powers.min()), float(hdb.p_left))
    hi = max(float(hdb.powers.max()), float(hdb.p_left))
    if lo < b.p_min - tol or hi > b.p_max + tol:
        raise ValueError("bid power outside bounds")
    if hdb.p_left > hdb.powers[0] + tol:
        raise ValueError("left-segment power exceeds first pair power")


def clear(hdb: Hdb, lam: float) -> float:
    """Cleared power at market price ``lam``.

    A pair is accepted when its price does not exceed ``lam``; the power of
    the largest accepted pair clears.  Below the first pair's price the
    left-segment power clears.
    """
    i = int(np.searchsorted(hdb.prices, lam, side="right")) - 1
    if i < 0:
        return float(hdb.p_left)
    return float(hdb.powers[i])


def clear_many(hdb: Hdb, lams: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(hdb.prices, lams, side="right") - 1
    out = np.where(idx >= 0, hdb.powers[np.clip(idx, 0, None)], hdb.p_left)
    return out.astype(np.float64)


@dataclass(frozen=True)
class SupplyCurve:
    """M samples of a policy's price-to-power map on a uniform price grid."""

    prices: np.ndarray
    powers: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "prices", np.asarray(self.prices, dtype=np.float64))
        object.__setattr__(self, "powers", np.asarray(self.powers, dtype=np.float64))
        if self.prices.shape != self.powers.shape or self.prices.ndim != 1 or len(self.prices) < 2:
            raise ValueError("curve needs matching price/power arrays with M >= 2")
        steps = np.diff(self.prices)
        if not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-9) or steps[0] <= 0:
            raise ValueError("price grid must be uniform ascending")

    @property
    def step(self) -> float:
        return float(self.prices[1] - self.prices[0])

    def is_monotone(self) -> bool:
        return bool(np.all(np.diff(self.powers) >= 0.0))

    def value_at(self, lam) -> np.ndarray:
        """Curve power at arbitrary prices, floor-sample convention
        (the sample at the largest grid price <= lam), matching clear()."""
        idx = np.searchsorted(self.prices, np.asarray(lam, dtype=np.float64), side="right") - 1
        return self.powers[np.clip(idx, 0, len(self.powers) - 1)]


def price_grid(lam_min: float, lam_max: float, m: int) -> np.ndarray:
    """Uniform grid of ``m`` prices covering [lam_min, lam_max] inclusive."""
    if m < 2:
        raise ValueError("m must be >= 2")
    return np.linspace(lam_min, lam_max, m)


def sample_supply_curve(policy: PolicyNet, obs_vec: np.ndarray, grid: np.ndarray,
                        p_scale: float = 1.0, batch_width: int | None = None) -> SupplyCurve:
    """Evaluate the policy's deterministic power output at every grid price.

    The network input is the observation with the normalized grid price
    appended; the mean head is mapped through the policy's action-to-power
    rule and scaled by ``p_scale`` (MW).  ``batch_width`` caps how many grid
    points are evaluated per forward pass; the result is identical for any
    width.
    """
    grid = np.asarray(grid, dtype=np.float64)
    m = len(grid)
    lam_norm = policy.normalize_price(grid)
    obs_vec = np.asarray(obs_vec, dtype=np.float64)
    powers = np.empty(m)
    width = m if batch_width is None else max(1, int(batch_width))
    for lo in range(0, m, width):
        hi = min(lo + width, m)
        block = np.empty((hi - lo, len(obs_vec) + 1))
        block[:, :-1] = obs_vec
        block[:, -1] = lam_norm[lo:hi]
        heads = policy.mean(block)
        powers[lo:hi] = policy.head_to_power(heads, lam_norm[lo:hi]) * p_scale
    return SupplyCurve(grid, powers)


def monotonize(curve: SupplyCurve) -> SupplyCurve:
    """Replace powers with their running maximum (idempotent)."""
    return SupplyCurve(curve.prices, np.maximum.accumulate(curve.powers))


def discretize(curve: SupplyCurve, n: int, max_iters: int = 100, tol: float = 1e-6,
               p_bounds: tuple[float, float] | None = None, free_left: bool = False) -> Hdb:
    """Fit an N-pair bid to a monotone supply curve.

    Pair prices live on the curve's grid.  Pairs start uniformly spaced in
    grid index; virtual boundary pairs are pinned at (lam_min, p_min) and
    (lam_max, p_max).  Each sweep updates pair i in place: its price moves to
    the first grid sample whose power reaches the midpoint of the adjacent
    pair powers (the monotone inverse of the curve), projected between its
    neighbours' prices; its power becomes the curve mean over
    [price_i, price_{i+1}), or the curve value at price_i when that range is
    empty.  Sweeps stop once no price index moves and no power moves by more
    than ``tol`` (MW), or after ``max_iters``.

    ``free_left`` additionally optimizes the below-first-pair power as the
    curve mean over the leading segment instead of pinning it to p_min.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not curve.is_monotone():
        raise ValueError("discretize requires a monotone curve; monotonize() it first")
    powers = curve.powers
    m = len(powers)
    if p_bounds is None:
        p_bounds = (float(powers.min()), float(powers.max()))
    p_min, p_max = p_bounds
    bounds = BidBounds(float(curve.prices[0]), float(curve.prices[-1]), p_min, p_max)

    k = np.round(np.arange(1, n + 1) * (m - 1) / (n + 1)).astype(int)
    p = powers[k].astype(np.float64)
    p_left = p_min

    for _ in range(max_iters):
        if free_left:
            p_left = powers[:k[0]].mean() if k[0] > 0 else float(powers[0])
        moved_idx = 0
        moved_pow = 0.0
        for i in range(n):
            left_power = p[i - 1] if i > 0 else p_left
            target = 0.5 * (left_power + p[i])
            k_new = int(np.searchsorted(powers, target, side="left"))
            k_new = min(k_new, m - 1)
            lo = k[i - 1] if i > 0 else 0
            hi = k[i + 1] if i < n - 1 else m - 1
            k_new = min(max(k_new, lo), hi)
            moved_idx = max(moved_idx, abs(k_new - k[i]))
            k[i] = k_new

            seg_end = k[i + 1] if i < n - 1 else m - 1
            p_new = powers[k[i]:seg_end].mean() if seg_end > k[i] else float(powers[k[i]])
            moved_pow = max(moved_pow, abs(p_new - p[i]))
            p[i] = p_new
        if moved_idx == 0 and moved_pow <= tol:
            break

    # Monotone curves already yield ordered pairs; enforce exactly anyway.
    p = np.minimum(np.maximum.accumulate(np.clip(p, p_min, p_max)), p_max)
    if free_left:
        p_left = min(float(np.clip(p_left, p_min, p_max)), float(p[0]))
    else:
        p_left = p_min
    return Hdb(curve.prices[k], p, bounds, p_left=p_left)


def discretization_error(curve: SupplyCurve, hdb: Hdb) -> float:
    """Squared curve-to-bid gap, summed over the grid and scaled by the
    grid step (a Riemann sum of the integrated squared error)."""
    step_vals = clear_many(hdb, curve.prices)
    return float(curve.step * np.sum((curve.powers - step_vals) ** 2))


def clearing_gap_on_grid(curve: SupplyCurve, hdb: Hdb) -> float:
    """Mean absolute curve-to-bid gap over the grid (same units as powers)."""
    return float(np.mean(np.abs(curve.powers - clear_many(hdb, curve.prices))))


def generate_hdb(policy: PolicyNet, obs_vec: np.ndarray, grid: np.ndarray, n: int,
                 p_scale: float = 1.0, free_left: bool = False,
                 batch_width: int | None = None) -> Hdb:
    """Sample, monotonize, and discretize: the full bid-generation pipeline."""
    curve = monotonize(sample_supply_curve(policy, obs_vec, grid, p_scale, batch_width))
    return discretize(curve, n, p_bounds=(-p_scale, p_scale), free_left=free_left)


def constant_bid(power: float, bounds: BidBounds, n: int) -> Hdb:
    """A price-independent bid: every pair (and the left segment) carries
    ``power``, so the same quantity clears at any market price."""
    prices = np.linspace(bounds.lam_min, bounds.lam_max, n)
    powers = np.full(n, float(power))
    return Hdb(prices, powers, bounds, p_left=float(power))
