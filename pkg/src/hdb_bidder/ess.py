"""Energy-storage physics and the bidding reward.

State of charge advances one 5-minute step at a time with charge/discharge
efficiencies; dispatch that would push SoC outside its bounds is scaled down
to the feasible amount and flagged.  The reward nets energy revenue against a
discharge-proportional depreciation cost plus a fixed penalty on violations.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class EssParams:
    """Storage parameters.

    p_max: power rating, MW.  e_max: energy capacity, MWh.
    eta_c / eta_d: charge / discharge efficiencies in (0, 1].
    lambda_dep: depreciation cost per discharged MWh, USD/MWh.
    tau: step length in hours (5 minutes).  penalty: USD charged
    when a step would violate the SoC bounds.
    """

    p_max: float = 1.0
    e_max: float = 2.0
    eta_c: float = 0.95
    eta_d: float = 0.95
    lambda_dep: float = 10.0
    tau: float = 1.0 / 12.0
    penalty: float = 170.0

    def __post_init__(self):
        if min(self.p_max, self.e_max, self.eta_c, self.eta_d, self.tau) <= 0:
            raise ValueError("ESS parameters must be strictly positive")
        if self.eta_c > 1.0 or self.eta_d > 1.0:
            raise ValueError("efficiencies must not exceed 1")
        if self.lambda_dep < 0 or self.penalty < 0:
            raise ValueError("costs must be non-negative")


@dataclass(frozen=True)
class EssState:
    """Stored energy in MWh; kept inside [0, e_max] by every committed step."""

    soc: float


def power_split(p: float, params: EssParams) -> tuple[float, float]:
    """Split a signed power (MW, discharge positive) into (p_c, p_d) >= 0.

    Exactly one of the two is non-zero (complementarity by construction).
    """
    if abs(p) > params.p_max * (1.0 + 1e-12):
        raise ValueError(f"|p|={abs(p):.6g} exceeds p_max={params.p_max:.6g}")
    if p >= 0.0:
        return 0.0, float(p)
    return float(-p), 0.0


def step_soc(state: EssState, p_c: float, p_d: float,
             params: EssParams) -> tuple[EssState, float, float, bool]:
    """Advance SoC one step; returns (state', executed_p_c, executed_p_d, violated).

    SoC' = SoC + tau * (eta_c * p_c - p_d / eta_d).  When the tentative SoC
    leaves [0, e_max] the executed power is scaled down so SoC lands exactly
    on the violated bound, and the violation flag is raised.
    """
    if p_c < 0.0 or p_d < 0.0:
        raise ValueError("powers must be non-negative")
    if p_c > 0.0 and p_d > 0.0:
        raise ValueError("charge and discharge cannot both be non-zero")
    if max(p_c, p_d) > params.p_max * (1.0 + 1e-12):
        raise ValueError("power exceeds rating")

    soc = state.soc + params.tau * (params.eta_c * p_c - p_d / params.eta_d)
    if 0.0 <= soc <= params.e_max:
        return EssState(soc), p_c, p_d, False

    if soc > params.e_max:
        p_c = (params.e_max - state.soc) / (params.tau * params.eta_c)
        return EssState(params.e_max), max(p_c, 0.0), 0.0, True
    p_d = state.soc * params.eta_d / params.tau
    return EssState(0.0), 0.0, max(p_d, 0.0), True


def reward(lam: float, executed_p_c: float, executed_p_d: float,
           violated: bool, params: EssParams) -> float:
    """One-step bidding reward in USD.

    Net energy revenue lam * (p_d - p_c) * tau, minus depreciation
    lambda_dep * p_d * tau on discharged energy, minus the fixed penalty
    when the step violated the SoC bounds.
    """
    r = lam * (executed_p_d - executed_p_c) * params.tau
    r -= params.lambda_dep * executed_p_d * params.tau
    if violated:
        r -= params.penalty
    return r
