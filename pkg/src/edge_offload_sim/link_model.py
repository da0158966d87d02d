"""Radio link, proportional-fair sharing and BS-MH latency models."""

import numpy as np
from pydantic import BaseModel, ConfigDict, Field


class RadioParams(BaseModel):
    """Log-distance path loss radio parameters.

    Attributes:
        bandwidth_per_ue_hz: Bandwidth granted to each UE
        tx_power_dbm: Transmit power
        noise_power_dbm: Noise power over the UE bandwidth
        pathloss_exponent: Path loss exponent n
        pathloss_ref_db: Path loss at the reference distance
        ref_distance_m: Reference distance
        min_distance_m: Distances below this are clamped up to it
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    bandwidth_per_ue_hz: float = Field(default=20e6, gt=0)
    tx_power_dbm: float = 30.0
    noise_power_dbm: float = -96.0
    pathloss_exponent: float = Field(default=3.5, ge=2)
    pathloss_ref_db: float = 38.0
    ref_distance_m: float = Field(default=1.0, gt=0)
    min_distance_m: float = Field(default=1.0, gt=0)


class LatencyParams(BaseModel):
    """Affine BS-MH latency model: base_ms + ms_per_km * km."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    base_ms: float = Field(default=2.0, ge=0)
    ms_per_km: float = Field(default=40.0, ge=0)


def snr_linear(distance: float | np.ndarray, params: RadioParams) -> float | np.ndarray:
    """
    Linear SNR of a UE at the given distance from its BS.

    Args:
        distance: Distance in meters (scalar or array)
        params: Radio parameters

    Returns:
        SNR as a linear ratio, same shape as distance
    """
    d = np.maximum(np.asarray(distance, dtype=np.float64), params.min_distance_m)
    pathloss_db = params.pathloss_ref_db + 10.0 * params.pathloss_exponent * np.log10(d / params.ref_distance_m)
    snr_db = params.tx_power_dbm - pathloss_db - params.noise_power_dbm
    result = np.power(10.0, snr_db / 10.0)
    return float(result) if result.ndim == 0 else result


def shannon_capacity(bandwidth: float, snr: float | np.ndarray) -> float | np.ndarray:
    """Shannon capacity in bits/s for a bandwidth in Hz and a linear SNR."""
    result = bandwidth * np.log2(1.0 + np.asarray(snr, dtype=np.float64))
    return float(result) if result.ndim == 0 else result


def bs_mh_latency(distance: float | np.ndarray, params: LatencyParams) -> float | np.ndarray:
    """Latency in milliseconds between a BS and an MH that are `distance` meters apart."""
    result = params.base_ms + params.ms_per_km * (np.asarray(distance, dtype=np.float64) / 1000.0)
    return float(result) if result.ndim == 0 else result


def proportional_fair_allocate(demands: np.ndarray, caps: np.ndarray, capacity: float) -> np.ndarray:
    """
    Share a BS capacity among its UEs with demand-capped proportional fairness.

    Maximizes sum(log x_i) subject to sum(x_i) <= capacity and 0 <= x_i <= min(demand_i, cap_i).
    The solution is a water level: every UE gets min(limit_i, level).

    Args:
        demands: Requested throughput per UE (bits/s)
        caps: Achievable link throughput per UE (bits/s)
        capacity: BS capacity (bits/s)

    Returns:
        np.ndarray: Allocation per UE, in input order
    """
    limits = np.minimum(np.asarray(demands, dtype=np.float64), np.asarray(caps, dtype=np.float64))
    limits = np.maximum(limits, 0.0)
    if limits.sum() <= capacity:
        return limits.copy()

    # Fill from the smallest limit up; once a limit exceeds the equal share, everyone left gets that share.
    order = np.argsort(limits, kind="stable")
    allocation = np.empty_like(limits)
    remaining = float(capacity)
    n = limits.size
    for rank, idx in enumerate(order):
        share = remaining / (n - rank)
        if limits[idx] <= share:
            allocation[idx] = limits[idx]
            remaining -= limits[idx]
        else:
            allocation[order[rank:]] = share
            break
    return allocation


def pf_allocate_grouped(
    groups: np.ndarray,
    demands: np.ndarray,
    caps: np.ndarray,
    capacities: np.ndarray,
    active: np.ndarray | None = None,
) -> np.ndarray:
    """
    Proportional-fair allocation for many BSs at once.

    Args:
        groups: BS row of every UE
        demands: Demand per UE (bits/s)
        caps: Achievable link throughput per UE (bits/s)
        capacities: Capacity per BS row (bits/s)
        active: Optional mask of UEs still in the pool; inactive UEs get 0

    Returns:
        np.ndarray: Allocation per UE
    """
    limits = np.maximum(np.minimum(demands, caps), 0.0)
    if active is not None:
        limits = np.where(active, limits, 0.0)
    totals = np.bincount(groups, weights=limits, minlength=capacities.size)
    allocation = limits.copy()
    for bs in np.nonzero(totals > capacities)[0]:
        members = np.nonzero(groups == bs)[0]
        allocation[members] = proportional_fair_allocate(limits[members], limits[members], float(capacities[bs]))
    return allocation
