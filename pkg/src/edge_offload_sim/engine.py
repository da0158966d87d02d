"""Per-timestep offloading protocol: association, obfuscated reporting, MH selection and admission."""

import dataclasses
from dataclasses import dataclass

import numpy as np

from edge_offload_sim.config import ApplicationsConfig, PfConfig
from edge_offload_sim.enums import ApplicationName, DenialReason, MobilityType
from edge_offload_sim.exceptions import ConfigError, InvariantViolation, TraceGapError
from edge_offload_sim.link_model import (
    LatencyParams,
    RadioParams,
    bs_mh_latency,
    pf_allocate_grouped,
    shannon_capacity,
    snr_linear,
)
from edge_offload_sim.mobility import MobilityTrace, UserAgent
from edge_offload_sim.privacy import PrivacyMechanism, obfuscate
from edge_offload_sim.rng import TAG_PRIVACY, epsilon_key, user_uniforms
from edge_offload_sim.topology import Topology

MOBILITY_CODES = list(MobilityType)
APPLICATION_CODES = list(ApplicationName)


@dataclass(frozen=True)
class ApplicationType:
    """Network demands of an application."""

    name: ApplicationName
    throughput_bps: float
    latency_ms: float


def application_types(config: ApplicationsConfig) -> dict[ApplicationName, ApplicationType]:
    return {
        name: ApplicationType(name, req.throughput_bps, req.latency_ms) for name, req in config.requirements.items()
    }


def apportion(count: int, percentages: list[float]) -> list[int]:
    """
    Largest-remainder apportionment of `count` items over the given percentages.

    Remainder ties go to the earlier entry.
    """
    total = sum(percentages)
    if total <= 0:
        raise ConfigError("Application mix percentages must sum to a positive value")
    quotas = [count * p / total for p in percentages]
    seats = [int(q) for q in quotas]
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - seats[i]), i))
    for i in order[: count - sum(seats)]:
        seats[i] += 1
    return seats


def assign_applications(
    users: list[UserAgent],
    mix: dict[MobilityType, dict[ApplicationName, float]],
    rng: np.random.Generator,
) -> list[UserAgent]:
    """
    Give every user an application for the whole run.

    Per mobility type the application counts are apportioned exactly from the mix, then dealt to the
    users (in id order) through a random permutation.

    Returns:
        list[UserAgent]: Users with their application set, in input order
    """
    assigned: dict[int, ApplicationName] = {}
    for mobility in MobilityType:
        members = sorted(u.id for u in users if u.mobility == mobility)
        if not members:
            continue
        row = mix[mobility]
        apps = [a for a in APPLICATION_CODES if a in row]
        counts = apportion(len(members), [row[a] for a in apps])
        labels = np.repeat(np.arange(len(apps)), counts)
        for user_id, code in zip(members, rng.permutation(labels), strict=True):
            assigned[user_id] = apps[code]
    return [dataclasses.replace(u, application=assigned[u.id]) for u in users]


@dataclass(frozen=True)
class OffloadRequest:
    user_id: int
    timestep: int
    true_location: tuple[float, float]
    true_bs: int
    reported_location: tuple[float, float]
    presumed_bs: int
    selected_mh: int
    ideal_mh: int


@dataclass(frozen=True)
class RequestOutcome:
    """Admission result of one request. Latencies are measured from the true BS."""

    request: OffloadRequest
    accepted: bool
    denial_reasons: frozenset[DenialReason]
    achieved_latency_ms: float
    allocated_bps: float
    ideal_latency_ms: float

    def __post_init__(self) -> None:
        if self.accepted == bool(self.denial_reasons):
            raise InvariantViolation(
                f"Request of user {self.request.user_id}: accepted flag disagrees with its denial reasons"
            )


class LatencyTable:
    """BS-MH latency for every (BS row, MH row) pair."""

    def __init__(self, topology: Topology, params: LatencyParams):
        bs = topology.bs_positions
        mh = topology.mh_positions
        distance = np.hypot(bs[:, None, 0] - mh[None, :, 0], bs[:, None, 1] - mh[None, :, 1])
        self.matrix = np.asarray(bs_mh_latency(distance, params)).reshape(distance.shape)
        self._bs_rows = {int(b): i for i, b in enumerate(topology.bs_index.ids)}
        self._mh_rows = {int(m): i for i, m in enumerate(topology.mh_index.ids)}

    def bs_row(self, bs_id: int) -> int:
        if bs_id not in self._bs_rows:
            raise InvariantViolation(f"Unknown BS id {bs_id}")
        return self._bs_rows[bs_id]

    def mh_row(self, mh_id: int) -> int:
        if mh_id not in self._mh_rows:
            raise InvariantViolation(f"Unknown MH id {mh_id}")
        return self._mh_rows[mh_id]

    def lookup(self, bs_id: int, mh_id: int) -> float:
        return float(self.matrix[self.bs_row(bs_id), self.mh_row(mh_id)])


class MhLedger:
    """Residual throughput of every MH for the current timestep."""

    def __init__(self, topology: Topology):
        self.ids = topology.mh_index.ids
        self.capacities = topology.mh_capacities
        self.residual = self.capacities.copy()
        self._rows = {int(m): i for i, m in enumerate(self.ids)}

    def reset(self) -> None:
        self.residual[:] = self.capacities

    def row(self, mh_id: int) -> int:
        if mh_id not in self._rows:
            raise InvariantViolation(f"Unknown MH id {mh_id}")
        return self._rows[mh_id]

    def residual_of(self, mh_id: int) -> float:
        return float(self.residual[self.row(mh_id)])

    def consume(self, mh_id: int, amount: float) -> None:
        row = self.row(mh_id)
        self.residual[row] -= amount
        if self.residual[row] < 0:
            raise InvariantViolation(f"MH {mh_id} residual went negative ({self.residual[row]})")

    def admit_batch(self, mh_rows: np.ndarray, demands: np.ndarray, candidates: np.ndarray) -> np.ndarray:
        """
        Capacity check for requests listed in ascending user id order.

        Each request sees the residual left by the earlier accepted requests; a candidate (one that
        passes the latency and throughput checks) that also passes consumes its demand.

        Returns:
            np.ndarray: Mask of requests whose demand fit the MH residual
        """
        n_mh = self.residual.size
        fits = np.ones(mh_rows.size, dtype=bool)
        wanted = np.bincount(mh_rows, weights=np.where(candidates, demands, 0.0), minlength=n_mh)
        largest = np.zeros(n_mh)
        np.maximum.at(largest, mh_rows, demands)
        # MHs whose residual covers every candidate plus the largest demand need no ordering.
        contended = np.nonzero(self.residual - wanted < largest)[0]
        start = self.residual.copy()
        self.residual -= wanted
        for mh in contended:
            residual = start[mh]
            for i in np.nonzero(mh_rows == mh)[0]:
                fits[i] = residual >= demands[i]
                if fits[i] and candidates[i]:
                    residual -= demands[i]
            self.residual[mh] = residual
        if (self.residual < 0).any():
            bad = int(np.argmin(self.residual))
            raise InvariantViolation(f"MH {self.ids[bad]} residual went negative ({self.residual[bad]})")
        return fits


def admit(
    request: OffloadRequest,
    app: ApplicationType,
    ledger: MhLedger,
    allocation_bps: float,
    latency: LatencyTable,
) -> RequestOutcome:
    """
    Evaluate the three admission conditions of one request, without short-circuit.

    Latency is measured between the true BS and the selected MH. On acceptance the selected
    MH's residual drops by the application's throughput demand.

    Raises:
        InvariantViolation: If the request names an unknown BS or MH
    """
    achieved = latency.lookup(request.true_bs, request.selected_mh)
    ideal = latency.lookup(request.true_bs, request.ideal_mh)
    reasons = set()
    if not achieved <= app.latency_ms:
        reasons.add(DenialReason.LATENCY_EXCEEDED)
    if not allocation_bps >= app.throughput_bps:
        reasons.add(DenialReason.THROUGHPUT_INSUFFICIENT)
    if not ledger.residual_of(request.selected_mh) >= app.throughput_bps:
        reasons.add(DenialReason.MH_CAPACITY_EXHAUSTED)
    if not reasons:
        ledger.consume(request.selected_mh, app.throughput_bps)
    return RequestOutcome(request, not reasons, frozenset(reasons), achieved, allocation_bps, ideal)


@dataclass
class StepOutcomes:
    """Column arrays of every request of one timestep, in ascending user id order."""

    timestep: int
    user_ids: np.ndarray
    true_xy: np.ndarray
    reported_xy: np.ndarray
    true_bs: np.ndarray
    presumed_bs: np.ndarray
    selected_mh: np.ndarray
    ideal_mh: np.ndarray
    reason_latency: np.ndarray
    reason_throughput: np.ndarray
    reason_capacity: np.ndarray
    achieved_latency_ms: np.ndarray
    ideal_latency_ms: np.ndarray
    allocated_bps: np.ndarray

    def __len__(self) -> int:
        return int(self.user_ids.size)

    @property
    def accepted(self) -> np.ndarray:
        return ~(self.reason_latency | self.reason_throughput | self.reason_capacity)

    def records(self) -> list[RequestOutcome]:
        """Per-request objects, for inspection and tests."""
        out = []
        for i in range(len(self)):
            request = OffloadRequest(
                user_id=int(self.user_ids[i]),
                timestep=self.timestep,
                true_location=(float(self.true_xy[i, 0]), float(self.true_xy[i, 1])),
                true_bs=int(self.true_bs[i]),
                reported_location=(float(self.reported_xy[i, 0]), float(self.reported_xy[i, 1])),
                presumed_bs=int(self.presumed_bs[i]),
                selected_mh=int(self.selected_mh[i]),
                ideal_mh=int(self.ideal_mh[i]),
            )
            reasons = frozenset(
                reason
                for reason, flags in (
                    (DenialReason.LATENCY_EXCEEDED, self.reason_latency),
                    (DenialReason.THROUGHPUT_INSUFFICIENT, self.reason_throughput),
                    (DenialReason.MH_CAPACITY_EXHAUSTED, self.reason_capacity),
                )
                if flags[i]
            )
            out.append(
                RequestOutcome(
                    request,
                    not reasons,
                    reasons,
                    float(self.achieved_latency_ms[i]),
                    float(self.allocated_bps[i]),
                    float(self.ideal_latency_ms[i]),
                )
            )
        return out


@dataclass
class EngineState:
    """Mutable per-run state: the MH ledger and the warning counters."""

    seed: int
    ledger: MhLedger
    clipped_reports: int = 0
    capacity_denials: int = 0
    pf_extra_rounds: int = 0


class OffloadEngine:
    """
    Runs the offloading protocol for a fixed topology and user population.

    Every user issues one request per timestep; MH residuals are reset at the start of each step.
    """

    def __init__(
        self,
        topology: Topology,
        users: list[UserAgent],
        applications: dict[ApplicationName, ApplicationType],
        radio: RadioParams,
        latency: LatencyParams,
        pf: PfConfig,
    ):
        users = sorted(users, key=lambda u: u.id)
        if any(u.application is None for u in users):
            raise ConfigError("Every user needs an application before the engine runs")
        self.topology = topology
        self.users = users
        self.radio = radio
        self.pf = pf
        self.latency = LatencyTable(topology, latency)
        self.user_ids = np.array([u.id for u in users], dtype=np.int64)
        self.mobility_codes = np.array([MOBILITY_CODES.index(u.mobility) for u in users], dtype=np.int8)
        self.app_codes = np.array([APPLICATION_CODES.index(u.application) for u in users], dtype=np.int8)
        self.demand_bps = np.array([applications[u.application].throughput_bps for u in users])
        self.latency_bound_ms = np.array([applications[u.application].latency_ms for u in users])
        self._ideal_rows = topology.ideal_mh_rows
        self._bs_capacities = topology.bs_capacities

    def new_state(self, seed: int) -> EngineState:
        return EngineState(seed=seed, ledger=MhLedger(self.topology))

    def _check_trace(self, trace: MobilityTrace, timestep: int) -> None:
        if trace.user_ids.shape == self.user_ids.shape and np.array_equal(trace.user_ids, self.user_ids):
            return
        missing = np.setdiff1d(self.user_ids, trace.user_ids)
        raise TraceGapError(int(missing[0]) if missing.size else int(self.user_ids[0]), timestep)

    def step(
        self, timestep: int, trace: MobilityTrace, mechanism: PrivacyMechanism, state: EngineState
    ) -> StepOutcomes:
        """
        Process the requests of every user at one timestep.

        Raises:
            TraceGapError: If the trace does not cover the timestep or a user
            InvariantViolation: If MH accounting breaks
        """
        self._check_trace(trace, timestep)
        true_xy = trace.at(timestep)
        bs_index = self.topology.bs_index
        true_rows = bs_index.query_rows(true_xy)

        if mechanism.is_identity:
            reported_xy = true_xy
            presumed_rows = true_rows
        else:
            key = epsilon_key(mechanism.epsilon)
            uniforms = user_uniforms(state.seed, TAG_PRIVACY, timestep, self.user_ids, 2, key)
            reported_xy, clipped = obfuscate(true_xy, mechanism, uniforms, self.topology.area)
            state.clipped_reports += clipped
            presumed_rows = bs_index.query_rows(reported_xy)

        selected_rows = self._ideal_rows[presumed_rows]
        ideal_rows = self._ideal_rows[true_rows]
        achieved = self.latency.matrix[true_rows, selected_rows]
        ideal = self.latency.matrix[true_rows, ideal_rows]
        lat_fail = ~(achieved <= self.latency_bound_ms)

        bs_xy = bs_index.positions[true_rows]
        distance = np.hypot(true_xy[:, 0] - bs_xy[:, 0], true_xy[:, 1] - bs_xy[:, 1])
        link_bps = np.asarray(shannon_capacity(self.radio.bandwidth_per_ue_hz, snr_linear(distance, self.radio)))

        allocation, tput_fail, cap_fail = self._admission(true_rows, selected_rows, link_bps, lat_fail, state)
        state.capacity_denials += int(cap_fail.sum())

        mh_ids = self.topology.mh_index.ids
        return StepOutcomes(
            timestep=timestep,
            user_ids=self.user_ids,
            true_xy=true_xy,
            reported_xy=reported_xy,
            true_bs=bs_index.ids[true_rows],
            presumed_bs=bs_index.ids[presumed_rows],
            selected_mh=mh_ids[selected_rows],
            ideal_mh=mh_ids[ideal_rows],
            reason_latency=lat_fail,
            reason_throughput=tput_fail,
            reason_capacity=cap_fail,
            achieved_latency_ms=achieved,
            ideal_latency_ms=ideal,
            allocated_bps=allocation,
        )

    def _admission(
        self,
        true_rows: np.ndarray,
        selected_rows: np.ndarray,
        link_bps: np.ndarray,
        lat_fail: np.ndarray,
        state: EngineState,
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """PF sharing and the throughput and capacity checks, optionally iterated after denials."""
        demand = self.demand_bps
        pool = np.ones(demand.size, dtype=bool)
        allocation = np.zeros(demand.size)
        tput_fail = np.zeros(demand.size, dtype=bool)
        cap_fail = np.zeros(demand.size, dtype=bool)
        rounds = self.pf.max_iterations if self.pf.iterate_after_denial else 1
        for round_no in range(1, rounds + 1):
            fresh = pf_allocate_grouped(true_rows, demand, link_bps, self._bs_capacities, active=pool)
            allocation = np.where(pool, fresh, allocation)
            tput_fail = np.where(pool, ~(allocation >= demand), tput_fail)
            state.ledger.reset()
            fits = state.ledger.admit_batch(selected_rows, demand, pool & ~lat_fail & ~tput_fail)
            cap_fail = np.where(pool, ~fits, cap_fail)
            # Users that will not be served for latency or capacity reasons leave the PF pool.
            leaving = pool & (lat_fail | cap_fail)
            if not self.pf.iterate_after_denial or not leaving.any():
                break
            pool &= ~leaving
        state.pf_extra_rounds += round_no - 1
        return allocation, tput_fail, cap_fail
