"""Macroscopic traffic dynamics on the network.

Cell-averaged densities evolve by a Godunov finite-volume scheme with a
concave Greenshields flux; junctions couple roads through closed-form
demand/supply solutions, access roads buffer prescribed inflow in point
queues, and exit roads discharge at free flow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from tramopt.network import Scenario, SpeedLimitPolicy

_DENSITY_SLACK = 1e-12


class TrafficError(ValueError):
    """Raised on infeasible inputs to the traffic model."""


def _check_density(rho, rho_max) -> None:
    rho = np.asarray(rho)
    if np.any(rho < -_DENSITY_SLACK) or np.any(rho > np.asarray(rho_max) + _DENSITY_SLACK):
        raise TrafficError(f"density outside [0, rho_max]: {rho!r}")


def greenshields_flux(rho, v_max, rho_max):
    """Concave flux v*rho*(1 - rho/rho_max); peaks at rho_max/2 with value v*rho_max/4."""
    _check_density(rho, rho_max)
    return v_max * rho * (1.0 - rho / rho_max)


def flux_capacity(v_max, rho_max):
    return v_max * rho_max / 4.0


def demand(rho, v_max, rho_max):
    """Increasing envelope of the flux: Q(rho) below critical density, capacity above."""
    _check_density(rho, rho_max)
    return np.where(
        rho <= rho_max / 2.0,
        v_max * rho * (1.0 - rho / rho_max),
        flux_capacity(v_max, rho_max),
    )


def supply(rho, v_max, rho_max):
    """Decreasing envelope of the flux: capacity below critical density, Q(rho) above."""
    _check_density(rho, rho_max)
    return np.where(
        rho <= rho_max / 2.0,
        flux_capacity(v_max, rho_max),
        v_max * rho * (1.0 - rho / rho_max),
    )


def godunov_flux(u, v, v_max, rho_max):
    """Interface flux min{demand(left), supply(right)}."""
    return np.minimum(demand(u, v_max, rho_max), supply(v, v_max, rho_max))


def _demand_s(rho: float, v_max: float, rho_max: float) -> float:
    # scalar fast path for the stepping loop; range enforced by clipping
    if rho <= rho_max / 2.0:
        return v_max * rho * (1.0 - rho / rho_max)
    return v_max * rho_max / 4.0


def _supply_s(rho: float, v_max: float, rho_max: float) -> float:
    if rho <= rho_max / 2.0:
        return v_max * rho_max / 4.0
    return v_max * rho * (1.0 - rho / rho_max)


# ---------------------------------------------------------------------------
# junction coupling (closed forms for the three basis junctions)


def junction_one_to_one(d_in: float, s_out: float) -> tuple[float, float]:
    if d_in < 0.0 or s_out < 0.0:
        raise TrafficError("negative demand or supply at junction")
    q = min(d_in, s_out)
    return q, q


def junction_one_to_two(
    d1: float, s2: float, s3: float, alpha: tuple[float, float]
) -> tuple[float, float, float]:
    """Diverging junction: split demand by the distribution rates, cap by supplies."""
    if abs(alpha[0] + alpha[1] - 1.0) > 1e-12:
        raise TrafficError("distribution rates must sum to 1")
    if min(d1, s2, s3) < 0.0:
        raise TrafficError("negative demand or supply at junction")
    q2 = min(alpha[0] * d1, s2)
    q3 = min(alpha[1] * d1, s3)
    return q2 + q3, q2, q3


def junction_two_to_one(
    d1: float, d2: float, s_out: float, beta: tuple[float, float]
) -> tuple[float, float, float]:
    """Merging junction: priority shares of the outgoing supply, slack reallocated."""
    if abs(beta[0] + beta[1] - 1.0) > 1e-12:
        raise TrafficError("priority rates must sum to 1")
    if min(d1, d2, s_out) < 0.0:
        raise TrafficError("negative demand or supply at junction")
    gamma1 = max(beta[0] * s_out, s_out - d2)
    gamma2 = max(beta[1] * s_out, s_out - d1)
    q1 = min(d1, gamma1)
    q2 = min(d2, gamma2)
    return q1, q2, q1 + q2


def queue_step(
    ell: float, q_in: float, road_supply: float, dt: float
) -> tuple[float, float]:
    """Explicit Euler update of a point queue feeding a road.

    The queue discharges at min(prescribed inflow + rate needed to clear the
    queue within dt, road supply).  Returns (next queue length, outflow rate).
    """
    if ell < 0.0 or q_in < 0.0 or road_supply < 0.0:
        raise TrafficError("queue state and rates must be nonnegative")
    if dt <= 0.0:
        raise TrafficError("dt must be positive")
    q_out = min(q_in + ell / dt, road_supply)
    ell_next = max(ell + dt * (q_in - q_out), 0.0)
    return ell_next, q_out


def max_stable_dt(v_maxes, ds: float) -> float:
    """Largest stable time step: ds over the speed-limit bound on |Q'|."""
    v = np.asarray(v_maxes, dtype=float)
    if v.size == 0:
        raise TrafficError("empty network")
    return ds / float(np.max(v))


# ---------------------------------------------------------------------------
# stepping


def step_single_road(rho, v_max, rho_max, ds, dt, flux_in, flux_out):
    """One Godunov step of an isolated road with prescribed boundary fluxes."""
    rho = np.asarray(rho, dtype=float)
    interior = godunov_flux(rho[:-1], rho[1:], v_max, rho_max)
    flux = np.concatenate(([flux_in], interior, [flux_out]))
    out = rho + dt / ds * (flux[:-1] - flux[1:])
    return np.clip(out, 0.0, rho_max)


@dataclass
class TrafficState:
    """Instantaneous network state: per-road cell averages and queue lengths."""

    densities: np.ndarray  # (n_roads, n_cells)
    queues: np.ndarray  # (n_access,)
    time: float


@dataclass
class TrafficTrajectory:
    """Snapshots over the time grid plus recorded boundary flows.

    ``inflow``/``outflow`` hold per grid interval the mean flux entering a
    road at its tail and leaving at its head; ``external_inflow`` holds the
    prescribed access rates actually applied on each interval.
    """

    times: np.ndarray  # (n_time + 1,)
    densities: np.ndarray  # (n_time + 1, n_roads, n_cells)
    queues: np.ndarray  # (n_time + 1, n_access)
    access_roads: tuple[int, ...]  # road ids owning the queue columns
    inflow: np.ndarray  # (n_time, n_roads)
    outflow: np.ndarray  # (n_time, n_roads)
    external_inflow: np.ndarray  # (n_time, n_access)

    @property
    def n_time(self) -> int:
        return len(self.times) - 1


@dataclass
class _Plan:
    rho_max: np.ndarray  # (n_roads,)
    junctions: list
    access: list  # (road index, queue slot)
    exit_idx: np.ndarray
    inflow_series: np.ndarray  # (n_access, n_time)


def _compile(scenario: Scenario) -> _Plan:
    rho_max = np.array([r.rho_max for r in scenario.roads])
    junctions = []
    for j in scenario.junctions:
        in_idx = tuple(scenario.road_index(r) for r in j.incoming)
        out_idx = tuple(scenario.road_index(r) for r in j.outgoing)
        junctions.append((j.kind, in_idx, out_idx, j.alpha, j.beta))
    access = [(scenario.road_index(a.road), slot) for slot, a in enumerate(scenario.access)]
    exit_idx = np.array([scenario.road_index(r) for r in scenario.exits], dtype=int)
    series = np.zeros((len(scenario.access), scenario.n_time))
    for slot, a in enumerate(scenario.access):
        series[slot, :] = a.inflow if isinstance(a.inflow, tuple) else float(a.inflow)
    return _Plan(rho_max, junctions, access, exit_idx, series)


def _boundary_fluxes(rho, queues, v, plan, dt, q_in_now):
    """Solve all junction/queue/exit couplings for one substep.

    Returns (inflow per road, outflow per road, next queue lengths).
    """
    n_roads = rho.shape[0]
    f_in = np.zeros(n_roads)
    f_out = np.zeros(n_roads)
    queues_next = queues.copy()

    rho_max = plan.rho_max
    for kind, in_idx, out_idx, alpha, beta in plan.junctions:
        if kind == "1to1":
            i, j = in_idx[0], out_idx[0]
            d = _demand_s(rho[i, -1], v[i], rho_max[i])
            s = _supply_s(rho[j, 0], v[j], rho_max[j])
            q = d if d < s else s
            f_out[i] = q
            f_in[j] = q
        elif kind == "1to2":
            i = in_idx[0]
            j2, j3 = out_idx
            d = _demand_s(rho[i, -1], v[i], rho_max[i])
            q2 = min(alpha[0] * d, _supply_s(rho[j2, 0], v[j2], rho_max[j2]))
            q3 = min(alpha[1] * d, _supply_s(rho[j3, 0], v[j3], rho_max[j3]))
            f_out[i] = q2 + q3
            f_in[j2] = q2
            f_in[j3] = q3
        else:  # 2to1
            i1, i2 = in_idx
            j = out_idx[0]
            d1 = _demand_s(rho[i1, -1], v[i1], rho_max[i1])
            d2 = _demand_s(rho[i2, -1], v[i2], rho_max[i2])
            s = _supply_s(rho[j, 0], v[j], rho_max[j])
            q1 = min(d1, max(beta[0] * s, s - d2))
            q2 = min(d2, max(beta[1] * s, s - d1))
            f_out[i1] = q1
            f_out[i2] = q2
            f_in[j] = q1 + q2

    for road_idx, slot in plan.access:
        s_road = _supply_s(rho[road_idx, 0], v[road_idx], rho_max[road_idx])
        q_out = min(q_in_now[slot] + queues[slot] / dt, s_road)
        queues_next[slot] = max(queues[slot] + dt * (q_in_now[slot] - q_out), 0.0)
        f_in[road_idx] = q_out

    for road_idx in plan.exit_idx:
        f_out[road_idx] = _demand_s(rho[road_idx, -1], v[road_idx], rho_max[road_idx])

    return f_in, f_out, queues_next


def _substep(rho, queues, v, plan, ds, dt, q_in_now):
    f_in, f_out, queues_next = _boundary_fluxes(rho, queues, v, plan, dt, q_in_now)
    cap = v[:, None] * plan.rho_max[:, None] / 4.0
    left, right = rho[:, :-1], rho[:, 1:]
    half = plan.rho_max[:, None] / 2.0
    dem = np.where(left <= half, v[:, None] * left * (1.0 - left / plan.rho_max[:, None]), cap)
    sup = np.where(right <= half, cap, v[:, None] * right * (1.0 - right / plan.rho_max[:, None]))
    interior = np.minimum(dem, sup)
    flux = np.concatenate((f_in[:, None], interior, f_out[:, None]), axis=1)
    rho_next = rho + dt / ds * (flux[:, :-1] - flux[:, 1:])
    rho_next = np.clip(rho_next, 0.0, plan.rho_max[:, None])
    return rho_next, queues_next, f_in, f_out


def lwr_step(
    state: TrafficState, policy, scenario: Scenario, dt: float
) -> TrafficState:
    """Advance the whole network by one step of size dt (must satisfy CFL)."""
    v = _policy_array(policy, scenario)
    if dt > max_stable_dt(v, scenario.ds) * (1.0 + 1e-12):
        raise TrafficError(f"dt={dt} violates the traffic CFL bound")
    plan = _compile(scenario)
    k = min(int(state.time / scenario.dt), scenario.n_time - 1)
    q_in_now = plan.inflow_series[:, k] if plan.inflow_series.size else np.zeros(0)
    rho, queues, _, _ = _substep(
        state.densities, state.queues, v, plan, scenario.ds, dt, q_in_now
    )
    return TrafficState(densities=rho, queues=queues, time=state.time + dt)


def _policy_array(policy, scenario: Scenario) -> np.ndarray:
    values = policy.values if isinstance(policy, SpeedLimitPolicy) else policy
    v = np.asarray(values, dtype=float)
    if v.shape != (scenario.n_roads,):
        raise TrafficError(
            f"policy must have one speed limit per road ({scenario.n_roads})"
        )
    lower, upper = scenario.policy_bounds()
    if np.any(v < np.asarray(lower)) or np.any(v > np.asarray(upper)):
        raise TrafficError("policy violates the speed-limit box constraints")
    return v


def simulate_traffic(scenario: Scenario, policy) -> TrafficTrajectory:
    """Run the traffic model over the whole horizon for a fixed policy.

    The grid step is split into however many equal substeps the CFL bound
    requires; snapshots land exactly on the output time grid and boundary
    fluxes are recorded as per-interval means, so discrete mass balance holds
    to rounding.
    """
    v = _policy_array(policy, scenario)
    plan = _compile(scenario)
    ds = scenario.ds
    dt_grid = scenario.dt
    n_sub = max(1, math.ceil(dt_grid / max_stable_dt(v, ds) - 1e-12))
    dt = dt_grid / n_sub

    n_time, n_roads, n_cells = scenario.n_time, scenario.n_roads, scenario.n_cells
    n_access = len(scenario.access)

    rho = np.array([r.rho0 for r in scenario.roads], dtype=float)
    queues = np.array([a.queue0 for a in scenario.access], dtype=float)

    densities = np.empty((n_time + 1, n_roads, n_cells))
    queue_hist = np.empty((n_time + 1, n_access))
    inflow = np.zeros((n_time, n_roads))
    outflow = np.zeros((n_time, n_roads))
    densities[0] = rho
    queue_hist[0] = queues

    for k in range(n_time):
        q_in_now = plan.inflow_series[:, k] if n_access else np.zeros(0)
        f_in_sum = np.zeros(n_roads)
        f_out_sum = np.zeros(n_roads)
        for _ in range(n_sub):
            rho, queues, f_in, f_out = _substep(rho, queues, v, plan, ds, dt, q_in_now)
            f_in_sum += f_in
            f_out_sum += f_out
        densities[k + 1] = rho
        queue_hist[k + 1] = queues
        inflow[k] = f_in_sum / n_sub
        outflow[k] = f_out_sum / n_sub

    return TrafficTrajectory(
        times=np.arange(n_time + 1) * dt_grid,
        densities=densities,
        queues=queue_hist,
        access_roads=tuple(a.road for a in scenario.access),
        inflow=inflow,
        outflow=outflow,
        external_inflow=plan.inflow_series.T.copy(),
    )


def mass_balance_residuals(traj: TrafficTrajectory, scenario: Scenario) -> np.ndarray:
    """Per-step defect of global mass balance (roads + queues vs boundary flows)."""
    ds = scenario.ds
    dt = scenario.dt
    road_change = ds * np.sum(traj.densities[1:] - traj.densities[:-1], axis=(1, 2))
    queue_change = np.sum(traj.queues[1:] - traj.queues[:-1], axis=1)
    fed = np.sum(traj.external_inflow, axis=1)
    exit_idx = [scenario.road_index(r) for r in scenario.exits]
    drained = np.sum(traj.outflow[:, exit_idx], axis=1)
    return road_change + queue_change - dt * (fed - drained)
