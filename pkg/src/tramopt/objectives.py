"""Discrete objective functionals for a speed-limit policy.

All quadratures follow the right rectangle rule: time sums start at the
first step after the initial datum, spatial sums over the control area skip
the left and bottom grid rows.  The pollution objective is evaluated
through the precomputed adjoint, so scoring a policy costs one traffic
simulation and a few dot products; no PDE is solved per policy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tramopt.dispersion import solve_adjoint
from tramopt.emission import RasterMap, cell_rates, rasterize_network
from tramopt.network import Scenario
from tramopt.traffic import TrafficTrajectory, simulate_traffic

#: floor for relative comparisons on pollutant-free scenarios
EPS_RELATIVE = 1e-12


def j_flow(traj: TrafficTrajectory, policy, scenario: Scenario) -> float:
    """Accumulated traffic flow over all roads, cells, and time steps."""
    from tramopt.traffic import _policy_array, greenshields_flux

    v = _policy_array(policy, scenario)
    rho_max = np.array([r.rho_max for r in scenario.roads])
    flux = greenshields_flux(
        traj.densities[1:], v[None, :, None], rho_max[None, :, None]
    )
    return float(scenario.dt * scenario.ds * np.sum(flux))


def j_queue(traj: TrafficTrajectory, scenario: Scenario) -> float:
    """Time-averaged total queue length over all access roads."""
    return float(scenario.dt / scenario.horizon * np.sum(traj.queues[1:]))


def j_diff_adjoint(
    emission: np.ndarray, adjoint: np.ndarray, phi0, scenario: Scenario
) -> float:
    """Average pollutant mass via the adjoint pairing with the emission field.

    ``phi0`` may be a constant or a full (n_grid+1, n_grid+1) array; its term
    is policy-independent.
    """
    n1 = scenario.n_grid + 1
    if emission.shape != (scenario.n_time + 1, n1, n1) or adjoint.shape != emission.shape:
        raise ValueError("emission/adjoint fields do not match the scenario grids")
    h2 = scenario.h**2
    source_term = scenario.dt * h2 * float(
        np.sum(emission[1:, 1:, 1:] * adjoint[1:, 1:, 1:])
    )
    phi0_grid = np.asarray(phi0, dtype=float)
    if phi0_grid.ndim == 0:
        initial_term = h2 * float(phi0_grid) * float(np.sum(adjoint[0, 1:, 1:]))
    else:
        if phi0_grid.shape != (n1, n1):
            raise ValueError("phi0 grid does not match the scenario grid")
        initial_term = h2 * float(np.sum(phi0_grid[1:, 1:] * adjoint[0, 1:, 1:]))
    return source_term + initial_term


def j_diff_forward(concentration: np.ndarray, scenario: Scenario) -> float:
    """Average pollutant mass from a forward concentration history (oracle)."""
    n1 = scenario.n_grid + 1
    if concentration.shape != (scenario.n_time + 1, n1, n1):
        raise ValueError("concentration field does not match the scenario grids")
    weight = scenario.dt * scenario.h**2 / (scenario.horizon * scenario.area)
    return weight * float(np.sum(concentration[1:, 1:, 1:]))


@dataclass(frozen=True)
class ObjectiveBreakdown:
    j_flow: float
    j_diff: float
    j_queue: float
    delta: float

    @property
    def j_poll(self) -> float:
        return self.j_diff + self.delta * self.j_queue

    def vector(self, mode: str) -> np.ndarray:
        """Minimization-convention objective vector for the given mode."""
        if mode == "2d":
            return np.array([-self.j_flow, self.j_poll])
        if mode == "3d":
            return np.array([-self.j_flow, self.j_diff, self.j_queue])
        raise ValueError(f"unknown objective mode {mode!r}")


class PolicyEvaluator:
    """Scores policies against a scenario with the adjoint precomputed.

    The adjoint is contracted with the raster weights once, leaving per
    policy only the traffic run and a (time x road x cell) dot product.
    Instances are read-only after construction and safe to share.
    """

    def __init__(
        self,
        scenario: Scenario,
        adjoint: np.ndarray | None = None,
        raster: RasterMap | None = None,
    ):
        self.scenario = scenario
        self.adjoint = solve_adjoint(scenario) if adjoint is None else adjoint
        self.raster = rasterize_network(scenario) if raster is None else raster
        self._pairing = self._contract_adjoint()
        phi0 = scenario.dispersion.phi0
        self.phi0_term = (
            scenario.h**2 * phi0 * float(np.sum(self.adjoint[0, 1:, 1:]))
        )

    def _contract_adjoint(self) -> np.ndarray:
        """Raster-weighted adjoint per (time, road, cell).

        Only covered grid points with both indices >= 1 contribute, matching
        the spatial quadrature of the pollution objective.
        """
        sc = self.scenario
        raster = self.raster
        pairing_flat = np.zeros((sc.n_roads * sc.n_cells, sc.n_time + 1))
        keep_point = (raster.points_i >= 1) & (raster.points_j >= 1)
        keep_entry = keep_point[raster.entry_point] if raster.entry_point.size else np.zeros(0, bool)
        if np.any(keep_entry):
            p_at_points = self.adjoint[:, raster.points_i, raster.points_j]
            vals = (
                p_at_points[:, raster.entry_point[keep_entry]]
                * raster.entry_weight[keep_entry]
            )
            flat_idx = (
                raster.entry_road[keep_entry] * sc.n_cells
                + raster.entry_cell[keep_entry]
            )
            np.add.at(pairing_flat, flat_idx, vals.T)
        return pairing_flat.T.reshape(sc.n_time + 1, sc.n_roads, sc.n_cells)

    def components(self, policy) -> ObjectiveBreakdown:
        sc = self.scenario
        traj = simulate_traffic(sc, policy)
        rates = cell_rates(traj.densities, sc, policy)
        source_term = sc.dt * sc.h**2 * float(np.sum(rates[1:] * self._pairing[1:]))
        return ObjectiveBreakdown(
            j_flow=j_flow(traj, policy, sc),
            j_diff=source_term + self.phi0_term,
            j_queue=j_queue(traj, sc),
            delta=sc.delta,
        )

    def vector(self, policy) -> np.ndarray:
        return self.components(policy).vector(self.scenario.mode)


def evaluate_policy(scenario: Scenario, policy, adjoint: np.ndarray) -> np.ndarray:
    """Objective vector of one policy given the precomputed adjoint."""
    return PolicyEvaluator(scenario, adjoint=adjoint).vector(policy)
