"""Pollutant transport on the control area: adjoint and forward solvers.

Both solvers share one explicit stencil kernel (five-point diffusion,
componentwise upwind advection, forward Euler in time) on the square grid.
Boundary stencils are closed by eliminating ghost points through the
discretized Robin/Neumann conditions.  The adjoint problem is marched in
reversed time with the reversed wind and a constant source; it is solved
once per scenario and reused for every policy.
"""

from __future__ import annotations

import numpy as np

from tramopt.network import CflReport, DispersionParams, Scenario

# outward normals of the four edges of the square domain
_EDGES = {
    "left": (-1.0, 0.0),
    "right": (1.0, 0.0),
    "bottom": (0.0, -1.0),
    "top": (0.0, 1.0),
}


class DispersionError(RuntimeError):
    """Raised on CFL violations or unstable marches."""


def classify_boundary(wind: tuple[float, float]) -> dict[str, str]:
    """Label each domain edge as wind inflow (v.eta < 0) or outflow (v.eta >= 0)."""
    out = {}
    for edge, eta in _EDGES.items():
        nu = wind[0] * eta[0] + wind[1] * eta[1]
        out[edge] = "outflow" if nu >= 0.0 else "inflow"
    return out


def cfl_check_adjoint(h: float, dt: float, params: DispersionParams) -> CflReport:
    """Tightened stability bounds for the explicit advection-diffusion step.

    The step passes when dt is at most one third of h^2/(4 mu + |v|_1 h),
    the advective expression stays below 1/3, and (for kappa > 0) dt*kappa
    stays below 1/3 so the reaction term keeps the update monotone.
    """
    vx, vy = params.wind
    mu = params.mu
    dt_bound = (1.0 / 3.0) * h * h / (4.0 * mu + (abs(vx) + abs(vy)) * h)
    advective = dt * (
        vx * vx / (2.0 * mu + abs(vx) * h) + vy * vy / (2.0 * mu + abs(vy) * h)
    )
    return CflReport(
        dt=dt,
        dt_bound=dt_bound,
        advective_value=advective,
        advective_bound=1.0 / 3.0,
        kappa_value=dt * params.kappa,
        kappa_bound=1.0 / 3.0,
    )


def ghost_coefficient(kind: str, mu: float, v_normal: float, h: float) -> float:
    """Multiplier turning the inner neighbor into the ghost value.

    ``kind`` is "robin" for the condition mu*du/deta + v_normal*u = 0 (with
    v_normal the coefficient on u along the outward normal) or "neumann" for
    du/deta = 0.  Central differencing of either condition expresses the
    ghost point as this coefficient times the mirrored interior neighbor.
    """
    if kind == "neumann":
        return 1.0
    if kind == "robin":
        denom = mu + v_normal * h
        if denom == 0.0:
            raise DispersionError("degenerate Robin condition: mu + v*h = 0")
        return (mu - v_normal * h) / denom
    raise ValueError(f"unknown boundary kind {kind!r}")


def ghost_value(kind: str, neighbor: float, mu: float, v_normal: float, h: float) -> float:
    return ghost_coefficient(kind, mu, v_normal, h) * neighbor


def _edge_coefficients(params: DispersionParams, h: float, problem: str) -> dict[str, float]:
    """Ghost multipliers per edge for the adjoint or the forward problem.

    The adjoint carries Robin conditions on the wind outflow boundary
    (mu dp/deta + (v.eta) p = 0) and Neumann on the inflow boundary; the
    forward problem mirrors this (Robin mu dphi/deta - (v.eta) phi = 0 on
    inflow, Neumann on outflow).  In both cases the coefficient on the
    solution is nonnegative.
    """
    coeffs = {}
    for edge, eta in _EDGES.items():
        nu = params.wind[0] * eta[0] + params.wind[1] * eta[1]
        if problem == "adjoint":
            robin = nu >= 0.0
            v_normal = nu
        elif problem == "forward":
            robin = nu < 0.0
            v_normal = -nu
        else:
            raise ValueError(f"unknown problem {problem!r}")
        coeffs[edge] = ghost_coefficient(
            "robin" if robin else "neumann", params.mu, v_normal, h
        )
    return coeffs


def _pad_with_ghosts(u: np.ndarray, coeffs: dict[str, float]) -> np.ndarray:
    """Extend the field by one ghost layer per edge (corners stay unused)."""
    n1 = u.shape[0]
    ext = np.zeros((n1 + 2, n1 + 2))
    ext[1:-1, 1:-1] = u
    ext[0, 1:-1] = coeffs["left"] * u[1, :]
    ext[-1, 1:-1] = coeffs["right"] * u[-2, :]
    ext[1:-1, 0] = coeffs["bottom"] * u[:, 1]
    ext[1:-1, -1] = coeffs["top"] * u[:, -2]
    return ext


def advance_field(u, coeffs, velocity, mu, kappa, h, dt, source):
    """One explicit step of du/dt = mu*lap(u) - velocity.grad(u) - kappa*u + source.

    ``u`` is indexed [i, j] with x = i*h, y = j*h; the update runs on every
    grid point including the boundary, which is closed by ghost elimination.
    """
    ax, ay = velocity
    axp, axm = max(ax, 0.0), min(ax, 0.0)
    ayp, aym = max(ay, 0.0), min(ay, 0.0)

    ext = _pad_with_ghosts(u, coeffs)
    east, west = ext[2:, 1:-1], ext[:-2, 1:-1]
    north, south = ext[1:-1, 2:], ext[1:-1, :-2]

    lap = (east + west + north + south - 4.0 * u) * (mu / (h * h))
    adv = (
        axm * east - axp * west + aym * north - ayp * south + (abs(ax) + abs(ay)) * u
    ) / h
    return u + dt * (lap - adv - kappa * u + source)


def _march(u0, coeffs, velocity, params, h, dt, n_steps, source):
    """March n_steps, returning the full history (n_steps+1, n+1, n+1).

    ``source`` is a scalar (constant in space and time) or an array whose
    slice k feeds the step from k to k+1.
    """
    history = np.empty((n_steps + 1,) + u0.shape)
    history[0] = u0
    u = u0
    for k in range(n_steps):
        src = source if np.isscalar(source) else source[k]
        u = advance_field(u, coeffs, velocity, params.mu, params.kappa, h, dt, src)
        history[k + 1] = u
    if not np.all(np.isfinite(history[-1])):
        raise DispersionError("field blew up: non-finite values (instability)")
    return history


def solve_adjoint(scenario: Scenario) -> np.ndarray:
    """Solve the backward pollution-sensitivity problem once per scenario.

    Returns p with shape (n_time+1, n_grid+1, n_grid+1) on the original time
    grid (p[n_time] = 0).  Internally the time-reversed problem is marched
    forward with the reversed wind and the constant source 1/(T*|area|).
    """
    params = scenario.dispersion
    cfl = cfl_check_adjoint(scenario.h, scenario.dt, params)
    if not cfl.passed:
        raise DispersionError(
            f"adjoint CFL violated: dt={cfl.dt:.6g} bound={cfl.dt_bound:.6g} "
            f"advective={cfl.advective_value:.6g} kappa_term={cfl.kappa_value:.6g}"
        )
    n1 = scenario.n_grid + 1
    coeffs = _edge_coefficients(params, scenario.h, "adjoint")
    velocity = (-params.wind[0], -params.wind[1])
    source = 1.0 / (scenario.horizon * scenario.area)
    reversed_hist = _march(
        np.zeros((n1, n1)),
        coeffs,
        velocity,
        params,
        scenario.h,
        scenario.dt,
        scenario.n_time,
        source,
    )
    return reversed_hist[::-1].copy()


def solve_dispersion_forward(scenario: Scenario, emission: np.ndarray) -> np.ndarray:
    """Solve the concentration evolution driven by a rasterized emission field.

    Validation oracle for the adjoint route: same stencils with the physical
    wind, the emission as source, and the mirrored boundary conditions.
    Returns phi with shape (n_time+1, n_grid+1, n_grid+1).
    """
    params = scenario.dispersion
    n1 = scenario.n_grid + 1
    if emission.shape != (scenario.n_time + 1, n1, n1):
        raise ValueError("emission field does not match the scenario grids")
    cfl = cfl_check_adjoint(scenario.h, scenario.dt, params)
    if not cfl.passed:
        raise DispersionError("forward dispersion step violates the CFL bound")
    coeffs = _edge_coefficients(params, scenario.h, "forward")
    phi0 = np.full((n1, n1), params.phi0)
    return _march(
        phi0, coeffs, params.wind, params, scenario.h, scenario.dt,
        scenario.n_time, emission,
    )
