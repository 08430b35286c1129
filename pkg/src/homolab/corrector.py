"""Correctors: periodic, localized (massive), flux, potential, linearized.

The corrector phi_xi solves ``-D-.A(omega, xi + D+ phi) = 0`` on the torus
(mean-free), and its massive localization phi^T adds the zero-order term
``phi/T``.  From a converged corrector we build the flux corrector sigma (a
skew tensor field with ``D-.sigma ~ q - mean(q)``), the potential theta of phi,
linearized correctors in a slope direction Xi (forward or adjoint coefficient),
the minimal radius diagnostic, and the localization gap between scales T and 2T.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import (
    DiscreteField,
    PeriodicGrid,
    _solve_shifted_poisson_array,
    div_backward,
    grad_centered,
    grad_forward,
    read_field,
    write_field,
)
from .material import OperatorFamily
from .randomfield import ParameterField
from .solvers import SolveResult, solve_linear_coefficient, solve_monotone_system

__all__ = [
    "CorrectorSet",
    "LinearizedCorrector",
    "MinimalRadiusConfig",
    "MinimalRadiusResult",
    "LocalizationGap",
    "solve_periodic_corrector",
    "solve_localized_corrector",
    "build_flux_corrector",
    "build_potential",
    "solve_linearized_corrector",
    "minimal_radius",
    "localization_gap",
    "save_corrector_set",
    "load_corrector_set",
]


@dataclass
class CorrectorSet:
    """A corrector solve and its derived fields.

    ``T`` is ``inf`` for the periodic (mass-free) corrector.  ``phi`` has
    component shape (m,), the flux ``q`` (m, d), ``sigma`` (m, d, d) skew in its
    last two axes, ``theta`` (m, d).
    """

    grid: PeriodicGrid
    omega: ParameterField
    fam: OperatorFamily
    xi: np.ndarray
    T: float
    phi: DiscreteField
    q: DiscreteField
    result: SolveResult
    sigma: DiscreteField | None = None
    theta: DiscreteField | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def kappa(self) -> float:
        return 0.0 if np.isinf(self.T) else 1.0 / self.T

    def gradient(self) -> np.ndarray:
        return grad_forward(self.grid, self.phi.values)

    def energy_density(self) -> float:
        """Site-average of |D+ phi|^2 + |phi|^2 / T; bounded by (Lam/lam)^2 |xi|^2."""
        g2 = float(np.mean(np.sum(self.gradient() ** 2, axis=(-2, -1))))
        m2 = 0.0 if np.isinf(self.T) else float(np.mean(np.sum(self.phi.values**2, axis=-1))) / self.T
        return g2 + m2


def _solve_corrector(omega, fam, xi, T, tol, u0=None) -> CorrectorSet:
    grid = omega.grid
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    if xi.shape != (fam.m, fam.d):
        raise ValueError(f"slope must have shape ({fam.m}, {fam.d}), got {xi.shape}")
    kappa = 0.0 if np.isinf(T) else 1.0 / T
    if np.all(xi == 0.0):
        zeros = np.zeros(grid.shape + (fam.m,))
        q = fam.eval(omega.values, np.broadcast_to(xi, grid.shape + xi.shape).copy())
        res = SolveResult(zeros, 0.0, 0.0, 0, 0, True, [0.0])
        return CorrectorSet(grid, omega, fam, xi, T, DiscreteField(grid, zeros),
                            DiscreteField(grid, q), res)
    res = solve_monotone_system(grid, fam, omega.values, xi, kappa, tol=tol, u0=u0)
    phi = DiscreteField(grid, res.u)
    q = DiscreteField(grid, fam.eval(omega.values, xi + grad_forward(grid, res.u)))
    cs = CorrectorSet(grid, omega, fam, xi, T, phi, q, res)
    energy = cs.energy_density()
    bound = (fam.Lam / fam.lam) ** 2 * float(np.sum(xi**2))
    cs.diagnostics["energy_density"] = energy
    cs.diagnostics["energy_bound"] = bound
    if energy > bound * (1 + 1e-6):
        raise RuntimeError(
            f"corrector energy {energy:.6g} violates the a-priori bound {bound:.6g}"
        )
    return cs


def solve_periodic_corrector(
    omega: ParameterField, fam: OperatorFamily, xi, tol: float = 1e-9
) -> CorrectorSet:
    """Mean-free periodic corrector: ``-D-.A(omega, xi + D+ phi) = 0``."""
    return _solve_corrector(omega, fam, xi, np.inf, tol)


def solve_localized_corrector(
    omega: ParameterField, fam: OperatorFamily, xi, T: float, tol: float = 1e-9
) -> CorrectorSet:
    """Massive-term corrector at scale T: adds ``phi / T`` to the equation.

    Requires ``T >= 2 eps^2`` (the massive scale must dominate the correlation
    length) and warns when the torus is too small to emulate the whole space
    (``L < 8 sqrt(T)``).
    """
    if not T > 0 or np.isinf(T):
        raise ValueError(f"localization scale must be finite and positive, got {T}")
    if T < 2 * omega.epsilon**2:
        raise ValueError(
            f"localization scale T={T} below 2*eps^2={2 * omega.epsilon**2}"
        )
    if omega.grid.L < 8 * np.sqrt(T):
        warnings.warn(
            f"torus edge L={omega.grid.L} below 8*sqrt(T)={8 * np.sqrt(T):.4g}; "
            "periodization artifacts may be visible",
            stacklevel=2,
        )
    return _solve_corrector(omega, fam, xi, T, tol)


def _flux_corrector_from_q(grid: PeriodicGrid, q: np.ndarray, kappa: float) -> np.ndarray:
    """Solve the gauge problem for sigma given a flux q of shape (*shape, m, d).

    For each component pair (j, k): ``(-D-.D+ + kappa) sigma_jk = D0_j q_k - D0_k q_j``
    with centered differences D0; sigma is exactly skew by construction.
    """
    m, d = q.shape[grid.d :]
    sigma = np.zeros(grid.shape + (m, d, d))
    curl = grad_centered(grid, q)  # (..., m, d, d): last axis is the derivative
    for j in range(d):
        for k in range(j + 1, d):
            rhs = curl[..., :, k, j] - curl[..., :, j, k]  # D0_j q_k - D0_k q_j
            s = _solve_shifted_poisson_array(grid, rhs, kappa)
            sigma[..., j, k] = s
            sigma[..., k, j] = -s
    return sigma


def build_flux_corrector(cs: CorrectorSet) -> DiscreteField:
    """Attach the flux corrector sigma and its divergence-identity diagnostic.

    The identity ``D-.sigma = q - mean(q)`` holds at O(h) because the curl
    right-hand side is centered while the solve and divergence are in the
    compatible forward/backward pair.
    """
    grid = cs.grid
    sigma = _flux_corrector_from_q(grid, cs.q.values, cs.kappa)
    cs.sigma = DiscreteField(grid, sigma)
    div_sigma = np.stack(
        [div_backward(grid, sigma[..., j, :]) for j in range(grid.d)], axis=-1
    )
    qc = cs.q.values - cs.q.site_mean()
    num = np.sqrt(np.mean(np.sum((div_sigma - qc) ** 2, axis=(-2, -1))))
    den = max(np.sqrt(np.mean(np.sum(qc**2, axis=(-2, -1)))), 1e-300)
    cs.diagnostics["sigma_identity_relative"] = float(num / den)
    cs.diagnostics["sigma_skew_max"] = float(
        np.max(np.abs(sigma + np.swapaxes(sigma, -1, -2)))
    )
    return cs.sigma


def build_potential(cs: CorrectorSet) -> DiscreteField:
    """Attach the potential theta of phi: ``D-.D+ theta_i = D0_i (phi - mean phi)``.

    Then ``D-.theta`` recovers ``phi - mean(phi)`` up to O(h).
    """
    grid = cs.grid
    phi_c = cs.phi.values - cs.phi.site_mean()
    rhs = grad_centered(grid, phi_c)  # (..., m, d)
    theta = _solve_shifted_poisson_array(grid, -rhs, 0.0)
    cs.theta = DiscreteField(grid, theta)
    div_theta = div_backward(grid, theta)
    num = np.sqrt(np.mean(np.sum((div_theta - phi_c) ** 2, axis=-1)))
    den = max(np.sqrt(np.mean(np.sum(phi_c**2, axis=-1))), 1e-300)
    cs.diagnostics["theta_identity_relative"] = float(num / den)
    return cs.theta


@dataclass
class LinearizedCorrector:
    base: CorrectorSet
    Xi: np.ndarray
    adjoint: bool
    phi: DiscreteField
    result: SolveResult

    def gradient(self) -> np.ndarray:
        return grad_forward(self.base.grid, self.phi.values)


def linearized_coefficient(cs: CorrectorSet, adjoint: bool = False) -> np.ndarray:
    """Frozen coefficient a(x) = d_xi A(omega(x), xi + D+ phi(x)), optionally transposed."""
    a = cs.fam.d_xi(cs.omega.values, cs.xi + cs.gradient())
    if adjoint:
        a = np.einsum("...abcd->...cdab", a)
    return a


def solve_linearized_corrector(
    cs: CorrectorSet, Xi, adjoint: bool = False, tol: float = 1e-9
) -> LinearizedCorrector:
    """Corrector of the linearized equation at phi_xi in slope direction Xi.

    Solves ``-D-.(a (Xi + D+ psi)) + kappa psi = 0`` with
    ``a = d_xi A(omega, xi + D+ phi)`` (its pointwise transpose when
    ``adjoint``); this is the Frechet derivative of xi -> phi_xi^T applied to Xi.
    """
    Xi = np.atleast_2d(np.asarray(Xi, dtype=float))
    if Xi.shape != (cs.fam.m, cs.fam.d):
        raise ValueError(f"direction must have shape ({cs.fam.m}, {cs.fam.d}), got {Xi.shape}")
    a = linearized_coefficient(cs, adjoint)
    res = solve_linear_coefficient(
        cs.grid, a, Xi, cs.kappa, lam=cs.fam.lam, Lam=cs.fam.Lam, tol=tol
    )
    return LinearizedCorrector(cs, Xi, adjoint, DiscreteField(cs.grid, res.u), res)


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MinimalRadiusConfig:
    """Calibration of the minimal-radius scan.

    ``K_mass`` bounds ``|avg phi| / sqrt(T)`` relative to |xi|; the scan runs
    over dyadic radii eps * 2^j up to ``cap_factor * sqrt(T)``.
    """

    K_mass: float = 8.0
    cap_factor: float = 4.0


@dataclass
class MinimalRadiusResult:
    radius: float
    capped: bool
    radii: np.ndarray
    oscillation_ok: np.ndarray
    mass_ok: np.ndarray


def minimal_radius(
    cs: CorrectorSet, cfg: MinimalRadiusConfig = MinimalRadiusConfig(), x0=None
) -> MinimalRadiusResult:
    """Smallest dyadic radius above which phi behaves like a bounded oscillation.

    r_* is the least r = eps * 2^j such that for every scanned dyadic R >= r the
    ball-averaged oscillation satisfies ``R^{-2} avg_{B_R} |phi - avg phi|^2 <=
    |xi|^2`` and the mass condition ``|avg_{B_R} phi| / sqrt(T) <= K_mass |xi|``
    holds.  If no radius qualifies, the scan cap is returned with ``capped``.
    """
    grid = cs.grid
    eps = cs.omega.epsilon
    x0 = grid.center() if x0 is None else np.asarray(x0, dtype=float)
    dist = grid.wrap_distance(x0)
    xi2 = float(np.sum(cs.xi**2))
    if xi2 == 0.0:
        raise ValueError("minimal radius is undefined at zero slope")
    cap = cfg.cap_factor * np.sqrt(cs.T) if np.isfinite(cs.T) else grid.L / 2
    cap = min(cap, grid.L / 2)
    radii = []
    r = eps
    while r <= cap:
        radii.append(r)
        r *= 2.0
    if not radii:
        raise ValueError(f"scan cap {cap} below the correlation length {eps}")
    radii = np.array(radii)
    phi = cs.phi.values
    osc_ok = np.zeros(len(radii), dtype=bool)
    mass_ok = np.zeros(len(radii), dtype=bool)
    inv_sqrtT = 0.0 if np.isinf(cs.T) else 1.0 / np.sqrt(cs.T)
    for i, R in enumerate(radii):
        mask = dist <= R
        avg = phi[mask].mean(axis=0)
        osc = np.mean(np.sum((phi[mask] - avg) ** 2, axis=-1))
        osc_ok[i] = osc / R**2 <= xi2
        mass_ok[i] = inv_sqrtT * np.sqrt(np.sum(avg**2)) <= cfg.K_mass * np.sqrt(xi2)
    good = osc_ok & mass_ok
    # r_* = smallest radius from which the conditions hold for all larger scanned radii
    suffix_ok = np.flip(np.logical_and.accumulate(np.flip(good)))
    hits = np.flatnonzero(suffix_ok)
    if hits.size:
        return MinimalRadiusResult(float(radii[hits[0]]), False, radii, osc_ok, mass_ok)
    return MinimalRadiusResult(float(radii[-1]), True, radii, osc_ok, mass_ok)


@dataclass
class LocalizationGap:
    T: float
    gap: float
    grad_part: float
    mass_part: float
    radius: float


def localization_gap(
    omega: ParameterField, fam: OperatorFamily, xi, T: float, tol: float = 1e-9
) -> LocalizationGap:
    """Difference between the massive correctors at scales 2T and T, measured in
    the scaled H1 norm averaged over the centered ball of radius sqrt(T).
    """
    cs1 = solve_localized_corrector(omega, fam, xi, T, tol=tol)
    cs2 = solve_localized_corrector(omega, fam, xi, 2 * T, tol=tol)
    grid = omega.grid
    diff = cs2.phi.values - cs1.phi.values
    gdiff = cs2.gradient() - cs1.gradient()
    mask = grid.wrap_distance(grid.center()) <= np.sqrt(T)
    g2 = float(np.mean(np.sum(gdiff[mask] ** 2, axis=(-2, -1))))
    m2 = float(np.mean(np.sum(diff[mask] ** 2, axis=-1))) / T
    return LocalizationGap(T, float(np.sqrt(g2 + m2)), g2, m2, float(np.sqrt(T)))


@dataclass
class PerturbationResponse:
    distances: np.ndarray        # annulus centers
    response_rms: np.ndarray     # rms gradient response per annulus
    gamma_hat: float             # fitted decay rate, in units of 1/sqrt(T)
    r_squared: float
    origin_response: float
    far_response: float          # rms response at distance ~ far_factor * sqrt(T)
    far_factor: float


def perturbation_response(
    omega: ParameterField,
    fam: OperatorFamily,
    xi,
    T: float,
    tol: float = 1e-12,
    *,
    far_factor: float = 10.0,
    fit_range: tuple[float, float] = (1.0, 8.0),
) -> PerturbationResponse:
    """Response of the massive corrector to a local change of the medium.

    The field is flipped (omega -> -omega) inside the ball of radius eps at the
    torus center; the rms gradient response is binned into annuli of width
    sqrt(T)/2 and regressed as exp(-gamma_hat * dist / sqrt(T)) over
    ``fit_range`` (in units of sqrt(T)).  Exponential localization of the
    massive equation predicts gamma_hat > 0; the returned ``far_response`` is
    the rms response near ``far_factor * sqrt(T)``.
    """
    from scipy.stats import linregress

    grid = omega.grid
    sqrtT = np.sqrt(T)
    if grid.L < 2 * far_factor * sqrtT * 1.2:
        raise ValueError(
            f"torus edge L={grid.L} too small to observe distance {far_factor}*sqrt(T)"
        )
    center = grid.center()
    dist = grid.wrap_distance(center)
    flipped = np.where((dist <= omega.epsilon)[..., None], -omega.values, omega.values)
    omega_p = ParameterField(grid, flipped, omega.epsilon, omega.seed,
                             dict(omega.lineage, perturbed="center-ball-flip"))
    cs0 = solve_localized_corrector(omega, fam, xi, T, tol=tol)
    cs1 = solve_localized_corrector(omega_p, fam, xi, T, tol=tol)
    diff = np.sqrt(np.sum((cs1.gradient() - cs0.gradient()) ** 2, axis=(-2, -1)))

    width = sqrtT / 2
    n_bins = int(np.floor((far_factor * sqrtT * 1.05) / width))
    centers, rms = [], []
    for b in range(n_bins):
        mask = (dist >= b * width) & (dist < (b + 1) * width)
        if not np.any(mask):
            continue
        centers.append((b + 0.5) * width)
        rms.append(float(np.sqrt(np.mean(diff[mask] ** 2))))
    centers = np.array(centers)
    rms = np.array(rms)

    sel = (centers >= fit_range[0] * sqrtT) & (centers <= fit_range[1] * sqrtT) & (rms > 0)
    res = linregress(centers[sel] / sqrtT, np.log(rms[sel]))
    far_mask = (dist >= (far_factor - 0.25) * sqrtT) & (dist <= (far_factor + 0.25) * sqrtT)
    far = float(np.sqrt(np.mean(diff[far_mask] ** 2)))
    origin = float(np.sqrt(np.mean(diff[dist <= omega.epsilon] ** 2)))
    return PerturbationResponse(
        centers, rms, float(-res.slope), float(res.rvalue**2), origin, far, far_factor
    )


# ---------------------------------------------------------------------------
# snapshots
# ---------------------------------------------------------------------------


def save_corrector_set(directory, cs: CorrectorSet) -> None:
    """Binary snapshots for each attached field plus a JSON sidecar of metadata."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    fields = {"phi": cs.phi, "q": cs.q}
    if cs.sigma is not None:
        fields["sigma"] = cs.sigma
    if cs.theta is not None:
        fields["theta"] = cs.theta
    for name, f in fields.items():
        write_field(directory / f"{name}.hlf", f)
    write_field(directory / "omega.hlf", cs.omega.as_field())
    meta = {
        "xi": cs.xi.tolist(),
        "T": cs.T if np.isfinite(cs.T) else "inf",
        "L": cs.grid.L,
        "epsilon": cs.omega.epsilon,
        "seed": cs.omega.seed,
        "family": cs.fam.name,
        "residual_norm": cs.result.residual_norm,
        "fields": sorted(fields),
        "diagnostics": cs.diagnostics,
    }
    (directory / "meta.json").write_text(json.dumps(meta, indent=2))


def load_corrector_set(directory, fam: OperatorFamily) -> CorrectorSet:
    directory = Path(directory)
    meta = json.loads((directory / "meta.json").read_text())
    L = float(meta["L"])
    omega_f = read_field(directory / "omega.hlf", L=L)
    omega = ParameterField(omega_f.grid, omega_f.values, float(meta["epsilon"]), meta.get("seed"))
    phi = read_field(directory / "phi.hlf", L=L)
    q = read_field(directory / "q.hlf", L=L)
    T = np.inf if meta["T"] == "inf" else float(meta["T"])
    res = SolveResult(phi.values, float(meta["residual_norm"]), 0.0, 0, 0, True, [])
    cs = CorrectorSet(phi.grid, omega, fam, np.array(meta["xi"], dtype=float), T, phi, q, res)
    if "sigma" in meta["fields"]:
        cs.sigma = read_field(directory / "sigma.hlf", L=L)
    if "theta" in meta["fields"]:
        cs.theta = read_field(directory / "theta.hlf", L=L)
    cs.diagnostics = meta.get("diagnostics", {})
    return cs
