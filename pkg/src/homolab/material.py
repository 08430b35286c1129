"""Monotone operator families A(omega, xi) and their assumption audit.

A family maps a parameter vector omega in the closed unit ball of R^k and a
slope xi in R^{m x d} to a flux in R^{m x d}.  All implementations are
vectorized over leading lattice axes: ``eval(omega, xi)`` takes omega of shape
``(..., k)`` and xi of shape ``(..., m, d)`` (broadcastable) and returns
``(..., m, d)``; ``d_xi`` returns the Jacobian ``(..., m, d, m, d)``.

The quantitative assumptions are strong monotonicity with constant ``lam``
((A(w,x2) - A(w,x1)) : (x2 - x1) >= lam |x2 - x1|^2), Lipschitz continuity with
constant ``Lam`` together with A(w, 0) = 0, and bounded sensitivity in omega
(|d_omega A| <= Lam |xi|).  ``validate_assumptions`` probes all of them on
random samples.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "ConstantOperator",
    "OperatorFamily",
    "ValidationReport",
    "constant_linear",
    "make_linear",
    "scalar_linear_family",
    "make_convex_mixture",
    "make_rational_isotropic",
    "validate_assumptions",
    "family_from_config",
]


@dataclass(frozen=True)
class ConstantOperator:
    """Deterministic monotone operator xi -> A(xi) (no omega dependence)."""

    m: int
    d: int
    eval: Callable[[np.ndarray], np.ndarray]
    d_xi: Callable[[np.ndarray], np.ndarray]
    lam: float
    Lam: float
    name: str = "constant"


@dataclass(frozen=True)
class OperatorFamily:
    m: int
    d: int
    k: int
    eval: Callable[[np.ndarray, np.ndarray], np.ndarray]
    d_xi: Callable[[np.ndarray, np.ndarray], np.ndarray]
    lam: float
    Lam: float
    d_omega: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    smooth: bool = True          # has bounded second xi-derivative
    isotropic: bool = False      # radial in xi, so rotation-equivariant in law
    name: str = "family"


def _eye_jac(m: int, d: int) -> np.ndarray:
    """Identity on R^{m x d} as an (m, d, m, d) tensor."""
    return np.einsum("ab,cd->acbd", np.eye(m), np.eye(d))


def constant_linear(coef: float, m: int = 1, d: int = 1) -> ConstantOperator:
    """The operator xi -> coef * xi."""
    if coef <= 0:
        raise ValueError("coefficient must be positive")
    eye = _eye_jac(m, d)

    def ev(xi):
        return coef * xi

    def jac(xi):
        return np.broadcast_to(coef * eye, xi.shape + (m, d)).copy()

    return ConstantOperator(m, d, ev, jac, lam=coef, Lam=coef, name=f"linear({coef})")


def make_linear(
    a_fn: Callable[[np.ndarray], np.ndarray],
    lam: float,
    Lam: float,
    *,
    m: int = 1,
    d: int = 1,
    k: int = 1,
    da_fn: Callable[[np.ndarray], np.ndarray] | None = None,
    audit_samples: int = 64,
    audit_seed: int = 0,
    name: str = "linear",
) -> OperatorFamily:
    """Linear family A(omega, xi) = a(omega) xi with a d x d coefficient matrix.

    ``a_fn`` maps omega of shape (..., k) to matrices of shape (..., d, d)
    applied row-wise to xi.  Declared ellipticity bounds are audited on sampled
    omega: symmetric-part eigenvalues must land in [lam, Lam] (1e-9 slack).
    """
    rng = np.random.default_rng(audit_seed)
    probes = rng.normal(size=(audit_samples, k))
    probes /= np.maximum(1.0, np.sqrt(np.sum(probes**2, axis=-1, keepdims=True)))
    mats = np.asarray(a_fn(probes))
    sym = 0.5 * (mats + np.swapaxes(mats, -1, -2))
    eigs = np.linalg.eigvalsh(sym)
    if eigs.min() < lam * (1 - 1e-9) - 1e-12 or eigs.max() > Lam * (1 + 1e-9) + 1e-12:
        raise ValueError(
            f"declared ellipticity [{lam}, {Lam}] inconsistent with sampled "
            f"eigenvalue range [{eigs.min():.6g}, {eigs.max():.6g}]"
        )

    def ev(omega, xi):
        a = a_fn(omega)
        return np.einsum("...jk,...lk->...lj", a, xi)

    eye_m = np.eye(m)

    def jac(omega, xi):
        a = a_fn(omega)
        J = np.einsum("ab,...jk->...ajbk", eye_m, a)
        batch = np.broadcast_shapes(omega.shape[:-1], xi.shape[:-2])
        return np.broadcast_to(J, batch + (m, d, m, d)).copy()

    d_om = None
    if da_fn is not None:
        def d_om(omega, xi):
            da = da_fn(omega)  # (..., d, d, k)
            return np.einsum("...jkc,...lk->...ljc", da, xi)

    return OperatorFamily(m, d, k, ev, jac, lam=lam, Lam=Lam, d_omega=d_om, name=name)


def scalar_linear_family(base: float, spread: float, *, m: int = 1, d: int = 1) -> OperatorFamily:
    """A(omega, xi) = (base + spread * omega_0) xi; coefficient range [base-|spread|, base+|spread|]."""
    lam = base - abs(spread)
    Lam = base + abs(spread)
    if lam <= 0:
        raise ValueError(f"coefficient range [{lam}, {Lam}] must stay positive")
    eye = np.eye(d)

    def a_fn(omega):
        return (base + spread * omega[..., 0])[..., None, None] * eye

    def da_fn(omega):
        return np.broadcast_to(spread * eye[..., None], omega.shape[:-1] + (d, d, 1)).copy()

    return make_linear(a_fn, lam, Lam, m=m, d=d, k=1, da_fn=da_fn,
                       name=f"scalar-linear({base}±{abs(spread)})")


def make_convex_mixture(A1: ConstantOperator, A2: ConstantOperator) -> OperatorFamily:
    """A(omega, xi) = w A1(xi) + (1-w) A2(xi) with mixing weight w = (omega_0 + 1)/2."""
    if (A1.m, A1.d) != (A2.m, A2.d):
        raise ValueError("mixture endpoints must share (m, d)")
    m, d = A1.m, A1.d

    def ev(omega, xi):
        w = 0.5 * (omega[..., 0] + 1.0)
        return w[..., None, None] * A1.eval(xi) + (1.0 - w)[..., None, None] * A2.eval(xi)

    def jac(omega, xi):
        w = 0.5 * (omega[..., 0] + 1.0)
        return (
            w[..., None, None, None, None] * A1.d_xi(xi)
            + (1.0 - w)[..., None, None, None, None] * A2.d_xi(xi)
        )

    def d_om(omega, xi):
        return (0.5 * (A1.eval(xi) - A2.eval(xi)))[..., None]

    return OperatorFamily(
        m, d, 1, ev, jac,
        lam=min(A1.lam, A2.lam), Lam=max(A1.Lam, A2.Lam),
        d_omega=d_om, name=f"mixture[{A1.name},{A2.name}]",
    )


def make_rational_isotropic(m: int = 1, d: int = 1) -> OperatorFamily:
    """Radial family A(omega, xi) = (1 + |xi|^2) / (1 + (1 + w)|xi|^2) xi, w = (omega_0+1)/2.

    Gradient of a radial potential, hence symmetric Jacobian and
    frame-indifferent / isotropic in the strong sense.  The Jacobian eigenvalues
    are rho (tangential) and rho + 2 rho' |xi|^2 (radial); minimizing over
    |xi|^2 >= 0 and w in [0, 1] gives the exact constants lam = 7/16, Lam = 1.
    """

    def _rho(omega, s):
        c = 1.0 + 0.5 * (omega[..., 0] + 1.0)  # in [1, 2]
        return (1.0 + s) / (1.0 + c * s), c

    def ev(omega, xi):
        s = np.sum(xi**2, axis=(-2, -1))
        rho, _ = _rho(omega, s)
        return rho[..., None, None] * xi

    eye = _eye_jac(m, d)

    def jac(omega, xi):
        s = np.sum(xi**2, axis=(-2, -1))
        rho, c = _rho(omega, s)
        drho = (1.0 - c) / (1.0 + c * s) ** 2
        return (
            rho[..., None, None, None, None] * eye
            + 2.0 * drho[..., None, None, None, None] * np.einsum("...ab,...cd->...abcd", xi, xi)
        )

    def d_om(omega, xi):
        s = np.sum(xi**2, axis=(-2, -1))
        _, c = _rho(omega, s)
        drho_dc = -s * (1.0 + s) / (1.0 + c * s) ** 2
        return (0.5 * drho_dc)[..., None, None, None] * xi[..., None]

    return OperatorFamily(
        m, d, 1, ev, jac, lam=7.0 / 16.0, Lam=1.0, d_omega=d_om,
        isotropic=True, name="rational-isotropic",
    )


@dataclass
class ValidationReport:
    family: str
    n_probe: int
    monotonicity_min: float
    lipschitz_max: float
    zero_at_zero_max: float
    jacobian_fd_error: float
    omega_sensitivity_max: float | None
    passes: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.passes.values())


def validate_assumptions(
    fam: OperatorFamily, n_probe: int = 400, seed: int = 0, xi_scale: float = 10.0
) -> ValidationReport:
    """Probe monotonicity, Lipschitz continuity, A(.,0)=0, Jacobian consistency,
    and omega-sensitivity on random (omega, xi) samples; tolerance 1e-6 relative.
    """
    rng = np.random.default_rng(seed)
    m, d, k = fam.m, fam.d, fam.k
    omega = rng.normal(size=(n_probe, k))
    omega /= np.maximum(1.0, np.sqrt(np.sum(omega**2, axis=-1, keepdims=True)) + 1e-12)
    xi1 = rng.normal(size=(n_probe, m, d)) * rng.uniform(0, xi_scale, size=(n_probe, 1, 1))
    xi2 = rng.normal(size=(n_probe, m, d)) * rng.uniform(0, xi_scale, size=(n_probe, 1, 1))

    dA = fam.eval(omega, xi2) - fam.eval(omega, xi1)
    dxi = xi2 - xi1
    dist2 = np.sum(dxi**2, axis=(-2, -1))
    inner = np.sum(dA * dxi, axis=(-2, -1))
    mono = float(np.min(inner / dist2))
    lip = float(np.max(np.sqrt(np.sum(dA**2, axis=(-2, -1)) / dist2)))

    zero = float(np.max(np.abs(fam.eval(omega, np.zeros((n_probe, m, d))))))

    # central-difference check of d_xi along random directions
    dirs = rng.normal(size=(n_probe, m, d))
    dirs /= np.sqrt(np.sum(dirs**2, axis=(-2, -1), keepdims=True))
    step = 1e-5 * (1.0 + np.sqrt(np.sum(xi1**2, axis=(-2, -1), keepdims=True)))
    fd = (fam.eval(omega, xi1 + step * dirs) - fam.eval(omega, xi1 - step * dirs)) / (2 * step)
    Jdir = np.einsum("...abcd,...cd->...ab", fam.d_xi(omega, xi1), dirs)
    fd_err = float(np.max(np.abs(fd - Jdir)) / max(1.0, np.max(np.abs(Jdir))))

    om_max = None
    if fam.d_omega is not None:
        dom = fam.d_omega(omega, xi1)  # (..., m, d, k)
        mag = np.sqrt(np.sum(dom**2, axis=(-3, -2, -1)))
        xnorm = np.sqrt(np.sum(xi1**2, axis=(-2, -1)))
        om_max = float(np.max(mag / np.maximum(xnorm, 1e-12)))

    tol = 1e-6
    passes = {
        "monotonicity": mono >= fam.lam * (1 - tol),
        "lipschitz": lip <= fam.Lam * (1 + tol),
        "zero_at_zero": zero <= tol,
        "jacobian_fd": fd_err <= tol,
    }
    if om_max is not None:
        passes["omega_sensitivity"] = om_max <= fam.Lam * (1 + tol)
    return ValidationReport(fam.name, n_probe, mono, lip, zero, fd_err, om_max, passes)


def family_from_config(cfg: dict, d: int) -> OperatorFamily:
    """Build a family from a config mapping, e.g. ``{"name": "rational_isotropic"}``
    or ``{"name": "linear", "base": 1.5, "spread": 0.5}`` or
    ``{"name": "convex_mixture", "a1": 1.0, "a2": 2.0}``.
    """
    name = cfg.get("name")
    m = int(cfg.get("m", 1))
    if name in ("rational_isotropic", "rational"):
        return make_rational_isotropic(m=m, d=d)
    if name == "linear":
        return scalar_linear_family(float(cfg.get("base", 1.5)), float(cfg.get("spread", 0.5)), m=m, d=d)
    if name == "convex_mixture":
        return make_convex_mixture(
            constant_linear(float(cfg.get("a1", 1.0)), m=m, d=d),
            constant_linear(float(cfg.get("a2", 2.0)), m=m, d=d),
        )
    raise ValueError(
        f"unknown family {name!r}; expected rational_isotropic, linear, or convex_mixture"
    )
