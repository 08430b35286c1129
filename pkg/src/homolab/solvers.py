"""Newton-Krylov solver for discrete monotone systems.

Solves, on the periodic lattice,

    -D- . A(omega, xi + D+ u) + kappa * u = rhs,

with A a monotone operator family, kappa >= 0 the massive coefficient (1/T for
localized correctors, 1 for the massive homogenized equation, 0 for the
mean-free periodic problem).  The outer loop is an exact-Jacobian Newton
iteration with Armijo backtracking; inner linear systems go to GMRES
preconditioned by the FFT inverse of the constant-coefficient operator
``c0 (-D-.D+) + kappa`` with c0 = (lam + Lam)/2.  Convergence is measured in
the preconditioner dual norm sqrt(<F, P^{-1} F>), which is mesh-consistent, and
termination requires it to fall below ``tol * scale * n^{d/2}``.

If a Newton step stalls, the loop falls back to damped Richardson relaxation
``u <- u - s P^{-1} F(u)``, which for monotone Lipschitz problems contracts for
s = lam * c0 / Lam^2.
"""

from __future__ import annotations

import inspect
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .grid import PeriodicGrid, div_backward, grad_forward, laplace_symbol

__all__ = ["SolveResult", "SolverError", "solve_monotone_system", "solve_linear_coefficient"]

_GMRES_TOL_KW = "rtol" if "rtol" in inspect.signature(gmres).parameters else "tol"


class SolverError(RuntimeError):
    def __init__(self, message: str, history: list[float]):
        super().__init__(message + f" (residual history: {['%.3e' % r for r in history]})")
        self.history = history


@dataclass
class SolveResult:
    u: np.ndarray                    # (*grid.shape, m)
    residual_norm: float             # final preconditioned dual norm
    threshold: float
    newton_iterations: int
    krylov_iterations: int
    converged: bool
    history: list[float] = field(default_factory=list)


class _LinearAdapter:
    """Wrap a frozen coefficient tensor a(x) as a linear operator family."""

    def __init__(self, a: np.ndarray):
        self._a = a

    def eval(self, omega, g):
        return np.einsum("...abcd,...cd->...ab", self._a, g)

    def d_xi(self, omega, g):
        return self._a


def _gmres(op, b, M, rtol, restart=60, maxiter=25):
    counter = {"n": 0}

    def cb(_):
        counter["n"] += 1

    kwargs = {_GMRES_TOL_KW: rtol, "atol": 0.0, "restart": restart, "maxiter": maxiter,
              "callback": cb, "callback_type": "pr_norm"}
    x, _ = gmres(op, b, M=M, **kwargs)
    return x, counter["n"]


def solve_monotone_system(
    grid: PeriodicGrid,
    fam,
    omega_values: np.ndarray | None,
    xi: np.ndarray | None,
    kappa: float,
    *,
    rhs: np.ndarray | None = None,
    tol: float = 1e-9,
    scale: float | None = None,
    u0: np.ndarray | None = None,
    m: int = 1,
    max_newton: int = 60,
    dirichlet_mask: np.ndarray | None = None,
    dirichlet_values: np.ndarray | None = None,
) -> SolveResult:
    """Solve ``-D-.A(omega, xi + D+ u) + kappa u = rhs`` for u of shape (*shape, m).

    ``xi`` is a constant slope offset of shape (m, d) (or None for zero).  When
    ``kappa == 0`` the problem is solved on mean-free functions: the rhs must be
    mean-free and the solution is returned with zero component means.  With
    ``dirichlet_mask`` set, masked sites are constrained to ``dirichlet_values``
    (identity residual rows) instead — the bounded-domain variant.
    """
    d = grid.d
    sp_axes = tuple(range(d))
    lam, Lam = fam.lam, fam.Lam
    c0 = 0.5 * (lam + Lam)
    if xi is None:
        xi = np.zeros((m, d))
    xi = np.asarray(xi, dtype=float)
    m = xi.shape[0]
    masked = dirichlet_mask is not None
    if masked and dirichlet_values is None:
        dirichlet_values = np.zeros(grid.shape + (m,))
    mean_free = (kappa == 0.0) and not masked

    if scale is None:
        scale = float(np.sqrt(np.sum(xi**2)))
        if rhs is not None:
            scale = max(scale, float(np.max(np.abs(rhs))) * grid.L**2)
        if scale == 0.0:
            scale = 1.0
    threshold = tol * scale * np.sqrt(grid.n_sites)

    sym = laplace_symbol(grid)[..., None]  # broadcast over components
    # With identity rows (Dirichlet mask) the operator is invertible even at
    # kappa = 0, and the dual norm must not have a kernel: use a positive
    # surrogate mass instead of pinning the zero mode.
    precond_kappa = kappa
    if kappa == 0.0 and masked:
        precond_kappa = c0 / grid.L**2

    def precond(v):
        v_hat = np.fft.fftn(v, axes=sp_axes)
        denom = c0 * sym + precond_kappa
        if precond_kappa == 0.0:
            denom = np.where(denom == 0.0, 1.0, denom)
            out_hat = v_hat / denom
            out_hat[(0,) * d + (Ellipsis,)] = 0.0
        else:
            out_hat = v_hat / denom
        return np.real(np.fft.ifftn(out_hat, axes=sp_axes))

    def dual_norm(F):
        return float(np.sqrt(max(0.0, np.sum(F * precond(F)))))

    def residual(u):
        g = xi + grad_forward(grid, u)
        F = -div_backward(grid, fam.eval(omega_values, g)) + kappa * u
        if rhs is not None:
            F = F - rhs
        if masked:
            F = np.where(dirichlet_mask[..., None], u - dirichlet_values, F)
        elif mean_free:
            F = F - F.mean(axis=sp_axes)
        return F

    if mean_free and rhs is not None:
        rmean = np.abs(np.asarray(rhs).mean(axis=sp_axes)).max()
        if rmean > 1e-10 * max(1.0, np.max(np.abs(rhs))):
            raise ValueError(f"mean-free solve needs mean-free rhs (component mean {rmean:.3e})")

    u = np.zeros(grid.shape + (m,)) if u0 is None else np.array(u0, dtype=float)
    if mean_free:
        u -= u.mean(axis=sp_axes)

    shape = u.shape
    nflat = u.size

    def make_ops(a):
        def jv_arr(v):
            Jv = -div_backward(grid, np.einsum("...abcd,...cd->...ab", a, grad_forward(grid, v))) + kappa * v
            if masked:
                Jv = np.where(dirichlet_mask[..., None], v, Jv)
            elif mean_free:
                Jv = Jv - Jv.mean(axis=sp_axes)
            return Jv

        J = LinearOperator((nflat, nflat), matvec=lambda v: jv_arr(v.reshape(shape)).ravel())
        M = LinearOperator((nflat, nflat), matvec=lambda v: precond(v.reshape(shape)).ravel())
        return J, M

    history: list[float] = []
    krylov_total = 0
    tau = lam * c0 / Lam**2

    F = residual(u)
    nrm = dual_norm(F)
    for it in range(max_newton):
        history.append(nrm)
        if not np.isfinite(nrm):
            raise SolverError("residual norm diverged", history)
        if nrm <= threshold:
            if mean_free:
                u -= u.mean(axis=sp_axes)
            return SolveResult(u, nrm, threshold, it, krylov_total, True, history)

        g = xi + grad_forward(grid, u)
        a = fam.d_xi(omega_values, g)
        J, M = make_ops(a)
        inner_rtol = max(1e-13, min(1e-3, 0.1 * threshold / nrm))
        delta, kit = _gmres(J, (-F).ravel(), M, inner_rtol)
        krylov_total += kit
        delta = delta.reshape(shape)

        accepted = False
        t = 1.0
        for _ in range(10):
            u_try = u + t * delta
            F_try = residual(u_try)
            nrm_try = dual_norm(F_try)
            if nrm_try <= (1.0 - 1e-4 * t) * nrm:
                u, F, nrm = u_try, F_try, nrm_try
                accepted = True
                break
            t *= 0.5
        if not accepted:
            # monotone fallback: damped preconditioned Richardson
            for _ in range(40):
                u_try = u - tau * precond(F)
                F_try = residual(u_try)
                nrm_try = dual_norm(F_try)
                if not nrm_try < nrm:
                    break
                u, F, nrm = u_try, F_try, nrm_try
                if nrm <= threshold:
                    break
            if not nrm < history[-1]:
                raise SolverError("Newton and relaxation both stalled", history)

    history.append(nrm)
    if nrm <= threshold:
        if mean_free:
            u -= u.mean(axis=sp_axes)
        return SolveResult(u, nrm, threshold, max_newton, krylov_total, True, history)
    raise SolverError(f"no convergence in {max_newton} Newton iterations", history)


def solve_linear_coefficient(
    grid: PeriodicGrid,
    a: np.ndarray,
    Xi: np.ndarray | None,
    kappa: float,
    *,
    lam: float,
    Lam: float,
    rhs: np.ndarray | None = None,
    tol: float = 1e-9,
    scale: float | None = None,
    m: int | None = None,
) -> SolveResult:
    """Solve ``-D-.(a(x) : (Xi + D+ u)) + kappa u = rhs`` for a frozen coefficient
    tensor ``a`` of shape (*shape, m, d, m, d); used for linearized correctors.
    """
    adapter = _LinearAdapter(a)
    adapter.lam, adapter.Lam = lam, Lam
    if Xi is None and m is None:
        m = a.shape[grid.d]
    return solve_monotone_system(
        grid, adapter, None, Xi, kappa, rhs=rhs, tol=tol, scale=scale,
        m=m if m is not None else (Xi.shape[0] if Xi is not None else 1),
    )
