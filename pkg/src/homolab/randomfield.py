"""Stationary coefficient fields on the periodic lattice.

The construction is white noise filtered through a short-range kernel and then
clamped into the admissible parameter ball: independent N(0, h^{-d}) site
variables per channel, circular convolution with a kernel beta supported in the
ball of radius eps and normalized so that ``h^d sum beta^2 = 1`` (unit pointwise
variance of the Gaussian stage), followed by a 1-Lipschitz clamp into the closed
unit ball.  Correlations vanish beyond distance 2*eps by construction, which is
the finite-range form of the spectral-gap assumption the estimators rely on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import DiscreteField, PeriodicGrid

__all__ = [
    "KernelSpec",
    "ParameterField",
    "SpectralGapDiagnostic",
    "kernel_values",
    "sample_white_noise",
    "circular_convolve",
    "gaussian_field",
    "clamp_to_ball",
    "sample_parameter_field",
    "restrict_to_core",
    "empirical_spectral_gap_ratio",
]

_KERNEL_SHAPES = ("gaussian-bump", "bump-compact")
_CLAMP_MAPS = ("tanh-radial", "affine-clip", "tanh-unit-interval")


@dataclass(frozen=True)
class KernelSpec:
    """Convolution kernel: shape name, correlation length, channel count."""

    epsilon: float
    shape: str = "gaussian-bump"
    k: int = 1

    def __post_init__(self) -> None:
        if self.shape not in _KERNEL_SHAPES:
            raise ValueError(f"unknown kernel shape {self.shape!r}; choose from {_KERNEL_SHAPES}")
        if not self.epsilon > 0:
            raise ValueError(f"correlation length must be positive, got {self.epsilon}")
        if self.k < 1:
            raise ValueError(f"channel count must be >= 1, got {self.k}")


@dataclass
class ParameterField:
    """Clamped coefficient field omega with its sampling lineage.

    ``values`` has shape ``grid.shape + (k,)`` and lies in the closed unit ball
    of R^k pointwise (strictly, |omega| <= 1 - 1e-9 so that operator families
    evaluated on it stay inside their admissible range).
    """

    grid: PeriodicGrid
    values: np.ndarray
    epsilon: float
    seed: int | None = None
    lineage: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == self.grid.d:
            self.values = self.values[..., None]
        if self.values.shape[: self.grid.d] != self.grid.shape:
            raise ValueError("values do not match grid shape")
        r = np.sqrt(np.sum(self.values**2, axis=-1))
        if np.max(r) > 1.0:
            raise ValueError(f"parameter field leaves the unit ball (max |omega| = {np.max(r):.6g})")

    @property
    def k(self) -> int:
        return self.values.shape[-1]

    def as_field(self) -> DiscreteField:
        return DiscreteField(self.grid, self.values)

    def translated(self, shift: tuple[int, ...]) -> "ParameterField":
        """Lattice translation (in sites); used for stationarity checks."""
        vals = np.roll(self.values, shift, axis=tuple(range(self.grid.d)))
        return ParameterField(self.grid, vals, self.epsilon, self.seed,
                              dict(self.lineage, translated=tuple(shift)))


def kernel_values(grid: PeriodicGrid, spec: KernelSpec) -> np.ndarray:
    """Kernel beta on the lattice, centered at the origin, with ``h^d sum beta^2 = 1``."""
    eps, h = spec.epsilon, grid.h
    if eps < 4 * h:
        raise ValueError(f"kernel under-resolved: epsilon={eps} < 4h={4 * h}")
    if eps > grid.L / 4:
        raise ValueError(f"kernel too wide for the torus: epsilon={eps} > L/4={grid.L / 4}")
    dist = grid.wrap_distance(np.zeros(grid.d))
    if spec.shape == "gaussian-bump":
        s = eps / 3.0
        beta = np.where(dist < eps, np.exp(-0.5 * (dist / s) ** 2), 0.0)
    else:  # bump-compact
        t = dist / eps
        with np.errstate(divide="ignore", over="ignore"):
            beta = np.where(t < 1.0, np.exp(-1.0 / np.maximum(1e-300, 1.0 - t**2)), 0.0)
    norm = np.sqrt(h**grid.d * np.sum(beta**2))
    return beta / norm


def sample_white_noise(grid: PeriodicGrid, k: int = 1, seed: int = 0) -> DiscreteField:
    """Discrete white noise: iid N(0, h^{-d}) per site and channel.

    The h^{-d} variance is the lattice stand-in for the delta correlation of
    continuum white noise, so kernel averages have h-independent statistics.
    """
    rng = np.random.default_rng(seed)
    sd = grid.h ** (-grid.d / 2.0)
    return DiscreteField(grid, rng.normal(0.0, sd, size=grid.shape + (k,)))


def circular_convolve(grid: PeriodicGrid, noise: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Periodic convolution ``h^d * (kernel * noise)`` per trailing channel."""
    sp_axes = tuple(range(grid.d))
    k_hat = np.fft.fftn(kernel, axes=sp_axes)
    w_hat = np.fft.fftn(noise, axes=sp_axes)
    out = np.fft.ifftn(k_hat[..., None] * w_hat, axes=sp_axes).real
    return out * grid.h**grid.d


def gaussian_field(noise: DiscreteField, spec: KernelSpec) -> DiscreteField:
    """Filter white noise through the kernel: Y = beta * W, unit pointwise variance."""
    if noise.comp_shape != (spec.k,):
        raise ValueError(
            f"noise has {noise.comp_shape} channels but kernel expects {spec.k}"
        )
    beta = kernel_values(noise.grid, spec)
    return DiscreteField(noise.grid, circular_convolve(noise.grid, noise.values, beta))


def clamp_to_ball(
    Y: DiscreteField,
    map_spec: str = "tanh-radial",
    lipschitz_bound: float = 1.0,
    *,
    epsilon: float,
    seed: int | None = None,
    lineage: dict | None = None,
) -> ParameterField:
    """Clamp a Gaussian stage into the closed unit ball of R^k.

    ``tanh-radial``: y -> tanh(c|y|) * y/|y| (odd, c-Lipschitz, range the open
    unit ball).  ``affine-clip``: y -> c*y radially clipped.  For k = 1 the map
    ``tanh-unit-interval`` sends y -> (1 + tanh(c*y))/2 with range (0, 1).
    The image is kept at radius <= 1 - 1e-9 so downstream coefficient laws
    evaluated on omega never sit exactly on the boundary of their range.
    """
    if map_spec not in _CLAMP_MAPS:
        raise ValueError(f"unknown clamp map {map_spec!r}; choose from {_CLAMP_MAPS}")
    if not 0 < lipschitz_bound <= 1.0:
        raise ValueError(f"lipschitz bound must lie in (0, 1], got {lipschitz_bound}")
    cap = 1.0 - 1e-9
    c = lipschitz_bound
    y = Y.values
    if map_spec == "tanh-unit-interval":
        if y.shape[-1] != 1:
            raise ValueError("tanh-unit-interval clamp is defined for k = 1 only")
        vals = 0.5 * (1.0 + np.tanh(c * y))
        # tanh saturates to +-1 in floats; keep the image strictly inside (0, 1)
        vals = np.clip(vals, 1.0 - cap, cap)
    else:
        r = np.sqrt(np.sum(y**2, axis=-1, keepdims=True))
        r_safe = np.where(r == 0.0, 1.0, r)
        if map_spec == "tanh-radial":
            factor = np.where(r == 0.0, c, np.tanh(c * r) / r_safe)
        else:  # affine-clip
            factor = np.full_like(r, c)
        out_r = factor * r
        # keep strictly inside the ball (tanh saturates to 1.0 in floats)
        factor = np.where(out_r > cap, factor * cap / np.where(out_r == 0, 1.0, out_r), factor)
        vals = factor * y
    lin = dict(lineage or {})
    lin.update(clamp=map_spec, lipschitz_bound=lipschitz_bound)
    return ParameterField(Y.grid, vals, epsilon=epsilon, seed=seed, lineage=lin)


def sample_parameter_field(
    grid: PeriodicGrid,
    epsilon: float,
    *,
    k: int = 1,
    kernel: str = "gaussian-bump",
    clamp: str = "tanh-radial",
    lipschitz_bound: float = 1.0,
    seed: int = 0,
) -> ParameterField:
    """Sample a coefficient field end to end: noise -> filter -> clamp."""
    spec = KernelSpec(epsilon=epsilon, shape=kernel, k=k)
    W = sample_white_noise(grid, k=k, seed=seed)
    Y = gaussian_field(W, spec)
    lineage = {"kernel": kernel, "epsilon": epsilon, "k": k, "seed": seed}
    return clamp_to_ball(Y, clamp, lipschitz_bound, epsilon=epsilon, seed=seed, lineage=lineage)


def restrict_to_core(omega: ParameterField, L_box: float) -> ParameterField:
    """Zero the field outside the centered ball of radius ``L_box / 4``.

    Restriction commutes with this construction in law on the core, which is
    what lets torus samples stand in for whole-space ones.
    """
    if not 0 < L_box <= omega.grid.L:
        raise ValueError(f"box size must lie in (0, L], got {L_box}")
    dist = omega.grid.wrap_distance(omega.grid.center())
    mask = (dist <= L_box / 4.0).astype(float)[..., None]
    return ParameterField(
        omega.grid,
        omega.values * mask,
        omega.epsilon,
        omega.seed,
        dict(omega.lineage, restricted_to=L_box / 4.0),
    )


@dataclass(frozen=True)
class SpectralGapDiagnostic:
    ratio: float
    stderr: float
    n_samples: int
    radius: float
    epsilon: float


def empirical_spectral_gap_ratio(
    sampler, radius: float, n_samples: int
) -> SpectralGapDiagnostic:
    """Variance of the centered ball-average of channel 0, normalized by the
    finite-range prediction ``(eps/r)^d * Var[omega(x)]``.

    ``sampler`` maps an integer seed to a :class:`ParameterField`.  An O(1)
    ratio (with stderr) is the empirical spectral-gap / ergodicity check; for a
    deterministic field the ratio degenerates to zero.
    """
    if n_samples < 2:
        raise ValueError("need at least 2 samples")
    first = sampler(0)
    grid, eps = first.grid, first.epsilon
    if radius <= eps:
        raise ValueError(f"averaging radius {radius} must exceed the correlation length {eps}")
    mask = grid.wrap_distance(grid.center()) <= radius
    center_idx = tuple(int(c) for c in np.array(grid.shape) // 2)
    avgs = np.empty(n_samples)
    pts = np.empty(n_samples)
    for s in range(n_samples):
        om = first if s == 0 else sampler(s)
        avgs[s] = om.values[..., 0][mask].mean()
        pts[s] = om.values[center_idx + (0,)]
    var_avg = float(np.var(avgs, ddof=1))
    var_pt = float(np.var(pts, ddof=1))
    norm = (eps / radius) ** grid.d * var_pt
    if norm == 0.0:
        return SpectralGapDiagnostic(0.0, 0.0, n_samples, radius, eps)
    ratio = var_avg / norm
    # Gaussian-ish variance-of-variance approximation for the error bar
    stderr = ratio * np.sqrt(2.0 / (n_samples - 1))
    return SpectralGapDiagnostic(ratio, float(stderr), n_samples, radius, eps)
