"""Periodic lattices, compatible finite differences, and FFT solves.

The discretization is the compatible forward/backward pair: gradients are forward
differences ``(D+ u)_j = (u(x + h e_j) - u(x)) / h``, divergences are backward
differences, and ``-div(grad(.))`` factors exactly into the standard (2d+1)-point
Laplacian.  Backward divergence is the negative adjoint of the forward gradient
under the lattice inner product, which is what makes the discrete energy
identities below exact rather than O(h).
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

SNAPSHOT_MAGIC = b"HLF1"
_HEADER_SIZE = 32

__all__ = [
    "PeriodicGrid",
    "DiscreteField",
    "grad_forward",
    "grad_backward",
    "grad_centered",
    "div_backward",
    "apply_gradient",
    "apply_divergence",
    "laplace_symbol",
    "solve_shifted_poisson",
    "write_field",
    "read_field",
    "export_field_csv",
]


@dataclass(frozen=True)
class PeriodicGrid:
    """Uniform lattice on the torus ``[0, L)^d`` with ``n`` sites per axis.

    Parameters
    ----------
    d : int
        Spatial dimension, 1 <= d <= 3.
    n : int
        Sites per axis; a power of two >= 4 so dyadic refinement and FFT
        solves stay exact and cheap.
    L : float
        Period length.
    """

    d: int
    n: int
    L: float = 1.0

    def __post_init__(self) -> None:
        if self.d not in (1, 2, 3):
            raise ValueError(f"spatial dimension must be 1, 2 or 3, got {self.d}")
        if self.n < 4 or (self.n & (self.n - 1)) != 0:
            raise ValueError(f"sites per axis must be a power of two >= 4, got {self.n}")
        if not self.L > 0:
            raise ValueError(f"period length must be positive, got {self.L}")

    @property
    def h(self) -> float:
        """Lattice spacing L / n."""
        return self.L / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def n_sites(self) -> int:
        return self.n**self.d

    def coordinates(self) -> np.ndarray:
        """Site coordinates, shape ``(*shape, d)``."""
        axes = np.meshgrid(*[np.arange(self.n) * self.h] * self.d, indexing="ij")
        return np.stack(axes, axis=-1)

    def wrap_distance(self, center: np.ndarray | tuple | float) -> np.ndarray:
        """Minimal-image distance from every site to ``center`` (physical coords)."""
        c = np.atleast_1d(np.asarray(center, dtype=float))
        if c.shape != (self.d,):
            raise ValueError(f"center must have {self.d} coordinates, got shape {c.shape}")
        x = self.coordinates()
        delta = np.mod(x - c + 0.5 * self.L, self.L) - 0.5 * self.L
        return np.sqrt(np.sum(delta**2, axis=-1))

    def center(self) -> np.ndarray:
        return np.full(self.d, 0.5 * self.L)


@dataclass
class DiscreteField:
    """Array-valued function on a periodic lattice.

    ``values`` has shape ``grid.shape + comp_shape`` where the trailing axes hold
    the pointwise tensor components (e.g. ``(m,)`` for an unknown, ``(m, d)`` for
    a gradient or flux, ``(m, d, d)`` for a flux corrector).
    """

    grid: PeriodicGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[: self.grid.d] != self.grid.shape:
            raise ValueError(
                f"values shape {self.values.shape} does not start with grid shape {self.grid.shape}"
            )

    @property
    def comp_shape(self) -> tuple[int, ...]:
        return self.values.shape[self.grid.d :]

    def site_mean(self) -> np.ndarray:
        """Average over lattice sites; returns an array of shape ``comp_shape``."""
        return self.values.mean(axis=tuple(range(self.grid.d)))

    def l2_norm(self) -> float:
        """Continuum-normalized L2 norm, ``sqrt(h^d * sum |v|^2)``."""
        return float(np.sqrt(self.grid.h**self.grid.d * np.sum(self.values**2)))

    def check_finite(self) -> None:
        if not np.all(np.isfinite(self.values)):
            raise FloatingPointError("field contains non-finite values")


# ---------------------------------------------------------------------------
# stencils (array-level; DiscreteField wrappers below)
# ---------------------------------------------------------------------------


def grad_forward(grid: PeriodicGrid, u: np.ndarray) -> np.ndarray:
    """Forward-difference gradient; appends an axis of length d."""
    h = grid.h
    return np.stack(
        [(np.roll(u, -1, axis=j) - u) / h for j in range(grid.d)], axis=-1
    )


def grad_backward(grid: PeriodicGrid, u: np.ndarray) -> np.ndarray:
    h = grid.h
    return np.stack(
        [(u - np.roll(u, 1, axis=j)) / h for j in range(grid.d)], axis=-1
    )


def grad_centered(grid: PeriodicGrid, u: np.ndarray) -> np.ndarray:
    """Centered-difference gradient, used for curl right-hand sides."""
    h = grid.h
    return np.stack(
        [(np.roll(u, -1, axis=j) - np.roll(u, 1, axis=j)) / (2 * h) for j in range(grid.d)],
        axis=-1,
    )


def div_backward(grid: PeriodicGrid, F: np.ndarray) -> np.ndarray:
    """Backward-difference divergence over the trailing axis of ``F``.

    This is the negative adjoint of :func:`grad_forward`: for all periodic u, F,
    ``<D+ u, F> = -<u, D- . F>`` exactly.
    """
    h = grid.h
    out = np.zeros(F.shape[:-1])
    for j in range(grid.d):
        Fj = F[..., j]
        out += (Fj - np.roll(Fj, 1, axis=j)) / h
    return out


def apply_gradient(field: DiscreteField) -> DiscreteField:
    return DiscreteField(field.grid, grad_forward(field.grid, field.values))


def apply_divergence(field: DiscreteField) -> DiscreteField:
    if field.comp_shape == () or field.comp_shape[-1] != field.grid.d:
        raise ValueError(
            f"divergence needs a trailing axis of length d={field.grid.d}, "
            f"got component shape {field.comp_shape}"
        )
    return DiscreteField(field.grid, div_backward(field.grid, field.values))


# ---------------------------------------------------------------------------
# spectral solves
# ---------------------------------------------------------------------------


@lru_cache(maxsize=32)
def laplace_symbol(grid: PeriodicGrid) -> np.ndarray:
    """Fourier symbol of ``-D-.D+``: ``(4/h^2) sum_j sin^2(pi k_j / n)``, shape grid.shape."""
    n, h = grid.n, grid.h
    k = np.arange(n)
    s1 = (2.0 / h * np.sin(np.pi * k / n)) ** 2
    sym = np.zeros(grid.shape)
    for j in range(grid.d):
        shape = [1] * grid.d
        shape[j] = n
        sym = sym + s1.reshape(shape)
    return sym


def _solve_shifted_poisson_array(
    grid: PeriodicGrid, rhs: np.ndarray, massive: float
) -> np.ndarray:
    """Solve ``(-D-.D+ + massive) u = rhs`` componentwise by FFT diagonalization.

    With ``massive == 0`` the operator has the constants in its kernel; the rhs
    must then be mean-free per component and the zero mode of the solution is
    pinned to zero.
    """
    if massive < 0:
        raise ValueError(f"massive coefficient must be >= 0, got {massive}")
    d = grid.d
    sp_axes = tuple(range(d))
    sym = laplace_symbol(grid).reshape(grid.shape + (1,) * (rhs.ndim - d))
    rhs_hat = np.fft.fftn(rhs, axes=sp_axes)
    if massive == 0.0:
        means = rhs.mean(axis=sp_axes)
        scale = np.max(np.abs(rhs)) if rhs.size else 0.0
        if scale > 0 and np.max(np.abs(means)) > 1e-10 * scale:
            raise ValueError(
                "zero-mean solve requested but rhs has component mean "
                f"{np.max(np.abs(means)):.3e} (> 1e-10 * max|rhs|)"
            )
        denom = sym + 0.0
        # pin the zero mode: constants are in the kernel
        denom_safe = np.where(denom == 0.0, 1.0, denom)
        u_hat = rhs_hat / denom_safe
        idx = (0,) * d + (Ellipsis,)
        u_hat[idx] = 0.0
    else:
        u_hat = rhs_hat / (sym + massive)
    return np.real(np.fft.ifftn(u_hat, axes=sp_axes))


def solve_shifted_poisson(rhs: DiscreteField, massive: float = 0.0) -> DiscreteField:
    """Solve the constant-coefficient problem ``(-D-.D+ + massive) u = rhs``.

    The solve is exact (spectral): the residual is machine-zero up to FFT
    round-off.  ``massive`` is the zero-order coefficient 1/T; pass 0 for the
    pure Poisson problem on mean-free data.
    """
    return DiscreteField(
        rhs.grid, _solve_shifted_poisson_array(rhs.grid, rhs.values, massive)
    )


# ---------------------------------------------------------------------------
# snapshot I/O
# ---------------------------------------------------------------------------


def write_field(path, field: DiscreteField) -> None:
    """Write a field snapshot: magic ``HLF1``, 32-byte header, float64 C-order payload.

    Header layout after the 4-byte magic: uint32 d, uint32 n, uint32 rank of the
    component shape, three uint32 component extents (zero-padded), 4 pad bytes.
    """
    comp = field.comp_shape
    if len(comp) > 3:
        raise ValueError(f"component rank {len(comp)} exceeds snapshot limit 3")
    dims = tuple(comp) + (0,) * (3 - len(comp))
    header = struct.pack(
        "<4sIIIIII4x", SNAPSHOT_MAGIC, field.grid.d, field.grid.n, len(comp), *dims
    )
    assert len(header) == _HEADER_SIZE
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())


def read_field(path, L: float = 1.0) -> DiscreteField:
    """Read a snapshot written by :func:`write_field`.

    The period length is not stored in the header and must be supplied.
    """
    with open(path, "rb") as fh:
        header = fh.read(_HEADER_SIZE)
        if len(header) < _HEADER_SIZE or header[:4] != SNAPSHOT_MAGIC:
            raise ValueError(f"{path}: not a field snapshot (bad magic)")
        _, d, n, rank, c0, c1, c2 = struct.unpack("<4sIIIIII4x", header)
        comp = (c0, c1, c2)[:rank]
        grid = PeriodicGrid(d=int(d), n=int(n), L=L)
        count = grid.n_sites * int(np.prod(comp, dtype=int)) if rank else grid.n_sites
        data = np.frombuffer(fh.read(count * 8), dtype="<f8", count=count)
    return DiscreteField(grid, data.reshape(grid.shape + tuple(int(c) for c in comp)).copy())


def export_field_csv(path, field: DiscreteField) -> None:
    """Flat CSV export: site multi-index, coordinates, then components in C order."""
    grid = field.grid
    comp = field.comp_shape
    ncomp = int(np.prod(comp, dtype=int)) if comp else 1
    coords = grid.coordinates().reshape(-1, grid.d)
    flat = field.values.reshape(-1, ncomp)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        idx_cols = [f"i{j}" for j in range(grid.d)]
        coord_cols = [f"x{j}" for j in range(grid.d)]
        comp_cols = [f"v{j}" for j in range(ncomp)]
        writer.writerow(idx_cols + coord_cols + comp_cols)
        for flat_idx in range(grid.n_sites):
            multi = np.unravel_index(flat_idx, grid.shape)
            writer.writerow(
                [*multi]
                + [f"{c:.17g}" for c in coords[flat_idx]]
                + [f"{v:.17g}" for v in flat[flat_idx]]
            )
