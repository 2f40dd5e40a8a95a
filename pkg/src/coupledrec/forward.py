"""Per-channel forward operators and their exact adjoints.

Four kinds: identity, zero-padded convolution, masked unitary Fourier
sampling (MR-style k-space model, real-paired codomain), and a pixel-driven
discrete Radon transform (PET-style line sums).  The Radon matrix is built
once as a sparse matrix of nonnegative interpolation weights; its adjoint
is the exact transpose, so the dot-product test passes to roundoff.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.ndimage as ndi
import scipy.sparse as sp

from .diffops import LinearOp
from .grids import Grid

KINDS = ("identity", "convolution", "masked_fourier", "radon")


@dataclass
class ForwardOp:
    """One channel's forward model T_i, mapping a grid image to a flat data vector."""

    kind: str
    grid: Grid
    codomain_dim: int
    _apply: Callable[[np.ndarray], np.ndarray]
    _adjoint: Callable[[np.ndarray], np.ndarray]
    meta: dict = field(default_factory=dict)

    def apply(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        if u.shape != self.grid.dims:
            raise ValueError(f"{self.kind}: image shape {u.shape} != grid {self.grid.dims}")
        return self._apply(u)

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if y.size != self.codomain_dim:
            raise ValueError(f"{self.kind}: data length {y.size} != {self.codomain_dim}")
        return self._adjoint(y)

    def as_linear_op(self) -> LinearOp:
        return LinearOp(
            apply=lambda x: self._apply(x.reshape(self.grid.dims)),
            adjoint=lambda y: self._adjoint(y).reshape(-1),
            domain_dim=self.grid.sites,
            codomain_dim=self.codomain_dim,
        )


def identity_op(grid: Grid) -> ForwardOp:
    return ForwardOp(
        kind="identity",
        grid=grid,
        codomain_dim=grid.sites,
        _apply=lambda u: u.reshape(-1).copy(),
        _adjoint=lambda y: y.reshape(grid.dims).copy(),
    )


def convolution_op(grid: Grid, kernel: np.ndarray) -> ForwardOp:
    """Same-size correlation with zero padding; adjoint flips the kernel.

    Kernel sizes must be odd along every axis so the centered origin is
    self-consistent between the pair.
    """
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != grid.ndim:
        raise ValueError("kernel dimensionality must match the grid")
    if not np.all(np.isfinite(kernel)):
        raise ValueError("kernel must be finite")
    if any(s % 2 == 0 for s in kernel.shape):
        raise ValueError("kernel sizes must be odd")
    flipped = kernel[tuple(slice(None, None, -1) for _ in range(kernel.ndim))].copy()
    return ForwardOp(
        kind="convolution",
        grid=grid,
        codomain_dim=grid.sites,
        _apply=lambda u: ndi.correlate(u, kernel, mode="constant", cval=0.0).reshape(-1),
        _adjoint=lambda y: ndi.correlate(
            y.reshape(grid.dims), flipped, mode="constant", cval=0.0
        ),
        meta={"kernel": kernel},
    )


def masked_fourier_op(grid: Grid, mask: np.ndarray) -> ForwardOp:
    """Unitary DFT, keeping masked frequencies as interleaved (re, im) pairs."""
    mask = np.asarray(mask).astype(bool)
    if mask.shape != grid.dims:
        raise ValueError(f"mask shape {mask.shape} != grid {grid.dims}")
    m = int(mask.sum())
    if m == 0:
        raise ValueError("mask keeps no frequencies")

    def apply(u):
        freq = np.fft.fftn(u, norm="ortho")[mask]
        out = np.empty(2 * m)
        out[0::2] = freq.real
        out[1::2] = freq.imag
        return out

    def adjoint(y):
        freq = np.zeros(grid.dims, dtype=np.complex128)
        freq[mask] = y[0::2] + 1j * y[1::2]
        return np.fft.ifftn(freq, norm="ortho").real

    return ForwardOp(
        kind="masked_fourier",
        grid=grid,
        codomain_dim=2 * m,
        _apply=apply,
        _adjoint=adjoint,
        meta={"mask": mask},
    )


def _radon_matrix(grid: Grid, angles: np.ndarray, n_bins: int) -> sp.csr_matrix:
    ny, nx = grid.dims
    cy, cx = (ny - 1) / 2.0, (nx - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(ny) - cy, np.arange(nx) - cx, indexing="ij")
    rows_all, cols_all, vals_all = [], [], []
    pix = np.arange(grid.sites)
    for k, theta in enumerate(angles):
        # signed distance of each pixel center from the central ray
        t = xx * np.cos(theta) + yy * np.sin(theta)
        pos = t.reshape(-1) + (n_bins - 1) / 2.0
        i0 = np.floor(pos).astype(np.int64)
        w1 = pos - i0
        for off, w in ((0, 1.0 - w1), (1, w1)):
            b = i0 + off
            ok = (b >= 0) & (b < n_bins) & (w > 0)
            rows_all.append(k * n_bins + b[ok])
            cols_all.append(pix[ok])
            vals_all.append(w[ok])
    rows = np.concatenate(rows_all)
    cols = np.concatenate(cols_all)
    vals = np.concatenate(vals_all)
    shape = (len(angles) * n_bins, grid.sites)
    return sp.csr_matrix((vals, (rows, cols)), shape=shape)


def radon_op(grid: Grid, angles, n_bins: int) -> ForwardOp:
    """Parallel-beam Radon transform on a 2D grid.

    Pixel-driven with linear splatting onto detector bins (spacing one
    pixel): every pixel distributes its value between the two nearest bins,
    so line sums conserve mass per angle and nonnegative images map to
    nonnegative sinograms.
    """
    if grid.ndim != 2:
        raise ValueError("radon_op requires a 2D grid")
    angles = np.asarray(angles, dtype=np.float64).reshape(-1)
    if angles.size == 0:
        raise ValueError("need at least one angle")
    if np.any((angles < 0) | (angles >= np.pi)):
        raise ValueError("angles must lie in [0, pi)")
    if n_bins < 1:
        raise ValueError("n_bins must be positive")
    mat = _radon_matrix(grid, angles, n_bins)
    mat_t = mat.T.tocsr()
    return ForwardOp(
        kind="radon",
        grid=grid,
        codomain_dim=mat.shape[0],
        _apply=lambda u: mat @ u.reshape(-1),
        _adjoint=lambda y: (mat_t @ y).reshape(grid.dims),
        meta={"angles": angles, "n_bins": n_bins},
    )


def default_n_bins(grid: Grid) -> int:
    """Detector length covering the grid diagonal."""
    return int(np.ceil(np.hypot(*grid.dims))) | 1
