"""Pointwise coupling machinery: small SVDs, dual-ball projections,
the orthonormal Haar transform, and the group-l2 ball projection.

The dual prox of the coupled l1 terms is a pointwise projection onto the
dual-norm ball: plain rescaling for Frobenius coupling, a singular-value
clip (spectral-ball projection) for nuclear coupling.
"""

from __future__ import annotations

import numpy as np

from .grids import (
    MultiImage,
    SymTensorField,
    VectorField,
    sym_weights,
)


def svd_small(m: np.ndarray):
    """SVD of a single d x N block (d <= 3): returns (s, u, vt).

    Computed via the d x d Gram matrix so the factor sizes stay tiny for
    wide blocks; `m = u @ diag(s) @ vt` up to roundoff.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] > 3:
        raise ValueError("expected a d x N matrix with d <= 3")
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    return s, u, vt


def _clip_singular_values(blocks: np.ndarray, alpha: float) -> np.ndarray:
    """Batched spectral-ball projection of (..., d, N) blocks."""
    u, s, vt = np.linalg.svd(blocks, full_matrices=False)
    np.minimum(s, alpha, out=s)
    return np.einsum("...ik,...k,...kn->...in", u, s, vt)


def project_dual_ball(z, alpha: float, coupling: str = "frobenius"):
    """Pointwise projection onto the coupling dual ball of radius alpha.

    Frobenius coupling: scale each site block to pointwise norm <= alpha.
    Nuclear coupling (vector fields only): clip singular values at alpha.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if isinstance(z, SymTensorField):
        if coupling != "frobenius":
            raise ValueError("symmetric tensor fields only support Frobenius coupling")
        w = sym_weights(z.grid.ndim)
        norms = np.sqrt(np.sum(z.values**2 * w, axis=(-2, -1), keepdims=True))
        return z.with_values(z.values / np.maximum(1.0, norms / alpha))
    if not isinstance(z, VectorField):
        raise ValueError("expected a VectorField or SymTensorField")
    if coupling == "frobenius":
        norms = np.sqrt(np.sum(z.values**2, axis=(-2, -1), keepdims=True))
        return z.with_values(z.values / np.maximum(1.0, norms / alpha))
    if coupling == "nuclear":
        n, d = z.channels, z.grid.ndim
        blocks = z.values.reshape(-1, n, d).transpose(0, 2, 1)
        clipped = _clip_singular_values(blocks, alpha)
        return z.with_values(
            clipped.transpose(0, 2, 1).reshape(z.values.shape)
        )
    raise ValueError(f"unknown coupling {coupling!r}")


def _check_levels(dims, levels: int) -> None:
    if levels < 1:
        raise ValueError("levels must be >= 1")
    for n in dims:
        if n % (1 << levels):
            raise ValueError(f"dims {dims} not divisible by 2^{levels}")


def _haar1d_fwd(a: np.ndarray, axis: int) -> np.ndarray:
    a = np.moveaxis(a, axis, 0)
    lo = (a[0::2] + a[1::2]) / np.sqrt(2.0)
    hi = (a[0::2] - a[1::2]) / np.sqrt(2.0)
    return np.moveaxis(np.concatenate([lo, hi], axis=0), 0, axis)


def _haar1d_inv(a: np.ndarray, axis: int) -> np.ndarray:
    a = np.moveaxis(a, axis, 0)
    n = a.shape[0] // 2
    lo, hi = a[:n], a[n:]
    out = np.empty_like(a)
    out[0::2] = (lo + hi) / np.sqrt(2.0)
    out[1::2] = (lo - hi) / np.sqrt(2.0)
    return np.moveaxis(out, 0, axis)


def haar_forward(u: MultiImage, levels: int) -> MultiImage:
    """Orthonormal multi-level Haar transform, channel-wise, Mallat layout."""
    _check_levels(u.grid.dims, levels)
    nd = u.grid.ndim
    vals = u.values.copy()
    sizes = list(u.grid.dims)
    for _ in range(levels):
        region = tuple(slice(0, s) for s in sizes)
        block = vals[region]
        for ax in range(nd):
            block = _haar1d_fwd(block, ax)
        vals[region] = block
        sizes = [s // 2 for s in sizes]
    return u.with_values(vals)


def haar_inverse(coeffs: MultiImage, levels: int) -> MultiImage:
    """Inverse (= adjoint) of :func:`haar_forward`."""
    _check_levels(coeffs.grid.dims, levels)
    nd = coeffs.grid.ndim
    vals = coeffs.values.copy()
    sizes = [n >> levels for n in coeffs.grid.dims]
    for _ in range(levels):
        sizes = [2 * s for s in sizes]
        region = tuple(slice(0, s) for s in sizes)
        block = vals[region]
        for ax in range(nd):
            block = _haar1d_inv(block, ax)
        vals[region] = block
    return coeffs.with_values(vals)


def project_group_l2ball(shat: MultiImage, alpha: float) -> MultiImage:
    """Per coefficient index, scale the cross-channel vector to norm <= alpha."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    norms = np.sqrt(np.sum(shat.values**2, axis=-1, keepdims=True))
    return shat.with_values(shat.values / np.maximum(1.0, norms / alpha))


def group_l21_norm(coeffs: MultiImage) -> float:
    """Sum over coefficient indices of the cross-channel 2-norm."""
    return float(np.sum(np.sqrt(np.sum(coeffs.values**2, axis=-1))))
