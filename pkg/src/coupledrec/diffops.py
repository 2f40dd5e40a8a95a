"""Discrete gradient / symmetrized gradient with exact negative adjoints.

The gradient uses forward differences with a zero difference at the last
index of each axis (Neumann); the symmetrized gradient uses backward
differences on the staggered convention customary for second-order TGV.
The divergences are derived as exact transposes, so the adjoint identities
hold to roundoff, not discretization order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .grids import (
    MultiImage,
    SymTensorField,
    VectorField,
    sym_index_pairs,
    sym_size,
)


def _sl(ndim: int, axis: int, s: slice) -> tuple:
    out = [slice(None)] * ndim
    out[axis] = s
    return tuple(out)


def _forward_diff(arr: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Forward difference, zero at the last index of `axis`."""
    out = np.zeros_like(arr)
    nd = arr.ndim
    out[_sl(nd, axis, slice(None, -1))] = np.diff(arr, axis=axis) / h
    return out


def _forward_diff_negadj(arr: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Negative adjoint of :func:`_forward_diff` (a backward difference)."""
    out = np.empty_like(arr)
    nd = arr.ndim
    n = arr.shape[axis]
    out[_sl(nd, axis, slice(0, 1))] = arr[_sl(nd, axis, slice(0, 1))]
    if n > 1:
        out[_sl(nd, axis, slice(1, -1))] = np.diff(
            arr[_sl(nd, axis, slice(None, -1))], axis=axis
        )
        out[_sl(nd, axis, slice(-1, None))] = -arr[_sl(nd, axis, slice(-2, -1))]
    return out / h


def _backward_diff(arr: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Backward difference on interior rows; zero at the first and last index.

    Dropping both boundary rows is what puts gradients of affine images in
    the kernel of the symmetrized gradient: the forward-difference gradient
    of an affine image is constant except for its padded zero at the last
    index, and this stencil never compares against that padded entry.
    """
    out = np.zeros_like(arr)
    nd = arr.ndim
    if arr.shape[axis] > 2:
        out[_sl(nd, axis, slice(1, -1))] = np.diff(
            arr[_sl(nd, axis, slice(None, -1))], axis=axis
        )
    return out / h


def _backward_diff_adj(arr: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Exact transpose of :func:`_backward_diff`."""
    nd = arr.ndim
    a = arr.copy()
    a[_sl(nd, axis, slice(0, 1))] = 0.0
    a[_sl(nd, axis, slice(-1, None))] = 0.0
    out = a.copy()
    out[_sl(nd, axis, slice(None, -1))] -= a[_sl(nd, axis, slice(1, None))]
    return out / h


def grad(u: MultiImage) -> VectorField:
    """Channel-wise forward-difference gradient."""
    d = u.grid.ndim
    out = np.empty(u.values.shape + (d,))
    for a in range(d):
        out[..., a] = _forward_diff(u.values, axis=a, h=u.grid.spacing[a])
    return VectorField(u.grid, out)


def div(p: VectorField) -> MultiImage:
    """Negative adjoint of :func:`grad`: ``<grad u, p> = <u, -div p>``."""
    d = p.grid.ndim
    out = np.zeros(p.values.shape[:-1])
    for a in range(d):
        out -= _forward_diff_negadj(p.values[..., a], axis=a, h=p.grid.spacing[a])
    # out currently holds +adjoint; div is its negation
    return MultiImage(p.grid, -out)


def sym_grad(v: VectorField) -> SymTensorField:
    """Symmetrized backward-difference Jacobian, upper-triangle storage."""
    d = v.grid.ndim
    h = v.grid.spacing
    pairs = sym_index_pairs(d)
    out = np.empty(v.values.shape[:-1] + (len(pairs),))
    for k, (a, b) in enumerate(pairs):
        if a == b:
            out[..., k] = _backward_diff(v.values[..., a], axis=a, h=h[a])
        else:
            out[..., k] = 0.5 * (
                _backward_diff(v.values[..., a], axis=b, h=h[b])
                + _backward_diff(v.values[..., b], axis=a, h=h[a])
            )
    return SymTensorField(v.grid, out)


def sym_div(q: SymTensorField) -> VectorField:
    """Negative adjoint of :func:`sym_grad` w.r.t. the weighted inner product."""
    d = q.grid.ndim
    h = q.grid.spacing
    key = {(min(a, b), max(a, b)): k for k, (a, b) in enumerate(sym_index_pairs(d))}
    out = np.zeros(q.values.shape[:-1] + (d,))
    for a in range(d):
        acc = np.zeros(q.values.shape[:-1])
        for b in range(d):
            acc += _backward_diff_adj(q.values[..., key[(min(a, b), max(a, b))]], axis=b, h=h[b])
        out[..., a] = -acc
    return VectorField(q.grid, out)


@dataclass
class LinearOp:
    """A linear map on flat float vectors together with its adjoint."""

    apply: Callable[[np.ndarray], np.ndarray]
    adjoint: Callable[[np.ndarray], np.ndarray]
    domain_dim: int
    codomain_dim: int

    def __matmul__(self, other: "LinearOp") -> "LinearOp":
        if self.domain_dim != other.codomain_dim:
            raise ValueError("operator composition shape mismatch")
        return LinearOp(
            apply=lambda x: self.apply(other.apply(x)),
            adjoint=lambda y: other.adjoint(self.adjoint(y)),
            domain_dim=other.domain_dim,
            codomain_dim=self.codomain_dim,
        )


def identity_linear_op(dim: int, scale: float = 1.0) -> LinearOp:
    return LinearOp(lambda x: scale * x, lambda y: scale * y, dim, dim)


def adjoint_check(op: LinearOp, trials: int = 10, seed: int = 0) -> float:
    """Max relative dot-product test error over random trials."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    worst = 0.0
    tiny = np.finfo(np.float64).tiny
    for _ in range(trials):
        x = rng.standard_normal(op.domain_dim)
        y = rng.standard_normal(op.codomain_dim)
        ax = op.apply(x)
        aty = op.adjoint(y)
        lhs = float(np.dot(ax, y))
        rhs = float(np.dot(x, aty))
        denom = float(np.linalg.norm(ax) * np.linalg.norm(y)) + tiny
        worst = max(worst, abs(lhs - rhs) / denom)
    return worst


def op_norm_estimate(op: LinearOp, iters: int = 100, seed: int = 0) -> float:
    """Power-iteration estimate of the largest singular value of `op`."""
    if iters < 1:
        raise ValueError("iters must be >= 1")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(op.domain_dim)
    nx = np.linalg.norm(x)
    if nx == 0:
        return 0.0
    x /= nx
    est = 0.0
    for _ in range(iters):
        y = op.apply(x)
        ny = np.linalg.norm(y)
        if ny == 0:
            return 0.0
        est = ny
        x = op.adjoint(y)
        nx = np.linalg.norm(x)
        if nx == 0:
            return float(est)
        x /= nx
    return float(est)


def _field_linear_op(fwd, adj, dom_zero, cod_zero) -> LinearOp:
    """Wrap field-to-field maps into a flat LinearOp (testing/norm helper)."""
    dom_shape = dom_zero.values.shape
    cod_shape = cod_zero.values.shape

    def apply(x):
        f = dom_zero.with_values(x.reshape(dom_shape))
        return fwd(f).values.reshape(-1)

    def adjoint(y):
        f = cod_zero.with_values(y.reshape(cod_shape))
        return adj(f).values.reshape(-1)

    return LinearOp(apply, adjoint, int(np.prod(dom_shape)), int(np.prod(cod_shape)))


def grad_linear_op(grid, channels: int) -> LinearOp:
    """grad with its adjoint -div, flattened; note sym-weight-free spaces."""
    return _field_linear_op(
        grad,
        lambda p: MultiImage(grid, -div(p).values),
        MultiImage.zeros(grid, channels),
        VectorField.zeros(grid, channels),
    )


def sym_grad_linear_op(grid, channels: int) -> LinearOp:
    """sym_grad/-sym_div pair on weighted coordinates.

    The flat vectors use scaled tensor coordinates ``sqrt(w_k) q_k`` so the
    Euclidean dot product matches the weighted field inner product.
    """
    from .grids import sym_weights

    w = sym_weights(grid.ndim)
    sq = np.sqrt(w)
    dom = VectorField.zeros(grid, channels)
    cod = SymTensorField.zeros(grid, channels)
    dom_shape, cod_shape = dom.values.shape, cod.values.shape

    def apply(x):
        v = VectorField(grid, x.reshape(dom_shape))
        return (sym_grad(v).values * sq).reshape(-1)

    def adjoint(y):
        q = SymTensorField(grid, y.reshape(cod_shape) / sq)
        return (-sym_div(q).values).reshape(-1)

    return LinearOp(apply, adjoint, int(np.prod(dom_shape)), int(np.prod(cod_shape)))
