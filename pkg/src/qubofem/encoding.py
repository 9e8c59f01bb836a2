"""Radix-2 encoding of continuous steps and the QF -> QUBO conversion.

A continuous step z of one variable is represented with L bits as

    z(b) = zbar + eps * (sum_j b_j 2^j - 2^(L-1) + 1),

so the decodable range is [zmin, zmax] with zmin = zbar - (2^(L-1)-1) eps
and zmax = zbar + 2^(L-1) eps.  A quadratic form
QF(z; g, K) = z^T g + z^T K z / 2 over N such variables becomes an exact
binary quadratic form

    QF(a + D b) = b^T A b + (a^T K a / 2 + a^T g),
    A = D^T K D / 2 + diag(D^T (K a + g)),

with a the vector of per-variable zmin values and D the block-diagonal
matrix of eps_i * [2^0 ... 2^(L-1)] rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

import scipy.sparse as sp

__all__ = ["BinaryEncoding", "update_bounds", "build_qubo", "EncodingError"]


class EncodingError(ValueError):
    """Inconsistent encoding dimensions or parameters."""


@dataclass
class BinaryEncoding:
    """Per-variable radix-2 grids: L qubits, step eps and centre zbar."""

    qubits: int
    eps: np.ndarray
    zbar: np.ndarray

    def __post_init__(self):
        if self.qubits < 1:
            raise EncodingError(f"need at least one qubit, got {self.qubits}")
        self.eps = np.atleast_1d(np.asarray(self.eps, dtype=float))
        self.zbar = np.atleast_1d(np.asarray(self.zbar, dtype=float))
        if self.eps.shape != self.zbar.shape:
            raise EncodingError("eps and zbar must have matching shapes")
        if np.any(self.eps < 0.0):
            raise EncodingError("discretisation errors must be non-negative")
        self.beta = 2.0 ** np.arange(self.qubits)

    @property
    def n_variables(self):
        return self.eps.shape[0]

    @property
    def n_bits(self):
        return self.n_variables * self.qubits

    @property
    def zmin(self):
        return self.zbar - (2 ** (self.qubits - 1) - 1) * self.eps

    @property
    def zmax(self):
        return self.zbar + 2 ** (self.qubits - 1) * self.eps

    @property
    def base(self):
        """The 'a' vector of the affine map z = a + D b."""
        return self.zmin

    def step_matrix(self):
        """The sparse N x (N L) block-diagonal 'D' matrix."""
        n, l = self.n_variables, self.qubits
        rows = np.repeat(np.arange(n), l)
        cols = np.arange(n * l)
        vals = (self.eps[:, None] * self.beta[None, :]).ravel()
        return sp.coo_matrix((vals, (rows, cols)), shape=(n, n * l))

    def decode(self, bits):
        """Continuous steps for a flat bit-vector of length N*L."""
        bits = np.asarray(bits, dtype=float)
        if bits.shape != (self.n_bits,):
            raise EncodingError(
                f"expected {self.n_bits} bits, got shape {bits.shape}")
        counts = bits.reshape(self.n_variables, self.qubits) @ self.beta
        return self.zmin + self.eps * counts


def update_bounds(v, v_min, v_max, eps, qubits):
    """Adapt (eps, zbar) so the decodable steps respect the box bounds.

    Implements the two-branch clipping

        zmin = max(v_min - v, -(2^(L-1)-1) eps)
        zmax = min(v_max - v,  2^(L-1) eps)
        eps' = (zmax - zmin) / (2^L - 1)
        zbar' = (zmin + zmax - eps') / 2.

    The updated grid still has zmin/zmax as its extreme decodable values and
    eps' <= eps always holds.
    """
    v = np.atleast_1d(np.asarray(v, dtype=float))
    eps = np.atleast_1d(np.asarray(eps, dtype=float))
    v_min = np.broadcast_to(np.asarray(v_min, dtype=float), v.shape)
    v_max = np.broadcast_to(np.asarray(v_max, dtype=float), v.shape)
    half = float(2 ** (qubits - 1))
    zmin = np.maximum(v_min - v, -(half - 1.0) * eps)
    zmax = np.minimum(v_max - v, half * eps)
    new_eps = (zmax - zmin) / (2.0 ** qubits - 1.0)
    new_zbar = 0.5 * (zmin + zmax - new_eps)
    return new_eps, new_zbar


def build_qubo(gradient, hessian, encoding):
    """Exact binary form of QF(z; g, K) over the encoding's grid.

    Returns the dense symmetric QUBO matrix A (size N*L) and the constant
    offset such that for every bit-vector b

        b^T A b + offset == QF(a + D b; g, K).
    """
    g = np.asarray(gradient, dtype=float)
    n = encoding.n_variables
    if g.shape != (n,):
        raise EncodingError(f"gradient has shape {g.shape}, expected ({n},)")
    if sp.issparse(hessian):
        k = hessian.toarray()
    else:
        k = np.asarray(hessian, dtype=float)
    if k.shape != (n, n):
        raise EncodingError(f"Hessian has shape {k.shape}, expected ({n}, {n})")

    a = encoding.base
    d = encoding.step_matrix().toarray()
    lin = d.T @ (k @ a + g)
    mat = 0.5 * d.T @ k @ d + np.diag(lin)
    offset = 0.5 * float(a @ k @ a) + float(a @ g)
    return mat, offset
