"""J2 elasto-plasticity at the material-point level.

The incremental energy of a point is expressed in the unknowns
``(dgamma, alpha)`` where ``dgamma >= 0`` is the plastic multiplier
increment and ``alpha`` parameterises the traceless plastic-flow normal
``N(alpha)``.  The square-norm identity ``N:N == alpha^T M alpha`` holds by
construction, and the unit-norm condition ``N:N = 3/2`` is enforced through
a quadratic penalty whose factor defaults to the shear modulus.

Strain vectors entering the public functions use the row-major d*d
flattening of the in-plane strain (see :mod:`qubofem.mesh`); internally all
tensors are embedded into 3x3 arrays (uniaxial strain for d=1, plane strain
for d=2).  Stresses and moduli are in MPa.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ElasticParams",
    "LinearHardening",
    "SwiftHardening",
    "PointState",
    "LocalUnknowns",
    "MaterialError",
    "n_alpha_components",
    "alpha_basis",
    "m_matrix",
    "plastic_normal",
    "embed_strain",
    "extract_inplane",
    "elastic_energy",
    "elastic_stress",
    "elastic_tangent",
    "hardening_energy_increment",
    "j2_energy_increment",
    "augmented_local_functional",
    "stress_and_tangent",
    "commit_state",
]

_EYE3 = np.eye(3)


class MaterialError(ValueError):
    """Invalid material parameters or unknowns (e.g. negative dgamma)."""


@dataclass(frozen=True)
class ElasticParams:
    """Isotropic elasticity given by Young's modulus E and Poisson ratio nu."""

    e_modulus: float   # MPa
    poisson: float

    def __post_init__(self):
        if self.e_modulus <= 0.0:
            raise MaterialError(f"Young's modulus must be positive, got {self.e_modulus}")
        if not (0.0 <= self.poisson < 0.5):
            raise MaterialError(f"Poisson ratio must be in [0, 0.5), got {self.poisson}")

    @property
    def bulk(self):
        """Bulk modulus K = E / (3 (1 - 2 nu))."""
        return self.e_modulus / (3.0 * (1.0 - 2.0 * self.poisson))

    @property
    def shear(self):
        """Shear modulus mu = E / (2 (1 + nu))."""
        return self.e_modulus / (2.0 * (1.0 + self.poisson))


@dataclass(frozen=True)
class LinearHardening:
    """R(gamma) = modulus * gamma on top of the initial yield stress."""

    sigma_y0: float    # MPa
    modulus: float     # MPa

    def __post_init__(self):
        if self.sigma_y0 <= 0.0:
            raise MaterialError("initial yield stress must be positive")
        if self.modulus < 0.0:
            raise MaterialError("hardening modulus must be non-negative")

    def r(self, gamma):
        return self.modulus * gamma

    def r_prime(self, gamma):
        return self.modulus

    def stored(self, gamma):
        """Closed form of int_0^gamma (sigma_y0 + R) dgamma'."""
        return self.sigma_y0 * gamma + 0.5 * self.modulus * gamma * gamma


@dataclass(frozen=True)
class SwiftHardening:
    """R(gamma) = sigma_y0 [(1 + gamma/gamma0)^exponent - 1]."""

    sigma_y0: float    # MPa
    gamma0: float
    exponent: float

    def __post_init__(self):
        if self.sigma_y0 <= 0.0:
            raise MaterialError("initial yield stress must be positive")
        if self.gamma0 <= 0.0 or self.exponent <= 0.0:
            raise MaterialError("Swift parameters must be positive")

    def r(self, gamma):
        return self.sigma_y0 * ((1.0 + gamma / self.gamma0) ** self.exponent - 1.0)

    def r_prime(self, gamma):
        return (self.sigma_y0 * self.exponent / self.gamma0
                * (1.0 + gamma / self.gamma0) ** (self.exponent - 1.0))

    def stored(self, gamma):
        """Closed-form antiderivative; avoids quadrature inside the objective."""
        n1 = self.exponent + 1.0
        return (self.sigma_y0 * self.gamma0 / n1
                * ((1.0 + gamma / self.gamma0) ** n1 - 1.0))


@dataclass
class PointState:
    """Committed history of a quadrature point: plastic strain and gamma."""

    eps_p: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    gamma: float = 0.0

    def copy(self):
        return PointState(eps_p=self.eps_p.copy(), gamma=self.gamma)


@dataclass
class LocalUnknowns:
    """Per-point minimisation unknowns: (dgamma, alpha)."""

    dgamma: float
    alpha: np.ndarray

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)

    @property
    def normal(self):
        return plastic_normal(self.alpha)


def n_alpha_components(d):
    """Number of normal parameters: 3 in 1D/2D (plane strain), 5 in 3D."""
    return 5 if d == 3 else 3


def alpha_basis(n_alpha):
    """Basis tensors dN/dalpha_j; N(alpha) = sum_j alpha_j * basis_j."""
    b = np.zeros((n_alpha, 3, 3))
    b[0, 0, 0] = 1.0
    b[0, 2, 2] = -1.0
    b[1, 1, 1] = 1.0
    b[1, 2, 2] = -1.0
    s = 1.0 / np.sqrt(2.0)
    b[2, 0, 1] = b[2, 1, 0] = s
    if n_alpha == 5:
        b[3, 0, 2] = b[3, 2, 0] = s
        b[4, 1, 2] = b[4, 2, 1] = s
    return b


def m_matrix(n_alpha):
    """Constraint matrix with N:N = alpha^T M alpha."""
    m = np.eye(n_alpha)
    m[0, 0] = m[1, 1] = 2.0
    m[0, 1] = m[1, 0] = 1.0
    return m


def plastic_normal(alpha):
    """Traceless flow normal parameterised by alpha (3 or 5 components)."""
    alpha = np.asarray(alpha, dtype=float)
    return np.tensordot(alpha, alpha_basis(alpha.shape[0]), axes=1)


def embed_strain(flat, d):
    """Embed a flattened d*d strain into a symmetric 3x3 tensor.

    d=1 is uniaxial strain (only eps_xx), d=2 is plane strain (zero
    out-of-plane components), d=3 is the full tensor.
    """
    flat = np.asarray(flat, dtype=float)
    if flat.shape != (d * d,):
        raise MaterialError(f"expected a {d * d}-vector, got shape {flat.shape}")
    full = np.zeros((3, 3))
    full[:d, :d] = flat.reshape(d, d)
    return 0.5 * (full + full.T)


def extract_inplane(tensor, d):
    """Row-major d*d flattening of the in-plane block of a 3x3 tensor."""
    return np.asarray(tensor, dtype=float)[:d, :d].reshape(d * d).copy()


def _dev(tensor):
    return tensor - (np.trace(tensor) / 3.0) * _EYE3


def _psi(strain3, eps_p, elastic):
    """Free energy density K/2 tr(eps)^2 + mu |dev(eps) - eps_p|^2."""
    e = _dev(strain3) - eps_p
    tr = np.trace(strain3)
    return 0.5 * elastic.bulk * tr * tr + elastic.shear * np.tensordot(e, e)


def elastic_energy(strain_flat, elastic, d):
    """Elastic free energy density of a flattened d*d strain, in MPa."""
    return _psi(embed_strain(strain_flat, d), np.zeros((3, 3)), elastic)


def elastic_stress(strain3, eps_p, elastic):
    """Stress K tr(eps) I + 2 mu (dev(eps) - eps_p), as a 3x3 tensor."""
    return (elastic.bulk * np.trace(strain3) * _EYE3
            + 2.0 * elastic.shear * (_dev(strain3) - eps_p))


def elastic_tangent(elastic, d):
    """Constant isotropic elastic operator in the d*d flattening."""
    k, mu = elastic.bulk, elastic.shear
    c = np.zeros((d * d, d * d))
    for i in range(d):
        for j in range(d):
            for k_ in range(d):
                for l in range(d):
                    val = k * (i == j) * (k_ == l)
                    val += 2.0 * mu * (0.5 * ((i == k_) * (j == l) + (i == l) * (j == k_))
                                       - (i == j) * (k_ == l) / 3.0)
                    c[i * d + j, k_ * d + l] = val
    return c


def hardening_energy_increment(hardening, gamma_n, dgamma):
    """int_{gamma_n}^{gamma_n + dgamma} (sigma_y0 + R) dgamma', closed form."""
    return hardening.stored(gamma_n + dgamma) - hardening.stored(gamma_n)


def j2_energy_increment(strain_new, strain_old, state, unknowns, elastic,
                        hardening, d):
    """Incremental energy density of the step, in MPa.

    Psi(eps_new, eps_p_n + dgamma N) - Psi(eps_old, eps_p_n) plus the
    dissipated/stored hardening contribution of dgamma.
    """
    if unknowns.dgamma < 0.0:
        raise MaterialError(f"dgamma must be non-negative, got {unknowns.dgamma}")
    eps_new = embed_strain(strain_new, d)
    eps_old = embed_strain(strain_old, d)
    eps_p_new = state.eps_p + unknowns.dgamma * unknowns.normal
    return (_psi(eps_new, eps_p_new, elastic)
            - _psi(eps_old, state.eps_p, elastic)
            + hardening_energy_increment(hardening, state.gamma, unknowns.dgamma))


def augmented_local_functional(strain_new, strain_old, state, unknowns,
                               elastic, hardening, d, penalty=None):
    """Value, gradient and Hessian of the penalised point functional.

    The functional is the incremental energy plus
    ``penalty * (alpha^T M alpha - 3/2)^2``; derivatives are taken with
    respect to ``(dgamma, alpha_0, ..alpha_{n-1})`` and are exact.
    """
    mu = elastic.shear
    if penalty is None:
        penalty = mu
    alpha = np.asarray(unknowns.alpha, dtype=float)
    na = alpha.shape[0]
    basis = alpha_basis(na)
    m_mat = m_matrix(na)
    dgamma = unknowns.dgamma

    eps_new = embed_strain(strain_new, d)
    normal = np.tensordot(alpha, basis, axes=1)
    e_dev = _dev(eps_new) - state.eps_p - dgamma * normal

    m_alpha = m_mat @ alpha
    s = float(alpha @ m_alpha)                # = N:N
    cdef = s - 1.5

    value = (j2_energy_increment(strain_new, strain_old, state, unknowns,
                                 elastic, hardening, d)
             + penalty * cdef * cdef)

    # projections (dN/dalpha_j) : e_dev
    proj = np.tensordot(basis, e_dev, axes=([1, 2], [0, 1]))

    grad = np.empty(1 + na)
    grad[0] = (-2.0 * mu * np.tensordot(normal, e_dev)
               + hardening.sigma_y0 + hardening.r(state.gamma + dgamma))
    grad[1:] = -2.0 * mu * dgamma * proj + 4.0 * penalty * cdef * m_alpha

    hess = np.empty((1 + na, 1 + na))
    hess[0, 0] = 2.0 * mu * s + hardening.r_prime(state.gamma + dgamma)
    cross = -2.0 * mu * proj + 2.0 * mu * dgamma * m_alpha
    hess[0, 1:] = cross
    hess[1:, 0] = cross
    hess[1:, 1:] = (2.0 * mu * dgamma * dgamma * m_mat
                    + 8.0 * penalty * np.outer(m_alpha, m_alpha)
                    + 4.0 * penalty * cdef * m_mat)
    return value, grad, hess


def stress_and_tangent(strain_new, state, unknowns, elastic, d):
    """Stress at the current local minimiser and the elastic operator.

    The tangent is the constant isotropic elastic operator because the
    internal state is frozen during the displacement half of the
    double-minimisation.
    """
    eps_new = embed_strain(strain_new, d)
    eps_p = state.eps_p + unknowns.dgamma * unknowns.normal
    sigma = elastic_stress(eps_new, eps_p, elastic)
    return extract_inplane(sigma, d), elastic_tangent(elastic, d)


def commit_state(state, unknowns):
    """History update: eps_p += dgamma N(alpha), gamma += dgamma."""
    return PointState(
        eps_p=state.eps_p + unknowns.dgamma * unknowns.normal,
        gamma=state.gamma + unknowns.dgamma,
    )
