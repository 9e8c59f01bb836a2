"""Structural-scale functional, gradients and Hessians.

The incremental potential of a time step is

    phi(U, Q) = sum_points w * dE(strain(U), dq) - dU^T f_ext,

with the displacement half exactly quadratic (the internal state is frozen
there, so the material acts as an elastic medium) and the internal-variable
half block-diagonal per quadrature point.  Dirichlet conditions are handled
by elimination: gradients and Hessians are restricted to the free
displacement dofs.

Full-length displacement vectors are indexed ``node * d + direction``.
Internal-variable vectors stack ``[dgamma, alpha_0, alpha_1, alpha_2]`` per
quadrature point (points ordered element-major).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import material
from .material import (LocalUnknowns, PointState, commit_state,
                       elastic_stress, elastic_tangent, embed_strain,
                       extract_inplane, n_alpha_components)
from .mesh import kinematic_tables, quadrature_rule

__all__ = [
    "DofMap",
    "QuadraticModel",
    "AssemblyError",
    "ConfigurationError",
    "NumericInputError",
    "RankDeficiencyError",
    "VariationalProblem",
]


class AssemblyError(Exception):
    """Base class for assembly failures."""


class ConfigurationError(AssemblyError):
    """Loads or constraints reference unknown mesh sets."""


class NumericInputError(AssemblyError):
    """Non-finite values in state vectors."""


class RankDeficiencyError(AssemblyError):
    """The constrained stiffness is singular (insufficient constraints)."""


class DofMap:
    """Free/constrained bookkeeping of displacement dofs.

    ``constrained`` is an iterable of (node, direction) pairs; those dofs
    never appear in the reduced vectors.
    """

    def __init__(self, mesh, constrained):
        self.mesh = mesh
        self.d = mesh.dimension
        n_total = mesh.n_nodes * self.d
        mask = np.ones(n_total, dtype=bool)
        for node, direction in constrained:
            if not (0 <= node < mesh.n_nodes):
                raise ConfigurationError(f"constraint on missing node {node}")
            if not (0 <= direction < self.d):
                raise ConfigurationError(f"constraint on invalid direction {direction}")
            mask[node * self.d + direction] = False
        self.free_mask = mask
        self.free_indices = np.nonzero(mask)[0]
        self.n_free = int(mask.sum())
        self.n_total = n_total

    def restrict(self, full):
        return np.asarray(full)[self.free_mask]

    def expand(self, free_values, base):
        """Full vector with free entries replaced; base supplies the rest."""
        full = np.array(base, dtype=float, copy=True)
        full[self.free_mask] = free_values
        return full

    def element_dofs(self, element_nodes):
        return (np.asarray(element_nodes)[:, None] * self.d
                + np.arange(self.d)[None, :]).ravel()


@dataclass
class QuadraticModel:
    """Value, gradient and symmetric Hessian of one half of the potential.

    ``space`` is "U" (reduced displacement dofs, sparse Hessian) or "Q"
    (internal-variable dofs, Hessian given as per-point blocks).
    """

    value: float
    gradient: np.ndarray
    hessian: object
    space: str
    blocks: tuple = None


class VariationalProblem:
    """Mesh + material + loads bound together for one simulation.

    Quadrature points are enumerated element-major; each carries
    ``1 + n_alpha`` internal-variable slots ``[dgamma, alpha...]``.
    """

    def __init__(self, mesh, elastic, hardening, constrained,
                 body_force=None, tractions=None, penalty=None):
        self.mesh = mesh
        self.d = mesh.dimension
        self.elastic = elastic
        self.hardening = hardening
        self.penalty = elastic.shear if penalty is None else penalty
        self.rule = quadrature_rule(mesh)
        self.tables = kinematic_tables(mesh, self.rule)
        self.dofmap = DofMap(mesh, constrained)
        self.n_alpha = n_alpha_components(self.d)
        self.slots = 1 + self.n_alpha
        self.m_per_element = self.rule.n_points
        self.n_points = mesh.n_elements * self.m_per_element
        self._tangent = elastic_tangent(elastic, self.d)
        self._k_free = None
        self._element_dofs = [self.dofmap.element_dofs(mesh.elements[e])
                              for e in range(mesh.n_elements)]
        self.f_ext = self.external_force(body_force, tractions)

    # -- geometry helpers ---------------------------------------------------

    def point_index(self, e, q):
        return e * self.m_per_element + q

    def point_coords(self):
        return self.tables.coords.reshape(self.n_points, self.d)

    def point_weights(self):
        return self.rule.weights.reshape(self.n_points)

    def q_blocks(self):
        return tuple((p * self.slots, self.slots) for p in range(self.n_points))

    def new_states(self):
        return [PointState() for _ in range(self.n_points)]

    def unknowns_at(self, dq, p):
        base = p * self.slots
        return LocalUnknowns(dgamma=max(dq[base], 0.0),
                             alpha=dq[base + 1:base + self.slots])

    def point_strains(self, u_full):
        """Flattened strain at every quadrature point, shape (P, d*d)."""
        out = np.empty((self.n_points, self.d * self.d))
        for e in range(self.mesh.n_elements):
            ue = u_full[self._element_dofs[e]]
            for q in range(self.m_per_element):
                out[self.point_index(e, q)] = self.tables.b_mats[e, q] @ ue
        return out

    # -- loads ----------------------------------------------------------------

    def external_force(self, body_force=None, tractions=None):
        """Work-conjugate nodal force vector of constant loads.

        ``body_force`` is a d-vector (MPa/mm); ``tractions`` maps face-set
        names to d-vectors (MPa).  Quadrature-exact for constant loads.
        """
        d = self.d
        f = np.zeros(self.dofmap.n_total)
        if body_force is not None:
            b = np.broadcast_to(np.asarray(body_force, dtype=float), (d,))
            for e in range(self.mesh.n_elements):
                dofs = self._element_dofs[e]
                for q in range(self.m_per_element):
                    w = self.rule.weights[e, q]
                    f[dofs] += w * (self.tables.n_mats[e, q].T @ b)
        for name, t in (tractions or {}).items():
            if name not in self.mesh.face_sets:
                raise ConfigurationError(f"traction on unknown face set {name!r}")
            t = np.broadcast_to(np.asarray(t, dtype=float), (d,))
            for e, face in self.mesh.face_sets[name]:
                nodes = self.mesh.face_nodes(e, face)
                if len(nodes) == 1:       # point "face" of a line element
                    f[nodes[0] * d:(nodes[0] + 1) * d] += t
                else:                     # straight edge, midpoint rule
                    x0, x1 = self.mesh.nodes[nodes[0]], self.mesh.nodes[nodes[1]]
                    half = 0.5 * float(np.linalg.norm(x1 - x0))
                    for node in nodes:
                        f[node * d:(node + 1) * d] += half * t
        return f

    # -- incremental potential ------------------------------------------------

    def assemble_phi(self, u_new, u_old, dq, states):
        """Incremental potential phi = W_int - W_ext of the step."""
        if not (np.all(np.isfinite(u_new)) and np.all(np.isfinite(dq))):
            raise NumericInputError("non-finite entries in U or Q")
        w_int = 0.0
        for e in range(self.mesh.n_elements):
            dofs = self._element_dofs[e]
            ue_new = u_new[dofs]
            ue_old = u_old[dofs]
            for q in range(self.m_per_element):
                p = self.point_index(e, q)
                b = self.tables.b_mats[e, q]
                w_int += self.rule.weights[e, q] * material.j2_energy_increment(
                    b @ ue_new, b @ ue_old, states[p], self.unknowns_at(dq, p),
                    self.elastic, self.hardening, self.d)
        w_ext = float((u_new - u_old) @ self.f_ext)
        return w_int - w_ext

    def penalty_term(self, dq):
        """Weighted sum of the per-point constraint penalties."""
        weights = self.point_weights()
        total = 0.0
        m_mat = material.m_matrix(self.n_alpha)
        for p in range(self.n_points):
            alpha = dq[p * self.slots + 1:(p + 1) * self.slots]
            c = float(alpha @ m_mat @ alpha) - 1.5
            total += weights[p] * self.penalty * c * c
        return total

    def quadratic_model_u(self, u_new, u_old, dq, states):
        """Gradient and Hessian of phi over the free displacement dofs.

        The Hessian is the constant elastic stiffness (internal state
        frozen); the gradient is the assembled internal force minus the
        external force.
        """
        grad_full = self.internal_force(u_new, dq, states) - self.f_ext
        value = self.assemble_phi(u_new, u_old, dq, states)
        return QuadraticModel(value=value,
                              gradient=self.dofmap.restrict(grad_full),
                              hessian=self.stiffness_free(), space="U")

    def quadratic_model_q(self, u_new, u_old, dq, states, penalty=0.0):
        """Per-point gradient stack and block-diagonal Hessian in Q space.

        With the default ``penalty=0`` these are the derivatives of the
        plain incremental potential; the QA-SQP driver passes the problem's
        penalty factor to obtain the augmented objective instead.  Each
        point's contribution is weighted by its quadrature weight, so the
        local penalty-to-energy ratio matches the pointwise augmented
        functional.
        """
        strains = self.point_strains(u_new)
        strains_old = self.point_strains(u_old)
        weights = self.point_weights()
        grad = np.empty(self.n_points * self.slots)
        blocks = np.empty((self.n_points, self.slots, self.slots))
        value = 0.0
        for p in range(self.n_points):
            unknowns = self.unknowns_at(dq, p)
            val, g, h = material.augmented_local_functional(
                strains[p], strains_old[p], states[p], unknowns,
                self.elastic, self.hardening, self.d, penalty=penalty)
            w = weights[p]
            value += w * val
            grad[p * self.slots:(p + 1) * self.slots] = w * g
            blocks[p] = w * h
        value -= float((u_new - u_old) @ self.f_ext)
        return QuadraticModel(value=value, gradient=grad, hessian=blocks,
                              space="Q", blocks=self.q_blocks())

    def internal_force(self, u_new, dq, states):
        """Assembled w * B^T sigma over all points (full-length vector)."""
        f = np.zeros(self.dofmap.n_total)
        for e in range(self.mesh.n_elements):
            dofs = self._element_dofs[e]
            ue = u_new[dofs]
            for q in range(self.m_per_element):
                p = self.point_index(e, q)
                b = self.tables.b_mats[e, q]
                unknowns = self.unknowns_at(dq, p)
                eps3 = embed_strain(b @ ue, self.d)
                eps_p = states[p].eps_p + unknowns.dgamma * unknowns.normal
                sigma = extract_inplane(
                    elastic_stress(eps3, eps_p, self.elastic), self.d)
                f[dofs] += self.rule.weights[e, q] * (b.T @ sigma)
        return f

    def stiffness_full(self):
        """Unreduced elastic stiffness, sparse CSR over all nodal dofs."""
        rows, cols, vals = [], [], []
        for e in range(self.mesh.n_elements):
            dofs = self._element_dofs[e]
            ke = np.zeros((dofs.size, dofs.size))
            for q in range(self.m_per_element):
                b = self.tables.b_mats[e, q]
                ke += self.rule.weights[e, q] * (b.T @ self._tangent @ b)
            grid = np.meshgrid(dofs, dofs, indexing="ij")
            rows.append(grid[0].ravel())
            cols.append(grid[1].ravel())
            vals.append(ke.ravel())
        k = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.dofmap.n_total, self.dofmap.n_total))
        return k.tocsr()

    def stiffness_free(self):
        """Reduced elastic stiffness; checked positive definite once."""
        if self._k_free is None:
            k = self.stiffness_full()
            idx = self.dofmap.free_indices
            k_free = k[idx][:, idx].tocsr()
            try:
                np.linalg.cholesky(k_free.toarray())
            except np.linalg.LinAlgError as exc:
                raise RankDeficiencyError(
                    "reduced stiffness is not positive definite; "
                    "the mesh is insufficiently constrained") from exc
            self._k_free = k_free
        return self._k_free

    # -- state update ---------------------------------------------------------

    def commit(self, dq, states):
        """New point states after a converged step."""
        return [commit_state(states[p], self.unknowns_at(dq, p))
                for p in range(self.n_points)]

    def gamma_field(self, dq, states):
        """Accumulated plastic strain per point including the pending step."""
        return np.array([states[p].gamma + self.unknowns_at(dq, p).dgamma
                         for p in range(self.n_points)])
