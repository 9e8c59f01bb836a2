"""Independent reference solutions used to cross-check the sampler pipeline.

* closed-form fields of the uniaxial-strain elasto-plastic bar under a
  constant body force (linear hardening only);
* pointwise radial-return solve of the J2 model;
* a conventional incremental Newton FEM with the algorithmic consistent
  tangent.

None of these share a solution path with the QA-SQP engine; they reuse
only the mesh and material *types*.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .material import (LocalUnknowns, embed_strain, extract_inplane,
                       n_alpha_components, LinearHardening, MaterialError)

__all__ = [
    "BarSolution",
    "bar_analytic",
    "elastic_limit_load",
    "radial_return_point",
    "RadialReturnResult",
    "newton_fem_reference",
    "NewtonStepResult",
    "OracleError",
    "UnsupportedLawError",
]

_EYE3 = np.eye(3)


class OracleError(Exception):
    """Reference computation failed (e.g. Newton divergence)."""


class UnsupportedLawError(OracleError):
    """The closed-form bar solution requires linear hardening."""


def _p_wave_modulus(elastic):
    return elastic.bulk + 4.0 * elastic.shear / 3.0


def elastic_limit_load(elastic, sigma_y0, length):
    """Largest constant body force that keeps the bar purely elastic."""
    return _p_wave_modulus(elastic) * sigma_y0 / (2.0 * elastic.shear * length)


@dataclass
class BarSolution:
    """Closed-form bar fields and the elastic/plastic transition point."""

    x: np.ndarray
    u_x: np.ndarray
    eps_xx: np.ndarray
    gamma: np.ndarray
    x_c: float
    b0_limit: float


def bar_analytic(elastic, hardening, b0, length, x):
    """Fields of the clamped bar under constant body force b0 (MPa/mm).

    The bar is elastic for x >= x_c and elasto-plastic below; all fields
    follow from the 1D balance sigma_xx = b0 (l - x) combined with the
    Kuhn-Tucker conditions of linear isotropic hardening.
    """
    if not isinstance(hardening, LinearHardening):
        raise UnsupportedLawError(
            "the closed-form bar solution only covers linear hardening")
    if b0 <= 0.0:
        raise OracleError(f"body force must be positive, got {b0}")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    k, mu = elastic.bulk, elastic.shear
    h = hardening.modulus
    sy = hardening.sigma_y0
    m = _p_wave_modulus(elastic)                 # K + 4 mu / 3
    m_ep = m - 4.0 * mu * mu / (3.0 * mu + h)    # elasto-plastic stiffness
    x_c = length - m * sy / (2.0 * mu * b0)

    eps = np.empty_like(x)
    gamma = np.zeros_like(x)
    u = np.empty_like(x)

    elastic_zone = x >= x_c
    eps[elastic_zone] = b0 * (length - x[elastic_zone]) / m
    plastic_zone = ~elastic_zone
    eps[plastic_zone] = (b0 * (length - x[plastic_zone])
                         - 2.0 * mu * sy / (3.0 * mu + h)) / m_ep
    gamma[plastic_zone] = (2.0 * mu * eps[plastic_zone] - sy) / (3.0 * mu + h)

    if x_c < 0.0:
        u = b0 * (length * x - 0.5 * x * x) / m
    else:
        u_c = (b0 * (length * x_c - 0.5 * x_c * x_c)
               - 2.0 * mu * sy * x_c / (3.0 * mu + h)) / m_ep
        u[plastic_zone] = (b0 * (length * x[plastic_zone]
                                 - 0.5 * x[plastic_zone] ** 2)
                           - 2.0 * mu * sy * x[plastic_zone] / (3.0 * mu + h)) / m_ep
        xe = x[elastic_zone]
        u[elastic_zone] = u_c + b0 * (length * (xe - x_c)
                                      - 0.5 * (xe * xe - x_c * x_c)) / m
    return BarSolution(x=x, u_x=u, eps_xx=eps, gamma=gamma, x_c=x_c,
                       b0_limit=elastic_limit_load(elastic, sy, length))


@dataclass
class RadialReturnResult:
    dgamma: float
    normal: np.ndarray         # 3x3 flow direction (zero tensor when elastic)
    sigma: np.ndarray          # 3x3 stress
    gamma_new: float

    def unknowns(self, n_alpha):
        """The (dgamma, alpha) pair reproducing this normal.

        Inverts the parameterisation N00 = a0, N11 = a1, N01 = a2/sqrt(2)
        (N22 = -a0 - a1 holds automatically since N is traceless).
        """
        alpha = np.zeros(n_alpha)
        alpha[0] = self.normal[0, 0]
        alpha[1] = self.normal[1, 1]
        alpha[2] = np.sqrt(2.0) * self.normal[0, 1]
        if n_alpha == 5:
            alpha[3] = np.sqrt(2.0) * self.normal[0, 2]
            alpha[4] = np.sqrt(2.0) * self.normal[1, 2]
        return LocalUnknowns(dgamma=self.dgamma, alpha=alpha)


def radial_return_point(strain_new, state, elastic, hardening, d,
                        max_newton=80, tol=1e-13):
    """Predictor-corrector J2 update satisfying the Kuhn-Tucker conditions.

    ``strain_new`` is the flattened d*d strain.  For linear hardening the
    plastic multiplier is the closed form
    (sigma_eq_trial - sigma_y0 - H gamma_n) / (3 mu + H); otherwise a
    safeguarded scalar Newton solve is used.
    """
    mu = elastic.shear
    eps3 = embed_strain(strain_new, d)
    e_trial = eps3 - np.trace(eps3) / 3.0 * _EYE3 - state.eps_p
    s_trial = 2.0 * mu * e_trial
    seq_trial = np.sqrt(1.5 * np.tensordot(s_trial, s_trial))
    yield_stress = hardening.sigma_y0 + hardening.r(state.gamma)

    sigma_vol = elastic.bulk * np.trace(eps3) * _EYE3
    if seq_trial <= yield_stress:
        return RadialReturnResult(dgamma=0.0, normal=np.zeros((3, 3)),
                                  sigma=sigma_vol + s_trial,
                                  gamma_new=state.gamma)

    def residual(dg):
        return (seq_trial - 3.0 * mu * dg - hardening.sigma_y0
                - hardening.r(state.gamma + dg))

    if isinstance(hardening, LinearHardening):
        dgamma = ((seq_trial - hardening.sigma_y0
                   - hardening.modulus * state.gamma)
                  / (3.0 * mu + hardening.modulus))
    else:
        lo, hi = 0.0, seq_trial / (3.0 * mu)   # residual(lo) > 0 > residual(hi)
        dgamma = hi / 2.0
        for _ in range(max_newton):
            r = residual(dgamma)
            if abs(r) <= tol * max(seq_trial, 1.0):
                break
            slope = -3.0 * mu - hardening.r_prime(state.gamma + dgamma)
            if r > 0.0:
                lo = dgamma
            else:
                hi = dgamma
            step = dgamma - r / slope
            dgamma = step if lo < step < hi else 0.5 * (lo + hi)
        else:
            raise OracleError("radial-return scalar Newton did not converge")

    normal = 1.5 * s_trial / seq_trial
    sigma = sigma_vol + 2.0 * mu * (e_trial - dgamma * normal)
    return RadialReturnResult(dgamma=dgamma, normal=normal, sigma=sigma,
                              gamma_new=state.gamma + dgamma)


def _consistent_tangent(strain_new, state, elastic, hardening, d, rr):
    """Algorithmic modulus of the radial-return update, d*d flattened."""
    k, mu = elastic.bulk, elastic.shear
    c = np.zeros((d * d, d * d))

    def dev4(i, j, a, b):
        return (0.5 * ((i == a) * (j == b) + (i == b) * (j == a))
                - (i == j) * (a == b) / 3.0)

    if rr.dgamma == 0.0:
        for i in range(d):
            for j in range(d):
                for a in range(d):
                    for b in range(d):
                        c[i * d + j, a * d + b] = (k * (i == j) * (a == b)
                                                   + 2.0 * mu * dev4(i, j, a, b))
        return c

    eps3 = embed_strain(strain_new, d)
    e_trial = eps3 - np.trace(eps3) / 3.0 * _EYE3 - state.eps_p
    s_trial = 2.0 * mu * e_trial
    seq_trial = np.sqrt(1.5 * np.tensordot(s_trial, s_trial))
    n = rr.normal
    h_prime = hardening.r_prime(state.gamma + rr.dgamma)
    theta = 1.0 - 3.0 * mu * rr.dgamma / seq_trial
    theta_bar = (1.0 / (1.0 + h_prime / (3.0 * mu)) - (1.0 - theta))

    for i in range(d):
        for j in range(d):
            for a in range(d):
                for b in range(d):
                    val = k * (i == j) * (a == b)
                    val += 2.0 * mu * theta * dev4(i, j, a, b)
                    val -= 2.0 * mu * theta_bar * (2.0 / 3.0) * n[i, j] * n[a, b]
                    c[i * d + j, a * d + b] = val
    return c


@dataclass
class NewtonStepResult:
    u_full: np.ndarray
    gamma: np.ndarray            # per quadrature point
    reaction: float              # force on the reaction set (x-direction)
    residual_norm: float
    iterations: int


def newton_fem_reference(problem, prescribed_steps, reaction_nodes=None,
                         max_newton=40, tol=1e-10, max_cuts=6):
    """Classical incremental Newton solve of the same discretised problem.

    ``problem`` is a :class:`qubofem.assembly.VariationalProblem`;
    ``prescribed_steps`` is a list of {(node, direction): value} maps, one
    per increment.  Returns one :class:`NewtonStepResult` per increment;
    diverging increments are halved a bounded number of times.
    """
    import scipy.sparse as sp

    from .material import PointState

    dofmap = problem.dofmap
    d = problem.d
    mesh = problem.mesh
    tables = problem.tables
    rule = problem.rule
    f_ext = problem.f_ext
    states = problem.new_states()
    u_full = np.zeros(dofmap.n_total)
    results = []

    def assemble(u, history):
        f_int = np.zeros(dofmap.n_total)
        rows, cols, vals = [], [], []
        local = [None] * problem.n_points
        for e in range(mesh.n_elements):
            dofs = dofmap.element_dofs(mesh.elements[e])
            ue = u[dofs]
            ke = np.zeros((dofs.size, dofs.size))
            for q in range(rule.n_points):
                p = problem.point_index(e, q)
                b = tables.b_mats[e, q]
                strain = b @ ue
                rr = radial_return_point(strain, history[p], problem.elastic,
                                         problem.hardening, d)
                local[p] = rr
                w = rule.weights[e, q]
                f_int[dofs] += w * (b.T @ extract_inplane(rr.sigma, d))
                ct = _consistent_tangent(strain, history[p], problem.elastic,
                                         problem.hardening, d, rr)
                ke += w * (b.T @ ct @ b)
            grid = np.meshgrid(dofs, dofs, indexing="ij")
            rows.append(grid[0].ravel())
            cols.append(grid[1].ravel())
            vals.append(ke.ravel())
        k = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(dofmap.n_total, dofmap.n_total)).tocsr()
        return f_int, k, local

    def try_solve(u_start, target, history):
        """Newton iteration; returns (u, f_int, local, res, iters) or None."""
        u = np.array(u_start, copy=True)
        for (node, direction), value in target.items():
            u[node * d + direction] = value
        for it in range(1, max_newton + 1):
            f_int, k, local = assemble(u, history)
            residual = dofmap.restrict(f_int - f_ext)
            scale = max(float(np.linalg.norm(f_ext)),
                        float(np.linalg.norm(dofmap.restrict(f_int))), 1.0)
            res_norm = float(np.linalg.norm(residual))
            if res_norm <= tol * scale:
                return u, f_int, local, res_norm, it
            idx = dofmap.free_indices
            du = spla.spsolve(k[idx][:, idx].tocsc(), -residual)
            if not np.all(np.isfinite(du)):
                return None
            u[dofmap.free_mask] += du
        return None

    def committed(history, local):
        return [PointState(eps_p=history[p].eps_p
                           + local[p].dgamma * local[p].normal,
                           gamma=local[p].gamma_new)
                for p in range(problem.n_points)]

    for target in prescribed_steps:
        start = {key: u_full[key[0] * d + key[1]] for key in target}
        solved = False
        for cuts in range(max_cuts + 1):
            n_sub = 2 ** cuts
            u_try = np.array(u_full, copy=True)
            states_try = [s.copy() for s in states]
            ok = True
            for s_i in range(1, n_sub + 1):
                frac = s_i / n_sub
                sub_target = {key: start[key] + frac * (target[key] - start[key])
                              for key in target}
                attempt = try_solve(u_try, sub_target, states_try)
                if attempt is None:
                    ok = False
                    break
                u_try, f_int, local, res_norm, iters = attempt
                states_try = committed(states_try, local)
            if ok:
                u_full, states = u_try, states_try
                solved = True
                break
        if not solved:
            raise OracleError(
                f"Newton reference diverged even after {max_cuts} step cuts")

        reaction = 0.0
        if reaction_nodes is not None:
            reaction = float(sum(f_int[node * d] for node in reaction_nodes))
        results.append(NewtonStepResult(
            u_full=u_full.copy(),
            gamma=np.array([s.gamma for s in states]),
            reaction=reaction, residual_norm=res_norm, iterations=iters))
    return results
