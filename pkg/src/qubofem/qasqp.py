"""QUBO-sampler-assisted sequential quadratic programming.

``qa_sqp_minimize`` iterates: adapt the per-variable radix-2 grids to the
box bounds, binarise the local quadratic model into a QUBO, sample it,
decode the best bit-vector into a continuous step and accept it only when
the objective strictly decreases; otherwise the discretisation error
shrinks by the factor xi.  ``double_minimize`` alternates this engine over
the displacement dofs (frozen internal state, exactly quadratic) and over
the internal-variable dofs (independent per-point blocks) until the
incremental potential values of the two half-steps agree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .encoding import BinaryEncoding, build_qubo, update_bounds
from .sampler import QuboProblem, derive_seed
from . import sampler as sampler_mod

__all__ = [
    "SqpConfig",
    "SamplerSettings",
    "AugmentedObjective",
    "augment",
    "QaSqpResult",
    "TraceRecord",
    "NonConvergenceError",
    "qa_sqp_minimize",
    "double_minimize",
    "DoubleMinimizeResult",
]


class NonConvergenceError(Exception):
    """Outer double-minimisation loop exhausted its iteration cap."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


@dataclass
class SqpConfig:
    """Knobs of the QA-SQP loop and the outer double-minimisation.

    ``n_steps``/``n_failed`` cap the total numbers of successful and failed
    iterations (they never reset); ``tol`` is the relative-decrease
    convergence tolerance of one minimisation; ``eps_min_rel`` floors the
    discretisation error at ``eps_min_rel * eps0``.  ``q_max_iterations``
    caps the internal-variable minimisation.  ``eps_regrow`` coarsens the
    carried-over discretisation error when a phase restarts within the same
    time step.
    """

    qubits: int = 3
    xi: float = 0.5
    tol: float = 1e-9
    n_steps: int = 100000
    n_failed: int = 1000
    max_iterations: int = 20000
    eps_min_rel: float = 1e-14
    dgamma_interval: float = 1e-2
    alpha_interval: float = math.sqrt(1.5)
    u_interval: float = None        # default: prescribed scale or geometry/100
    outer_tol: float = 1e-9
    outer_cap: int = 200
    q_max_iterations: int = 100
    penalty: float = None           # default: shear modulus

    def __post_init__(self):
        if not (0.0 < self.xi < 1.0):
            raise ValueError(f"shrink factor must be in (0, 1), got {self.xi}")
        if self.qubits < 1:
            raise ValueError("need at least one qubit per variable")
        if self.n_steps < 1 or self.n_failed < 1:
            raise ValueError("iteration caps must be at least 1")
        if self.tol <= 0.0 or self.outer_tol <= 0.0:
            raise ValueError("tolerances must be positive")


@dataclass
class SamplerSettings:
    """Backend plus the per-call request parameters."""

    backend: object
    num_reads: int = 100
    annealing_time_us: float = 20.0
    seed: int = 0

    def with_seed(self, *indices):
        return replace(self, seed=derive_seed(self.seed, *indices))


@dataclass
class TraceRecord:
    """One convergence-trace row: (outer, phase, inner, phi, rel_error)."""

    outer: int
    phase: str
    inner: int
    phi: float
    rel_error: float


@dataclass
class QaSqpResult:
    v: np.ndarray
    value: float
    iterations: int
    n_success: int
    n_failed: int
    converged: bool
    final_rel_error: float
    eps: np.ndarray
    reason: str = ""


# ---------------------------------------------------------------------------
# generic penalty augmentation of a constrained objective
# ---------------------------------------------------------------------------

class AugmentedObjective:
    """f(w) + sum c_h h_j(w)^2 + sum c_l (l_j(w) + lambda_j)^2 over (w, lambda).

    The callables return ``(value, gradient, hessian)`` at a point w.  Each
    inequality contributes one auxiliary variable with bounds [0, inf).
    """

    def __init__(self, objective, equalities=(), inequalities=(),
                 eq_penalties=(), ineq_penalties=()):
        if len(equalities) != len(eq_penalties):
            raise ValueError("one penalty factor per equality constraint")
        if len(inequalities) != len(ineq_penalties):
            raise ValueError("one penalty factor per inequality constraint")
        if any(c <= 0 for c in (*eq_penalties, *ineq_penalties)):
            raise ValueError("penalty factors must be positive")
        self.objective = objective
        self.equalities = tuple(equalities)
        self.inequalities = tuple(inequalities)
        self.eq_penalties = tuple(eq_penalties)
        self.ineq_penalties = tuple(ineq_penalties)

    @property
    def n_aux(self):
        return len(self.inequalities)

    def split(self, v):
        if self.n_aux:
            return np.asarray(v[:-self.n_aux]), np.asarray(v[-self.n_aux:])
        return np.asarray(v), np.zeros(0)

    def value(self, v):
        w, lam = self.split(v)
        total = self.objective(w)[0]
        for h, c in zip(self.equalities, self.eq_penalties):
            total += c * h(w)[0] ** 2
        for j, (l, c) in enumerate(zip(self.inequalities, self.ineq_penalties)):
            total += c * (l(w)[0] + lam[j]) ** 2
        return total

    def model(self, v):
        w, lam = self.split(v)
        nw, na = w.size, self.n_aux
        f, g_w, h_w = self.objective(w)
        g = np.zeros(nw + na)
        hess = np.zeros((nw + na, nw + na))
        g[:nw] = g_w
        hess[:nw, :nw] = h_w
        for hc, c in zip(self.equalities, self.eq_penalties):
            val, gc, hcc = hc(w)
            f += c * val * val
            g[:nw] += 2.0 * c * val * gc
            hess[:nw, :nw] += 2.0 * c * (np.outer(gc, gc) + val * hcc)
        for j, (lc, c) in enumerate(zip(self.inequalities, self.ineq_penalties)):
            val, gc, hcc = lc(w)
            r = val + lam[j]
            f += c * r * r
            g[:nw] += 2.0 * c * r * gc
            g[nw + j] = 2.0 * c * r
            hess[:nw, :nw] += 2.0 * c * (np.outer(gc, gc) + r * hcc)
            hess[:nw, nw + j] = 2.0 * c * gc
            hess[nw + j, :nw] = 2.0 * c * gc
            hess[nw + j, nw + j] = 2.0 * c
        return f, g, hess

    def extend_bounds(self, w_min, w_max):
        """Append the [0, inf) auxiliary-variable bounds to vector bounds."""
        w_min = np.atleast_1d(np.asarray(w_min, dtype=float))
        w_max = np.atleast_1d(np.asarray(w_max, dtype=float))
        lo = np.concatenate([w_min, np.zeros(self.n_aux)])
        hi = np.concatenate([w_max, np.full(self.n_aux, np.inf)])
        return lo, hi


def augment(objective, equalities=(), inequalities=(), eq_penalties=(),
            ineq_penalties=()):
    """Penalty-augmented objective over v = (w, lambda); see the class docs."""
    return AugmentedObjective(objective, equalities, inequalities,
                              eq_penalties, ineq_penalties)


# ---------------------------------------------------------------------------
# the QA-SQP loop
# ---------------------------------------------------------------------------

def _model_diagonal(hessian, blocks):
    """Hessian diagonal as a flat vector, for either storage layout."""
    if blocks is None:
        diag = hessian.diagonal() if hasattr(hessian, "diagonal") \
            else np.diag(hessian)
        return np.asarray(diag).ravel().astype(float)
    return np.concatenate([np.diag(hessian[b]) for b in range(len(blocks))])


def _build_problem(gradient, hessian, encoding, blocks, settings, call_seed,
                   iteration):
    """Binarise the quadratic model; per block when a block layout is given."""
    seed = derive_seed(call_seed, iteration)
    qubits = encoding.qubits
    if blocks is None:
        a_mat, _ = build_qubo(gradient, hessian, encoding)
        return QuboProblem.from_dense(a_mat, num_reads=settings.num_reads,
                                      annealing_time_us=settings.annealing_time_us,
                                      seed=seed)
    entries = {}
    bit_blocks = []
    offset_bits = 0
    for b, (start, size) in enumerate(blocks):
        sub_enc = BinaryEncoding(qubits, encoding.eps[start:start + size],
                                 encoding.zbar[start:start + size])
        if isinstance(hessian, list) or (isinstance(hessian, np.ndarray)
                                         and hessian.ndim == 3):
            h_b = hessian[b]
        else:
            h_b = hessian[start:start + size, start:start + size]
        a_b, _ = build_qubo(gradient[start:start + size], h_b, sub_enc)
        nb = size * qubits
        for i in range(nb):
            if a_b[i, i] != 0.0:
                entries[(offset_bits + i, offset_bits + i)] = a_b[i, i]
            for j in range(i + 1, nb):
                v = a_b[i, j] + a_b[j, i]
                if v != 0.0:
                    entries[(offset_bits + i, offset_bits + j)] = v
        bit_blocks.append((offset_bits, nb))
        offset_bits += nb
    return QuboProblem(n=offset_bits, entries=entries,
                       num_reads=settings.num_reads,
                       annealing_time_us=settings.annealing_time_us,
                       seed=seed, blocks=tuple(bit_blocks))


def qa_sqp_minimize(provider, v0, v_min, v_max, eps0, config, settings,
                    blocks=None, trace=None, phase="U", outer=0,
                    max_iterations=None, tol=None, eps_max=None):
    """Minimise a box-constrained objective through binarised quadratic steps.

    ``provider`` exposes ``value(v) -> float`` and
    ``model(v) -> (value, gradient, hessian)``; the Hessian is a dense/sparse
    matrix, or an array of per-block matrices when ``blocks`` is given.
    Returns a :class:`QaSqpResult`; every iterate satisfies the bounds
    exactly and accepted objective values are strictly decreasing.

    Termination: an accepted step whose relative decrease falls below the
    tolerance, exhaustion of the grid resolution (the discretisation error
    pinned at its floor with no improving step left), or the iteration caps.
    With ``eps0=None`` the initial discretisation error is sized from the
    diagonal Newton-step estimate |g_i|/H_ii, clipped to ``eps_max``; a run
    of consecutive successes with saturated steps coarsens the grid again,
    so a distant optimum is reached in logarithmically many steps.
    """
    v = np.array(v0, dtype=float, copy=True)
    v_min = np.broadcast_to(np.asarray(v_min, dtype=float), v.shape).copy()
    v_max = np.broadcast_to(np.asarray(v_max, dtype=float), v.shape).copy()
    if np.any(v < v_min) or np.any(v > v_max):
        raise ValueError("initial point violates the box bounds")
    if max_iterations is None:
        max_iterations = config.max_iterations
    if tol is None:
        tol = config.tol

    f, grad, hess = provider.model(v)
    if not np.isfinite(f) or not np.all(np.isfinite(grad)):
        raise FloatingPointError("objective provider returned non-finite values")
    scale = max(abs(f), 1e-300)

    if eps0 is None and eps_max is None:
        raise ValueError("either eps0 or eps_max must be given")
    if eps_max is None:
        eps_max = np.broadcast_to(np.asarray(eps0, dtype=float),
                                  v.shape).copy()
    else:
        eps_max = np.broadcast_to(np.asarray(eps_max, dtype=float),
                                  v.shape).copy()
    eps_floor = config.eps_min_rel * eps_max
    if eps0 is None:
        diag = _model_diagonal(hess, blocks)
        step = np.abs(grad) / np.maximum(diag, 1e-300)
        step[diag <= 0.0] = np.inf
        eps = np.clip(step / 2.0 ** (config.qubits - 1),
                      eps_floor * 2.0 ** 6, eps_max)
    else:
        eps = np.broadcast_to(np.asarray(eps0, dtype=float), v.shape).copy()
    n_success = n_failed = iteration = 0
    floor_streak = 0
    converged = False
    rel = np.inf
    reason = "max_iterations"
    call_seed = settings.seed
    # convergence looks at the total decrease over a sliding window so a
    # single grid-quantised micro-step cannot end the phase early
    window = 8
    recent = []

    while iteration < max_iterations:
        iteration += 1
        eps, zbar = update_bounds(v, v_min, v_max, eps, config.qubits)
        encoding = BinaryEncoding(config.qubits, eps, zbar)
        problem = _build_problem(grad, hess, encoding, blocks, settings,
                                 call_seed, iteration)
        best = sampler_mod.sample(problem, settings.backend).best
        z = encoding.decode(np.array(best.bits))
        v_new = np.minimum(np.maximum(v + z, v_min), v_max)
        f_new = provider.value(v_new)
        if not np.isfinite(f_new):
            raise FloatingPointError("objective provider returned a non-finite value")

        if f_new < f:
            n_success += 1
            floor_streak = 0
            rel = (f - f_new) / scale
            recent.append(f - f_new)
            # a component saturating its grid (extreme decodable value while
            # strictly inside the box bounds) signals that its optimum lies
            # beyond the current range: coarsen that component's grid
            saturated = (encoding.eps > 0.0) \
                & ((z <= encoding.zmin + 0.5 * encoding.eps)
                   | (z >= encoding.zmax - 0.5 * encoding.eps)) \
                & (v_new > v_min) & (v_new < v_max)
            v = v_new
            f, grad, hess = provider.model(v)
            scale = max(scale, abs(f))
            if trace is not None:
                trace.append(TraceRecord(outer=outer, phase=phase,
                                         inner=iteration, phi=f,
                                         rel_error=rel))
            if saturated.any():
                eps[saturated] = np.minimum(eps_max[saturated],
                                            eps[saturated] / config.xi)
        else:
            n_failed += 1
            recent.append(0.0)
            if np.all(eps <= eps_floor * (1.0 + 1e-9)):
                floor_streak += 1
            eps = np.maximum(eps_floor, config.xi * eps)
            if trace is not None:
                trace.append(TraceRecord(outer=outer, phase=phase,
                                         inner=iteration, phi=f,
                                         rel_error=0.0))
            if floor_streak >= 2:
                converged = True
                rel = rel if np.isfinite(rel) else 0.0
                reason = "resolution"
                break
        if len(recent) > window:
            del recent[0]
        if len(recent) == window and sum(recent) <= window * tol * scale:
            converged = True
            rel = sum(recent) / (window * scale)
            reason = "tolerance"
            break
        if n_success >= config.n_steps:
            reason = "n_steps"
            break
        if n_failed >= config.n_failed:
            reason = "n_failed"
            break

    if not np.isfinite(rel):
        rel = 0.0
    return QaSqpResult(v=v, value=f, iterations=iteration,
                       n_success=n_success, n_failed=n_failed,
                       converged=converged, final_rel_error=rel, eps=eps,
                       reason=reason)


# ---------------------------------------------------------------------------
# providers binding the engine to the assembled structural problem
# ---------------------------------------------------------------------------

class _UPhaseProvider:
    """Displacement half: exactly quadratic, so values away from the last
    linearisation point come from the quadratic expansion itself."""

    def __init__(self, problem, u_ref, u_old, dq, states):
        self.problem = problem
        self.u_ref = u_ref
        self.u_old = u_old
        self.dq = dq
        self.states = states
        self._lin_v = None
        self._lin_f = None
        self._lin_g = None
        self._k = problem.stiffness_free()

    def _full(self, v):
        return self.problem.dofmap.expand(v, self.u_ref)

    def model(self, v):
        qm = self.problem.quadratic_model_u(self._full(v), self.u_old,
                                            self.dq, self.states)
        self._lin_v = np.array(v, copy=True)
        self._lin_f = qm.value
        self._lin_g = qm.gradient
        return qm.value, qm.gradient, qm.hessian

    def value(self, v):
        dz = v - self._lin_v
        return (self._lin_f + float(self._lin_g @ dz)
                + 0.5 * float(dz @ (self._k @ dz)))


class _QPhaseProvider:
    """Internal-variable half: separable quartic blocks with the penalty."""

    def __init__(self, problem, u_new, u_old, states):
        self.problem = problem
        self.u_new = u_new
        self.u_old = u_old
        self.states = states

    def model(self, v):
        qm = self.problem.quadratic_model_q(self.u_new, self.u_old, v,
                                            self.states,
                                            penalty=self.problem.penalty)
        return qm.value, qm.gradient, qm.hessian

    def value(self, v):
        return (self.problem.assemble_phi(self.u_new, self.u_old, v,
                                          self.states)
                + self.problem.penalty_term(v))


def _initial_q(problem, u_ref, states):
    """Feasible starting internal-variable increments for one time step.

    dgamma starts at zero; alpha starts on the constraint ring aligned with
    the point's trial elastic deviator, which places it in the correct basin
    for both continued and reversed plastic flow.  Points with a vanishing
    trial deviator fall back to the uniaxial-tension ring point.
    """
    from .material import embed_strain

    strains = problem.point_strains(u_ref)
    dq = np.zeros(problem.n_points * problem.slots)
    for p in range(problem.n_points):
        eps3 = embed_strain(strains[p], problem.d)
        e_tr = eps3 - np.trace(eps3) / 3.0 * np.eye(3) - states[p].eps_p
        norm = np.sqrt(np.tensordot(e_tr, e_tr))
        base = p * problem.slots
        if norm > 1e-14:
            normal = np.sqrt(1.5) * e_tr / norm
            dq[base + 1] = normal[0, 0]
            dq[base + 2] = normal[1, 1]
            dq[base + 3] = np.sqrt(2.0) * normal[0, 1]
            if problem.n_alpha == 5:
                dq[base + 4] = np.sqrt(2.0) * normal[0, 2]
                dq[base + 5] = np.sqrt(2.0) * normal[1, 2]
        else:
            dq[base + 1], dq[base + 2] = 1.0, -0.5
    return dq


@dataclass
class DoubleMinimizeResult:
    u_full: np.ndarray
    dq: np.ndarray
    states: list
    trace: list
    outer_iterations: int
    phi_u: float
    phi_q: float
    outer_error: float
    inner_iterations: list = field(default_factory=list)


def double_minimize(problem, states, u_old, prescribed, config, settings):
    """Alternate displacement and internal-variable minimisations for a step.

    ``prescribed`` maps (node, direction) to the imposed displacement value
    at the end of the step.  Returns the converged displacements, the
    internal-variable increments, the committed states and the convergence
    trace; raises :class:`NonConvergenceError` when the outer loop exhausts
    its cap.
    """
    dofmap = problem.dofmap
    d = problem.d
    u_ref = np.array(u_old, dtype=float, copy=True)
    for (node, direction), value in prescribed.items():
        u_ref[node * d + direction] = value

    v_u = dofmap.restrict(u_ref)
    dq = _initial_q(problem, u_ref, states)

    if config.u_interval is not None:
        u_scale = config.u_interval
    else:
        moves = [abs(u_ref[node * d + direction] - u_old[node * d + direction])
                 for (node, direction) in prescribed]
        u_scale = max(moves) if moves and max(moves) > 0.0 else \
            float(np.ptp(problem.mesh.nodes)) / 100.0
    denom = 2.0 ** config.qubits - 1.0
    eps_u0 = np.full(v_u.shape, u_scale / denom)
    eps_q0 = np.tile(np.concatenate([[config.dgamma_interval / denom],
                                     np.full(problem.n_alpha,
                                             config.alpha_interval / denom)]),
                     problem.n_points)
    q_min = np.tile(np.concatenate([[0.0],
                                    np.full(problem.n_alpha,
                                            -config.alpha_interval)]),
                    problem.n_points)
    q_max = np.tile(np.concatenate([[np.inf],
                                    np.full(problem.n_alpha,
                                            config.alpha_interval)]),
                    problem.n_points)

    trace = []
    inner_counts = []
    phi_u0 = None
    converged = False
    outer = 0
    phi_u = phi_q = outer_err = np.nan

    for outer in range(1, config.outer_cap + 1):
        u_provider = _UPhaseProvider(problem, u_ref, u_old, dq, states)
        res_u = qa_sqp_minimize(
            u_provider, v_u, -np.inf, np.inf,
            eps_u0 if outer == 1 else None, config,
            settings.with_seed(outer, 0), trace=trace, phase="U", outer=outer,
            eps_max=eps_u0)
        v_u = res_u.v
        u_new = dofmap.expand(v_u, u_ref)
        phi_u = problem.assemble_phi(u_new, u_old, dq, states)
        if phi_u0 is None:
            phi_u0 = phi_u

        q_provider = _QPhaseProvider(problem, u_new, u_old, states)
        res_q = qa_sqp_minimize(
            q_provider, dq, q_min, q_max,
            eps_q0 if outer == 1 else None, config,
            settings.with_seed(outer, 1), blocks=problem.q_blocks(),
            trace=trace, phase="Q", outer=outer,
            max_iterations=config.q_max_iterations, eps_max=eps_q0)
        dq = res_q.v
        phi_q = problem.assemble_phi(u_new, u_old, dq, states)

        inner_counts.append((res_u.iterations, res_q.iterations))
        scale = max(abs(phi_u0), 1e-300)
        if phi_u0 == 0.0:
            scale = max(abs(phi_u), abs(phi_q), 1e-300)
        outer_err = abs(phi_u - phi_q) / scale
        trace.append(TraceRecord(outer=outer, phase="outer", inner=0,
                                 phi=phi_q, rel_error=outer_err))
        if outer_err <= config.outer_tol:
            converged = True
            break

    if not converged:
        raise NonConvergenceError(
            f"double minimisation did not converge within {config.outer_cap} "
            f"outer iterations (last error {outer_err:.3e})", trace=trace)

    u_new = dofmap.expand(v_u, u_ref)
    return DoubleMinimizeResult(
        u_full=u_new, dq=dq, states=problem.commit(dq, states), trace=trace,
        outer_iterations=outer, phi_u=phi_u, phi_q=phi_q,
        outer_error=outer_err, inner_iterations=inner_counts)
