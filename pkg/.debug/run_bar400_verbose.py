import sys, time
import numpy as np
import qubofem.qasqp as Q
from qubofem.mesh import build_line_mesh
from qubofem.material import ElasticParams, LinearHardening
from qubofem.assembly import VariationalProblem
from qubofem.qasqp import SqpConfig, SamplerSettings
from qubofem.sampler import SimulatedAnnealingSampler
from qubofem.oracle import bar_analytic

# monkeypatch qa_sqp_minimize to print call summaries
orig = Q.qa_sqp_minimize
def wrapped(*args, **kwargs):
    t0 = time.time()
    res = orig(*args, **kwargs)
    dt = time.time() - t0
    print(f"  {kwargs.get('phase','?')}: it={res.iterations:4d} succ={res.n_success:4d} "
          f"fail={res.n_failed:3d} reason={res.reason:11s} rel={res.final_rel_error:.2e} "
          f"f={res.value:.10e} {dt:5.1f}s", flush=True)
    return res
Q.qa_sqp_minimize = wrapped

elastic = ElasticParams(2000.0, 0.3)
hard = LinearHardening(70.0, 20.0)
mesh = build_line_mesh(1.0, 20)
problem = VariationalProblem(mesh, elastic, hard, constrained=[(0, 0)],
                             body_force=[400.0])
config = SqpConfig(qubits=3, tol=float(sys.argv[1]), outer_tol=float(sys.argv[2]),
                   outer_cap=int(sys.argv[3]) if len(sys.argv) > 3 else 30)
settings = SamplerSettings(backend=SimulatedAnnealingSampler(), num_reads=100, seed=33)
states = problem.new_states()
u0 = np.zeros(problem.dofmap.n_total)
t0 = time.time()
try:
    res = Q.double_minimize(problem, states, u0, {(0, 0): 0.0}, config, settings)
except Q.NonConvergenceError as e:
    print("NONCONVERGENCE:", e)
    sys.exit(1)
t1 = time.time()
xq = problem.point_coords()[:, 0]
sol_q = bar_analytic(elastic, hard, 400.0, 1.0, xq)
sol_n = bar_analytic(elastic, hard, 400.0, 1.0, mesh.nodes[:, 0])
gamma = problem.gamma_field(res.dq, states)
u_err = np.max(np.abs(res.u_full[1:] - sol_n.u_x[1:])/np.abs(sol_n.u_x[1:]))
worst = max((abs(g-a)/a for g, a in zip(gamma, sol_q.gamma) if a > 1e-8), default=0)
print(f"total {t1-t0:.1f}s outer={res.outer_iterations} u_err={u_err:.2e} gamma_err={worst:.2e}")
