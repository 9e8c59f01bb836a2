import sys, time
import numpy as np
from qubofem.mesh import build_line_mesh
from qubofem.material import ElasticParams, LinearHardening
from qubofem.assembly import VariationalProblem
from qubofem.qasqp import SqpConfig, SamplerSettings, double_minimize
from qubofem.sampler import SimulatedAnnealingSampler
from qubofem.oracle import bar_analytic

tol, outer_tol = float(sys.argv[1]), float(sys.argv[2])
elastic = ElasticParams(2000.0, 0.3)
hard = LinearHardening(70.0, 20.0)
mesh = build_line_mesh(1.0, 20)
problem = VariationalProblem(mesh, elastic, hard, constrained=[(0, 0)],
                             body_force=[400.0])
sol_n = bar_analytic(elastic, hard, 400.0, 1.0, mesh.nodes[:, 0])
xq = problem.point_coords()[:, 0]
sol_q = bar_analytic(elastic, hard, 400.0, 1.0, xq)
for seed in (11, 22, 33):
    config = SqpConfig(qubits=3, tol=tol, outer_tol=outer_tol)
    settings = SamplerSettings(backend=SimulatedAnnealingSampler(),
                               num_reads=100, seed=seed)
    states = problem.new_states()
    u0 = np.zeros(problem.dofmap.n_total)
    t0 = time.time()
    res = double_minimize(problem, states, u0, {(0, 0): 0.0}, config, settings)
    t1 = time.time()
    gamma = problem.gamma_field(res.dq, states)
    u_err = np.max(np.abs(res.u_full[1:] - sol_n.u_x[1:])/np.abs(sol_n.u_x[1:]))
    worst = 0.0; spurious = 0
    for x, g_num, g_ana in zip(xq, gamma, sol_q.gamma):
        if g_ana > 1e-8:
            worst = max(worst, abs(g_num-g_ana)/g_ana)
        elif g_num > 1e-8:
            spurious += 1
    print(f"seed={seed}: {t1-t0:5.1f}s outer={res.outer_iterations:2d} "
          f"u_err={u_err:.2e} gamma_err={worst:.2e} spurious={spurious}")
