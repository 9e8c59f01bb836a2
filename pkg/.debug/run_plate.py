import sys, time
import numpy as np
from qubofem.cli import RunConfig, run_plate2d, plane_strain_yield_strain

nx, ny = (int(sys.argv[1]), int(sys.argv[2])) if len(sys.argv) > 2 else (4, 2)
tol = float(sys.argv[3]) if len(sys.argv) > 3 else 1e-12
cfg = RunConfig(scenario="plate2d", nx=nx, ny=ny,
                youngs_modulus=20000.0, poisson=0.3, yield_stress=150.0,
                hardening="swift", gamma0=0.05, exponent=0.1,
                qubits=3, tol=tol, outer_tol=1e-8,
                backend="sa", num_reads=100, seed=777,
                out=".debug/plate_out").validate()
t0 = time.time()
rows = run_plate2d(cfg)
t1 = time.time()
print(f"time {t1-t0:.1f}s")
ey = plane_strain_yield_strain(cfg.elastic_params(), cfg.yield_stress)
print("yield strain:", ey, "amplitude:", 3*ey*cfg.lx)
for t, u, f, f_newton in rows:
    rel = abs(f - f_newton)/max(abs(f_newton), 1e-12)
    print(f"t={t:.2f} u={u: .5f} F={f: 10.3f} F_newton={f_newton: 10.3f} rel={rel:.2e}")
