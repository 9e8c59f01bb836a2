import sys, time
import numpy as np
import qubofem.qasqp as Q
from qubofem.cli import RunConfig, run_plate2d

orig = Q.qa_sqp_minimize
calls = {"n": 0, "t": 0.0}
def wrapped(*args, **kwargs):
    t0 = time.time()
    res = orig(*args, **kwargs)
    calls["n"] += 1; calls["t"] += time.time()-t0
    print(f"  outer={kwargs.get('outer')} {kwargs.get('phase')}: it={res.iterations:4d} "
          f"succ={res.n_success:4d} reason={res.reason:11s} f={res.value:.8e} "
          f"{time.time()-t0:5.1f}s", flush=True)
    return res
Q.qa_sqp_minimize = wrapped

nx, ny, tol = int(sys.argv[1]), int(sys.argv[2]), float(sys.argv[3])
cfg = RunConfig(scenario="plate2d", nx=nx, ny=ny,
                youngs_modulus=20000.0, poisson=0.3, yield_stress=150.0,
                hardening="swift", gamma0=0.05, exponent=0.1,
                qubits=3, tol=tol, outer_tol=1e-8,
                backend="sa", num_reads=100, seed=777,
                out=".debug/plate_out").validate()
t0 = time.time()
rows = run_plate2d(cfg)
print(f"time {time.time()-t0:.1f}s  sampler calls={calls['n']} ({calls['t']:.0f}s)")
for t, u, f, f_newton in rows:
    rel = abs(f - f_newton)/max(abs(f_newton), 1e-12)
    print(f"t={t:.2f} u={u: .5f} F={f: 10.3f} F_newton={f_newton: 10.3f} rel={rel:.2e}")
