"""Benchmark scenario runner and generic QUBO-file solver.

Configuration comes from an INI-style file (key/value entries grouped in
sections) mirrored one-to-one by command-line overrides; see the repository
README for the full grammar.  Scenarios write their artifacts (CSV files,
legacy-ASCII VTK snapshots, a plain-text summary) into the output
directory.  Exit codes: 0 success, 2 configuration error, 3 non-convergence,
4 sampler transport error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
from dataclasses import dataclass, field, fields as dc_fields
from pathlib import Path

import numpy as np

from .assembly import VariationalProblem
from .material import ElasticParams, LinearHardening, SwiftHardening
from .mesh import build_grid_mesh, build_line_mesh
from .oracle import bar_analytic, newton_fem_reference
from .qasqp import (NonConvergenceError, SamplerSettings, SqpConfig,
                    double_minimize)
from .sampler import (BridgeSampler, ExhaustiveSampler, QuboProblem,
                      SimulatedAnnealingSampler, TransportError, sample)

__all__ = ["RunConfig", "ConfigError", "load_config", "run_bar1d",
           "run_plate2d", "run_qubo_file", "main"]


class ConfigError(Exception):
    """Invalid or inconsistent run configuration."""


@dataclass
class RunConfig:
    """Everything needed to reproduce one scenario run."""

    scenario: str = "bar1d"
    # geometry / discretisation
    length: float = 1.0
    elements: int = 20
    lx: float = 1.0
    ly: float = 0.5
    nx: int = 8
    ny: int = 4
    # material (MPa)
    youngs_modulus: float = 2000.0
    poisson: float = 0.3
    yield_stress: float = 70.0
    hardening: str = "linear"
    hardening_modulus: float = 20.0
    gamma0: float = 0.05
    exponent: float = 0.1
    # loading
    body_force: float = 100.0
    amplitude: float = None        # None: 3x the plane-strain yield strain
    times: tuple = None            # None: standard cycle with `increments`
    displacements: tuple = None
    increments: int = 4
    # solver
    qubits: int = 3
    xi: float = 0.5
    tol: float = 1e-9
    outer_tol: float = 1e-9
    max_steps: int = 100000
    max_failed: int = 1000
    q_max_iterations: int = 100
    penalty: float = None
    # sampler
    backend: str = "sa"
    num_reads: int = 100
    annealing_time_us: float = 20.0
    seed: int = 2024
    bridge_command: str = ""
    # output
    out: str = "out"
    repeats: int = 1
    qubo_path: str = ""

    def validate(self):
        if self.scenario not in ("bar1d", "plate2d", "qubo-file"):
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        for name in ("length", "lx", "ly", "youngs_modulus", "yield_stress",
                     "tol", "outer_tol"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("elements", "nx", "ny", "qubits", "num_reads", "repeats",
                     "max_steps", "max_failed", "increments"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if not (0.0 < self.xi < 1.0):
            raise ConfigError("xi must be in (0, 1)")
        if not (0.0 <= self.poisson < 0.5):
            raise ConfigError("poisson must be in [0, 0.5)")
        if self.hardening not in ("linear", "swift"):
            raise ConfigError(f"unknown hardening law {self.hardening!r}")
        if self.backend not in ("sa", "exhaustive", "bridge"):
            raise ConfigError(f"unknown sampler backend {self.backend!r}")
        if self.backend == "bridge" and not self.bridge_command:
            raise ConfigError("bridge backend needs bridge_command")
        if self.times is not None:
            times = tuple(self.times)
            if self.displacements is None or len(self.displacements) != len(times):
                raise ConfigError("times and displacements must pair up")
            if any(t <= 0 for t in times) or any(
                    b <= a for a, b in zip(times, times[1:])):
                raise ConfigError("times must be strictly increasing and > 0")
        return self

    # -- derived pieces ----------------------------------------------------

    def elastic_params(self):
        return ElasticParams(self.youngs_modulus, self.poisson)

    def hardening_law(self):
        if self.hardening == "linear":
            return LinearHardening(self.yield_stress, self.hardening_modulus)
        return SwiftHardening(self.yield_stress, self.gamma0, self.exponent)

    def sqp_config(self):
        return SqpConfig(qubits=self.qubits, xi=self.xi, tol=self.tol,
                         n_steps=self.max_steps, n_failed=self.max_failed,
                         outer_tol=self.outer_tol,
                         q_max_iterations=self.q_max_iterations,
                         penalty=self.penalty)

    def sampler_settings(self, seed):
        if self.backend == "sa":
            backend = SimulatedAnnealingSampler()
        elif self.backend == "exhaustive":
            backend = ExhaustiveSampler()
        else:
            backend = BridgeSampler(command=self.bridge_command.split())
        return SamplerSettings(backend=backend, num_reads=self.num_reads,
                               annealing_time_us=self.annealing_time_us,
                               seed=seed)

    def load_schedule(self):
        """(time, prescribed right-edge displacement) pairs of the plate."""
        if self.times is not None:
            return list(zip(self.times, self.displacements))
        amp = self.amplitude
        if amp is None:
            amp = 3.0 * plane_strain_yield_strain(
                self.elastic_params(), self.yield_stress) * self.lx
        # piecewise-linear path through (0, 0), (0.5, +amp), (1.0, -amp)
        n = self.increments
        path = []
        for i in range(1, n + 1):
            t = i / n
            u = 2.0 * amp * t if t <= 0.5 else amp * (1.0 - 4.0 * (t - 0.5))
            path.append((t, u))
        return path


def plane_strain_yield_strain(elastic, sigma_y0):
    """Nominal x-strain at first yield of the homogeneous plane-strain
    uniaxial-stress state (sigma_yy = 0, eps_zz = 0)."""
    nu = elastic.poisson
    mu = elastic.shear
    c = -nu / (1.0 - nu)
    norm = np.sqrt(((2 - c) ** 2 + (2 * c - 1) ** 2 + (1 + c) ** 2) / 6.0)
    return sigma_y0 / (2.0 * mu * norm)


# ---------------------------------------------------------------------------
# configuration ingestion
# ---------------------------------------------------------------------------

_SECTIONS = {
    "scenario": ("scenario", "length", "elements", "lx", "ly", "nx", "ny"),
    "material": ("youngs_modulus", "poisson", "yield_stress", "hardening",
                 "hardening_modulus", "gamma0", "exponent"),
    "load": ("body_force", "amplitude", "times", "displacements",
             "increments"),
    "sqp": ("qubits", "xi", "tol", "outer_tol", "max_steps", "max_failed",
            "q_max_iterations", "penalty"),
    "sampler": ("backend", "num_reads", "annealing_time_us", "seed",
                "bridge_command"),
    "output": ("out", "repeats", "qubo_path"),
}
_KEY_ALIASES = {"type": "scenario", "directory": "out"}
_TUPLE_KEYS = ("times", "displacements")


def _parse_value(name, text, target_type):
    text = text.strip()
    if name in _TUPLE_KEYS:
        try:
            return tuple(float(tok) for tok in text.split())
        except ValueError as exc:
            raise ConfigError(f"{name}: expected numbers, got {text!r}") from exc
    if text == "" or text.lower() == "none":
        return None
    try:
        if target_type is int:
            return int(text)
        if target_type is float:
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"{name}: expected a number, got {text!r}") from exc
    return text


def load_config(path=None, overrides=None):
    """RunConfig from an optional INI file plus flag overrides."""
    cfg = RunConfig()
    types = {f.name: f.type for f in dc_fields(RunConfig)}
    type_map = {"int": int, "float": float, "str": str, "tuple": tuple}
    if path is not None:
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"config parse error: {exc}") from exc
        for section in parser.sections():
            if section not in _SECTIONS:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in parser.items(section):
                name = _KEY_ALIASES.get(key, key)
                if name not in _SECTIONS[section]:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
                target = type_map.get(types[name], str)
                setattr(cfg, name, _parse_value(name, raw, target))
    for name, value in (overrides or {}).items():
        if value is not None:
            setattr(cfg, name, value)
    return cfg.validate()


# ---------------------------------------------------------------------------
# artifact helpers
# ---------------------------------------------------------------------------

def _fmt(x):
    """Shortest decimal that round-trips the float (deterministic output)."""
    return repr(float(x))


def _write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(cell if isinstance(cell, str) else _fmt(cell)
                              for cell in row) + "\n")


def _write_convergence(path, runs):
    """runs: list of (label dict, trace list)."""
    rows = []
    labels = sorted({k for label, _ in runs for k in label})
    for label, trace in runs:
        for rec in trace:
            rows.append([str(label.get(k, "")) for k in labels]
                        + [str(rec.outer), rec.phase, str(rec.inner),
                           _fmt(rec.phi), _fmt(rec.rel_error)])
    header = labels + ["outer", "phase", "inner", "phi", "rel_error"]
    _write_csv(path, header, rows)


def _write_vtk_gamma(path, mesh, gamma_cells, title):
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(f"{title}\n")
        fh.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {mesh.n_nodes} double\n")
        for xy in mesh.nodes:
            coords = list(xy) + [0.0] * (3 - len(xy))
            fh.write(" ".join(_fmt(c) for c in coords) + "\n")
        npe = mesh.elements.shape[1]
        fh.write(f"CELLS {mesh.n_elements} {mesh.n_elements * (npe + 1)}\n")
        for conn in mesh.elements:
            fh.write(str(npe) + " " + " ".join(str(int(i)) for i in conn) + "\n")
        cell_type = 3 if mesh.kind == "line2" else 9
        fh.write(f"CELL_TYPES {mesh.n_elements}\n")
        for _ in range(mesh.n_elements):
            fh.write(f"{cell_type}\n")
        fh.write(f"CELL_DATA {mesh.n_elements}\n")
        fh.write("SCALARS gamma double 1\nLOOKUP_TABLE default\n")
        for g in gamma_cells:
            fh.write(_fmt(g) + "\n")


# ---------------------------------------------------------------------------
# scenarios
# ---------------------------------------------------------------------------

def _bar_problem(cfg):
    mesh = build_line_mesh(cfg.length, cfg.elements)
    return VariationalProblem(mesh, cfg.elastic_params(), cfg.hardening_law(),
                              constrained=[(0, 0)],
                              body_force=[cfg.body_force],
                              penalty=cfg.penalty)


def run_bar1d(cfg, out_dir=None):
    """Clamped bar under constant body force; fields vs the closed form."""
    out = Path(out_dir if out_dir is not None else cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    problem = _bar_problem(cfg)
    mesh = problem.mesh
    config = cfg.sqp_config()
    linear = isinstance(problem.hardening, LinearHardening)

    runs = []
    realisations = []
    partial_error = None
    for r in range(cfg.repeats):
        settings = cfg.sampler_settings(seed=cfg.seed + r)
        states = problem.new_states()
        u0 = np.zeros(problem.dofmap.n_total)
        try:
            result = double_minimize(problem, states, u0, {(0, 0): 0.0},
                                     config, settings)
        except NonConvergenceError as exc:
            runs.append(({"realisation": r}, exc.trace))
            partial_error = exc
            break
        runs.append(({"realisation": r}, result.trace))
        realisations.append(result)

    _write_convergence(out / "convergence.csv", runs)
    if partial_error is not None:
        raise partial_error

    first = realisations[0]
    xq = problem.point_coords()[:, 0]
    strains = problem.point_strains(first.u_full)[:, 0]
    gamma = np.array([s.gamma for s in first.states])
    rows = []
    if linear:
        sol_n = bar_analytic(problem.elastic, problem.hardening,
                             cfg.body_force, cfg.length, mesh.nodes[:, 0])
        sol_q = bar_analytic(problem.elastic, problem.hardening,
                             cfg.body_force, cfg.length, xq)
    for i, x in enumerate(mesh.nodes[:, 0]):
        rows.append(["node", x, first.u_full[i],
                     sol_n.u_x[i] if linear else "", "", "", "", ""])
    # displacement interpolated at quadrature points for the field rows
    for p, x in enumerate(xq):
        e = p // problem.m_per_element
        ue = first.u_full[problem.dofmap.element_dofs(mesh.elements[e])]
        u_at = float(problem.tables.n_mats[e, p % problem.m_per_element] @ ue)
        rows.append(["qp", x, u_at, sol_q.u_x[p] if linear else "",
                     strains[p], sol_q.eps_xx[p] if linear else "",
                     gamma[p], sol_q.gamma[p] if linear else ""])
    _write_csv(out / "fields.csv",
               ["kind", "x", "u_x", "u_x_ref", "eps_xx", "eps_xx_ref",
                "gamma", "gamma_ref"], rows)

    with open(out / "summary.txt", "w") as fh:
        fh.write(f"scenario bar1d  elements={cfg.elements} length={_fmt(cfg.length)}"
                 f" b0={_fmt(cfg.body_force)} qubits={cfg.qubits}"
                 f" backend={cfg.backend} num_reads={cfg.num_reads}"
                 f" seed={cfg.seed} repeats={cfg.repeats}\n")
        for r, res in enumerate(realisations):
            total_u = sum(i for i, _ in res.inner_iterations)
            total_q = sum(q for _, q in res.inner_iterations)
            fh.write(f"realisation {r}: outer={res.outer_iterations} "
                     f"outer_error={_fmt(res.outer_error)} "
                     f"u_iterations={total_u} q_iterations={total_q}\n")
        if linear:
            err = (np.linalg.norm(first.u_full - sol_n.u_x)
                   / max(np.linalg.norm(sol_n.u_x), 1e-300))
            fh.write(f"u_rel_l2_vs_analytic {_fmt(err)}\n")
        if cfg.repeats > 1:
            outs = [res.outer_iterations for res in realisations]
            fh.write(f"outer_iterations mean={_fmt(np.mean(outs))} "
                     f"min={min(outs)} max={max(outs)}\n")
    return realisations


def _plate_problem(cfg):
    mesh = build_grid_mesh(cfg.lx, cfg.ly, cfg.nx, cfg.ny)
    constrained = [(int(n), 0) for n in mesh.node_sets["left"]]
    constrained += [(int(mesh.node_sets["corner"][0]), 1)]
    constrained += [(int(n), 0) for n in mesh.node_sets["right"]]
    return VariationalProblem(mesh, cfg.elastic_params(), cfg.hardening_law(),
                              constrained=constrained, penalty=cfg.penalty)


def run_plate2d(cfg, out_dir=None):
    """Plane-strain plate under a cyclic prescribed edge displacement."""
    out = Path(out_dir if out_dir is not None else cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    problem = _plate_problem(cfg)
    mesh = problem.mesh
    config = cfg.sqp_config()
    schedule = cfg.load_schedule()
    right = [int(n) for n in mesh.node_sets["right"]]
    left = [int(n) for n in mesh.node_sets["left"]]
    targets = [{(n, 0): u for n in right} for _, u in schedule]

    newton_steps = newton_fem_reference(problem, targets, reaction_nodes=left)

    settings = cfg.sampler_settings(seed=cfg.seed)
    states = problem.new_states()
    u_full = np.zeros(problem.dofmap.n_total)
    runs = []
    force_rows = []
    snapshots = {}
    partial_error = None
    for step, ((t, u_edge), target) in enumerate(zip(schedule, targets)):
        try:
            result = double_minimize(problem, states, u_full, target, config,
                                     settings.with_seed(step))
        except NonConvergenceError as exc:
            runs.append(({"increment": step + 1, "time": _fmt(t)}, exc.trace))
            partial_error = exc
            break
        runs.append(({"increment": step + 1, "time": _fmt(t)}, result.trace))
        u_full = result.u_full
        dq = result.dq
        reaction = float(sum(
            problem.internal_force(u_full, dq, states)[n * 2] for n in left))
        states = result.states
        force_rows.append([t, u_edge, reaction, newton_steps[step].reaction])
        gamma = np.array([s.gamma for s in states])
        snapshots[t] = (gamma, newton_steps[step].gamma.copy())

    _write_convergence(out / "convergence.csv", runs)
    _write_csv(out / "reaction_force_vs_displacement.csv",
               ["time", "u_prescribed", "force", "force_newton"],
               force_rows)
    if partial_error is not None:
        raise partial_error

    coords = problem.point_coords()
    for t_snap in (0.5, 1.0):
        if t_snap not in snapshots:
            continue
        gamma, gamma_newton = snapshots[t_snap]
        rows = [[coords[p, 0], coords[p, 1], gamma[p], gamma_newton[p]]
                for p in range(problem.n_points)]
        tag = f"{t_snap:.2f}".rstrip("0").rstrip(".")
        _write_csv(out / f"gamma_t{tag}.csv",
                   ["x", "y", "gamma", "gamma_newton"], rows)
        cell_gamma = gamma.reshape(mesh.n_elements,
                                   problem.m_per_element).mean(axis=1)
        _write_vtk_gamma(out / f"gamma_t{tag}.vtk", mesh, cell_gamma,
                         f"gamma at t={tag}s")

    with open(out / "summary.txt", "w") as fh:
        fh.write(f"scenario plate2d  grid={cfg.nx}x{cfg.ny} "
                 f"lx={_fmt(cfg.lx)} ly={_fmt(cfg.ly)} qubits={cfg.qubits} "
                 f"backend={cfg.backend} num_reads={cfg.num_reads} "
                 f"seed={cfg.seed}\n")
        for (t, u_edge), row in zip(schedule, force_rows):
            fh.write(f"t={_fmt(t)} u={_fmt(u_edge)} force={_fmt(row[2])} "
                     f"force_newton={_fmt(row[3])}\n")
    return force_rows


def run_qubo_file(path, cfg):
    """Solve a QUBO given in the bridge-protocol body format; print the best.

    The file holds one JSON object with at least ``n`` and ``entries``
    (``[[i, j, value], ...]``); ``num_reads``, ``annealing_time_us`` and
    ``seed`` are optional and overridden by the run configuration.
    """
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read QUBO file: {exc}") from exc
    try:
        body = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"QUBO file parse error at line {exc.lineno}, column {exc.colno}: "
            f"{exc.msg}") from exc
    if not isinstance(body, dict) or "n" not in body or "entries" not in body:
        raise ConfigError("QUBO file must be an object with 'n' and 'entries'")
    try:
        entries = {(int(i), int(j)): float(v) for i, j, v in body["entries"]}
        problem = QuboProblem(
            n=int(body["n"]), entries=entries,
            num_reads=int(body.get("num_reads", cfg.num_reads)),
            annealing_time_us=float(body.get("annealing_time_us",
                                             cfg.annealing_time_us)),
            seed=int(body.get("seed", cfg.seed)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid QUBO file contents: {exc}") from exc
    settings = cfg.sampler_settings(seed=problem.seed)
    best = sample(problem, settings.backend).best
    print("".join(str(b) for b in best.bits), format(best.energy, ".17g"))
    return best


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _build_parser():
    parser = argparse.ArgumentParser(
        prog="qubofem",
        description="Elasto-plastic FE benchmarks solved by QUBO-sampler-"
                    "assisted SQP")
    parser.add_argument("config", nargs="?", help="INI configuration file")
    parser.add_argument("--scenario", choices=["bar1d", "plate2d", "qubo-file"])
    parser.add_argument("--elements", type=int, help="bar element count")
    parser.add_argument("--qubits", type=int, help="qubits per dof")
    parser.add_argument("--sampler", dest="backend",
                        choices=["sa", "exhaustive", "bridge"])
    parser.add_argument("--num-reads", dest="num_reads", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--tol", type=float)
    parser.add_argument("--xi", type=float)
    parser.add_argument("--max-steps", dest="max_steps", type=int)
    parser.add_argument("--max-failed", dest="max_failed", type=int)
    parser.add_argument("--out")
    parser.add_argument("--repeats", type=int)
    parser.add_argument("--body-force", dest="body_force", type=float)
    parser.add_argument("--qubo", dest="qubo_path", help="QUBO problem file")
    parser.add_argument("--bridge-command", dest="bridge_command")
    return parser


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    overrides = {k: v for k, v in vars(args).items() if k != "config"}
    try:
        cfg = load_config(args.config, overrides)
        if cfg.scenario == "qubo-file":
            if not cfg.qubo_path:
                raise ConfigError("scenario qubo-file needs --qubo PATH")
            run_qubo_file(cfg.qubo_path, cfg)
        elif cfg.scenario == "bar1d":
            run_bar1d(cfg)
        else:
            run_plate2d(cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NonConvergenceError as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        return 3
    except TransportError as exc:
        print(f"sampler transport error: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
