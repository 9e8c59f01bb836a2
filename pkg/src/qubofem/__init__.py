"""Elasto-plastic finite elements driven by QUBO-sampler-assisted SQP.

The package solves small-strain, history-dependent solid-mechanics problems
by alternating structural-scale energy minimisations over displacement and
internal-variable degrees of freedom; every quadratic sub-problem is
binarised with a radix-2 encoding and handed to a pluggable QUBO sampler
(exhaustive enumeration, simulated annealing, or an external bridge
process).
"""

from .assembly import DofMap, QuadraticModel, VariationalProblem
from .encoding import BinaryEncoding, build_qubo, update_bounds
from .material import (ElasticParams, LinearHardening, LocalUnknowns,
                       PointState, SwiftHardening, augmented_local_functional,
                       commit_state, elastic_energy, j2_energy_increment,
                       stress_and_tangent)
from .mesh import (Mesh, build_grid_mesh, build_line_mesh, kinematic_tables,
                   quadrature_rule, read_mesh, write_mesh)
from .oracle import bar_analytic, newton_fem_reference, radial_return_point
from .qasqp import (NonConvergenceError, SamplerSettings, SqpConfig, augment,
                    double_minimize, qa_sqp_minimize)
from .sampler import (BridgeSampler, ExhaustiveSampler, IsingProblem,
                      QuboProblem, SampleSet, SimulatedAnnealingSampler,
                      bridge_sample, exhaustive_sample, qubo_to_ising, sample,
                      sa_sample)

__version__ = "0.1.0"
