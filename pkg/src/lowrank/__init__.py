"""Low-rank matrix recovery on the embedded fixed-rank manifold.

Gradient-descent solvers with rank-r truncation retraction under three
metrics (canonical, diagonally weighted by gradient row/column norms, and
Kronecker-factored), a normalized hard-thresholding baseline, sensing
operators for completion, dense Gaussian sensing and lifted phase
retrieval, and a reproducible experiment harness with a CLI.
"""

from lowrank.kernels import (CompactSVD, FactoredRank2r, compact_svd,
                             hard_threshold, tall_qr, truncate_tangent,
                             vee_norm)
from lowrank.operators import (CompletionOperator, GaussianOperator,
                               GradientRep, PhaseRetrievalOperator,
                               make_completion, make_gaussian,
                               make_phase_retrieval)
from lowrank.solvers import SolveTrace, SolverConfig, solve, spectral_init
from lowrank.harness import (ProblemInstance, SweepSpec, add_noise,
                             gen_lowrank, make_problem, oversample_to_m,
                             run_sweep)

__version__ = "0.1.0"
