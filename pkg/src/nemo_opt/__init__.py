"""Newton-type multilevel optimization with Galerkin coarse models."""
from .operators import (RankDeficiencyError, TransferPair, apply_transfer,
                        build_interp_1d, build_interp_2d, build_interp_2d_levels,
                        compose_transfers, identity_pair, operator_norms,
                        validate_pair)
from .problems import (ProblemConstants, build_example1, build_laplacian_1d,
                       build_laplacian_2d, build_poisson_1d, estimate_constants)
from .linear_solvers import (LinearSystem, NotPositiveDefiniteError,
                             direct_spd_solve, smoother_sweep, two_grid_solve)
from .core import (IterationRecord, SolverConfig, Trace, armijo_backtrack,
                   coarse_correction_step, fine_correction_step,
                   galerkin_coarse_hessian, nemo_solve, newton_solve,
                   select_step)

__version__ = "0.1.0"
