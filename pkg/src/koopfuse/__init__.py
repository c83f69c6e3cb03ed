"""koopfuse: output-constrained Koopman operator learning from fused
state and output time-series data."""

from .datasets import (
    AffineTransform, SnapshotSet, apply_transform, build_snapshots, delay_embed,
    embed_trajectories, split, standardize,
)
from .dictionary import (
    Dictionary, IdentityDictionary, MonomialDictionary, NeuralDictionary,
    append_constant, make_monomial, make_neural,
)
from .evaluation import (
    MetricsRecord, evaluate_model, grid_search, phase_portrait,
    predict_n_step, predict_one_step, predict_output, r_squared,
)
from .solvers import (
    DMD, EDMD, DirectOCDeepDMD, KoopmanModel, NonlinearStateSpace,
    NonlinearStateSpaceModel, SequentialOCDeepDMD, TrainConfig,
    check_sequential_feasible_for_direct, dmd, edmd, fit_direct_ocdmd,
    fit_edmd_model, fit_nonlinear_statespace, fit_sequential_ocdmd,
    finite_closure_theoretical_model,
)
from .spectral import (
    SpectralDecomposition, apply_affine_transform, conjugate_output_dynamics,
    eval_eigenfunctions, match_eigenpairs, modal_decomposition,
    observable_decomposition, output_dynamics_full_rank,
    output_span_decomposition, pearson_correlation, state_grid,
)
from .systems import (
    SystemSpec, Trajectory, generate_dataset, integrate_rk4, make_system,
)

__version__ = "0.1.0"
