"""Generalized phase retrieval over compact groups.

Signals are tuples of ``N_l x R_l`` blocks; the invariant is the tuple of
Gram matrices ``X_l^T X_l``, which forgets exactly the action of
``H = prod O(N_l)``.
"""

from .estimators import GramRecovery, InvariantFeatures, MomentEstimator
from .metrics import MetricReport, d_gram, d_H, d_sigma, gram_sqrt_dist, local_lowlip_check, metric_report
from .moments import (
    GramTuple,
    NotPSDError,
    NotSkewPairError,
    procrustes_align,
    psd_project,
    second_moment,
    skew_defect,
    skew_pair_witness,
    sqrt_moment,
    sqrt_psd,
)
from .priors import (
    AffineChart,
    LinearPrior,
    ManifoldPrior,
    ReluPrior,
    SparsePrior,
    affine_plane_prior,
    embed_generic,
    generic_linear_prior,
    hull_pieces,
    local_affine_chart,
    relu_prior,
    segment_prior,
    sparse_prior,
    sphere_prior,
    torus_prior,
)
from .recovery import (
    MomentEstimate,
    MraConfig,
    RecoveryResult,
    blocks_to_signal,
    cryoem_toy,
    dft_power_spectrum,
    extract_gram,
    mra_simulate,
    noise_stability_experiment,
    real_fourier_basis,
    recover_from_gram,
    sample_complexity_experiment,
    signal_to_blocks,
)
from .repspec import (
    BlockOrthogonal,
    DimensionGate,
    GateKind,
    RepSpec,
    Signal,
    ambient_dim,
    apply_group,
    cryoem_K,
    cryoem_rep_spec,
    dimension_gate,
    effective_dim_K,
    haar_sample,
    max_orbit_dim,
    zn_rep_spec,
)
from .stability import (
    TransversalityVerdict,
    VerdictKind,
    c_constant,
    counterexample_affine_plane,
    counterexample_line_segment,
    estimate_lipschitz_bounds,
    hull_transversality_check,
    lipschitz_ratio,
    transversality_search_linear,
    transversality_search_set,
)

__version__ = "0.1.0"
