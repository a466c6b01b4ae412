"""Derivative label propagation toolkit.

Channel-dimension derivative operators, similarity-based pseudo-label
rectification, the associated loss stack with analytic gradients,
machine-checked theorem verification, and a desk-scale semi-supervised
trainer on synthetic scenes.
"""

from .core import (
    DegenerateColumnError,
    LabelMap,
    entrywise_l1,
    l1_normalize_columns,
    softmax_columns,
)
from .derivative import (
    VARIANTS,
    DerivativeOperator,
    DimensionUnderflowError,
    apply_operator_columns,
    build_operator_matrix,
    diff,
    induced_one_norm,
    numerical_rank,
)
from .losses import (
    DerLossSpec,
    LossInputs,
    LossWeights,
    cross_entropy_masked,
    derivative_loss,
    derivative_loss_from_features,
    finite_difference_check,
    kl_masked,
    loss_gradients,
    total_loss,
)
from .propagation import (
    BlendSchedule,
    blend_pseudo_labels,
    confidence_mask,
    cosine,
    derivative_propagate,
    derivative_similarity,
    gt_similarity_from_labels,
    propagate,
    similarity_matrix,
)
from .theory import (
    StackedSystem,
    VerificationReport,
    counterexample_demo,
    joint_coefficient_matrix,
    solve_features_from_similarities,
    verify_boundedness,
    verify_lemma_norms,
    verify_uniqueness,
    verify_well_posedness,
)

__version__ = "0.1.0"
