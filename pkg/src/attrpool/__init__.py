"""Attribute-aware pooling for multi-attribute classification."""

from attrpool.aap import (
    AapConfig,
    AapForwardCache,
    aap_backward,
    aap_forward,
    aap_loss,
    auxiliary_hard,
    auxiliary_soft,
    combine,
    finite_difference_grad,
    global_max_normalize,
    gradcheck,
    hard_indicator,
    local_max_pool,
)
from attrpool.priors import (
    AttributeSchema,
    CoOccurrencePriors,
    LabelMatrix,
    build_conditional,
    build_negative_conditional,
    build_priors,
    count_statistics,
    export_heatmap_csv,
    export_priors,
    load_priors,
    validate_priors,
)

__version__ = "0.1.0"
