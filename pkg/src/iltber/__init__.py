"""Bit-error-rate and variability analytics for resistive-memory in-line-test data."""

__version__ = "0.1.0"

from .ber import (  # noqa: E402
    BerCurve,
    BerPoint,
    ber_at_margin,
    ber_curve,
    ber_histogram,
    chip_percentiles,
    margin_for_ber,
    optimal_threshold,
)
from .data_model import (  # noqa: E402
    ChipKey,
    CycleRecord,
    Dataset,
    FormingRecord,
    ParseError,
    filter_defective,
    parse_cycles,
    split_states,
)
from .stats_core import (  # noqa: E402
    LogNormalFit,
    chi2_quantile,
    erf,
    erfc,
    ln_erfc,
    mle_fit,
    qnorm,
    qq_diagnostics,
    sigma_ci,
)
from .synth import FleetConfig, gen_nested_dataset, mc_ber_estimate, quad_normal_tail  # noqa: E402
from .varcomp import VarianceComponents, coefficient_of_variation, variance_components  # noqa: E402

__all__ = [
    "BerCurve", "BerPoint", "ber_at_margin", "ber_curve", "ber_histogram", "chip_percentiles",
    "margin_for_ber", "optimal_threshold", "ChipKey", "CycleRecord", "Dataset", "FormingRecord",
    "ParseError", "filter_defective", "parse_cycles", "split_states", "LogNormalFit",
    "chi2_quantile", "erf", "erfc", "ln_erfc", "mle_fit", "qnorm", "qq_diagnostics", "sigma_ci",
    "FleetConfig", "gen_nested_dataset", "mc_ber_estimate", "quad_normal_tail",
    "VarianceComponents", "coefficient_of_variation", "variance_components",
]
