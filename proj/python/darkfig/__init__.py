"""Survey-adjusted models for arrest given offense, including unreported offenses."""

from ._core import (
    DarkfigError,
    estimate_rates,
    exchangeable_inverse,
    fit_arrest,
    fit_reporting_model,
    run_pipeline,
    simulate,
    weighted_auc,
)

__all__ = [
    "DarkfigError",
    "estimate_rates",
    "exchangeable_inverse",
    "fit_arrest",
    "fit_reporting_model",
    "run_pipeline",
    "simulate",
    "weighted_auc",
]
