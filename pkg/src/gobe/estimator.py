"""Treatment effect estimation via per-arm regression imputation.

One regression is fitted per arm, each unit's unobserved counterfactual is
imputed with the other arm's model, and the effect is the average imputed
difference. The difference-in-means estimator is the covariate-free special
case, so it shares this exact code path. The reported variance is the sum of
per-arm in-sample mean squared errors scaled by arm size, and intervals are
Gaussian; arm sizes are recorded so consumers can judge the asymptotics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import ExperimentData
from .errors import ValidationError
from .normal import z_for_alpha
from .regression import FittedArmModel, ModelSpec, fit, parse_model, predict


@dataclass(frozen=True)
class AteEstimate:
    """Point estimate, uncertainty, and bookkeeping for one model.

    ``lift`` is the effect relative to the absolute observed control-arm
    mean and is None (with an explanatory flag) when that mean is zero.
    ``lift_ci`` divides the effect interval by the same constant, ignoring
    noise in the denominator.
    """

    model_id: str
    ate: float
    variance: float
    mse_per_arm: tuple[float, float]
    ci: tuple[float, float]
    alpha: float
    n_per_arm: tuple[int, int]
    control_mean: float
    lift: float | None
    lift_ci: tuple[float, float] | None
    flags: tuple[str, ...] = ()


def fit_arm_models(data: ExperimentData, spec: ModelSpec,
                   seed: int = 0) -> tuple[FittedArmModel, FittedArmModel]:
    """Fit the spec on each arm's rows. Both fits use the same seed so that
    relabelling the arms permutes the results instead of changing them."""
    models = []
    for t in (0, 1):
        mask = data.arm_mask(t)
        if not mask.any():
            raise ValidationError(f"arm {t} is empty")
        models.append(fit(spec, data.outcome[mask], data.covariates[mask],
                          seed=seed, pre_period_col=data.pre_period_col))
    return models[0], models[1]


def impute(data: ExperimentData,
           models: tuple[FittedArmModel, FittedArmModel]) -> np.ndarray:
    """N x 2 matrix of potential-outcome values.

    Column t holds the observed outcome for units assigned to arm t (copied
    bit-for-bit) and the arm-t model's prediction for everyone else.
    """
    out, _ = _impute_with_predictions(data, models)
    return out


def _impute_with_predictions(data: ExperimentData,
                             models: tuple[FittedArmModel, FittedArmModel],
                             ) -> tuple[np.ndarray, np.ndarray]:
    """Imputation matrix plus the raw model predictions (pre-overwrite)."""
    model0, model1 = models
    n0, n1 = data.arm_sizes()
    for model, size, t in ((model0, n0, 0), (model1, n1, 1)):
        if model.n_obs and model.n_obs != size:
            raise ValidationError(
                f"arm {t} model was fitted on {model.n_obs} rows but the arm has {size}"
            )
    pred = np.empty((data.n_units, 2))
    pred[:, 0] = predict(model0, data.covariates)
    pred[:, 1] = predict(model1, data.covariates)
    out = pred.copy()
    treated = data.assignment == 1
    out[~treated, 0] = data.outcome[~treated]
    out[treated, 1] = data.outcome[treated]
    return out, pred


def estimate(data: ExperimentData, spec: ModelSpec | str,
             alpha: float = 0.05, seed: int = 0) -> AteEstimate:
    """Run the full imputation estimator for one model choice.

    Parameters
    ----------
    data : ExperimentData
        Experiment with both arms present and at least 2 units per arm.
    spec : ModelSpec or canonical model name
        ``two_step:<base>`` specs are composed from their base model.
    alpha : float
        Significance level; the interval covers 1 - alpha nominally.
    seed : int
        Drives cross-validation fold draws; everything else is exact.
    """
    if isinstance(spec, str):
        spec = parse_model(spec)
    if spec.kind == "two_step":
        return estimate_two_step(data, spec.base, alpha=alpha, seed=seed)
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha must be in (0, 1), got {alpha}")
    _require_two_per_arm(data)
    models = fit_arm_models(data, spec, seed=seed)
    return _assemble(data, models, spec.name, alpha)


def estimate_two_step(data: ExperimentData, base_spec: ModelSpec | str,
                      alpha: float = 0.05, seed: int = 0) -> AteEstimate:
    """Two-step estimator: fit a base model per arm, then calibrate each arm
    with a linear model whose only covariate is that arm model's prediction.

    Arm t's step-two regression uses the base model's prediction as a fixed
    function of the covariates, so cross-arm imputation evaluates at each
    unit's imputed value. Point estimate, error terms, and interval all come
    from the second step.
    """
    if isinstance(base_spec, str):
        base_spec = parse_model(base_spec)
    if base_spec.kind == "two_step":
        raise ValidationError("two_step cannot be nested")
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha must be in (0, 1), got {alpha}")
    _require_two_per_arm(data)
    base0, base1 = fit_arm_models(data, base_spec, seed=seed)
    step2 = ExperimentData(
        unit_ids=data.unit_ids,
        assignment=data.assignment,
        outcome=data.outcome,
        covariates=np.column_stack([
            predict(base0, data.covariates),
            predict(base1, data.covariates),
        ]),
        pre_period_col=0,
    )
    models = tuple(
        fit(ModelSpec(kind="ols", columns=(t,)),
            step2.outcome[step2.arm_mask(t)],
            step2.covariates[step2.arm_mask(t)],
            seed=seed)
        for t in (0, 1)
    )
    return _assemble(step2, models, f"two_step:{base_spec.name}", alpha)


def variance_reduction(candidate: AteEstimate, baseline_dim: AteEstimate) -> float | None:
    """Percent variance reduction relative to the difference-in-means run.

    Negative when the candidate is noisier; None when the baseline variance
    is zero (undefined ratio).
    """
    if candidate.n_per_arm != baseline_dim.n_per_arm:
        raise ValidationError("variance reduction requires estimates from the same data")
    if baseline_dim.variance == 0.0:
        return None
    return 100.0 * (1.0 - candidate.variance / baseline_dim.variance)


def _require_two_per_arm(data: ExperimentData) -> None:
    data.require_both_arms()
    n0, n1 = data.arm_sizes()
    if min(n0, n1) < 2:
        raise ValidationError(
            f"need >= 2 units per arm for the error estimate (sizes: {n0}, {n1})"
        )


def _assemble(data: ExperimentData, models: tuple[FittedArmModel, FittedArmModel],
              model_id: str, alpha: float) -> AteEstimate:
    imputed, pred = _impute_with_predictions(data, models)
    ate = float(np.mean(imputed[:, 1] - imputed[:, 0]))
    mses = []
    for t in (0, 1):
        mask = data.arm_mask(t)
        resid = data.outcome[mask] - pred[mask, t]
        mses.append(float(resid @ resid / (mask.sum() - 1)))
    n0, n1 = data.arm_sizes()
    variance = mses[1] / n1 + mses[0] / n0
    half_width = z_for_alpha(alpha) * math.sqrt(variance)
    control_mean = float(data.outcome[data.arm_mask(0)].mean())
    flags = tuple(f"arm{t}:{flag}" for t in (0, 1) for flag in models[t].flags)
    if control_mean == 0.0:
        lift, lift_ci = None, None
        flags += ("lift_undefined",)
    else:
        scale = abs(control_mean)
        lift = ate / scale
        lift_ci = ((ate - half_width) / scale, (ate + half_width) / scale)
    return AteEstimate(
        model_id=model_id,
        ate=ate,
        variance=variance,
        mse_per_arm=(mses[0], mses[1]),
        ci=(ate - half_width, ate + half_width),
        alpha=alpha,
        n_per_arm=(n0, n1),
        control_mean=control_mean,
        lift=lift,
        lift_ci=lift_ci,
        flags=flags,
    )
