import numpy as np
import pytest

from gobe import ConvergenceError, ValidationError
from gobe.regression import (
    FittedArmModel,
    ModelSpec,
    _coordinate_descent,
    cross_validate,
    fit,
    lasso_gamma_max,
    parse_model,
    penalized_objective,
    predict,
)

from oracles import ridge_standardized


def linear_arm(n=200, k=3, noise=1.0, seed=0):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, k))
    beta = np.arange(1, k + 1, dtype=float)
    y = 2.0 + z @ beta + noise * rng.standard_normal(n)
    return y, z


def slopes_in_raw_space(model):
    return model.coefficients / model.sds


# --- fit: basic contracts ---------------------------------------------------

def test_dim_is_arm_mean():
    model = fit(ModelSpec("dim"), np.array([1.0, 2.0, 3.0]), np.zeros((3, 1)))
    assert model.intercept == 2.0
    assert not model.used.any()
    assert predict(model, np.array([123.0])) == 2.0


def test_ols_interpolates_exact_line():
    z = np.linspace(-2, 3, 10)[:, None]
    y = 3.0 + 2.0 * z[:, 0]
    model = fit(ModelSpec("ols"), y, z)
    pred = predict(model, z)
    assert np.max(np.abs(pred - y)) < 1e-10
    assert abs(predict(model, np.array([5.0])) - 13.0) < 1e-10


def test_huge_ridge_penalty_collapses_to_mean():
    y, z = linear_arm(seed=1)
    ols = fit(ModelSpec("ols"), y, z)
    ridge = fit(ModelSpec("ridge", hyper_grid=(1e6,)), y, z)
    assert np.all(np.abs(ridge.coefficients) < 1e-3 * np.abs(ols.coefficients).max())
    assert np.max(np.abs(predict(ridge, z) - y.mean())) < 1e-2
    np.testing.assert_allclose(ridge.coefficients[ridge.used],
                               ridge_standardized(y, z, 1e6), atol=1e-12)


def test_ridge_matches_closed_form_oracle():
    y, z = linear_arm(seed=2)
    for gamma in (0.01, 1.0, 50.0):
        model = fit(ModelSpec("ridge", hyper_grid=(gamma,)), y, z)
        np.testing.assert_allclose(model.coefficients[model.used],
                                   ridge_standardized(y, z, gamma), atol=1e-10)


def test_tiny_ridge_penalty_matches_ols():
    y, z = linear_arm(seed=3)
    ols = fit(ModelSpec("ols"), y, z)
    ridge = fit(ModelSpec("ridge", hyper_grid=(1e-10,)), y, z)
    assert np.max(np.abs(ridge.coefficients - ols.coefficients)) < 1e-6


def test_lasso_zeroes_all_slopes_at_gamma_max():
    y, z = linear_arm(seed=4)
    gmax = lasso_gamma_max(y, z)
    model = fit(ModelSpec("lasso", hyper_grid=(gmax,)), y, z)
    assert np.all(model.coefficients == 0.0)
    assert model.intercept == y.mean()
    # just below gamma_max at least one slope activates
    active = fit(ModelSpec("lasso", hyper_grid=(0.99 * gmax,)), y, z)
    assert np.any(active.coefficients != 0.0)


def test_elastic_net_endpoints_match_lasso_and_ridge():
    y, z = linear_arm(seed=5)
    gamma = 0.3
    lasso = fit(ModelSpec("lasso", hyper_grid=(gamma,)), y, z)
    en1 = fit(ModelSpec("elastic_net", mix=1.0, hyper_grid=(gamma,)), y, z)
    np.testing.assert_allclose(en1.coefficients, lasso.coefficients, atol=1e-12)
    ridge = fit(ModelSpec("ridge", hyper_grid=(gamma,)), y, z)
    en0 = fit(ModelSpec("elastic_net", mix=0.0, hyper_grid=(gamma,)), y, z)
    assert np.max(np.abs(en0.coefficients - ridge.coefficients)) < 1e-8


def test_pcr_with_all_components_equals_ols():
    y, z = linear_arm(seed=6)
    ols = fit(ModelSpec("ols"), y, z)
    pcr = fit(ModelSpec("pcr", n_components=z.shape[1]), y, z)
    assert pcr.n_components == z.shape[1]
    assert np.max(np.abs(predict(pcr, z) - predict(ols, z))) < 1e-8


def test_pcr_variance_threshold_drops_components():
    rng = np.random.default_rng(7)
    base = rng.standard_normal((300, 2))
    # third column nearly duplicates the first: 2 components carry ~all variance
    z = np.column_stack([base, base[:, 0] + 1e-3 * rng.standard_normal(300)])
    y = z @ np.array([1.0, 1.0, 1.0]) + rng.standard_normal(300)
    model = fit(ModelSpec("pcr"), y, z)
    assert model.n_components == 2


def test_coordinate_descent_objective_monotone():
    y, z = linear_arm(n=150, k=6, seed=8)
    zs = (z - z.mean(axis=0)) / z.std(axis=0)
    yc = y - y.mean()
    trace = []
    _coordinate_descent(zs, yc, gamma=0.05, lam=0.7, trace=trace)
    objs = [penalized_objective(zs, yc, w, 0.05, 0.7) for w in trace]
    diffs = np.diff(objs)
    assert np.all(diffs <= 1e-12)


def test_predictions_invariant_to_affine_column_rescaling():
    y, z = linear_arm(n=120, k=4, noise=0.5, seed=9)
    z_scaled = z.copy()
    z_scaled[:, 2] = 10.0 * z[:, 2] + 3.0
    specs = [
        ModelSpec("dim"),
        ModelSpec("ols"),
        ModelSpec("ridge", hyper_grid=(0.5,)),
        ModelSpec("lasso", hyper_grid=(0.05,)),
        ModelSpec("elastic_net", mix=0.4, hyper_grid=(0.1,)),
        ModelSpec("pcr"),
        ModelSpec("tweedie"),
    ]
    y_pos = y - y.min() + 1.0  # tweedie needs non-negative outcomes
    for spec in specs:
        target = y_pos if spec.kind == "tweedie" else y
        a = predict(fit(spec, target, z, seed=3), z)
        b = predict(fit(spec, target, z_scaled, seed=3), z_scaled)
        assert np.max(np.abs(np.asarray(a) - np.asarray(b))) < 1e-8, spec.kind


def test_zero_variance_columns_drop_to_dim():
    y = np.array([1.0, 2.0, 3.0, 4.0])
    z = np.ones((4, 2))
    model = fit(ModelSpec("ols"), y, z)
    assert "dim_fallback" in model.flags
    assert model.intercept == y.mean()
    assert predict(model, z[0]) == y.mean()


def test_rank_deficient_design_is_flagged_not_fatal():
    rng = np.random.default_rng(10)
    z1 = rng.standard_normal(50)
    z = np.column_stack([z1, 2.0 * z1])  # perfectly collinear
    y = z1 + rng.standard_normal(50)
    model = fit(ModelSpec("ols"), y, z)
    assert "rank_deficient" in model.flags
    assert np.isfinite(predict(model, z)).all()


# --- cross-validation -------------------------------------------------------

def test_single_point_grid_skips_scoring():
    y, z = linear_arm(seed=11)
    model = fit(ModelSpec("ridge", hyper_grid=(2.5,)), y, z, seed=0)
    assert model.chosen_gamma == 2.5
    assert model.cv_scores is None


def test_cv_prefers_heavy_shrinkage_on_noise():
    wins = 0
    for rep in range(100):
        rng = np.random.default_rng(1000 + rep)
        z = rng.standard_normal((200, 5))
        y = rng.standard_normal(200)
        gamma, _ = cross_validate(ModelSpec("ridge", hyper_grid=(0.01, 100.0)),
                                  y, z, seed=rep)
        wins += gamma == 100.0
    assert wins >= 90


def test_cv_prefers_light_shrinkage_on_signal():
    wins = 0
    for rep in range(100):
        rng = np.random.default_rng(2000 + rep)
        z = rng.standard_normal((200, 5))
        y = z @ np.array([1.0, -2.0, 0.5, 3.0, 1.5]) + 2.0
        gamma, _ = cross_validate(ModelSpec("ridge", hyper_grid=(1e-6, 1e6)),
                                  y, z, seed=rep)
        wins += gamma == 1e-6
    assert wins >= 90


def test_cv_breaks_ties_toward_larger_gamma():
    # constant outcome: every gamma scores identically
    y = np.full(40, 3.0)
    z = np.random.default_rng(12).standard_normal((40, 2))
    gamma, scores = cross_validate(ModelSpec("ridge", hyper_grid=(0.1, 10.0)), y, z, seed=0)
    assert gamma == 10.0
    assert {g for g, _ in scores} == {0.1, 10.0}


def test_cv_needs_enough_rows():
    y, z = linear_arm(n=4, seed=13)
    with pytest.raises(ValidationError, match="fold"):
        cross_validate(ModelSpec("ridge", hyper_grid=(0.1, 1.0)), y, z, seed=0)


def test_cv_refits_on_full_data():
    y, z = linear_arm(seed=14)
    model = fit(ModelSpec("ridge", hyper_grid=(0.05, 5.0)), y, z, seed=7)
    direct = fit(ModelSpec("ridge", hyper_grid=(model.chosen_gamma,)), y, z)
    np.testing.assert_allclose(model.coefficients, direct.coefficients, atol=1e-12)


# --- tweedie ----------------------------------------------------------------

def test_tweedie_rejects_negative_outcomes():
    with pytest.raises(ValidationError, match="non-negative"):
        fit(ModelSpec("tweedie"), np.array([1.0, -0.5, 2.0]), np.zeros((3, 1)))


def test_tweedie_unit_prediction_at_zero_linear_predictor():
    model = FittedArmModel(
        spec=ModelSpec("tweedie"), intercept=0.0, coefficients=np.zeros(2),
        means=np.zeros(2), sds=np.ones(2), used=np.ones(2, dtype=bool),
        link="log",
    )
    assert predict(model, np.zeros(2)) == 1.0


def test_tweedie_recovers_log_linear_signal():
    rng = np.random.default_rng(15)
    z = rng.standard_normal((4000, 2))
    mu = np.exp(0.5 + 0.3 * z[:, 0] - 0.2 * z[:, 1])
    y = rng.gamma(shape=2.0, scale=mu / 2.0)  # positive, mean mu
    model = fit(ModelSpec("tweedie"), y, z)
    assert model.link == "log"
    raw = slopes_in_raw_space(model)
    np.testing.assert_allclose(raw[model.used], [0.3, -0.2], atol=0.05)
    assert abs(model.intercept + (model.coefficients * model.means / model.sds).sum()
               - 0.5) < 0.05


def test_tweedie_intercept_only_matches_mean():
    y = np.array([0.0, 1.0, 2.0, 5.0])
    model = fit(ModelSpec("tweedie"), y, np.ones((4, 1)))  # zero-variance column
    assert "dim_fallback" in model.flags
    assert model.intercept == y.mean()


def test_tweedie_convergence_error_carries_deviance():
    err = ConvergenceError("nope", last_deviance=3.25)
    assert err.last_deviance == 3.25


# --- spec parsing and validation ---------------------------------------------

@pytest.mark.parametrize("name", [
    "dim", "ols", "ridge", "lasso", "elastic_net:0.5", "pcr", "tweedie",
    "two_step:ols", "two_step:elastic_net:0.25", "ols@pre", "ridge@0,2",
    "two_step:ols@pre",
])
def test_parse_round_trips_canonical_names(name):
    assert parse_model(name).name == name


@pytest.mark.parametrize("bad", [
    "boost", "elastic_net", "elastic_net:2.0", "ols:x", "ridge@a,b",
    "two_step:two_step:ols",
])
def test_parse_rejects_bad_names(bad):
    with pytest.raises(ValidationError):
        parse_model(bad)


@pytest.mark.parametrize("kwargs", [
    dict(kind="ridge", hyper_grid=()),
    dict(kind="ridge", hyper_grid=(0.0,)),
    dict(kind="elastic_net"),
    dict(kind="elastic_net", mix=1.5),
    dict(kind="pcr", n_components=0),
    dict(kind="tweedie", power=2.5),
    dict(kind="tweedie", link="identity"),
    dict(kind="two_step"),
    dict(kind="dim", base=None, columns=(0, 0)),
])
def test_modelspec_validation(kwargs):
    with pytest.raises(ValidationError):
        ModelSpec(**kwargs)


def test_column_subset_restricts_model():
    rng = np.random.default_rng(16)
    z = rng.standard_normal((100, 3))
    y = 4.0 * z[:, 2] + rng.standard_normal(100)
    model = fit(ModelSpec("ols", columns=(0,)), y, z)
    assert model.used.tolist() == [True, False, False]
    pre = fit(ModelSpec("ols", columns="pre"), y, z, pre_period_col=2)
    assert pre.used.tolist() == [False, False, True]
    assert abs(slopes_in_raw_space(pre)[2] - 4.0) < 0.5


def test_predict_rejects_wrong_length():
    y, z = linear_arm(seed=17)
    model = fit(ModelSpec("ols"), y, z)
    with pytest.raises(ValidationError, match="length"):
        predict(model, np.zeros(z.shape[1] + 1))


def test_default_grid_spans_gamma_max():
    from gobe.regression import default_gamma_grid
    y, z = linear_arm(seed=18)
    zs = (z - z.mean(axis=0)) / z.std(axis=0)
    grid = default_gamma_grid(zs, y - y.mean())
    assert len(grid) == 50
    assert grid[0] == pytest.approx(lasso_gamma_max(y, z), rel=1e-12)
    assert grid[-1] == pytest.approx(1e-4 * grid[0], rel=1e-9)
    ratios = np.diff(np.log(np.array(grid)))
    np.testing.assert_allclose(ratios, ratios[0], rtol=1e-9)
