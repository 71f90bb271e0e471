import numpy as np
import pytest

from ikl.align import AlignTrainConfig
from ikl.data import LabeledDataset, gen_norm_sphere
from ikl.features import fourier_features
from ikl.numerics import Prng, check_gradient
from ikl.rks import (PipelineConfig, cross_validate_lambda, evaluate, fit_logistic, logistic_objective, run_pipeline,
                     transform_dataset)
from ikl.spectral import GaussianMixture, SpectralSampler


def features(n=120, d=2, M=32, seed=0):
    data = gen_norm_sphere(n, d, Prng(seed))
    return transform_dataset(data.X, GaussianMixture((1.0,)), M, Prng(seed + 1)), data.y


def test_objective_at_zero_is_log2():
    F, y = Prng(0).normal((10, 4)), np.array([1, -1] * 5, dtype=float)
    value, _ = logistic_objective(np.zeros(5), F, y, 0.1)
    assert value == pytest.approx(np.log(2), abs=1e-15)


def test_objective_gradient():
    p = Prng(1)
    F, y = p.normal((15, 6)), np.where(p.uniform(0, 1, 15) < 0.5, -1.0, 1.0)
    w = p.normal(7)
    f = lambda v: logistic_objective(v, F, y, 0.3)[0]
    assert check_gradient(f, logistic_objective(w, F, y, 0.3)[1], w) <= 1e-6


def test_bias_is_not_regularized():
    F = np.zeros((4, 2))
    y = np.array([1.0, 1.0, 1.0, -1.0])
    model = fit_logistic(F, y, 10.0)
    # with no usable features the bias alone fits the base rate: sigmoid(b) = 3/4
    assert model.bias == pytest.approx(np.log(3), abs=1e-5)
    assert np.all(model.weights == 0)


def test_solver_reaches_tolerance_and_two_starts_agree():
    fmap, y = features()
    a = fit_logistic(fmap, y, 1e-3)
    b = fit_logistic(fmap, y, 1e-3, init=Prng(5).normal(fmap.features.shape[1] + 1))
    assert a.grad_norm <= 1e-6 and b.grad_norm <= 1e-6
    assert abs(a.objective - b.objective) <= 1e-8


def test_evaluate_and_shape_errors():
    fmap, y = features()
    model = fit_logistic(fmap, y, 1e-2)
    err = evaluate(model, fmap, y)
    assert 0 <= err <= 0.5
    with pytest.raises(ValueError):
        evaluate(model, fmap.features[:, :3], y)
    with pytest.raises(ValueError):
        fit_logistic(fmap, y[:-1], 1e-2)
    with pytest.raises(ValueError):
        fit_logistic(fmap, np.zeros_like(y), 1e-2)


def test_cross_validation_picks_from_grid():
    fmap, y = features(150)
    lam, errs = cross_validate_lambda(fmap, y, Prng(3), (1e-4, 1e-2, 1.0))
    assert lam in (1e-4, 1e-2, 1.0) and len(errs) == 3
    assert lam == (1e-4, 1e-2, 1.0)[int(np.argmin(errs))]
    # an enormous penalty cannot beat the unpenalized fits on an easy 2-d problem
    assert errs[-1] >= min(errs)


def test_transform_dataset_shares_frequencies():
    data = gen_norm_sphere(10, 3, Prng(4))
    fmap = transform_dataset(data.X, GaussianMixture((1.0,)), 8, Prng(5))
    again = fourier_features(data.X, fmap.freqs)
    np.testing.assert_array_equal(fmap.features, again.features)
    with pytest.raises(ValueError):
        transform_dataset(data.X, GaussianMixture((1.0,)), 0, Prng(5))


def splits(d, seed=0, n=300):
    p = Prng(seed)
    return (gen_norm_sphere(n, d, p.child("train"), "train"), gen_norm_sphere(n // 2, d, p.child("val"), "val"),
            gen_norm_sphere(n // 2, d, p.child("test"), "test"))


@pytest.mark.parametrize("method", ["rff", "ikl", "sm"])
def test_pipeline_records(method):
    train, val, test = splits(2)
    cfg = PipelineConfig(method=method, M_list=[16, 32], align=AlignTrainConfig(max_iters=60, eval_every=20,
                                                                                lr=1e-3))
    records, source = run_pipeline(train, val, test, cfg)
    assert [r["M"] for r in records] == [16, 32]
    for r in records:
        assert set(r) == {"method", "d", "M", "seed", "test_error", "val_error", "chosen_lambda", "stage1_iters"}
        assert r["method"] == method and r["d"] == 2
        assert (r["stage1_iters"] == 0) == (method == "rff")
    again, _ = run_pipeline(train, val, test, cfg)
    assert again == records


def test_pipeline_with_given_source_skips_stage1():
    train, val, test = splits(2)
    s = SpectralSampler.init(2, Prng(0), identity=True)
    records, source = run_pipeline(train, val, test, PipelineConfig(method="ikl"), source=s)
    assert source is s and records[0]["stage1_iters"] == 0


def test_pipeline_config_validation():
    with pytest.raises(ValueError):
        PipelineConfig(method="svm")
    with pytest.raises(ValueError):
        PipelineConfig(M_list=[])
    with pytest.raises(ValueError):
        PipelineConfig(stop_metric="loss")
    assert PipelineConfig(align={"lr": 1e-2}).align.lr == 1e-2


def test_standardize_uses_train_statistics():
    train, val, test = splits(3)
    shifted = [LabeledDataset(ds.X * 5 + 2, ds.y, ds.split) for ds in (train, val, test)]
    cfg = PipelineConfig(method="rff", standardize=True)
    assert run_pipeline(*shifted, cfg)[0][0]["test_error"] <= 0.5
