import math

import numpy as np
import pytest

from shares import kernels
from shares.errors import DegenerateTarget, SchemaError, UnknownShape, ValidationFailed
from shares.evaluator import (
    DEFAULT_WIDTHS,
    TrainConfig,
    compile_tree,
    load_model,
    model_from_dict,
    model_to_dict,
    n_mlp_params,
    r2_score,
    save_model,
    train,
)

from .conftest import share
from .helpers import gradient_relative_error, random_gradient_case


def test_compile_counts_shapes_and_is_deterministic():
    tree = share("s1(x1) + s2(x2)", ["x1", "x2"])
    a = compile_tree(tree, seed=0)
    b = compile_tree(tree, seed=0)
    assert a.n_shapes == 2
    assert a.params.size == 2 * n_mlp_params(DEFAULT_WIDTHS)
    assert np.array_equal(a.params, b.params)
    assert not np.array_equal(a.params, compile_tree(tree, seed=1).params)


def test_initialization_range():
    model = compile_tree(share("s1(x)", ["x"]), seed=3)
    off = 0
    for fan_in, fan_out in zip(DEFAULT_WIDTHS[:-1], DEFAULT_WIDTHS[1:]):
        chunk = model.params[off:off + fan_in * fan_out + fan_out]
        assert np.all(np.abs(chunk) <= math.sqrt(1.0 / fan_in))
        off += chunk.size


def test_compile_rejects_constants_and_invalid_trees():
    with pytest.raises(ValueError):
        compile_tree(share("s1(x) + 2", ["x"]))
    with pytest.raises(ValidationFailed):
        compile_tree(share("s1(s2(x))", ["x"]))


def test_pure_arithmetic_forward():
    names = ["x1", "x2"]
    assert compile_tree(share("x1 + x2", names)).forward([[1.0, 2.0]])[0] == 3.0
    np.testing.assert_array_equal(
        compile_tree(share("x1 * x2", names)).forward([[3.0, 4.0], [2.0, 5.0]]), [12.0, 10.0]
    )
    model = compile_tree(share("x1 * x2", names))
    assert model.params.size == 0
    assert model.backward([[1.0, 2.0]], [0.0]) == []


def test_protected_division():
    model = compile_tree(share("x1 / x2", ["x1", "x2"]))
    out = model.forward([[1.0, 0.0], [1.0, -1e-9], [1.0, 1e-9], [1.0, 0.5]])
    np.testing.assert_array_equal(out, [1e6, -1e6, 1e6, 2.0])


def test_forward_rejects_wrong_width():
    with pytest.raises(SchemaError):
        compile_tree(share("x1 + x2", ["x1", "x2"])).forward([[1.0, 2.0, 3.0]])


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(2024)
    for _ in range(8):
        model, X, y = random_gradient_case(rng)
        assert gradient_relative_error(model, X, y) < 1e-4, model.expression


def test_division_gradient_is_zero_inside_guard():
    model = compile_tree(share("s1(x1) / x2", ["x1", "x2"]), seed=0)
    X = np.array([[0.3, 0.0], [0.9, 2.0], [1.5, 1.0]])
    y = np.zeros(3)
    assert gradient_relative_error(model, X, y) < 1e-4


def test_single_linear_layer_gradient_by_hand():
    # s(x) = w * xhat + b with w = b = 0 on y = 2x: dMSE/dw = -2 E[xhat y]
    x = np.linspace(-1.0, 3.0, 9)
    y = 2 * x
    model = compile_tree(share("s1(x)", ["x"]), widths=(1, 1))
    model.params[:] = 0.0
    _, grad, _ = model.loss_and_grad(x[:, None], y, training=True)
    xhat = (x - x.mean()) / math.sqrt(x.var() + 1e-5)
    assert grad[0] == pytest.approx(-2 * np.mean(xhat * y), rel=1e-12)
    assert grad[1] == pytest.approx(-2 * np.mean(y), rel=1e-12)


def test_r2_score():
    y = np.array([1.0, 2.0, 3.0])
    assert r2_score(y, y) == 1.0
    assert r2_score(y, np.full(3, 2.0)) == 0.0
    assert r2_score(y, np.array([1.0, 2.0, 4.0])) == pytest.approx(0.5)
    with pytest.raises(DegenerateTarget):
        r2_score(np.full(3, 5.0), y)


def test_constant_target_is_rejected():
    X = np.linspace(0, 1, 20)[:, None]
    model = compile_tree(share("s1(x)", ["x"]))
    with pytest.raises(DegenerateTarget):
        train(model, (X[:10], np.full(10, 5.0)), (X[10:], np.full(10, 5.0)), TrainConfig(max_epochs=5))


@pytest.fixture(scope="module")
def sine_fit():
    rng = np.random.default_rng(0)
    x = rng.uniform(0, math.pi, 200)
    y = np.sin(x)
    model = compile_tree(share("s1(x)", ["x"]), seed=0)
    res = train(model, (x[:100, None], y[:100]), (x[100:, None], y[100:]), TrainConfig(seed=0))
    return model, res, x


def test_sine_oracle(sine_fit):
    model, res, x = sine_fit
    assert res.val_r2 >= 0.999
    grid = np.linspace(x.min(), x.max(), 400)
    assert np.max(np.abs(model.eval_shape(0, grid) - np.sin(grid))) <= 0.05


def test_reported_mse_is_best_epoch(sine_fit):
    model, res, x = sine_fit
    assert res.val_mse == min(res.history)
    pred = model.forward(x[100:, None])
    assert float(np.mean((pred - np.sin(x[100:])) ** 2)) == res.val_mse


def test_training_is_deterministic():
    rng = np.random.default_rng(5)
    X = rng.uniform(1, 3, size=(60, 2))
    y = X[:, 0] ** 2 + np.log(X[:, 1])
    tree = share("s1(a) + s2(b)", ["a", "b"])
    cfg = TrainConfig(max_epochs=30, seed=4)
    fits = []
    for _ in range(2):
        m = compile_tree(tree, seed=9)
        r = train(m, (X[:30], y[:30]), (X[30:], y[30:]), cfg)
        fits.append((m.params.copy(), r.val_mse, r.learning_rate))
    assert np.array_equal(fits[0][0], fits[1][0])
    assert fits[0][1:] == fits[1][1:]


def test_eval_mode_is_independent_of_batch_composition():
    rng = np.random.default_rng(8)
    X = rng.uniform(1, 3, size=(40, 2))
    y = X[:, 0] * np.sin(X[:, 1])
    model = compile_tree(share("s1(a) * s2(b)", ["a", "b"]), seed=1)
    train(model, (X[:20], y[:20]), (X[20:], y[20:]), TrainConfig(max_epochs=20))
    batched = model.forward(X)
    single = np.array([model.forward(X[i:i + 1])[0] for i in range(len(X))])
    assert np.array_equal(batched, single)


def test_vertical_translation_between_additive_shapes():
    rng = np.random.default_rng(6)
    X = rng.uniform(0, 2, size=(40, 2))
    y = np.sin(X[:, 0]) + X[:, 1] ** 2
    model = compile_tree(share("s1(a) + s2(b)", ["a", "b"]), seed=2)
    train(model, (X[:20], y[:20]), (X[20:], y[20:]), TrainConfig(max_epochs=20))
    before = model.forward(X)
    c = 0.75
    last_bias_0 = model.shapes[0].offset + model.shapes[0].n_params - 1
    last_bias_1 = model.shapes[1].offset + model.shapes[1].n_params - 1
    model.params[last_bias_0] += c
    model.params[last_bias_1] -= c
    np.testing.assert_allclose(model.forward(X), before, rtol=0, atol=1e-12)


def test_serialization_round_trip(tmp_path, sine_fit):
    model, _, x = sine_fit
    path = tmp_path / "m.json"
    save_model(model, path)
    again = load_model(path)
    assert np.array_equal(again.forward(x[:, None]), model.forward(x[:, None]))
    assert again.shapes[0].input_range == model.shapes[0].input_range
    assert model_to_dict(model_from_dict(model_to_dict(model))) == model_to_dict(model)


def test_corrupted_model_file_is_rejected(sine_fit):
    import base64

    doc = model_to_dict(sine_fit[0])
    raw = bytearray(base64.b64decode(doc["shapes"][0]["params_f8le"]))
    raw[5] ^= 0xFF
    doc["shapes"][0]["params_f8le"] = base64.b64encode(bytes(raw)).decode()
    with pytest.raises(SchemaError, match="checksum"):
        model_from_dict(doc)
    with pytest.raises(SchemaError):
        model_from_dict({"format": "something else"})


def test_unknown_shape():
    model = compile_tree(share("x1 * x2", ["x1", "x2"]))
    with pytest.raises(UnknownShape):
        model.eval_shape(0, [1.0])


def test_backends_agree():
    from shares import _kernels_py

    compiled = kernels.load("cython") if kernels.BACKEND == "cython" else None
    if compiled is None:
        pytest.skip("compiled extension not built")
    rng = np.random.default_rng(1)
    params = rng.uniform(-0.5, 0.5, n_mlp_params(DEFAULT_WIDTHS))
    x = rng.normal(size=77)
    yp, ap = _kernels_py.mlp_forward(params, DEFAULT_WIDTHS, x)
    yc, ac = compiled.mlp_forward(params, DEFAULT_WIDTHS, x)
    np.testing.assert_allclose(yc, yp, rtol=1e-12, atol=1e-13)
    g = rng.normal(size=77)
    gxp, gpp = _kernels_py.mlp_backward(params, DEFAULT_WIDTHS, ap, g)
    gxc, gpc = compiled.mlp_backward(params, DEFAULT_WIDTHS, ac, g)
    np.testing.assert_allclose(gxc, gxp, rtol=1e-11, atol=1e-12)
    np.testing.assert_allclose(gpc, gpp, rtol=1e-11, atol=1e-12)
