"""Forward-pass semantics: CNN equivalence, shapes, resampling, checkpoints."""

import numpy as np
import pytest
import torch

import cnn_oracle
from onnkit import (
    Architecture,
    OnnModel,
    OperatorConstants,
    make_sublibrary,
    resample_adjoint,
    resample_apply,
)


def all_cnn_model(arch=None, seed=0, weight_range=0.1):
    model = OnnModel(arch or Architecture())
    model.init_weights(np.random.default_rng(seed), weight_range)
    return model


def torch_params(model):
    ws = [torch.tensor(k, dtype=torch.float64) for k in model.kernels]
    bs = [torch.tensor(b, dtype=torch.float64) for b in model.biases]
    kinds = [model.arch.resample_kind(l) for l in range(1, len(model.kernels) + 1)]
    return ws, bs, kinds


@pytest.mark.parametrize("seed", range(5))
def test_cnn_forward_matches_torch(seed):
    model = all_cnn_model(seed=seed)
    x = np.random.default_rng(seed + 1000).uniform(-1, 1, (16, 16))
    ws, bs, kinds = torch_params(model)
    ref = cnn_oracle.forward(x, ws, bs, kinds).numpy()
    out = model.predict(x)
    assert np.max(np.abs(out - ref)) < 1e-9


def test_forward_trace_shapes():
    model = all_cnn_model()
    x = np.zeros((20, 20))
    trace = model.forward(x)
    # pre-activation maps stay at the layer's working resolution
    assert trace.x[0].shape == (12, 20, 20)
    assert trace.x[1].shape == (12, 10, 10)
    assert trace.x[2].shape == (1, 20, 20)
    # post-resample outputs feed the next layer
    assert trace.y[0].shape == (12, 10, 10)
    assert trace.y[1].shape == (12, 20, 20)
    assert trace.output.shape == (20, 20)


def test_odd_input_sizes_are_rejected_by_down2():
    model = all_cnn_model()
    with pytest.raises(ValueError):
        model.predict(np.zeros((15, 15)))


def test_bias_shifts_constant_input():
    arch = Architecture(hidden=(2,), resample=("none",))
    lib = make_sublibrary([0], [0, 1], range(7))
    model = OnnModel(arch, sublibrary=lib)
    for k in model.kernels:
        k[:] = 0.0
    model.biases[0][:] = [0.25, -0.25]
    model.biases[1][:] = 0.0
    out = model.predict(np.zeros((6, 6)))
    assert np.allclose(out, 0.0)  # tanh(0 * anything + 0)
    model.kernels[1][0, 0, 1, 1] = 1.0
    out = model.predict(np.zeros((6, 6)))
    assert np.allclose(out, np.tanh(np.tanh(0.25)))


def test_resample_down2_is_block_mean():
    a = np.arange(16, dtype=float).reshape(4, 4)
    d = resample_apply(a, "down2")
    assert d.shape == (2, 2)
    assert d[0, 0] == pytest.approx(a[:2, :2].mean())
    assert d[1, 1] == pytest.approx(a[2:, 2:].mean())


def test_resample_up2_is_nearest():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    u = resample_apply(a, "up2")
    assert u.shape == (4, 4)
    assert np.array_equal(u[:2, :2], np.full((2, 2), 1.0))
    assert np.array_equal(u[2:, 2:], np.full((2, 2), 4.0))


def test_resample_adjoints_transpose_the_forward():
    # <R x, y> == <x, R^T y> for random x, y
    rng = np.random.default_rng(3)
    for kind, in_shape in (("down2", (6, 6)), ("up2", (3, 3))):
        x = rng.standard_normal(in_shape)
        fx = resample_apply(x, kind)
        y = rng.standard_normal(fx.shape)
        lhs = float((fx * y).sum())
        rhs = float((x * resample_adjoint(y, kind)).sum())
        assert lhs == pytest.approx(rhs, rel=1e-12)


def test_mixed_operator_forward_is_finite_and_bounded():
    rng = np.random.default_rng(8)
    model = OnnModel(Architecture())
    model.init_weights(rng)
    model.assign_operators(1, [rng.integers(0, 28) for _ in range(12)])
    model.assign_operators(2, [rng.integers(0, 28) for _ in range(12)])
    out = model.predict(rng.uniform(-1, 1, (24, 24)))
    assert np.all(np.isfinite(out))
    assert np.max(np.abs(out)) <= 1.0  # output layer ends in tanh


def test_checkpoint_round_trip(tmp_path):
    model = all_cnn_model(seed=11)
    model.assign_operators(1, [6] * 12)
    model.assign_operators(2, [26] * 12)
    path = tmp_path / "m.json"
    model.save(path)
    clone = OnnModel.load(path)
    assert clone.arch == model.arch
    assert clone.constants == model.constants
    for a, b in zip(clone.kernels, model.kernels):
        assert np.array_equal(a, b)
    for a, b in zip(clone.assignments, model.assignments):
        assert np.array_equal(a, b)
    x = np.random.default_rng(0).uniform(-1, 1, (12, 12))
    assert np.array_equal(clone.predict(x), model.predict(x))


def test_checkpoint_schema_is_exact():
    model = all_cnn_model()
    ck = model.to_checkpoint()
    assert sorted(ck) == ["architecture", "assignments", "biases",
                          "constants", "kernels", "output_set", "version"]


def test_output_layer_ignores_hidden_assignment_calls():
    model = all_cnn_model()
    with pytest.raises(ValueError):
        model.assign_operators(3, [0])


def test_constants_flow_into_forward():
    # a tiny chirp scale flattens the chirp response to near zero
    arch = Architecture(hidden=(2,), resample=("none",))
    flat = OnnModel(arch, constants=OperatorConstants(k_chirp=1e-9))
    flat.init_weights(np.random.default_rng(2))
    flat.assign_operators(1, [6, 6])
    x = np.random.default_rng(4).uniform(-1, 1, (6, 6))
    base = OnnModel(arch)
    base.init_weights(np.random.default_rng(2))
    base.assign_operators(1, [6, 6])
    flat_hidden = flat.forward(x).x[0]
    base_hidden = base.forward(x).x[0]
    # same weights, but the flat model's layer-1 response collapses to bias
    assert np.max(np.abs(flat_hidden - flat.biases[0][:, None, None])) < 1e-6
    assert np.max(np.abs(base_hidden - flat_hidden)) > 1e-3
