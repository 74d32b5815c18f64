import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from liftedstruct.config import RunConfig
from liftedstruct.core import ValidationError
from liftedstruct.data import make_blobs
from liftedstruct.model import (
    MlpSpec,
    NonFiniteGradient,
    OptimizerState,
    backward,
    forward,
    init_params,
    last_layer_multipliers,
    load_checkpoint,
    param_names,
    save_checkpoint,
    sgd_step,
)
from liftedstruct.train import train

from oracles import central_difference


def _scalar_forward(spec, params, x):
    """Plain loops over units, used as the reference forward pass."""
    h = list(map(float, x))
    for layer in range(spec.n_layers):
        W, b = params[f"W{layer}"], params[f"b{layer}"]
        z = [sum(h[i] * W[i, j] for i in range(len(h))) + b[j] for j in range(W.shape[1])]
        if layer < spec.n_layers - 1:
            act = spec.activations[layer]
            z = [max(v, 0.0) if act == "relu" else math.tanh(v) if act == "tanh" else v for v in z]
        h = z
    if spec.l2_normalize:
        norm = math.sqrt(sum(v * v for v in h))
        h = [v / norm for v in h]
    return np.array(h)


def test_zero_network_gives_zero_embeddings():
    spec = MlpSpec((3, 4, 2))
    params = {k: np.zeros_like(v) for k, v in init_params(spec).items()}
    np.testing.assert_array_equal(forward(spec, params, np.ones((5, 3))), np.zeros((5, 2)))


def test_identity_layer_passes_input_through():
    spec = MlpSpec((3, 3))
    params = {"W0": np.eye(3), "b0": np.zeros(3)}
    X = np.random.default_rng(0).normal(size=(4, 3))
    np.testing.assert_array_equal(forward(spec, params, X), X)
    out, cache = forward(spec, params, X, return_cache=True)
    G = np.random.default_rng(1).normal(size=(4, 3))
    grads, gin = backward(spec, params, cache, G)
    np.testing.assert_array_equal(gin, G)
    np.testing.assert_allclose(grads["W0"], X.T @ G)


def test_zero_upstream_gives_zero_gradients():
    spec = MlpSpec((3, 5, 2), ("tanh",))
    params = init_params(spec)
    _, cache = forward(spec, params, np.ones((2, 3)), return_cache=True)
    grads, gin = backward(spec, params, cache, np.zeros((2, 2)))
    assert all(np.all(g == 0) for g in grads.values()) and np.all(gin == 0)


@pytest.mark.parametrize("acts, norm", [(("relu",), False), (("tanh", "identity"), False), (("tanh",), True)])
def test_forward_matches_scalar_loops(acts, norm):
    widths = (4,) + (6,) * len(acts) + (3,)
    spec = MlpSpec(widths, acts, init_seed=5, l2_normalize=norm)
    params = init_params(spec)
    X = np.random.default_rng(2).normal(size=(6, 4))
    out = forward(spec, params, X)
    for r in range(6):
        np.testing.assert_allclose(out[r], _scalar_forward(spec, params, X[r]), rtol=0, atol=1e-12)


@pytest.mark.parametrize("acts, norm", [(("tanh",), False), (("tanh", "tanh"), True), (("identity",), False)])
def test_backward_matches_finite_differences(acts, norm):
    widths = (3,) + (5,) * len(acts) + (4,)
    spec = MlpSpec(widths, acts, init_seed=1, l2_normalize=norm)
    params = init_params(spec)
    rng = np.random.default_rng(0)
    X = rng.normal(size=(5, 3))
    G = rng.normal(size=(5, 4))
    _, cache = forward(spec, params, X, return_cache=True)
    grads, gin = backward(spec, params, cache, G)
    for name in param_names(spec):
        def f(p, name=name):
            return float(np.sum(forward(spec, {**params, name: p}, X) * G))
        np.testing.assert_allclose(grads[name], central_difference(f, params[name]), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(gin, central_difference(lambda x: float(np.sum(forward(spec, params, x) * G)), X),
                               rtol=1e-6, atol=1e-8)


def test_init_is_seeded_and_bounded():
    spec = MlpSpec((16, 32, 8), init_seed=3)
    a, b = init_params(spec), init_params(spec)
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert np.abs(a["W0"]).max() <= 1 / 4 and np.abs(a["W1"]).max() <= 1 / math.sqrt(32)
    assert a["W0"].shape == (16, 32) and a["b1"].shape == (8,)
    other = init_params(MlpSpec((16, 32, 8), init_seed=4))
    assert not np.array_equal(a["W0"], other["W0"])


def test_spec_validation():
    with pytest.raises(ValidationError):
        MlpSpec((3,))
    with pytest.raises(ValidationError):
        MlpSpec((3, 4, 2), ("sigmoid",))
    with pytest.raises(ValidationError):
        MlpSpec((3, 4, 2), ("relu", "relu"))
    with pytest.raises(ValidationError):
        forward(MlpSpec((3, 2)), init_params(MlpSpec((3, 2))), np.zeros((2, 4)))


# ---------------------------------------------------------------------------
# optimizer


def test_single_step_without_momentum():
    state = OptimizerState(learning_rate=0.1, momentum=0.0)
    p, state = sgd_step({"w": np.zeros(1)}, {"w": np.ones(1)}, state)
    assert p["w"][0] == pytest.approx(-0.1)


def test_two_steps_with_momentum():
    state = OptimizerState(learning_rate=0.1, momentum=0.9)
    p = {"w": np.zeros(1)}
    p, state = sgd_step(p, {"w": np.ones(1)}, state)
    assert p["w"][0] == pytest.approx(-0.1)
    p, state = sgd_step(p, {"w": np.ones(1)}, state)
    assert p["w"][0] == pytest.approx(-0.29, abs=1e-12)
    assert state.iteration == 2


def test_lr_multiplier_scales_the_step():
    spec = MlpSpec((2, 3, 2))
    mult = last_layer_multipliers(spec, 10)
    assert mult == {"W1": 10, "b1": 10}
    state = OptimizerState(learning_rate=0.01, momentum=0.0, lr_multipliers=mult)
    params = {k: np.zeros_like(v) for k, v in init_params(spec).items()}
    grads = {k: np.ones_like(v) for k, v in params.items()}
    p, _ = sgd_step(params, grads, state)
    assert p["W0"][0, 0] == pytest.approx(-0.01) and p["W1"][0, 0] == pytest.approx(-0.1)


@pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
def test_non_finite_gradient_aborts_untouched(bad):
    params = {"a": np.ones(2), "b": np.ones(2)}
    state = OptimizerState()
    with pytest.raises(NonFiniteGradient, match="'b'"):
        sgd_step(params, {"a": np.ones(2), "b": np.array([0.0, bad])}, state)
    assert state.iteration == 0 and not state.velocity
    assert np.all(params["a"] == 1)


def test_optimizer_validation():
    with pytest.raises(ValidationError):
        OptimizerState(learning_rate=0)
    with pytest.raises(ValidationError):
        OptimizerState(momentum=1.0)
    with pytest.raises(ValidationError):
        sgd_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, OptimizerState())


# ---------------------------------------------------------------------------
# checkpoints


@settings(max_examples=20, deadline=None)
@given(st.lists(st.integers(1, 6), min_size=2, max_size=4), st.integers(0, 100), st.booleans())
def test_checkpoint_roundtrip(tmp_path_factory, widths, seed, norm):
    spec = MlpSpec(tuple(widths), ("tanh",) * (len(widths) - 2), init_seed=seed, l2_normalize=norm)
    params = init_params(spec)
    path = tmp_path_factory.mktemp("ck") / "m.bin"
    save_checkpoint(path, spec, params)
    spec2, params2 = load_checkpoint(path)
    assert spec2 == spec
    assert all(np.array_equal(params[k], params2[k]) for k in params)
    first = path.read_bytes()
    save_checkpoint(path, spec2, params2)
    assert path.read_bytes() == first


def test_checkpoint_rejects_corruption(tmp_path):
    spec = MlpSpec((2, 2))
    path = tmp_path / "m.bin"
    save_checkpoint(path, spec, init_params(spec))
    good = path.read_bytes()
    path.write_bytes(b"XXXXXXXX" + good[8:])
    with pytest.raises(ValidationError, match="magic"):
        load_checkpoint(path)
    path.write_bytes(good + b"\x00")
    with pytest.raises(ValidationError, match="trailing"):
        load_checkpoint(path)


# ---------------------------------------------------------------------------
# training


def _blobs_two_class():
    ds = make_blobs(2, 20, 2, center_scale=1.0, noise_sigma=0.05, seed=0)
    ds.features.flags.writeable = False
    return ds


def test_lifted_smooth_converges_on_separable_blobs():
    ds = _blobs_two_class()
    cfg = RunConfig(loss="lifted-smooth", batch_size=16, hidden_widths=(8,), embedding_dim=2, learning_rate=0.05,
                    max_iterations=500)
    result = train(cfg, ds)
    assert result.losses[-1] < 1e-3


def test_training_is_deterministic():
    ds = make_blobs(6, 8, 3, seed=1)
    cfg = RunConfig(loss="lifted-smooth", batch_size=12, hidden_widths=(8,), embedding_dim=4, max_iterations=30)
    a, b = train(cfg, ds), train(cfg, ds)
    assert a.log_csv() == b.log_csv()
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert a.log_csv().splitlines()[0] == "iter,loss"
    assert a.log_csv(with_wall_time=True).splitlines()[0] == "iter,loss,wall_ms"
