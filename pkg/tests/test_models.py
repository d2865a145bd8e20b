import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fourierlab.models import (
    ConfigError, ModelConfig, build_model, decode, encode, kl_divergence, loss, model_grad_check,
)
from fourierlab.nn_core import ShapeError
from fourierlab.rng import Rng


def tiny(kind="vae", precursor="none", **kw):
    base = dict(kind=kind, precursor=precursor, input_channels=2, time_steps=4, latent_dim=2, fourier_m=3,
                encoder=[{"type": "conv", "channels": 3, "kernel": 3, "stride": 2}, {"type": "dense", "units": 5}])
    base.update(kw)
    return ModelConfig(**base)


def identity_ae(d=3):
    cfg = ModelConfig(kind="ae", input_channels=d, time_steps=1, latent_dim=d, encoder=[])
    model = build_model(cfg, seed=0)
    for layer in (model.encoder.layers[-1], model.decoder.layers[0]):
        layer.params["W"][...] = np.eye(d)
        layer.params["b"][...] = 0.0
    return model


def test_kl_closed_forms():
    assert kl_divergence(np.zeros(3), np.zeros(3)) == 0.0
    assert kl_divergence(np.array([1.0]), np.array([0.0])) == 0.5


def test_kl_nonnegative_sweep():
    rng = Rng(0)
    mu = rng.normal((10_000, 4)) * 3
    lv = rng.normal((10_000, 4)) * 3
    assert np.all(kl_divergence(mu, lv) >= 0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(-20, 20), st.floats(-20, 20)), min_size=1, max_size=8))
def test_kl_nonnegative_property(pairs):
    mu, lv = np.array(pairs).T
    assert kl_divergence(mu, lv) >= 0


def test_identity_encoder_decoder():
    model = identity_ae()
    x = np.array([[1.5], [-2.0], [0.25]])
    np.testing.assert_array_equal(encode(model, x), x[:, 0])
    z = np.array([0.5, 1.0, -3.0])
    np.testing.assert_array_equal(decode(model, z), z[:, None])
    assert loss(model, x).total == 0.0


def test_vae_eval_latent_is_mean():
    model = build_model(tiny(), seed=1)
    model.eval()
    x = Rng(0).normal((4, 2, 4))
    s = encode(model, x, rng=Rng(9))
    assert np.array_equal(s.z, s.mu)
    model.train()
    s2 = encode(model, x, rng=Rng(9))
    np.testing.assert_array_equal(s2.z, s2.mu + np.exp(s2.log_var / 2) * s2.eps)


def test_encode_deterministic():
    model = build_model(tiny("ae"), seed=1)
    x = Rng(0).normal((3, 2, 4))
    assert encode(model, x).tobytes() == encode(model, x).tobytes()


def test_paper_shape_decode():
    model = build_model(ModelConfig(kind="vae", precursor="rft"), seed=0)
    z = np.zeros(16)
    assert decode(model, z).shape == (10, 160)
    x = Rng(1).normal((2, 10, 160))
    assert model.reconstruct(x).shape == x.shape


MATRIX = [
    dict(kind=k, precursor=p, duplicate_input=dup, encoder=enc, time_steps=T)
    for k in ("ae", "vae") for p in ("none", "rft", "tft") for dup in (False, True)
    for enc, T in [
        ([], 4), ([{"type": "dense", "units": 4}], 5),
        ([{"type": "conv", "channels": 3, "kernel": 3, "stride": 2}], 7),
        ([{"type": "conv", "channels": 3, "kernel": 5, "stride": 2}, {"type": "conv", "channels": 4, "kernel": 3, "stride": 2}], 9),
    ]
]


@pytest.mark.parametrize("spec", MATRIX)
def test_shape_closure(spec):
    cfg = ModelConfig(input_channels=2, latent_dim=3, fourier_m=3, **spec)
    model = build_model(cfg, seed=0)
    x = Rng(0).normal((2, 2, cfg.time_steps))
    assert model.reconstruct(x).shape == x.shape
    head = model.encoder.forward(x).shape[1]
    assert head == (6 if cfg.kind == "vae" else 3)


def test_vae_standard_posterior_and_exact_reconstruction():
    cfg = ModelConfig(kind="vae", input_channels=3, time_steps=1, latent_dim=3, encoder=[])
    model = build_model(cfg, seed=0)
    head, first = model.encoder.layers[-1], model.decoder.layers[0]
    head.params["W"][...] = 0.0
    head.params["b"][...] = 0.0
    first.params["W"][...] = np.eye(3)
    first.params["b"][...] = 0.0
    val = model.loss(np.zeros((2, 3, 1)), eps=np.zeros((2, 3)))
    assert tuple(val) == (0.0, 0.0, 0.0)


def test_beta_zero_total_is_recon():
    model = build_model(tiny("vae", beta_kl=0.0), seed=2)
    val = model.loss(Rng(0).normal((3, 2, 4)), eps=Rng(1).normal((3, 2)))
    assert val.total == val.recon
    assert val.kl > 0


def test_vae_eps0_beta0_equals_ae_with_same_weights():
    vae = build_model(tiny("vae", beta_kl=0.0), seed=3)
    ae = build_model(tiny("ae"), seed=3)
    # copy all shared weights; the AE head keeps only the mu rows
    for (key, _, name, arr) in ae.named_params():
        src = dict((k, a) for k, _, _, a in vae.named_params())[key]
        arr[...] = src[: arr.shape[0]] if src.shape != arr.shape else src
    x = Rng(0).normal((3, 2, 4))
    a = vae.loss(x, eps=np.zeros((3, 2))).total
    b = ae.loss(x).total
    assert abs(a - b) < 1e-12


@pytest.mark.parametrize("kind,precursor", [("vae", "tft"), ("vae", "none"), ("ae", "rft"), ("vae", "rft")])
def test_end_to_end_grad_check(kind, precursor):
    model = build_model(tiny(kind, precursor, beta_kl=0.7), seed=4)
    x = Rng(0).normal((3, 2, 4))
    eps = Rng(1).normal((3, 2)) if kind == "vae" else None
    assert model_grad_check(model, x, eps=eps) < 1e-4


def test_mlp_grad_check_and_shape():
    cfg = ModelConfig(kind="mlp", precursor="tft", input_channels=1, hidden=[6, 5], fourier_m=4)
    model = build_model(cfg, seed=0)
    x = np.linspace(-1, 1, 7)[:, None]
    y = np.sin(3 * x)
    assert model.predict(x).shape == (7, 1)
    assert model_grad_check(model, x, y) < 1e-4


def test_duplicate_input_matches_param_count():
    rft = build_model(ModelConfig(kind="ae", precursor="rft"), seed=0)
    dup = build_model(ModelConfig(kind="ae", precursor="none", duplicate_input=True), seed=0)
    plain = build_model(ModelConfig(kind="ae", precursor="none"), seed=0)
    assert dup.num_params(trainable_only=True) == rft.num_params(trainable_only=True)
    assert plain.num_params() < dup.num_params()


def test_frozen_B_not_trainable():
    rft = build_model(ModelConfig(kind="ae", precursor="rft"), seed=0)
    tft = build_model(ModelConfig(kind="ae", precursor="tft"), seed=0)
    assert tft.num_params(trainable_only=True) - rft.num_params(trainable_only=True) == 32 * 10


def test_config_errors_name_key():
    with pytest.raises(ConfigError) as e:
        ModelConfig.from_dict({"kind": "ae"}, required=("latent_dim",))
    assert e.value.key == "latent_dim"
    with pytest.raises(ConfigError) as e:
        ModelConfig(kind="gan")
    assert e.value.key == "kind"
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({"latentdim": 3})


def test_shape_mismatch():
    model = build_model(tiny("ae"), seed=0)
    with pytest.raises(ShapeError):
        model.encode(np.zeros((2, 3, 4)))
    with pytest.raises(ShapeError):
        model.decode(np.zeros(5))


def test_state_dict_round_trip():
    a = build_model(tiny("vae", "tft"), seed=0)
    b = build_model(tiny("vae", "tft"), seed=99)
    b.load_state_dict(a.state_dict())
    x = Rng(0).normal((2, 2, 4))
    assert a.reconstruct(x).tobytes() == b.reconstruct(x).tobytes()
