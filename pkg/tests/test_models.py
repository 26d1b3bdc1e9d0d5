import numpy as np
import pytest

from volsynth.autodiff import Tape, Tensor, backward, reduce, save_checkpoint
from volsynth.errors import ConfigurationError, IncompatibleCheckpointError, ShapeError
from volsynth.models import (
    CriticConfig,
    HaarPyramid,
    PerceptualConfig,
    PerceptualEncoder,
    PointwiseGenerator,
    VNetConfig,
    WatConfig,
    build_critic,
    build_model,
    build_vnet,
    build_watnet,
    count_params,
    extract_features,
    forward_critic,
    forward_generator,
    haar_dwt2d,
    haar_subbands,
    model_from_weights,
)
from volsynth.models.base import Model

SMALL = dict(levels=3, base_channels=4, kernel=(3, 3, 3))


def vnet_param_formula(levels, base, k, convs, cin=1, cout=1):
    """Closed-form learnable scalar count of the residual V-Net layout."""
    def conv(ci, co, kk):
        return ci * co * kk**3 + co

    ch = [base * 2**i for i in range(levels)]
    n = 0
    for lev in range(levels):
        c = ch[lev]
        if lev == 0:
            n += conv(cin, c, k) + c + (convs[0] - 1) * (conv(c, c, k) + c)
        else:
            n += conv(ch[lev - 1], c, 2) + c + convs[lev] * (conv(c, c, k) + c)
        n += c  # residual PReLU
    width = ch[-1]
    for lev in reversed(range(levels - 1)):
        c = ch[lev]
        n += conv(width, c, k) + c + convs[lev] * (conv(2 * c, 2 * c, k) + 2 * c) + 2 * c
        width = 2 * c
    return n + conv(width, cout, 1)


def test_vnet_shape_preserved_and_bottleneck():
    assert VNetConfig(levels=5, base_channels=16).bottleneck_channels == 256
    m = build_vnet(VNetConfig(**SMALL), seed=1)
    for n in (16, 32):
        x = np.random.default_rng(0).random((2, 1, n, n, n)).astype(np.float32)
        assert forward_generator(m, x).shape == (2, 1, n, n, n)


def test_vnet_indivisible_and_degenerate_inputs_rejected():
    with pytest.raises(ConfigurationError):
        build_vnet(VNetConfig(**SMALL), input_shape=(30, 32, 32))
    m = build_vnet(VNetConfig(levels=2, base_channels=2, kernel=(3, 3, 3)))
    with pytest.raises(ShapeError):
        m(np.zeros((1, 1, 2, 4, 4), np.float32))  # 2-voxel axis
    with pytest.raises(ConfigurationError):
        VNetConfig(levels=1)
    with pytest.raises(ConfigurationError):
        VNetConfig(kernel=(4, 4, 4))


def test_builds_are_pure_in_config_and_seed():
    a, b, c = (build_vnet(VNetConfig(**SMALL), seed=s) for s in (3, 3, 4))
    assert a.weights().identical(b.weights())
    assert not a.weights().identical(c.weights())


def test_zero_final_layer_maps_zero_to_zero():
    m = build_vnet(VNetConfig(**SMALL))
    m["out.w"].data[:] = 0
    m["out.b"].data[:] = 0
    out = m(np.zeros((1, 1, 16, 16, 16), np.float32))
    assert np.all(out.data == 0)


def test_residual_output_starts_as_identity(rng):
    m = build_vnet(VNetConfig(residual_output=True, **SMALL))
    x = rng.random((1, 1, 16, 16, 16)).astype(np.float32)
    assert np.array_equal(m(x).data, x)


def test_count_params_formula():
    pw = PointwiseGenerator()
    assert count_params(pw) == 2
    m = Model()
    m._conv_params("c", 1, 1, (3, 3, 3))
    assert count_params(m) == 28
    for base in (4, 8):
        cfg = VNetConfig(levels=3, base_channels=base, kernel=(3, 3, 3))
        assert count_params(build_vnet(cfg)) == vnet_param_formula(3, base, 3, cfg.convs_per_level)
    cfg = VNetConfig()
    assert count_params(build_vnet(cfg)) == vnet_param_formula(5, 16, 5, cfg.convs_per_level)
    assert count_params(PerceptualEncoder()) == 0


def test_doubling_base_quadruples_inner_conv_weights():
    small = build_vnet(VNetConfig(**SMALL))
    big = build_vnet(VNetConfig(levels=3, base_channels=8, kernel=(3, 3, 3)))
    for name, p in small.named_parameters():
        if not name.endswith(".w"):
            continue
        q = big[name]
        factor = q.data.size / p.data.size
        if name in ("enc0.conv0.w", "out.w"):
            assert factor == 2  # one side is the fixed single channel
        else:
            assert factor == 4


def test_critic_one_unbounded_scalar_per_item(rng):
    cfg = CriticConfig(VNetConfig(**SMALL))
    critic = build_critic(cfg, seed=2)
    x = rng.random((4, 1, 16, 16, 16)).astype(np.float32)
    out = forward_critic(critic, x)
    assert out.shape == (4, 1)
    critic["head.b"].data[:] = 0
    base = forward_critic(critic, x).data
    critic["head.w"].data = critic["head.w"].data * 10
    assert np.allclose(forward_critic(critic, x).data, 10 * base, rtol=1e-5, atol=1e-6)
    assert cfg.head_width == 16


def test_perceptual_encoder_shapes_frozen_and_deterministic(rng):
    enc = PerceptualEncoder(PerceptualConfig(widths=(4, 4, 4)))
    x = rng.random((2, 1, 16, 16, 16)).astype(np.float32)
    f1, f2 = extract_features(enc, x), extract_features(enc, x)
    assert f1.shape == (2, 4, 2, 2, 2)
    assert np.array_equal(f1.data, f2.data)
    assert all(not p.requires_grad for p in enc.parameters())
    assert enc.source == "seeded-random"
    with pytest.raises(ShapeError):
        enc(np.zeros((1, 1, 12, 16, 16), np.float32))


def test_perceptual_gradient_reaches_patch_only(rng):
    enc = PerceptualEncoder(PerceptualConfig(widths=(4, 4, 4)))
    x = Tensor(rng.random((1, 1, 8, 8, 8)).astype(np.float32), requires_grad=True)
    with Tape() as tape:
        loss = reduce(extract_features(enc, x), "sum")
    g = backward(tape, loss)
    assert set(g) == {x}
    assert np.any(g[x] != 0)


def test_perceptual_from_file(tmp_path):
    cfg = PerceptualConfig(widths=(2, 3, 4), feature_layer=2)
    src = PerceptualEncoder(cfg, seed=9)
    save_checkpoint(src.weights(), tmp_path / "enc.ckpt")
    enc = PerceptualEncoder.from_file(tmp_path / "enc.ckpt")
    assert enc.source == "loaded-from-file" and enc.cfg == cfg
    assert enc.weights().identical(src.weights())
    assert count_params(enc) == 0
    save_checkpoint(build_vnet(VNetConfig(**SMALL)).weights(), tmp_path / "bad.ckpt")
    with pytest.raises(IncompatibleCheckpointError):
        PerceptualEncoder.from_file(tmp_path / "bad.ckpt")


def test_watnet_shapes_and_disabled_injection(rng):
    x = rng.random((2, 3, 32, 32)).astype(np.float32)
    for inject in (True, False):
        m = build_watnet(WatConfig(depth=3, widths=[4, 4, 4], inject_wavelets=inject))
        assert m(x).shape == (2, 1, 32, 32)
    with pytest.raises(ConfigurationError):
        build_watnet(WatConfig(depth=3), input_shape=(30, 32))
    with pytest.raises(ShapeError):
        build_watnet(WatConfig(depth=2, widths=[2, 2]))(np.zeros((1, 2, 8, 8), np.float32))
    with pytest.raises(ConfigurationError):
        WatConfig(in_slices=5)


def test_watnet_default_is_identity_on_centre_slice(rng):
    m = build_watnet(WatConfig(depth=2, widths=[4, 4]))
    x = rng.random((1, 3, 16, 16)).astype(np.float32)
    assert np.array_equal(m(x).data[:, 0], x[:, 1])


def test_haar_pyramid_shapes_and_errors(rng):
    pyr = haar_dwt2d(rng.random((32, 16)), levels=3)
    assert isinstance(pyr, HaarPyramid) and pyr.levels == 3
    assert pyr.approx.shape == (4, 2)
    assert [d[0].shape for d in pyr.details] == [(16, 8), (8, 4), (4, 2)]
    with pytest.raises(Exception):
        haar_dwt2d(np.zeros((12, 12)), levels=3)


def test_haar_conv_matches_numpy_transform(rng):
    img = rng.random((8, 8))
    sub = haar_subbands(Tensor(img[None, None])).data[0]
    pyr = haar_dwt2d(img, 1)
    assert np.allclose(sub[0], pyr.approx, atol=1e-12)
    for i in range(3):
        assert np.allclose(sub[i + 1], pyr.details[0][i], atol=1e-12)


def test_build_model_roundtrip_and_unknown_tag():
    for m in (
        build_vnet(VNetConfig(**SMALL), seed=5),
        build_watnet(WatConfig(depth=2, widths=[2, 2]), seed=5),
        build_critic(CriticConfig(VNetConfig(**SMALL)), seed=5),
        PointwiseGenerator.identity(),
    ):
        w = m.weights()
        assert model_from_weights(w).weights().identical(w)
    with pytest.raises(IncompatibleCheckpointError):
        build_model("unet", {})


def test_load_weights_rejects_mismatch():
    a = build_vnet(VNetConfig(**SMALL))
    b = build_vnet(VNetConfig(levels=3, base_channels=8, kernel=(3, 3, 3)))
    with pytest.raises(IncompatibleCheckpointError):
        a.load_weights(b.weights())
    with pytest.raises(IncompatibleCheckpointError):
        a.load_weights(PointwiseGenerator().weights())
