import numpy as np
import pytest

from solarsight import ops
from solarsight.classifier import (
    ClassifierConfig, TapLevel, bidiaf_forward, build_classifier,
    classifier_forward, env_encode, env_encode_batch, fuse_env, parameter_count,
    subsample_to,
)
from solarsight.errors import ConfigurationError, DataError
from solarsight.rng import SplitMix64
from solarsight.tensor import Tensor, backward

CFG = ClassifierConfig(n_classes=4, widths=(8, 16, 32, 64), dropout=0.2)


def make_image(rng, n=2, size=64):
    return Tensor(rng.uniform(n * 3 * size * size).reshape(n, 3, size, size).astype(np.float32))


# ---------------------------------------------------------------------------
# fusion block (Eq. 1 / Eq. 2 behavior)

def fusion_params(rng, c, c_prev=None, in_ch=3):
    p = {}
    p["f.img.w"] = Tensor(rng.normal(c * in_ch * 25).reshape(c, in_ch, 5, 5).astype(np.float32) * 0.1,
                          requires_grad=True)
    p["f.img.b"] = Tensor(np.zeros(c, dtype=np.float32), requires_grad=True)
    members = 2
    if c_prev is not None:
        p["f.prev.w"] = Tensor(rng.normal(c * c_prev).reshape(c, c_prev, 1, 1).astype(np.float32) * 0.1,
                               requires_grad=True)
        p["f.prev.b"] = Tensor(np.zeros(c, dtype=np.float32), requires_grad=True)
        members = 3
    p["f.merge.w"] = Tensor(rng.normal(c * members * c).reshape(c, members * c, 1, 1).astype(np.float32) * 0.1,
                            requires_grad=True)
    p["f.merge.b"] = Tensor(np.zeros(c, dtype=np.float32), requires_grad=True)
    return p


def test_zero_merge_weights_reduce_to_identity():
    rng = SplitMix64(1)
    x_r = Tensor(rng.normal(1 * 8 * 16 * 16).reshape(1, 8, 16, 16).astype(np.float32))
    image = make_image(rng, 1, 64)
    p = fusion_params(rng, 8)
    p["f.merge.w"] = Tensor(np.zeros_like(p["f.merge.w"].data), requires_grad=True)
    trunk, aux, _ = bidiaf_forward(x_r, None, image, p, "f")
    assert np.all(aux.data == 0)
    assert np.array_equal(trunk.data, x_r.data)


def test_fusion_output_shapes_match_trunk():
    rng = SplitMix64(2)
    x_r = Tensor(rng.normal(1 * 8 * 16 * 16).reshape(1, 8, 16, 16).astype(np.float32))
    x_a_prev = Tensor(rng.normal(1 * 4 * 32 * 32).reshape(1, 4, 32, 32).astype(np.float32))
    image = make_image(rng, 1, 64)
    p = fusion_params(rng, 8, c_prev=4)
    trunk, aux, sub = bidiaf_forward(x_r, x_a_prev, image, p, "f")
    assert trunk.shape == (1, 8, 16, 16)
    assert aux.shape == (1, 8, 16, 16)
    assert sub.shape == (1, 3, 16, 16)


def test_fusion_matches_straight_line_oracle():
    # explicit pool -> conv -> concat -> conv -> add sequence, re-assembled
    # here out of the raw ops
    rng = SplitMix64(3)
    x_r = Tensor(rng.normal(2 * 8 * 8 * 8).reshape(2, 8, 8, 8).astype(np.float32))
    x_a_prev = Tensor(rng.normal(2 * 6 * 16 * 16).reshape(2, 6, 16, 16).astype(np.float32))
    image = make_image(rng, 2, 32)
    p = fusion_params(rng, 8, c_prev=6)
    trunk, aux, _ = bidiaf_forward(x_r, x_a_prev, image, p, "f")

    sub = ops.avg_pool(ops.avg_pool(image, 3, 2), 3, 2)
    img_feat = ops.conv2d(sub, p["f.img.w"], p["f.img.b"], 1, 2)
    prev = ops.conv2d(ops.avg_pool(x_a_prev, 3, 2), p["f.prev.w"], p["f.prev.b"], 1, 0)
    cat = ops.concat_channels([x_r, img_feat, prev])
    aux_ref = ops.conv2d(cat, p["f.merge.w"], p["f.merge.b"], 1, 0)
    trunk_ref = ops.add(x_r, aux_ref)
    assert np.allclose(aux.data, aux_ref.data, atol=1e-5)
    assert np.allclose(trunk.data, trunk_ref.data, atol=1e-5)


def test_additivity_trunk_is_exactly_residual_plus_aux():
    rng = SplitMix64(4)
    x_r = Tensor(rng.normal(1 * 8 * 8 * 8).reshape(1, 8, 8, 8).astype(np.float32))
    image = make_image(rng, 1, 16)
    p = fusion_params(rng, 8)
    trunk, aux, _ = bidiaf_forward(x_r, None, image, p, "f")
    # the trunk continuation is literally the float add of the two streams
    assert np.array_equal(trunk.data, x_r.data + aux.data)
    assert np.allclose(trunk.data - aux.data, x_r.data, atol=1e-6)


def test_indivisible_image_ratio_rejected():
    rng = SplitMix64(5)
    x_r = Tensor(rng.normal(1 * 8 * 12 * 12).reshape(1, 8, 12, 12).astype(np.float32))
    image = make_image(rng, 1, 64)
    p = fusion_params(rng, 8)
    with pytest.raises(ConfigurationError):
        bidiaf_forward(x_r, None, image, p, "f")


# ---------------------------------------------------------------------------
# environment encoding / fusion

def test_env_encode_midnight():
    v = env_encode(0.0, 0.0)
    assert v[1] == pytest.approx(0.0, abs=1e-7)
    assert v[2] == pytest.approx(1.0)
    assert v[3] == 1.0


def test_env_encode_quarter_period():
    v = env_encode(500.0, 6.0)
    assert v[1] == pytest.approx(1.0)
    assert v[2] == pytest.approx(0.0, abs=1e-7)


def test_env_encode_irradiance_normalization():
    assert env_encode(680.5, 12.0)[0] == pytest.approx(0.5)


def test_env_encode_rejects_out_of_range():
    with pytest.raises(DataError):
        env_encode(-1.0, 12.0)
    with pytest.raises(DataError):
        env_encode(100.0, 24.0)


def test_fuse_env_zero_weights_sum_passthrough():
    rng = SplitMix64(6)
    feat = Tensor(rng.normal(2 * 8).reshape(2, 8).astype(np.float32))
    env = Tensor(env_encode_batch([500.0, 900.0], [9.0, 15.0]))
    p = {"env.fc.w": Tensor(np.zeros((4, 8), dtype=np.float32), requires_grad=True),
         "env.fc.b": Tensor(np.zeros(8, dtype=np.float32), requires_grad=True)}
    out = fuse_env(feat, env, "sum", p)
    assert np.array_equal(out.data, feat.data)


def test_fuse_env_concat_doubles_width():
    rng = SplitMix64(7)
    feat = Tensor(rng.normal(2 * 8).reshape(2, 8).astype(np.float32))
    env = Tensor(env_encode_batch([500.0, 900.0], [9.0, 15.0]))
    p = {"env.fc.w": Tensor(rng.normal(32).reshape(4, 8).astype(np.float32), requires_grad=True),
         "env.fc.b": Tensor(np.zeros(8, dtype=np.float32), requires_grad=True)}
    assert fuse_env(feat, env, "concat", p).shape == (2, 16)


def test_fuse_env_sum_matches_elementwise_oracle():
    rng = SplitMix64(8)
    feat = Tensor(rng.normal(2 * 8).reshape(2, 8).astype(np.float32))
    env = Tensor(env_encode_batch([500.0, 900.0], [9.0, 15.0]))
    w = rng.normal(32).reshape(4, 8).astype(np.float32)
    b = rng.normal(8).astype(np.float32)
    p = {"env.fc.w": Tensor(w, requires_grad=True), "env.fc.b": Tensor(b, requires_grad=True)}
    out = fuse_env(feat, env, "sum", p)
    assert np.allclose(out.data, feat.data + (env.data @ w + b), atol=1e-5)


# ---------------------------------------------------------------------------
# whole networks

def test_forward_shapes_and_tap_sizes():
    rng = SplitMix64(9)
    params = build_classifier(CFG, rng)
    img = make_image(rng, 2, 64)
    logits, taps = classifier_forward(params, img, None, CFG)
    assert logits.shape == (2, 4)
    assert [t.trunk.shape[2] for t in taps] == [64, 32, 16, 8]
    assert [t.aux.shape[2] for t in taps] == [64, 32, 16, 8]
    for t in taps:
        assert t.trunk.shape == t.aux.shape
        assert t.image.shape[2] == t.trunk.shape[2]


def test_full_with_zeroed_fusion_equals_plain():
    rng = SplitMix64(10)
    full_cfg = ClassifierConfig(n_classes=4, widths=(8, 16, 32, 64), variant="full")
    params = build_classifier(full_cfg, rng)
    for name, t in params.items():
        if ".fus.merge." in name:
            t.data = np.zeros_like(t.data)

    plain_cfg = ClassifierConfig(n_classes=4, widths=(8, 16, 32, 64), variant="plain")
    plain_params = {k: v for k, v in params.items() if ".fus." not in k}

    img = make_image(rng, 2, 64)
    logits_full, _ = classifier_forward(params, img, None, full_cfg)
    logits_plain, _ = classifier_forward(plain_params, img, None, plain_cfg)
    assert np.allclose(logits_full.data, logits_plain.data, atol=1e-6)


def test_detached_variant_isolates_fusion_from_logits():
    rng = SplitMix64(11)
    cfg = ClassifierConfig(n_classes=4, widths=(8, 16, 32, 64), variant="detached")
    params = build_classifier(cfg, rng)
    img = make_image(rng, 1, 64)
    logits_a, _ = classifier_forward(params, img, None, cfg)
    # perturb every fusion weight: logits must stay bitwise identical
    for name, t in params.items():
        if ".fus." in name:
            t.data = t.data + 0.37
    logits_b, _ = classifier_forward(params, img, None, cfg)
    assert logits_a.data.tobytes() == logits_b.data.tobytes()


def test_detached_variant_fusion_gradients_are_zero():
    rng = SplitMix64(12)
    cfg = ClassifierConfig(n_classes=4, widths=(8, 16, 32, 64), variant="detached")
    params = build_classifier(cfg, rng)
    img = make_image(rng, 1, 64)
    logits, _ = classifier_forward(params, img, None, cfg)
    backward(ops.tsum(logits))
    for name, t in params.items():
        if ".fus." in name and t.requires_grad:
            assert t.grad is None or not np.any(t.grad), name


def test_full_variant_every_parameter_gets_gradient():
    rng = SplitMix64(13)
    params = build_classifier(CFG, rng)
    img = make_image(rng, 1, 64)
    logits, _ = classifier_forward(params, img, None, CFG)
    backward(ops.tsum(logits))
    for name, t in params.items():
        if t.requires_grad:
            assert t.grad is not None and np.any(t.grad != 0), f"dead parameter {name}"


def test_eq2_additivity_inside_network():
    rng = SplitMix64(14)
    params = build_classifier(CFG, rng)
    img = make_image(rng, 1, 64)
    with_env = None
    _, taps = classifier_forward(params, img, with_env, CFG)
    # trunk tap minus aux tap must equal the residual-unit output exactly
    for level in taps:
        assert np.array_equal(level.trunk.data - level.aux.data,
                              level.trunk.data - level.aux.data)  # finite
    # direct check on the first level against a manual residual-unit run
    from solarsight.classifier import residual_unit, _batch_norm
    stem = ops.relu(_batch_norm(params, "stem.bn",
                                ops.conv2d(img, params["stem.w"], None, 1, 1),
                                False, 0.1))
    x_r = residual_unit(params, "au1.rcu", stem, False, False, 0.1)
    assert np.allclose(taps[0].trunk.data - taps[0].aux.data, x_r.data, atol=1e-6)


def test_env_variants_forward_and_differ_by_mode():
    rng = SplitMix64(15)
    img = make_image(rng, 2, 64)
    env = Tensor(env_encode_batch([700.0, 300.0], [10.0, 16.0]))
    for variant, width in (("env_sum", 4), ("env_concat", 4)):
        cfg = ClassifierConfig(n_classes=4, widths=(8, 16, 32, 64), variant=variant)
        params = build_classifier(cfg, SplitMix64(15))
        logits, _ = classifier_forward(params, img, env, cfg)
        assert logits.shape == (2, 4)
    cfg = ClassifierConfig(n_classes=4, widths=(8, 16, 32, 64), variant="env_sum")
    params = build_classifier(cfg, SplitMix64(15))
    with pytest.raises(ConfigurationError):
        classifier_forward(params, img, None, cfg)


def test_parameter_count_reported_and_scales():
    small = build_classifier(ClassifierConfig(widths=(8, 16, 32, 64)), SplitMix64(1))
    big = build_classifier(ClassifierConfig(widths=(16, 32, 64, 128)), SplitMix64(1))
    n_small, n_big = parameter_count(small), parameter_count(big)
    assert 0 < n_small < n_big
    # buffers do not count
    assert n_small == sum(t.data.size for t in small.values() if t.requires_grad)


def test_training_forward_is_seeded_and_reproducible():
    rng = SplitMix64(16)
    params = build_classifier(CFG, rng)
    img = make_image(rng, 2, 64)

    def run():
        # fresh BN buffers so training-mode stat updates cannot leak between runs
        ps = {k: Tensor(v.data.copy(), requires_grad=v.requires_grad) for k, v in params.items()}
        logits, _ = classifier_forward(ps, img, None, CFG, training=True, rng=SplitMix64(55))
        return logits.data.tobytes()

    assert run() == run()


def test_subsample_rejects_non_halvable():
    img = Tensor(np.zeros((1, 3, 48, 48), dtype=np.float32))
    with pytest.raises(ConfigurationError):
        subsample_to(img, 13, 13)
