import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from camtrap import gradcheck
from camtrap.autograd import Parameter, RunningStats, ShapeError, Tensor, backward, ops
from camtrap.nets import (
    FAMILIES,
    FEATURES,
    ArchitectureSpec,
    BranchSpec,
    ParamView,
    build_architecture,
    extract_features,
    inception_block,
    inception_param_shapes,
    ordered_param_groups,
    replace_classifier_head,
    residual_block,
)


def block_params(rng, in_ch, out_ch, projection, dtype=np.float64):
    shapes = {
        "conv1.weight": (out_ch, in_ch, 3, 3),
        "bn1.gamma": (out_ch,),
        "bn1.beta": (out_ch,),
        "conv2.weight": (out_ch, out_ch, 3, 3),
        "bn2.gamma": (out_ch,),
        "bn2.beta": (out_ch,),
    }
    if projection:
        shapes.update({"proj.weight": (out_ch, in_ch, 1, 1), "proj_bn.gamma": (out_ch,), "proj_bn.beta": (out_ch,)})
    params = {}
    for name, shape in shapes.items():
        arr = np.ones(shape) if name.endswith("gamma") else (
            np.zeros(shape) if name.endswith("beta") else rng.standard_normal(shape) * 0.3
        )
        params[name] = Parameter(name, Tensor(arr, dtype=dtype))
    stats = {n: RunningStats(out_ch, dtype) for n in ("bn1", "bn2", "proj_bn")}
    return params, stats


def test_zero_residual_branch_is_relu_identity(rng):
    params, stats = block_params(rng, 4, 4, projection=False)
    params["bn2.gamma"].tensor.data[:] = 0.0
    x = rng.standard_normal((2, 4, 5, 5))
    y = residual_block(Tensor(x), ParamView(params, stats))
    np.testing.assert_array_equal(y.data, np.maximum(x, 0))
    xpos = np.abs(x)
    np.testing.assert_array_equal(residual_block(Tensor(xpos), ParamView(params, stats)).data, xpos)


def test_zero_branch_gradient_is_relu_mask(rng):
    params, stats = block_params(rng, 3, 3, projection=False)
    for name in ("conv1.weight", "conv2.weight"):
        params[name].tensor.data[:] = 0.0
    x = Tensor(rng.standard_normal((1, 3, 4, 4)), requires_grad=True, dtype=np.float64)
    backward(ops.total(residual_block(x, ParamView(params, stats))))
    np.testing.assert_array_equal(x.grad, (x.data > 0).astype(np.float64))


def test_projection_shape(rng):
    params, stats = block_params(rng, 8, 16, projection=True, dtype=np.float32)
    y = residual_block(Tensor(rng.random((1, 8, 16, 16))), ParamView(params, stats), stride=2, projection=True)
    assert y.shape == (1, 16, 8, 8)


def test_shape_change_without_projection_fails(rng):
    params, stats = block_params(rng, 4, 4, projection=False)
    with pytest.raises(ShapeError):
        residual_block(Tensor(rng.random((1, 4, 6, 6))), ParamView(params, stats), stride=2)


def _inception(rng, in_ch, branches, dtype=np.float64):
    params = {
        n: Parameter(n, Tensor(rng.standard_normal(s) * 0.3, dtype=dtype))
        for n, s in inception_param_shapes(in_ch, branches)
    }
    return ParamView(params, {})


def test_inception_identity_branch(rng):
    branches = (BranchSpec("1x1", 3),)
    p = _inception(rng, 3, branches)
    p["b0.conv.weight"].data[:] = np.eye(3).reshape(3, 3, 1, 1)
    p["b0.conv.bias"].data[:] = 0.0
    x = np.abs(rng.standard_normal((2, 3, 5, 5)))
    np.testing.assert_array_equal(inception_block(Tensor(x), branches, p).data, x)


def test_inception_concat_channels(rng):
    branches = (
        BranchSpec("1x1", 4),
        BranchSpec("3x3", 8, reduce_channels=2),
        BranchSpec("5x5", 4, reduce_channels=2),
        BranchSpec("pool-proj", 4),
    )
    out = inception_block(Tensor(rng.random((2, 5, 7, 7))), branches, _inception(rng, 5, branches))
    assert out.shape == (2, 20, 7, 7)


@given(
    st.lists(
        st.tuples(st.sampled_from(["1x1", "3x3", "5x5", "pool-proj"]), st.integers(1, 4), st.integers(1, 3)),
        min_size=1,
        max_size=4,
    ),
    st.integers(0, 100),
)
def test_inception_channels_property(spec, seed):
    rng = np.random.default_rng(seed)
    branches = tuple(
        BranchSpec(kind, out, reduce_channels=red if kind in ("3x3", "5x5") else 0) for kind, out, red in spec
    )
    out = inception_block(Tensor(rng.random((1, 2, 6, 6))), branches, _inception(rng, 2, branches))
    assert out.shape == (1, sum(b.out_channels for b in branches), 6, 6)


def test_inception_spatial_mismatch(rng):
    branches = (BranchSpec("1x1", 2), BranchSpec("3x3", 2, reduce_channels=1, pad=0))
    with pytest.raises(ShapeError):
        inception_block(Tensor(rng.random((1, 2, 5, 5))), branches, _inception(rng, 2, branches))


@pytest.mark.parametrize("family", FAMILIES)
def test_family_builds_and_runs(family):
    spec = ArchitectureSpec(family, depth_units=3, input_side=16, num_classes=5, width_base=4)
    model = build_architecture(spec, seed=0)
    assert model(np.zeros((2, 3, 16, 16), dtype=np.float32)).shape == (2, 5)


@pytest.mark.parametrize("family", FAMILIES)
def test_family_full_gradient_check(family):
    name, fwd, tensors = gradcheck.model_case(family)
    assert gradcheck.check(fwd, tensors) <= gradcheck.TOL


def test_residual_26_class_probe():
    model = build_architecture(ArchitectureSpec("residual-style", depth_units=3, input_side=64, num_classes=26), seed=0)
    assert model(np.zeros((1, 3, 64, 64), dtype=np.float32)).shape == (1, 26)


def test_alexnet_has_dropout_stage():
    spec = ArchitectureSpec("plain-alexnet-style", depth_units=3, input_side=16, num_classes=4, dropout_p=0.4)
    model = build_architecture(spec)
    x = Tensor(np.ones((4, 3, 16, 16), dtype=np.float32))
    with_drop = model.forward(x, mode="train", rng=np.random.default_rng(0), stop_at="fc1").data
    assert np.mean(with_drop == 0) > 0
    assert model.forward(x, mode="eval", stop_at="fc1").data.min() >= 0


def test_build_deterministic():
    spec = ArchitectureSpec("inception-style", depth_units=2, input_side=16, num_classes=4)
    a, b = build_architecture(spec, seed=5), build_architecture(spec, seed=5)
    assert all(a.parameters[n].data.tobytes() == b.parameters[n].data.tobytes() for n in a.parameters)


def test_input_too_small_names_stage():
    with pytest.raises(ValueError, match="stage 'conv3'"):
        build_architecture(ArchitectureSpec("small-filter-vgg-style", depth_units=3, input_side=4, num_classes=3))


def test_spec_validation():
    with pytest.raises(ValueError):
        ArchitectureSpec("residual-style", num_classes=1).validate()
    with pytest.raises(ValueError):
        ArchitectureSpec.from_dict({"family": "residual-style", "colour": 1})


def _pretrained():
    spec = ArchitectureSpec("residual-style", depth_units=3, input_side=16, num_classes=10, width_base=4)
    return build_architecture(spec, seed=1)


def test_head_replacement_keeps_body_bytes():
    model = _pretrained()
    new = replace_classifier_head(model, 26, seed=3)
    for name, p in model.parameters.items():
        if not name.startswith("head."):
            assert new.parameters[name].data.tobytes() == p.data.tobytes()
    assert new.parameters["head.weight"].data.shape[0] == 26
    assert new.parameters["head.weight"].trainable
    assert new(np.zeros((1, 3, 16, 16), dtype=np.float32)).shape == (1, 26)
    assert model.spec.num_classes == 10


def test_head_replacement_same_count_reinitializes():
    model = _pretrained()
    new = replace_classifier_head(model, 10, seed=3)
    assert new.parameters["head.weight"].data.shape == model.parameters["head.weight"].data.shape
    assert not np.array_equal(new.parameters["head.weight"].data, model.parameters["head.weight"].data)
    with pytest.raises(ValueError):
        replace_classifier_head(model, 1)


def test_group_order_residual():
    model = _pretrained()
    groups = ordered_param_groups(model)
    assert groups == ["head", "block3", "block2", "block1", "stem"]
    assert len(groups) == model.spec.depth_units + 2


@pytest.mark.parametrize("family", FAMILIES)
def test_groups_partition_parameters(family):
    model = build_architecture(ArchitectureSpec(family, depth_units=3, input_side=16, num_classes=3))
    groups = ordered_param_groups(model)
    assert groups[0] == "head"
    owned = [n for g in groups for n in (p.name for p in model.group_params(g))]
    assert sorted(owned) == sorted(model.parameters) and len(owned) == len(set(owned))
    for idx, g in enumerate(groups):
        assert {p.group_index for p in model.group_params(g)} == {idx}


def test_feature_dimension_and_determinism():
    spec = ArchitectureSpec("residual-style", depth_units=3, input_side=16, num_classes=3, width_base=4)
    model = build_architecture(spec)
    x = Tensor(np.random.default_rng(0).random((2, 3, 16, 16)).astype(np.float32))
    f1 = extract_features(model, FEATURES, x)
    # three stages double the width twice
    assert f1.shape == (2, 4 * 2 ** 2)
    assert f1.tobytes() == extract_features(model, FEATURES, x).tobytes()
    with pytest.raises(KeyError, match="valid names"):
        extract_features(model, "nope", x)


def test_zero_batch_features_zero():
    spec = ArchitectureSpec("residual-style", depth_units=2, input_side=8, num_classes=3, width_base=4)
    model = build_architecture(spec)
    feats = extract_features(model, FEATURES, Tensor(np.zeros((2, 3, 8, 8), dtype=np.float32)))
    np.testing.assert_array_equal(feats, 0.0)


def test_extract_features_leaves_params_and_stats_alone():
    model = _pretrained()
    before = {n: p.data.tobytes() for n, p in model.parameters.items()}
    stats = {n: s.mean.tobytes() for n, s in model.running_stats.items()}
    extract_features(model, "block2", Tensor(np.ones((2, 3, 16, 16), dtype=np.float32)))
    assert before == {n: p.data.tobytes() for n, p in model.parameters.items()}
    assert stats == {n: s.mean.tobytes() for n, s in model.running_stats.items()}


def test_frozen_stage_keeps_running_stats():
    model = _pretrained()
    model.set_trainable(["head"])
    before = {n: (s.mean.tobytes(), s.var.tobytes()) for n, s in model.running_stats.items()}
    model.forward(Tensor(np.random.default_rng(0).random((4, 3, 16, 16)).astype(np.float32)), mode="train")
    assert before == {n: (s.mean.tobytes(), s.var.tobytes()) for n, s in model.running_stats.items()}
