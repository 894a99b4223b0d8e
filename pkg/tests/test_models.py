import numpy as np
import pytest

from xraynet import ShapeError, Tensor
from xraynet import models


# ---------------------------------------------------------------- baseline CNN

def test_baseline_structure():
    m = models.build_baseline_cnn()
    assert m.kind == "baseline"
    assert m.input_shape == (1, 32, 32)
    assert models.count_layers(m) == 4  # three convs + one FC
    # conv params: 1*16*9+16, 16*32*9+32, 32*64*9+64; fc: 1024*2+2
    assert m.num_parameters() == 25_346


def test_baseline_forward_shape_and_tap():
    m = models.build_baseline_cnn()
    x = Tensor(np.zeros((2, 1, 32, 32), dtype=np.float32))
    out = models.forward(m, x)
    assert out.shape == (2, 2)
    cap = models.feature_maps(m, Tensor(np.zeros((1, 1, 32, 32), dtype=np.float32)))
    assert cap.layer == m.default_tap == "block3.relu"
    assert cap.activation.shape == (1, 64, 8, 8)
    assert cap.logits.shape == (1, 2)


def test_baseline_single_block_config():
    m = models.build_baseline_cnn(models.BaselineCnnConfig(filters=(4,)))
    assert models.count_layers(m) == 2
    # conv 1->4: 40 params; fc over 4*(16*16)=1024 features: 2050
    assert m.num_parameters() == 40 + 2050
    out = models.forward(m, Tensor(np.zeros((1, 1, 32, 32), dtype=np.float32)))
    assert out.shape == (1, 2)


def test_baseline_config_validation():
    with pytest.raises(ValueError):
        models.BaselineCnnConfig(filters=())
    with pytest.raises(ValueError):
        # 32 is not divisible by 2^6
        models.BaselineCnnConfig(filters=(1, 1, 1, 1, 1, 1))


def test_baseline_rejects_wrong_input_shape():
    m = models.build_baseline_cnn()
    with pytest.raises(ShapeError):
        models.forward(m, Tensor(np.zeros((1, 3, 32, 32), dtype=np.float32)))
    with pytest.raises(ShapeError):
        models.forward(m, Tensor(np.zeros((1, 1, 64, 64), dtype=np.float32)))


def test_unknown_layer_error_lists_names():
    m = models.build_baseline_cnn()
    with pytest.raises(models.UnknownLayerError) as err:
        m.get_layer("nope")
    assert "block3.relu" in str(err.value)


def test_forward_eval_is_deterministic():
    m = models.build_baseline_cnn()
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=(2, 1, 32, 32)).astype(np.float32))
    a = models.forward(m, x).numpy()
    b = models.forward(m, x).numpy()
    assert a.tobytes() == b.tobytes()


def test_init_seed_controls_weights():
    a = models.build_baseline_cnn(init_seed=0)
    b = models.build_baseline_cnn(init_seed=0)
    c = models.build_baseline_cnn(init_seed=1)
    name = "block1.conv.weight"
    assert np.array_equal(a.params[name].value.numpy(), b.params[name].value.numpy())
    assert not np.array_equal(a.params[name].value.numpy(), c.params[name].value.numpy())


def test_zero_grads_and_trainable_parameters():
    m = models.build_baseline_cnn()
    x = Tensor(np.ones((2, 1, 32, 32), dtype=np.float32))
    from xraynet import autodiff as ad

    node = models.forward_node(m, x, mode="train")
    ad.backward(ad.sum_all(node))
    assert any(np.any(p.grad != 0.0) for p in m.trainable_parameters())
    m.zero_grads()
    assert all(np.all(p.grad == 0.0) for p in m.trainable_parameters())


# ---------------------------------------------------------------- DenseNet-121

def test_densenet_layer_count():
    m = models.build_densenet121()
    assert m.kind == "densenet121"
    assert models.count_layers(m) == 121


def test_densenet_parameter_total():
    m = models.build_densenet121()
    assert m.num_parameters() == 6_966_018


def test_densenet_block_channel_progression():
    m = models.build_densenet121()
    x = Tensor(np.random.default_rng(1).normal(size=(1, 3, 224, 224)).astype(np.float32))
    shapes = {}
    for block, (channels, hw) in {
        1: (256, 56), 2: (512, 28), 3: (1024, 14), 4: (1024, 7),
    }.items():
        cap = models.feature_maps(m, x, f"block{block}.out")
        shapes[block] = cap.activation.shape
        assert shapes[block] == (1, channels, hw, hw)


def test_densenet_bottleneck_channel_arithmetic():
    """Inside a block, layer n sees stem + (n-1) * growth_rate channels."""
    m = models.build_densenet121()
    convs = [spec for spec in m.layers if spec.kind == "conv" and spec.name.startswith("block1.")]
    bottlenecks = [s for s in convs if s.name.endswith("conv1")]
    for i, spec in enumerate(bottlenecks):
        w = m.params[spec.name + ".weight"].value.shape
        assert w[1] == 64 + i * 32  # in-channels
        assert w[0] == 4 * 32  # bottleneck width 4k


def test_densenet_transition_halves_channels():
    m = models.build_densenet121()
    for block, channels_in in ((1, 256), (2, 512), (3, 1024)):
        w = m.params[f"trans{block}.conv.weight"].value.shape
        assert w == (channels_in // 2, channels_in, 1, 1)


def test_densenet_forward_logits():
    m = models.build_densenet121()
    x = Tensor(np.zeros((1, 3, 224, 224), dtype=np.float32))
    out = models.forward(m, x)
    assert out.shape == (1, 2)
    assert np.all(np.isfinite(out.numpy()))


def test_count_layers_counts_conv_and_linear_only():
    m = models.build_densenet121()
    convs = sum(1 for s in m.layers if s.kind == "conv")
    fcs = sum(1 for s in m.layers if s.kind == "linear")
    assert convs + fcs == models.count_layers(m) == 121
    # 1 stem + 4 blocks of paired 1x1/3x3 convs + 3 transitions + 1 FC
    assert convs == 1 + 2 * (6 + 12 + 24 + 16) + 3
    assert fcs == 1


def test_densenet_batchnorm_running_stats_update_in_train_mode():
    m = models.build_densenet121()
    rng = np.random.default_rng(2)
    x = Tensor(rng.normal(size=(2, 3, 224, 224)).astype(np.float32))
    before = m.params["head.bn.running_mean"].value.numpy().copy()
    models.forward(m, x, mode="train")
    after = m.params["head.bn.running_mean"].value.numpy()
    assert not np.array_equal(before, after)
    # eval mode must leave them alone
    frozen = after.copy()
    models.forward(m, x, mode="eval")
    assert np.array_equal(frozen, m.params["head.bn.running_mean"].value.numpy())
