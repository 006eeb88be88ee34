import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meanet import arch, nn
from meanet.arch import BlockSpec, MEAConfig
from meanet.errors import ConfigError, FormatError, ShapeError


def toy_config(**kw):
    base = dict(input_dim=6, num_classes=5, num_hard=2, main_spec=BlockSpec((8, 4)),
                adaptive_spec=BlockSpec((4,)), extension_spec=BlockSpec((7,)))
    base.update(kw)
    return MEAConfig(**base)


def test_variant_a_split():
    cfg = MEAConfig.from_stack("A", 6, (10, 9, 8, 7), 5, 2, adaptive=(9,), split=2)
    net = arch.build(cfg, 0)
    assert len(net.main) == 2 and len(net.extension) == 2
    assert net.exit1.n_in == 9 and net.exit1.n_out == 5
    assert net.exit2.n_out == 2


def test_variant_b_full_stack():
    cfg = MEAConfig.from_stack("B", 6, (10, 9, 8, 7), 5, 2, adaptive=(7,), extension=(12,))
    net = arch.build(cfg, 0)
    assert len(net.main) == 4
    assert [l.n_out for l in net.extension] == [12]


def test_concat_doubles_extension_input():
    net = arch.build(toy_config(merge="concat"), 0)
    assert net.extension[0].n_in == 8
    y2 = net.forward(np.ones(6))[1]
    assert y2.shape == (2,)


@pytest.mark.parametrize("kw", [
    {"adaptive_spec": BlockSpec((5, 4))},  # not shallower
    {"adaptive_spec": BlockSpec((3,))},  # feature width mismatch
    {"num_hard": 6},
    {"merge": "product"},
    {"variant": "C"},
])
def test_inconsistent_configs_rejected(kw):
    with pytest.raises(ConfigError):
        toy_config(**kw)


def test_variant_a_needs_valid_split():
    with pytest.raises(ConfigError):
        MEAConfig.from_stack("A", 6, (4, 4), 5, 2, adaptive=(4,), split=2)


def test_dense_layer_counts():
    layer = nn.DenseLayer(np.zeros((5, 10)), np.zeros(5))
    assert layer.n_params == 55
    assert layer.n_macs == 50


def test_counts_match_per_layer_tally():
    cfg = toy_config()
    net = arch.build(cfg, 1)
    # hand tally: (in, out) of every dense layer in the toy net
    shapes = [(6, 8), (8, 4), (4, 5), (6, 4), (4, 7), (7, 2)]
    total_params = sum(i * o + o for i, o in shapes)
    total_macs = sum(i * o for i, o in shapes)
    assert sum(net.count_params()) == total_params == 56 + 36 + 25 + 28 + 35 + 16
    assert net.count_params() == (0, total_params)
    net.freeze_main()
    fixed, trained = net.count_params()
    assert fixed == 56 + 36 + 25
    assert fixed + trained == total_params
    assert sum(net.count_macs()) == total_macs
    assert net.count_macs()[0] == 48 + 32 + 20


def test_zero_weight_forward():
    net = arch.build(toy_config(), 0)
    for l in net.layers:
        l.weights[:] = 0
    net.main[0].bias[:] = np.arange(8) - 3.0
    net.main[1].bias[:] = [1.0, -1.0, 2.0, 0.0]
    net.exit1.bias[:] = [0.5, 0.1, 0.2, 0.3, 0.4]
    y1, feat = net.forward_main(np.full(6, 7.0))
    np.testing.assert_array_equal(feat, [1.0, 0.0, 2.0, 0.0])
    np.testing.assert_array_equal(y1, net.exit1.bias)


def test_small_main_by_hand():
    # adaptive must be shallower than main, so the smallest legal main has two layers
    cfg = MEAConfig(input_dim=2, num_classes=2, num_hard=1, main_spec=BlockSpec((2, 2)),
                    adaptive_spec=BlockSpec((2,)))
    net = arch.build(cfg, 0)
    net.main[0] = nn.DenseLayer([[1.0, 2.0], [-1.0, 1.0]], [0.0, 0.5])
    net.main[1] = nn.DenseLayer([[1.0, 0.0], [1.0, 1.0]], [0.0, -1.0])
    net.exit1 = nn.DenseLayer([[2.0, 0.0], [0.0, -1.0]], [1.0, 0.0], "identity")
    x = np.array([1.0, -1.0])
    # h1 = relu([1-2, -1-1+0.5]) = [0, 0]; h2 = relu([0, -1]) = [0, 0]; y1 = [1, 0]
    y1, feat = net.forward_main(x)
    np.testing.assert_array_equal(feat, [0.0, 0.0])
    np.testing.assert_array_equal(y1, [1.0, 0.0])
    x = np.array([2.0, 1.0])
    # h1 = relu([4, -0.5]) = [4, 0]; h2 = relu([4, 3]) = [4, 3]; y1 = [9, -3]
    y1, feat = net.forward_main(x)
    np.testing.assert_array_equal(feat, [4.0, 3.0])
    np.testing.assert_array_equal(y1, [9.0, -3.0])


def test_extension_tiny_weights_by_hand():
    cfg = MEAConfig(input_dim=2, num_classes=3, num_hard=2, main_spec=BlockSpec((2, 2)),
                    adaptive_spec=BlockSpec((2,)), extension_spec=BlockSpec((1,)))
    net = arch.build(cfg, 0)
    net.extension[0] = nn.DenseLayer([[1.0, -2.0]], [0.5])
    net.exit2 = nn.DenseLayer([[3.0], [-1.0]], [0.0, 1.0], "identity")
    f = np.array([1.0, 0.25])
    f2 = np.array([0.5, 0.0])
    # merged = [1.5, 0.25]; h = relu(1.5 - 0.5 + 0.5) = 1.5; y2 = [4.5, -0.5]
    np.testing.assert_array_equal(net.forward_extension(f, f2), [4.5, -0.5])


def test_sum_merge_zero_identity():
    net = arch.build(toy_config(), 3)
    f = np.random.default_rng(0).normal(size=(5, 4))
    direct = nn.predict(net.extension_path, f)
    np.testing.assert_array_equal(net.forward_extension(f, np.zeros_like(f)), direct)


def test_merge_shape_mismatch():
    net = arch.build(toy_config(), 3)
    with pytest.raises(ShapeError):
        net.forward_extension(np.zeros(4), np.zeros(3))
    with pytest.raises(ShapeError):
        net.forward_main(np.zeros(5))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000), st.integers(1, 9), st.sampled_from(["sum", "concat"]))
def test_exit_shapes(seed, n, merge):
    net = arch.build(toy_config(merge=merge), seed)
    x = np.random.default_rng(seed).normal(size=(n, 6))
    y1, y2, feat = net.forward(x)
    assert y1.shape == (n, 5) and y2.shape == (n, 2) and feat.shape == (n, 4)
    again = net.forward(x)
    np.testing.assert_array_equal(again[0], y1)
    np.testing.assert_array_equal(again[2], feat)


def test_freeze_then_train_keeps_main_bytes():
    net = arch.build(toy_config(), 4).freeze_main()
    digest = arch.parameter_digest(net.main_layers)
    rng = np.random.default_rng(0)
    opt = nn.Sgd(net.layers, nn.SgdConfig(initial_lr=0.1))
    for step in range(100):
        x = rng.normal(size=(4, 6))
        trace = nn.forward(net.main_layers, x)
        grads = nn.backward(trace, rng.normal(size=(4, 5)))
        assert len(grads) == 0
        opt.step(grads, step)
    assert arch.parameter_digest(net.main_layers) == digest


def test_gradient_set_after_freeze_is_edge_only():
    net = arch.build(toy_config(), 5).freeze_main()
    x = np.random.default_rng(1).normal(size=(3, 6))
    trace = nn.forward(net.main, x)
    assert len(nn.backward(trace, np.ones((3, 4)))) == 0
    feat = nn.predict(net.main, x)
    merged = net.merge(feat, net.adaptive_features(x))
    trace = nn.forward(net.extension_path, merged)
    ids = {id(l) for l, _, _ in nn.backward(trace, np.ones((3, 2))).params}
    assert ids == {id(l) for l in net.extension_path}
    assert ids.isdisjoint(id(l) for l in net.main_layers)


def test_checkpoint_round_trip_bit_exact(tmp_path):
    net = arch.build(toy_config(merge="concat"), 6)
    net.main[0].weights[0, 0] = np.nextafter(1.0, 2.0)
    net.freeze_main()
    arch.save_meanet(net, tmp_path / "m.json")
    back = arch.load_meanet(tmp_path / "m.json")
    assert arch.parameter_digest(back.layers) == arch.parameter_digest(net.layers)
    assert [l.frozen for l in back.layers] == [l.frozen for l in net.layers]
    assert back.config == net.config
    assert not (tmp_path / "m.json.tmp").exists()


def test_classifier_round_trip(tmp_path):
    layers = arch.build_classifier(6, (5, 4), 3, 0)
    arch.save_classifier(layers, tmp_path / "c.json", {"role": "cloud"})
    back, meta = arch.load_classifier(tmp_path / "c.json")
    assert meta == {"role": "cloud"}
    assert arch.parameter_digest(back) == arch.parameter_digest(layers)


def test_checkpoint_kind_and_corruption(tmp_path):
    layers = arch.build_classifier(6, (5,), 3, 0)
    arch.save_classifier(layers, tmp_path / "c.json")
    with pytest.raises(FormatError):
        arch.load_meanet(tmp_path / "c.json")
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(FormatError):
        arch.load_classifier(tmp_path / "bad.json")


def test_config_dict_round_trip():
    cfg = toy_config(variant="A", merge="concat")
    assert MEAConfig.from_dict(cfg.to_dict()) == cfg
