import numpy as np
import pytest

from meanet import arch, complexity, data, nn, trainer
from meanet.errors import ConfigError, ContractError, InvalidInputError

from conftest import small_dataset, small_plan


def blobs(seed=0, n=100):
    rng = np.random.default_rng(seed)
    x = np.concatenate([rng.normal(-3, 0.5, size=(n, 2)), rng.normal(3, 0.5, size=(n, 2))])
    y = np.repeat([0, 1], n)
    return data.Dataset(x, y, 2)


def two_class_net(seed=0):
    cfg = arch.MEAConfig(input_dim=2, num_classes=2, num_hard=1, main_spec=arch.BlockSpec((4, 4)),
                         adaptive_spec=arch.BlockSpec((4,)))
    return arch.build(cfg, seed)


def test_separable_blobs():
    ds = blobs()
    # a least-squares linear oracle already separates these blobs perfectly
    xb = np.hstack([ds.features, np.ones((len(ds), 1))])
    w = np.linalg.lstsq(xb, 2.0 * ds.labels - 1, rcond=None)[0]
    assert np.mean((xb @ w > 0) == ds.labels) == 1.0
    net = two_class_net()
    trainer.train_main(net, ds, nn.SgdConfig(initial_lr=0.05), 50)
    y1, _ = net.forward_main(ds.features)
    assert np.mean(np.argmax(y1, 1) == ds.labels) >= 0.99


def test_loss_decreases_on_small_batch():
    ds = blobs(n=8)
    net = two_class_net()
    curve = trainer.train_main(net, ds, nn.SgdConfig(initial_lr=0.01, batch_size=16, momentum=0.0), 30)
    losses = [p.loss for p in curve]
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


def test_zero_epochs_no_change():
    net = two_class_net()
    before = arch.parameter_digest(net.layers)
    assert trainer.train_main(net, blobs(), nn.SgdConfig(), 0) == []
    assert arch.parameter_digest(net.layers) == before


def test_seeded_rerun_identical():
    digests = []
    for _ in range(2):
        net = two_class_net(3)
        trainer.train_main(net, blobs(), nn.SgdConfig(seed=9), 5)
        digests.append(arch.parameter_digest(net.layers))
    assert digests[0] == digests[1]


def test_empty_and_mismatched_datasets():
    net = two_class_net()
    with pytest.raises(InvalidInputError):
        trainer.train_main(net, data.Dataset(np.zeros((0, 2)), [], 2), nn.SgdConfig(), 1)
    with pytest.raises(ConfigError):
        trainer.train_main(net, data.Dataset(np.zeros((2, 2)), [0, 2], 3), nn.SgdConfig(), 1)


@pytest.mark.parametrize("widths,ok", [
    ((64, 64, 64), True),
    ((8, 16), False),  # identical
    ((8,), False),  # shallower
    ((4, 32, 32), False),  # narrower at depth 0
    ((8, 16, 4), True),
])
def test_cloud_must_be_larger(widths, ok):
    spec = arch.BlockSpec((8, 16))
    if ok:
        trainer.check_cloud_larger(widths, spec)
    else:
        with pytest.raises(ConfigError):
            trainer.check_cloud_larger(widths, spec)


def test_extension_needs_frozen_main():
    net = arch.build(small_plan().model, 0)
    with pytest.raises(ContractError):
        trainer.train_extension_adaptive(net, np.zeros((2, 16)), np.array([0, 1]), nn.SgdConfig(), 1)


def test_extension_label_range():
    net = arch.build(small_plan().model, 0).freeze_main()
    with pytest.raises(InvalidInputError):
        trainer.train_extension_adaptive(net, np.zeros((2, 16)), np.array([0, 4]), nn.SgdConfig(), 1)


@pytest.mark.parametrize("merge", ["sum", "concat"])
def test_extension_stage_touches_only_edge_blocks(merge):
    cfg = arch.MEAConfig.from_stack("B", 16, (8, 16), 8, 4, (16,), (32,), merge=merge)
    net = arch.build(cfg, 0).freeze_main()
    main = arch.parameter_digest(net.main_layers)
    edge = arch.parameter_digest(net.edge_layers)
    rng = np.random.default_rng(0)
    trainer.train_extension_adaptive(net, rng.normal(size=(40, 16)), rng.integers(0, 4, 40),
                                     nn.SgdConfig(), 2)
    assert arch.parameter_digest(net.main_layers) == main
    assert arch.parameter_digest(net.edge_layers) != edge
    assert all(arch.parameter_digest([l]) != arch.parameter_digest([c])
               for l, c in zip(net.adaptive, arch.build(cfg, 0).adaptive))


@pytest.mark.parametrize("merge", ["sum", "concat"])
def test_adaptive_gradient_through_merge(merge):
    # the hand-rolled merge backprop must agree with finite differences on adaptive weights
    cfg = arch.MEAConfig.from_stack("B", 5, (6, 4), 3, 2, (4,), (5,), merge=merge)
    net = arch.build(cfg, 1).freeze_main()
    rng = np.random.default_rng(2)
    x = rng.normal(size=(3, 5))
    y = np.array([0, 1, 1])
    _, feat = net.forward_main(x)

    def loss():
        return nn.cross_entropy_batch(net.forward_extension(feat, net.adaptive_features(x)), y)[0]

    a_trace = nn.forward(net.adaptive, x)
    e_trace = nn.forward(net.extension_path, net.merge(feat, a_trace.output))
    _, g = nn.cross_entropy_batch(e_trace.output, y)
    g_in = nn.backward(e_trace, g, need_input_grad=True).input
    g_f2 = g_in if merge == "sum" else g_in[:, 4:]
    _, gw, _ = nn.backward(a_trace, g_f2).params[0]
    w = net.adaptive[0].weights
    num = np.zeros_like(w)
    for idx in np.ndindex(w.shape):
        old = w[idx]
        w[idx] = old + 1e-5
        up = loss()
        w[idx] = old - 1e-5
        down = loss()
        w[idx] = old
        num[idx] = (up - down) / 2e-5
    assert nn.max_relative_error(gw, num) < 1e-4


def test_pipeline_hard_subset_size(pipeline):
    result, _ = pipeline
    expected = int(np.isin(result.train.labels, result.partition.hard_set).sum())
    assert result.hard_subset_size == expected
    _, yh, _ = complexity.filter_hard_subset(result.train.features, result.train.labels, result.partition)
    assert len(yh) == expected
    # balanced data and half the classes hard: half the training split
    assert expected == len(result.train) // 2


def test_pipeline_main_unchanged_and_frozen(pipeline):
    result, _ = pipeline
    assert arch.parameter_digest(result.net.main_layers) == result.main_digest
    assert result.net.main_frozen
    fixed, trained = result.net.count_params()
    assert fixed == sum(l.n_params for l in result.net.main_layers)
    assert trained == sum(l.n_params for l in result.net.edge_layers)


def test_pipeline_validation_split(pipeline):
    result, _ = pipeline
    n = len(result.train) + len(result.val)
    assert len(result.val) == pytest.approx(0.1 * n, abs=8)
    np.testing.assert_array_equal(result.val.class_counts(), [round(0.1 * c) for c in
                                  result.val.class_counts() + result.train.class_counts()])


def test_pipeline_recovers_designed_hard_classes(pipeline):
    result, _ = pipeline
    designed = set(data.SyntheticSpec(seed=0).designated_hard())
    assert len(designed & set(result.partition.hard_set)) >= 3


@pytest.mark.parametrize("seed", range(5))
def test_extension_beats_main_on_hard_train(seed):
    ds = small_dataset(seed)
    result = trainer.run_pipeline(ds, small_plan(seed, train_cloud=False))
    x, y, idx = complexity.filter_hard_subset(result.train.features, result.train.labels, result.partition)
    y1, y2, _ = result.net.forward(x)
    main_acc = np.mean(np.argmax(y1, 1) == result.train.labels[idx])
    ext_acc = np.mean(np.argmax(y2, 1) == y)
    assert ext_acc > main_acc


def test_cloud_not_worse_than_main(pipeline):
    result, _ = pipeline
    cloud_acc = np.mean(np.argmax(nn.predict(result.cloud, result.val.features), 1) == result.val.labels)
    main_acc = np.mean(np.argmax(result.net.forward_main(result.val.features)[0], 1) == result.val.labels)
    assert cloud_acc >= main_acc


def test_all_classes_hard_degenerates():
    ds = small_dataset(1, samples=40)
    r = trainer.run_pipeline(ds, small_plan(1, epochs=3, num_hard=8, train_cloud=False))
    assert r.partition.hard_set == tuple(range(8))
    assert r.hard_subset_size == len(r.train)
    assert r.cloud is None


def test_random_selection_plan():
    ds = small_dataset(2, samples=40)
    r = trainer.run_pipeline(ds, small_plan(2, epochs=2, selection="random", train_cloud=False))
    assert r.partition.method == "random"
    assert r.partition == complexity.random_partition(8, 4, 2)


def test_pipeline_artifacts_and_determinism(tmp_path):
    ds = small_dataset(3, samples=40)
    a = trainer.run_pipeline(ds, small_plan(3, epochs=3), tmp_path / "a")
    b = trainer.run_pipeline(ds, small_plan(3, epochs=3), tmp_path / "b")
    for name in ("main.ckpt.json", "cloud.ckpt.json", "partition.json", "mea.ckpt.json", "training_curve.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert arch.parameter_digest(a.net.layers) == arch.parameter_digest(b.net.layers)
    stage1 = arch.load_meanet(tmp_path / "a" / "main.ckpt.json")
    assert arch.parameter_digest(stage1.main_layers) == arch.parameter_digest(a.net.main_layers)
    header = (tmp_path / "a" / "training_curve.csv").read_text().splitlines()[0]
    assert header == "stage,epoch,split,loss,accuracy"
