import numpy as np
import pytest

from poisonlink import modem
from poisonlink.numerics import Tensor
from poisonlink.receivers import (
    ARCHITECTURES, BlackBoxMLP, CompatibilityError, DeepSIC, DetectorStateError, ResidualConv,
    build_detector, load_detector,
)
from poisonlink.training import online_adapt
from conftest import ml_decode, noiseless_pilots, toy_channel

KINDS = sorted(ARCHITECTURES)


def test_deepsic_structure():
    det = DeepSIC(rng=np.random.default_rng(0))
    subnets = det.subnets()
    assert len(subnets) == 12
    for w1, b1, w2, b2 in subnets:
        assert w1.shape == (20, 64) and b1.shape == (64,)
        assert w2.shape == (64, 4) and b2.shape == (4,)
    assert det.n_parameters() == 12 * (20 * 64 + 64 + 64 * 4 + 4)


def test_mlp_structure():
    det = BlackBoxMLP(rng=np.random.default_rng(0))
    assert det.layer_dims == [(8, 60), (60, 60), (60, 60), (60, 256)]
    assert det.n_parameters() == 8 * 60 + 60 + 2 * (60 * 60 + 60) + 60 * 256 + 256


def test_resnet_structure():
    det = ResidualConv(rng=np.random.default_rng(0))
    names = [n for n, _ in det.named_parameters()]
    convs = [n for n in names if n.endswith("conv1") or n.endswith("conv2")]
    assert len(convs) == 20 and det.blocks == 10
    # convolutions carry weights only
    assert not any(n.startswith("block") and n.endswith(".b") for n in names)
    assert det._params["block0.conv1"].data.shape == (3, 3, 32, 32)
    conv = 9 * 32 * 32
    expected = 9 * 32 + 64 + 10 * 2 * (conv + 64) + 32 * 256 + 256
    assert det.n_parameters() == expected


def test_resnet_zero_branch_is_identity():
    det = ResidualConv(rng=np.random.default_rng(1))
    h = Tensor(np.abs(np.random.default_rng(2).normal(size=(5, 2, 4, 32))))
    for name in ("block3.bn2.gamma", "block3.bn2.beta"):
        det._params[name].data[...] = 0.0
    np.testing.assert_allclose(det.block(h, 3).data, h.data)


@pytest.mark.parametrize("kind", KINDS)
def test_fresh_predict_on_simplex(kind):
    det = build_detector(kind, np.random.default_rng(3))
    x = np.random.default_rng(4).normal(size=(32, 8)) * 3
    p = det.predict(x)
    assert p.shape == (32, 4, 4)
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-9)


@pytest.mark.parametrize("kind", KINDS)
def test_batch_permutation_equivariance(kind):
    det = build_detector(kind, np.random.default_rng(5))
    x = np.random.default_rng(6).normal(size=(20, 8))
    perm = np.random.default_rng(7).permutation(20)
    np.testing.assert_allclose(det.predict(x)[perm], det.predict(x[perm]), atol=1e-12)


def test_deepsic_zero_weights_uniform():
    det = DeepSIC(rng=np.random.default_rng(0))
    for p in det.parameters():
        p.data[...] = 0.0
    x = np.random.default_rng(1).normal(size=(10, 8))
    np.testing.assert_allclose(det.predict(x), 0.25)
    labels = np.random.default_rng(2).integers(0, 4, size=(10, 4))
    # 3 iterations x 4 users, each term ln 4
    assert det.loss(x, labels).item() == pytest.approx(12 * np.log(4))


def test_deepsic_first_iteration_sees_uniform_prior():
    det = DeepSIC(rng=np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=(3, 8))
    z = np.concatenate([x, np.full((3, 12), 0.25)], axis=1)
    w1, b1, w2, b2 = det.subnets()[2]  # iteration 0, user 2
    expected = np.maximum(z @ w1 + b1, 0.0) @ w2 + b2
    np.testing.assert_allclose(det.iteration_logits(Tensor(x))[0].data[2], expected, atol=1e-12)


def test_deepsic_iterations_chain_without_skip():
    det = DeepSIC(rng=np.random.default_rng(0))
    x = Tensor(np.random.default_rng(1).normal(size=(6, 8)))
    before = [z.data.copy() for z in det.iteration_logits(x)]
    det._params["iter1.w2"].data[...] *= 2.0
    after = [z.data for z in det.iteration_logits(x)]
    np.testing.assert_array_equal(before[0], after[0])
    assert not np.allclose(before[1], after[1])
    assert not np.allclose(before[2], after[2])
    before = [b.copy() for b in after]
    det._params["iter2.w1"].data[...] *= 2.0
    after = [z.data for z in det.iteration_logits(x)]
    np.testing.assert_array_equal(before[0], after[0])
    np.testing.assert_array_equal(before[1], after[1])


@pytest.mark.parametrize("kind", ["mlp", "resnet"])
def test_joint_head_uniform_loss(kind):
    det = build_detector(kind, np.random.default_rng(0))
    det._params["head.w" if kind == "resnet" else "fc3.w"].data[...] = 0.0
    det._params["head.b" if kind == "resnet" else "fc3.b"].data[...] = 0.0
    x = np.random.default_rng(1).normal(size=(12, 8))
    labels = np.random.default_rng(2).integers(0, 4, size=(12, 4))
    assert det.loss(x, labels).item() == pytest.approx(np.log(256))
    np.testing.assert_allclose(det.predict(x), 0.25)


def test_decode_argmax_and_ties():
    det = DeepSIC(rng=np.random.default_rng(0))
    fixed = np.array([[[0.7, 0.1, 0.1, 0.1]] * 4, [[0.25] * 4] * 4, [[0.1, 0.4, 0.4, 0.1]] * 4])
    det._probabilities = lambda x: fixed
    np.testing.assert_array_equal(det.decode(np.zeros((3, 8))), [[0] * 4, [0] * 4, [1] * 4])


def test_joint_decode_tie_goes_to_lowest_joint():
    det = BlackBoxMLP(rng=np.random.default_rng(0))
    det._params["fc3.w"].data[...] = 0.0
    det._params["fc3.b"].data[...] = 0.0
    np.testing.assert_array_equal(det.decode(np.ones((2, 8))), np.zeros((2, 4), dtype=int))


def test_input_validation():
    det = DeepSIC(rng=np.random.default_rng(0))
    with pytest.raises(ValueError):
        det.predict(np.zeros((3, 7)))
    with pytest.raises(ValueError):
        det.loss(np.zeros((3, 8)), np.zeros((3, 3), dtype=int))
    with pytest.raises(DetectorStateError):
        DeepSIC().predict(np.zeros((1, 8)))
    with pytest.raises(ValueError):
        build_detector("transformer", np.random.default_rng(0))


@pytest.mark.parametrize("kind", KINDS)
def test_snapshot_round_trip(kind):
    det = build_detector(kind, np.random.default_rng(8))
    for buf in det._buffers.values():
        buf[...] = np.random.default_rng(9).uniform(0.5, 2.0, size=buf.shape)
    blob = det.snapshot()
    other = build_detector(kind, np.random.default_rng(99))
    other.restore(blob)
    for (n1, p1), (n2, p2) in zip(det.named_parameters(), other.named_parameters()):
        assert n1 == n2 and np.array_equal(p1.data, p2.data)
    for name in det._buffers:
        assert np.array_equal(det._buffers[name], other._buffers[name])
    assert other.snapshot() == blob
    assert load_detector(blob).snapshot() == blob


def test_cross_architecture_restore_fails():
    blob = DeepSIC(rng=np.random.default_rng(0)).snapshot()
    with pytest.raises(CompatibilityError):
        BlackBoxMLP(rng=np.random.default_rng(0)).restore(blob)
    with pytest.raises(CompatibilityError):
        DeepSIC(rng=np.random.default_rng(0)).restore(blob[:-3])
    with pytest.raises(CompatibilityError):
        DeepSIC(rng=np.random.default_rng(0)).restore(blob + b"\0")
    with pytest.raises(CompatibilityError):
        DeepSIC(2, 2, rng=np.random.default_rng(0)).restore(blob)


def test_blob_file_reload_gives_identical_ser(tmp_path):
    from poisonlink import channel as ch
    from poisonlink.harness import ser
    cfg = ch.ChannelConfig()
    blk = ch.generate_block(cfg, 0, 200, 2000, np.random.default_rng(10))
    det = DeepSIC(rng=np.random.default_rng(11))
    online_adapt(det, blk.pilot_features, blk.pilot_labels, epochs=30)
    path = tmp_path / "det.bin"
    path.write_bytes(det.snapshot())
    again = load_detector(path.read_bytes())
    a = ser(det.decode(blk.info_features), blk.info_labels)
    b = ser(again.decode(blk.info_features), blk.info_labels)
    assert a == b


@pytest.mark.parametrize("kind", KINDS)
def test_loss_decreases_over_first_epochs(kind):
    h = toy_channel(4)
    feats, labels = noiseless_pilots(h, 1, np.random.default_rng(12))
    feats, labels = feats[:64], labels[:64]
    det = build_detector(kind, np.random.default_rng(13))
    losses = online_adapt(det, feats, labels, epochs=20)
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_overfit_identity_channel():
    feats, labels = noiseless_pilots(np.eye(4), 1, np.random.default_rng(14))
    feats, labels = feats[:200], labels[:200]
    det = DeepSIC(rng=np.random.default_rng(15))
    online_adapt(det, feats, labels, epochs=300)
    assert np.mean(det.decode(feats) == labels) > 0.99


def test_deepsic_confidence_grows_over_iterations():
    h = toy_channel(4)
    feats, labels = noiseless_pilots(h, 1, np.random.default_rng(16))
    det = DeepSIC(rng=np.random.default_rng(17))
    online_adapt(det, feats[:200], labels[:200], epochs=300)
    test = np.random.default_rng(18).integers(0, 256, size=1000)
    lab = modem.users_of(test)
    x = modem.real_features(modem.modulate(lab) @ h.T)
    probs = det.iteration_probabilities(x)
    conf = np.take_along_axis(probs, np.broadcast_to(lab[None, :, :, None], probs.shape[:3] + (1,)),
                              axis=3)[..., 0].mean(axis=(1, 2))
    assert np.all(np.diff(conf) >= -1e-3), conf


@pytest.mark.parametrize("kind", KINDS)
def test_matches_ml_on_noiseless_toy_channel(kind):
    h = toy_channel(2)
    feats, labels = noiseless_pilots(h, 16, np.random.default_rng(19))
    det = build_detector(kind, np.random.default_rng(20), n_rx=2, n_tx=2)
    online_adapt(det, feats, labels, epochs=300)
    test_lab = np.random.default_rng(21).integers(0, 4, size=(1000, 2))
    x = modem.real_features(modem.modulate(test_lab) @ h.T)
    agree = np.all(det.decode(x) == ml_decode(h, x), axis=1).mean()
    assert agree >= 0.99
