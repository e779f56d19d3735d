import numpy as np
import pytest

from poisonlink import attack, channel as ch, modem
from poisonlink.attack import (
    AttackConfig, DegenerateGradientError, compute_clip_bounds, export_poison_csv, inject,
    l2_optimal_delta, load_poison_csv, pgd_poison, transfer_diagnostic,
)
from poisonlink.receivers import BlackBoxMLP, DeepSIC, ResidualConv


def test_config_validation():
    with pytest.raises(ValueError):
        AttackConfig(eps=-0.1)
    with pytest.raises(ValueError):
        AttackConfig(iters=0)
    with pytest.raises(ValueError):
        AttackConfig(bound_rule="box")


def test_clip_bounds_examples():
    f = modem.real_features(np.array([[1 + 2j, 0, 0, 0]]))
    assert compute_clip_bounds(f) == (-2.0, 2.0)
    rng = np.random.default_rng(0)
    g = rng.normal(size=(50, 8))
    lo, hi = compute_clip_bounds(g)
    assert compute_clip_bounds(2 * g) == (2 * lo, 2 * hi)
    assert np.all((g >= lo) & (g <= hi))
    assert compute_clip_bounds(f, "modulus")[1] == pytest.approx(np.sqrt(5))
    with pytest.raises(ValueError):
        compute_clip_bounds(np.zeros((0, 8)))


def test_eps_zero_is_identity_up_to_clip(surrogate, surrogate_block):
    feats, labels = surrogate_block.pilot_features, surrogate_block.pilot_labels
    bounds = (-0.5, 0.5)
    out = pgd_poison(surrogate, feats, labels, AttackConfig(eps=0.0, iters=3),
                     np.random.default_rng(0), bounds=bounds)
    np.testing.assert_array_equal(out.perturbed, np.clip(feats, *bounds))


@pytest.mark.parametrize("accumulate", [True, False])
def test_perturbations_respect_box_and_clip(surrogate, surrogate_block, accumulate):
    feats, labels = surrogate_block.pilot_features, surrogate_block.pilot_labels
    cfg = AttackConfig(iters=40, accumulate=accumulate)
    out = pgd_poison(surrogate, feats, labels, cfg, np.random.default_rng(1))
    assert np.all(np.abs(out.delta) <= cfg.eps + 1e-9)
    assert np.all(out.perturbed >= out.i_min) and np.all(out.perturbed <= out.i_max)
    # accumulated steps travel far; restarts move exactly one step from the clean sample
    reach = np.abs(out.delta).max()
    assert reach > 0.1 if accumulate else reach == pytest.approx(cfg.step)
    np.testing.assert_array_equal(out.labels, labels)


@pytest.mark.parametrize("seed", range(5))
def test_white_box_ascent_per_symbol(surrogate, seed):
    cfg = ch.ChannelConfig(seed=77, snr_db=14)
    blk = ch.generate_block(cfg, seed * 7, 200, 10, np.random.default_rng(seed))
    feats, labels = blk.pilot_features, blk.pilot_labels
    out = pgd_poison(surrogate, feats, labels, AttackConfig(), np.random.default_rng(seed))
    before = surrogate.sample_losses(feats, labels)
    after = surrogate.sample_losses(out.perturbed, labels)
    assert np.mean(after > before) >= 0.95


def test_loss_trace_recorded(surrogate, surrogate_block):
    out = pgd_poison(surrogate, surrogate_block.pilot_features, surrogate_block.pilot_labels,
                     AttackConfig(iters=20), np.random.default_rng(2), trace_every=5)
    assert len(out.loss_trace) == 4
    assert out.loss_trace[-1] > out.loss_trace[0]


def test_nonfinite_gradient_rows_are_skipped(surrogate, surrogate_block, monkeypatch):
    real = attack.per_symbol_input_grads

    def flaky(model, features, labels):
        g = real(model, features, labels)
        g[3] = np.nan
        return g

    monkeypatch.setattr(attack, "per_symbol_input_grads", flaky)
    feats = surrogate_block.pilot_features
    out = pgd_poison(surrogate, feats, surrogate_block.pilot_labels, AttackConfig(iters=5),
                     np.random.default_rng(0))
    assert out.skipped == [3]
    np.testing.assert_array_equal(out.perturbed[3], np.clip(feats[3], out.i_min, out.i_max))
    assert np.all(np.isfinite(out.perturbed))


def test_inject_contract(surrogate, surrogate_block):
    blk = surrogate_block
    out = pgd_poison(surrogate, blk.pilot_features, blk.pilot_labels, AttackConfig(iters=3),
                     np.random.default_rng(0))
    poisoned = inject(blk, out)
    np.testing.assert_array_equal(poisoned.info_rx, blk.info_rx)
    np.testing.assert_array_equal(poisoned.info_labels, blk.info_labels)
    np.testing.assert_array_equal(poisoned.pilot_labels, blk.pilot_labels)
    np.testing.assert_allclose(poisoned.pilot_features, out.perturbed, rtol=0, atol=0)
    assert not np.array_equal(poisoned.pilot_rx, blk.pilot_rx)
    assert inject(blk, None) is blk
    empty = attack.PoisonedPilotSet(np.zeros((0, 8)), np.zeros((0, 8)), np.zeros((0, 4), int))
    assert inject(blk, empty) is blk
    shifted = attack.PoisonedPilotSet(out.originals, out.perturbed, (out.labels + 1) % 4)
    with pytest.raises(ValueError):
        inject(blk, shifted)


def test_l2_optimal_delta(surrogate, surrogate_block):
    feats, labels = surrogate_block.pilot_features[:50], surrogate_block.pilot_labels[:50]
    delta = l2_optimal_delta(surrogate, feats, labels, 0.01)
    np.testing.assert_allclose(np.linalg.norm(delta, axis=1), 0.01, rtol=1e-12)
    g = attack.per_symbol_input_grads(surrogate, feats, labels)
    cos = (delta * g).sum(1) / (np.linalg.norm(delta, axis=1) * np.linalg.norm(g, axis=1))
    np.testing.assert_allclose(cos, 1.0, atol=1e-9)
    gain = surrogate.sample_losses(feats + delta, labels) - surrogate.sample_losses(feats, labels)
    assert np.mean(gain > 0) > 0.95
    single = l2_optimal_delta(surrogate, feats[0], labels[0], 0.3)
    assert single.shape == (8,)


def test_l2_delta_zero_gradient():
    det = BlackBoxMLP(rng=np.random.default_rng(0))
    for p in det.parameters():
        p.data[...] = 0.0
    with pytest.raises(DegenerateGradientError):
        l2_optimal_delta(det, np.ones(8), np.zeros(4, dtype=int), 0.1)


def test_per_symbol_gradients_independent_of_batch(surrogate, surrogate_block):
    feats, labels = surrogate_block.pilot_features[:20], surrogate_block.pilot_labels[:20]
    full = attack.per_symbol_input_grads(surrogate, feats, labels)
    one = attack.per_symbol_input_grads(surrogate, feats[4:5], labels[4:5])
    np.testing.assert_allclose(full[4], one[0], rtol=1e-10, atol=1e-12)


def test_transfer_diagnostic_equality_case(surrogate, surrogate_block):
    feats, labels = surrogate_block.pilot_features, surrogate_block.pilot_labels
    d = transfer_diagnostic(surrogate, surrogate, feats, labels, 0.3)
    np.testing.assert_allclose(d.delta_actual, d.delta_bound, rtol=1e-9)
    np.testing.assert_allclose(d.cosine, 1.0, atol=1e-9)


def test_transfer_diagnostic_cauchy_schwarz():
    rng = np.random.default_rng(7)
    feats = rng.normal(size=(500, 8))
    labels = rng.integers(0, 4, size=(500, 4))
    pairs = [(BlackBoxMLP(rng=np.random.default_rng(1)), DeepSIC(rng=np.random.default_rng(2))),
             (BlackBoxMLP(rng=np.random.default_rng(3)), BlackBoxMLP(rng=np.random.default_rng(4)))]
    for s, t in pairs:
        d = transfer_diagnostic(s, t, feats, labels, 0.3)
        assert np.all(d.delta_actual <= d.delta_bound + 1e-9)
        assert np.all(np.abs(d.cosine) <= 1 + 1e-12)


def test_transfer_alignment_with_trained_deepsic(surrogate, trained_deepsic, surrogate_block):
    feats, labels = surrogate_block.pilot_features, surrogate_block.pilot_labels
    d = transfer_diagnostic(surrogate, trained_deepsic, feats, labels, 0.3)
    print(f"mean surrogate/DeepSIC gradient cosine over {len(feats)} pilots: {d.cosine.mean():.3f}")
    assert d.cosine.mean() > 0


def test_resnet_gradients_per_symbol_in_eval_mode():
    det = ResidualConv(rng=np.random.default_rng(0))
    rng = np.random.default_rng(1)
    feats, labels = rng.normal(size=(6, 8)), rng.integers(0, 4, size=(6, 4))
    full = attack.per_symbol_input_grads(det, feats, labels)
    one = attack.per_symbol_input_grads(det, feats[2:3], labels[2:3])
    np.testing.assert_allclose(full[2], one[0], rtol=1e-9, atol=1e-12)


def test_poison_csv_round_trip(tmp_path, surrogate, surrogate_block):
    blk = surrogate_block
    out = pgd_poison(surrogate, blk.pilot_features, blk.pilot_labels, AttackConfig(iters=3),
                     np.random.default_rng(0))
    path = tmp_path / "poison.csv"
    export_poison_csv(path, {4: out})
    back = load_poison_csv(path)
    assert list(back) == [4]
    np.testing.assert_array_equal(back[4].perturbed, out.perturbed)
    np.testing.assert_array_equal(back[4].originals, out.originals)
    np.testing.assert_array_equal(back[4].labels, out.labels)
