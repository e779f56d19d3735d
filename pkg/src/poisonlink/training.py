"""Online, online-meta and joint (offline) training of detectors.

Every regime minimises the detector's own cross-entropy with full-batch Adam
unless stated otherwise. Online adaptation is warm-started: it never resets
parameters between blocks.
"""

from __future__ import annotations

import collections
import logging
from dataclasses import dataclass

import numpy as np

from . import channel as ch
from .modem import modulate, real_features
from .numerics import Adam, NumericError, grad
from .receivers import build_detector

log = logging.getLogger(__name__)


class TrainingAborted(RuntimeError):
    """Loss went non-finite. ``epoch`` and ``losses`` describe the run so far."""

    def __init__(self, msg, epoch=None, losses=None):
        super().__init__(msg)
        self.epoch = epoch
        self.losses = losses or []


@dataclass(frozen=True)
class OnlineConfig:
    epochs: int = 300
    lr: float = 5e-3
    meta_lr: float = 0.01
    meta_window: int = 5
    meta_epochs: int = 30
    support_fraction: float = 0.5
    finetune_epochs: int | None = None

    def __post_init__(self):
        if self.epochs < 0 or (self.finetune_epochs or 0) < 0:
            raise ValueError("epochs must be non-negative")
        if not (self.lr > 0 and self.meta_lr > 0):
            raise ValueError("learning rates must be positive")
        if self.meta_window < 1:
            raise ValueError("meta window must hold at least one block")


@dataclass(frozen=True)
class JointConfig:
    snr_grid: tuple = (2, 4, 6, 8, 10, 12, 14, 16)
    symbols_per_snr: int = 5000
    epochs: int = 300
    lr: float = 5e-3
    batch_size: int = 1000
    n_blocks: int = 100

    def __post_init__(self):
        if not self.snr_grid:
            raise ValueError("SNR grid must not be empty")
        if self.symbols_per_snr <= 0:
            raise ValueError("symbols_per_snr must be positive")

    @property
    def dataset_size(self):
        return len(self.snr_grid) * self.symbols_per_snr


def _fit(detector, features, labels, epochs, lr):
    detector.train()
    opt = Adam(detector.parameters(), lr=lr)
    losses = []
    for epoch in range(epochs):
        opt.zero_grad()
        loss = detector.loss(features, labels)
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingAborted(f"non-finite loss {value} at epoch {epoch}", epoch, losses)
        losses.append(value)
        loss.backward()
        try:
            opt.step()
        except NumericError as exc:
            raise TrainingAborted(f"{exc} at epoch {epoch}", epoch, losses) from exc
    detector.eval()
    return losses


def online_adapt(detector, features, labels, cfg=OnlineConfig(), epochs=None):
    """Train ``detector`` in place on one block's pilots; return the loss per epoch."""
    return _fit(detector, features, labels, cfg.epochs if epochs is None else epochs, cfg.lr)


class PilotBuffer:
    """FIFO of the most recent blocks' (features, labels) pilots."""

    def __init__(self, capacity=5):
        self.blocks = collections.deque(maxlen=capacity)

    @property
    def capacity(self):
        return self.blocks.maxlen

    def push(self, features, labels):
        self.blocks.append((np.array(features, copy=True), np.array(labels, copy=True)))

    def __len__(self):
        return len(self.blocks)

    def __iter__(self):
        return iter(self.blocks)


def meta_train(detector, buffer, cfg, rng):
    """First-order MAML over the buffered blocks, updating ``detector`` in place.

    Each meta-epoch picks one buffered block, splits its pilots into disjoint
    support/query halves, takes one plain SGD step (lr ``cfg.lr``) on the
    support loss, and moves the meta-weights by ``cfg.meta_lr`` times the
    query-loss gradient evaluated at the adapted weights.
    """
    params = detector.parameters()
    detector.train()
    query_losses = []
    for _ in range(cfg.meta_epochs):
        feats, labels = buffer.blocks[rng.integers(len(buffer))]
        order = rng.permutation(len(feats))
        cut = max(1, min(len(feats) - 1, int(round(cfg.support_fraction * len(feats)))))
        sup, qry = order[:cut], order[cut:]
        meta = [p.data.copy() for p in params]
        support_grads = grad(detector.loss(feats[sup], labels[sup]), params)
        for p, g in zip(params, support_grads):
            p.data -= cfg.lr * g
        query = detector.loss(feats[qry], labels[qry])
        query_losses.append(query.item())
        query_grads = grad(query, params)
        for p, m, g in zip(params, meta, query_grads):
            if not np.all(np.isfinite(g)):
                raise TrainingAborted("non-finite meta gradient", None, query_losses)
            p.data[...] = m - cfg.meta_lr * g
    detector.eval()
    return query_losses


def meta_adapt(detector, buffer, features, labels, cfg, rng, meta_weights=None):
    """Meta-train on the buffer, then fine-tune on the current pilots.

    ``meta_weights`` (a snapshot blob) is the meta-initialisation carried over
    from the previous block; ``None`` starts from the detector's current
    parameters. Returns ``(losses, new_meta_weights)``. With an empty buffer
    this is plain :func:`online_adapt` and the meta-weights pass through.
    """
    if len(buffer) == 0:
        return online_adapt(detector, features, labels, cfg), meta_weights
    if meta_weights is not None:
        detector.restore(meta_weights)
    meta_train(detector, buffer, cfg, rng)
    new_meta = detector.snapshot()
    epochs = cfg.epochs if cfg.finetune_epochs is None else cfg.finetune_epochs
    return online_adapt(detector, features, labels, cfg, epochs=epochs), new_meta


def joint_dataset(channel_cfg, jcfg, rng):
    """Pilots pooled over the SNR grid and over block indices 0..n_blocks-1."""
    feats, labels = [], []
    per_block = np.full(jcfg.n_blocks, jcfg.symbols_per_snr // jcfg.n_blocks)
    per_block[: jcfg.symbols_per_snr % jcfg.n_blocks] += 1
    for snr in jcfg.snr_grid:
        cfg = ch.ChannelConfig(kind=channel_cfg.kind, snr_db=snr, k=channel_cfg.k,
                               tap_file=channel_cfg.tap_file, seed=channel_cfg.seed,
                               n_rx=channel_cfg.n_rx, n_tx=channel_cfg.n_tx)
        for b, n in enumerate(per_block):
            if n == 0:
                continue
            real = ch.taps_at(cfg, b)
            lab = rng.integers(0, 4, size=(n, cfg.n_tx))
            y = ch.transmit(modulate(lab), real, cfg, rng)
            feats.append(real_features(y))
            labels.append(lab)
    feats = np.concatenate(feats)
    labels = np.concatenate(labels)
    order = rng.permutation(len(feats))
    return feats[order], labels[order]


def joint_train(channel_cfg, jcfg, rng, kind="mlp"):
    """Train the attacker's surrogate on clean pooled pilots with mini-batch Adam.

    Returns ``(detector, losses)`` with one mean loss per epoch.
    """
    if channel_cfg.kind != ch.LINEAR_TIME_VARYING:
        log.warning("joint training on %s channel; the attacker normally uses the "
                    "linear time-varying family", channel_cfg.kind)
    feats, labels = joint_dataset(channel_cfg, jcfg, rng)
    det = build_detector(kind, rng, channel_cfg.n_rx, channel_cfg.n_tx)
    det.train()
    opt = Adam(det.parameters(), lr=jcfg.lr)
    n = len(feats)
    bs = min(jcfg.batch_size, n)
    losses = []
    for epoch in range(jcfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            opt.zero_grad()
            loss = det.loss(feats[idx], labels[idx])
            if not np.isfinite(loss.item()):
                raise TrainingAborted(f"non-finite surrogate loss at epoch {epoch}", epoch, losses)
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        losses.append(total / n)
    det.eval()
    return det, losses


__all__ = [
    "JointConfig", "OnlineConfig", "PilotBuffer", "TrainingAborted",
    "joint_dataset", "joint_train", "meta_adapt", "meta_train", "online_adapt",
]
