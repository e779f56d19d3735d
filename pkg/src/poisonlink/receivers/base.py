from __future__ import annotations

import numpy as np

from .. import modem
from ..numerics import PROB_FLOOR, Tensor, no_grad
from . import blob as _blob


class DetectorStateError(RuntimeError):
    pass


def uniform_init(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Detector:
    """Symbol classifier mapping real features (N, 2*n_rx) to per-user
    probabilities (N, n_tx, 4).

    Subclasses fill ``self._params`` (ordered name -> Tensor), optionally
    ``self._buffers`` (name -> ndarray), and implement ``_scores`` and
    ``_loss``. Built with ``rng=None`` the detector is an empty shell meant
    to be filled by :meth:`restore`.
    """

    kind = "detector"
    joint_head = False

    def __init__(self, n_rx=4, n_tx=4, rng=None):
        self.n_rx = n_rx
        self.n_tx = n_tx
        self.in_features = 2 * n_rx
        self.training = False
        self._params = {}
        self._buffers = {}
        self.initialized = False
        if rng is not None:
            self._init_params(rng)
            self.initialized = True

    # parameter access -------------------------------------------------------
    def parameters(self):
        return list(self._params.values())

    def named_parameters(self):
        return list(self._params.items())

    def n_parameters(self):
        return int(sum(p.data.size for p in self._params.values()))

    def train(self):
        self.training = True
        return self

    def eval(self):
        self.training = False
        return self

    def zero_grad(self):
        for p in self._params.values():
            p.grad = None

    # forward contracts ----------------------------------------------------------
    def _require_init(self):
        if not self.initialized:
            raise DetectorStateError(f"{self.kind} detector has no parameters yet")

    def _as_input(self, features):
        if isinstance(features, Tensor):
            x = features
        else:
            x = Tensor(features)
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ValueError(f"expected features of shape (N, {self.in_features}), got {x.shape}")
        return x

    def loss(self, features, labels):
        """Training loss against per-user labels (N, n_tx)."""
        self._require_init()
        x = self._as_input(features)
        labels = np.asarray(labels)
        if labels.shape != (x.shape[0], self.n_tx):
            raise ValueError(f"labels must have shape {(x.shape[0], self.n_tx)}, got {labels.shape}")
        return self._loss(x, labels)

    def predict(self, features):
        self._require_init()
        with no_grad():
            return self._probabilities(self._as_input(features))

    def sample_losses(self, features, labels):
        """Per-symbol training loss (the terms the batch loss averages)."""
        self._require_init()
        with no_grad():
            return self._sample_losses(self._as_input(features), np.asarray(labels))

    def decode(self, features):
        """Hard per-user decisions; ties go to the lowest class index."""
        self._require_init()
        with no_grad():
            x = self._as_input(features)
            if self.joint_head:
                joint = self._joint_probabilities(x).argmax(axis=1)
                return modem.users_of(joint, self.n_tx)
            return self._probabilities(x).argmax(axis=2)

    # persistence -------------------------------------------------------------------
    def snapshot(self):
        self._require_init()
        entries = [(name, p.data) for name, p in self._params.items()]
        entries += [("buffer:" + name, b) for name, b in self._buffers.items()]
        return _blob.encode(self.kind, entries)

    def restore(self, data):
        kind, entries = _blob.decode(data)
        if kind != self.kind:
            raise _blob.CompatibilityError(f"blob holds a {kind} detector, not {self.kind}")
        if not self.initialized:
            self._init_params(np.random.default_rng(0))
        expected = [n for n in self._params] + ["buffer:" + n for n in self._buffers]
        if [name for name, _ in entries] != expected:
            raise _blob.CompatibilityError("blob parameter names do not match architecture")
        for name, arr in entries:
            if name.startswith("buffer:"):
                target = self._buffers[name[len("buffer:"):]]
            else:
                target = self._params[name].data
            if target.shape != arr.shape:
                raise _blob.CompatibilityError(f"shape mismatch for {name}: {arr.shape} vs {target.shape}")
        for name, arr in entries:
            if name.startswith("buffer:"):
                self._buffers[name[len("buffer:"):]][...] = arr
            else:
                self._params[name].data[...] = arr
                self._params[name].grad = None
        self.initialized = True
        return self

    def copy(self):
        other = type(self)(self.n_rx, self.n_tx)
        other.restore(self.snapshot())
        other.training = self.training
        return other

    # subclass hooks ----------------------------------------------------------------
    def _init_params(self, rng):
        raise NotImplementedError

    def _loss(self, x, labels):
        raise NotImplementedError

    def _probabilities(self, x):
        raise NotImplementedError

    def _sample_losses(self, x, labels):
        raise NotImplementedError


class JointHeadDetector(Detector):
    """Detectors ending in a softmax over all 4**n_tx joint symbols."""

    joint_head = True

    def __init__(self, n_rx=4, n_tx=4, rng=None):
        self._marginals = modem.marginal_map(n_tx)
        super().__init__(n_rx, n_tx, rng)

    def _logits(self, x):
        raise NotImplementedError

    def _loss(self, x, labels):
        from ..numerics import cross_entropy_logits
        return cross_entropy_logits(self._logits(x), modem.joint_of(labels))

    def _sample_losses(self, x, labels):
        picked = self._joint_probabilities(x)[np.arange(x.shape[0]), modem.joint_of(labels)]
        return -np.log(np.maximum(picked, PROB_FLOOR))

    def _joint_probabilities(self, x):
        z = self._logits(x).data
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def _probabilities(self, x):
        p = self._joint_probabilities(x) @ self._marginals
        return p.reshape(x.shape[0], self.n_tx, modem.N_CLASSES)
