"""Deep soft interference cancellation.

Three unfolded iterations, each holding one two-layer subnet per user. The
subnet for user u at iteration q sees the received features plus the soft
4-vectors of every other user from iteration q-1 (uniform at q=0), so its
input width is 2*n_rx + 4*(n_tx-1). The n_tx subnets of one iteration are
stored stacked along a leading axis and evaluated with one batched matmul.
"""

import numpy as np

from .. import modem
from ..numerics import Tensor, functional as F
from .base import Detector, uniform_init

HIDDEN = 64
ITERATIONS = 3


class DeepSIC(Detector):
    kind = "deepsic"

    def __init__(self, n_rx=4, n_tx=4, rng=None, iterations=ITERATIONS, hidden=HIDDEN):
        self.iterations = iterations
        self.hidden = hidden
        self.subnet_in = 2 * n_rx + modem.N_CLASSES * (n_tx - 1)
        others = [[v for v in range(n_tx) if v != u] for u in range(n_tx)]
        c = modem.N_CLASSES
        self._prior_index = np.array(
            [[v * c + k for v in vs for k in range(c)] for vs in others], dtype=np.intp)
        super().__init__(n_rx, n_tx, rng)

    def _init_params(self, rng):
        u, d, h, c = self.n_tx, self.subnet_in, self.hidden, modem.N_CLASSES
        self._params = {}
        for q in range(self.iterations):
            self._params[f"iter{q}.w1"] = Tensor(uniform_init(rng, (u, d, h), d), requires_grad=True)
            self._params[f"iter{q}.b1"] = Tensor(uniform_init(rng, (u, 1, h), d), requires_grad=True)
            self._params[f"iter{q}.w2"] = Tensor(uniform_init(rng, (u, h, c), h), requires_grad=True)
            self._params[f"iter{q}.b2"] = Tensor(uniform_init(rng, (u, 1, c), h), requires_grad=True)

    def subnets(self):
        """One (w1, b1, w2, b2) ndarray tuple per (iteration, user) subnet."""
        out = []
        for q in range(self.iterations):
            w1, b1, w2, b2 = (self._params[f"iter{q}.{k}"].data for k in ("w1", "b1", "w2", "b2"))
            for u in range(self.n_tx):
                out.append((w1[u], b1[u, 0], w2[u], b2[u, 0]))
        return out

    def iteration_logits(self, x):
        """Logits (n_tx, N, 4) for every iteration, in order."""
        n = x.shape[0]
        u, c = self.n_tx, modem.N_CLASSES
        priors = Tensor(np.full((n, u * c), 1.0 / c))
        feats = F.broadcast_to(F.reshape(x, (1, n, self.in_features)), (u, n, self.in_features))
        out = []
        for q in range(self.iterations):
            p = self._params
            gathered = F.transpose(F.take(priors, self._prior_index, axis=1), (1, 0, 2))
            z = F.concat([feats, gathered], axis=-1)
            hid = F.relu(F.matmul(z, p[f"iter{q}.w1"]) + p[f"iter{q}.b1"])
            logits = F.matmul(hid, p[f"iter{q}.w2"]) + p[f"iter{q}.b2"]
            out.append(logits)
            probs = F.softmax(logits, axis=-1)
            priors = F.reshape(F.transpose(probs, (1, 0, 2)), (n, u * c))
        return out

    def iteration_probabilities(self, features):
        """Soft estimates (iterations, N, n_tx, 4) after each iteration."""
        from ..numerics import no_grad
        with no_grad():
            logits = self.iteration_logits(self._as_input(features))
            return np.stack([np.transpose(F.softmax(z, axis=-1).data, (1, 0, 2)) for z in logits])

    def _loss(self, x, labels):
        n = x.shape[0]
        users = np.arange(self.n_tx)[:, None]
        rows = np.arange(n)[None, :]
        total = None
        for logits in self.iteration_logits(x):
            logp = F.log_softmax(logits, axis=-1)
            picked = F.sum(F.getitem(logp, (users, rows, labels.T)))
            total = picked if total is None else total + picked
        return total * (-1.0 / n)

    def _sample_losses(self, x, labels):
        users = np.arange(self.n_tx)[:, None]
        rows = np.arange(x.shape[0])[None, :]
        total = 0.0
        for logits in self.iteration_logits(x):
            logp = F.log_softmax(logits, axis=-1).data
            total = total - logp[users, rows, labels.T].sum(axis=0)
        return total

    def _probabilities(self, x):
        last = self.iteration_logits(x)[-1]
        return np.transpose(F.softmax(last, axis=-1).data, (1, 0, 2))
