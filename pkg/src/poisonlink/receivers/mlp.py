from ..numerics import Tensor, functional as F
from .. import modem
from .base import JointHeadDetector, uniform_init

WIDTH = 60


class BlackBoxMLP(JointHeadDetector):
    """Four fully connected layers (2*n_rx -> 60 -> 60 -> 60 -> 4**n_tx) with
    ReLU between them and a softmax head over joint symbols."""

    kind = "mlp"

    def _init_params(self, rng):
        dims = [self.in_features, WIDTH, WIDTH, WIDTH, modem.N_CLASSES ** self.n_tx]
        self.layer_dims = list(zip(dims[:-1], dims[1:]))
        self._params = {}
        for i, (a, b) in enumerate(self.layer_dims):
            self._params[f"fc{i}.w"] = Tensor(uniform_init(rng, (a, b), a), requires_grad=True)
            self._params[f"fc{i}.b"] = Tensor(uniform_init(rng, (b,), a), requires_grad=True)

    def _logits(self, x):
        h = x
        n_layers = len(self.layer_dims)
        for i in range(n_layers):
            h = F.linear(h, self._params[f"fc{i}.w"], self._params[f"fc{i}.b"])
            if i < n_layers - 1:
                h = F.relu(h)
        return h
