"""Residual convolutional detector.

The received vector is laid out as a one-channel 2 x n_rx image (row 0 real
parts, row 1 imaginary parts). A bias-free 3x3 stem lifts it to 32 channels,
followed by 10 residual blocks of two bias-free 3x3 convolutions with one
pixel of zero padding, batch norm after each convolution and ReLU between.
Global average pooling and a linear layer produce joint-symbol logits.
"""

import numpy as np

from .. import modem
from ..numerics import Tensor, functional as F
from .base import JointHeadDetector, uniform_init

CHANNELS = 32
BLOCKS = 10
KERNEL = 3
BN_MOMENTUM = 0.1
BN_EPS = 1e-5


class ResidualConv(JointHeadDetector):
    kind = "resnet"

    def __init__(self, n_rx=4, n_tx=4, rng=None, channels=CHANNELS, blocks=BLOCKS):
        self.channels = channels
        self.blocks = blocks
        super().__init__(n_rx, n_tx, rng)

    def _conv(self, name, rng, c_in, c_out):
        fan_in = KERNEL * KERNEL * c_in
        self._params[name] = Tensor(uniform_init(rng, (KERNEL, KERNEL, c_in, c_out), fan_in),
                                    requires_grad=True)

    def _bn(self, name, c):
        self._params[name + ".gamma"] = Tensor(np.ones(c), requires_grad=True)
        self._params[name + ".beta"] = Tensor(np.zeros(c), requires_grad=True)
        self._buffers[name + ".mean"] = np.zeros(c)
        self._buffers[name + ".var"] = np.ones(c)

    def _init_params(self, rng):
        c = self.channels
        self._params, self._buffers = {}, {}
        self._conv("stem.conv", rng, 1, c)
        self._bn("stem.bn", c)
        for b in range(self.blocks):
            self._conv(f"block{b}.conv1", rng, c, c)
            self._bn(f"block{b}.bn1", c)
            self._conv(f"block{b}.conv2", rng, c, c)
            self._bn(f"block{b}.bn2", c)
        n_out = modem.N_CLASSES ** self.n_tx
        self._params["head.w"] = Tensor(uniform_init(rng, (c, n_out), c), requires_grad=True)
        self._params["head.b"] = Tensor(uniform_init(rng, (n_out,), c), requires_grad=True)

    def _batch_norm(self, x, name):
        p = self._params
        return F.batch_norm(x, p[name + ".gamma"], p[name + ".beta"],
                            self._buffers[name + ".mean"], self._buffers[name + ".var"],
                            self.training, BN_MOMENTUM, BN_EPS)

    def to_image(self, x):
        n = x.shape[0]
        return F.reshape(x, (n, 2, self.n_rx, 1))

    def block(self, h, b):
        p = self._params
        out = F.relu(self._batch_norm(F.conv2d_same(h, p[f"block{b}.conv1"]), f"block{b}.bn1"))
        out = self._batch_norm(F.conv2d_same(out, p[f"block{b}.conv2"]), f"block{b}.bn2")
        return F.relu(h + out)

    def features(self, x):
        p = self._params
        h = F.relu(self._batch_norm(F.conv2d_same(self.to_image(x), p["stem.conv"]), "stem.bn"))
        for b in range(self.blocks):
            h = self.block(h, b)
        return h

    def _logits(self, x):
        pooled = F.mean(self.features(x), axis=(1, 2))
        return F.linear(pooled, self._params["head.w"], self._params["head.b"])
