"""Block-fading MIMO channels and transmission-block generation.

Synthetic taps follow

    H[i, j](b) = 0.8**|i-j| * (0.6 + 0.4 cos(2 pi b / P_j + phi_ij)) * exp(1j psi_ij)

with per-transmitter periods P = (51, 39, 33, 21) blocks and phases drawn once
from the channel seed. Noise variance is the total variance of each complex
entry, sigma2 = 10**(-snr_db / 10), for a unit-power constellation.
"""

from __future__ import annotations

import csv
import functools
import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import modem

LINEAR_TIME_VARYING = "linear_time_varying"
NONLINEAR_TIME_VARYING = "nonlinear_time_varying"
LINEAR_STATIC = "linear_static"
TAP_FILE = "tap_file"
KINDS = (LINEAR_TIME_VARYING, NONLINEAR_TIME_VARYING, LINEAR_STATIC, TAP_FILE)

TAP_PERIODS = (51, 39, 33, 21)
SPATIAL_DECAY = 0.8
SAMPLE_TAP_FILE = Path(__file__).parent / "data" / "cost2100_sample.csv"


class TapFileError(ValueError):
    pass


@dataclass(frozen=True)
class ChannelConfig:
    kind: str = LINEAR_TIME_VARYING
    snr_db: float = 14.0
    k: float = 0.5
    tap_file: str | None = None
    seed: int = 0
    n_rx: int = 4
    n_tx: int = 4

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown channel kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == TAP_FILE and not self.tap_file:
            raise ValueError("tap_file channel requires a tap_file path")
        if not self.k > 0:
            raise ValueError("nonlinearity gain k must be positive")

    @property
    def sigma2(self):
        return snr_to_sigma2(self.snr_db)

    @property
    def nonlinear(self):
        return self.kind == NONLINEAR_TIME_VARYING


@dataclass(frozen=True)
class ChannelRealization:
    h_re: np.ndarray
    h_im: np.ndarray
    sigma2: float
    block_index: int

    @property
    def H(self):
        return self.h_re + 1j * self.h_im

    def fingerprint(self):
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.h_re).tobytes())
        h.update(np.ascontiguousarray(self.h_im).tobytes())
        h.update(np.float64(self.sigma2).tobytes())
        return h.hexdigest()[:16]


@dataclass
class TransmissionBlock:
    block_index: int
    pilot_rx: np.ndarray          # complex (L_pilot, n_rx)
    pilot_labels: np.ndarray      # int (L_pilot, n_tx)
    info_rx: np.ndarray           # complex (L_info, n_rx)
    info_labels: np.ndarray       # int (L_info, n_tx)
    fingerprint: str = ""

    @property
    def pilot_features(self):
        return modem.real_features(self.pilot_rx)

    @property
    def info_features(self):
        return modem.real_features(self.info_rx)


def snr_to_sigma2(snr_db):
    return 10.0 ** (-float(snr_db) / 10.0)


@functools.lru_cache(maxsize=64)
def _phases(seed, n_rx, n_tx):
    rng = np.random.default_rng([seed, 0x7A95])
    phi = rng.uniform(0.0, 2 * np.pi, size=(n_rx, n_tx))
    psi = rng.uniform(0.0, 2 * np.pi, size=(n_rx, n_tx))
    return phi, psi


def _synthetic_taps(config, b):
    phi, psi = _phases(config.seed, config.n_rx, config.n_tx)
    i, j = np.indices((config.n_rx, config.n_tx))
    periods = np.asarray(TAP_PERIODS, dtype=np.float64)[np.arange(config.n_tx) % len(TAP_PERIODS)]
    amp = SPATIAL_DECAY ** np.abs(i - j) * (0.6 + 0.4 * np.cos(2 * np.pi * b / periods[j] + phi))
    return amp * np.cos(psi), amp * np.sin(psi)


def taps_at(config, b):
    """Channel realization for block ``b``."""
    if b < 0:
        raise ValueError("block index must be non-negative")
    if config.kind == TAP_FILE:
        table = load_tap_file(config.tap_file)
        if b >= len(table):
            raise IndexError(f"block {b} beyond tap file with {len(table)} blocks")
        row = table[b].reshape(config.n_rx, config.n_tx, 2)
        h_re, h_im = row[..., 0].copy(), row[..., 1].copy()
    elif config.kind == LINEAR_STATIC:
        h_re, h_im = _synthetic_taps(config, 0)
    else:
        h_re, h_im = _synthetic_taps(config, b)
    return ChannelRealization(h_re, h_im, config.sigma2, b)


def transmit(x, realization, config, rng):
    """Pass complex symbols ``x`` (n_tx,) or (N, n_tx) through the channel."""
    x = np.asarray(x, dtype=np.complex128)
    clean = x @ realization.H.T
    scale = np.sqrt(realization.sigma2 / 2.0)
    noise = scale * (rng.standard_normal(clean.shape) + 1j * rng.standard_normal(clean.shape))
    y = clean + noise
    if config.nonlinear:
        y = np.tanh(config.k * y.real) + 1j * np.tanh(config.k * y.imag)
    return y


def generate_block(config, b, l_pilot, l_info, rng):
    """Draw uniform labels, modulate, and send pilots and info through H(b)."""
    if l_pilot <= 0 or l_info <= 0:
        raise ValueError("pilot and info lengths must be positive")
    real = taps_at(config, b)
    labels = rng.integers(0, modem.N_CLASSES, size=(l_pilot + l_info, config.n_tx))
    y = transmit(modem.modulate(labels), real, config, rng)
    return TransmissionBlock(
        block_index=b,
        pilot_rx=y[:l_pilot],
        pilot_labels=labels[:l_pilot],
        info_rx=y[l_pilot:],
        info_labels=labels[l_pilot:],
        fingerprint=real.fingerprint(),
    )


# tap files -------------------------------------------------------------------

def tap_header(n_rx=4, n_tx=4):
    cols = ["block"]
    for i in range(n_rx):
        for j in range(n_tx):
            cols += [f"h{i}{j}_re", f"h{i}{j}_im"]
    return cols


def write_tap_file(path, table, n_rx=4, n_tx=4):
    table = np.asarray(table, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(tap_header(n_rx, n_tx))
        for b, row in enumerate(table):
            w.writerow([b] + [repr(float(v)) for v in row])


def load_tap_file(path, n_rx=4, n_tx=4):
    """Read a tap CSV into a (B, n_rx*n_tx*2) array, re/im interleaved per entry."""
    return _load_tap_file(str(path), n_rx, n_tx).copy()


@functools.lru_cache(maxsize=8)
def _load_tap_file(path, n_rx, n_tx):
    width = n_rx * n_tx * 2
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise TapFileError(f"{path}: empty tap file")
        if len(header) != width + 1:
            raise TapFileError(f"{path}:1: expected {width + 1} columns, got {len(header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width + 1:
                raise TapFileError(f"{path}:{lineno}: expected {width + 1} columns, got {len(row)}")
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise TapFileError(f"{path}:{lineno}: {exc}") from None
    return np.asarray(rows, dtype=np.float64).reshape(len(rows), width)


def make_drifting_taps(n_blocks=100, seed=2100, n_rx=4, n_tx=4):
    """Slowly drifting taps: nearly flat between neighbouring blocks but with a
    large swing over the whole run (periods of 150-400 blocks)."""
    rng = np.random.default_rng(seed)
    i, j = np.indices((n_rx, n_tx))
    base = SPATIAL_DECAY ** np.abs(i - j)
    amp_period = rng.uniform(150, 400, size=(n_rx, n_tx))
    amp_phase = rng.uniform(0, 2 * np.pi, size=(n_rx, n_tx))
    rot_period = rng.uniform(200, 400, size=(n_rx, n_tx))
    rot_phase = rng.uniform(0, 2 * np.pi, size=(n_rx, n_tx))
    table = np.empty((n_blocks, n_rx * n_tx * 2))
    for b in range(n_blocks):
        amp = base * (0.55 + 0.45 * np.cos(2 * np.pi * b / amp_period + amp_phase))
        ang = rot_phase + 2 * np.pi * b / rot_period
        table[b, 0::2] = (amp * np.cos(ang)).ravel()
        table[b, 1::2] = (amp * np.sin(ang)).ravel()
    return table
