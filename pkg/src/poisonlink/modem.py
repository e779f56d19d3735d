"""QPSK mapping and the label encodings shared by every receiver."""

import numpy as np

N_CLASSES = 4

# Gray order: first bit -> sign of real part, second bit -> sign of imag part.
CONSTELLATION = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2.0)


def _check_range(labels, hi, what):
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= hi):
        raise ValueError(f"{what} out of range [0, {hi})")
    return labels


def modulate(labels):
    """Per-user class indices (any shape) to unit-power QPSK points."""
    labels = _check_range(labels, N_CLASSES, "symbol label")
    return CONSTELLATION[labels.astype(np.intp)]


def demodulate_hard(x):
    """Nearest constellation point index for each complex entry."""
    x = np.asarray(x)
    dist = np.abs(x[..., None] - CONSTELLATION)
    return dist.argmin(axis=-1)


def joint_of(per_user):
    """Little-endian base-4 joint index: sum(per_user[..., u] * 4**u)."""
    per_user = _check_range(per_user, N_CLASSES, "symbol label").astype(np.int64)
    weights = N_CLASSES ** np.arange(per_user.shape[-1])
    return per_user @ weights


def users_of(joint, n_users=4):
    joint = _check_range(joint, N_CLASSES ** n_users, "joint label").astype(np.int64)
    return np.stack([(joint // N_CLASSES ** u) % N_CLASSES for u in range(n_users)], axis=-1)


def marginal_map(n_users=4):
    """(4**n_users, n_users*4) 0/1 matrix folding joint probabilities into
    per-user marginals (column u*4+c collects joints whose user u is c)."""
    users = users_of(np.arange(N_CLASSES ** n_users), n_users)
    out = np.zeros((N_CLASSES ** n_users, n_users * N_CLASSES))
    for u in range(n_users):
        out[np.arange(len(users)), u * N_CLASSES + users[:, u]] = 1.0
    return out


def real_features(y):
    """Complex (..., n_rx) to real (..., 2*n_rx) as [Re(y), Im(y)]."""
    y = np.asarray(y)
    return np.concatenate([y.real, y.imag], axis=-1).astype(np.float64)


def complex_from_features(f):
    f = np.asarray(f, dtype=np.float64)
    n = f.shape[-1] // 2
    return f[..., :n] + 1j * f[..., n:]
