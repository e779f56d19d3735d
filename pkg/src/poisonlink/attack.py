"""The malicious user: PGD poisoning of pilots and transfer diagnostics.

All perturbations act on the real feature view [Re(y), Im(y)] of the received
samples. The PGD loop is the sign-gradient ascent with a componentwise
epsilon box around the clean sample and an [I_min, I_max] clip:

    y* = clip(y + U(-eps, eps), I_min, I_max)
    repeat Q times:
        y* = clip(y* + gamma * sign(grad_y L(y*, s)), I_min, I_max)
        y* = y + clip(y* - y, -eps, eps)

followed by a final clip so the output lies in both sets. With the default
bounds every clean sample is inside [I_min, I_max], so the box is unaffected.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import modem
from .channel import TransmissionBlock
from .numerics import Tensor, grad


class DegenerateGradientError(ArithmeticError):
    pass


@dataclass(frozen=True)
class AttackConfig:
    eps: float = 0.3
    step: float = 0.01
    iters: int = 250
    p_norm: int = 2          # recorded only; the box mechanics are componentwise
    accumulate: bool = True  # False: every step restarts from the clean sample
    bound_rule: str = "feature"  # or "modulus": I_max from complex magnitudes

    def __post_init__(self):
        if self.eps < 0:
            raise ValueError("eps must be non-negative")
        if not self.step > 0:
            raise ValueError("step size must be positive")
        if self.iters < 1:
            raise ValueError("at least one PGD iteration required")
        if self.bound_rule not in ("feature", "modulus"):
            raise ValueError("bound_rule must be 'feature' or 'modulus'")


@dataclass
class PoisonedPilotSet:
    originals: np.ndarray      # (N, 2*n_rx) clean features
    perturbed: np.ndarray      # (N, 2*n_rx) poisoned features
    labels: np.ndarray         # (N, n_tx)
    i_min: float = 0.0
    i_max: float = 0.0
    skipped: list = field(default_factory=list)
    loss_trace: list = field(default_factory=list)

    @property
    def delta(self):
        return self.perturbed - self.originals

    def __len__(self):
        return len(self.perturbed)


def compute_clip_bounds(features, rule="feature"):
    """Return ``(I_min, I_max)`` with I_max the largest |feature| over the set.

    With ``rule="modulus"`` the largest complex magnitude |y_i| is used instead.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.size == 0:
        raise ValueError("cannot derive clip bounds from an empty pilot set")
    if rule == "modulus":
        i_max = float(np.abs(modem.complex_from_features(features)).max())
    else:
        i_max = float(np.abs(features).max())
    return -i_max, i_max


def per_symbol_input_grads(model, features, labels):
    """Rows of d(sum of per-symbol losses)/d(features); one row per symbol.

    The model is evaluated in inference mode, so rows are independent.
    """
    x = Tensor(np.asarray(features, dtype=np.float64), requires_grad=True)
    loss = model.loss(x, labels)
    (g,) = grad(loss, [x])
    return g * len(features)


def per_symbol_losses(model, features, labels):
    return model.sample_losses(features, labels)


def pgd_poison(surrogate, features, labels, cfg=AttackConfig(), rng=None, bounds=None,
               trace_every=0):
    """Poison every pilot independently by non-targeted loss ascent on ``surrogate``."""
    rng = np.random.default_rng() if rng is None else rng
    surrogate.eval()
    y = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    i_min, i_max = compute_clip_bounds(y, cfg.bound_rule) if bounds is None else bounds
    eps = cfg.eps
    y_star = np.clip(y + rng.uniform(-eps, eps, size=y.shape), i_min, i_max)
    y_star = np.clip(y + np.clip(y_star - y, -eps, eps), i_min, i_max)
    alive = np.ones(len(y), dtype=bool)
    trace = []
    for it in range(cfg.iters):
        g = per_symbol_input_grads(surrogate, y_star, labels)
        bad = ~np.all(np.isfinite(g), axis=1)
        if bad.any():
            alive &= ~bad
            g[bad] = 0.0
        base = y_star if cfg.accumulate else y
        step = np.where(alive[:, None], base + cfg.step * np.sign(g), y_star)
        y_star = np.clip(step, i_min, i_max)
        y_star = np.clip(y + np.clip(y_star - y, -eps, eps), i_min, i_max)
        if trace_every and (it + 1) % trace_every == 0:
            trace.append(float(per_symbol_losses(surrogate, y_star, labels).mean()))
    skipped = np.flatnonzero(~alive).tolist()
    if skipped:
        y_star[~alive] = np.clip(y[~alive], i_min, i_max)
    return PoisonedPilotSet(y.copy(), y_star, labels.copy(), i_min, i_max, skipped, trace)


def inject(block, poison):
    """Replace the block's pilot samples with the poisoned ones; labels and the
    info partition are left untouched."""
    if poison is None or len(poison) == 0:
        return block
    n_pilot = len(block.pilot_rx)
    if poison.perturbed.shape != (n_pilot, 2 * block.pilot_rx.shape[1]):
        raise ValueError(f"poison for {len(poison)} pilots does not fit a block of {n_pilot}")
    if not np.array_equal(poison.labels, block.pilot_labels):
        raise ValueError("poison labels are not aligned with the block's pilots")
    return dataclasses.replace(block, pilot_rx=modem.complex_from_features(poison.perturbed))


def l2_optimal_delta(model, features, labels, eps):
    """Single-step L2 ascent direction scaled to length eps, per symbol."""
    g = per_symbol_input_grads(model, np.atleast_2d(features), np.atleast_2d(labels))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise DegenerateGradientError("zero input gradient; ascent direction undefined")
    out = eps * g / norms
    return out if np.ndim(features) == 2 else out[0]


@dataclass
class TransferDiagnostic:
    delta_actual: np.ndarray
    delta_bound: np.ndarray
    cosine: np.ndarray


def transfer_diagnostic(surrogate, target, features, labels, eps):
    """First-order loss increase on ``target`` from the surrogate's L2 step,
    next to the white-box bound eps * ||grad_target|| and the gradient cosine."""
    features = np.atleast_2d(features)
    labels = np.atleast_2d(labels)
    g_s = per_symbol_input_grads(surrogate, features, labels)
    g_t = per_symbol_input_grads(target, features, labels)
    n_s = np.linalg.norm(g_s, axis=1)
    n_t = np.linalg.norm(g_t, axis=1)
    if np.any(n_s == 0):
        raise DegenerateGradientError("zero surrogate gradient")
    if np.any(n_t == 0):
        raise DegenerateGradientError("zero target gradient; cosine undefined")
    dot = (g_s * g_t).sum(axis=1)
    return TransferDiagnostic(eps * dot / n_s, eps * n_t, dot / (n_s * n_t))


POISON_CSV_COLUMNS = (
    ["block", "symbol_index"]
    + [f"clean_{i}" for i in range(8)]
    + [f"poisoned_{i}" for i in range(8)]
    + [f"label_{u}" for u in range(4)]
)


def export_poison_csv(path, sets):
    """Write ``{block_index: PoisonedPilotSet}`` to one CSV, one row per symbol."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(POISON_CSV_COLUMNS)
        for b in sorted(sets):
            s = sets[b]
            for i in range(len(s)):
                w.writerow([b, i] + [repr(float(v)) for v in s.originals[i]]
                           + [repr(float(v)) for v in s.perturbed[i]]
                           + [int(v) for v in s.labels[i]])


def load_poison_csv(path):
    out = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != POISON_CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected poison CSV header")
        rows = {}
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(POISON_CSV_COLUMNS):
                raise ValueError(f"{path}:{lineno}: expected {len(POISON_CSV_COLUMNS)} columns")
            rows.setdefault(int(row[0]), []).append(row)
    for b, rs in rows.items():
        arr = np.array([[float(v) for v in r[2:18]] for r in rs])
        lab = np.array([[int(v) for v in r[18:]] for r in rs])
        clean, pois = arr[:, :8], arr[:, 8:]
        lo, hi = compute_clip_bounds(clean)
        out[b] = PoisonedPilotSet(clean, pois, lab, lo, hi)
    return out


__all__ = [
    "AttackConfig", "DegenerateGradientError", "PoisonedPilotSet", "TransferDiagnostic",
    "TransmissionBlock", "compute_clip_bounds", "export_poison_csv", "inject",
    "l2_optimal_delta", "load_poison_csv", "per_symbol_input_grads", "per_symbol_losses",
    "pgd_poison", "transfer_diagnostic",
]
