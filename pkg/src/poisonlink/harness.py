"""Block-by-block experiment loop, SER scoring and result persistence.

One repetition draws a fresh channel (new tap phases), then for every block:
generate pilots and info symbols, optionally poison the pilots, let each
receiver adapt on the pilots it saw, decode the info symbols and score them.
Clean and poisoned runs with the same seed see identical channel, noise and
label streams; the attacker draws from its own stream.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import channel as ch
from .attack import AttackConfig, inject, pgd_poison
from .channel import TransmissionBlock
from .receivers import build_detector
from .training import (
    JointConfig, OnlineConfig, PilotBuffer, TrainingAborted, joint_train, meta_adapt,
    online_adapt,
)

log = logging.getLogger(__name__)

RECEIVERS = ("deepsic", "meta_deepsic", "mlp", "resnet")
ARCHITECTURE_OF = {"deepsic": "deepsic", "meta_deepsic": "deepsic", "mlp": "mlp",
                   "resnet": "resnet"}
FORMAT_VERSION = 1
CSV_COLUMNS = ["receiver", "channel", "snr_db", "poisoned", "rep", "block", "ser_block", "ser_cum"]

# SeedSequence spawn keys for the independent streams of one repetition
_CHANNEL, _DATA, _INIT, _META, _ATTACK, _SURROGATE = range(6)


class RecordFormatError(ValueError):
    pass


class ExperimentAborted(RuntimeError):
    def __init__(self, msg, partial):
        super().__init__(msg)
        self.partial = partial


# configuration -----------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    receivers: tuple = RECEIVERS
    channel: ch.ChannelConfig = ch.ChannelConfig()
    attack: AttackConfig | None = None
    blocks: int = 30
    l_pilot: int = 200
    l_info: int = 5000
    reps: int = 3
    seed: int = 0
    online: OnlineConfig = OnlineConfig()
    joint: JointConfig = JointConfig()
    attack_every: int = 1
    surrogate_channel: str = ch.LINEAR_TIME_VARYING
    receiver_epochs: dict = field(default_factory=dict)  # per-receiver online epoch override

    def __post_init__(self):
        if self.blocks < 1 or self.reps < 1:
            raise ValueError("blocks and reps must be positive")
        if self.l_pilot < 1 or self.l_info < 1:
            raise ValueError("pilot and info lengths must be positive")
        if self.attack_every < 1:
            raise ValueError("attack_every must be >= 1")
        unknown = set(self.receivers) - set(RECEIVERS)
        if unknown:
            raise ValueError(f"unknown receivers {sorted(unknown)}; choose from {list(RECEIVERS)}")
        for name, epochs in self.receiver_epochs.items():
            if name not in RECEIVERS or int(epochs) < 0:
                raise ValueError(f"bad receiver_epochs entry {name}={epochs}")

    def online_for(self, receiver):
        if receiver in self.receiver_epochs:
            return dataclasses.replace(self.online, epochs=int(self.receiver_epochs[receiver]))
        return self.online

    def to_dict(self):
        return dataclasses.asdict(self)

    def config_hash(self):
        blob = json.dumps(_jsonable(self.to_dict()), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_attack(self, attack):
        return dataclasses.replace(self, attack=attack)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# records -------------------------------------------------------------------------

@dataclass
class ExperimentRecord:
    receiver: str
    channel: str
    snr_db: float
    poisoned: bool
    rep: int
    ser_block: np.ndarray
    per_user_ser: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    seeds: dict = field(default_factory=dict)
    config_hash: str = ""
    l_pilot: int = 0
    aborted: bool = False

    @property
    def ser_cum(self):
        n = np.arange(1, len(self.ser_block) + 1)
        return np.cumsum(self.ser_block) / n

    @property
    def final_ser(self):
        return float(self.ser_cum[-1])

    def key(self):
        return (self.receiver, self.channel, self.snr_db, self.poisoned, self.l_pilot)

    def __eq__(self, other):
        if not isinstance(other, ExperimentRecord):
            return NotImplemented
        return (self.key() == other.key() and self.rep == other.rep
                and np.array_equal(self.ser_block, other.ser_block)
                and np.array_equal(self.per_user_ser, other.per_user_ser)
                and self.seeds == other.seeds and self.config_hash == other.config_hash
                and self.aborted == other.aborted)


def ser(decisions, labels):
    """Fraction of symbol vectors in which any user's decision is wrong."""
    decisions, labels = np.asarray(decisions), np.asarray(labels)
    if decisions.shape != labels.shape:
        raise ValueError(f"decisions {decisions.shape} and labels {labels.shape} differ")
    if len(labels) == 0:
        raise ValueError("no symbols to score")
    wrong = decisions != labels
    if wrong.ndim > 1:
        wrong = wrong.any(axis=tuple(range(1, wrong.ndim)))
    return float(wrong.mean())


def per_user_ser(decisions, labels):
    return (np.asarray(decisions) != np.asarray(labels)).mean(axis=0)


def mean_final_ser(records):
    return float(np.mean([r.final_ser for r in records]))


def ser_degradation_db(clean, poisoned):
    """10 log10(poisoned / clean) of final cumulative SER. Either side may be a
    record or a list of records (averaged over repetitions first)."""
    c = clean.final_ser if isinstance(clean, ExperimentRecord) else mean_final_ser(clean)
    p = poisoned.final_ser if isinstance(poisoned, ExperimentRecord) else mean_final_ser(poisoned)
    if c == 0:
        raise ZeroDivisionError("clean SER is zero; degradation ratio undefined")
    if p == 0:
        return float("-inf")
    return float(10.0 * np.log10(p / c))


def select(records, **criteria):
    return [r for r in records if all(getattr(r, k) == v for k, v in criteria.items())]


# receiver arms --------------------------------------------------------------------

class OnlineArm:
    """A detector retrained on every block's pilots, warm-started."""

    def __init__(self, name, detector, cfg):
        self.name = name
        self.detector = detector
        self.cfg = cfg

    def adapt(self, block):
        return online_adapt(self.detector, block.pilot_features, block.pilot_labels, self.cfg)

    def decode(self, block):
        return self.detector.decode(block.info_features)


class MetaArm(OnlineArm):
    """Meta-learned initialisation from the last few blocks, then fine-tuning."""

    def __init__(self, name, detector, cfg, rng):
        super().__init__(name, detector, cfg)
        self.rng = rng
        self.buffer = PilotBuffer(cfg.meta_window)
        self.meta_weights = None

    def adapt(self, block):
        losses, self.meta_weights = meta_adapt(
            self.detector, self.buffer, block.pilot_features, block.pilot_labels,
            self.cfg, self.rng, self.meta_weights)
        self.buffer.push(block.pilot_features, block.pilot_labels)
        return losses


def make_arm(name, cfg, init_rng, meta_rng):
    det = build_detector(ARCHITECTURE_OF[name], init_rng, cfg.channel.n_rx, cfg.channel.n_tx)
    if name == "meta_deepsic":
        return MetaArm(name, det, cfg.online_for(name), meta_rng)
    return OnlineArm(name, det, cfg.online_for(name))


# surrogate cache ----------------------------------------------------------------------

_SURROGATES = {}


def surrogate_for(cfg, channel_seed, seed_seq):
    """The attacker's jointly trained surrogate for one repetition (memoised)."""
    chan = ch.ChannelConfig(kind=cfg.surrogate_channel, snr_db=0.0,
                            k=cfg.channel.k, seed=channel_seed,
                            n_rx=cfg.channel.n_rx, n_tx=cfg.channel.n_tx)
    key = (chan, cfg.joint, repr(seed_seq.entropy), seed_seq.spawn_key)
    if key not in _SURROGATES:
        det, _ = joint_train(chan, cfg.joint, np.random.default_rng(seed_seq))
        _SURROGATES[key] = det.snapshot()
    from .receivers import load_detector
    return load_detector(_SURROGATES[key], cfg.channel.n_rx, cfg.channel.n_tx)


# experiment loop ------------------------------------------------------------------------

def _rep_streams(seed, rep):
    root = np.random.SeedSequence([seed, rep])
    return root.spawn(6)


def run_repetition(cfg, rep, arms=None):
    """Run every receiver of ``cfg`` through all blocks for one repetition."""
    streams = _rep_streams(cfg.seed, rep)
    channel_seed = int(streams[_CHANNEL].generate_state(1)[0])
    chan = dataclasses.replace(cfg.channel, seed=channel_seed)
    data_rng = np.random.default_rng(streams[_DATA])
    init_ss = streams[_INIT].spawn(len(cfg.receivers))
    meta_ss = streams[_META].spawn(len(cfg.receivers))
    if arms is None:
        arms = [make_arm(name, cfg, np.random.default_rng(i), np.random.default_rng(m))
                for name, i, m in zip(cfg.receivers, init_ss, meta_ss)]
    attack_rng = np.random.default_rng(streams[_ATTACK])
    surrogate = surrogate_for(cfg, channel_seed, streams[_SURROGATE]) if cfg.attack else None

    sers = {arm.name: [] for arm in arms}
    users = {arm.name: [] for arm in arms}
    aborted = None
    for b in range(cfg.blocks):
        block = ch.generate_block(chan, b, cfg.l_pilot, cfg.l_info, data_rng)
        if surrogate is not None and b % cfg.attack_every == 0:
            poison = pgd_poison(surrogate, block.pilot_features, block.pilot_labels,
                                cfg.attack, attack_rng)
            block = inject(block, poison)
        try:
            for arm in arms:
                arm.adapt(block)
                dec = arm.decode(block)
                sers[arm.name].append(ser(dec, block.info_labels))
                users[arm.name].append(per_user_ser(dec, block.info_labels))
        except TrainingAborted as exc:
            log.error("rep %d block %d: %s", rep, b, exc)
            aborted = f"rep {rep} block {b}: {exc}"
            break
    seeds = {"seed": cfg.seed, "rep": rep, "channel_seed": channel_seed}
    records = [
        ExperimentRecord(
            receiver=arm.name, channel=cfg.channel.kind, snr_db=float(cfg.channel.snr_db),
            poisoned=cfg.attack is not None, rep=rep,
            ser_block=np.asarray(sers[arm.name], dtype=np.float64),
            per_user_ser=np.asarray(users[arm.name], dtype=np.float64).reshape(-1, chan.n_tx),
            seeds=seeds, config_hash=cfg.config_hash(), l_pilot=cfg.l_pilot,
            aborted=aborted is not None)
        for arm in arms
    ]
    if aborted:
        raise ExperimentAborted(aborted, records)
    return records


def _rep_worker(args):
    cfg, rep = args
    return run_repetition(cfg, rep)


def run_experiment(cfg, workers=1, arms_factory=None):
    """All repetitions of one configuration; records ordered by (rep, receiver).

    ``arms_factory(rep)`` may supply custom receiver arms (objects with
    ``name``, ``adapt(block)`` and ``decode(block)``) in place of detectors.
    """
    reps = range(cfg.reps)
    if arms_factory is not None:
        return [r for rep in reps for r in run_repetition(cfg, rep, arms_factory(rep))]
    if workers > 1 and cfg.reps > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_rep_worker, [(cfg, rep) for rep in reps]))
    else:
        chunks = [run_repetition(cfg, rep) for rep in reps]
    return [r for chunk in chunks for r in chunk]


def run_paired(cfg, workers=1):
    """Clean and poisoned runs of the same configuration; ``cfg.attack`` must be set."""
    if cfg.attack is None:
        raise ValueError("paired run needs an attack configuration")
    clean = run_experiment(cfg.with_attack(None), workers)
    poisoned = run_experiment(cfg, workers)
    return clean, poisoned


# persistence ------------------------------------------------------------------------------

def _meta_path(path):
    return Path(path).with_suffix(".json")


def persist(records, path, config=None):
    """Write per-block series to ``path`` (CSV) and metadata next to it (JSON)."""
    path = Path(path)
    keys = [(r.receiver, r.channel, float(r.snr_db), bool(r.poisoned), r.rep) for r in records]
    if len(set(keys)) != len(keys):
        raise ValueError("records collide on (receiver, channel, snr_db, poisoned, rep); "
                         "persist runs with different pilot sizes to separate files")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            cum = r.ser_cum
            for b, (s, c) in enumerate(zip(r.ser_block, cum)):
                w.writerow([r.receiver, r.channel, repr(float(r.snr_db)), int(r.poisoned), r.rep,
                            b, repr(float(s)), repr(float(c))])
    meta = {
        "format_version": FORMAT_VERSION,
        "code_version": __version__,
        "config": _jsonable(config) if config is not None else None,
        "records": [
            {"receiver": r.receiver, "channel": r.channel, "snr_db": r.snr_db,
             "poisoned": r.poisoned, "rep": r.rep, "blocks": len(r.ser_block),
             "per_user_ser": r.per_user_ser.tolist(), "seeds": r.seeds,
             "config_hash": r.config_hash, "l_pilot": r.l_pilot, "aborted": r.aborted}
            for r in records
        ],
    }
    _meta_path(path).write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    return path


def load(path):
    """Inverse of :func:`persist`; raises RecordFormatError on any inconsistency."""
    path = Path(path)
    try:
        meta = json.loads(_meta_path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise RecordFormatError(f"cannot read metadata for {path}: {exc}") from None
    if meta.get("format_version") != FORMAT_VERSION:
        raise RecordFormatError(f"format version {meta.get('format_version')}, expected {FORMAT_VERSION}")
    series = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != CSV_COLUMNS:
            raise RecordFormatError(f"{path}: unexpected header")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(CSV_COLUMNS):
                raise RecordFormatError(f"{path}:{lineno}: expected {len(CSV_COLUMNS)} fields")
            try:
                key = (row[0], row[1], float(row[2]), bool(int(row[3])), int(row[4]))
                series.setdefault(key, []).append((int(row[5]), float(row[6])))
            except ValueError as exc:
                raise RecordFormatError(f"{path}:{lineno}: {exc}") from None
    records = []
    for m in meta["records"]:
        key = (m["receiver"], m["channel"], float(m["snr_db"]), bool(m["poisoned"]), int(m["rep"]))
        rows = series.get(key, [])
        if [b for b, _ in rows] != list(range(m["blocks"])):
            raise RecordFormatError(f"{path}: series for {key} incomplete")
        pus = np.asarray(m["per_user_ser"], dtype=np.float64)
        records.append(ExperimentRecord(
            receiver=m["receiver"], channel=m["channel"], snr_db=float(m["snr_db"]),
            poisoned=bool(m["poisoned"]), rep=int(m["rep"]),
            ser_block=np.asarray([s for _, s in rows], dtype=np.float64),
            per_user_ser=pus.reshape(m["blocks"], -1) if pus.size else pus.reshape(m["blocks"], 0),
            seeds=m["seeds"], config_hash=m["config_hash"], l_pilot=int(m["l_pilot"]),
            aborted=bool(m["aborted"])))
    return records


__all__ = [
    "ARCHITECTURE_OF", "CSV_COLUMNS", "ExperimentAborted", "ExperimentConfig", "ExperimentRecord",
    "MetaArm", "OnlineArm", "RECEIVERS", "RecordFormatError", "TransmissionBlock", "load",
    "make_arm", "mean_final_ser", "per_user_ser", "persist", "run_experiment", "run_paired",
    "run_repetition", "select", "ser", "ser_degradation_db",
]
