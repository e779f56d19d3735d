"""Experiment presets: YAML files resolved into harness configurations.

A preset holds base keys plus one block per scale under ``scales``. The
effective configuration is base <- scale block <- overrides, where overrides
come from the command line. Every resolved value is echoed into the results
metadata so a run can be reproduced from its outputs alone.
"""

from __future__ import annotations

import copy
import csv
import dataclasses
import logging
from pathlib import Path

import numpy as np
import yaml

from . import channel as ch
from . import harness
from .attack import AttackConfig
from .training import JointConfig, OnlineConfig

log = logging.getLogger(__name__)

PRESET_DIR = Path(__file__).parent / "presets"
SCALES = ("desk", "full")
PLOTS = ("ser_vs_block", "ser_vs_snr", "ser_vs_pilot")

_TOP_KEYS = {"name", "title", "channel", "receivers", "attack", "seed", "block_snr", "plots",
             "scales", "scale", "out_dir", "workers"}
_SCALE_KEYS = {"snr", "pilot_sizes", "blocks", "l_info", "reps", "receiver_epochs", "online",
               "joint", "attack_every"}


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending field."""


def available_presets():
    return sorted(p.stem for p in PRESET_DIR.glob("*.yaml"))


def preset_path(name):
    path = PRESET_DIR / f"{name}.yaml"
    if not path.exists():
        raise KeyError(name)
    return path


def read_config(path):
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    raw.setdefault("name", path.stem)
    raw["_source"] = str(path)
    return raw


def _check_keys(mapping, allowed, where):
    unknown = sorted(set(mapping) - allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}; allowed {sorted(allowed)}")


def _dataclass_from(cls, mapping, where):
    if mapping is None:
        return cls()
    if not isinstance(mapping, dict):
        raise ConfigError(f"{where}: expected a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    _check_keys(mapping, names, where)
    values = {k: tuple(v) if isinstance(v, list) else v for k, v in mapping.items()}
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _int_list(value, where):
    values = value if isinstance(value, (list, tuple)) else [value]
    try:
        out = [int(v) if float(v).is_integer() else float(v) for v in values]
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: expected a number or list of numbers, got {value!r}") from None
    if not out:
        raise ConfigError(f"{where}: must not be empty")
    return out


def resolve(raw, scale=None, overrides=None):
    """Merge base, scale block and overrides into one flat effective config dict."""
    raw = copy.deepcopy(raw)
    source = raw.pop("_source", None)
    _check_keys(raw, _TOP_KEYS, "config")
    scale = scale or raw.get("scale") or "desk"
    if scale not in SCALES:
        raise ConfigError(f"scale: {scale!r} is not one of {list(SCALES)}")
    scales = raw.pop("scales", {}) or {}
    _check_keys(scales, set(SCALES), "scales")
    block = scales.get(scale, {}) or {}
    _check_keys(block, _SCALE_KEYS, f"scales.{scale}")
    eff = {k: v for k, v in raw.items() if k != "scale"}
    eff.update(block)
    for key, value in (overrides or {}).items():
        if value is not None:
            eff[key] = value
    eff["scale"] = scale
    eff.setdefault("seed", 0)
    eff.setdefault("receivers", list(harness.RECEIVERS))
    eff.setdefault("plots", list(PLOTS[:2]))
    eff.setdefault("workers", 1)

    # field-level validation
    if eff.get("attack") is True:
        eff["attack"] = {}
    if eff.get("attack") not in (None, False):
        _dataclass_from(AttackConfig, eff["attack"], "attack")
    receivers = eff["receivers"]
    if isinstance(receivers, str):
        receivers = [r for r in receivers.split(",") if r]
    bad = [r for r in receivers if r not in harness.RECEIVERS]
    if bad or not receivers:
        raise ConfigError(f"receivers: unknown {bad}; choose from {list(harness.RECEIVERS)}")
    eff["receivers"] = list(receivers)
    eff["snr"] = _int_list(eff.get("snr", 14), "snr")
    eff["pilot_sizes"] = [int(v) for v in _int_list(eff.get("pilot_sizes", 200), "pilot_sizes")]
    for key in ("blocks", "l_info", "reps"):
        if key not in eff:
            raise ConfigError(f"{key}: missing (set it at top level or under scales.{scale})")
    bad_plots = [p for p in eff["plots"] if p not in PLOTS]
    if bad_plots:
        raise ConfigError(f"plots: unknown {bad_plots}; choose from {list(PLOTS)}")
    chan = dict(eff.get("channel") or {})
    if chan.get("tap_file") == "sample":
        chan["tap_file"] = str(ch.SAMPLE_TAP_FILE)
    elif chan.get("tap_file") and source and not Path(chan["tap_file"]).is_absolute():
        chan["tap_file"] = str((Path(source).parent / chan["tap_file"]).resolve())
    eff["channel"] = chan
    if chan.get("kind") == ch.TAP_FILE and chan.get("tap_file"):
        n_taps = len(ch.load_tap_file(chan["tap_file"]))
        if int(eff["blocks"]) > n_taps:
            raise ConfigError(f"blocks: {eff['blocks']} exceeds the {n_taps} blocks in the tap file")
    experiment_configs(eff)  # surface config errors before any work starts
    return eff


def experiment_configs(eff):
    """One poisoned-or-clean ExperimentConfig per (snr, pilot size), in sweep order."""
    attack = eff.get("attack")
    attack_cfg = None if attack in (None, False) else _dataclass_from(AttackConfig, attack, "attack")
    out = []
    for snr in eff["snr"]:
        chan_map = dict(eff["channel"], snr_db=float(snr))
        chan = _dataclass_from(ch.ChannelConfig, chan_map, "channel")
        for lp in eff["pilot_sizes"]:
            try:
                cfg = harness.ExperimentConfig(
                    receivers=tuple(eff["receivers"]), channel=chan, attack=attack_cfg,
                    blocks=int(eff["blocks"]), l_pilot=int(lp), l_info=int(eff["l_info"]),
                    reps=int(eff["reps"]), seed=int(eff["seed"]),
                    online=_dataclass_from(OnlineConfig, eff.get("online"), "online"),
                    joint=_dataclass_from(JointConfig, eff.get("joint"), "joint"),
                    attack_every=int(eff.get("attack_every", 1)),
                    receiver_epochs=dict(eff.get("receiver_epochs") or {}))
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
            out.append(cfg)
    return out


def results_name(name, snr, l_pilot):
    return f"{name}_snr{snr:g}_lp{l_pilot}.csv"


def run(eff, out_dir, progress=None):
    """Execute every configuration of a resolved preset; return (records, written paths)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    name = eff["name"]
    records, written = [], []
    for cfg in experiment_configs(eff):
        if progress:
            progress(f"{name}: {cfg.channel.kind} snr={cfg.channel.snr_db:g} dB "
                     f"L_pilot={cfg.l_pilot} ({'paired' if cfg.attack else 'clean only'})")
        workers = int(eff.get("workers", 1))
        if cfg.attack is not None:
            clean, poisoned = harness.run_paired(cfg, workers)
            recs = clean + poisoned
        else:
            recs = harness.run_experiment(cfg, workers)
        path = out_dir / results_name(name, cfg.channel.snr_db, cfg.l_pilot)
        harness.persist(recs, path, config={"effective": eff, "experiment": cfg.to_dict()})
        written += [path, path.with_suffix(".json")]
        records += recs
    summary = out_dir / f"{name}_summary.csv"
    write_summary(records, summary)
    written.append(summary)
    return records, written


SUMMARY_COLUMNS = ["receiver", "channel", "snr_db", "l_pilot", "clean_ser", "poisoned_ser",
                   "degradation_db"]


def summarize(records):
    """Mean final cumulative SER per (receiver, snr, pilot size) and arm."""
    groups = {}
    for r in records:
        groups.setdefault((r.receiver, r.channel, r.snr_db, r.l_pilot), {}).setdefault(
            r.poisoned, []).append(r)
    rows = []
    for (recv, chan, snr, lp), arms in groups.items():
        clean = harness.mean_final_ser(arms[False]) if False in arms else float("nan")
        pois = harness.mean_final_ser(arms[True]) if True in arms else float("nan")
        if clean > 0 and np.isfinite(pois):
            deg = harness.ser_degradation_db(arms[False], arms[True])
        else:
            deg = float("nan")
        rows.append([recv, chan, snr, lp, clean, pois, deg])
    return rows


def write_summary(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for row in summarize(records):
            w.writerow(row[:4] + [repr(float(v)) for v in row[4:]])
    return path
