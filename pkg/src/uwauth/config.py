"""Experiment configuration: YAML loading and validation with line numbers."""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field

import yaml

from . import datagen
from .exceptions import ConfigurationError
from .nn import TrainConfig
from .schemes import AE, CLDAE, GLOBAL, LD, RECONSTRUCTION_UNITS, SCHEMES, parse_global_config

PAPER_GLOBAL_CONFIGS = ["4-3-2-1||-3-1", "4-3-2-||-3-3-1", "4-3-||-6-3-3-1", "4-||-9-6-3-3-1"]

TRAIN_KEYS = ("learning_rate", "epochs", "batch_size", "optimizer", "early_stop_patience", "restarts")


@dataclass
class ExperimentConfig:
    N: int = 3
    K: int = 4
    alphas: list = field(default_factory=lambda: [round(0.1 * i, 1) for i in range(11)])
    Ms: list = field(default_factory=lambda: [1, 2, 3])
    schemes: list = field(default_factory=lambda: [AE, LD, CLDAE, GLOBAL])
    global_configs: list = field(default_factory=lambda: list(PAPER_GLOBAL_CONFIGS))
    neuron_budget: int | None = 34
    samples_per_class: int = 100_000
    split: datagen.SplitSpec = field(default_factory=datagen.SplitSpec)
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    scenario: str = "default"
    ingest: str | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    output: str = "results"
    standardize: bool = True
    freeze_decision: bool = True
    reconstruction_units: str = "raw"
    save_bundles: bool = True
    roc: bool = False

    def cells(self):
        """``(scheme, M, notation)`` triples trained for every (alpha, seed)."""
        out = []
        for scheme in self.schemes:
            if scheme == LD:
                out.append((LD, 1, None))
            elif scheme == GLOBAL:
                for notation in self.global_configs:
                    out.append((GLOBAL, parse_global_config(notation, self.N).M, notation))
            else:
                out.extend((scheme, M, None) for M in self.Ms)
        return out

    def to_dict(self):
        d = asdict(self)
        d["split"] = {"train": self.split.train_frac, "val": self.split.val_frac, "test": self.split.test_frac}
        d["train"] = {k: getattr(self.train, k) for k in TRAIN_KEYS}
        return d


@dataclass
class Diagnostic:
    level: str
    field: str
    message: str
    line: int | None = None

    def format(self, path=""):
        where = f"{path}:{self.line}" if self.line else str(path)
        return f"{where}: {self.level}: {self.field}: {self.message}"


class ConfigErrors(ConfigurationError):
    """Raised with every violation found, not just the first."""

    def __init__(self, diagnostics, path=""):
        self.diagnostics = diagnostics
        self.path = path
        super().__init__("\n".join(d.format(path) for d in diagnostics))


def _line_index(node, prefix=(), out=None):
    """Map key paths to 1-based line numbers from a composed YAML tree."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = prefix + (str(k.value),)
            out[path] = k.start_mark.line + 1
            _line_index(v, path, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            out[prefix + (i,)] = v.start_mark.line + 1
            _line_index(v, prefix + (i,), out)
    return out


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


class _Checker:
    def __init__(self, raw, lines):
        self.raw = raw
        self.lines = lines
        self.diags: list[Diagnostic] = []

    def line(self, *path):
        while path:
            if path in self.lines:
                return self.lines[path]
            path = path[:-1]
        return None

    def error(self, message, *path):
        self.diags.append(Diagnostic("error", ".".join(map(str, path)) or "<root>", message, self.line(*path)))

    def warn(self, message, *path):
        self.diags.append(Diagnostic("warning", ".".join(map(str, path)) or "<root>", message, self.line(*path)))


def _check(raw, lines, base_dir) -> tuple[ExperimentConfig | None, list[Diagnostic]]:
    c = _Checker(raw, lines)
    cfg = ExperimentConfig()
    known = set(ExperimentConfig.__dataclass_fields__)
    for key in raw:
        if key not in known:
            c.error(f"unknown key (known: {', '.join(sorted(known))})", key)

    def int_field(name, lo):
        if name not in raw:
            return
        v = raw[name]
        if not _is_int(v) or v < lo:
            c.error(f"must be an integer >= {lo}, got {v!r}", name)
        else:
            setattr(cfg, name, v)

    int_field("N", 1)
    int_field("K", 1)
    int_field("samples_per_class", 10)

    if "alphas" in raw:
        v = raw["alphas"]
        if not isinstance(v, list) or not v:
            c.error("must be a non-empty list of numbers in [0, 1]", "alphas")
        else:
            ok = True
            for i, a in enumerate(v):
                if not _is_num(a) or not 0.0 <= a <= 1.0:
                    c.error(f"alpha must lie in [0, 1], got {a!r}", "alphas", i)
                    ok = False
            if len(set(v)) != len(v):
                c.error("duplicate alpha values", "alphas")
                ok = False
            if ok:
                cfg.alphas = [float(a) for a in v]

    for name in ("Ms", "seeds"):
        if name not in raw:
            continue
        v = raw[name]
        lo = 1 if name == "Ms" else 0
        if not isinstance(v, list) or not v:
            c.error("must be a non-empty list of integers", name)
            continue
        ok = True
        for i, x in enumerate(v):
            if not _is_int(x) or x < lo:
                c.error(f"must be an integer >= {lo}, got {x!r}", name, i)
                ok = False
        if len(set(map(repr, v))) != len(v):
            c.error("duplicate entries", name)
            ok = False
        if ok:
            setattr(cfg, name, list(v))

    if "schemes" in raw:
        v = raw["schemes"]
        if not isinstance(v, list) or not v:
            c.error(f"must be a non-empty list drawn from {list(SCHEMES)}", "schemes")
        else:
            ok = True
            for i, s in enumerate(v):
                if s not in SCHEMES:
                    c.error(f"unknown scheme {s!r} (use {', '.join(SCHEMES)})", "schemes", i)
                    ok = False
            if len(set(map(repr, v))) != len(v):
                c.error("duplicate schemes", "schemes")
                ok = False
            if ok:
                cfg.schemes = list(v)

    if "neuron_budget" in raw:
        v = raw["neuron_budget"]
        if v is not None and (not _is_int(v) or v < 1):
            c.error(f"must be a positive integer or null, got {v!r}", "neuron_budget")
        else:
            cfg.neuron_budget = v

    if "global_configs" in raw:
        v = raw["global_configs"]
        if not isinstance(v, list) or not all(isinstance(x, str) for x in v):
            c.error("must be a list of 'a1-...||b1-...' strings", "global_configs")
        else:
            cfg.global_configs = list(v)
    # notations are checked even when GLOBAL is not scheduled, so a broken layout never sits unnoticed
    if GLOBAL in cfg.schemes and not cfg.global_configs:
        c.error("GLOBAL needs at least one entry in global_configs", "global_configs")
    seen = {}
    for i, notation in enumerate(cfg.global_configs):
        try:
            gc = parse_global_config(notation, cfg.N, cfg.neuron_budget)
        except ConfigurationError as exc:
            c.error(str(exc), "global_configs", i)
            continue
        if gc.M in seen:
            c.error(f"{notation!r} and {seen[gc.M]!r} both have M={gc.M}; result rows would collide",
                    "global_configs", i)
        seen[gc.M] = notation

    if CLDAE in cfg.schemes and 1 in cfg.Ms:
        c.warn("CLDAE with M=1 degenerates to LD (identical scores under identical seeds)", "Ms")
    if LD in cfg.schemes and any(M != 1 for M in cfg.Ms):
        c.warn("LD always reports one value per sensor; it runs once at M=1 regardless of Ms", "schemes")

    if "split" in raw:
        v = raw["split"]
        if not isinstance(v, dict):
            c.error("must be a mapping with train, val and test fractions", "split")
        else:
            extra = set(v) - {"train", "val", "test"}
            for k in sorted(extra, key=str):
                c.error("unknown key (use train, val, test)", "split", k)
            fr = {k: v.get(k, getattr(cfg.split, f"{k}_frac")) for k in ("train", "val", "test")}
            bad = [k for k, x in fr.items() if not _is_num(x) or x < 0]
            for k in bad:
                c.error(f"must be a non-negative number, got {fr[k]!r}", "split", k)
            if not bad and not extra:
                try:
                    cfg.split = datagen.SplitSpec(float(fr["train"]), float(fr["val"]), float(fr["test"]))
                except ConfigurationError as exc:
                    c.error(str(exc), "split")
            if not bad and (fr["train"] == 0 or fr["val"] == 0 or fr["test"] == 0):
                c.error("train, val and test fractions must all be positive for a sweep", "split")

    if "scenario" in raw and "ingest" in raw and raw["ingest"] is not None:
        c.error("give either scenario or ingest, not both", "ingest")
    if "scenario" in raw:
        v = raw["scenario"]
        if v not in datagen.SCENARIOS:
            c.error(f"unknown scenario {v!r} (known: {', '.join(sorted(datagen.SCENARIOS))})", "scenario")
        else:
            cfg.scenario = v
    if raw.get("ingest") is not None:
        v = raw["ingest"]
        p = v if not isinstance(v, str) or os.path.isabs(v) else os.path.join(base_dir, v)
        if not isinstance(v, str) or not os.path.isfile(p):
            c.error(f"series file not found: {v!r}", "ingest")
        else:
            cfg.ingest = p

    if "train" in raw:
        v = raw["train"]
        if not isinstance(v, dict):
            c.error("must be a mapping", "train")
        else:
            good = {}
            for k, x in v.items():
                if k == "seed":
                    c.error("training seeds come from the seeds list", "train", k)
                elif k not in TRAIN_KEYS:
                    c.error(f"unknown key (known: {', '.join(TRAIN_KEYS)})", "train", k)
                else:
                    try:
                        TrainConfig(**{k: x})
                    except (ConfigurationError, TypeError) as exc:
                        c.error(str(exc), "train", k)
                    else:
                        good[k] = x
            try:
                cfg.train = TrainConfig(**good)
            except ConfigurationError as exc:
                c.error(str(exc), "train")

    for name in ("standardize", "freeze_decision", "save_bundles", "roc"):
        if name in raw:
            if not isinstance(raw[name], bool):
                c.error(f"must be true or false, got {raw[name]!r}", name)
            else:
                setattr(cfg, name, raw[name])
    if "reconstruction_units" in raw:
        v = raw["reconstruction_units"]
        if v not in RECONSTRUCTION_UNITS:
            c.error(f"must be one of {', '.join(RECONSTRUCTION_UNITS)}, got {v!r}", "reconstruction_units")
        else:
            cfg.reconstruction_units = v
    if "output" in raw:
        if not isinstance(raw["output"], str) or not raw["output"]:
            c.error("must be a directory path", "output")
        else:
            cfg.output = raw["output"]

    n_train = int(round(cfg.split.train_frac * cfg.samples_per_class)) * 2
    if cfg.train.batch_size > n_train:
        c.error(f"batch_size {cfg.train.batch_size} exceeds the {n_train} training rows", "train", "batch_size")

    if not any(d.level == "error" for d in c.diags) and cfg.ingest is not None:
        try:
            series = datagen.read_series_csv(cfg.ingest)
            bank = datagen.fit_marginal_bank(series)
        except ConfigurationError as exc:
            c.error(str(exc), "ingest")
        else:
            if (bank.n_sensors, bank.n_features) != (cfg.N, cfg.K):
                c.error(f"series file has {bank.n_sensors} sensors x {bank.n_features} features, "
                        f"config says N={cfg.N}, K={cfg.K}", "ingest")

    errors = [d for d in c.diags if d.level == "error"]
    return (None if errors else cfg), c.diags


def read_config(path) -> tuple[ExperimentConfig | None, list[Diagnostic]]:
    """Parse and validate a config file, collecting every problem found."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigurationError(f"cannot read {path}: {exc.strerror}") from None
    try:
        node = yaml.compose(text)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        return None, [Diagnostic("error", "<syntax>", str(getattr(exc, "problem", exc)), line)]
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        return None, [Diagnostic("error", "<root>", "top level must be a mapping", 1)]
    return _check(raw, _line_index(node), os.path.dirname(os.path.abspath(path)))


def load_config(path) -> tuple[ExperimentConfig, list[Diagnostic]]:
    """Like :func:`read_config` but raises :class:`ConfigErrors` on any error."""
    cfg, diags = read_config(path)
    if cfg is None:
        raise ConfigErrors([d for d in diags if d.level == "error"], path)
    return cfg, [d for d in diags if d.level == "warning"]


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
