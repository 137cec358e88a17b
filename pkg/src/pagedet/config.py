"""Declarative run configuration.

One TOML file configures every stage. Precedence is CLI override > file >
defaults; unknown keys are rejected by name so typos fail loudly. Defaults
follow the reference hyperparameters: learning rate 3e-4, weight decay 1e-5,
dropout 0.5, batch size 6, three attention heads, 256-d embeddings, blank-run
height R = 15.

All randomness stems from the single master `seed`. Each stage derives its
generator from the tuple (seed, stage ordinal), and the corpus generator
extends that tuple with the page index, so any stage or page can be
regenerated in isolation.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .classifier import DEFAULT_CLASSES
from .features import FeatureConfig
from .page import BinarizeConfig
from .proposals import GridConfig
from .synth import TABLE1_TRAIN_COUNTS, LayoutSpec


class ConfigError(ValueError):
    """Invalid or unknown configuration content."""


STAGE_ORDINALS = {"synth": 0, "pretrain": 1, "train": 2, "detect": 3, "render": 4}

DEFAULTS = {
    "seed": 0,
    "grid": {"R": 15, "divider_band_width": 5, "min_cc_area": 9,
             "max_redivide_iters": 3, "redivide_factor": 2,
             "avg_height_multiplier": 3},
    "binarize": {"mode": "fixed", "threshold": 128},
    "features": {"warp_size": 64, "conv_channels": [8, 16], "kernel": 3,
                 "stride": 2, "pool_grid": 4},
    "model": {"classes": list(DEFAULT_CLASSES), "n_heads": 3, "head_dim": 64,
              "embed_hidden": 512, "head_hidden": [256, 128], "dropout": 0.5,
              "delta_neighbor": 20, "use_context": True},
    "pretrain": {"epochs": 10, "k_neg": 5, "lr": 3e-4, "weight_decay": 1e-5,
                 "freeze_backbone": False},
    "train": {"epochs": 20, "batch_size": 6, "lr": 3e-4, "weight_decay": 1e-5},
    "synth": {"page_width": 640, "page_height": 880, "margin": 36,
              "columns": "mixed", "mode": "weighted", "min_gap": 16,
              "max_gap": 19, "caption_token_prob": 0.9, "presence_prob": 0.95,
              "class_weights": dict(TABLE1_TRAIN_COUNTS)},
    "eval": {"iou_thresh": 0.8, "strict_fp": False},
    "run": {"pretrain_pages": 40, "train_pages": 30, "test_pages": 10},
}

# keys whose values are open tables (contents not matched against defaults)
_OPEN_TABLES = {"synth.class_weights"}

KEY_HELP = {
    "seed": "master seed; stages derive their generators from it",
    "grid.R": "minimum blank-row run height in pixels",
    "grid.divider_band_width": "width a column divider band must span blank",
    "grid.min_cc_area": "connected components smaller than this are filtered",
    "grid.max_redivide_iters": "cap on adaptive re-divisions",
    "grid.redivide_factor": "R multiplier per re-division",
    "grid.avg_height_multiplier": "re-divide when mean leaf height < this * R",
    "binarize.mode": "'fixed' threshold or 'otsu'",
    "binarize.threshold": "fixed-mode luminance cutoff; ink is strictly below",
    "features.warp_size": "square side regions are warped to",
    "features.conv_channels": "channels of the two conv layers",
    "features.kernel": "conv kernel side",
    "features.stride": "conv stride",
    "features.pool_grid": "average-pool grid side for value vectors",
    "model.classes": "class vocabulary",
    "model.n_heads": "attention heads",
    "model.head_dim": "projected query/key width per head",
    "model.embed_hidden": "hidden width of the embedding net",
    "model.head_hidden": "hidden widths of the classifier head",
    "model.dropout": "dropout rate at the head's hidden layers",
    "model.delta_neighbor": "neighbor expansion radius in pixels",
    "model.use_context": "false trains/evaluates with a zeroed context vector",
    "pretrain.epochs": "embedding pretraining epochs",
    "pretrain.k_neg": "negatives sampled per positive pair",
    "pretrain.lr": "pretraining learning rate",
    "pretrain.weight_decay": "pretraining weight decay",
    "pretrain.freeze_backbone": "keep conv weights fixed during pretraining",
    "train.epochs": "classifier training epochs",
    "train.batch_size": "regions per optimizer step",
    "train.lr": "training learning rate",
    "train.weight_decay": "training weight decay",
    "synth.page_width": "generated page width",
    "synth.page_height": "generated page height",
    "synth.margin": "blank page border",
    "synth.columns": "1, 2, 3 or 'mixed'",
    "synth.mode": "'weighted', 'grammar' or 'context-pair'",
    "synth.min_gap": "minimum vertical gap between blocks",
    "synth.max_gap": "maximum vertical gap between blocks",
    "synth.caption_token_prob": "chance a caption's first token names it",
    "synth.presence_prob": "grammar mode: chance each class appears",
    "synth.class_weights": "weighted mode: per-class draw weights",
    "eval.iou_thresh": "IoU threshold for matching",
    "eval.strict_fp": "count matchless detections as false positives",
    "run.pretrain_pages": "pages generated for the pretraining corpus",
    "run.train_pages": "pages generated for the training corpus",
    "run.test_pages": "pages generated for the held-out corpus",
}


@dataclass
class ModelSettings:
    classes: list
    n_heads: int
    head_dim: int
    embed_hidden: int
    head_hidden: list
    dropout: float
    delta_neighbor: int
    use_context: bool


@dataclass
class PretrainSettings:
    epochs: int
    k_neg: int
    lr: float
    weight_decay: float
    freeze_backbone: bool


@dataclass
class TrainSettings:
    epochs: int
    batch_size: int
    lr: float
    weight_decay: float


@dataclass
class EvalSettings:
    iou_thresh: float
    strict_fp: bool


@dataclass
class RunSettings:
    pretrain_pages: int
    train_pages: int
    test_pages: int


@dataclass
class RunConfig:
    seed: int
    grid: GridConfig
    binarize: BinarizeConfig
    features: FeatureConfig
    model: ModelSettings
    pretrain: PretrainSettings
    train: TrainSettings
    synth: LayoutSpec
    eval: EvalSettings
    run: RunSettings


def _merge(base: dict, user: dict, prefix: str = "") -> None:
    for key, value in user.items():
        dotted = f"{prefix}{key}"
        if dotted in _OPEN_TABLES:
            if not isinstance(value, dict):
                raise ConfigError(f"config key {dotted} must be a table")
            base[key] = dict(value)
            continue
        if key not in base:
            raise ConfigError(f"unknown config key {dotted}")
        default = base[key]
        if isinstance(default, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {dotted} must be a table")
            _merge(default, value, dotted + ".")
            continue
        if isinstance(default, bool) and not isinstance(value, bool):
            raise ConfigError(f"config key {dotted} expects a boolean")
        if isinstance(default, (int, float)) and not isinstance(default, bool):
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ConfigError(f"config key {dotted} expects a number")
        if isinstance(default, str) and not isinstance(value, str):
            # synth.columns accepts either a count or "mixed"
            if not (dotted == "synth.columns" and isinstance(value, int)):
                raise ConfigError(f"config key {dotted} expects a string")
        if isinstance(default, list) and not isinstance(value, list):
            raise ConfigError(f"config key {dotted} expects a list")
        base[key] = value


def _apply_overrides(data: dict, overrides: dict) -> None:
    for dotted, value in overrides.items():
        parts = dotted.split(".")
        node = data
        for p in parts[:-1]:
            if p not in node or not isinstance(node[p], dict):
                raise ConfigError(f"unknown config key {dotted}")
            node = node[p]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key {dotted}")
        node[parts[-1]] = value


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Defaults, overlaid with a TOML file and then explicit overrides."""
    data = copy.deepcopy(DEFAULTS)
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            user = tomllib.loads(path.read_text())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
        _merge(data, user)
    if overrides:
        _apply_overrides(data, overrides)
    try:
        grid = GridConfig(**data["grid"])
        binarize = BinarizeConfig(**data["binarize"])
        f = data["features"]
        features = FeatureConfig(f["warp_size"], tuple(f["conv_channels"]),
                                 f["kernel"], f["stride"], f["pool_grid"])
        s = data["synth"]
        synth = LayoutSpec(page_width=s["page_width"], page_height=s["page_height"],
                           margin=s["margin"], columns=s["columns"], mode=s["mode"],
                           class_weights=dict(s["class_weights"]),
                           min_gap=s["min_gap"], max_gap=s["max_gap"],
                           caption_token_prob=s["caption_token_prob"],
                           presence_prob=s["presence_prob"])
        model = ModelSettings(**data["model"])
        pretrain = PretrainSettings(**data["pretrain"])
        train = TrainSettings(**data["train"])
        evaluation = EvalSettings(**data["eval"])
        run = RunSettings(**data["run"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(seed=int(data["seed"]), grid=grid, binarize=binarize,
                     features=features, model=model, pretrain=pretrain,
                     train=train, synth=synth, eval=evaluation, run=run)


def stage_seed(master: int, stage: str) -> tuple:
    if stage not in STAGE_ORDINALS:
        raise ValueError(f"unknown stage {stage!r}")
    return (int(master), STAGE_ORDINALS[stage])


def stage_rng(master: int, stage: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(stage_seed(master, stage)))


def _flatten(d: dict, prefix: str = "") -> list[tuple[str, object]]:
    rows = []
    for k, v in d.items():
        dotted = f"{prefix}{k}"
        if isinstance(v, dict) and dotted not in _OPEN_TABLES:
            rows.extend(_flatten(v, dotted + "."))
        else:
            rows.append((dotted, v))
    return rows


def describe_keys() -> str:
    """Human-readable table of every config key, its default and meaning."""
    lines = ["configuration keys (TOML; precedence CLI > file > defaults):"]
    for dotted, default in _flatten(DEFAULTS):
        if dotted == "synth.class_weights":
            default = "reference train counts"
        note = KEY_HELP.get(dotted, "")
        lines.append(f"  {dotted} = {default!r}" + (f"  -- {note}" if note else ""))
    return "\n".join(lines)
