"""YAML run configuration with fail-fast key checking.

Layout::

    preset: desk            # or "full" (default)
    train:     {epochs, batch_size, learning_rate, weight_decay, seed,
                image_size, max_steps, grad_clip, checkpoint_every, disabled}
    transform: {prob_nonlinear, prob_brightness, prob_noise, gamma_choices,
                blur_sigma, n_subregions, subregion_size, lut_resolution}
    model:     {cnn_channels, token_dim_global, token_dim_local,
                trans_channels, depth, heads, mlp_ratio, transformer,
                inject_every_layer, global_patch, local_patch}
    loss:      {lambda1, lambda2, ssim_window_sigma, ssim_window_radius,
                ssim_c1, ssim_c2, tv_normalize}
    fusion:    {kind, l1_block_radius}

Every section is optional; missing keys keep the preset's values.
"""
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import yaml

from .destruct import TransformSpec
from .errors import ConfigError, NotFound
from .fuse import FusionRule
from .loss import LossConfig
from .trainer import TrainConfig, desk_config, full_config

PRESETS = {"full": full_config, "desk": desk_config}
_SECTIONS = {"preset", "train", "transform", "model", "loss", "fusion"}
_TRAIN_KEYS = {
    "epochs", "batch_size", "learning_rate", "weight_decay", "schedule", "seed",
    "image_size", "max_steps", "grad_clip", "checkpoint_every", "disabled",
}
_PATCH_KEYS = {"global_patch", "local_patch"}


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    fusion: FusionRule = field(default_factory=FusionRule)


def _names(cls):
    return {f.name for f in fields(cls)}


def _check_keys(section, given, allowed):
    unknown = set(given) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")


def _section(doc, name):
    value = doc.get(name) or {}
    if not isinstance(value, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    return value


def build_config(doc=None):
    doc = doc or {}
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a mapping")
    _check_keys("top level", doc, _SECTIONS)
    preset = doc.get("preset", "full")
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; expected one of {sorted(PRESETS)}")
    cfg = PRESETS[preset]()

    try:
        tr = _section(doc, "train")
        _check_keys("train", tr, _TRAIN_KEYS)
        if "disabled" in tr:
            tr = {**tr, "disabled": tuple(tr["disabled"] or ())}

        ts = _section(doc, "transform")
        _check_keys("transform", ts, _names(TransformSpec))
        if "gamma_choices" in ts:
            ts = {**ts, "gamma_choices": tuple(ts["gamma_choices"])}
        spec = replace(cfg.transform_spec, **ts)

        mo = dict(_section(doc, "model"))
        _check_keys("model", mo, (_names(type(cfg.model_cfg)) - {"patch"}) | _PATCH_KEYS)
        patch_over = {k: mo.pop(k) for k in list(mo) if k in _PATCH_KEYS}
        image_size = tr.get("image_size", cfg.image_size)
        patch = replace(cfg.model_cfg.patch, image_size=image_size, **patch_over)
        model_cfg = replace(cfg.model_cfg, patch=patch, **mo)

        lo = _section(doc, "loss")
        _check_keys("loss", lo, _names(LossConfig))
        loss_cfg = replace(cfg.loss_cfg, **lo)

        fu = _section(doc, "fusion")
        _check_keys("fusion", fu, _names(FusionRule))
        rule = FusionRule(**fu)

        train = replace(cfg, transform_spec=spec, model_cfg=model_cfg, loss_cfg=loss_cfg, **tr)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(train=train, fusion=rule)


def load_config(path=None):
    if path is None:
        return build_config({})
    path = Path(path)
    if not path.is_file():
        raise NotFound(f"no such config file: {path}")
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return build_config(doc)


def with_overrides(run, seed=None, epochs=None, image_size=None, max_steps=None,
                   no_transformer=False, disable=()):
    """Apply command-line overrides on top of file values."""
    tr = run.train
    changes = {}
    if seed is not None:
        changes["seed"] = seed
    if epochs is not None:
        changes["epochs"] = epochs
    if max_steps is not None:
        changes["max_steps"] = max_steps
    if image_size is not None:
        changes["image_size"] = image_size
    if disable:
        changes["disabled"] = tuple(tr.disabled) + tuple(disable)
    if no_transformer:
        changes["model_cfg"] = replace(tr.model_cfg, transformer=False)
    return replace(run, train=replace(tr, **changes))
