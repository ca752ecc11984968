"""Stage-one self-supervised training: destroy -> encode -> decode -> loss.

A run is a deterministic function of its ``TrainConfig`` (seed included)
and the manifest contents.  The training log written to disk holds only
values derived from the computation; wall-clock timings go to a separate
sidecar so two identical runs produce byte-identical logs.
"""
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .checkpoint import save_checkpoint
from .destruct import TransformSpec, destroy
from .errors import ConfigError, EmptyDataset, NumericalError
from .loss import LossConfig, loss_components, ssim
from .model import ModelConfig, PatchConfig, TransFuseNet, image_to_tensor

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.npz"
LOG_NAME = "train_log.jsonl"
TIMING_NAME = "timing.jsonl"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 70
    batch_size: int = 64
    learning_rate: float = 1e-4
    weight_decay: float = 5e-4
    schedule: str = "cosine"
    seed: int = 0
    image_size: int = 256
    max_steps: int = None
    grad_clip: float = None
    checkpoint_every: int = 10
    disabled: tuple = ()
    transform_spec: TransformSpec = field(default_factory=TransformSpec)
    loss_cfg: LossConfig = field(default_factory=LossConfig)
    model_cfg: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.schedule != "cosine":
            raise ConfigError(f"unknown schedule {self.schedule!r}; only 'cosine' is supported")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")
        object.__setattr__(self, "disabled", tuple(sorted(set(self.disabled))))
        # validates the names
        self.transform_spec.disable(*self.disabled)
        if self.model_cfg.patch.image_size != self.image_size:
            object.__setattr__(self, "model_cfg", self.model_cfg.with_image_size(self.image_size))

    @property
    def effective_transform_spec(self):
        return self.transform_spec.disable(*self.disabled)

    def to_dict(self):
        d = asdict(self)
        d["disabled"] = list(self.disabled)
        return d


def full_config(**overrides):
    """Full-scale recipe: 256x256, batch 64, 70 epochs, lr 1e-4, wd 5e-4."""
    return replace(TrainConfig(), **overrides)


def desk_config(**overrides):
    """Small CPU recipe used by the acceptance suite (8 images at 64x64).

    Subregions shrink with the image (4 squares of 4x4) and TV is taken per
    pixel so it stays on the scale of the other two terms.
    """
    base = TrainConfig(
        epochs=300,
        batch_size=8,
        learning_rate=3e-3,
        weight_decay=5e-4,
        image_size=64,
        max_steps=300,
        grad_clip=1.0,
        checkpoint_every=100,
        transform_spec=TransformSpec(n_subregions=4, subregion_size=4),
        loss_cfg=LossConfig(tv_normalize=True),
        model_cfg=ModelConfig(
            cnn_channels=8,
            token_dim_global=32,
            token_dim_local=8,
            trans_channels=4,
            depth=2,
            heads=2,
            patch=PatchConfig(image_size=64, global_patch=8, local_patch=4),
        ),
    )
    return replace(base, **overrides)


def lr_at(step, total_steps, base):
    """Cosine annealing from ``base`` at step 0 to 0 at ``total_steps``."""
    if not 0 <= step <= total_steps:
        raise ConfigError(f"step {step} outside [0, {total_steps}]")
    if total_steps == 0:
        return base
    return base * (1.0 + math.cos(math.pi * step / total_steps)) / 2.0


@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    wall: list = field(default_factory=list)

    def append(self, record, stamp):
        if self.records and record["step"] <= self.records[-1]["step"]:
            raise ValueError("log steps must be strictly increasing")
        self.records.append(record)
        self.wall.append(stamp)

    @property
    def losses(self):
        return [r["loss"] for r in self.records]

    def write(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / LOG_NAME, "w") as f:
            for r in self.records:
                f.write(json.dumps(r, sort_keys=True) + "\n")
        with open(directory / TIMING_NAME, "w") as f:
            for r, t in zip(self.records, self.wall):
                f.write(json.dumps({"step": r["step"], "elapsed_s": t}) + "\n")

    @classmethod
    def read(cls, directory):
        with open(Path(directory) / LOG_NAME) as f:
            records = [json.loads(line) for line in f if line.strip()]
        return cls(records=records, wall=[None] * len(records))


@dataclass
class TrainResult:
    model: TransFuseNet
    log: TrainLog
    checkpoint: Path = None


class _ImageCache:
    def __init__(self, manifest, limit=512):
        self.manifest = manifest
        self.cache = {} if len(manifest) <= limit else None

    def __getitem__(self, i):
        if self.cache is None:
            return self.manifest.load(i)
        if i not in self.cache:
            self.cache[i] = self.manifest.load(i)
        return self.cache[i]


def moving_average(values, window=20):
    values = np.asarray(values, dtype=np.float64)
    if len(values) < window:
        return values[:0]
    c = np.cumsum(np.concatenate([[0.0], values]))
    return (c[window:] - c[:-window]) / window


def train(manifest, cfg, out_dir=None):
    """Run stage-one training; returns a ``TrainResult``.

    With ``out_dir`` set, periodic checkpoints, the final checkpoint and the
    log are written there.  A non-finite loss or gradient aborts with
    ``NumericalError`` after saving the last good parameters.
    """
    if len(manifest) == 0:
        raise EmptyDataset("manifest is empty")
    if manifest.target_size != cfg.image_size:
        raise ConfigError(
            f"manifest target size {manifest.target_size} != configured image size {cfg.image_size}"
        )
    out_dir = Path(out_dir) if out_dir is not None else None
    torch.manual_seed(cfg.seed)
    shuffle_seed, destroy_seed = np.random.SeedSequence(cfg.seed).spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_seed)
    destroy_rng = np.random.default_rng(destroy_seed)

    # channels-last convolutions are markedly faster on CPU at these widths
    model = TransFuseNet(cfg.model_cfg).to(memory_format=torch.channels_last)
    model.train()
    opt = torch.optim.AdamW(
        model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay
    )
    spec = cfg.effective_transform_spec
    images = _ImageCache(manifest)
    n = len(manifest)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total = cfg.epochs * steps_per_epoch
    if cfg.max_steps is not None:
        total = min(total, cfg.max_steps)

    train_log = TrainLog()
    t0 = time.perf_counter()
    step = 0
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            if step >= total:
                break
            idx = order[start:start + cfg.batch_size]
            originals = np.stack([images[int(i)] for i in idx])
            destroyed = np.stack([destroy(img, spec, destroy_rng)[0] for img in originals])
            lr = lr_at(step, total, cfg.learning_rate)
            for group in opt.param_groups:
                group["lr"] = lr

            out = model(image_to_tensor(destroyed).contiguous(memory_format=torch.channels_last))
            loss, mse, ls, tv = loss_components(out, image_to_tensor(originals), cfg.loss_cfg)
            if not torch.isfinite(loss):
                _abort(model, out_dir, step, "loss")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            if cfg.grad_clip is not None:
                norm = torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            else:
                norm = torch.sqrt(sum((p.grad**2).sum() for p in model.parameters() if p.grad is not None))
            if not torch.isfinite(norm):
                _abort(model, out_dir, step, "gradient")
            opt.step()

            train_log.append(
                {
                    "step": step,
                    "epoch": epoch,
                    "loss": float(loss.detach()),
                    "mse": float(mse.detach()),
                    "ssim": float(ls.detach()),
                    "tv": float(tv.detach()),
                    "lr": lr,
                },
                round(time.perf_counter() - t0, 4),
            )
            step += 1
        if out_dir is not None and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(model, out_dir / f"ckpt_epoch{epoch + 1:04d}.npz", {"step": step})
        if step >= total:
            break

    model.to(memory_format=torch.contiguous_format).eval()
    ckpt = None
    if out_dir is not None:
        ckpt = save_checkpoint(model, out_dir / CHECKPOINT_NAME, {"step": step})
        train_log.write(out_dir)
        with open(out_dir / "train_config.json", "w") as f:
            json.dump(cfg.to_dict(), f, indent=1, sort_keys=True)
    log.info("trained %d steps in %.1fs", step, time.perf_counter() - t0)
    return TrainResult(model=model, log=train_log, checkpoint=ckpt)


def _abort(model, out_dir, step, what):
    # parameters have not been updated by the failing step yet
    if out_dir is not None:
        save_checkpoint(model, out_dir / "checkpoint_lastgood.npz", {"step": step})
    raise NumericalError(f"non-finite {what} at step {step}")


def reconstruction_ssim(model, images, spec, seed, loss_cfg=LossConfig()):
    """Mean SSIM between originals and the model's reconstruction of their
    destroyed versions (destruction seeded by ``seed``)."""
    rng = np.random.default_rng(seed)
    scores = []
    model.eval()
    for img in images:
        destroyed, _ = destroy(img, spec, rng)
        rec = model.reconstruct(destroyed)
        scores.append(float(ssim(rec, img, loss_cfg)))
    return float(np.mean(scores))
