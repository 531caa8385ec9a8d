"""Pretraining, downstream training and multi-run aggregation.

Downstream modes:

* ``scratch``  - randomly initialized encoder + classifier, all trained
* ``finetune`` - encoder from a pretraining checkpoint, all trained
* ``probe``    - encoder from a checkpoint, frozen in eval mode; only the
  linear classifier is trained
"""

from __future__ import annotations

import copy
import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .audio import AudioClip, center_crop, load_wav, random_crop, resample
from .augment import AugmentConfig, NoiseBank, augment_view, clean_view
from .checkpoint import load_checkpoint, save_checkpoint
from .manifest import read_manifest
from .metrics import METRIC_KEYS, Metrics, compute_metrics
from .model import (
    ModelConfig,
    ParamStore,
    classifier_forward,
    classifier_loss_and_grads,
    embed,
    encoder_forward,
    init_params,
    ssl_loss_and_grads,
    supervised_loss_and_grads,
)
from .optim import OptState, Schedule, adam_step, lr_at, sgd_step
from .rng import RandomStream
from .vicreg import VicregWeights

MODES = ("pretrain", "scratch", "finetune", "probe")
DOWNSTREAM_MODES = ("scratch", "finetune", "probe")

# lane op ids
_VIEW_A, _VIEW_B, _CROP = 0, 1, 2
_SHUFFLE_SAMPLE = 2**31 - 1


class ConfigError(ValueError):
    """Invalid run configuration or data."""


class NumericalError(RuntimeError):
    """A loss became non-finite during training."""


def _strict(section: str, obj: dict, allowed) -> dict:
    if not isinstance(obj, dict):
        raise ConfigError(f"{section}: expected an object")
    unknown = set(obj) - set(allowed)
    if unknown:
        raise ConfigError(f"{section}: unknown key(s) {sorted(unknown)}")
    return obj


@dataclass
class DataConfig:
    manifest: str | None = None  # unlabeled pretraining corpus
    train: str | None = None
    validation: str | None = None
    test: str | None = None
    noise_dir: str | None = None


@dataclass
class ScheduleConfig:
    lr_start: float = 1e-4
    lr_peak: float = 0.3
    lr_min: float = 1e-4
    warmup_epochs: int = 2


@dataclass
class OptimizerConfig:
    name: str = "sgd"
    momentum: float = 0.9
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


# downstream runs use Adam (no weight decay) on a lower learning-rate curve
DOWNSTREAM_SCHEDULE_DEFAULTS = {"lr_start": 1e-5, "lr_peak": 1e-3, "lr_min": 1e-5, "warmup_epochs": 2}
DOWNSTREAM_OPTIMIZER_DEFAULTS = {"name": "adam", "weight_decay": 0.0}


@dataclass
class SplitConfig:
    fractions: dict = field(default_factory=lambda: {"train": 0.10, "validation": 0.10, "test": 0.80})
    mini_fraction: float = 0.10


@dataclass
class RunConfig:
    mode: str = "pretrain"
    data: DataConfig = field(default_factory=DataConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: VicregWeights = field(default_factory=VicregWeights)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    batch_size: int = 16
    epochs: int = 20
    seed: int = 0
    init_checkpoint: str | None = None
    base_dir: str = field(default=".", compare=False, repr=False)

    def validate(self) -> "RunConfig":
        if self.mode not in MODES:
            raise ConfigError(f"mode: expected one of {MODES}, got {self.mode!r}")
        if self.batch_size < 1:
            raise ConfigError("batch_size: must be >= 1")
        if self.mode == "pretrain" and self.batch_size < 2:
            raise ConfigError("batch_size: pretraining needs at least 2 samples per batch "
                              "(the variance term uses an unbiased batch variance)")
        if self.epochs < 1:
            raise ConfigError("epochs: must be >= 1")
        if not 0 < self.schedule.warmup_epochs < self.epochs:
            raise ConfigError(f"schedule.warmup_epochs: need 0 < warmup_epochs < epochs ({self.epochs})")
        if self.optimizer.name not in ("sgd", "adam"):
            raise ConfigError(f"optimizer.name: expected 'sgd' or 'adam', got {self.optimizer.name!r}")
        if self.mode in ("probe", "finetune") and not self.init_checkpoint:
            raise ConfigError(f"init_checkpoint: required in {self.mode} mode")
        expected = (self.augment.n_bins, self.augment.target_frames)
        if self.model.input_shape != expected:
            raise ConfigError(f"model.input_shape: {self.model.input_shape} does not match the "
                              f"spectrogram shape {expected} implied by augment")
        return self

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "data": vars(self.data).copy(),
            "augment": self.augment.to_dict(),
            "model": self.model.to_dict(),
            "loss": self.loss.to_dict(),
            "schedule": vars(self.schedule).copy(),
            "optimizer": vars(self.optimizer).copy(),
            "split": copy.deepcopy(vars(self.split)),
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "seed": self.seed,
            "init_checkpoint": self.init_checkpoint,
        }

    @classmethod
    def from_dict(cls, obj: dict, base_dir=".") -> "RunConfig":
        top = {f.name for f in fields(cls)} - {"base_dir"}
        obj = _strict("config", obj, top)
        kwargs = {k: obj[k] for k in ("mode", "batch_size", "epochs", "seed", "init_checkpoint") if k in obj}
        sections = {"data": DataConfig, "schedule": ScheduleConfig, "optimizer": OptimizerConfig,
                    "split": SplitConfig}
        base = {}
        if obj.get("mode") in DOWNSTREAM_MODES:
            base = {"schedule": DOWNSTREAM_SCHEDULE_DEFAULTS, "optimizer": DOWNSTREAM_OPTIMIZER_DEFAULTS}
        try:
            for name, klass in sections.items():
                given = _strict(name, obj.get(name, {}), {f.name for f in fields(klass)})
                kwargs[name] = klass(**{**base.get(name, {}), **given})
            if "augment" in obj:
                kwargs["augment"] = AugmentConfig.from_dict(_strict("augment", obj["augment"],
                                                                    {f.name for f in fields(AugmentConfig)}))
            if "model" in obj:
                kwargs["model"] = ModelConfig.from_dict(obj["model"])
            if "loss" in obj:
                kwargs["loss"] = VicregWeights.from_dict(obj["loss"])
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        return cls(**kwargs, base_dir=str(base_dir)).validate()

    @classmethod
    def load(cls, path, overrides: dict | None = None) -> "RunConfig":
        path = Path(path)
        try:
            obj = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        for key, value in (overrides or {}).items():
            apply_override(obj, key, value)
        return cls.from_dict(obj, base_dir=path.parent)

    def resolve(self, p: str | None) -> Path | None:
        if p is None:
            return None
        p = Path(p)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def schedule_for(self, steps_per_epoch: int) -> Schedule:
        s = self.schedule
        return Schedule(s.lr_start, s.lr_peak, s.lr_min, s.warmup_epochs, self.epochs, steps_per_epoch)

    def digest(self) -> str:
        """Hash of the configuration with the seed left out."""
        obj = self.to_dict()
        obj.pop("seed")
        return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def apply_override(obj: dict, dotted: str, value) -> None:
    """Set ``obj[a][b]... = value`` for ``dotted = "a.b..."``; the key must exist."""
    keys = dotted.split(".")
    node = obj
    for i, key in enumerate(keys[:-1]):
        if key not in node:
            # sections may be omitted from the file and filled with defaults
            default = RunConfig().to_dict()
            for k in keys[:i + 1]:
                default = default.get(k) if isinstance(default, dict) else None
            if not isinstance(default, dict):
                raise ConfigError(f"override {dotted}: unknown key {'.'.join(keys[:i + 1])!r}")
            node[key] = {}
        node = node[key]
        if not isinstance(node, dict):
            raise ConfigError(f"override {dotted}: {'.'.join(keys[:i + 1])!r} is not a section")
    leaf = keys[-1]
    if leaf not in node:
        default = RunConfig().to_dict()
        for k in keys[:-1]:
            default = default.get(k, {})
        if leaf not in default:
            raise ConfigError(f"override {dotted}: unknown key {dotted!r}")
    node[leaf] = value


@dataclass
class RunReport:
    mode: str
    seed: int
    config_digest: str
    config: dict
    epochs: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    metrics: dict | None = None
    timing: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "seed": self.seed,
            "config_digest": self.config_digest,
            "config": self.config,
            "epochs": self.epochs,
            "steps": self.steps,
            "metrics": self.metrics,
            "timing": self.timing,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "RunReport":
        return cls(**{f.name: obj.get(f.name) for f in fields(cls) if f.name in obj})

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def _new_report(cfg: RunConfig) -> RunReport:
    return RunReport(cfg.mode, cfg.seed, cfg.digest(), cfg.to_dict(),
                     timing={"started_at": datetime.now(timezone.utc).isoformat()})


def _finish_report(report: RunReport, t0: float) -> None:
    report.timing["wall_clock_s"] = time.perf_counter() - t0
    report.timing["finished_at"] = datetime.now(timezone.utc).isoformat()


def _map(fn, items, workers: int):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def load_clips(manifest_path, sample_rate: int) -> tuple[list[AudioClip], list[str]]:
    """Decode every entry of a manifest (paths relative to the manifest) at ``sample_rate``."""
    manifest_path = Path(manifest_path)
    manifest = read_manifest(manifest_path)
    if len(manifest) == 0:
        raise ConfigError(f"{manifest_path}: manifest is empty")
    clips, labels = [], []
    for entry in manifest:
        p = Path(entry.path)
        if not p.is_absolute():
            p = manifest_path.parent / p
        clips.append(resample(load_wav(p), sample_rate))
        labels.append(entry.label)
    return clips, labels


# ---------------------------------------------------------------- pretraining


def pretrain_views(clips, epoch: int, indices, cfg: RunConfig, noise_bank, workers: int = 1):
    """Crop and augment the recordings ``indices`` twice for one batch."""
    aug = cfg.augment

    def one(i):
        crop = random_crop(clips[i], aug.clip_seconds, RandomStream(cfg.seed, (epoch, i, _CROP)))
        va = augment_view(crop, aug, RandomStream(cfg.seed, (epoch, i, _VIEW_A)), noise_bank).values
        vb = augment_view(crop, aug, RandomStream(cfg.seed, (epoch, i, _VIEW_B)), noise_bank).values
        return va, vb

    pairs = _map(one, list(indices), workers)
    return (np.stack([p[0] for p in pairs]).astype(np.float32),
            np.stack([p[1] for p in pairs]).astype(np.float32))


def pretrain_batches(n_items: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Shuffled batches for one epoch; a trailing batch smaller than 2 is dropped."""
    order = RandomStream(seed, (epoch, _SHUFFLE_SAMPLE)).generator().permutation(n_items)
    batches = [order[i:i + batch_size] for i in range(0, n_items, batch_size)]
    return [b for b in batches if len(b) >= 2]


def pretrain_clips(clips: list[AudioClip], cfg: RunConfig, noise_bank: NoiseBank | None = None,
                   workers: int = 1, store: ParamStore | None = None,
                   max_steps: int | None = None) -> tuple[ParamStore, RunReport]:
    """Self-supervised pretraining on in-memory recordings.

    ``max_steps`` stops early (the schedule still spans ``cfg.epochs``).
    """
    if cfg.mode != "pretrain":
        raise ConfigError(f"mode: pretraining needs mode 'pretrain', got {cfg.mode!r}")
    cfg.validate()
    if not clips:
        raise ConfigError("data.manifest: no recordings to pretrain on")
    clips = [resample(c, cfg.augment.sample_rate) for c in clips]
    steps_per_epoch = len(pretrain_batches(len(clips), cfg.batch_size, cfg.seed, 0))
    if steps_per_epoch == 0:
        raise ConfigError("batch_size: not enough recordings for a single batch of 2")
    schedule = cfg.schedule_for(steps_per_epoch)
    if store is None:
        store = init_params(cfg.model.replace(num_classes=0), cfg.seed)
    state = OptState()
    report = _new_report(cfg)
    t0 = time.perf_counter()
    opt = cfg.optimizer
    step = 0
    for epoch in range(cfg.epochs):
        sums, count = {}, 0
        for batch in pretrain_batches(len(clips), cfg.batch_size, cfg.seed, epoch):
            if max_steps is not None and step >= max_steps:
                break
            va, vb = pretrain_views(clips, epoch, batch, cfg, noise_bank, workers)
            breakdown, grads = ssl_loss_and_grads(store, va, vb, cfg.loss)
            if not np.isfinite(breakdown.total):
                raise NumericalError(f"non-finite loss at epoch {epoch}, step {step}")
            lr = lr_at(schedule, step)
            if opt.name == "sgd":
                sgd_step(store, grads, state, lr, opt.momentum, opt.weight_decay)
            else:
                adam_step(store, grads, state, lr, opt.beta1, opt.beta2, opt.eps, opt.weight_decay)
            parts = breakdown.to_dict()
            report.steps.append({"step": step, "lr": lr, **parts})
            for k, v in parts.items():
                sums[k] = sums.get(k, 0.0) + v
            count += 1
            step += 1
        if count:
            report.epochs.append({"epoch": epoch, "loss": {k: v / count for k, v in sums.items()}})
        if max_steps is not None and step >= max_steps:
            break
    _finish_report(report, t0)
    return store, report


def pretrain(cfg: RunConfig, workers: int = 1, output_dir=None) -> tuple[ParamStore, RunReport]:
    """Pretrain from ``cfg.data.manifest``; writes ``checkpoint.vbssl`` and ``report.json``."""
    if cfg.data.manifest is None:
        raise ConfigError("data.manifest: required for pretraining")
    clips, _ = load_clips(cfg.resolve(cfg.data.manifest), cfg.augment.sample_rate)
    noise = None
    if cfg.data.noise_dir:
        noise = NoiseBank.from_directory(cfg.resolve(cfg.data.noise_dir), cfg.augment.sample_rate)
    store, report = pretrain_clips(clips, cfg, noise, workers)
    if output_dir is not None:
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out / "checkpoint.vbssl", store, seed=cfg.seed, epoch=cfg.epochs,
                        extra={"mode": "pretrain", "config_digest": cfg.digest()})
        report.save(out / "report.json")
    return store, report


# ------------------------------------------------------------------ downstream


def spectrogram_batch(clips, cfg: AugmentConfig, workers: int = 1) -> np.ndarray:
    """Unaugmented model inputs: 1-s center window, STFT, dB, min-max."""
    def one(clip):
        clip = center_crop(resample(clip, cfg.sample_rate), cfg.clip_seconds)
        return clean_view(clip, cfg).values
    return np.stack(_map(one, list(clips), workers)).astype(np.float32)


@dataclass
class LabeledSet:
    inputs: np.ndarray  # (n, F, T)
    labels: np.ndarray  # (n,)


def downstream_store(cfg: RunConfig, num_classes: int, init: ParamStore | None) -> ParamStore:
    """Fresh classifier on a random (scratch) or transferred encoder; no projector."""
    if cfg.mode == "scratch" or init is None:
        if cfg.mode != "scratch":
            raise ConfigError(f"init_checkpoint: required in {cfg.mode} mode")
        return init_params(cfg.model.replace(num_classes=num_classes), cfg.seed).drop("projector.")
    model_cfg = init.config.replace(num_classes=num_classes)
    store = init_params(model_cfg, cfg.seed).drop("projector.")
    for name in store.subset(["encoder."]):
        store.params[name] = init.params[name].astype(store.dtype)
    for name in list(store.buffers):
        if name.startswith("encoder."):
            store.buffers[name] = init.buffers[name].astype(store.dtype)
    if cfg.mode == "probe":
        for name in store.subset(["encoder."]):
            store.requires_grad[name] = False
    return store


def predict_logits(store: ParamStore, inputs: np.ndarray, batch_size: int = 64) -> np.ndarray:
    out = []
    for i in range(0, len(inputs), batch_size):
        out.append(classifier_forward(store, encoder_forward(store, inputs[i:i + batch_size], "eval")))
    return np.concatenate(out)


def encode(store: ParamStore, inputs: np.ndarray, batch_size: int = 64) -> np.ndarray:
    return np.concatenate([encoder_forward(store, inputs[i:i + batch_size], "eval")
                           for i in range(0, len(inputs), batch_size)])


def evaluate(store: ParamStore, data: LabeledSet) -> Metrics:
    return compute_metrics(data.labels, predict_logits(store, data.inputs))


def train_downstream_arrays(cfg: RunConfig, train: LabeledSet, validation: LabeledSet | None,
                            test: LabeledSet | None, num_classes: int,
                            init: ParamStore | None = None) -> tuple[ParamStore, RunReport]:
    """Supervised training on precomputed spectrograms (no augmentation).

    Optimizer steps follow the warmup-cosine schedule; validation accuracy is
    recorded every epoch and test metrics are taken after the last epoch.
    In probe mode the frozen encoder's features are computed once and reused.
    """
    if cfg.mode not in DOWNSTREAM_MODES:
        raise ConfigError(f"mode: expected one of {DOWNSTREAM_MODES}, got {cfg.mode!r}")
    cfg.validate()
    if len(train.labels) == 0:
        raise ConfigError("data.train: no labeled training examples")
    store = downstream_store(cfg, num_classes, init)
    probe = cfg.mode == "probe"
    n = len(train.labels)
    steps_per_epoch = -(-n // cfg.batch_size)
    schedule = cfg.schedule_for(steps_per_epoch)
    state = OptState()
    opt = cfg.optimizer
    report = _new_report(cfg)
    t0 = time.perf_counter()

    train_feats = encode(store, train.inputs) if probe else None
    val_feats = encode(store, validation.inputs) if (probe and validation is not None) else None

    step = 0
    for epoch in range(cfg.epochs):
        order = RandomStream(cfg.seed, (epoch, _SHUFFLE_SAMPLE)).generator().permutation(n)
        losses = []
        for i in range(0, n, cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            if probe:
                loss, grads = classifier_loss_and_grads(store, train_feats[idx], train.labels[idx])
            else:
                loss, grads = supervised_loss_and_grads(store, train.inputs[idx], train.labels[idx])
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite loss at epoch {epoch}, step {step}")
            lr = lr_at(schedule, step)
            if opt.name == "adam":
                adam_step(store, grads, state, lr, opt.beta1, opt.beta2, opt.eps, opt.weight_decay)
            else:
                sgd_step(store, grads, state, lr, opt.momentum, opt.weight_decay)
            report.steps.append({"step": step, "lr": lr, "loss": loss})
            losses.append(loss)
            step += 1
        record = {"epoch": epoch, "loss": {"cross_entropy": float(np.mean(losses))}}
        if validation is not None and len(validation.labels):
            logits = (classifier_forward(store, val_feats) if probe
                      else predict_logits(store, validation.inputs))
            record["val_accuracy"] = compute_metrics(validation.labels, logits).accuracy
        report.epochs.append(record)

    if test is not None and len(test.labels):
        report.metrics = evaluate(store, test).to_dict()
    _finish_report(report, t0)
    return store, report


def train_downstream(cfg: RunConfig, workers: int = 1, output_dir=None) -> tuple[ParamStore, RunReport]:
    """Downstream training from manifests in ``cfg.data`` (train / validation / test)."""
    if cfg.data.train is None:
        raise ConfigError("data.train: required for downstream training")
    raw = {}
    for key in ("train", "validation", "test"):
        path = getattr(cfg.data, key)
        raw[key] = load_clips(cfg.resolve(path), cfg.augment.sample_rate) if path else None
    label_names = sorted(set(raw["train"][1]))
    for key in ("validation", "test"):
        if raw[key] is not None:
            extra = sorted(set(raw[key][1]) - set(label_names))
            if extra:
                raise ConfigError(f"data.{key}: labels {extra} do not occur in data.train")

    index = {name: i for i, name in enumerate(label_names)}
    sets = {}
    for key, value in raw.items():
        if value is None:
            sets[key] = None
            continue
        clips, names = value
        sets[key] = LabeledSet(spectrogram_batch(clips, cfg.augment, workers),
                               np.asarray([index[n] for n in names], dtype=np.int64))

    init = None
    if cfg.mode in ("finetune", "probe"):
        init, _ = load_checkpoint(cfg.resolve(cfg.init_checkpoint))
        if init.config.input_shape != cfg.model.input_shape:
            raise ConfigError(f"init_checkpoint: encoder input shape {init.config.input_shape} "
                              f"differs from {cfg.model.input_shape}")
    store, report = train_downstream_arrays(cfg, sets["train"], sets["validation"], sets["test"],
                                            len(label_names), init)
    report.config["labels"] = label_names
    if output_dir is not None:
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out / "checkpoint.vbssl", store, seed=cfg.seed, epoch=cfg.epochs,
                        extra={"mode": cfg.mode, "labels": label_names, "config_digest": cfg.digest()})
        report.save(out / "report.json")
    return store, report


# ----------------------------------------------------------------- aggregation


def aggregate_runs(reports) -> dict:
    """Per-metric sample mean and sample standard deviation (``ddof=1``).

    Reports must share a config digest (the digest leaves out the seed).
    """
    reports = [r if isinstance(r, RunReport) else RunReport.from_dict(r) for r in reports]
    if len(reports) < 2:
        raise ValueError("aggregation needs at least 2 reports")
    digests = {r.config_digest for r in reports}
    if len(digests) != 1:
        raise ValueError(f"reports come from different configurations: {sorted(digests)}")
    if any(r.metrics is None for r in reports):
        raise ValueError("every report needs final metrics")
    out = {}
    for key in METRIC_KEYS:
        values = np.array([r.metrics[key] for r in reports], dtype=np.float64)
        out[key] = {"mean": float(values.mean()), "std": float(values.std(ddof=1)), "runs": len(values)}
    return out


def embedding_std(store: ParamStore, inputs: np.ndarray) -> float:
    """Mean over dimensions of the batch standard deviation of eval-mode embeddings."""
    z = embed(store, inputs, "eval").astype(np.float64)
    return float(z.std(axis=0, ddof=1).mean())
