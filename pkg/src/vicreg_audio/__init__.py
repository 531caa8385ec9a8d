"""Self-supervised (VICReg) audio representation learning with numpy."""

from .audio import AudioClip, load_wav, resample, write_wav
from .augment import AugmentConfig, NoiseBank, augment_view, clean_view
from .checkpoint import load_checkpoint, save_checkpoint
from .kernels import BACKEND
from .manifest import Manifest, ManifestEntry, SplitManifest, stratified_split
from .metrics import Metrics, compute_metrics, confusion_matrix
from .model import ModelConfig, ParamStore, init_params
from .optim import Schedule, adam_step, lr_at, sgd_step
from .pipeline import RunConfig, RunReport, aggregate_runs, pretrain, train_downstream
from .vicreg import LossBreakdown, VicregWeights, vicreg_grad, vicreg_total

__version__ = "0.1.0"

__all__ = [
    "AudioClip", "load_wav", "write_wav", "resample",
    "AugmentConfig", "NoiseBank", "augment_view", "clean_view",
    "save_checkpoint", "load_checkpoint", "BACKEND",
    "Manifest", "ManifestEntry", "SplitManifest", "stratified_split",
    "Metrics", "compute_metrics", "confusion_matrix",
    "ModelConfig", "ParamStore", "init_params",
    "Schedule", "lr_at", "sgd_step", "adam_step",
    "RunConfig", "RunReport", "pretrain", "train_downstream", "aggregate_runs",
    "VicregWeights", "LossBreakdown", "vicreg_total", "vicreg_grad",
]
