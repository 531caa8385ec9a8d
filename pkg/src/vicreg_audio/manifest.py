"""Dataset manifests and deterministic stratified splits.

Manifests are JSON-lines files, one object per recording with the keys
``path``, ``label``, ``duration_s`` and ``sample_rate``. Split files carry an
extra ``split`` key per entry and start with a header line ``{"seed": ...}``.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

SPLIT_NAMES = ("train", "train_mini", "validation", "test")
DEFAULT_FRACTIONS = {"train": 0.10, "validation": 0.10, "test": 0.80}


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: str
    duration_s: float
    sample_rate: int


@dataclass
class Manifest:
    entries: list[ManifestEntry] = field(default_factory=list)

    def __post_init__(self):
        paths = [e.path for e in self.entries]
        if len(set(paths)) != len(paths):
            raise ValueError("manifest paths must be unique")

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def labels(self) -> list[str]:
        return sorted({e.label for e in self.entries})

    def paths(self) -> set[str]:
        return {e.path for e in self.entries}


@dataclass
class SplitManifest:
    train: Manifest
    train_mini: Manifest
    validation: Manifest
    test: Manifest
    seed: int

    def split(self, name: str) -> Manifest:
        if name not in SPLIT_NAMES:
            raise KeyError(name)
        return getattr(self, name)


def _entry_from_dict(obj: dict, where: str) -> ManifestEntry:
    try:
        return ManifestEntry(
            path=str(obj["path"]),
            label=str(obj["label"]),
            duration_s=float(obj["duration_s"]),
            sample_rate=int(obj["sample_rate"]),
        )
    except KeyError as exc:
        raise ValueError(f"{where}: missing key {exc.args[0]!r}") from None


def read_manifest(path) -> Manifest:
    """Read a manifest or split file; a seed header line is skipped."""
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            obj = json.loads(line)
            if "path" not in obj and "seed" in obj:
                continue
            entries.append(_entry_from_dict(obj, f"{path}:{lineno}"))
    return Manifest(entries)


def write_manifest(path, manifest: Manifest, split: str | None = None, seed: int | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if seed is not None:
            fh.write(json.dumps({"seed": seed}) + "\n")
        for entry in manifest:
            obj = asdict(entry)
            if split is not None:
                obj["split"] = split
            fh.write(json.dumps(obj) + "\n")


def write_split_manifest(out_dir, splits: SplitManifest) -> list[Path]:
    """Write one file per split plus a combined ``splits.jsonl``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name in SPLIT_NAMES:
        path = out_dir / f"{name}.jsonl"
        write_manifest(path, splits.split(name), split=name, seed=splits.seed)
        written.append(path)
    combined = out_dir / "splits.jsonl"
    with open(combined, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps({"seed": splits.seed}) + "\n")
        for name in SPLIT_NAMES:
            for entry in splits.split(name):
                fh.write(json.dumps({**asdict(entry), "split": name}) + "\n")
    written.append(combined)
    return written


def read_split_manifest(path) -> SplitManifest:
    seed = None
    groups: dict[str, list[ManifestEntry]] = defaultdict(list)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            obj = json.loads(line)
            if "path" not in obj:
                seed = int(obj["seed"])
                continue
            split = obj.get("split")
            if split not in SPLIT_NAMES:
                raise ValueError(f"{path}:{lineno}: bad split {split!r}")
            groups[split].append(_entry_from_dict(obj, f"{path}:{lineno}"))
    if seed is None:
        raise ValueError(f"{path}: missing seed header")
    return SplitManifest(**{name: Manifest(groups[name]) for name in SPLIT_NAMES}, seed=seed)


def largest_remainder(total: int, fractions: list[float]) -> list[int]:
    """Integer counts summing to ``total`` closest to ``total * fractions``.

    Leftover units go to the largest fractional parts; ties go to the
    earlier position.
    """
    ideal = [total * f for f in fractions]
    counts = [math.floor(q) for q in ideal]
    leftover = total - sum(counts)
    order = sorted(range(len(fractions)), key=lambda i: (-(ideal[i] - counts[i]), i))
    for i in order[:leftover]:
        counts[i] += 1
    return counts


def stratified_split(manifest: Manifest, fractions: dict | None = None, mini_fraction: float = 0.10,
                     seed: int = 0) -> SplitManifest:
    """Per-class shuffled train/validation/test split plus a train mini-set.

    Classes are processed in sorted label order and each is shuffled with its
    own seeded stream, so the result only depends on ``(manifest, seed)``.
    """
    if len(manifest) == 0:
        raise ValueError("cannot split an empty manifest")
    fractions = dict(DEFAULT_FRACTIONS if fractions is None else fractions)
    if set(fractions) != {"train", "validation", "test"}:
        raise ValueError(f"fractions need keys train/validation/test, got {sorted(fractions)}")
    if any(f < 0 for f in fractions.values()) or not math.isclose(sum(fractions.values()), 1.0, abs_tol=1e-9):
        raise ValueError("fractions must be non-negative and sum to 1")
    if not 0.0 <= mini_fraction <= 1.0:
        raise ValueError("mini_fraction must lie in [0, 1]")

    by_label: dict[str, list[ManifestEntry]] = defaultdict(list)
    for entry in manifest:
        by_label[entry.label].append(entry)

    out = {name: [] for name in SPLIT_NAMES}
    for class_index, label in enumerate(sorted(by_label)):
        members = sorted(by_label[label], key=lambda e: e.path)
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(class_index,))))
        members = [members[i] for i in rng.permutation(len(members))]
        n_train, n_val, _ = largest_remainder(
            len(members), [fractions["train"], fractions["validation"], fractions["test"]])
        train = members[:n_train]
        out["train"] += train
        out["validation"] += members[n_train:n_train + n_val]
        out["test"] += members[n_train + n_val:]
        n_mini, _ = largest_remainder(len(train), [mini_fraction, 1.0 - mini_fraction])
        out["train_mini"] += train[:n_mini]

    return SplitManifest(**{name: Manifest(out[name]) for name in SPLIT_NAMES}, seed=seed)
