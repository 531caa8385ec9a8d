import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vicreg_audio.manifest import (
    SPLIT_NAMES,
    Manifest,
    ManifestEntry,
    largest_remainder,
    read_manifest,
    read_split_manifest,
    stratified_split,
    write_manifest,
    write_split_manifest,
)


def make_manifest(counts: dict) -> Manifest:
    entries = []
    for label, n in counts.items():
        entries += [ManifestEntry(f"{label}/{i:04d}.wav", label, 1.0, 32000) for i in range(n)]
    return Manifest(entries)


def split_counts(split, name):
    return Counter(e.label for e in split.split(name))


def check_split(manifest, split, fractions=(0.1, 0.1, 0.8), mini=0.1):
    sets = {name: split.split(name).paths() for name in SPLIT_NAMES}
    assert not sets["train"] & sets["validation"]
    assert not sets["train"] & sets["test"]
    assert not sets["validation"] & sets["test"]
    assert sets["train"] | sets["validation"] | sets["test"] == manifest.paths()
    assert sets["train_mini"] <= sets["train"]
    totals = Counter(e.label for e in manifest)
    for label, total in totals.items():
        for name, frac in zip(("train", "validation", "test"), fractions):
            assert abs(split_counts(split, name)[label] - total * frac) <= 1
        n_train = split_counts(split, "train")[label]
        assert abs(split_counts(split, "train_mini")[label] - n_train * mini) <= 1


class TestLargestRemainder:
    def test_exact(self):
        assert largest_remainder(100, [0.1, 0.1, 0.8]) == [10, 10, 80]

    def test_sums_to_total(self):
        assert largest_remainder(7, [0.1, 0.1, 0.8]) == [1, 1, 5]
        assert sum(largest_remainder(13, [1 / 3] * 3)) == 13

    def test_ties_go_to_earlier_position(self):
        assert largest_remainder(1, [0.5, 0.5]) == [1, 0]


class TestStratifiedSplit:
    def test_single_class_hundred(self):
        split = stratified_split(make_manifest({"a": 100}), seed=0)
        assert [len(split.split(n)) for n in ("train", "validation", "test", "train_mini")] == [10, 10, 80, 1]

    def test_two_balanced_classes(self):
        split = stratified_split(make_manifest({"a": 10, "b": 10}), seed=3)
        for name in SPLIT_NAMES:
            counts = split_counts(split, name)
            assert abs(counts["a"] - counts["b"]) <= 1

    def test_deterministic(self):
        m = make_manifest({"a": 37, "b": 12, "c": 5})
        assert stratified_split(m, seed=5) == stratified_split(m, seed=5)
        assert stratified_split(m, seed=5) != stratified_split(m, seed=6)

    def test_independent_of_entry_order(self):
        m = make_manifest({"a": 30, "b": 20})
        shuffled = Manifest(list(reversed(m.entries)))
        assert stratified_split(m, seed=1) == stratified_split(shuffled, seed=1)

    def test_empty(self):
        with pytest.raises(ValueError):
            stratified_split(Manifest([]))

    @pytest.mark.parametrize("fractions", [{"train": 0.5, "validation": 0.5, "test": 0.5},
                                           {"train": 0.5, "test": 0.5}])
    def test_bad_fractions(self, fractions):
        with pytest.raises(ValueError):
            stratified_split(make_manifest({"a": 5}), fractions=fractions)

    def test_duplicate_paths_rejected(self):
        e = ManifestEntry("x.wav", "a", 1.0, 32000)
        with pytest.raises(ValueError):
            Manifest([e, e])

    def test_fifty_random_manifests(self):
        rng = np.random.default_rng(0)
        for seed in range(50):
            k = int(rng.integers(1, 8))
            m = make_manifest({f"class{c}": int(rng.integers(1, 120)) for c in range(k)})
            split = stratified_split(m, seed=seed)
            check_split(m, split)
            assert stratified_split(m, seed=seed) == split


class TestProperties:
    @settings(max_examples=80, deadline=None)
    @given(st.dictionaries(st.text("abcdef", min_size=1, max_size=3), st.integers(1, 60), min_size=1, max_size=5),
           st.integers(0, 2**31 - 1))
    def test_disjoint_covering_and_proportional(self, counts, seed):
        m = make_manifest(counts)
        check_split(m, stratified_split(m, seed=seed))


class TestFiles:
    def test_manifest_round_trip(self, tmp_path):
        m = make_manifest({"a": 3, "b": 2})
        write_manifest(tmp_path / "m.jsonl", m)
        assert read_manifest(tmp_path / "m.jsonl") == m
        raw = (tmp_path / "m.jsonl").read_bytes()
        assert b"\r\n" not in raw
        assert set(json.loads(raw.splitlines()[0])) == {"path", "label", "duration_s", "sample_rate"}

    def test_missing_key(self, tmp_path):
        (tmp_path / "bad.jsonl").write_text(json.dumps({"path": "x.wav", "label": "a"}) + "\n")
        with pytest.raises(ValueError, match="duration_s"):
            read_manifest(tmp_path / "bad.jsonl")

    def test_split_files(self, tmp_path):
        m = make_manifest({"a": 40, "b": 25})
        split = stratified_split(m, seed=9)
        paths = write_split_manifest(tmp_path, split)
        assert [p.name for p in paths] == ["train.jsonl", "train_mini.jsonl", "validation.jsonl",
                                           "test.jsonl", "splits.jsonl"]
        assert read_split_manifest(tmp_path / "splits.jsonl") == split
        lines = (tmp_path / "test.jsonl").read_text().splitlines()
        assert json.loads(lines[0]) == {"seed": 9}
        assert all(json.loads(line)["split"] == "test" for line in lines[1:])
        assert read_manifest(tmp_path / "test.jsonl") == split.test

    def test_split_file_needs_seed(self, tmp_path):
        write_manifest(tmp_path / "s.jsonl", make_manifest({"a": 1}), split="train")
        with pytest.raises(ValueError, match="seed"):
            read_split_manifest(tmp_path / "s.jsonl")
