"""Aligned training examples and their on-disk binary format.

One example per sliding-window position ``i``: 16 feature frames i..i+15,
the 15 note one-hots for frames i..i+14 (the window's final note is
withheld from the input), and the 4 target one-hots for frames i+15..i+18.

File layout (little-endian): magic ``TKND``, version u32, u32-length-prefixed
UTF-8 JSON manifest (chart list, split assignment, normalization stats),
example count u32, then f32 arrays in declared order — song windows, note
contexts, targets.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .audio import NUM_BANDS, WINDOW_FRAMES, NormStats, apply_norm, fit_norm
from .chart import NUM_CLASSES, NoteClass, NoteFrameSequence, one_hot_rows
from .errors import BadMagic, TooFewCharts, TooShort, TruncatedFile, VersionMismatch

DATASET_MAGIC = b"TKND"
DATASET_VERSION = 1

CONTEXT_FRAMES = WINDOW_FRAMES - 1  # 15
TARGET_FRAMES = 4
#: Frames a chart must span beyond the window for one example to exist.
MIN_FRAMES = WINDOW_FRAMES + TARGET_FRAMES - 1  # 19


class TrainingExample(NamedTuple):
    song_window: np.ndarray  # (16, 80) float32
    note_context: np.ndarray  # (15, 7) float32 one-hot rows
    targets: np.ndarray  # (4, 7) float32 one-hot rows


@dataclass(frozen=True)
class ChartEntry:
    chart_id: str
    example_count: int
    split: str  # "train" | "val"


@dataclass(frozen=True)
class DatasetManifest:
    charts: tuple[ChartEntry, ...]
    bands: int = NUM_BANDS

    def counts(self) -> tuple[int, int]:
        train = sum(c.example_count for c in self.charts if c.split == "train")
        val = sum(c.example_count for c in self.charts if c.split == "val")
        return train, val


class Dataset:
    """Manifest plus the flat example arrays, grouped by chart in manifest order."""

    def __init__(
        self,
        manifest: DatasetManifest,
        windows: np.ndarray,
        contexts: np.ndarray,
        targets: np.ndarray,
        norm: NormStats,
    ):
        total = sum(c.example_count for c in manifest.charts)
        if windows.shape != (total, WINDOW_FRAMES, manifest.bands):
            raise ValueError(f"windows shape {windows.shape} disagrees with manifest")
        if contexts.shape != (total, CONTEXT_FRAMES, NUM_CLASSES):
            raise ValueError(f"contexts shape {contexts.shape} disagrees with manifest")
        if targets.shape != (total, TARGET_FRAMES, NUM_CLASSES):
            raise ValueError(f"targets shape {targets.shape} disagrees with manifest")
        self.manifest = manifest
        self.windows = windows
        self.contexts = contexts
        self.targets = targets
        self.norm = norm

    def __len__(self) -> int:
        return self.windows.shape[0]

    def example(self, i: int) -> TrainingExample:
        return TrainingExample(self.windows[i], self.contexts[i], self.targets[i])

    def indices(self, split: str) -> np.ndarray:
        out = []
        offset = 0
        for entry in self.manifest.charts:
            if entry.split == split:
                out.append(np.arange(offset, offset + entry.example_count))
            offset += entry.example_count
        return np.concatenate(out) if out else np.empty(0, dtype=np.intp)


def build_examples(features: np.ndarray, notes: NoteFrameSequence) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Slide over one chart and emit (windows, contexts, targets) arrays.

    Feature rows and note frames are aligned by index; whichever is shorter
    is padded (zero frames / no-note) to the longer length first. A chart
    shorter than 19 frames yields no valid window and raises TooShort.
    """
    features = np.atleast_2d(np.asarray(features, dtype=np.float32))
    frames = notes.frames
    n = max(features.shape[0], frames.size)
    if n < MIN_FRAMES:
        raise TooShort(f"need at least {MIN_FRAMES} frames, got {n}")
    if features.shape[0] < n:
        features = np.vstack([features, np.zeros((n - features.shape[0], features.shape[1]), dtype=np.float32)])
    if frames.size < n:
        frames = np.concatenate([frames, np.full(n - frames.size, int(NoteClass.NO_NOTE), dtype=np.uint8)])

    count = n - MIN_FRAMES + 1
    onehots = one_hot_rows(frames)
    windows = np.lib.stride_tricks.sliding_window_view(features, WINDOW_FRAMES, axis=0)
    contexts = np.lib.stride_tricks.sliding_window_view(onehots, CONTEXT_FRAMES, axis=0)
    targets = np.lib.stride_tricks.sliding_window_view(onehots, TARGET_FRAMES, axis=0)
    return (
        np.ascontiguousarray(np.swapaxes(windows[:count], 1, 2), dtype=np.float32),
        np.ascontiguousarray(np.swapaxes(contexts[:count], 1, 2), dtype=np.float32),
        np.ascontiguousarray(np.swapaxes(targets[WINDOW_FRAMES - 1 :][:count], 1, 2), dtype=np.float32),
    )


def split_dataset(chart_ids, ratio: float = 0.9, seed: int = 0) -> tuple[list[str], list[str]]:
    """Deterministically shuffle chart ids and cut off the first 90% as train."""
    ids = sorted(chart_ids)
    if len(ids) < 2:
        raise TooFewCharts("need at least two charts to split")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    n_train = int(len(ids) * ratio)
    train = [ids[i] for i in order[:n_train]]
    val = [ids[i] for i in order[n_train:]]
    return train, val


def assemble(charts: dict, ratio: float = 0.9, seed: int = 0) -> Dataset:
    """Build a full dataset from ``{chart_id: (log_mel_features, notes)}``.

    Splits by chart (never by example, to keep adjacent windows out of the
    validation set), fits normalization on the training charts only, then
    normalizes everything and slices examples.
    """
    train_ids, val_ids = split_dataset(charts.keys(), ratio, seed)
    split_of = {**{i: "train" for i in train_ids}, **{i: "val" for i in val_ids}}
    norm = fit_norm(charts[cid][0] for cid in sorted(train_ids))

    entries = []
    windows, contexts, targets = [], [], []
    for cid in sorted(charts):
        feats, notes = charts[cid]
        w, c, t = build_examples(apply_norm(feats, norm), notes)
        entries.append(ChartEntry(cid, w.shape[0], split_of[cid]))
        windows.append(w)
        contexts.append(c)
        targets.append(t)
    return Dataset(
        DatasetManifest(tuple(entries), bands=windows[0].shape[2]),
        np.concatenate(windows),
        np.concatenate(contexts),
        np.concatenate(targets),
        norm,
    )


def save_dataset(path: str | Path, ds: Dataset) -> None:
    """Write the dataset file. Example arrays are f32; the normalization
    stats ride in the JSON manifest at full precision (repr round-trip)."""
    manifest_json = json.dumps(
        {
            "bands": ds.manifest.bands,
            "window": WINDOW_FRAMES,
            "context": CONTEXT_FRAMES,
            "horizon": TARGET_FRAMES,
            "classes": NUM_CLASSES,
            "norm_mean": ds.norm.mean.tolist(),
            "norm_std": ds.norm.std.tolist(),
            "charts": [
                {"id": c.chart_id, "examples": c.example_count, "split": c.split}
                for c in ds.manifest.charts
            ],
        },
        sort_keys=True,
        separators=(",", ":"),
    ).encode()

    buf = bytearray()
    buf += DATASET_MAGIC
    buf += struct.pack("<I", DATASET_VERSION)
    buf += struct.pack("<I", len(manifest_json)) + manifest_json
    buf += struct.pack("<I", len(ds))
    for arr in (ds.windows, ds.contexts, ds.targets):
        buf += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    Path(path).write_bytes(bytes(buf))


def load_dataset(path: str | Path) -> Dataset:
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != DATASET_MAGIC:
        raise BadMagic(f"{path}: not a dataset file")
    pos = 4

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise TruncatedFile(f"{path}: dataset file ends early")
        out = data[pos : pos + n]
        pos += n
        return out

    (version,) = struct.unpack("<I", take(4))
    if version != DATASET_VERSION:
        raise VersionMismatch(f"{path}: dataset version {version}, expected {DATASET_VERSION}")
    (manifest_len,) = struct.unpack("<I", take(4))
    meta = json.loads(take(manifest_len).decode())
    (count,) = struct.unpack("<I", take(4))

    bands = int(meta["bands"])
    manifest = DatasetManifest(
        tuple(ChartEntry(c["id"], int(c["examples"]), c["split"]) for c in meta["charts"]),
        bands=bands,
    )

    def read_f32(shape) -> np.ndarray:
        n = int(np.prod(shape))
        return np.frombuffer(take(4 * n), dtype="<f4").reshape(shape).copy()

    windows = read_f32((count, WINDOW_FRAMES, bands))
    contexts = read_f32((count, CONTEXT_FRAMES, NUM_CLASSES))
    targets = read_f32((count, TARGET_FRAMES, NUM_CLASSES))
    if pos != len(data):
        raise TruncatedFile(f"{path}: {len(data) - pos} unexpected trailing bytes")
    norm = NormStats(np.asarray(meta["norm_mean"], dtype=np.float64), np.asarray(meta["norm_std"], dtype=np.float64))
    return Dataset(manifest, windows, contexts, targets, norm)
