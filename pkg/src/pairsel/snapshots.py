"""Checkpoint embedding snapshots and their pairwise similarity matrices.

A snapshot series is a directory::

    manifest.json          {"n", "dim", "checkpoints", "aggregation", "kind"}
    ckpt_0/video.mat       one record per sample, see pairsel.matio
    ckpt_0/text.mat
    ckpt_5/...

Series produced by an external trainer may instead carry precomputed
similarities (``"kind": "similarity"``); each checkpoint directory then
holds a single ``sim.mat`` with the N x N values and ``dim`` may be null.

Three aggregation modes turn token sequences into a scalar similarity:

* ``cls``  -- cosine of the two row-0 (global) tokens;
* ``mean`` -- cosine of the column-wise mean-pooled tokens;
* ``cico`` -- token-level cosine matrix reduced max-over-the-other-side
  then mean-over-own-side, averaged over both directions.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DegenerateEmbeddingError, FormatError
from .matio import read_sequences, read_square, write_sequences, write_square

VIDEO = "video"
TEXT = "text"
MODALITIES = (VIDEO, TEXT)
AGGREGATION_MODES = ("cls", "mean", "cico")

_SIM_SLACK = 1e-9  # tolerated overshoot beyond [-1, 1] from rounding


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class FeatureSequence:
    """Token features of one sample in one modality, shape (T, d)."""

    sample_id: int
    modality: str
    features: np.ndarray

    def __post_init__(self) -> None:
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}")
        if self.sample_id < 0:
            raise ValueError("sample_id must be non-negative")
        feats = np.asarray(self.features, dtype=float)
        if feats.ndim != 2 or feats.shape[0] < 1 or feats.shape[1] < 1:
            raise ValueError(f"features must be a T x d matrix with T,d >= 1, got {feats.shape}")
        if not np.isfinite(feats).all():
            raise ValueError(f"non-finite feature for sample {self.sample_id}")
        object.__setattr__(self, "features", _freeze(feats))

    @property
    def length(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FeatureSequence):
            return NotImplemented
        return (
            self.sample_id == other.sample_id
            and self.modality == other.modality
            and np.array_equal(self.features, other.features)
        )


@dataclass(frozen=True, eq=False)
class Snapshot:
    """All embeddings the encoder produced at one checkpoint."""

    checkpoint_index: int
    video_sequences: tuple[FeatureSequence, ...]
    text_sequences: tuple[FeatureSequence, ...]

    def __post_init__(self) -> None:
        if self.checkpoint_index < 0:
            raise ValueError("checkpoint_index must be non-negative")
        object.__setattr__(self, "video_sequences", tuple(self.video_sequences))
        object.__setattr__(self, "text_sequences", tuple(self.text_sequences))
        n = len(self.video_sequences)
        if n == 0 or len(self.text_sequences) != n:
            raise ValueError("need the same positive number of video and text sequences")
        for seqs, modality in ((self.video_sequences, VIDEO), (self.text_sequences, TEXT)):
            ids = sorted(s.sample_id for s in seqs)
            if ids != list(range(n)):
                raise ValueError(f"{modality} sample ids must be exactly 0..{n - 1}")
            for s in seqs:
                if s.modality != modality:
                    raise ValueError(f"sequence {s.sample_id} has modality {s.modality}, expected {modality}")
        dims = {s.dim for s in self.video_sequences} | {s.dim for s in self.text_sequences}
        if len(dims) != 1:
            raise ValueError(f"all sequences in a snapshot must share one embedding dim, got {sorted(dims)}")

    @property
    def n(self) -> int:
        return len(self.video_sequences)

    @property
    def dim(self) -> int:
        return self.video_sequences[0].dim

    def video(self, sample_id: int) -> FeatureSequence:
        return next(s for s in self.video_sequences if s.sample_id == sample_id)

    def text(self, sample_id: int) -> FeatureSequence:
        return next(s for s in self.text_sequences if s.sample_id == sample_id)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Snapshot):
            return NotImplemented
        return (
            self.checkpoint_index == other.checkpoint_index
            and self.video_sequences == other.video_sequences
            and self.text_sequences == other.text_sequences
        )


@dataclass(frozen=True, eq=False)
class SnapshotSeries:
    """Snapshots taken over a training run, ordered by checkpoint index."""

    checkpoints: tuple[int, ...]
    snapshots: tuple[Snapshot, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "checkpoints", tuple(int(k) for k in self.checkpoints))
        object.__setattr__(self, "snapshots", tuple(self.snapshots))
        ks = self.checkpoints
        if len(ks) == 0:
            raise ValueError("series needs at least one checkpoint")
        if ks[0] != 0:
            raise ValueError("checkpoint list must start at 0")
        if any(b <= a for a, b in zip(ks, ks[1:])):
            raise ValueError(f"non-monotone checkpoint list {list(ks)}")
        if len(self.snapshots) != len(ks):
            raise ValueError("need exactly one snapshot per checkpoint")
        for k, snap in zip(ks, self.snapshots):
            if snap.checkpoint_index != k:
                raise ValueError(f"snapshot at position of checkpoint {k} has index {snap.checkpoint_index}")
        ns = {s.n for s in self.snapshots}
        dims = {s.dim for s in self.snapshots}
        if len(ns) != 1 or len(dims) != 1:
            raise ValueError("all snapshots in a series must share n and dim")

    @property
    def k_max(self) -> int:
        return self.checkpoints[-1]

    @property
    def n(self) -> int:
        return self.snapshots[0].n

    @property
    def dim(self) -> int:
        return self.snapshots[0].dim

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SnapshotSeries):
            return NotImplemented
        return self.checkpoints == other.checkpoints and self.snapshots == other.snapshots


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    """N x N video-to-text similarities at one checkpoint."""

    checkpoint_index: int
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.checkpoint_index < 0:
            raise ValueError("checkpoint_index must be non-negative")
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 2 or vals.shape[0] != vals.shape[1] or vals.shape[0] < 1:
            raise ValueError(f"values must be square, got shape {vals.shape}")
        if not np.isfinite(vals).all():
            raise ValueError("non-finite similarity value")
        if vals.min() < -1.0 - _SIM_SLACK or vals.max() > 1.0 + _SIM_SLACK:
            raise ValueError("similarity outside [-1, 1]")
        object.__setattr__(self, "values", _freeze(vals))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SimilarityMatrix):
            return NotImplemented
        return self.checkpoint_index == other.checkpoint_index and np.array_equal(
            self.values, other.values
        )


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine of two 1-D vectors; raises DegenerateEmbeddingError on zero norm."""
    u = np.asarray(u, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    if u.shape != v.shape:
        raise ValueError(f"vector length mismatch: {u.shape[0]} vs {v.shape[0]}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise DegenerateEmbeddingError("cosine undefined for a zero-norm vector")
    return float(np.dot(u, v) / (nu * nv))


def _normalized_rows(mat: np.ndarray, what: str) -> np.ndarray:
    norms = np.sqrt(np.einsum("...d,...d->...", mat, mat))
    if np.any(norms == 0.0):
        idx = np.argwhere(norms == 0.0)[0]
        raise DegenerateEmbeddingError(f"zero-norm {what} at index {tuple(int(i) for i in idx)}")
    return mat / norms[..., None]


def aggregate_similarity(video: FeatureSequence, text: FeatureSequence, mode: str) -> float:
    """Scalar similarity of one video/text sequence pair under ``mode``."""
    if mode not in AGGREGATION_MODES:
        raise ValueError(f"unknown aggregation mode {mode!r}")
    if video.dim != text.dim:
        raise ValueError(f"embedding dim mismatch: {video.dim} vs {text.dim}")
    if mode == "cls":
        return cosine_similarity(video.features[0], text.features[0])
    if mode == "mean":
        return cosine_similarity(video.features.mean(axis=0), text.features.mean(axis=0))
    vh = _normalized_rows(video.features, "video token")
    th = _normalized_rows(text.features, "text token")
    grid = np.einsum("pd,qd->pq", vh, th)
    v2t = float(grid.max(axis=1).mean())
    t2v = float(grid.max(axis=0).mean())
    return (v2t + t2v) / 2.0


def _stacked(seqs: Sequence[FeatureSequence]) -> np.ndarray | None:
    lengths = {s.length for s in seqs}
    if len(lengths) != 1:
        return None
    ordered = sorted(seqs, key=lambda s: s.sample_id)
    return np.stack([s.features for s in ordered])


def _pooled_matrix(v: np.ndarray, t: np.ndarray, mode: str) -> np.ndarray:
    pv = v[:, 0, :] if mode == "cls" else v.mean(axis=1)
    pt = t[:, 0, :] if mode == "cls" else t.mean(axis=1)
    nv = np.sqrt(np.einsum("id,id->i", pv, pv))
    nt = np.sqrt(np.einsum("id,id->i", pt, pt))
    if np.any(nv == 0.0):
        i = int(np.flatnonzero(nv == 0.0)[0])
        raise DegenerateEmbeddingError(
            f"zero-norm pooled video embedding for sample {i}; similarities ({i}, j) undefined"
        )
    if np.any(nt == 0.0):
        j = int(np.flatnonzero(nt == 0.0)[0])
        raise DegenerateEmbeddingError(
            f"zero-norm pooled text embedding for sample {j}; similarities (i, {j}) undefined"
        )
    return np.einsum("id,jd->ij", pv / nv[:, None], pt / nt[:, None])


def _token_matrix(v: np.ndarray, t: np.ndarray) -> np.ndarray:
    nv = np.sqrt(np.einsum("ipd,ipd->ip", v, v))
    nt = np.sqrt(np.einsum("jqd,jqd->jq", t, t))
    if np.any(nv == 0.0):
        i, p = (int(x) for x in np.argwhere(nv == 0.0)[0])
        raise DegenerateEmbeddingError(
            f"zero-norm video token {p} for sample {i}; similarities ({i}, j) undefined"
        )
    if np.any(nt == 0.0):
        j, q = (int(x) for x in np.argwhere(nt == 0.0)[0])
        raise DegenerateEmbeddingError(
            f"zero-norm text token {q} for sample {j}; similarities (i, {j}) undefined"
        )
    grid = np.einsum("ipd,jqd->ijpq", v / nv[..., None], t / nt[..., None])
    v2t = grid.max(axis=3).mean(axis=2)
    t2v = grid.max(axis=2).mean(axis=2)
    return (v2t + t2v) / 2.0


def similarity_matrix(snapshot: Snapshot, mode: str) -> SimilarityMatrix:
    """Similarity of every (video i, text j) pair in a snapshot.

    Uses a vectorized path when all sequences of a modality share the same
    token count, otherwise falls back to per-pair aggregation.
    """
    if mode not in AGGREGATION_MODES:
        raise ValueError(f"unknown aggregation mode {mode!r}")
    v = _stacked(snapshot.video_sequences)
    t = _stacked(snapshot.text_sequences)
    if v is not None and t is not None:
        vals = _pooled_matrix(v, t, mode) if mode in ("cls", "mean") else _token_matrix(v, t)
        return SimilarityMatrix(snapshot.checkpoint_index, vals)
    n = snapshot.n
    vals = np.empty((n, n), dtype=float)
    videos = sorted(snapshot.video_sequences, key=lambda s: s.sample_id)
    texts = sorted(snapshot.text_sequences, key=lambda s: s.sample_id)
    for i in range(n):
        for j in range(n):
            try:
                vals[i, j] = aggregate_similarity(videos[i], texts[j], mode)
            except DegenerateEmbeddingError as exc:
                raise DegenerateEmbeddingError(f"similarity ({i}, {j}): {exc}") from exc
    return SimilarityMatrix(snapshot.checkpoint_index, vals)


# ---------------------------------------------------------------------------
# persistence


def _ckpt_dir(root: Path, k: int) -> Path:
    return root / f"ckpt_{k}"


def write_manifest(path: str | Path, manifest: dict) -> None:
    Path(path, "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def read_manifest(path: str | Path) -> dict:
    mpath = Path(path) / "manifest.json"
    if not mpath.is_file():
        raise FileNotFoundError(str(mpath))
    try:
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{mpath}: malformed manifest ({exc})") from exc
    if not isinstance(manifest, dict):
        raise FormatError(f"{mpath}: manifest must be a JSON object")
    for key in ("n", "dim", "checkpoints", "aggregation"):
        if key not in manifest:
            raise FormatError(f"{mpath}: manifest missing field {key!r}")
    ks = manifest["checkpoints"]
    if (
        not isinstance(ks, list)
        or not ks
        or any(not isinstance(k, int) for k in ks)
        or ks[0] != 0
        or any(b <= a for a, b in zip(ks, ks[1:]))
    ):
        raise FormatError(f"{mpath}: non-monotone checkpoint list {ks!r}")
    return manifest


def write_series(series: SnapshotSeries, path: str | Path, aggregation: str | None = None) -> None:
    """Persist an embedding series under ``path`` (created if needed)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    write_manifest(
        root,
        {
            "n": series.n,
            "dim": series.dim,
            "checkpoints": list(series.checkpoints),
            "aggregation": aggregation,
            "kind": "embeddings",
        },
    )
    for snap in series.snapshots:
        d = _ckpt_dir(root, snap.checkpoint_index)
        d.mkdir(parents=True, exist_ok=True)
        for name, seqs in (("video.mat", snap.video_sequences), ("text.mat", snap.text_sequences)):
            ordered = sorted(seqs, key=lambda s: s.sample_id)
            write_sequences(d / name, [s.features for s in ordered])


def read_series(path: str | Path) -> SnapshotSeries:
    """Load an embedding series; raises FormatError on any inconsistency."""
    root = Path(path)
    manifest = read_manifest(root)
    if manifest.get("kind", "embeddings") != "embeddings":
        raise FormatError(f"{root}: series holds precomputed similarities, use read_similarity_series")
    n = manifest["n"]
    dim = manifest["dim"]
    if not isinstance(n, int) or n < 1 or not isinstance(dim, int) or dim < 1:
        raise FormatError(f"{root}: manifest n/dim must be positive integers")
    snapshots = []
    for k in manifest["checkpoints"]:
        d = _ckpt_dir(root, k)
        try:
            videos = [
                FeatureSequence(i, VIDEO, feats)
                for i, feats in enumerate(read_sequences(d / "video.mat", dim, n))
            ]
            texts = [
                FeatureSequence(i, TEXT, feats)
                for i, feats in enumerate(read_sequences(d / "text.mat", dim, n))
            ]
            snapshots.append(Snapshot(k, tuple(videos), tuple(texts)))
        except ValueError as exc:
            raise FormatError(f"{d}: {exc}") from exc
    try:
        return SnapshotSeries(tuple(manifest["checkpoints"]), tuple(snapshots))
    except ValueError as exc:
        raise FormatError(f"{root}: {exc}") from exc


def write_similarity_series(
    matrices: Sequence[SimilarityMatrix], path: str | Path, aggregation: str | None = None
) -> None:
    """Persist precomputed per-checkpoint similarity matrices."""
    if not matrices:
        raise ValueError("need at least one similarity matrix")
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    write_manifest(
        root,
        {
            "n": matrices[0].n,
            "dim": None,
            "checkpoints": [m.checkpoint_index for m in matrices],
            "aggregation": aggregation,
            "kind": "similarity",
        },
    )
    for m in matrices:
        d = _ckpt_dir(root, m.checkpoint_index)
        d.mkdir(parents=True, exist_ok=True)
        write_square(d / "sim.mat", m.values)


def read_similarity_series(path: str | Path) -> list[SimilarityMatrix]:
    root = Path(path)
    manifest = read_manifest(root)
    if manifest.get("kind", "embeddings") != "similarity":
        raise FormatError(f"{root}: series holds embeddings, use read_series")
    n = manifest["n"]
    out = []
    for k in manifest["checkpoints"]:
        try:
            out.append(SimilarityMatrix(k, read_square(_ckpt_dir(root, k) / "sim.mat", n)))
        except ValueError as exc:
            raise FormatError(f"{_ckpt_dir(root, k)}: {exc}") from exc
    return out


def load_checkpoint_matrices(
    path: str | Path, mode: str | None = None, threads: int = 1
) -> tuple[list[SimilarityMatrix], dict]:
    """Load a series directory of either kind as similarity matrices.

    For embedding series the aggregation mode defaults to the one recorded
    in the manifest (falling back to ``mean``). ``threads`` bounds how many
    checkpoints are aggregated concurrently; results do not depend on it.
    """
    manifest = read_manifest(path)
    if manifest.get("kind", "embeddings") == "similarity":
        return read_similarity_series(path), manifest
    series = read_series(path)
    agg = mode or manifest.get("aggregation") or "mean"
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            mats = list(pool.map(lambda s: similarity_matrix(s, agg), series.snapshots))
    else:
        mats = [similarity_matrix(s, agg) for s in series.snapshots]
    manifest = dict(manifest)
    manifest["aggregation"] = agg
    return mats, manifest
