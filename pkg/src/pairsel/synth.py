"""Synthetic paired video/text data with planted duplicate-text groups.

Every group draws one latent vector. The group's text tokens are a pure
function of that latent, so all samples in a group carry bitwise-identical
text. Each sample's video tokens are the latent plus per-token jitter plus
Gaussian noise, so videos stay distinct. Token row 0 of both modalities is
the clean latent slice and acts as the global (cls) token.

Group structure comes from a histogram {group_size: group_count}, e.g.
``{3: 10, 1: 34}`` for ten triples plus 34 singletons (n = 64); the CLI
spells that ``"3:10,1:34"``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import FormatError
from .matio import read_sequences, write_sequences
from .snapshots import _freeze

TOKEN_JITTER = 0.35  # spread of non-global tokens around the latent


@dataclass(frozen=True, eq=False)
class ToyDataset:
    """Raw paired features: videos (N,Tv,dv), texts (N,Tt,dt), group ids (N,)."""

    videos: np.ndarray
    texts: np.ndarray
    group_ids: np.ndarray
    noise: float
    seed: int

    def __post_init__(self) -> None:
        videos = np.asarray(self.videos, dtype=float)
        texts = np.asarray(self.texts, dtype=float)
        gids = np.asarray(self.group_ids, dtype=int)
        if videos.ndim != 3 or texts.ndim != 3:
            raise ValueError("videos and texts must have shape (N, T, d)")
        if videos.shape[0] != texts.shape[0] or videos.shape[0] != gids.shape[0]:
            raise ValueError("videos, texts and group_ids must agree on N")
        if not (np.isfinite(videos).all() and np.isfinite(texts).all()):
            raise ValueError("non-finite raw feature")
        object.__setattr__(self, "videos", _freeze(videos))
        object.__setattr__(self, "texts", _freeze(texts))
        gids = gids.copy()
        gids.setflags(write=False)
        object.__setattr__(self, "group_ids", gids)

    @property
    def n(self) -> int:
        return self.videos.shape[0]

    @property
    def dims(self) -> tuple[int, int, int, int]:
        """(d_video, d_text, t_video, t_text)."""
        return (
            self.videos.shape[2],
            self.texts.shape[2],
            self.videos.shape[1],
            self.texts.shape[1],
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ToyDataset):
            return NotImplemented
        return (
            np.array_equal(self.videos, other.videos)
            and np.array_equal(self.texts, other.texts)
            and np.array_equal(self.group_ids, other.group_ids)
        )


def parse_group_spec(spec: str) -> dict[int, int]:
    """Parse ``"3:10,1:34"`` into {3: 10, 1: 34}."""
    out: dict[int, int] = {}
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            size_s, count_s = part.split(":")
            size, count = int(size_s), int(count_s)
        except ValueError as exc:
            raise ValueError(f"bad group spec entry {part!r}, expected size:count") from exc
        if size < 1 or count < 1:
            raise ValueError(f"group spec entry {part!r} must be positive")
        if size in out:
            raise ValueError(f"duplicate group size {size} in group spec")
        out[size] = count
    if not out:
        raise ValueError("empty group spec")
    return out


def generate_synthetic(
    n: int,
    dims: tuple[int, int, int, int],
    group_spec: Mapping[int, int],
    noise: float,
    seed: int,
) -> ToyDataset:
    """Draw a dataset of ``n`` paired samples.

    Args:
        n: number of samples.
        dims: (d_video, d_text, t_video, t_text).
        group_spec: histogram {group_size: group_count}; sizes times counts
            must sum to n.
        noise: standard deviation of the additive video noise (>= 0).
        seed: rng seed; equal seeds give bitwise-equal datasets.
    """
    d_v, d_t, t_v, t_t = (int(x) for x in dims)
    if min(d_v, d_t, t_v, t_t) < 1:
        raise ValueError(f"dims must be positive, got {dims}")
    if n < 1:
        raise ValueError("n must be positive")
    if noise < 0:
        raise ValueError("noise must be non-negative")
    total = sum(size * count for size, count in group_spec.items())
    if total != n:
        raise ValueError(f"group spec covers {total} samples, expected {n}")

    rng = np.random.default_rng(seed)
    d_latent = max(d_v, d_t)
    videos = np.empty((n, t_v, d_v))
    texts = np.empty((n, t_t, d_t))
    group_ids = np.empty(n, dtype=int)

    sample = 0
    group = 0
    for size in sorted(group_spec):
        for _ in range(group_spec[size]):
            latent = rng.normal(size=d_latent)
            text = np.empty((t_t, d_t))
            text[0] = latent[:d_t]
            if t_t > 1:
                text[1:] = latent[:d_t] + TOKEN_JITTER * rng.normal(size=(t_t - 1, d_t))
            for _ in range(size):
                video = np.empty((t_v, d_v))
                video[0] = latent[:d_v]
                if t_v > 1:
                    video[1:] = latent[:d_v] + TOKEN_JITTER * rng.normal(size=(t_v - 1, d_v))
                video += noise * rng.normal(size=(t_v, d_v))
                videos[sample] = video
                texts[sample] = text
                group_ids[sample] = group
                sample += 1
            group += 1
    return ToyDataset(videos, texts, group_ids, float(noise), int(seed))


def write_dataset(data: ToyDataset, path: str | Path) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    d_v, d_t, t_v, t_t = data.dims
    manifest = {
        "n": data.n,
        "d_video": d_v,
        "d_text": d_t,
        "t_video": t_v,
        "t_text": t_t,
        "noise": data.noise,
        "seed": data.seed,
        "group_ids": [int(g) for g in data.group_ids],
    }
    (root / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    write_sequences(root / "video.mat", list(data.videos))
    write_sequences(root / "text.mat", list(data.texts))


def read_dataset(path: str | Path) -> ToyDataset:
    root = Path(path)
    mpath = root / "manifest.json"
    if not mpath.is_file():
        raise FileNotFoundError(str(mpath))
    try:
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{mpath}: malformed manifest ({exc})") from exc
    try:
        n = int(manifest["n"])
        d_v, d_t = int(manifest["d_video"]), int(manifest["d_text"])
        t_v, t_t = int(manifest["t_video"]), int(manifest["t_text"])
        gids = [int(g) for g in manifest["group_ids"]]
        noise = float(manifest["noise"])
        seed = int(manifest["seed"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{mpath}: bad manifest field ({exc})") from exc
    if len(gids) != n:
        raise FormatError(f"{mpath}: group_ids length {len(gids)} != n {n}")
    videos = read_sequences(root / "video.mat", d_v, n)
    texts = read_sequences(root / "text.mat", d_t, n)
    if any(v.shape[0] != t_v for v in videos) or any(t.shape[0] != t_t for t in texts):
        raise FormatError(f"{root}: sequence length disagrees with manifest")
    try:
        return ToyDataset(np.stack(videos), np.stack(texts), np.array(gids), noise, seed)
    except ValueError as exc:
        raise FormatError(f"{root}: {exc}") from exc
