"""Dual linear encoder trained with a symmetric temperature-scaled contrastive loss.

Two projection matrices map raw video/text tokens into a shared space. A
batch is scored in both directions (video-to-text and text-to-video); the
loss is the mean of the two cross-entropy terms with the diagonal as the
targets, with logits ``similarity / tau`` and the temperature trained
through its log. Updates are plain gradient descent; gradients are exact
analytic derivatives of the composed map (projection, aggregation, cosine,
scaled softmax), which keeps them cheap to verify against finite
differences.

For ``cls`` and ``mean`` aggregation the text-to-video matrix is the
transpose of the video-to-text one. For ``cico`` the two directions are
computed independently (max over the other side then mean over own tokens)
and are not transposes of each other.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateEmbeddingError, DivergenceError, FormatError
from .matio import fmt
from .selection import EpochPlan
from .snapshots import (
    AGGREGATION_MODES,
    TEXT,
    VIDEO,
    FeatureSequence,
    Snapshot,
    SnapshotSeries,
)
from .synth import ToyDataset

LOG_TAU_INIT = math.log(0.07)


@dataclass
class DualEncoder:
    """Linear projections for both modalities plus the log temperature."""

    w_video: np.ndarray
    w_text: np.ndarray
    log_tau: float = LOG_TAU_INIT

    def __post_init__(self) -> None:
        self.w_video = np.array(self.w_video, dtype=float)
        self.w_text = np.array(self.w_text, dtype=float)
        if self.w_video.ndim != 2 or self.w_text.ndim != 2:
            raise ValueError("projection weights must be 2-D")
        if self.w_video.shape[0] != self.w_text.shape[0]:
            raise ValueError("both projections must share the output dim")

    @property
    def embed_dim(self) -> int:
        return self.w_video.shape[0]

    @property
    def tau(self) -> float:
        return float(math.exp(self.log_tau)) if self.log_tau < 700 else float("inf")

    def copy(self) -> "DualEncoder":
        return DualEncoder(self.w_video.copy(), self.w_text.copy(), self.log_tau)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int
    learning_rate: float = 0.05
    checkpoint_interval: int = 5
    aggregation: str = "mean"
    seed: int = 0
    embed_dim: int = 8
    freeze_text: bool = False

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.checkpoint_interval < 1:
            raise ValueError("checkpoint_interval must be positive")
        if self.aggregation not in AGGREGATION_MODES:
            raise ValueError(f"unknown aggregation mode {self.aggregation!r}")
        if self.embed_dim < 1:
            raise ValueError("embed_dim must be positive")


@dataclass(frozen=True)
class LogRow:
    """One loss-log line; alpha and mean_batch_score stay None for reference runs."""

    epoch: int
    loss: float
    alpha: float | None = None
    mean_batch_score: float | None = None


@dataclass(frozen=True)
class LossGrads:
    loss: float
    grad_w_video: np.ndarray
    grad_w_text: np.ndarray
    grad_log_tau: float


@dataclass(frozen=True)
class TrainResult:
    series: SnapshotSeries
    encoder: DualEncoder
    log: tuple[LogRow, ...]


def init_encoder(
    d_video: int, d_text: int, embed_dim: int, rng: np.random.Generator
) -> DualEncoder:
    """Gaussian init scaled by 1/sqrt(input dim), temperature at 0.07."""
    w_v = rng.normal(size=(embed_dim, d_video)) / math.sqrt(d_video)
    w_t = rng.normal(size=(embed_dim, d_text)) / math.sqrt(d_text)
    return DualEncoder(w_v, w_t, LOG_TAU_INIT)


def encode(enc: DualEncoder, x: np.ndarray, modality: str, sample_id: int = 0) -> FeatureSequence:
    """Project raw tokens (T, d_raw) row-wise into the shared space."""
    if modality == VIDEO:
        w = enc.w_video
    elif modality == TEXT:
        w = enc.w_text
    else:
        raise ValueError(f"unknown modality {modality!r}")
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ValueError(f"expected (T, {w.shape[1]}) input, got {x.shape}")
    return FeatureSequence(sample_id, modality, x @ w.T)


def encode_snapshot(enc: DualEncoder, data: ToyDataset, checkpoint_index: int) -> Snapshot:
    """Encode the whole dataset with the current weights."""
    venc = data.videos @ enc.w_video.T
    tenc = data.texts @ enc.w_text.T
    videos = tuple(FeatureSequence(i, VIDEO, venc[i]) for i in range(data.n))
    texts = tuple(FeatureSequence(i, TEXT, tenc[i]) for i in range(data.n))
    return Snapshot(checkpoint_index, videos, texts)


def contrastive_loss(s_v2t: np.ndarray, s_t2v: np.ndarray, tau: float) -> float:
    """Symmetric cross-entropy over scaled similarity rows.

    Both matrices are B x B with matching positives on the diagonal. A
    uniform matrix gives ln B; a single pair gives 0.
    """
    s1 = np.asarray(s_v2t, dtype=float)
    s2 = np.asarray(s_t2v, dtype=float)
    if s1.shape != s2.shape or s1.ndim != 2 or s1.shape[0] != s1.shape[1]:
        raise ValueError(f"similarity matrices must be square and equal-shaped, got {s1.shape} and {s2.shape}")
    if not (np.isfinite(tau) and tau > 0):
        raise ValueError(f"tau must be a positive finite number, got {tau}")
    b = s1.shape[0]
    total = 0.0
    for s in (s1, s2):
        z = s / tau
        zmax = z.max(axis=1, keepdims=True)
        lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
        total += float((z.diagonal() - lse).sum())
    return -total / (2 * b) + 0.0


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _checked_norms(x: np.ndarray, what: str) -> np.ndarray:
    norms = np.sqrt(np.einsum("...d,...d->...", x, x))
    if np.any(norms == 0.0):
        idx = tuple(int(v) for v in np.argwhere(norms == 0.0)[0])
        raise DegenerateEmbeddingError(f"zero-norm {what} embedding at index {idx}")
    return norms


def _unnormalize_grad(d_hat: np.ndarray, hat: np.ndarray, norms: np.ndarray) -> np.ndarray:
    inner = np.einsum("...d,...d->...", d_hat, hat)
    return (d_hat - inner[..., None] * hat) / norms[..., None]


def loss_and_grads(
    enc: DualEncoder, batch_ids: Sequence[int], data: ToyDataset, mode: str
) -> LossGrads:
    """Forward plus exact analytic gradients for one batch.

    Returns the loss and gradients for w_video, w_text and log_tau. The
    max in cico aggregation uses the first argmax on ties, matching the
    forward computation.
    """
    if mode not in AGGREGATION_MODES:
        raise ValueError(f"unknown aggregation mode {mode!r}")
    ids = [int(i) for i in batch_ids]
    if len(set(ids)) != len(ids) or not ids:
        raise ValueError("batch ids must be non-empty and distinct")
    xv = data.videos[ids]  # (B, Tv, dv)
    xt = data.texts[ids]  # (B, Tt, dt)
    b = len(ids)
    t_v, t_t = xv.shape[1], xt.shape[1]
    tau = enc.tau
    if not (np.isfinite(tau) and tau > 0):
        raise ValueError(f"tau must be positive and finite, got {tau}")

    venc = xv @ enc.w_video.T  # (B, Tv, d)
    tenc = xt @ enc.w_text.T  # (B, Tt, d)

    if mode in ("cls", "mean"):
        pv = venc[:, 0, :] if mode == "cls" else venc.mean(axis=1)
        pt = tenc[:, 0, :] if mode == "cls" else tenc.mean(axis=1)
        nv = _checked_norms(pv, "pooled video")
        nt = _checked_norms(pt, "pooled text")
        vh = pv / nv[:, None]
        th = pt / nt[:, None]
        s1 = np.einsum("id,jd->ij", vh, th)
        s2 = s1.T
    else:
        nv = _checked_norms(venc, "video token")
        nt = _checked_norms(tenc, "text token")
        vh = venc / nv[..., None]
        th = tenc / nt[..., None]
        grid = np.einsum("ipd,jqd->ijpq", vh, th)  # (B, B, Tv, Tt)
        amax_q = grid.argmax(axis=3)
        amax_p = grid.argmax(axis=2)
        s1 = grid.max(axis=3).mean(axis=2)
        s2 = grid.max(axis=2).mean(axis=2).T

    loss = contrastive_loss(s1, s2, tau)

    z1 = s1 / tau
    z2 = s2 / tau
    g1 = (_softmax_rows(z1) - np.eye(b)) / (2 * b)
    g2 = (_softmax_rows(z2) - np.eye(b)) / (2 * b)
    grad_log_tau = -float(np.sum(g1 * z1) + np.sum(g2 * z2))

    if mode in ("cls", "mean"):
        upstream = (g1 + g2.T) / tau  # dL/ds1[i, j]
        d_vh = upstream @ th
        d_th = upstream.T @ vh
        d_pv = _unnormalize_grad(d_vh, vh, nv)
        d_pt = _unnormalize_grad(d_th, th, nt)
        d_venc = np.zeros_like(venc)
        d_tenc = np.zeros_like(tenc)
        if mode == "cls":
            d_venc[:, 0, :] = d_pv
            d_tenc[:, 0, :] = d_pt
        else:
            d_venc += d_pv[:, None, :] / t_v
            d_tenc += d_pt[:, None, :] / t_t
    else:
        u1 = g1 / tau
        u2 = g2 / tau
        d_grid = np.zeros_like(grid)
        ii, jj, pp = np.indices((b, b, t_v))
        np.add.at(d_grid, (ii, jj, pp, amax_q), np.broadcast_to((u1 / t_v)[:, :, None], (b, b, t_v)))
        aa, bb, qq = np.indices((b, b, t_t))
        np.add.at(d_grid, (aa, bb, amax_p, qq), np.broadcast_to((u2.T / t_t)[:, :, None], (b, b, t_t)))
        d_vh = np.einsum("ijpq,jqd->ipd", d_grid, th)
        d_th = np.einsum("ijpq,ipd->jqd", d_grid, vh)
        d_venc = _unnormalize_grad(d_vh, vh, nv)
        d_tenc = _unnormalize_grad(d_th, th, nt)

    grad_w_video = np.einsum("btd,btv->dv", d_venc, xv)
    grad_w_text = np.einsum("btd,btv->dv", d_tenc, xt)
    return LossGrads(loss, grad_w_video, grad_w_text, grad_log_tau)


def _step(enc: DualEncoder, ids: Sequence[int], data: ToyDataset, cfg: TrainConfig,
          where: str) -> float:
    if not (np.isfinite(enc.log_tau) and enc.tau > 0 and np.isfinite(enc.tau)):
        raise DivergenceError(f"{where}: temperature diverged (log_tau={enc.log_tau})")
    lg = loss_and_grads(enc, ids, data, cfg.aggregation)
    if not np.isfinite(lg.loss):
        raise DivergenceError(f"{where}: non-finite loss {lg.loss}")
    lr = cfg.learning_rate
    enc.w_video -= lr * lg.grad_w_video
    if not cfg.freeze_text:
        enc.w_text -= lr * lg.grad_w_text
    enc.log_tau -= lr * lg.grad_log_tau
    if not (np.isfinite(enc.w_video).all() and np.isfinite(enc.w_text).all()
            and np.isfinite(enc.log_tau)):
        raise DivergenceError(f"{where}: parameters diverged after update")
    return lg.loss


def _checkpoint_epochs(epochs: int, interval: int) -> list[int]:
    ks = {0, epochs}
    ks.update(e for e in range(interval, epochs + 1, interval))
    return sorted(ks)


def _run_epochs(
    data: ToyDataset,
    cfg: TrainConfig,
    enc: DualEncoder,
    epoch_batches: Callable[[int], list[Sequence[int]]],
    epoch_meta: Callable[[int], tuple[float | None, float | None]],
    label: str,
) -> TrainResult:
    wanted = set(_checkpoint_epochs(cfg.epochs, cfg.checkpoint_interval))
    checkpoints = [0]
    snaps = [encode_snapshot(enc, data, 0)]
    log: list[LogRow] = []
    for epoch in range(1, cfg.epochs + 1):
        losses = [
            _step(enc, ids, data, cfg, f"{label} epoch {epoch}")
            for ids in epoch_batches(epoch)
        ]
        alpha, mean_score = epoch_meta(epoch)
        log.append(LogRow(epoch, float(np.mean(losses)), alpha, mean_score))
        if epoch in wanted:
            checkpoints.append(epoch)
            snaps.append(encode_snapshot(enc, data, epoch))
    series = SnapshotSeries(tuple(checkpoints), tuple(snaps))
    return TrainResult(series, enc, tuple(log))


def train_reference(
    data: ToyDataset, cfg: TrainConfig, encoder: DualEncoder | None = None
) -> TrainResult:
    """Train on uniformly shuffled batches, snapshotting along the way.

    Snapshots are taken before any update (checkpoint 0), every
    ``checkpoint_interval`` epochs, and after the final epoch.
    """
    rng = np.random.default_rng(cfg.seed)
    d_v, d_t, _, _ = data.dims
    enc = encoder.copy() if encoder is not None else init_encoder(d_v, d_t, cfg.embed_dim, rng)
    n = data.n

    def batches(_epoch: int) -> list[Sequence[int]]:
        perm = rng.permutation(n)
        return [perm[i : i + cfg.batch_size].tolist() for i in range(0, n, cfg.batch_size)]

    return _run_epochs(data, cfg, enc, batches, lambda _e: (None, None), "reference")


def train_selective(
    data: ToyDataset,
    cfg: TrainConfig,
    plans: Sequence[EpochPlan],
    encoder: DualEncoder | None = None,
) -> TrainResult:
    """Train on pre-built curriculum batches.

    ``plans`` must cover ``cfg.epochs`` epochs and each epoch must
    partition exactly the dataset ids, otherwise a FormatError is raised.
    """
    if len(plans) < cfg.epochs:
        raise FormatError(f"plan covers {len(plans)} epochs, config wants {cfg.epochs}")
    expected = set(range(data.n))
    for e in range(cfg.epochs):
        if plans[e].epoch != e:
            raise FormatError(f"plan at position {e} is labelled epoch {plans[e].epoch}")
        if plans[e].ids != expected:
            raise FormatError(
                f"plan/dataset id mismatch in epoch {e}: plan covers {len(plans[e].ids)} ids, "
                f"dataset has {data.n}"
            )
    rng = np.random.default_rng(cfg.seed)
    d_v, d_t, _, _ = data.dims
    enc = encoder.copy() if encoder is not None else init_encoder(d_v, d_t, cfg.embed_dim, rng)

    def batches(epoch: int) -> list[Sequence[int]]:
        return [list(b.ids) for b in plans[epoch - 1].batches]

    def meta(epoch: int) -> tuple[float | None, float | None]:
        plan = plans[epoch - 1]
        return plan.alpha, float(np.mean([b.score for b in plan.batches]))

    return _run_epochs(data, cfg, enc, batches, meta, "selective")


# ---------------------------------------------------------------------------
# persistence


def write_encoder(enc: DualEncoder, path: str | Path) -> None:
    payload = {
        "embed_dim": enc.embed_dim,
        "d_video": enc.w_video.shape[1],
        "d_text": enc.w_text.shape[1],
        "log_tau": enc.log_tau,
        "w_video": [[float(v) for v in row] for row in enc.w_video],
        "w_text": [[float(v) for v in row] for row in enc.w_text],
    }
    Path(path).write_text(json.dumps(payload) + "\n", encoding="utf-8")


def read_encoder(path: str | Path) -> DualEncoder:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(str(path))
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
        enc = DualEncoder(
            np.array(payload["w_video"], dtype=float),
            np.array(payload["w_text"], dtype=float),
            float(payload["log_tau"]),
        )
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: bad encoder file ({exc})") from exc
    return enc


def write_loss_log(rows: Sequence[LogRow], path: str | Path) -> None:
    lines = ["epoch,loss,alpha,mean_batch_score"]
    for r in rows:
        alpha = "" if r.alpha is None else fmt(r.alpha)
        score = "" if r.mean_batch_score is None else fmt(r.mean_batch_score)
        lines.append(f"{r.epoch},{fmt(r.loss)},{alpha},{score}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_loss_log(path: str | Path) -> list[LogRow]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(str(path))
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != "epoch,loss,alpha,mean_batch_score":
        raise FormatError(f"{path}: unexpected loss-log header")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise FormatError(f"{path}:{lineno}: expected 4 columns")
        try:
            rows.append(
                LogRow(
                    int(parts[0]),
                    float(parts[1]),
                    float(parts[2]) if parts[2] else None,
                    float(parts[3]) if parts[3] else None,
                )
            )
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: bad loss-log row ({exc})") from exc
    return rows
