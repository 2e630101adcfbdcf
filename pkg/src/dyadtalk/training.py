"""Loss suite, Adam training loop, checkpoint format, and the finite-difference
gradient verifier."""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import ModelConfig, TrainConfig
from .datamodel import (
    BlendshapeSeq,
    DatasetManifest,
    ValidationError,
    normalize_motion,
)
from .model import DyadTalkModel, build_model

CHECKPOINT_MAGIC = b"DYTK"
CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    """Checkpoint file is corrupt, truncated, or of an unsupported version."""


# --- losses -------------------------------------------------------------------


def _paired_values(pred, gt):
    p = pred.values if isinstance(pred, BlendshapeSeq) else pred
    g = gt.values if isinstance(gt, BlendshapeSeq) else gt
    if isinstance(p, torch.Tensor) or isinstance(g, torch.Tensor):
        p = torch.as_tensor(p)
        g = torch.as_tensor(g)
    else:
        p = np.asarray(p, dtype=np.float64)
        g = np.asarray(g, dtype=np.float64)
    if p.shape != g.shape:
        raise ValidationError(f"loss: shape mismatch {tuple(p.shape)} vs {tuple(g.shape)}")
    return p, g


def loss_blendshape(pred, gt):
    """Mean squared difference over every frame and channel."""
    p, g = _paired_values(pred, gt)
    if isinstance(p, torch.Tensor):
        return ((p - g) ** 2).mean()
    return float(np.mean((p - g) ** 2))


def loss_velocity(pred, gt):
    """Mean squared difference of frame-to-frame velocities; offset-invariant."""
    p, g = _paired_values(pred, gt)
    if p.shape[-2] < 2:
        raise ValidationError("loss_velocity: needs at least 2 frames")
    if isinstance(p, torch.Tensor):
        vp = p[..., 1:, :] - p[..., :-1, :]
        vg = g[..., 1:, :] - g[..., :-1, :]
        return ((vp - vg) ** 2).mean()
    vp = np.diff(p, axis=-2)
    vg = np.diff(g, axis=-2)
    return float(np.mean((vp - vg) ** 2))


def loss_total(pred, gt):
    """Unit-weighted sum of the reconstruction and velocity terms."""
    return loss_blendshape(pred, gt) + loss_velocity(pred, gt)


def masked_loss_total(pred: torch.Tensor, gt: torch.Tensor,
                      mask: torch.Tensor) -> torch.Tensor:
    """loss_total over [batch, frames, channels] windows, ignoring padded
    frames (mask 0). Velocity pairs need both frames valid."""
    m = mask.to(pred.dtype)
    channels = pred.shape[-1]
    diff2 = (pred - gt) ** 2
    frames = m.sum()
    if float(frames) == 0:
        raise ValidationError("loss: no valid frames in batch")
    bs = (diff2 * m[..., None]).sum() / (frames * channels)
    pair = m[:, 1:] * m[:, :-1]
    pairs = pair.sum()
    if float(pairs) == 0:
        return bs
    vel_diff = (pred[:, 1:] - pred[:, :-1]) - (gt[:, 1:] - gt[:, :-1])
    vel = ((vel_diff ** 2) * pair[..., None]).sum() / (pairs * channels)
    return bs + vel


# --- data windows ---------------------------------------------------------------


def load_split_clips(manifest: DatasetManifest, split: str) -> list[dict]:
    """Read and normalize every clip of a split into plain arrays."""
    stats = manifest.norm_stats
    clips = []
    for cid in manifest.clip_ids(split):
        clip = manifest.read_clip(cid)
        clips.append({
            "clip_id": cid,
            "wave_a": clip.audio_a.samples,
            "wave_b": clip.audio_b.samples,
            "motion_a": normalize_motion(clip.motion_a, stats).values,
            "motion_b": normalize_motion(clip.motion_b, stats).values,
        })
    return clips


def window_index(clips: list[dict], window_frames: int) -> list[tuple[int, int]]:
    index = []
    for ci, clip in enumerate(clips):
        for start in range(0, clip["motion_a"].shape[0], window_frames):
            index.append((ci, start))
    return index


def collate_windows(clips: list[dict], items: list[tuple[int, int]],
                    window_frames: int, samples_per_frame: int):
    """Stack fixed-length windows, zero-padding the final window of each clip."""
    b = clips[0]["motion_a"].shape[1]
    n = len(items)
    wave_len = window_frames * samples_per_frame
    wave_a = np.zeros((n, wave_len), dtype=np.float32)
    wave_b = np.zeros((n, wave_len), dtype=np.float32)
    motion_a = np.zeros((n, window_frames, b), dtype=np.float32)
    motion_b = np.zeros((n, window_frames, b), dtype=np.float32)
    mask = np.zeros((n, window_frames), dtype=np.float32)
    for row, (ci, start) in enumerate(items):
        clip = clips[ci]
        valid = min(window_frames, clip["motion_a"].shape[0] - start)
        motion_a[row, :valid] = clip["motion_a"][start:start + valid]
        motion_b[row, :valid] = clip["motion_b"][start:start + valid]
        mask[row, :valid] = 1.0
        s0 = start * samples_per_frame
        s1 = min(clip["wave_a"].shape[0], (start + valid) * samples_per_frame)
        wave_a[row, :s1 - s0] = clip["wave_a"][s0:s1]
        wave_b[row, :s1 - s0] = clip["wave_b"][s0:s1]
    return (torch.from_numpy(wave_a), torch.from_numpy(wave_b),
            torch.from_numpy(motion_a), torch.from_numpy(motion_b),
            torch.from_numpy(mask))


def _batched(order, batch_size):
    for i in range(0, len(order), batch_size):
        yield order[i:i + batch_size]


def evaluate_split_loss(model: DyadTalkModel, clips: list[dict],
                        train_cfg: TrainConfig) -> float:
    """Frame-weighted mean of masked_loss_total over a split, in eval mode."""
    spf = model.cfg.samples_per_frame
    index = window_index(clips, train_cfg.window_frames)
    was_training = model.training
    model.eval()
    total, weight = 0.0, 0.0
    with torch.no_grad():
        for batch in _batched(index, train_cfg.batch_size):
            wave_a, wave_b, motion_a, motion_b, mask = collate_windows(
                clips, batch, train_cfg.window_frames, spf)
            loss = masked_loss_total(model(wave_a, wave_b, motion_a), motion_b, mask)
            frames = float(mask.sum())
            total += float(loss) * frames
            weight += frames
    if was_training:
        model.train()
    return total / weight


def constant_mean_baseline(train_clips: list[dict], eval_clips: list[dict],
                           train_cfg: TrainConfig) -> float:
    """Loss of the predictor that always outputs the train-split channel mean."""
    stacked = np.concatenate([c["motion_b"] for c in train_clips], axis=0)
    mean = torch.from_numpy(stacked.mean(axis=0).astype(np.float32))
    index = window_index(eval_clips, train_cfg.window_frames)
    total, weight = 0.0, 0.0
    for batch in _batched(index, train_cfg.batch_size):
        _, _, _, motion_b, mask = collate_windows(
            eval_clips, batch, train_cfg.window_frames, samples_per_frame=1)
        pred = mean.expand_as(motion_b)
        loss = masked_loss_total(pred, motion_b, mask)
        frames = float(mask.sum())
        total += float(loss) * frames
        weight += frames
    return total / weight


# --- training loop ---------------------------------------------------------------


@dataclass
class Checkpoint:
    model_config: ModelConfig
    train_config: TrainConfig | None
    epoch: int
    train_loss_history: list[float]
    val_loss_history: list[float]
    state: dict[str, torch.Tensor]

    def build_model(self) -> DyadTalkModel:
        model = DyadTalkModel(self.model_config)
        model.load_state_dict(self.state)
        model.eval()
        return model


def train(manifest: DatasetManifest, cfg: ModelConfig, train_cfg: TrainConfig,
          out_dir: str | Path | None = None, quiet: bool = True) -> Checkpoint:
    """Train on the manifest's train split, validating on the test split each
    epoch and retaining the best-validation weights. Deterministic for a fixed
    seed and thread count."""
    torch.manual_seed(train_cfg.seed)
    train_clips = load_split_clips(manifest, "train")
    if not train_clips:
        raise ValidationError("train split is empty")
    val_clips = load_split_clips(manifest, "test")

    model = build_model(cfg, train_cfg.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=train_cfg.learning_rate,
                                 betas=(train_cfg.beta1, train_cfg.beta2),
                                 eps=train_cfg.adam_eps,
                                 weight_decay=train_cfg.weight_decay)
    rng = np.random.default_rng(train_cfg.seed)
    spf = cfg.samples_per_frame
    index = window_index(train_clips, train_cfg.window_frames)

    log_rows = []
    train_history: list[float] = []
    val_history: list[float] = []
    best_val = math.inf
    best_state = None
    best_epoch = -1
    t0 = time.time()

    for epoch in range(train_cfg.epochs):
        model.train()
        order = [index[i] for i in rng.permutation(len(index))]
        total, weight = 0.0, 0.0
        for bi, batch in enumerate(_batched(order, train_cfg.batch_size)):
            wave_a, wave_b, motion_a, motion_b, mask = collate_windows(
                train_clips, batch, train_cfg.window_frames, spf)
            loss = masked_loss_total(model(wave_a, wave_b, motion_a), motion_b, mask)
            if not torch.isfinite(loss):
                raise RuntimeError(f"non-finite loss at epoch {epoch}, batch {bi}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            frames = float(mask.sum())
            total += float(loss) * frames
            weight += frames
        train_loss = total / weight
        val_loss = evaluate_split_loss(model, val_clips, train_cfg) if val_clips \
            else train_loss
        train_history.append(train_loss)
        val_history.append(val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())
        log_rows.append((epoch, train_loss, val_loss, time.time() - t0))
        if not quiet:
            print(f"epoch {epoch:4d}  train {train_loss:.6f}  val {val_loss:.6f}")

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "training_log.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_loss", "wall_time_s"])
            writer.writerows(log_rows)

    model.load_state_dict(best_state)
    return Checkpoint(model_config=cfg, train_config=train_cfg, epoch=best_epoch,
                      train_loss_history=train_history, val_loss_history=val_history,
                      state={k: v.detach().clone() for k, v in model.state_dict().items()})


# --- checkpoint serialization ------------------------------------------------------
#
# magic(4) | version u32 LE | sha256(32) of everything after | u64 LE json length |
# config/history JSON | concatenated raw little-endian float32 tensors in header order


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> Path:
    path = Path(path)
    names = list(ckpt.state.keys())
    header = {
        "model_config": ckpt.model_config.to_dict(),
        "train_config": None if ckpt.train_config is None else ckpt.train_config.to_dict(),
        "epoch": ckpt.epoch,
        "train_loss_history": ckpt.train_loss_history,
        "val_loss_history": ckpt.val_loss_history,
        "tensors": [{"name": n, "shape": list(ckpt.state[n].shape)} for n in names],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    payload = b"".join(
        ckpt.state[n].detach().cpu().to(torch.float32).numpy().astype("<f4").tobytes()
        for n in names)
    body = len(header_bytes).to_bytes(8, "little") + header_bytes + payload
    digest = hashlib.sha256(body).digest()
    path.write_bytes(CHECKPOINT_MAGIC
                     + CHECKPOINT_VERSION.to_bytes(4, "little") + digest + body)
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing file: {path}")
    blob = path.read_bytes()
    if len(blob) < 48 or blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path.name}: not a checkpoint file")
    version = int.from_bytes(blob[4:8], "little")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path.name}: unsupported checkpoint version {version}")
    digest, body = blob[8:40], blob[40:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path.name}: integrity check failed (truncated or corrupt)")
    header_len = int.from_bytes(body[:8], "little")
    header = json.loads(body[8:8 + header_len].decode())
    payload = body[8 + header_len:]
    state: dict[str, torch.Tensor] = {}
    offset = 0
    for spec in header["tensors"]:
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        raw = payload[offset:offset + 4 * count]
        if len(raw) != 4 * count:
            raise CheckpointError(f"{path.name}: tensor payload truncated")
        offset += 4 * count
        array = np.frombuffer(raw, dtype="<f4").reshape(spec["shape"]).copy()
        state[spec["name"]] = torch.from_numpy(array)
    return Checkpoint(
        model_config=ModelConfig.from_dict(header["model_config"]),
        train_config=None if header["train_config"] is None
        else TrainConfig.from_dict(header["train_config"]),
        epoch=header["epoch"],
        train_loss_history=list(header["train_loss_history"]),
        val_loss_history=list(header["val_loss_history"]),
        state=state,
    )


# --- gradient verification -----------------------------------------------------------


@dataclass
class GradCheckEntry:
    name: str
    analytic: float
    numeric: float
    abs_err: float
    tol: float
    passed: bool
    redraws: int = 0  # entries redrawn because the FD interval crossed a ReLU kink


@dataclass
class GradCheckReport:
    entries: list[GradCheckEntry]
    elapsed_s: float

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def max_abs_err(self) -> float:
        return max((e.abs_err for e in self.entries), default=0.0)

    def format(self) -> str:
        lines = []
        for e in self.entries:
            status = "ok  " if e.passed else "FAIL"
            lines.append(f"{status} {e.name:55s} analytic {e.analytic:+.6e} "
                         f"numeric {e.numeric:+.6e} err {e.abs_err:.3e}")
        verdict = "PASS" if self.passed else "FAIL"
        lines.append(f"{verdict}: {len(self.entries)} tensors checked in "
                     f"{self.elapsed_s:.1f}s, max discrepancy {self.max_abs_err:.3e}")
        return "\n".join(lines)


def gradcheck(cfg: ModelConfig | None = None, seed: int = 0, frames: int = 24,
              step: float = 1e-5, rel_tol: float = 1e-4, abs_floor: float = 1e-7,
              corrupt_tensor: str | None = None, max_redraws: int = 16) -> GradCheckReport:
    """Compare the backward-pass gradient of loss_total against central finite
    differences, one random entry per parameter tensor, in float64.

    Central differences only estimate the derivative while the interval
    [theta-step, theta+step] stays inside one linear region of every ReLU; the
    ReLU activation sign patterns of the two endpoint evaluations are compared
    and the entry is redrawn when they differ, so a kink crossing never
    masquerades as a gradient error (or hides one).

    ``corrupt_tensor`` deliberately biases one analytic gradient; it exists so
    the test suite can confirm a broken gradient is detected.
    """
    import dataclasses as _dc

    import torch.nn as nn

    cfg = cfg or ModelConfig.tiny()
    if cfg.dropout != 0.0:
        cfg = _dc.replace(cfg, dropout=0.0)
    start = time.time()
    torch.manual_seed(seed)
    model = build_model(cfg, seed).double()
    model.eval()

    rng = np.random.default_rng(seed)
    spf = cfg.samples_per_frame
    wave_a = torch.from_numpy(rng.uniform(-0.5, 0.5, (1, frames * spf)))
    wave_b = torch.from_numpy(rng.uniform(-0.5, 0.5, (1, frames * spf)))
    motion_a = torch.from_numpy(rng.uniform(0.05, 0.95, (1, frames, cfg.channels)))
    target = torch.from_numpy(rng.uniform(0.05, 0.95, (1, frames, cfg.channels)))

    def loss_fn() -> torch.Tensor:
        pred = model(wave_a, wave_b, motion_a)
        return loss_blendshape(pred, target) + loss_velocity(pred, target)

    signs: list[torch.Tensor] = []

    def capture(module, args):
        signs.append(args[0] > 0)

    handles = [m.register_forward_pre_hook(capture)
               for m in model.modules() if isinstance(m, nn.ReLU)]

    def loss_with_signs() -> tuple[float, list[torch.Tensor]]:
        signs.clear()
        with torch.no_grad():
            value = float(loss_fn())
        return value, list(signs)

    signs.clear()
    loss = loss_fn()
    model.zero_grad()
    loss.backward()

    entries = []
    try:
        for name, param in model.named_parameters():
            grad = param.grad
            if grad is None:
                grad = torch.zeros_like(param)
            if not torch.isfinite(grad).all():
                entries.append(GradCheckEntry(name, math.nan, math.nan, math.inf,
                                              0.0, False))
                continue
            flat = param.data.view(-1)
            entry = None
            for attempt in range(max_redraws):
                idx = int(rng.integers(flat.numel()))
                analytic = float(grad.view(-1)[idx])
                if corrupt_tensor is not None and name == corrupt_tensor:
                    analytic += 1.0
                original = float(flat[idx])
                with torch.no_grad():
                    flat[idx] = original + step
                loss_hi, signs_hi = loss_with_signs()
                with torch.no_grad():
                    flat[idx] = original - step
                loss_lo, signs_lo = loss_with_signs()
                with torch.no_grad():
                    flat[idx] = original
                crossed = any(not torch.equal(a, b)
                              for a, b in zip(signs_hi, signs_lo))
                numeric = (loss_hi - loss_lo) / (2.0 * step)
                abs_err = abs(analytic - numeric)
                tol = max(rel_tol * max(abs(analytic), abs(numeric)), abs_floor)
                entry = GradCheckEntry(name, analytic, numeric, abs_err, tol,
                                       abs_err <= tol, redraws=attempt)
                if not crossed:
                    break
                entry.passed = False  # kink never avoided: keep the last failure
            entries.append(entry)
    finally:
        for handle in handles:
            handle.remove()
    return GradCheckReport(entries, time.time() - start)
