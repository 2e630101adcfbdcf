"""Dyadic clip data model: motion/audio containers, bit-exact clip
serialization, min-max coefficient normalization, and turn/round accounting."""

from __future__ import annotations

import dataclasses
import json
import math
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MIN_TURN_SECONDS = 2.0
PARTITION_NAMES = ("exp", "jaw", "pose")
SPEAKERS = ("A", "B")


class ValidationError(ValueError):
    """A record violated one of its documented invariants."""


@dataclass(frozen=True)
class PartitionLayout:
    """Half-open channel ranges splitting the coefficient vector into
    expression / jaw / head-pose groups. Ranges must tile [0, channels)."""

    exp: tuple[int, int] = (0, 50)
    jaw: tuple[int, int] = (50, 53)
    pose: tuple[int, int] = (53, 56)

    def __post_init__(self) -> None:
        object.__setattr__(self, "exp", tuple(int(v) for v in self.exp))
        object.__setattr__(self, "jaw", tuple(int(v) for v in self.jaw))
        object.__setattr__(self, "pose", tuple(int(v) for v in self.pose))
        cursor = 0
        for start, end in sorted([self.exp, self.jaw, self.pose]):
            if start != cursor or end <= start:
                raise ValidationError("partitions: ranges must be disjoint and exhaustive")
            cursor = end

    @property
    def channels(self) -> int:
        return max(self.exp[1], self.jaw[1], self.pose[1])

    def columns(self, name: str) -> slice:
        if name not in PARTITION_NAMES:
            raise ValidationError(f"partition: unknown name {name!r}")
        lo, hi = getattr(self, name)
        return slice(lo, hi)

    def to_dict(self) -> dict:
        return {"exp": list(self.exp), "jaw": list(self.jaw), "pose": list(self.pose)}

    @classmethod
    def from_dict(cls, data: dict) -> "PartitionLayout":
        return cls(exp=tuple(data["exp"]), jaw=tuple(data["jaw"]), pose=tuple(data["pose"]))


@dataclass
class BlendshapeSeq:
    """Frame-indexed motion coefficients for one person, [n_frames x channels] float32."""

    values: np.ndarray
    fps: float = 25.0
    layout: PartitionLayout = field(default_factory=PartitionLayout)

    def __post_init__(self) -> None:
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        if self.values.ndim != 2 or self.values.shape[0] < 1:
            raise ValidationError("values: expected a non-empty [frames x channels] matrix")
        if not np.isfinite(self.values).all():
            raise ValidationError("values: non-finite entries")
        if not self.fps > 0:
            raise ValidationError("fps: must be positive")
        if self.layout.channels != self.values.shape[1]:
            raise ValidationError("layout: partition ranges do not cover the channel count")

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_frames / self.fps


@dataclass
class AudioTrack:
    """Mono waveform in [-1, 1] float32."""

    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self) -> None:
        self.samples = np.ascontiguousarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 1 or self.samples.size < 1:
            raise ValidationError("samples: expected a non-empty 1-D waveform")
        if not np.isfinite(self.samples).all():
            raise ValidationError("samples: non-finite entries")
        if float(np.abs(self.samples).max()) > 1.0:
            raise ValidationError("samples: amplitude exceeds [-1, 1]")
        if self.sample_rate <= 0:
            raise ValidationError("sample_rate: must be positive")

    @property
    def n_samples(self) -> int:
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate


@dataclass(frozen=True)
class TurnSegment:
    """One speaking turn; enforced to last at least MIN_TURN_SECONDS."""

    speaker: str
    start_s: float
    end_s: float

    def __post_init__(self) -> None:
        if self.speaker not in SPEAKERS:
            raise ValidationError(f"speaker: must be one of {SPEAKERS}")
        if self.end_s - self.start_s < MIN_TURN_SECONDS - 1e-9:
            raise ValidationError("turn: shorter than the minimum turn length")
        if self.start_s < 0:
            raise ValidationError("turn: negative start time")

    def to_dict(self) -> dict:
        return {"speaker": self.speaker, "start_s": self.start_s, "end_s": self.end_s}

    @classmethod
    def from_dict(cls, data: dict) -> "TurnSegment":
        return cls(data["speaker"], float(data["start_s"]), float(data["end_s"]))


@dataclass
class ClipRecord:
    """One dyadic conversation clip: per-speaker audio + motion and turn annotations."""

    clip_id: str
    audio_a: AudioTrack
    audio_b: AudioTrack
    motion_a: BlendshapeSeq
    motion_b: BlendshapeSeq
    turns: list[TurnSegment] = field(default_factory=list)

    def validate(self) -> None:
        if not self.clip_id:
            raise ValidationError("clip_id: empty")
        if self.motion_a.n_frames != self.motion_b.n_frames:
            raise ValidationError("motion: frame counts of the two speakers differ")
        if self.motion_a.fps != self.motion_b.fps:
            raise ValidationError("motion: fps of the two speakers differ")
        if self.audio_a.sample_rate != self.audio_b.sample_rate:
            raise ValidationError("audio: sample rates of the two speakers differ")
        frame_period = 1.0 / self.motion_a.fps
        for name, track in (("audio_a", self.audio_a), ("audio_b", self.audio_b)):
            if abs(track.duration_s - self.motion_a.duration_s) > frame_period + 1e-9:
                raise ValidationError(f"{name}: audio/motion durations disagree by more "
                                      "than one frame period")
        prev_end = -math.inf
        for turn in self.turns:
            if turn.start_s < prev_end - 1e-9:
                raise ValidationError("turns: turns overlap")
            prev_end = turn.end_s
            if turn.end_s > self.motion_a.duration_s + 1e-6:
                raise ValidationError("turns: turn extends past the clip end")

    @property
    def n_frames(self) -> int:
        return self.motion_a.n_frames

    @property
    def duration_s(self) -> float:
        return self.motion_a.duration_s


@dataclass
class NormalizationStats:
    """Per-channel min/max computed on the training split only."""

    min_values: np.ndarray
    max_values: np.ndarray

    def __post_init__(self) -> None:
        self.min_values = np.ascontiguousarray(self.min_values, dtype=np.float64)
        self.max_values = np.ascontiguousarray(self.max_values, dtype=np.float64)
        if self.min_values.ndim != 1 or self.min_values.shape != self.max_values.shape:
            raise ValidationError("norm_stats: min/max must be 1-D vectors of equal length")
        if not (np.isfinite(self.min_values).all() and np.isfinite(self.max_values).all()):
            raise ValidationError("norm_stats: non-finite entries")
        if (self.max_values < self.min_values).any():
            raise ValidationError("norm_stats: max < min on some channel")

    @property
    def channels(self) -> int:
        return self.min_values.size

    @classmethod
    def from_sequences(cls, seqs: list[BlendshapeSeq]) -> "NormalizationStats":
        if not seqs:
            raise ValidationError("norm_stats: no sequences given")
        stacked = np.concatenate([s.values for s in seqs], axis=0).astype(np.float64)
        return cls(stacked.min(axis=0), stacked.max(axis=0))

    def to_dict(self) -> dict:
        return {"min": self.min_values.tolist(), "max": self.max_values.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "NormalizationStats":
        return cls(np.asarray(data["min"]), np.asarray(data["max"]))


def normalize_motion(seq: BlendshapeSeq, stats: NormalizationStats) -> BlendshapeSeq:
    """Map each channel into [0, 1] via (x - min) / (max - min).

    Channels with max == min map to the constant 0.5 so downstream gradients
    stay defined; denormalize_motion maps them back to the constant.
    """
    if stats.channels != seq.channels:
        raise ValidationError("norm_stats: channel count does not match the sequence")
    rng = stats.max_values - stats.min_values
    degenerate = rng == 0
    safe_rng = np.where(degenerate, 1.0, rng)
    out = (seq.values.astype(np.float64) - stats.min_values) / safe_rng
    out = np.where(degenerate, 0.5, out)
    return BlendshapeSeq(out.astype(np.float32), fps=seq.fps, layout=seq.layout)


def denormalize_motion(seq: BlendshapeSeq, stats: NormalizationStats) -> BlendshapeSeq:
    """Exact inverse of normalize_motion up to float rounding."""
    if stats.channels != seq.channels:
        raise ValidationError("norm_stats: channel count does not match the sequence")
    rng = stats.max_values - stats.min_values
    out = seq.values.astype(np.float64) * rng + stats.min_values
    return BlendshapeSeq(out.astype(np.float32), fps=seq.fps, layout=seq.layout)


def count_rounds(turns: list[TurnSegment]) -> int:
    """1 + number of floor exchanges (adjacent turns with differing speaker)."""
    if not turns:
        return 0
    exchanges = sum(1 for prev, cur in zip(turns, turns[1:]) if prev.speaker != cur.speaker)
    return 1 + exchanges


def frame_count(n_samples: int, sample_rate: int, fps: float) -> int:
    """Motion frames covering a waveform; the final partial frame counts."""
    return int(math.ceil(n_samples * fps / sample_rate))


# --- clip serialization -----------------------------------------------------
#
# Layout inside a clip directory:
#   <id>.a.wav / <id>.b.wav    PCM16 mono audio
#   <id>.a.f32 / <id>.b.f32    row-major little-endian float32 motion [N x b]
#   <id>.meta.json             frames/channels/fps/sample_rate/partitions/turns


def _pcm16_encode(x: np.ndarray) -> np.ndarray:
    return np.round(np.clip(x, -1.0, 1.0) * 32767.0).astype("<i2")


def _pcm16_decode(pcm: np.ndarray) -> np.ndarray:
    return pcm.astype(np.float32) / 32767.0


def quantize_to_pcm16(x: np.ndarray) -> np.ndarray:
    """Snap a float waveform onto the PCM16 grid (what a WAV round trip keeps)."""
    return _pcm16_decode(_pcm16_encode(x))


def _write_wav(path: Path, track: AudioTrack) -> None:
    with wave.open(str(path), "wb") as wav:
        wav.setnchannels(1)
        wav.setsampwidth(2)
        wav.setframerate(track.sample_rate)
        wav.writeframes(_pcm16_encode(track.samples).tobytes())


def _read_wav(path: Path) -> tuple[np.ndarray, int]:
    if not path.exists():
        raise FileNotFoundError(f"missing file: {path}")
    with wave.open(str(path), "rb") as wav:
        if wav.getnchannels() != 1 or wav.getsampwidth() != 2:
            raise ValidationError(f"{path.name}: expected PCM16 mono")
        rate = wav.getframerate()
        raw = wav.readframes(wav.getnframes())
    return _pcm16_decode(np.frombuffer(raw, dtype="<i2")), rate


def _dump_json(data: dict, path: Path) -> None:
    path.write_text(json.dumps(data, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def write_motion_file(stem: Path, seq: BlendshapeSeq) -> list[Path]:
    """Write a motion payload as <stem>.f32 plus a <stem>.json sidecar."""
    payload = Path(str(stem) + ".f32")
    sidecar = Path(str(stem) + ".json")
    payload.write_bytes(seq.values.astype("<f4").tobytes())
    _dump_json({"n_frames": seq.n_frames, "channels": seq.channels, "fps": seq.fps,
                "partitions": seq.layout.to_dict()}, sidecar)
    return [payload, sidecar]


def read_motion_file(stem: Path) -> BlendshapeSeq:
    payload = Path(str(stem) + ".f32")
    sidecar = Path(str(stem) + ".json")
    if not sidecar.exists():
        raise FileNotFoundError(f"missing file: {sidecar}")
    meta = json.loads(sidecar.read_text(encoding="utf-8"))
    values = _read_motion_payload(payload, meta["n_frames"], meta["channels"])
    return BlendshapeSeq(values, fps=float(meta["fps"]),
                         layout=PartitionLayout.from_dict(meta["partitions"]))


def _read_motion_payload(path: Path, n_frames: int, channels: int) -> np.ndarray:
    if not path.exists():
        raise FileNotFoundError(f"missing file: {path}")
    raw = np.frombuffer(path.read_bytes(), dtype="<f4")
    if raw.size != n_frames * channels:
        raise ValidationError(f"{path.name}: motion payload shape mismatch "
                              f"(got {raw.size} values, expected {n_frames * channels})")
    values = raw.reshape(n_frames, channels)
    if np.isnan(values).any():
        raise ValidationError(f"{path.name}: NaN in motion payload")
    return values


def write_clip(clip: ClipRecord, directory: str | Path) -> list[Path]:
    """Write a validated clip in the standard directory layout; returns the paths."""
    clip.validate()
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for side, track, motion in (("a", clip.audio_a, clip.motion_a),
                                ("b", clip.audio_b, clip.motion_b)):
        wav_path = directory / f"{clip.clip_id}.{side}.wav"
        _write_wav(wav_path, track)
        f32_path = directory / f"{clip.clip_id}.{side}.f32"
        f32_path.write_bytes(motion.values.astype("<f4").tobytes())
        paths += [wav_path, f32_path]
    meta = {
        "id": clip.clip_id,
        "n_frames": clip.motion_a.n_frames,
        "channels": clip.motion_a.channels,
        "fps": clip.motion_a.fps,
        "sample_rate": clip.audio_a.sample_rate,
        "partitions": clip.motion_a.layout.to_dict(),
        "turns": [t.to_dict() for t in clip.turns],
    }
    meta_path = directory / f"{clip.clip_id}.meta.json"
    _dump_json(meta, meta_path)
    return paths + [meta_path]


def read_clip(directory: str | Path, clip_id: str) -> ClipRecord:
    """Reconstruct a clip written by write_clip; motion round-trips bit-exactly."""
    directory = Path(directory)
    meta_path = directory / f"{clip_id}.meta.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"missing file: {meta_path}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    layout = PartitionLayout.from_dict(meta["partitions"])
    tracks, motions = {}, {}
    for side in ("a", "b"):
        samples, rate = _read_wav(directory / f"{clip_id}.{side}.wav")
        if rate != meta["sample_rate"]:
            raise ValidationError(f"{clip_id}.{side}.wav: sample_rate {rate} does not "
                                  f"match sidecar {meta['sample_rate']}")
        tracks[side] = AudioTrack(samples, sample_rate=rate)
        values = _read_motion_payload(directory / f"{clip_id}.{side}.f32",
                                      meta["n_frames"], meta["channels"])
        motions[side] = BlendshapeSeq(values, fps=float(meta["fps"]), layout=layout)
    clip = ClipRecord(
        clip_id=meta["id"],
        audio_a=tracks["a"], audio_b=tracks["b"],
        motion_a=motions["a"], motion_b=motions["b"],
        turns=[TurnSegment.from_dict(t) for t in meta["turns"]],
    )
    clip.validate()
    return clip


# --- dataset manifest --------------------------------------------------------


@dataclass
class ClipEntry:
    clip_id: str
    files: dict[str, str]  # role -> path relative to the manifest directory
    duration_s: float
    round_count: int

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ClipEntry":
        return cls(data["clip_id"], dict(data["files"]), float(data["duration_s"]),
                   int(data["round_count"]))


@dataclass
class DatasetManifest:
    """Index of a generated dataset: clip files, split lists, and norm stats."""

    clips: list[ClipEntry]
    split: dict[str, list[str]]
    fps: float
    sample_rate: int
    norm_stats: NormalizationStats
    root: Path | None = None  # directory the relative file paths resolve against

    def validate(self) -> None:
        known = {c.clip_id for c in self.clips}
        seen: set[str] = set()
        for name, ids in self.split.items():
            for cid in ids:
                if cid not in known:
                    raise ValidationError(f"split {name}: unknown clip id {cid}")
                if cid in seen:
                    raise ValidationError(f"split lists are not disjoint: {cid}")
                seen.add(cid)

    def clip_ids(self, split: str) -> list[str]:
        if split not in self.split:
            raise ValidationError(f"split: unknown split {split!r}")
        return list(self.split[split])

    def read_clip(self, clip_id: str) -> ClipRecord:
        if self.root is None:
            raise ValidationError("manifest: no root directory set (load it from disk)")
        return read_clip(self.root, clip_id)

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        data = {
            "clips": [c.to_dict() for c in self.clips],
            "split": {k: list(v) for k, v in self.split.items()},
            "fps": self.fps,
            "sample_rate": self.sample_rate,
            "norm_stats": self.norm_stats.to_dict(),
        }
        _dump_json(data, path)
        return path

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"missing file: {path}")
        data = json.loads(path.read_text(encoding="utf-8"))
        manifest = cls(
            clips=[ClipEntry.from_dict(c) for c in data["clips"]],
            split={k: list(v) for k, v in data["split"].items()},
            fps=float(data["fps"]),
            sample_rate=int(data["sample_rate"]),
            norm_stats=NormalizationStats.from_dict(data["norm_stats"]),
            root=path.parent,
        )
        manifest.validate()
        for entry in manifest.clips:
            for rel in entry.files.values():
                if not (manifest.root / rel).exists():
                    raise ValidationError(f"missing file: {rel} (clip {entry.clip_id})")
        return manifest
