"""Deterministic synthetic dyadic-conversation generator.

Every clip has known, tunable audio->motion couplings so learnability and
metric behaviour can be verified without any real recordings:

* a speaker's jaw channel follows their own per-frame audio envelope,
* the listener's first expression channel follows a smoothed copy of the
  speaker's envelope (a "smile"),
* the listener's pitch-pose channel nods (decaying sinusoid) at speaker
  envelope peaks,
* all remaining channels carry small-amplitude smooth noise scaled by
  ``noise_std`` (zero noise -> exact couplings and constant spare channels).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datamodel import (
    MIN_TURN_SECONDS,
    AudioTrack,
    BlendshapeSeq,
    ClipEntry,
    ClipRecord,
    DatasetManifest,
    NormalizationStats,
    PartitionLayout,
    TurnSegment,
    ValidationError,
    count_rounds,
    quantize_to_pcm16,
    write_clip,
)

# nod impulse response: short decaying sinusoid, non-overlapping with the
# minimum peak spacing used below
NOD_FRAMES = 12
NOD_DECAY_FRAMES = 4.0
NOD_HZ = 2.5
PEAK_MIN_DISTANCE = 12
SPARE_NOISE_SMOOTH = 9

ROUND_CHOICES = (1, 2, 3, 4, 5)
ROUND_PROBS = (0.20, 0.30, 0.30, 0.15, 0.05)  # mean 2.55 rounds per clip

BASE_GAIN_RANGES = {"jaw": (0.6, 0.9), "nod": (0.4, 0.7), "smile": (0.5, 0.8)}
OOD_GAIN_RANGES = {"jaw": (1.0, 1.3), "nod": (0.8, 1.1), "smile": (0.9, 1.2)}


@dataclass
class GenParams:
    """Knobs of one synthetic clip; everything is a pure function of these."""

    seed: int
    duration_s: float = 10.0
    target_rounds: int = 3
    jaw_gain: float = 0.8
    nod_gain: float = 0.5
    smile_gain: float = 0.6
    noise_std: float = 0.01
    fps: float = 25.0
    sample_rate: int = 16000
    clip_id: str | None = None

    def __post_init__(self) -> None:
        if self.target_rounds < 1:
            raise ValidationError("target_rounds: must be >= 1")
        if self.noise_std < 0:
            raise ValidationError("noise_std: must be >= 0")
        if self.duration_s < MIN_TURN_SECONDS * self.target_rounds - 1e-9:
            raise ValidationError("duration_s: too short to fit target_rounds turns of "
                                  f"{MIN_TURN_SECONDS} s each")


def audio_envelope(track: AudioTrack, fps: float) -> np.ndarray:
    """Per-frame RMS amplitude over non-overlapping windows of one frame period.

    The final partial window is included, so the length is
    ceil(n_samples * fps / sample_rate); all entries lie in [0, 1].
    """
    if fps <= 0:
        raise ValidationError("fps: must be positive")
    samples = track.samples.astype(np.float64)
    if samples.size == 0:
        raise ValidationError("samples: empty track")
    n = int(math.ceil(samples.size * fps / track.sample_rate))
    bounds = np.floor(np.arange(n + 1) * track.sample_rate / fps).astype(np.int64)
    bounds[-1] = min(bounds[-1], samples.size)
    sq = np.concatenate([[0.0], np.cumsum(samples * samples)])
    counts = np.maximum(bounds[1:] - bounds[:-1], 1)
    env = np.sqrt((sq[bounds[1:]] - sq[bounds[:-1]]) / counts)
    return np.minimum(env, 1.0)


def envelope_peaks(env: np.ndarray, min_distance: int = PEAK_MIN_DISTANCE,
                   rel_height: float = 0.5) -> np.ndarray:
    """Frames that are local envelope maxima above rel_height * max(env),
    greedily suppressing peaks closer than min_distance (highest first)."""
    env = np.asarray(env, dtype=np.float64)
    if env.size < 3 or env.max() <= 0:
        return np.empty(0, dtype=np.int64)
    threshold = rel_height * env.max()
    inner = np.arange(1, env.size - 1)
    is_peak = (env[inner] > env[inner - 1]) & (env[inner] >= env[inner + 1]) \
        & (env[inner] >= threshold)
    candidates = inner[is_peak]
    order = np.lexsort((candidates, -env[candidates]))  # height desc, index asc
    kept: list[int] = []
    for idx in candidates[order]:
        if all(abs(idx - k) >= min_distance for k in kept):
            kept.append(int(idx))
    return np.array(sorted(kept), dtype=np.int64)


def _band_noise(rng: np.random.Generator, n: int, sample_rate: int,
                low_hz: float = 100.0, high_hz: float = 4000.0) -> np.ndarray:
    """Unit-variance noise whose spectrum is restricted to [low_hz, high_hz]."""
    white = rng.standard_normal(n)
    spectrum = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
    spectrum[(freqs < low_hz) | (freqs > high_hz)] = 0.0
    x = np.fft.irfft(spectrum, n)
    return x / max(x.std(), 1e-12)


def _smooth(x: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average along axis 0 with edge padding."""
    if window <= 1:
        return x.astype(np.float64, copy=True)
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    left = window // 2
    padded = np.pad(x, ((left, window - 1 - left), (0, 0)), mode="edge")
    csum = np.concatenate([np.zeros((1, x.shape[1])), np.cumsum(padded, axis=0)])
    out = (csum[window:] - csum[:-window]) / window
    return out[:, 0] if squeeze else out


def _turn_layout(rng: np.random.Generator, n_frames: int, rounds: int,
                 fps: float) -> list[tuple[str, int, int]]:
    """Alternating A,B,... turns in whole frames, each >= the 2 s minimum."""
    min_frames = int(math.ceil(MIN_TURN_SECONDS * fps))
    extra = n_frames - rounds * min_frames
    if extra < 0:
        raise ValidationError("duration_s: too short to fit target_rounds turns")
    weights = rng.random(rounds)
    shares = np.floor(extra * weights / weights.sum()).astype(np.int64)
    for i in range(int(extra - shares.sum())):
        shares[i % rounds] += 1
    lengths = min_frames + shares
    turns, start = [], 0
    for i, length in enumerate(lengths):
        speaker = "AB"[i % 2]
        turns.append((speaker, start, start + int(length)))
        start += int(length)
    return turns


def _speech_track(rng: np.random.Generator, turns: list[tuple[str, int, int]],
                  speaker: str, n_samples: int, sample_rate: int, fps: float,
                  noise_std: float) -> np.ndarray:
    """Band-limited noise with a syllabic amplitude envelope over own turns."""
    track = np.zeros(n_samples)
    spf = sample_rate / fps
    for who, f0, f1 in turns:
        if who != speaker:
            continue
        s0, s1 = int(round(f0 * spf)), int(round(f1 * spf))
        t = np.arange(s1 - s0) / sample_rate
        syllable_hz = rng.uniform(2.8, 4.2)
        phase = rng.uniform(0.0, 2.0 * math.pi)
        syllabic = 0.55 + 0.45 * np.sin(2.0 * math.pi * syllable_hz * t + phase)
        track[s0:s1] = syllabic * _band_noise(rng, s1 - s0, sample_rate)
    peak = np.abs(track).max()
    if peak > 0:
        track *= 0.9 / peak
    if noise_std > 0:
        track += rng.normal(0.0, noise_std, n_samples)
    return quantize_to_pcm16(np.clip(track, -1.0, 1.0))


def _nod_wave() -> np.ndarray:
    t = np.arange(NOD_FRAMES, dtype=np.float64)
    return np.exp(-t / NOD_DECAY_FRAMES) * np.sin(2.0 * math.pi * NOD_HZ * t / 25.0)


def _motion_channels(rng: np.random.Generator, n_frames: int, layout: PartitionLayout,
                     own_env: np.ndarray, partner_env: np.ndarray,
                     p: GenParams) -> np.ndarray:
    b = layout.channels
    motion = _smooth(rng.standard_normal((n_frames, b)), SPARE_NOISE_SMOOTH)
    motion *= p.noise_std * math.sqrt(SPARE_NOISE_SMOOTH)
    jaw = layout.jaw[0]
    smile = layout.exp[0]
    nod = layout.pose[0]
    motion[:, jaw] += p.jaw_gain * own_env
    motion[:, smile] += p.smile_gain * _smooth(partner_env, 5)
    wave = _nod_wave()
    for peak in envelope_peaks(partner_env):
        end = min(n_frames, peak + NOD_FRAMES)
        motion[peak:end, nod] += p.nod_gain * wave[: end - peak]
    return motion.astype(np.float32)


def generate_clip(p: GenParams) -> ClipRecord:
    """Build one deterministic clip; identical GenParams give bit-identical output."""
    streams = np.random.SeedSequence(p.seed).spawn(5)
    rng_turns, rng_audio_a, rng_audio_b, rng_motion_a, rng_motion_b = \
        (np.random.default_rng(s) for s in streams)

    n_frames = int(round(p.duration_s * p.fps))
    n_samples = int(round(p.duration_s * p.sample_rate))
    turns = _turn_layout(rng_turns, n_frames, p.target_rounds, p.fps)

    samples_a = _speech_track(rng_audio_a, turns, "A", n_samples, p.sample_rate,
                              p.fps, p.noise_std)
    samples_b = _speech_track(rng_audio_b, turns, "B", n_samples, p.sample_rate,
                              p.fps, p.noise_std)
    audio_a = AudioTrack(samples_a, sample_rate=p.sample_rate)
    audio_b = AudioTrack(samples_b, sample_rate=p.sample_rate)

    env_a = audio_envelope(audio_a, p.fps)
    env_b = audio_envelope(audio_b, p.fps)
    layout = PartitionLayout()
    motion_a = BlendshapeSeq(_motion_channels(rng_motion_a, n_frames, layout,
                                              env_a, env_b, p), fps=p.fps, layout=layout)
    motion_b = BlendshapeSeq(_motion_channels(rng_motion_b, n_frames, layout,
                                              env_b, env_a, p), fps=p.fps, layout=layout)

    turn_segments = [TurnSegment(who, f0 / p.fps, f1 / p.fps) for who, f0, f1 in turns]
    clip = ClipRecord(
        clip_id=p.clip_id or f"clip_{p.seed:08d}",
        audio_a=audio_a, audio_b=audio_b,
        motion_a=motion_a, motion_b=motion_b,
        turns=turn_segments,
    )
    clip.validate()
    if count_rounds(clip.turns) != p.target_rounds:
        raise AssertionError("generator produced a wrong round count")
    return clip


def speaking_frames(clip: ClipRecord, speaker: str) -> np.ndarray:
    """Boolean per-frame mask of the frames where ``speaker`` holds the floor."""
    fps = clip.motion_a.fps
    mask = np.zeros(clip.n_frames, dtype=bool)
    for turn in clip.turns:
        if turn.speaker == speaker:
            f0 = int(round(turn.start_s * fps))
            f1 = int(round(turn.end_s * fps))
            mask[f0:f1] = True
    return mask


def _split_counts(n_clips: int, fractions: tuple[float, float, float]) -> list[int]:
    """Floor each share, then hand out the remainder by largest fractional part."""
    if any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValidationError("split_fractions: must be positive and sum to 1")
    raw = [f * n_clips for f in fractions]
    counts = [int(math.floor(r)) for r in raw]
    remainders = sorted(range(3), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in range(n_clips - sum(counts)):
        counts[remainders[i % 3]] += 1
    return counts


def generate_dataset(seed: int, n_clips: int,
                     split_fractions: tuple[float, float, float],
                     out_dir: str | Path, *,
                     duration_s: float = 10.0,
                     noise_std: float = 0.01,
                     round_probs: tuple[float, ...] = ROUND_PROBS) -> DatasetManifest:
    """Generate and write a full dataset plus its manifest.

    Clips are split train/test/ood in index order. OOD clips draw their style
    gains from a disjoint range to mimic unseen speakers. Per-clip seeds derive
    from (seed, clip index), so any clip can be regenerated independently.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n_train, n_test, n_ood = _split_counts(n_clips, split_fractions)

    entries: list[ClipEntry] = []
    split: dict[str, list[str]] = {"train": [], "test": [], "ood": []}
    train_motion: list[BlendshapeSeq] = []
    fps, sample_rate = 25.0, 16000

    for idx in range(n_clips):
        part = "train" if idx < n_train else ("test" if idx < n_train + n_test else "ood")
        rng = np.random.default_rng(np.random.SeedSequence([seed, idx]))
        gains = OOD_GAIN_RANGES if part == "ood" else BASE_GAIN_RANGES
        max_rounds = int(duration_s // MIN_TURN_SECONDS)
        choices = np.array(ROUND_CHOICES[:max_rounds])
        probs = np.array(round_probs[:max_rounds])
        rounds = int(rng.choice(choices, p=probs / probs.sum()))
        params = GenParams(
            seed=int(rng.integers(0, 2**63 - 1)),
            duration_s=duration_s,
            target_rounds=rounds,
            jaw_gain=float(rng.uniform(*gains["jaw"])),
            nod_gain=float(rng.uniform(*gains["nod"])),
            smile_gain=float(rng.uniform(*gains["smile"])),
            noise_std=noise_std,
            fps=fps, sample_rate=sample_rate,
            clip_id=f"clip_{idx:04d}",
        )
        clip = generate_clip(params)
        write_clip(clip, out_dir)
        entries.append(ClipEntry(
            clip_id=clip.clip_id,
            files={
                "audio_a": f"{clip.clip_id}.a.wav", "audio_b": f"{clip.clip_id}.b.wav",
                "motion_a": f"{clip.clip_id}.a.f32", "motion_b": f"{clip.clip_id}.b.f32",
                "meta": f"{clip.clip_id}.meta.json",
            },
            duration_s=clip.duration_s,
            round_count=count_rounds(clip.turns),
        ))
        split[part].append(clip.clip_id)
        if part == "train":
            train_motion += [clip.motion_a, clip.motion_b]

    manifest = DatasetManifest(
        clips=entries, split=split, fps=fps, sample_rate=sample_rate,
        norm_stats=NormalizationStats.from_sequences(train_motion),
        root=out_dir,
    )
    manifest.validate()
    manifest.save(out_dir / "manifest.json")
    return manifest
