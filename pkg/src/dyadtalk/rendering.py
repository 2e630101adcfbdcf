"""Plot emission for clips and predictions, with CSV twins so tests never
compare raster images."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .datamodel import PARTITION_NAMES, BlendshapeSeq, ClipRecord  # noqa: E402
from .synthgen import audio_envelope  # noqa: E402

MAX_EXP_CHANNELS = 6  # plotted expression channels; jaw/pose plot fully


def _plot_channels(layout_name: str, channels: list[int], motion: BlendshapeSeq,
                   gt: BlendshapeSeq | None, turns, envelopes, out_path: Path) -> None:
    frames = np.arange(motion.n_frames)
    n_rows = 2 if envelopes else 1
    fig, axes = plt.subplots(n_rows, 1, figsize=(10, 4 if n_rows == 1 else 5.5),
                             sharex=True,
                             gridspec_kw=None if n_rows == 1 else {"height_ratios": [3, 1]})
    ax = axes if n_rows == 1 else axes[0]
    for c in channels:
        ax.plot(frames, motion.values[:, c], lw=1.0, label=f"ch{c}")
        if gt is not None:
            ax.plot(frames, gt.values[:, c], lw=0.8, ls="--", alpha=0.7,
                    label=f"ch{c} gt")
    for turn in turns:
        f0, f1 = turn.start_s * motion.fps, turn.end_s * motion.fps
        color = "tab:blue" if turn.speaker == "A" else "tab:orange"
        ax.axvspan(f0, f1, alpha=0.08, color=color)
    ax.set_title(layout_name)
    ax.set_ylabel("coefficient")
    if len(channels) <= 8:
        ax.legend(fontsize=7, ncol=4)
    if envelopes:
        env_ax = axes[1]
        for name, env in envelopes.items():
            env_ax.plot(np.arange(env.size), env, lw=0.8, label=name)
        env_ax.set_ylabel("envelope")
        env_ax.legend(fontsize=7)
    (axes[-1] if n_rows > 1 else ax).set_xlabel("frame")
    fig.tight_layout()
    fig.savefig(out_path, dpi=110)
    plt.close(fig)


def render_plots(motion: BlendshapeSeq, out_dir: str | Path, name: str, *,
                 gt: BlendshapeSeq | None = None,
                 clip: ClipRecord | None = None) -> list[Path]:
    """Per-partition time-series images plus deterministic CSV twins.

    Emits <name>.<partition>.png for each partition, <name>.series.csv with one
    row per frame covering every plotted series, and <name>.turns.csv listing
    the shaded turn intervals (empty when no clip annotations are given).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    turns = clip.turns if clip is not None else []
    envelopes = {}
    if clip is not None:
        envelopes = {
            "env_a": audio_envelope(clip.audio_a, motion.fps),
            "env_b": audio_envelope(clip.audio_b, motion.fps),
        }

    plotted: dict[str, np.ndarray] = {}
    paths = []
    for part in PARTITION_NAMES:
        cols = motion.layout.columns(part)
        channels = list(range(*cols.indices(motion.channels)))
        if part == "exp":
            channels = channels[:MAX_EXP_CHANNELS]
        for c in channels:
            plotted[f"{part}_ch{c}"] = motion.values[:, c]
            if gt is not None:
                plotted[f"{part}_ch{c}_gt"] = gt.values[:, c]
        img = out_dir / f"{name}.{part}.png"
        _plot_channels(part, channels, motion, gt, turns, envelopes, img)
        paths.append(img)

    for env_name, env in envelopes.items():
        series = np.zeros(motion.n_frames)
        series[:min(env.size, motion.n_frames)] = env[:motion.n_frames]
        plotted[env_name] = series

    series_path = out_dir / f"{name}.series.csv"
    with open(series_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        keys = sorted(plotted)
        writer.writerow(["frame"] + keys)
        for i in range(motion.n_frames):
            writer.writerow([i] + [f"{plotted[k][i]:.7g}" for k in keys])
    paths.append(series_path)

    turns_path = out_dir / f"{name}.turns.csv"
    with open(turns_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["speaker", "start_s", "end_s"])
        for turn in turns:
            writer.writerow([turn.speaker, f"{turn.start_s:.6g}", f"{turn.end_s:.6g}"])
    paths.append(turns_path)
    return paths
