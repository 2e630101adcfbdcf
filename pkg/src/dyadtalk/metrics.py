"""Motion evaluation suite: Fréchet distance on per-frame coefficient
distributions, its paired variant for speaker synchrony, plain MSE, a k-means
entropy diversity score, and the residual Pearson correlation gap. Everything
is computed per channel partition (exp / jaw / pose) in raw coefficient space."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datamodel import PARTITION_NAMES, PartitionLayout, ValidationError

EIG_TOLERANCE = -1e-6

# Display-only scale factors used when rendering the CSV table; stored report
# values are always raw.
DISPLAY_SCALES = {
    "fd": {"exp": 1.0, "jaw": 1e3, "pose": 1e2},
    "p_fd": {"exp": 1.0, "jaw": 1e3, "pose": 1e2},
    "mse": {"exp": 1e1, "jaw": 1e3, "pose": 1e2},
    "sid": {"exp": 1.0, "jaw": 1.0, "pose": 1.0},
    "rpcc": {"exp": 1e2, "jaw": 1e1, "pose": 1e1},
}
METRIC_NAMES = ("fd", "p_fd", "mse", "sid", "rpcc")


@dataclass
class GaussianStats:
    """Mean vector and population covariance of a feature set."""

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self) -> None:
        self.mu = np.ascontiguousarray(self.mu, dtype=np.float64)
        self.sigma = np.ascontiguousarray(self.sigma, dtype=np.float64)
        m = self.mu.size
        if self.sigma.shape != (m, m):
            raise ValidationError("sigma: must be [m x m] matching mu")
        if not np.allclose(self.sigma, self.sigma.T, atol=1e-8):
            raise ValidationError("sigma: not symmetric within 1e-8")

    @property
    def dim(self) -> int:
        return self.mu.size


def fit_gaussian(features: np.ndarray) -> GaussianStats:
    """Column means and population (divide-by-n) covariance."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 2:
        raise ValidationError("features: need at least 2 rows")
    mu = features.mean(axis=0)
    centered = features - mu
    sigma = centered.T @ centered / features.shape[0]
    sigma = 0.5 * (sigma + sigma.T)
    return GaussianStats(mu, sigma)


def _psd_sqrt(matrix: np.ndarray, context: str) -> np.ndarray:
    eigvals, eigvecs = np.linalg.eigh(0.5 * (matrix + matrix.T))
    if eigvals.min() < EIG_TOLERANCE:
        raise ValidationError(f"{context}: matrix is not PSD within tolerance "
                              f"(min eigenvalue {eigvals.min():.3e})")
    eigvals = np.clip(eigvals, 0.0, None)
    return (eigvecs * np.sqrt(eigvals)) @ eigvecs.T


def frechet_distance(s1: GaussianStats, s2: GaussianStats) -> float:
    """|mu1-mu2|^2 + tr(sigma1 + sigma2 - 2 (sigma1 sigma2)^{1/2}).

    The cross term is evaluated through the symmetric product
    sqrt(sigma1) sigma2 sqrt(sigma1), whose eigenvalues are clamped at zero
    (an error below -1e-6). The result is symmetric and clamped to >= 0.
    """
    if s1.dim != s2.dim:
        raise ValidationError(f"frechet: dim mismatch {s1.dim} vs {s2.dim}")
    root1 = _psd_sqrt(s1.sigma, "sigma1")
    product = root1 @ s2.sigma @ root1
    eigvals = np.linalg.eigvalsh(0.5 * (product + product.T))
    if eigvals.min() < EIG_TOLERANCE:
        raise ValidationError("frechet: cross-covariance product is not PSD within "
                              f"tolerance (min eigenvalue {eigvals.min():.3e})")
    trace_cross = np.sqrt(np.clip(eigvals, 0.0, None)).sum()
    diff = s1.mu - s2.mu
    value = float(diff @ diff + np.trace(s1.sigma) + np.trace(s2.sigma)
                  - 2.0 * trace_cross)
    return max(value, 0.0)


# --- metric primitives over motion sets ------------------------------------------
#
# A "motion set" is a list of per-clip [frames x channels] arrays in raw
# (denormalized) coefficient space; clip order and frame alignment carry the
# pairing between generated and ground-truth sets.


def _check_aligned(gen: list[np.ndarray], gt: list[np.ndarray]) -> None:
    if len(gen) != len(gt):
        raise ValidationError(f"motion sets: clip counts differ ({len(gen)} vs {len(gt)})")
    for i, (g, t) in enumerate(zip(gen, gt)):
        if g.shape != t.shape:
            raise ValidationError(f"motion sets: clip {i} shapes differ "
                                  f"{g.shape} vs {t.shape}")


def _pool(motions: list[np.ndarray], cols: slice) -> np.ndarray:
    return np.concatenate([np.asarray(m, dtype=np.float64)[:, cols] for m in motions],
                          axis=0)


def fd_metric(gen: list[np.ndarray], gt: list[np.ndarray], cols: slice) -> float:
    return frechet_distance(fit_gaussian(_pool(gen, cols)),
                            fit_gaussian(_pool(gt, cols)))


def paired_fd(gen_b: list[np.ndarray], gt_b: list[np.ndarray],
              motion_a: list[np.ndarray], cols: slice) -> float:
    """Fréchet distance between [B || A] frame features of the generated and
    ground-truth sets; sensitive to cross-speaker synchrony."""
    _check_aligned(gen_b, gt_b)
    _check_aligned(gt_b, motion_a)
    gen_pairs = np.concatenate([_pool(gen_b, cols), _pool(motion_a, cols)], axis=1)
    gt_pairs = np.concatenate([_pool(gt_b, cols), _pool(motion_a, cols)], axis=1)
    return frechet_distance(fit_gaussian(gen_pairs), fit_gaussian(gt_pairs))


def mse_metric(gen: list[np.ndarray], gt: list[np.ndarray], cols: slice) -> float:
    _check_aligned(gen, gt)
    return float(np.mean((_pool(gen, cols) - _pool(gt, cols)) ** 2))


def _farthest_point_init(points: np.ndarray, k: int,
                         rng: np.random.Generator) -> np.ndarray:
    centers = [int(rng.integers(points.shape[0]))]
    dist = np.linalg.norm(points - points[centers[0]], axis=1)
    for _ in range(k - 1):
        nxt = int(np.argmax(dist))  # ties resolve to the lowest index
        centers.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(points - points[nxt], axis=1))
    return points[centers].copy()


def _kmeans(points: np.ndarray, k: int, seed: int, iters: int = 100) -> np.ndarray:
    """Deterministic Lloyd iterations with farthest-point init; returns labels."""
    rng = np.random.default_rng(seed)
    centers = _farthest_point_init(points, k, rng)
    labels = None
    for _step in range(iters):
        dists = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = np.argmin(dists, axis=1)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(k):
            member = points[labels == c]
            if member.shape[0]:
                centers[c] = member.mean(axis=0)
    return labels


class SidScore(float):
    """Entropy value that also records the k actually used."""

    k_used: int

    def __new__(cls, value: float, k_used: int):
        obj = super().__new__(cls, value)
        obj.k_used = k_used
        return obj


def sid_diversity(motions: list[np.ndarray], cols: slice, k: int = 40,
                  window_frames: int = 25, seed: int = 0) -> SidScore:
    """Shannon entropy (natural log) of the k-means assignment histogram over
    non-overlapping flattened windows; bounded by ln(k). If fewer windows than
    k exist, k is reduced to the window count (recorded on the result)."""
    windows = []
    for motion in motions:
        data = np.asarray(motion, dtype=np.float64)[:, cols]
        for start in range(0, data.shape[0] - window_frames + 1, window_frames):
            windows.append(data[start:start + window_frames].reshape(-1))
    if not windows:
        raise ValidationError("sid: no complete windows in the motion set")
    points = np.stack(windows)
    k_used = min(k, points.shape[0])
    labels = _kmeans(points, k_used, seed)
    counts = np.bincount(labels, minlength=k_used).astype(np.float64)
    probs = counts[counts > 0] / counts.sum()
    entropy = float(-(probs * np.log(probs)).sum())
    return SidScore(entropy, k_used)


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    """Correlation with the convention r = 0 when either series is constant."""
    x = x - x.mean()
    y = y - y.mean()
    sx = math.sqrt(float(x @ x))
    sy = math.sqrt(float(y @ y))
    if sx < 1e-12 or sy < 1e-12:
        return 0.0
    return float(x @ y) / (sx * sy)


def rpcc(gen_b: list[np.ndarray], gt_b: list[np.ndarray],
         motion_a: list[np.ndarray], cols: slice) -> float:
    """Mean, over clips and partition channels, of |r_gen - r_gt| where r is
    the temporal Pearson correlation between the A and B channel series."""
    _check_aligned(gen_b, gt_b)
    _check_aligned(gt_b, motion_a)
    gaps = []
    for gen, gt, ref in zip(gen_b, gt_b, motion_a):
        if gen.shape[0] < 2:
            raise ValidationError("rpcc: clips must have at least 2 frames")
        gen64 = np.asarray(gen, dtype=np.float64)
        gt64 = np.asarray(gt, dtype=np.float64)
        ref64 = np.asarray(ref, dtype=np.float64)
        for c in range(*cols.indices(gen.shape[1])):
            r_gen = _pearson(ref64[:, c], gen64[:, c])
            r_gt = _pearson(ref64[:, c], gt64[:, c])
            gaps.append(abs(r_gen - r_gt))
    return float(np.mean(gaps))


# --- full report -------------------------------------------------------------------


@dataclass
class PartitionMetrics:
    fd: float
    p_fd: float
    mse: float
    sid: float
    sid_k: int
    rpcc: float


@dataclass
class MetricReport:
    partitions: dict[str, PartitionMetrics]
    clip_count: int
    frame_count: int
    gt_sid: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "partitions": {name: dataclasses.asdict(pm)
                           for name, pm in self.partitions.items()},
            "clip_count": self.clip_count,
            "frame_count": self.frame_count,
            "gt_sid": self.gt_sid,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MetricReport":
        return cls(
            partitions={name: PartitionMetrics(**pm)
                        for name, pm in data["partitions"].items()},
            clip_count=int(data["clip_count"]),
            frame_count=int(data["frame_count"]),
            gt_sid={k: float(v) for k, v in data.get("gt_sid", {}).items()},
        )

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n",
                        encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "MetricReport":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_csv(self, path: str | Path) -> Path:
        """Display-scaled table (see DISPLAY_SCALES); stored values stay raw."""
        lines = ["metric," + ",".join(PARTITION_NAMES)]
        for metric in METRIC_NAMES:
            cells = []
            for part in PARTITION_NAMES:
                raw = getattr(self.partitions[part], metric)
                cells.append(f"{raw * DISPLAY_SCALES[metric][part]:.6g}")
            lines.append(f"{metric}," + ",".join(cells))
        path = Path(path)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path


def evaluate_suite(gen_b: dict[str, np.ndarray], gt_b: dict[str, np.ndarray],
                   motion_a: dict[str, np.ndarray], layout: PartitionLayout,
                   k: int = 40, window_frames: int = 25, seed: int = 0) -> MetricReport:
    """All five metrics per partition, in raw coefficient space.

    Inputs map clip id -> [frames x channels]; gen_b must cover every gt clip.
    """
    missing = sorted(set(gt_b) - set(gen_b))
    if missing:
        raise ValidationError("predictions missing for clips: " + ", ".join(missing))
    order = sorted(gt_b)
    gen_list = [np.asarray(gen_b[c]) for c in order]
    gt_list = [np.asarray(gt_b[c]) for c in order]
    a_list = [np.asarray(motion_a[c]) for c in order]
    _check_aligned(gen_list, gt_list)
    _check_aligned(gt_list, a_list)

    partitions = {}
    gt_sid = {}
    for part in PARTITION_NAMES:
        cols = layout.columns(part)
        sid = sid_diversity(gen_list, cols, k=k, window_frames=window_frames, seed=seed)
        gt_sid[part] = float(sid_diversity(gt_list, cols, k=k,
                                           window_frames=window_frames, seed=seed))
        partitions[part] = PartitionMetrics(
            fd=fd_metric(gen_list, gt_list, cols),
            p_fd=paired_fd(gen_list, gt_list, a_list, cols),
            mse=mse_metric(gen_list, gt_list, cols),
            sid=float(sid),
            sid_k=sid.k_used,
            rpcc=rpcc(gen_list, gt_list, a_list, cols),
        )
    return MetricReport(partitions=partitions, clip_count=len(order),
                        frame_count=int(sum(m.shape[0] for m in gt_list)),
                        gt_sid=gt_sid)
