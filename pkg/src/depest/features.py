"""Visual and text preprocessing plus the overlapped clip cutter.

Facial keypoints (68 landmark rows + 4 gaze rows, each a 3-vector) are
min-max normalized per coordinate axis over the whole session; gaze rows
stay untouched since they arrive as unit vectors. Sentence embeddings
are fixed 512-wide rows with start/stop stamps. The clipper slices a
session into fixed-length overlapped windows and bundles per-clip
audio/visual/text tensors with the session labels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dsp import MelConfig, StftConfig, Waveform, log_mel_spectrogram, standardize
from .errors import ConfigError, DataError, EmptyInputError, EmptyOutputError, FormatError

N_LANDMARKS = 68
N_GAZE = 4
FRAME_ROWS = N_LANDMARKS + N_GAZE  # 72
EMBED_DIM = 512


@dataclass
class KeypointFrame:
    points: np.ndarray  # [72, 3]
    timestamp_s: float

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.shape != (FRAME_ROWS, 3):
            raise FormatError(f"keypoint frame must be {FRAME_ROWS}x3, got {self.points.shape}")


@dataclass
class SentenceEmbedding:
    vector: np.ndarray  # [512]
    start_s: float
    stop_s: float

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64)
        if self.vector.shape != (EMBED_DIM,):
            raise FormatError(f"sentence embedding must have {EMBED_DIM} values, got {self.vector.shape}")
        if not self.start_s < self.stop_s:
            raise FormatError(f"sentence needs start < stop, got ({self.start_s}, {self.stop_s})")

    @property
    def midpoint_s(self) -> float:
        return 0.5 * (self.start_s + self.stop_s)


@dataclass
class NormalizedKeypoints:
    frames: list
    axis_min: np.ndarray  # [3], landmark extrema used by the affine map
    axis_max: np.ndarray
    degenerate_axes: np.ndarray  # [3] bool, axes that were constant


@dataclass
class ClipSample:
    """One fixed-length window of a session, all modalities aligned."""

    audio: np.ndarray  # [n_mels, frames], standardized log-mel
    visual: np.ndarray  # [n_frames, 72, 3]
    text: np.ndarray  # [max_sentences, 512], zero-padded
    phq_subscores: tuple
    participant_id: str
    gender: str
    clip_index: int
    start_s: float = 0.0

    def __post_init__(self):
        self.phq_subscores = tuple(int(s) for s in self.phq_subscores)
        if len(self.phq_subscores) != 8:
            raise DataError(f"expected 8 item subscores, got {len(self.phq_subscores)}")
        if any(s < 0 or s > 3 for s in self.phq_subscores):
            raise DataError(f"subscores must lie in [0,3], got {self.phq_subscores}")


@dataclass
class SessionFeatures:
    """Full-session aligned modalities plus labels, pre-clipping."""

    audio: Waveform
    frames: list = field(default_factory=list)
    sentences: list = field(default_factory=list)
    phq_subscores: tuple = (0,) * 8
    participant_id: str = ""
    gender: str = "female"

    @property
    def duration_s(self) -> float:
        return self.audio.duration_s


def normalize_keypoints(frames) -> NormalizedKeypoints:
    """Min-max map of landmark rows into [0,1] per coordinate axis.

    Extrema are taken over every landmark row of every frame; gaze rows
    pass through unchanged (they must be unit vectors). A constant axis
    becomes 0.5 everywhere and is flagged. Idempotent: re-running on
    normalized output is the identity on non-degenerate axes.
    """
    frames = list(frames)
    if not frames:
        raise EmptyInputError("no keypoint frames to normalize")
    stack = np.stack([f.points for f in frames])  # [T, 72, 3]
    gaze = stack[:, N_LANDMARKS:, :]
    norms = np.linalg.norm(gaze, axis=2)
    if np.any(np.abs(norms - 1.0) > 1e-3):
        raise DataError(f"gaze rows must be unit vectors, worst norm {norms.flat[np.abs(norms - 1.0).argmax()]:.5f}")

    marks = stack[:, :N_LANDMARKS, :]
    lo = marks.min(axis=(0, 1))
    hi = marks.max(axis=(0, 1))
    degenerate = hi == lo
    span = np.where(degenerate, 1.0, hi - lo)
    mapped = (marks - lo) / span
    mapped[:, :, degenerate] = 0.5

    out = []
    for t, f in enumerate(frames):
        pts = np.concatenate([mapped[t], gaze[t]], axis=0)
        out.append(KeypointFrame(points=pts, timestamp_s=f.timestamp_s))
    return NormalizedKeypoints(frames=out, axis_min=lo, axis_max=hi, degenerate_axes=degenerate)


def _check_intervals(intervals):
    intervals = [(float(a), float(b)) for a, b in intervals]
    for a, b in intervals:
        if not a < b:
            raise ConfigError(f"interval must have start < stop, got ({a}, {b})")
    for (a0, b0), (a1, b1) in zip(intervals, intervals[1:]):
        if a1 < b0:
            raise ConfigError(f"intervals must be sorted and non-overlapping, got ({a0},{b0}) then ({a1},{b1})")
    return intervals


def crop_by_timestamps(frames, intervals) -> list:
    """Keep items whose timestamp_s lies in some [start, stop); order kept."""
    intervals = _check_intervals(intervals)
    out = [f for f in frames if any(a <= f.timestamp_s < b for a, b in intervals)]
    if not out:
        raise EmptyOutputError("no frames fall inside the given intervals")
    return out


def crop_waveform(w: Waveform, intervals) -> Waveform:
    """Concatenate the sample spans of the intervals, re-stamping time."""
    intervals = _check_intervals(intervals)
    sr = w.sample_rate_hz
    parts = []
    for a, b in intervals:
        lo = max(0, int(round(a * sr)))
        hi = min(w.samples.size, int(round(b * sr)))
        if hi > lo:
            parts.append(w.samples[lo:hi])
    if not parts:
        raise EmptyOutputError("no audio falls inside the given intervals")
    return Waveform(samples=np.concatenate(parts), sample_rate_hz=sr)


def clip_count(duration_s: float, window_s: float, overlap_s: float) -> int:
    """max(0, floor((D - window)/stride) + 1) with stride = window - overlap."""
    stride = window_s - overlap_s
    if window_s <= 0 or stride <= 0:
        raise ConfigError(f"need 0 <= overlap < window, got window={window_s}, overlap={overlap_s}")
    if duration_s < window_s - 1e-9:
        return 0
    return int((duration_s - window_s + 1e-9) // stride) + 1


def sliding_window_clips(
    session: SessionFeatures,
    window_s: float = 60.0,
    overlap_s: float = 10.0,
    stft_cfg: StftConfig = StftConfig(),
    mel_cfg: MelConfig = MelConfig(),
    max_sentences: int = 32,
) -> list:
    """Cut a session into overlapped fixed-length multi-modal clips.

    Clip k covers [k*stride, k*stride + window) with stride =
    window - overlap; a trailing partial window is dropped. Audio is
    standardized log-mel per clip, keypoints are session-normalized
    before slicing, sentences join the clip whose interval holds their
    midpoint. Every clip inherits the session labels.
    """
    n = clip_count(session.duration_s, window_s, overlap_s)
    if n == 0:
        raise EmptyOutputError(
            f"session of {session.duration_s:.1f}s shorter than one {window_s:.0f}s window"
        )
    stride = window_s - overlap_s
    sr = session.audio.sample_rate_hz
    normed = normalize_keypoints(session.frames).frames if session.frames else []

    clips = []
    for k in range(n):
        t0 = k * stride
        t1 = t0 + window_s
        seg = session.audio.samples[int(round(t0 * sr)) : int(round(t1 * sr))]
        grid = standardize(log_mel_spectrogram(Waveform(seg, sr), stft_cfg, mel_cfg))

        vis = [f.points for f in normed if t0 <= f.timestamp_s < t1]
        visual = np.stack(vis) if vis else np.zeros((0, FRAME_ROWS, 3))

        text = np.zeros((max_sentences, EMBED_DIM))
        row = 0
        for s in session.sentences:
            if t0 <= s.midpoint_s < t1 and row < max_sentences:
                text[row] = s.vector
                row += 1

        clips.append(
            ClipSample(
                audio=grid.values,
                visual=visual,
                text=text,
                phq_subscores=session.phq_subscores,
                participant_id=session.participant_id,
                gender=session.gender,
                clip_index=k,
                start_s=t0,
            )
        )
    return clips


# -- delimited text I/O ------------------------------------------------


def read_keypoints(path) -> list:
    """One frame per line: timestamp then 216 reals (72 rows x 3)."""
    frames = []
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            vals = line.split()
            if len(vals) != 1 + FRAME_ROWS * 3:
                raise FormatError(f"{path}:{ln}: expected {1 + FRAME_ROWS * 3} fields, got {len(vals)}")
            try:
                nums = np.array([float(v) for v in vals])
            except ValueError as exc:
                raise FormatError(f"{path}:{ln}: non-numeric field") from exc
            frames.append(KeypointFrame(points=nums[1:].reshape(FRAME_ROWS, 3), timestamp_s=nums[0]))
    if not frames:
        raise EmptyInputError(f"{path}: no keypoint frames")
    return frames


def write_keypoints(path, frames) -> None:
    with open(path, "w") as fh:
        for f in frames:
            flat = " ".join(f"{v:.8g}" for v in f.points.ravel())
            fh.write(f"{f.timestamp_s:.8g} {flat}\n")


def ingest_embeddings(path) -> list:
    """Per line: start_s, stop_s, then 512 reals; rows must be start-ordered."""
    rows = []
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            vals = line.split()
            if len(vals) != 2 + EMBED_DIM:
                raise FormatError(f"{path}:{ln}: expected {2 + EMBED_DIM} fields, got {len(vals)}")
            try:
                nums = np.array([float(v) for v in vals])
            except ValueError as exc:
                raise FormatError(f"{path}:{ln}: non-numeric field") from exc
            rows.append(SentenceEmbedding(vector=nums[2:], start_s=nums[0], stop_s=nums[1]))
    if not rows:
        raise EmptyInputError(f"{path}: no embeddings")
    starts = [r.start_s for r in rows]
    if any(b < a for a, b in zip(starts, starts[1:])):
        raise FormatError(f"{path}: sentence start times must be non-decreasing")
    return rows


def write_embeddings(path, sentences) -> None:
    with open(path, "w") as fh:
        for s in sentences:
            flat = " ".join(f"{v:.8g}" for v in s.vector)
            fh.write(f"{s.start_s:.8g} {s.stop_s:.8g} {flat}\n")
