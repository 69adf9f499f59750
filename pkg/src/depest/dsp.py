"""Audio front-end: waveform in, standardized log-mel grid out.

Chain: raw mono waveform -> optional energy reclipping -> Hann-window
STFT -> power spectrogram -> 80-bin mel projection -> log with floor ->
global standardization. All stages are pure functions over small value
types; the STFT itself is rfft-backed and cross-checked against a naive
direct-summation transform in the tests.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DomainError, EmptyInputError, EmptyOutputError, FormatError

LOG_FLOOR = 1e-10


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate_hz: int = 16000

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise FormatError(f"waveform must be 1-D, got shape {self.samples.shape}")
        if self.samples.size == 0:
            raise EmptyInputError("waveform has no samples")
        if self.sample_rate_hz <= 0:
            raise ConfigError(f"sample rate must be positive, got {self.sample_rate_hz}")

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz


@dataclass(frozen=True)
class StftConfig:
    window_len: int = 1024
    hop: int = 533  # floor(16000 / 30): one hop per 30 Hz video frame
    fft_len: int = 1024

    def __post_init__(self):
        if self.window_len < 2:
            raise ConfigError(f"window_len must be >= 2, got {self.window_len}")
        if self.hop < 1:
            raise ConfigError(f"hop must be >= 1, got {self.hop}")
        if self.fft_len < self.window_len:
            raise ConfigError(f"fft_len {self.fft_len} shorter than window_len {self.window_len}")

    @property
    def n_bins(self) -> int:
        return self.fft_len // 2 + 1


@dataclass(frozen=True)
class MelConfig:
    n_mels: int = 80
    f_min_hz: float = 0.0
    f_max_hz: float = 8000.0

    def __post_init__(self):
        if self.n_mels < 1:
            raise ConfigError(f"n_mels must be >= 1, got {self.n_mels}")
        if not (0.0 <= self.f_min_hz < self.f_max_hz):
            raise ConfigError(f"need 0 <= f_min < f_max, got ({self.f_min_hz}, {self.f_max_hz})")


@dataclass
class SpectrogramGrid:
    """2-D feature grid, frequency-like bins x frames."""

    values: np.ndarray
    bin_centers_hz: np.ndarray = field(default=None)
    frame_hop_s: float = 0.0
    degenerate: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise FormatError(f"grid must be 2-D, got shape {self.values.shape}")
        if self.values.size == 0:
            raise EmptyInputError("grid has no cells")
        if self.bin_centers_hz is None:
            self.bin_centers_hz = np.zeros(self.values.shape[0])


def hann_window(window_len: int) -> np.ndarray:
    """Periodic Hann taper: 0.5*(1 - cos(2*pi*n/L)) for 0 <= n < L."""
    if window_len < 2:
        raise ConfigError(f"hann window needs length >= 2, got {window_len}")
    n = np.arange(window_len, dtype=np.float64)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * n / window_len))


def frame_signal(samples: np.ndarray, window_len: int, hop: int) -> np.ndarray:
    """Full frames [n_frames, window_len]; count = floor((N - L)/H) + 1."""
    n = samples.size
    if n < window_len:
        raise EmptyInputError(f"signal of {n} samples shorter than one {window_len}-sample window")
    n_frames = (n - window_len) // hop + 1
    idx = np.arange(window_len)[None, :] + hop * np.arange(n_frames)[:, None]
    return samples[idx]


def stft(w: Waveform, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """One-sided unnormalized STFT, complex [fft_len//2+1, n_frames].

    Frames past the signal end are never emitted; frames are windowed
    then zero-padded to fft_len when fft_len exceeds the window.
    """
    frames = frame_signal(w.samples, cfg.window_len, cfg.hop)
    tapered = frames * hann_window(cfg.window_len)[None, :]
    return np.fft.rfft(tapered, n=cfg.fft_len, axis=1).T


def power_spectrogram(w: Waveform, cfg: StftConfig = StftConfig()) -> SpectrogramGrid:
    spec = stft(w, cfg)
    freqs = np.arange(cfg.n_bins) * (w.sample_rate_hz / cfg.fft_len)
    return SpectrogramGrid(
        values=np.abs(spec) ** 2,
        bin_centers_hz=freqs,
        frame_hop_s=cfg.hop / w.sample_rate_hz,
    )


def mel_scale(f_hz) -> float:
    """Hz -> mel: 1127 * ln(1 + f/700)."""
    f = np.asarray(f_hz, dtype=np.float64)
    if np.any(f < 0):
        raise DomainError("mel scale is defined for non-negative frequencies")
    out = 1127.0 * np.log1p(f / 700.0)
    return float(out) if out.ndim == 0 else out


def mel_to_hz(m) -> float:
    m = np.asarray(m, dtype=np.float64)
    out = 700.0 * np.expm1(m / 1127.0)
    return float(out) if out.ndim == 0 else out


def mel_filterbank(mel_cfg: MelConfig, fft_len: int, sample_rate_hz: int) -> np.ndarray:
    """Triangular bank [n_mels, fft_len//2+1], centers equally mel-spaced."""
    n_bins = fft_len // 2 + 1
    if mel_cfg.f_max_hz > sample_rate_hz / 2 + 1e-9:
        raise ConfigError(f"f_max {mel_cfg.f_max_hz} above Nyquist {sample_rate_hz / 2}")
    mel_pts = np.linspace(mel_scale(mel_cfg.f_min_hz), mel_scale(mel_cfg.f_max_hz), mel_cfg.n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    bin_freqs = np.arange(n_bins) * (sample_rate_hz / fft_len)

    bank = np.zeros((mel_cfg.n_mels, n_bins))
    for m in range(mel_cfg.n_mels):
        left, center, right = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        up = (bin_freqs - left) / max(center - left, 1e-12)
        down = (right - bin_freqs) / max(right - center, 1e-12)
        bank[m] = np.maximum(0.0, np.minimum(up, down))
    if np.any(bank.sum(axis=1) == 0.0):
        raise ConfigError(f"{mel_cfg.n_mels} mel bins exceed the resolution of a {fft_len}-point transform")
    return bank


def log_mel_spectrogram(w: Waveform, stft_cfg: StftConfig = StftConfig(), mel_cfg: MelConfig = MelConfig()) -> SpectrogramGrid:
    power = power_spectrogram(w, stft_cfg)
    bank = mel_filterbank(mel_cfg, stft_cfg.fft_len, w.sample_rate_hz)
    values = np.log(LOG_FLOOR + bank @ power.values)
    centers = mel_to_hz(
        np.linspace(mel_scale(mel_cfg.f_min_hz), mel_scale(mel_cfg.f_max_hz), mel_cfg.n_mels + 2)[1:-1]
    )
    return SpectrogramGrid(values=values, bin_centers_hz=centers, frame_hop_s=power.frame_hop_s)


def standardize(grid: SpectrogramGrid) -> SpectrogramGrid:
    """Zero-mean unit-variance over all cells; constant grids map to zeros."""
    mu = grid.values.mean()
    sigma = grid.values.std()
    if sigma == 0.0:
        return replace(grid, values=np.zeros_like(grid.values), degenerate=True)
    return replace(grid, values=(grid.values - mu) / sigma, degenerate=False)


def reclip_audio(
    w: Waveform,
    energy_threshold: float = 1e-4,
    min_segment_s: float = 0.0,
    frame_len: int = 1024,
    hop: int = 533,
) -> Waveform:
    """Drop low-energy frames, keep every sample some surviving frame covers.

    Frames start at multiples of ``hop``; the trailing partial frame is
    scored on the samples it actually has. Energy is mean-square per
    frame and the threshold is relative to the loudest frame, so a frame
    is dropped when energy <= energy_threshold * max_energy. Overlapping
    frames mean a sample survives if any covering frame does; samples no
    frame covers (possible only when hop > frame_len) pass through.
    Surviving runs shorter than ``min_segment_s`` are discarded as well,
    which prunes isolated clicks.
    """
    if energy_threshold < 0:
        raise ConfigError(f"energy threshold must be >= 0, got {energy_threshold}")
    if min_segment_s < 0:
        raise ConfigError(f"min segment length must be >= 0, got {min_segment_s}")
    x = w.samples
    n = x.size
    starts = np.arange(0, n, hop)
    energies = np.array([np.mean(x[s : s + frame_len] ** 2) for s in starts])
    cutoff = energy_threshold * energies.max()

    keep = np.zeros(n, dtype=bool)
    covered = np.zeros(n, dtype=bool)
    for s, e in zip(starts, energies):
        covered[s : s + frame_len] = True
        if e > cutoff:
            keep[s : s + frame_len] = True
    keep |= ~covered

    min_run = int(round(min_segment_s * w.sample_rate_hz))
    if min_run > 1 and keep.any():
        edges = np.flatnonzero(np.diff(np.concatenate(([False], keep, [False])).astype(np.int8)))
        for run_start, run_stop in zip(edges[::2], edges[1::2]):
            if run_stop - run_start < min_run:
                keep[run_start:run_stop] = False

    if not keep.any():
        raise EmptyOutputError("reclipping removed the entire signal")
    return Waveform(samples=x[keep], sample_rate_hz=w.sample_rate_hz)


def read_wav(path) -> Waveform:
    """Mono 16-bit PCM WAV; stereo is averaged down to mono."""
    try:
        with wave.open(str(path), "rb") as fh:
            if fh.getsampwidth() != 2:
                raise FormatError(f"expected 16-bit PCM, got sample width {fh.getsampwidth()}")
            n_ch = fh.getnchannels()
            sr = fh.getframerate()
            raw = fh.readframes(fh.getnframes())
    except wave.Error as exc:
        raise FormatError(f"not a readable WAV file: {path}") from exc
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if n_ch > 1:
        data = data.reshape(-1, n_ch).mean(axis=1)
    return Waveform(samples=data, sample_rate_hz=sr)


def write_wav(path, w: Waveform) -> None:
    scaled = np.clip(w.samples, -1.0, 1.0) * 32767.0
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(w.sample_rate_hz)
        fh.writeframes(scaled.astype("<i2").tobytes())
