"""Synthetic stand-in corpus with a learnable label signal.

The real interview corpus is license-restricted, so experiments run on
generated sessions. Each participant gets stratified item scores (both
binary classes and both genders always present), audio built from a
tone mixture whose per-tone amplitude encodes one item score, facial
keypoints oscillating with amplitude tied to the total score, and
sentence embeddings displaced along fixed class directions. Everything
derives from the seed, so the same call writes byte-identical corpora.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import ManifestEntry, write_manifest
from .dsp import Waveform, write_wav
from .errors import ConfigError
from .features import EMBED_DIM, N_GAZE, N_LANDMARKS, KeypointFrame, SentenceEmbedding, write_embeddings, write_keypoints

TONE_BASE_HZ = 250.0
TONE_STEP_HZ = 170.0
TONE_BASE_AMP = 0.02
TONE_SCORE_AMP = 0.02
NOISE_AMP = 0.005


def _fixed_geometry():
    """Shared face/embedding geometry, independent of the corpus seed."""
    g = np.random.default_rng(190417)
    base_face = g.uniform(0.3, 0.7, (N_LANDMARKS, 3))
    phases = g.uniform(0, 2 * np.pi, (N_LANDMARKS, 3))
    directions = g.normal(size=(N_LANDMARKS, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    u_bin = g.normal(size=EMBED_DIM)
    u_bin /= np.linalg.norm(u_bin)
    u_score = g.normal(size=EMBED_DIM)
    u_score -= u_bin * (u_bin @ u_score)
    u_score /= np.linalg.norm(u_score)
    return base_face, phases, directions, u_bin, u_score


def _spread_flags(n: int, n_true: int) -> list:
    return [(j * n_true) // n < ((j + 1) * n_true) // n for j in range(n)]


def _stratified_flags(n: int, n_true: int) -> list:
    """Spread n_true flags over n slots, decorrelated from gender.

    Genders alternate with participant index, so spreading directly over
    0..n-1 would lock class to gender; instead spread within the even
    (female) and odd (male) subsequences separately.
    """
    order = list(range(0, n, 2)) + list(range(1, n, 2))
    spread = _spread_flags(n, n_true)
    flags = [False] * n
    for pos, j in enumerate(order):
        flags[j] = spread[pos]
    # the visit order groups one gender first, so each gender's block
    # receives an even share of True flags
    return flags


def _sample_subscores(rng: np.random.Generator, depressed: bool) -> tuple:
    if depressed:
        items = rng.integers(1, 4, size=8)
        while items.sum() < 10:
            idx = rng.integers(0, 8)
            items[idx] = min(3, items[idx] + 1)
    else:
        items = rng.integers(0, 2, size=8)  # total <= 8, always below the cut
    return tuple(int(v) for v in items)


def synth_audio(rng: np.random.Generator, subscores, duration_s: float, sample_rate: int) -> Waveform:
    """Tone mixture: tone k's amplitude encodes item k's score."""
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate
    x = np.zeros(n)
    for k, s in enumerate(subscores):
        amp = TONE_BASE_AMP + TONE_SCORE_AMP * s
        x += amp * np.sin(2 * np.pi * (TONE_BASE_HZ + TONE_STEP_HZ * k) * t)
    x += NOISE_AMP * rng.standard_normal(n)
    return Waveform(samples=x, sample_rate_hz=sample_rate)


def synth_keypoints(rng: np.random.Generator, total_score: int, duration_s: float, frame_rate: float) -> list:
    """Oscillating face; motion amplitude grows with the total score."""
    base_face, phases, directions, _, _ = _fixed_geometry()
    amp = 0.004 + 0.002 * total_score
    n_frames = int(round(duration_s * frame_rate))
    frames = []
    for i in range(n_frames):
        ts = i / frame_rate
        wobble = amp * np.sin(2 * np.pi * 0.5 * ts + phases)
        pts = base_face + wobble * directions + 0.001 * rng.standard_normal((N_LANDMARKS, 3))
        gaze = np.tile([0.0, 0.0, 1.0], (N_GAZE, 1)) + 0.05 * rng.standard_normal((N_GAZE, 3))
        gaze /= np.linalg.norm(gaze, axis=1, keepdims=True)
        frames.append(KeypointFrame(points=np.concatenate([pts, gaze]), timestamp_s=ts))
    return frames


def synth_embeddings(rng: np.random.Generator, depressed: bool, total_score: int, duration_s: float, every_s: float = 5.0) -> list:
    """One sentence every few seconds, displaced along class directions."""
    _, _, _, u_bin, u_score = _fixed_geometry()
    sign = 1.0 if depressed else -1.0
    mean = 2.0 * sign * u_bin + (total_score / 24.0) * u_score
    out = []
    n = int(duration_s // every_s)
    for i in range(n):
        vec = mean + 0.3 * rng.standard_normal(EMBED_DIM)
        out.append(SentenceEmbedding(vector=vec, start_s=i * every_s, stop_s=i * every_s + every_s * 0.8))
    return out


def generate_synthetic_corpus(
    out_dir,
    n_participants: int = 8,
    seed: int = 0,
    duration_s: float = 120.0,
    depressed_fraction: float = 0.5,
    sample_rate: int = 16000,
    frame_rate: float = 30.0,
) -> Path:
    """Write sessions + manifest under out_dir; returns the manifest path."""
    if n_participants < 2:
        raise ConfigError("need at least 2 participants to cover both binary classes")
    n_dep = int(round(depressed_fraction * n_participants))
    n_dep = min(max(n_dep, 1), n_participants - 1)  # both classes must appear
    dep_flags = _stratified_flags(n_participants, n_dep)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for j in range(n_participants):
        pid = f"P{j:03d}"
        gender = "female" if j % 2 == 0 else "male"
        rng = np.random.default_rng([seed, 7919, j])
        subs = _sample_subscores(rng, dep_flags[j])
        total = sum(subs)

        pdir = out_dir / pid
        pdir.mkdir(exist_ok=True)
        write_wav(pdir / "audio.wav", synth_audio(rng, subs, duration_s, sample_rate))
        write_keypoints(pdir / "keypoints.txt", synth_keypoints(rng, total, duration_s, frame_rate))
        write_embeddings(pdir / "embeddings.txt", synth_embeddings(rng, dep_flags[j], total, duration_s))

        entries.append(
            ManifestEntry(
                participant_id=pid,
                gender=gender,
                phq_subscores=subs,
                audio_path=Path(pid) / "audio.wav",
                keypoints_path=Path(pid) / "keypoints.txt",
                embeddings_path=Path(pid) / "embeddings.txt",
            )
        )

    manifest = out_dir / "manifest.csv"
    # entries carry absolute-ish paths for loading; the file stores them
    # relative to the manifest location
    write_manifest(manifest, entries)
    return manifest
