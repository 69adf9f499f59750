"""Dataset layout: manifests, session loading, and on-disk clip bundles.

A manifest is a small CSV naming each participant's label row and the
three modality files. Loading a session pulls the WAV, keypoint text and
embedding text into a SessionFeatures; preprocessing cuts it into
overlapped clips and writes each clip as a bundle directory of tensor
files plus a small metadata text file.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dsp import read_wav, reclip_audio
from .errors import DataError, FormatError
from .features import (
    ClipSample,
    SessionFeatures,
    ingest_embeddings,
    read_keypoints,
    sliding_window_clips,
)
from .tensorio import read_tensor, write_tensor

MANIFEST_FIELDS = (
    ["participant_id", "gender"]
    + [f"s{i}" for i in range(8)]
    + ["audio", "keypoints", "embeddings", "gb_augmented"]
)


@dataclass
class ManifestEntry:
    participant_id: str
    gender: str
    phq_subscores: tuple
    audio_path: Path
    keypoints_path: Path
    embeddings_path: Path
    gb_augmented: bool = False

    def __post_init__(self):
        if self.gender not in ("female", "male"):
            raise DataError(f"gender must be female or male, got '{self.gender}'")
        subs = tuple(int(s) for s in self.phq_subscores)
        if len(subs) != 8 or any(s < 0 or s > 3 for s in subs):
            raise DataError(f"bad subscores for {self.participant_id}: {self.phq_subscores}")
        self.phq_subscores = subs


def write_manifest(path, entries) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_FIELDS)
        for e in entries:
            writer.writerow(
                [e.participant_id, e.gender]
                + list(e.phq_subscores)
                + [
                    str(e.audio_path),
                    str(e.keypoints_path),
                    str(e.embeddings_path),
                    int(e.gb_augmented),
                ]
            )


def read_manifest(path) -> list:
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    entries = []
    seen = set()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(MANIFEST_FIELDS):
            raise FormatError(f"{path}: unexpected manifest header {header}")
        for ln, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != len(MANIFEST_FIELDS):
                raise FormatError(f"{path}:{ln}: expected {len(MANIFEST_FIELDS)} columns, got {len(row)}")
            pid = row[0]
            if pid in seen:
                raise DataError(f"{path}:{ln}: duplicate participant id '{pid}'")
            seen.add(pid)
            entries.append(
                ManifestEntry(
                    participant_id=pid,
                    gender=row[1],
                    phq_subscores=tuple(int(v) for v in row[2:10]),
                    audio_path=path.parent / row[10],
                    keypoints_path=path.parent / row[11],
                    embeddings_path=path.parent / row[12],
                    gb_augmented=bool(int(row[13])),
                )
            )
    if not entries:
        raise DataError(f"{path}: manifest lists no participants")
    return entries


def load_session(entry: ManifestEntry) -> SessionFeatures:
    for p in (entry.audio_path, entry.keypoints_path, entry.embeddings_path):
        if not Path(p).exists():
            raise DataError(f"missing modality file for {entry.participant_id}: {p}")
    return SessionFeatures(
        audio=read_wav(entry.audio_path),
        frames=read_keypoints(entry.keypoints_path),
        sentences=ingest_embeddings(entry.embeddings_path),
        phq_subscores=entry.phq_subscores,
        participant_id=entry.participant_id,
        gender=entry.gender,
    )


def preprocess_session(entry: ManifestEntry, cfg: dict) -> list:
    """Manifest row -> clip samples under the given run config."""
    from .config import mel_config, stft_config  # local import to avoid a cycle

    session = load_session(entry)
    if cfg["reclip"]:
        # audio-only trimming; visual/text timelines are untouched, so only
        # enable this for audio-only experiments
        session.audio = reclip_audio(
            session.audio,
            energy_threshold=cfg["reclip_threshold"],
            min_segment_s=cfg["reclip_min_segment_s"],
            frame_len=cfg["window_len"],
            hop=cfg["hop"],
        )
    return sliding_window_clips(
        session,
        window_s=cfg["clip_window_s"],
        overlap_s=cfg["clip_overlap_s"],
        stft_cfg=stft_config(cfg),
        mel_cfg=mel_config(cfg),
        max_sentences=cfg["max_sentences"],
    )


# -- clip bundles ------------------------------------------------------


def write_clip_bundle(bundle_dir, clip: ClipSample) -> None:
    bundle_dir = Path(bundle_dir)
    bundle_dir.mkdir(parents=True, exist_ok=True)
    write_tensor(bundle_dir / "audio.mft", clip.audio)
    write_tensor(bundle_dir / "visual.mft", clip.visual)
    write_tensor(bundle_dir / "text.mft", clip.text)
    with open(bundle_dir / "meta.txt", "w") as fh:
        fh.write(f"participant_id {clip.participant_id}\n")
        fh.write(f"gender {clip.gender}\n")
        fh.write("subscores " + " ".join(str(s) for s in clip.phq_subscores) + "\n")
        fh.write(f"clip_index {clip.clip_index}\n")
        fh.write(f"start_s {clip.start_s:.8g}\n")


def read_clip_bundle(bundle_dir) -> ClipSample:
    bundle_dir = Path(bundle_dir)
    meta = {}
    meta_path = bundle_dir / "meta.txt"
    if not meta_path.exists():
        raise DataError(f"not a clip bundle (no meta.txt): {bundle_dir}")
    with open(meta_path) as fh:
        for line in fh:
            key, _, rest = line.strip().partition(" ")
            meta[key] = rest
    try:
        return ClipSample(
            audio=read_tensor(bundle_dir / "audio.mft").astype(np.float64),
            visual=read_tensor(bundle_dir / "visual.mft").astype(np.float64),
            text=read_tensor(bundle_dir / "text.mft").astype(np.float64),
            phq_subscores=tuple(int(v) for v in meta["subscores"].split()),
            participant_id=meta["participant_id"],
            gender=meta["gender"],
            clip_index=int(meta["clip_index"]),
            start_s=float(meta["start_s"]),
        )
    except KeyError as exc:
        raise FormatError(f"{meta_path}: missing metadata key {exc}") from exc


def write_clips(out_dir, clips) -> list:
    """One bundle per clip: <out_dir>/<participant>_c<k>/; returns dirs."""
    out_dir = Path(out_dir)
    dirs = []
    for clip in clips:
        d = out_dir / f"{clip.participant_id}_c{clip.clip_index:04d}"
        write_clip_bundle(d, clip)
        dirs.append(d)
    return dirs


def read_clips(root) -> list:
    """Load every bundle directory under root, sorted by name."""
    root = Path(root)
    if not root.exists():
        raise DataError(f"clip directory not found: {root}")
    dirs = sorted(p for p in root.iterdir() if p.is_dir() and (p / "meta.txt").exists())
    if not dirs:
        raise DataError(f"no clip bundles under {root}")
    return [read_clip_bundle(d) for d in dirs]
