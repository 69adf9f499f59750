"""Multi-modal depression estimation from interview recordings.

Audio (log-mel), facial keypoints, and sentence embeddings run through
per-modality ConvBiLSTM backbones, an 8-head attentional fusion bank,
and per-item soft-label classifiers trained with KL loss under
sharpness-aware minimization. Everything runs on numpy with a small
built-in reverse-mode autodiff engine.
"""

__version__ = "0.1.0"
