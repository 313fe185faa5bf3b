"""Log-mel spectrogram features.

Two feature paths feed the rest of the pipeline:

* classifier path: the 14400-sample context window of one frame is run
  through a 25 ms / 12.5 ms Hamming STFT (512-point FFT) and projected
  onto a mel filterbank, giving a [71 x n_mels] matrix per frame;
* decoder path: each 100 ms frame on its own gives a [7 x n_mels]
  spectrogram whose time average is that frame's feature vector.

Windows start at sample 0 with no center padding, so a signal of length
L >= 400 yields floor((L - 400) / 200) + 1 STFT rows.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import framing
from .errors import ShapeError, TooShortError
from .framing import AudioBuffer

SGFT_MAGIC = b"SGFT"
SGFT_VERSION = 1


@dataclass(frozen=True)
class StftConfig:
    win_len: int = 400  # 25 ms at 16 kHz
    hop: int = 200  # 12.5 ms
    fft_size: int = 512

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1


@dataclass(frozen=True)
class MelConfig:
    n_mels: int = 64
    f_min: float = 20.0
    f_max: float = 8000.0
    log_floor: float = 1e-10


@dataclass(frozen=True)
class FeatureMatrix:
    """Real feature matrix plus provenance."""

    data: np.ndarray  # [n_rows x n_cols]
    utterance_id: str = ""
    center_frame: int | None = None

    def __post_init__(self):
        if self.data.ndim != 2:
            raise ShapeError("feature matrix must be 2-D")
        if not np.all(np.isfinite(self.data)):
            raise ShapeError("feature matrix contains non-finite entries")


def n_stft_rows(n_samples: int, cfg: StftConfig = StftConfig()) -> int:
    return (n_samples - cfg.win_len) // cfg.hop + 1


def _windowed_segments(samples: np.ndarray, cfg: StftConfig) -> np.ndarray:
    n = len(samples)
    if n < cfg.win_len:
        raise TooShortError(f"need at least {cfg.win_len} samples, got {n}")
    rows = n_stft_rows(n, cfg)
    segs = np.lib.stride_tricks.sliding_window_view(samples, cfg.win_len)[:: cfg.hop]
    return segs[:rows] * np.hamming(cfg.win_len)


def stft_power(samples: np.ndarray, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """One-sided power spectrogram [T x fft_size/2+1] of a raw signal.

    25 ms Hamming windows every 12.5 ms, zero-padded to the FFT size.
    """
    segs = _windowed_segments(np.asarray(samples, dtype=np.float64), cfg)
    spec = np.fft.rfft(segs, n=cfg.fft_size, axis=1)
    return spec.real**2 + spec.imag**2


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(
    cfg: MelConfig = MelConfig(),
    stft_cfg: StftConfig = StftConfig(),
    sample_rate: int = framing.SAMPLE_RATE,
) -> np.ndarray:
    """[n_bins x n_mels] matrix of unit-peak triangular filters (HTK mel scale)."""
    freqs = np.arange(stft_cfg.n_bins) * sample_rate / stft_cfg.fft_size
    mel_pts = np.linspace(hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max), cfg.n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)

    fb = np.zeros((stft_cfg.n_bins, cfg.n_mels))
    for m in range(cfg.n_mels):
        lo, ctr, hi = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        up = (freqs - lo) / (ctr - lo)
        down = (hi - freqs) / (hi - ctr)
        fb[:, m] = np.clip(np.minimum(up, down), 0.0, None)
    return fb


def mel_project(
    power: np.ndarray,
    cfg: MelConfig = MelConfig(),
    stft_cfg: StftConfig = StftConfig(),
    filterbank: np.ndarray | None = None,
) -> np.ndarray:
    """log(filterbank . power + log_floor), one row per STFT row."""
    power = np.asarray(power, dtype=np.float64)
    if power.ndim != 2 or power.shape[1] != stft_cfg.n_bins:
        raise ShapeError(
            f"power spectrogram must have {stft_cfg.n_bins} columns, got shape {power.shape}"
        )
    if filterbank is None:
        filterbank = mel_filterbank(cfg, stft_cfg)
    return np.log(power @ filterbank + cfg.log_floor)


def classifier_features(
    audio: AudioBuffer,
    i: int,
    mel_cfg: MelConfig = MelConfig(),
    stft_cfg: StftConfig = StftConfig(),
    utterance_id: str = "",
) -> FeatureMatrix:
    """Log-mel features of frame i's nine-frame context window."""
    frames, _ = framing.split_frames(audio)
    window = framing.context_window(frames, i)
    data = mel_project(stft_power(window.merged, stft_cfg), mel_cfg, stft_cfg)
    return FeatureMatrix(data=data, utterance_id=utterance_id, center_frame=i)


def classifier_feature_stack(
    audio: AudioBuffer,
    mel_cfg: MelConfig = MelConfig(),
    stft_cfg: StftConfig = StftConfig(),
) -> np.ndarray:
    """Context-window features for every frame at once: [n_frames, 71, n_mels].

    The context windows of consecutive frames overlap by 8 frames, so the
    whole stack is computed from one STFT over the edge-replicated sample
    stream and sliced per frame.  Rows agree with classifier_features()
    because each STFT row sees exactly the same windowed samples.
    """
    frames, indexing = framing.split_frames(audio)
    n = indexing.n_frames
    idx = np.clip(np.arange(-framing.CONTEXT_FRAMES, n + framing.CONTEXT_FRAMES), 0, n - 1)
    stream = frames[idx].reshape(-1)
    logmel = mel_project(stft_power(stream, stft_cfg), mel_cfg, stft_cfg)

    rows_per_window = n_stft_rows(framing.WINDOW_SAMPLES, stft_cfg)  # 71
    rows_per_frame = framing.FRAME_SAMPLES // stft_cfg.hop  # 8
    out = np.empty((n, rows_per_window, mel_cfg.n_mels))
    for i in range(n):
        out[i] = logmel[i * rows_per_frame : i * rows_per_frame + rows_per_window]
    return out


def frame_features(
    audio: AudioBuffer,
    mel_cfg: MelConfig = MelConfig(),
    stft_cfg: StftConfig = StftConfig(),
) -> np.ndarray:
    """Decoder-path features: one time-averaged log-mel vector per 100 ms frame.

    Each frame is analyzed in isolation so that skipping a frame removes
    exactly that frame's evidence from the decoder input.
    """
    frames, _ = framing.split_frames(audio)
    rows = n_stft_rows(framing.FRAME_SAMPLES, stft_cfg)  # 7
    segs = np.lib.stride_tricks.sliding_window_view(frames, stft_cfg.win_len, axis=1)
    segs = segs[:, :: stft_cfg.hop][:, :rows] * np.hamming(stft_cfg.win_len)
    spec = np.fft.rfft(segs.reshape(-1, stft_cfg.win_len), n=stft_cfg.fft_size, axis=1)
    power = spec.real**2 + spec.imag**2
    logmel = mel_project(power, mel_cfg, stft_cfg)
    return logmel.reshape(len(frames), rows, mel_cfg.n_mels).mean(axis=1)


def write_features(path, data: np.ndarray) -> None:
    """Write an SGFT feature file: magic, version u16, rows u32, cols u32, f32 LE."""
    arr = np.ascontiguousarray(data, dtype="<f4")
    if arr.ndim != 2:
        raise ShapeError("SGFT stores 2-D matrices")
    with open(path, "wb") as fh:
        fh.write(SGFT_MAGIC)
        fh.write(struct.pack("<HII", SGFT_VERSION, arr.shape[0], arr.shape[1]))
        fh.write(arr.tobytes())


def read_features(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != SGFT_MAGIC:
            raise ShapeError(f"bad feature file magic {magic!r}")
        version, n_rows, n_cols = struct.unpack("<HII", fh.read(10))
        if version != SGFT_VERSION:
            raise ShapeError(f"unsupported SGFT version {version}")
        body = fh.read(4 * n_rows * n_cols)
    arr = np.frombuffer(body, dtype="<f4")
    if arr.size != n_rows * n_cols:
        raise ShapeError("SGFT payload truncated")
    return arr.reshape(n_rows, n_cols)
