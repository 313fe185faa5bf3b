"""Deterministic utterance framing.

An utterance is cut into non-overlapping 100 ms frames (1600 samples at
16 kHz).  The classifier looks at a context window of nine frames: the
center frame plus four neighbors on each side, concatenated left to right.
Out-of-range neighbors are filled by edge replication and a trailing
partial frame is zero-padded, so every utterance position gets a window
of exactly 14400 samples.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInputError, FormatError

SAMPLE_RATE = 16000
FRAME_MS = 100
FRAME_SAMPLES = SAMPLE_RATE * FRAME_MS // 1000  # 1600
CONTEXT_FRAMES = 4  # neighbors on each side
WINDOW_FRAMES = 2 * CONTEXT_FRAMES + 1  # 9
WINDOW_SAMPLES = WINDOW_FRAMES * FRAME_SAMPLES  # 14400

INT16_SCALE = 32768.0


@dataclass(frozen=True)
class AudioBuffer:
    """Mono PCM audio as real amplitudes in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.float64))

    def duration_ms(self) -> float:
        return 1000.0 * len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class FrameIndexing:
    """Bookkeeping for the frame grid of one utterance."""

    n_frames: int
    last_frame_pad: int
    frame_len_ms: int = FRAME_MS
    frame_len_samples: int = FRAME_SAMPLES


@dataclass(frozen=True)
class ContextWindow:
    """Nine 100 ms frames merged left-to-right around a center frame."""

    center_index: int
    merged: np.ndarray  # exactly WINDOW_SAMPLES samples

    def __post_init__(self):
        if self.merged.shape != (WINDOW_SAMPLES,):
            raise ValueError(f"merged window must have {WINDOW_SAMPLES} samples")


def pcm16_to_float(pcm: np.ndarray) -> np.ndarray:
    """int16 samples -> float64 amplitudes in [-1, 1)."""
    return np.asarray(pcm, dtype=np.float64) / INT16_SCALE


def float_to_pcm16(samples: np.ndarray) -> np.ndarray:
    scaled = np.rint(np.asarray(samples, dtype=np.float64) * INT16_SCALE)
    return np.clip(scaled, -32768, 32767).astype("<i2")


def load_wav(path) -> AudioBuffer:
    """Read a RIFF/WAVE file; only 16-bit PCM, mono, 16 kHz is accepted.

    Any other encoding is rejected with a FormatError naming the field
    that does not match.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[:4] != b"RIFF":
        raise FormatError("container id: expected 'RIFF'")
    if data[8:12] != b"WAVE":
        raise FormatError("format id: expected 'WAVE'")

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos : pos + 4]
        (chunk_size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8 : pos + 8 + chunk_size]
        if chunk_id == b"fmt ":
            if chunk_size < 16:
                raise FormatError("fmt chunk: truncated")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif chunk_id == b"data":
            payload = body
        pos += 8 + chunk_size + (chunk_size & 1)  # chunks are word-aligned

    if fmt is None:
        raise FormatError("fmt chunk: missing")
    if payload is None:
        raise FormatError("data chunk: missing")

    audio_format, n_channels, rate, _, _, bits = fmt
    if audio_format != 1:
        raise FormatError(f"audio format: expected PCM (1), got {audio_format}")
    if n_channels != 1:
        raise FormatError(f"channels: expected mono (1), got {n_channels}")
    if rate != SAMPLE_RATE:
        raise FormatError(f"sample rate: expected {SAMPLE_RATE} Hz, got {rate}")
    if bits != 16:
        raise FormatError(f"bits per sample: expected 16, got {bits}")

    pcm = np.frombuffer(payload[: len(payload) - (len(payload) % 2)], dtype="<i2")
    return AudioBuffer(pcm16_to_float(pcm), SAMPLE_RATE)


def save_wav(path, audio: AudioBuffer) -> None:
    """Write 16-bit PCM mono WAV; quantization matches pcm16 round-trip."""
    pcm = float_to_pcm16(audio.samples)
    body = pcm.tobytes()
    n = len(body)
    header = b"RIFF" + struct.pack("<I", 36 + n) + b"WAVE"
    header += b"fmt " + struct.pack(
        "<IHHIIHH", 16, 1, 1, audio.sample_rate, audio.sample_rate * 2, 2, 16
    )
    header += b"data" + struct.pack("<I", n)
    with open(path, "wb") as fh:
        fh.write(header + body)


def _check_audio(audio: AudioBuffer) -> None:
    if audio.sample_rate != SAMPLE_RATE:
        raise FormatError(
            f"sample rate: expected {SAMPLE_RATE} Hz, got {audio.sample_rate}"
        )
    if len(audio.samples) == 0:
        raise EmptyInputError("audio has no samples")


def split_frames(audio: AudioBuffer) -> tuple[np.ndarray, FrameIndexing]:
    """Cut an utterance into non-overlapping 100 ms frames.

    Returns ([n_frames, 1600] float64, FrameIndexing).  The final partial
    frame, if any, is zero-padded to full length; last_frame_pad records
    how many zeros were appended.
    """
    _check_audio(audio)
    n = len(audio.samples)
    n_frames = -(-n // FRAME_SAMPLES)  # ceil
    pad = n_frames * FRAME_SAMPLES - n
    padded = np.concatenate([audio.samples, np.zeros(pad)]) if pad else audio.samples
    frames = padded.reshape(n_frames, FRAME_SAMPLES)
    return frames, FrameIndexing(n_frames=n_frames, last_frame_pad=pad)


def merge_frames(frames: np.ndarray, indexing: FrameIndexing) -> np.ndarray:
    """Inverse of split_frames: concatenate and drop the trailing pad."""
    flat = np.asarray(frames).reshape(-1)
    if indexing.last_frame_pad:
        flat = flat[: -indexing.last_frame_pad]
    return flat


def context_window(frames: np.ndarray, i: int) -> ContextWindow:
    """Merge frame i with its four left and four right neighbors.

    Neighbors beyond either end are replaced by the nearest real frame
    (edge replication), so the window is always 9 frames long.
    """
    n_frames = len(frames)
    if not 0 <= i < n_frames:
        raise IndexError(f"frame index {i} out of range [0, {n_frames})")
    idx = np.clip(np.arange(i - CONTEXT_FRAMES, i + CONTEXT_FRAMES + 1), 0, n_frames - 1)
    merged = np.asarray(frames)[idx].reshape(-1)
    return ContextWindow(center_index=i, merged=merged)
