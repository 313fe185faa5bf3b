"""Stutter annotations, frame labels, severity bands, and synthetic corpora.

Annotation text files carry one signature per line, e.g.::

    [2367] [W] [4372]

meaning a word repetition from 2367 ms to 4372 ms.  Frame labels are
derived with a majority-overlap rule: a 100 ms frame is stuttered when at
least 50 ms of it lies inside the union of annotated events.

The synthetic generator renders token sequences as sinusoid chords (one
chord per vocabulary token) and injects three event kinds: token
repetitions, prolongations (both carry a 16 Hz amplitude tremor) and
blocks (inserted near-silence).  It exists so the classifier, the gate
and the toy transducer can be exercised end to end without any real
speech data.
"""

from __future__ import annotations

import enum
import json
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import framing
from .errors import (
    AnnotationClipWarning,
    AnnotationError,
    ConfigError,
    DomainError,
    UnknownTagError,
)
from .framing import FRAME_MS, AudioBuffer


class StutterType(enum.Enum):
    REVISION = "R"
    INTERJECTION = "I"
    DYSRHYTHMIC_PHONATION = "D"
    BLOCK = "B"
    PHONEME_REPETITION = "PH"
    PART_WORD_REPETITION = "PW"
    WORD_REPETITION = "W"
    PHRASE_REPETITION = "P"

    @property
    def tag(self) -> str:
        return self.value


TAG_TO_TYPE = {t.value: t for t in StutterType}


@dataclass(frozen=True, order=True)
class StutterEvent:
    onset_ms: int
    offset_ms: int
    kind: StutterType = field(compare=False)

    def __post_init__(self):
        if self.onset_ms < 0 or self.offset_ms <= self.onset_ms:
            raise AnnotationError(
                f"event range [{self.onset_ms}, {self.offset_ms}] is empty or negative"
            )


@dataclass(frozen=True)
class FrameLabelTrack:
    labels: np.ndarray  # uint8 of {0,1}, one per 100 ms frame
    utterance_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.uint8))


class SeverityBand(enum.Enum):
    NORMAL = "normal"
    MILD = "mild"
    MODERATE = "moderate"
    SEVERE = "severe"
    VERY_SEVERE = "very_severe"


# Half-open [low, high) fraction-of-syllables bands; 20% and up is VerySevere.
SEVERITY_BOUNDS = {
    SeverityBand.NORMAL: (0.0, 0.01),
    SeverityBand.MILD: (0.01, 0.06),
    SeverityBand.MODERATE: (0.06, 0.13),
    SeverityBand.SEVERE: (0.13, 0.20),
    SeverityBand.VERY_SEVERE: (0.20, 1.0),
}

_SIGNATURE = re.compile(r"^\s*\[(\d+)\]\s+\[([A-Z]+)\]\s+\[(\d+)\]\s*$")


def parse_annotations(text: str) -> list[StutterEvent]:
    """Parse '[onset_ms] [TAG] [offset_ms]' signatures, one per line.

    Returns events sorted by onset.  Raises AnnotationError with the line
    number for malformed lines, UnknownTagError for tags outside the
    stutter-type table.
    """
    events = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        m = _SIGNATURE.match(line)
        if m is None:
            raise AnnotationError(f"malformed signature {line.strip()!r}", line_no)
        onset, tag, offset = int(m.group(1)), m.group(2), int(m.group(3))
        if tag not in TAG_TO_TYPE:
            raise UnknownTagError(f"unknown stutter tag {tag!r}", line_no)
        if offset <= onset:
            raise AnnotationError(
                f"offset {offset} must exceed onset {onset}", line_no
            )
        events.append(StutterEvent(onset, offset, TAG_TO_TYPE[tag]))
    return sorted(events)


def serialize_annotations(events: list[StutterEvent]) -> str:
    return "".join(
        f"[{e.onset_ms}] [{e.kind.tag}] [{e.offset_ms}]\n" for e in sorted(events)
    )


def _merge_intervals(events) -> list[tuple[int, int]]:
    merged = []
    for e in sorted(events):
        if merged and e.onset_ms <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], e.offset_ms))
        else:
            merged.append((e.onset_ms, e.offset_ms))
    return merged


def label_frames(
    events: list[StutterEvent],
    n_frames: int,
    utterance_id: str = "",
    min_overlap_ms: int = 50,
) -> FrameLabelTrack:
    """Per-frame binary labels: 1 when >= min_overlap_ms of the frame lies
    inside the union of annotated events.

    Events reaching past the utterance end are clipped with an
    AnnotationClipWarning.
    """
    end_ms = n_frames * FRAME_MS
    spans = []
    for start, stop in _merge_intervals(events):
        if stop > end_ms:
            warnings.warn(
                f"event [{start}, {stop}] extends past utterance end {end_ms} ms; clipped",
                AnnotationClipWarning,
                stacklevel=2,
            )
            stop = end_ms
        if start < stop:
            spans.append((start, stop))

    labels = np.zeros(n_frames, dtype=np.uint8)
    for i in range(n_frames):
        lo, hi = i * FRAME_MS, (i + 1) * FRAME_MS
        overlap = sum(min(stop, hi) - max(start, lo) for start, stop in spans
                      if start < hi and stop > lo)
        if overlap >= min_overlap_ms:
            labels[i] = 1
    return FrameLabelTrack(labels=labels, utterance_id=utterance_id)


def severity(stutter_fraction: float) -> SeverityBand:
    """Band for a fraction of stuttered syllables, boundaries at 1/6/13/20%."""
    if not 0.0 <= stutter_fraction <= 1.0:
        raise DomainError(f"stutter fraction {stutter_fraction} outside [0, 1]")
    for band, (lo, hi) in SEVERITY_BOUNDS.items():
        if lo <= stutter_fraction < hi:
            return band
    return SeverityBand.VERY_SEVERE  # fraction == 1.0


# ---------------------------------------------------------------------------
# Synthetic corpus
# ---------------------------------------------------------------------------

TOKENS = (
    "ba", "be", "bi", "bo", "bu",
    "da", "de", "di", "do", "du",
    "ga", "ge", "gi", "go",
)

_TOKEN_F0 = 210.0 * (2.0 ** (np.arange(len(TOKENS)) / 5.0))  # 210 Hz .. ~1280 Hz
_TREMOR_HZ = 16.0
_TREMOR_DEPTH = 0.8

# Per-band token-count ranges chosen so an integer event count can realize
# a fraction inside the band (e.g. mild needs >= 17 tokens for one event).
_BAND_TOKEN_RANGE = {
    SeverityBand.NORMAL: (6, 12),
    SeverityBand.MILD: (17, 34),
    SeverityBand.MODERATE: (8, 20),
    SeverityBand.SEVERE: (6, 18),
    SeverityBand.VERY_SEVERE: (6, 14),
}

_EVENT_KINDS = ("repetition", "prolongation", "block")
_EVENT_KIND_P = (0.4, 0.3, 0.3)
_EVENT_TAG = {
    "repetition": StutterType.WORD_REPETITION,
    "prolongation": StutterType.DYSRHYTHMIC_PHONATION,
    "block": StutterType.BLOCK,
}


@dataclass(frozen=True)
class SynthUtterance:
    utt_id: str
    audio: AudioBuffer
    transcript: str
    events: list[StutterEvent]
    band: SeverityBand
    stutter_fraction: float
    n_tokens: int


def _utt_rng(seed: int, key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(key,)))


def _render_token(rng, token_idx: int, dur_samples: int, amp: float) -> np.ndarray:
    f0 = _TOKEN_F0[token_idx]
    t = np.arange(dur_samples) / framing.SAMPLE_RATE
    sig = 0.6 * np.sin(2 * np.pi * f0 * t) + 0.4 * np.sin(2 * np.pi * 2.3 * f0 * t)
    ramp = min(int(0.015 * framing.SAMPLE_RATE), dur_samples // 2)
    env = np.ones(dur_samples)
    if ramp:
        fade = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
        env[:ramp] = fade
        env[-ramp:] = fade[::-1]
    return amp * env * sig


def _tremor(n_samples: int, start_sample: int = 0) -> np.ndarray:
    t = (start_sample + np.arange(n_samples)) / framing.SAMPLE_RATE
    return 1.0 - _TREMOR_DEPTH * (0.5 - 0.5 * np.cos(2 * np.pi * _TREMOR_HZ * t))


def _pick_counts(rng, band: SeverityBand) -> tuple[int, int, float]:
    """(n_tokens, n_events, realized fraction) with the fraction inside band."""
    lo, hi = SEVERITY_BOUNDS[band]
    if band is SeverityBand.NORMAL:
        n_tokens = int(rng.integers(*_BAND_TOKEN_RANGE[band], endpoint=True))
        return n_tokens, 0, 0.0
    tok_lo, tok_hi = _BAND_TOKEN_RANGE[band]
    cap = min(hi, 0.5)  # keep very-severe utterances renderable
    target = rng.uniform(lo, cap)
    for _ in range(64):
        n_tokens = int(rng.integers(tok_lo, tok_hi, endpoint=True))
        feasible = [e for e in range(1, n_tokens + 1) if lo <= e / n_tokens < cap + 1e-12
                    and e / n_tokens < hi]
        if feasible:
            n_events = min(feasible, key=lambda e: abs(e / n_tokens - target))
            return n_tokens, n_events, n_events / n_tokens
    raise ConfigError(f"cannot realize a stutter fraction inside band {band.value}")


def synth_utterance(seed: int, index: int, band: SeverityBand,
                    utt_id: str | None = None) -> SynthUtterance:
    """Render one deterministic utterance; rng depends only on (seed, index)."""
    rng = _utt_rng(seed, index + 1)
    if utt_id is None:
        utt_id = f"utt{index:05d}"
    n_tokens, n_events, fraction = _pick_counts(rng, band)

    token_ids = rng.integers(0, len(TOKENS), size=n_tokens)
    event_positions = rng.choice(n_tokens, size=n_events, replace=False) if n_events else []
    kinds = {int(p): _EVENT_KINDS[rng.choice(len(_EVENT_KINDS), p=_EVENT_KIND_P)]
             for p in event_positions}

    sr = framing.SAMPLE_RATE
    chunks = [np.zeros(int(rng.integers(20, 61) * sr // 1000))]
    cursor = len(chunks[0])
    events: list[StutterEvent] = []

    def emit(arr):
        nonlocal cursor
        chunks.append(arr)
        cursor += len(arr)

    for pos, tok in enumerate(token_ids):
        dur = int(rng.uniform(0.180, 0.300) * sr)
        amp = rng.uniform(0.25, 0.35)
        kind = kinds.get(pos)

        if kind == "block":
            block_len = int(rng.uniform(0.250, 0.900) * sr)
            onset = cursor
            emit(np.zeros(block_len))
            events.append(StutterEvent(round(onset * 1000 / sr),
                                       round(cursor * 1000 / sr), _EVENT_TAG[kind]))
            emit(_render_token(rng, tok, dur, amp))
        elif kind == "repetition":
            n_copies = int(rng.integers(2, 5))
            gap = int(0.040 * sr)
            onset = cursor
            for _ in range(n_copies - 1):
                copy = _render_token(rng, tok, dur, amp) * _tremor(dur)
                emit(copy)
                emit(np.zeros(gap))
            offset = cursor  # final copy is the fluent one
            events.append(StutterEvent(round(onset * 1000 / sr),
                                       round(offset * 1000 / sr), _EVENT_TAG[kind]))
            emit(_render_token(rng, tok, dur, amp))
        elif kind == "prolongation":
            stretch = rng.uniform(2.0, 5.0)
            long_dur = int(stretch * dur)
            onset = cursor
            tone = _render_token(rng, tok, long_dur, amp)
            held = long_dur - dur  # tremor on the held part, clean tail
            tone[:held] *= _tremor(held)
            events.append(StutterEvent(round(onset * 1000 / sr),
                                       round((onset + held) * 1000 / sr), _EVENT_TAG[kind]))
            emit(tone)
        else:
            emit(_render_token(rng, tok, dur, amp))

        emit(np.zeros(int(rng.integers(30, 91) * sr // 1000)))

    chunks.append(np.zeros(int(rng.integers(20, 61) * sr // 1000)))
    raw = np.concatenate(chunks)
    raw += rng.uniform(-5e-4, 5e-4, size=len(raw))
    # Quantize to the int16 grid so WAV round-trips are bit-exact.
    samples = framing.pcm16_to_float(framing.float_to_pcm16(raw))

    return SynthUtterance(
        utt_id=utt_id,
        audio=AudioBuffer(samples),
        transcript=" ".join(TOKENS[i] for i in token_ids),
        events=sorted(events),
        band=band,
        stutter_fraction=fraction,
        n_tokens=n_tokens,
    )


def _band_assignment(seed: int, n_utts: int, severity_mix: dict) -> list[SeverityBand]:
    weights = {}
    for key, w in severity_mix.items():
        band = key if isinstance(key, SeverityBand) else SeverityBand(key)
        if w < 0:
            raise ConfigError(f"severity mix weight for {band.value} is negative")
        weights[band] = float(w)
    total = sum(weights.values())
    if total > 1.0 + 1e-9:
        raise ConfigError(f"severity mix sums to {total}, must not exceed 1")
    if abs(total - 1.0) > 1e-9:
        raise ConfigError(f"severity mix sums to {total}, must sum to 1")

    # Largest-remainder apportionment, then a seeded shuffle.
    bands = sorted(weights, key=lambda b: b.value)
    exact = {b: weights[b] * n_utts for b in bands}
    counts = {b: int(exact[b]) for b in bands}
    short = n_utts - sum(counts.values())
    for b in sorted(bands, key=lambda b: exact[b] - counts[b], reverse=True)[:short]:
        counts[b] += 1
    assignment = [b for b in bands for _ in range(counts[b])]
    _utt_rng(seed, 0).shuffle(assignment)
    return assignment


def synth_corpus(seed: int, n_utts: int, severity_mix: dict,
                 id_prefix: str = "utt", min_events: int = 0) -> list[SynthUtterance]:
    """Deterministic synthetic corpus with the requested severity mix.

    severity_mix maps band name -> fraction of utterances; fractions must
    sum to 1.  min_events > 0 forbids the Normal band (those utterances
    carry no events by construction).
    """
    if n_utts < 1:
        raise ConfigError("n_utts must be >= 1")
    assignment = _band_assignment(seed, n_utts, severity_mix)
    if min_events > 0 and SeverityBand.NORMAL in assignment:
        raise ConfigError("cannot force stutter events on Normal-band utterances")
    return [
        synth_utterance(seed, i, band, utt_id=f"{id_prefix}{i:05d}")
        for i, band in enumerate(assignment)
    ]


# ---------------------------------------------------------------------------
# Corpus directory layout and manifest
# ---------------------------------------------------------------------------


def write_corpus(corpus_dir, utts: list[SynthUtterance]) -> Path:
    """Write wavs/, ann/ and manifest.jsonl; returns the manifest path."""
    corpus_dir = Path(corpus_dir)
    (corpus_dir / "wavs").mkdir(parents=True, exist_ok=True)
    (corpus_dir / "ann").mkdir(parents=True, exist_ok=True)
    records = []
    for u in utts:
        wav_rel = f"wavs/{u.utt_id}.wav"
        ann_rel = f"ann/{u.utt_id}.txt"
        framing.save_wav(corpus_dir / wav_rel, u.audio)
        (corpus_dir / ann_rel).write_text(serialize_annotations(u.events), encoding="utf-8")
        records.append({
            "utt_id": u.utt_id,
            "wav": wav_rel,
            "ann": ann_rel,
            "transcript": u.transcript,
            "severity_band": u.band.value,
            "stutter_fraction": round(u.stutter_fraction, 6),
            "n_tokens": u.n_tokens,
            "events": [[e.onset_ms, e.kind.tag, e.offset_ms] for e in u.events],
        })
    manifest = corpus_dir / "manifest.jsonl"
    with open(manifest, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return manifest


def read_manifest(manifest_path) -> list[dict]:
    records = []
    with open(manifest_path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(json.loads(line))
    return records


def events_from_record(record: dict) -> list[StutterEvent]:
    return sorted(
        StutterEvent(onset, offset, TAG_TO_TYPE[tag])
        for onset, tag, offset in record["events"]
    )
