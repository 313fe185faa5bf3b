"""The "pass" half: attach stutter metadata to decoder features and gate.

Skip mode drops every frame whose decision is 1, in order.  Flag mode
keeps all frames and appends one extra feature field carrying the
classifier prediction (the binary decision by default, optionally the
raw posterior).  SkipAndFlag does both: drop flagged frames and append
the field to the survivors.
"""

from __future__ import annotations

import csv
import enum
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import features as feats
from .errors import DomainError, EmptyStreamWarning, ShapeError


class GateMode(enum.Enum):
    SKIP = "skip"
    FLAG = "flag"
    SKIP_AND_FLAG = "skip_and_flag"


@dataclass(frozen=True)
class GatedStream:
    """Decoder-facing frame sequence after gating.

    features[i], flags[i], posteriors[i] and original_indices[i] describe
    the i-th surviving item; drop_count + len(features) equals the source
    stream length.
    """

    features: np.ndarray
    flags: np.ndarray
    posteriors: np.ndarray
    original_indices: np.ndarray
    mode: GateMode
    drop_count: int
    source_len: int

    def __len__(self) -> int:
        return len(self.features)


def gate(features, decisions, posteriors, mode: GateMode,
         flag_field: str = "decision") -> GatedStream:
    """Gate per-frame (or per-stack) features with stutter decisions.

    flag_field selects what the appended field carries in the flagging
    modes: the binary "decision" or the raw "posterior".
    """
    features = np.asarray(features, dtype=np.float64)
    decisions = np.asarray(decisions)
    posteriors = np.asarray(posteriors, dtype=np.float64)
    if features.ndim != 2:
        raise ShapeError("features must be [n, feature_dim]")
    n = len(features)
    if len(decisions) != n or len(posteriors) != n:
        raise ShapeError(
            f"lengths differ: {n} features, {len(decisions)} decisions, "
            f"{len(posteriors)} posteriors")
    if np.any((posteriors < 0) | (posteriors > 1)):
        raise DomainError("posteriors must lie in [0, 1]")
    if not np.all(np.isin(decisions, (0, 1))):
        raise DomainError("decisions must be 0 or 1")
    if flag_field not in ("decision", "posterior"):
        raise DomainError(f"flag_field must be decision or posterior, not {flag_field!r}")

    if mode is GateMode.FLAG:
        keep = np.ones(n, dtype=bool)
    else:
        keep = decisions == 0

    kept = features[keep]
    if mode in (GateMode.FLAG, GateMode.SKIP_AND_FLAG):
        extra = (decisions if flag_field == "decision" else posteriors)[keep]
        kept = np.hstack([kept, extra[:, None].astype(np.float64)])

    drop_count = int(n - keep.sum())
    if keep.sum() == 0:
        warnings.warn("gating dropped every frame; decoder will see an empty stream",
                      EmptyStreamWarning, stacklevel=2)
    return GatedStream(
        features=kept,
        flags=np.asarray(decisions[keep], dtype=np.uint8),
        posteriors=posteriors[keep],
        original_indices=np.nonzero(keep)[0],
        mode=mode,
        drop_count=drop_count,
        source_len=n,
    )


def save_stream(prefix, stream: GatedStream) -> None:
    """Write <prefix>.sgft (features) plus <prefix>.idx.csv and .meta.json."""
    prefix = Path(prefix)
    feats.write_features(prefix.with_suffix(".sgft"),
                         stream.features.reshape(len(stream), -1)
                         if len(stream) else np.zeros((0, 1)))
    with open(prefix.with_suffix(".idx.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["original_index", "flag", "posterior"])
        for i in range(len(stream)):
            writer.writerow([int(stream.original_indices[i]),
                             int(stream.flags[i]),
                             f"{stream.posteriors[i]:.9f}"])
    meta = {"mode": stream.mode.value, "drop_count": stream.drop_count,
            "source_len": stream.source_len}
    prefix.with_suffix(".meta.json").write_text(json.dumps(meta, sort_keys=True))


def load_stream(prefix) -> GatedStream:
    prefix = Path(prefix)
    features = feats.read_features(prefix.with_suffix(".sgft")).astype(np.float64)
    meta = json.loads(prefix.with_suffix(".meta.json").read_text())
    indices, flags, posteriors = [], [], []
    with open(prefix.with_suffix(".idx.csv"), newline="") as fh:
        for row in csv.DictReader(fh):
            indices.append(int(row["original_index"]))
            flags.append(int(row["flag"]))
            posteriors.append(float(row["posterior"]))
    if meta["source_len"] - meta["drop_count"] == 0:
        features = features.reshape(0, features.shape[1] if features.size else 1)
    return GatedStream(
        features=features,
        flags=np.asarray(flags, dtype=np.uint8),
        posteriors=np.asarray(posteriors, dtype=np.float64),
        original_indices=np.asarray(indices, dtype=np.int64),
        mode=GateMode(meta["mode"]),
        drop_count=meta["drop_count"],
        source_len=meta["source_len"],
    )
