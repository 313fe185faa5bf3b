"""Low-frame-rate stacking and per-stack vote rules.

Three consecutive 100 ms frames form one decoder stack; the three
per-frame stutter decisions/posteriors are converted to one per-stack
decision by a vote policy:

* majority: majority vote of the three binary decisions;
* any_1: 1 when any member frame is stuttered;
* any_0: 0 when any member frame is regular (1 only if all three are);
* ave_th: 1 when the mean posterior strictly exceeds th.

When the frame count is not a multiple of three the final stack repeats
the last frame (features, posterior and decision alike).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import gate as gate_mod
from .errors import DomainError, EmptyInputError, ShapeError

STACK_SIZE = 3


@dataclass(frozen=True)
class VotePolicy:
    kind: str  # majority | any_1 | any_0 | ave_th
    threshold: float | None = None

    def __post_init__(self):
        if self.kind not in ("majority", "any_1", "any_0", "ave_th"):
            raise DomainError(f"unknown vote policy {self.kind!r}")
        if self.kind == "ave_th":
            if self.threshold is None or not 0.0 < self.threshold < 1.0:
                raise DomainError("ave_th threshold must lie strictly inside (0, 1)")
        elif self.threshold is not None:
            raise DomainError(f"policy {self.kind} takes no threshold")

    @property
    def name(self) -> str:
        if self.kind == "ave_th":
            return f"ave_{self.threshold:g}"
        return self.kind


MAJORITY = VotePolicy("majority")
ANY_1 = VotePolicy("any_1")
ANY_0 = VotePolicy("any_0")


def ave(th: float) -> VotePolicy:
    return VotePolicy("ave_th", th)


# Row order of the published comparison table.
DEFAULT_POLICY_GRID = (
    MAJORITY, ANY_1, ANY_0,
    ave(0.2), ave(0.4), ave(0.5), ave(0.6), ave(0.8), ave(0.9),
)


def parse_policy(name: str) -> VotePolicy:
    if name in ("majority", "any_1", "any_0"):
        return VotePolicy(name)
    if name.startswith("ave_"):
        return ave(float(name[4:]))
    raise DomainError(f"unknown vote policy name {name!r}")


@dataclass(frozen=True)
class LfrStack:
    member_indices: tuple[int, int, int]
    stacked_features: np.ndarray  # concatenation of the three member frames
    member_decisions: tuple[int, int, int]
    member_posteriors: tuple[float, float, float]
    stack_posterior_mean: float
    stack_decision: int | None = None  # set by vote_stacks


def vote(decisions, posteriors, policy: VotePolicy) -> int:
    """One per-stack decision from three member decisions/posteriors."""
    d = [int(v) for v in decisions]
    p = [float(v) for v in posteriors]
    if len(d) != STACK_SIZE or len(p) != STACK_SIZE:
        raise ShapeError(f"a stack has exactly {STACK_SIZE} members")
    if any(v not in (0, 1) for v in d):
        raise DomainError("decisions must be 0 or 1")
    if any(not 0.0 <= v <= 1.0 for v in p):
        raise DomainError("posteriors must lie in [0, 1]")
    if policy.kind == "majority":
        return int(sum(d) >= 2)
    if policy.kind == "any_1":
        return int(any(d))
    if policy.kind == "any_0":
        return int(all(d))
    return int(sum(p) / STACK_SIZE > policy.threshold)  # strictly greater


def stack_frames(track, features) -> list[LfrStack]:
    """Group a posterior track and aligned [n, d] features into stacks of 3."""
    posteriors = np.asarray(track.posteriors, dtype=np.float64)
    decisions = np.asarray(track.decisions, dtype=np.int64)
    features = np.asarray(features)
    n = len(posteriors)
    if n == 0:
        raise EmptyInputError("cannot stack an empty track")
    if len(features) != n:
        raise ShapeError(f"features ({len(features)}) and track ({n}) lengths differ")

    stacks = []
    for start in range(0, n, STACK_SIZE):
        idx = tuple(min(start + j, n - 1) for j in range(STACK_SIZE))
        member_p = tuple(float(posteriors[i]) for i in idx)
        stacks.append(LfrStack(
            member_indices=idx,
            stacked_features=np.concatenate([features[i] for i in idx]),
            member_decisions=tuple(int(decisions[i]) for i in idx),
            member_posteriors=member_p,
            stack_posterior_mean=sum(member_p) / STACK_SIZE,
        ))
    return stacks


def vote_stacks(stacks, policy: VotePolicy) -> list[LfrStack]:
    return [
        replace(s, stack_decision=vote(s.member_decisions, s.member_posteriors, policy))
        for s in stacks
    ]


@dataclass(frozen=True)
class SweepEntry:
    policy: VotePolicy
    stream: "gate_mod.GatedStream"
    flagged_stack_rate: float


def sweep(track, features, policies=DEFAULT_POLICY_GRID) -> list[SweepEntry]:
    """Skip-gated stack streams for each policy, in the given order."""
    if not policies:
        raise EmptyInputError("no vote policies given")
    stacks = stack_frames(track, features)
    stacked = np.stack([s.stacked_features for s in stacks])
    means = np.array([s.stack_posterior_mean for s in stacks])
    entries = []
    for policy in policies:
        voted = vote_stacks(stacks, policy)
        decisions = np.array([s.stack_decision for s in voted], dtype=np.uint8)
        stream = gate_mod.gate(stacked, decisions, means, gate_mod.GateMode.SKIP)
        entries.append(SweepEntry(
            policy=policy,
            stream=stream,
            flagged_stack_rate=float(decisions.mean()),
        ))
    return entries
