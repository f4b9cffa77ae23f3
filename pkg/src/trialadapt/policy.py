"""Sequential participant removal: sensitivity-guided and uniform-random.

The guided policy re-ranks sub-groups after every single removal and then
drops a uniformly chosen member of the top-ranked sub-group.  The baseline
drops a uniformly chosen active participant.  Both respect the same floor:
at least one matched pair must stay analysable.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass

import numpy as np

from .errors import AccuracyError, AdaptationExhausted, ConfigError
from .inference import MIN_INFERENCE_SIZE, IntegrationDomain, OutcomeTransform
from .numerics import QuadratureSpec, make_rng, sample_uniform_choice
from .sensitivity import rank_candidates
from .trial import Arm, BeliefTier, TrialSnapshot, remove_participant


class Policy(enum.Enum):
    SensitivityGuided = "SensitivityGuided"
    UniformRandom = "UniformRandom"


@dataclass(frozen=True)
class RemovalEvent:
    order_index: int
    participant_id: int
    arm: Arm
    tier: BeliefTier
    policy: Policy
    step: int


@dataclass(frozen=True)
class RemovalPlanConfig:
    n_rem: int = 0
    policy: Policy = Policy.SensitivityGuided
    seed: int = 0

    def __post_init__(self):
        if self.n_rem < 0:
            raise ConfigError("must be >= 0", "removal.n_rem")


@dataclass(frozen=True)
class AnalysisConfig:
    transform: OutcomeTransform = OutcomeTransform.Identity
    domain: IntegrationDomain = IntegrationDomain.FullLine
    quad: QuadratureSpec = QuadratureSpec()


@dataclass(frozen=True)
class RemovalRun:
    """Outcome of :func:`remove_sequentially`; unpacks as ``snapshot, log``."""

    snapshot: TrialSnapshot
    log: tuple
    exhausted: bool = False

    def __iter__(self):
        yield self.snapshot
        yield self.log


def _analyzable_mask(sizes):
    return sizes.min(axis=0) >= MIN_INFERENCE_SIZE


def eligible_for_random_removal(snapshot: TrialSnapshot) -> np.ndarray:
    """Ids of active participants whose removal leaves an analysable pair."""
    active = snapshot.active
    sizes = np.zeros((2, 3), dtype=int)
    np.add.at(sizes, (snapshot.arm[active], snapshot.tier[active]), 1)
    ok_pairs = _analyzable_mask(sizes)
    if ok_pairs.sum() == 0:
        return np.empty(0, dtype=np.int64)
    eligible = active.copy()
    if ok_pairs.sum() == 1:
        t = int(np.flatnonzero(ok_pairs)[0])
        for a in (0, 1):
            if sizes[a, t] == MIN_INFERENCE_SIZE:
                eligible &= ~((snapshot.arm == a) & (snapshot.tier == t))
    ids = snapshot.ids[eligible]
    return np.sort(ids)


def uniform_random_candidate(snapshot: TrialSnapshot, rng) -> int:
    ids = eligible_for_random_removal(snapshot)
    if ids.size == 0:
        raise AdaptationExhausted("no participant can be removed without losing the last analysable pair")
    return int(sample_uniform_choice(rng, ids))


def guided_candidate(snapshot: TrialSnapshot, rng, analysis: AnalysisConfig = AnalysisConfig()):
    """Pick a member of the least sensitive sub-group; returns (id, report)."""
    report = rank_candidates(snapshot, analysis.transform, analysis.quad, analysis.domain)
    head = report.head
    if not head.converged:
        raise AccuracyError(f"sensitivity of {head.arm.name}/{head.tier.name} did not converge")
    pair = snapshot.pairs[int(head.tier)]
    ids = pair.side(head.arm).ids
    return int(sample_uniform_choice(rng, ids)), report


def remove_sequentially(snapshot: TrialSnapshot, config: RemovalPlanConfig, rng=None,
                        analysis: AnalysisConfig = AnalysisConfig(), start_index: int = 0) -> RemovalRun:
    """Remove ``config.n_rem`` participants one at a time.

    Stops early, with ``exhausted=True``, when no eligible participant is
    left.  ``rng`` defaults to a generator seeded from ``config.seed``; pass a
    shared generator to continue one selection stream across calls.
    """
    rng = make_rng(config.seed) if rng is None else rng
    log = []
    snap = snapshot
    for i in range(config.n_rem):
        try:
            if config.policy is Policy.SensitivityGuided:
                pid, _ = guided_candidate(snap, rng, analysis)
            else:
                pid = uniform_random_candidate(snap, rng)
        except AdaptationExhausted:
            return RemovalRun(snap, tuple(log), True)
        idx = snap.index_of(pid)
        log.append(RemovalEvent(start_index + i, pid, Arm(int(snap.arm[idx])), BeliefTier(int(snap.tier[idx])),
                                config.policy, snap.step))
        snap = remove_participant(snap, pid)
    return RemovalRun(snap, tuple(log), False)


def apply_log(snapshot: TrialSnapshot, log) -> TrialSnapshot:
    """Replay removal events onto a snapshot."""
    for ev in log:
        snapshot = remove_participant(snapshot, ev.participant_id)
    return snapshot


LOG_COLUMNS = ("order_index", "step", "policy", "participant_id", "arm", "tier")


def write_log_csv(log, fh, extra=None) -> None:
    """Write removal events; ``extra`` is an optional leading (name, value) column."""
    w = csv.writer(fh, lineterminator="\n")
    head = ([extra[0]] if extra else []) + list(LOG_COLUMNS)
    w.writerow(head)
    for ev in log:
        row = [ev.order_index, ev.step, ev.policy.value, ev.participant_id, ev.arm.name, ev.tier.name]
        w.writerow(([extra[1]] if extra else []) + row)
