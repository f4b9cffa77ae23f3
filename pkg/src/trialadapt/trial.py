"""Two-arm blinded trial model and its stratification into matched sub-groups.

Participants are grouped by (arm, questionnaire tier).  Each tier yields one
:class:`MatchedPair` holding the control and treatment sub-groups that gave
the same questionnaire answer, so outcomes are only ever compared like for
like.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import IntegrityError, InvalidInputError, NotFoundError

CSV_COLUMNS = ("id", "arm", "belief", "effect", "tier", "active")

#: Questionnaire thresholds: beliefs strictly outside [-1, 1] are decided.
UNCERTAIN_BAND = (-1.0, 1.0)


class Arm(enum.IntEnum):
    Control = 0
    Treatment = 1


class BeliefTier(enum.IntEnum):
    BelievesControl = 0
    Uncertain = 1
    BelievesTreatment = 2


def threshold_response(belief: float) -> BeliefTier:
    """Map a latent belief to the 3-choice questionnaire answer.

    The uncertain band is closed, so beliefs of exactly -1 and 1 answer
    "don't know".
    """
    b = float(belief)
    if not math.isfinite(b):
        raise InvalidInputError(f"belief must be finite, got {belief!r}")
    lo, hi = UNCERTAIN_BAND
    if b < lo:
        return BeliefTier.BelievesControl
    if b > hi:
        return BeliefTier.BelievesTreatment
    return BeliefTier.Uncertain


def threshold_responses(beliefs: np.ndarray) -> np.ndarray:
    """Vectorised :func:`threshold_response`; returns integer tier codes."""
    b = np.asarray(beliefs, dtype=float)
    if not np.all(np.isfinite(b)):
        raise InvalidInputError("beliefs must be finite")
    lo, hi = UNCERTAIN_BAND
    tiers = np.full(b.shape, int(BeliefTier.Uncertain), dtype=np.int8)
    tiers[b < lo] = BeliefTier.BelievesControl
    tiers[b > hi] = BeliefTier.BelievesTreatment
    return tiers


@dataclass(frozen=True)
class ParticipantRecord:
    id: int
    arm: Arm
    belief: float
    effect: float
    tier: BeliefTier
    active: bool = True


@dataclass(frozen=True)
class SubGroupData:
    """Outcomes of the active members of one (arm, tier) cell."""

    arm: Arm
    tier: BeliefTier
    outcomes: np.ndarray
    ids: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    @property
    def n(self) -> int:
        return int(self.outcomes.size)

    @property
    def label(self) -> str:
        return f"{self.arm.name}/{self.tier.name}"

    @classmethod
    def from_outcomes(cls, arm, tier, outcomes, ids=None):
        x = np.asarray(outcomes, dtype=float).ravel()
        if ids is None:
            ids = np.arange(x.size, dtype=np.int64)
        return cls(Arm(arm), BeliefTier(tier), x, np.asarray(ids, dtype=np.int64))


@dataclass(frozen=True)
class MatchedPair:
    tier: BeliefTier
    control: SubGroupData
    treatment: SubGroupData

    def __post_init__(self):
        if self.control.arm != Arm.Control or self.treatment.arm != Arm.Treatment:
            raise InvalidInputError("matched pair sides have the wrong arms")
        if not (self.control.tier == self.treatment.tier == self.tier):
            raise InvalidInputError("matched pair sides disagree on the tier")

    def side(self, arm: Arm) -> SubGroupData:
        return self.control if arm == Arm.Control else self.treatment

    def other(self, arm: Arm) -> SubGroupData:
        return self.treatment if arm == Arm.Control else self.control

    def with_side(self, arm: Arm, data: SubGroupData) -> "MatchedPair":
        if arm == Arm.Control:
            return MatchedPair(self.tier, data, self.treatment)
        return MatchedPair(self.tier, self.control, data)

    @classmethod
    def from_outcomes(cls, control, treatment, tier=BeliefTier.Uncertain):
        tier = BeliefTier(tier)
        return cls(
            tier,
            SubGroupData.from_outcomes(Arm.Control, tier, control),
            SubGroupData.from_outcomes(Arm.Treatment, tier, treatment),
        )


def _readonly(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class TrialSnapshot:
    """Immutable state of the trial at discrete time ``step``.

    Per-participant columns are stored as parallel read-only arrays; every
    operation returns a new snapshot.
    """

    step: int
    ids: np.ndarray
    arm: np.ndarray
    belief: np.ndarray
    effect: np.ndarray
    tier: np.ndarray
    active: np.ndarray

    def __post_init__(self):
        n = self.ids.size
        for name in ("arm", "belief", "effect", "tier", "active"):
            if getattr(self, name).shape != (n,):
                raise InvalidInputError(f"column {name!r} has wrong length")
        if np.unique(self.ids).size != n:
            raise IntegrityError("duplicate participant ids")

    @classmethod
    def from_arrays(cls, step, ids, arm, belief, effect, tier=None, active=None):
        belief = np.asarray(belief, dtype=float)
        if tier is None:
            tier = threshold_responses(belief)
        if active is None:
            active = np.ones(belief.shape, dtype=bool)
        return cls(
            int(step),
            _readonly(ids, np.int64),
            _readonly(arm, np.int8),
            _readonly(belief, float),
            _readonly(effect, float),
            _readonly(tier, np.int8),
            _readonly(active, bool),
        )

    @classmethod
    def from_records(cls, records: Iterable[ParticipantRecord], step: int = 0):
        records = list(records)
        return cls.from_arrays(
            step,
            [r.id for r in records],
            [int(r.arm) for r in records],
            [r.belief for r in records],
            [r.effect for r in records],
            [int(r.tier) for r in records],
            [bool(r.active) for r in records],
        )

    def replace(self, **changes) -> "TrialSnapshot":
        cols = {k: getattr(self, k) for k in ("step", "ids", "arm", "belief", "effect", "tier", "active")}
        cols.update(changes)
        return TrialSnapshot.from_arrays(**cols)

    @property
    def participants(self) -> tuple:
        return tuple(
            ParticipantRecord(int(i), Arm(a), float(b), float(e), BeliefTier(t), bool(act))
            for i, a, b, e, t, act in zip(self.ids, self.arm, self.belief, self.effect, self.tier, self.active)
        )

    def __len__(self):
        return int(self.ids.size)

    @property
    def active_count(self) -> int:
        return int(self.active.sum())

    def index_of(self, pid: int) -> int:
        idx = np.flatnonzero(self.ids == pid)
        if idx.size == 0:
            raise NotFoundError(f"unknown participant id {pid}")
        return int(idx[0])

    def administer_questionnaire(self) -> "TrialSnapshot":
        """Re-derive every participant's tier from their current belief."""
        return self.replace(tier=threshold_responses(self.belief))

    @cached_property
    def pairs(self) -> tuple:
        return stratify(self)

    def subgroup_sizes(self) -> dict:
        """Active counts keyed by (Arm, BeliefTier)."""
        return {(p.side(a).arm, p.tier): p.side(a).n for p in self.pairs for a in Arm}


def stratify(participants) -> tuple:
    """Split active participants into the three matched pairs, ordered by tier.

    Accepts a :class:`TrialSnapshot` or an iterable of
    :class:`ParticipantRecord`.  Within a sub-group, members are ordered by id
    so the result does not depend on input order.
    """
    snap = participants if isinstance(participants, TrialSnapshot) else TrialSnapshot.from_records(participants)
    order = np.argsort(snap.ids, kind="stable")
    ids, arm, tier, effect, active = (c[order] for c in (snap.ids, snap.arm, snap.tier, snap.effect, snap.active))
    pairs = []
    for t in BeliefTier:
        sides = []
        for a in Arm:
            mask = active & (arm == a) & (tier == t)
            sides.append(SubGroupData(a, t, effect[mask], ids[mask]))
        pairs.append(MatchedPair(t, sides[0], sides[1]))
    return tuple(pairs)


def remove_participant(snapshot: TrialSnapshot, pid: int) -> TrialSnapshot:
    """Deactivate one participant; the record is kept for bookkeeping."""
    idx = snapshot.index_of(pid)
    if not snapshot.active[idx]:
        raise NotFoundError(f"participant {pid} is already inactive")
    active = snapshot.active.copy()
    active[idx] = False
    return snapshot.replace(active=active)


def write_snapshot_csv(snapshot: TrialSnapshot, fh) -> None:
    """Write one row per participant: id, arm, belief, effect, tier, active."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in snapshot.participants:
        w.writerow([r.id, r.arm.name, repr(r.belief), repr(r.effect), r.tier.name, int(r.active)])


def read_snapshot_csv(fh, step: int = 0) -> TrialSnapshot:
    rows = csv.DictReader(fh)
    if rows.fieldnames is None or tuple(rows.fieldnames) != CSV_COLUMNS:
        raise InvalidInputError(f"expected header {','.join(CSV_COLUMNS)}, got {rows.fieldnames}")
    records = []
    for row in rows:
        try:
            records.append(
                ParticipantRecord(
                    int(row["id"]),
                    Arm[row["arm"]],
                    float(row["belief"]),
                    float(row["effect"]),
                    BeliefTier[row["tier"]],
                    row["active"].strip().lower() in ("1", "true"),
                )
            )
        except (KeyError, ValueError) as exc:
            raise InvalidInputError(f"bad snapshot row {row}: {exc}") from exc
    return TrialSnapshot.from_records(records, step=step)


def pair_sizes(pairs: Sequence[MatchedPair]) -> list:
    """[(n_control, n_treatment), ...] in tier order."""
    return [(p.control.n, p.treatment.n) for p in pairs]
