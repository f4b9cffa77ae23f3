"""Synthetic two-arm trial with accumulating effects and drifting beliefs.

At every step ``k -> k+1`` each participant's outcome gains
``w * exp(-(k+1)/decay_scale)`` with ``w`` drawn from the arm's effect-noise
normal, and their belief moves by ``belief_coupling * effect + omega``.
Noise parameters are (mean, standard deviation) pairs.  Removed participants
keep evolving, so the ground truth never depends on which ones were removed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .numerics import make_rng, sample_normal
from .trial import Arm, BeliefTier, TrialSnapshot


def default_init_beliefs(n_per_arm: int = 90) -> tuple:
    """Nine sceptics at -1, nine optimists at +1 and the rest undecided (scaled to n)."""
    n_edge = round(n_per_arm * 9 / 90)
    return tuple([-1.0] * n_edge + [0.0] * (n_per_arm - 2 * n_edge) + [1.0] * n_edge)


@dataclass(frozen=True)
class SimConfig:
    n_per_arm: int = 90
    steps: int = 130
    effect_noise_t: tuple = (0.02, 0.05)
    effect_noise_c: tuple = (0.0, 0.05)
    decay_scale: float = 10.0
    belief_coupling: float = 0.01
    belief_noise_sd: float = 0.005
    init_beliefs: tuple | None = None
    questionnaire_every: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_per_arm < 1:
            raise ConfigError("must be >= 1", "sim.n_per_arm")
        if self.steps < 0:
            raise ConfigError("must be >= 0", "sim.steps")
        for name in ("effect_noise_t", "effect_noise_c"):
            pair = getattr(self, name)
            if len(pair) != 2 or pair[1] < 0:
                raise ConfigError("expected (mean, sd) with sd >= 0", f"sim.{name}")
        if self.belief_noise_sd < 0:
            raise ConfigError("must be >= 0", "sim.belief_noise_sd")
        if self.decay_scale <= 0:
            raise ConfigError("must be > 0", "sim.decay_scale")
        if self.questionnaire_every < 1:
            raise ConfigError("must be >= 1", "sim.questionnaire_every")
        if self.init_beliefs is not None and len(self.init_beliefs) != self.n_per_arm:
            raise ConfigError("length must equal n_per_arm", "sim.init_beliefs")

    @property
    def beliefs(self) -> tuple:
        return tuple(self.init_beliefs) if self.init_beliefs is not None else default_init_beliefs(self.n_per_arm)


@dataclass(frozen=True)
class GroundTruth:
    step: int
    differential: float
    prob_better: float = math.nan


def init_trial(config: SimConfig) -> TrialSnapshot:
    """All effects zero; both arms share the same initial belief vector.

    Control participants get ids ``0..n-1``, treatment ``n..2n-1``.
    """
    n = config.n_per_arm
    b = np.asarray(config.beliefs, dtype=float)
    return TrialSnapshot.from_arrays(
        step=0,
        ids=np.arange(2 * n),
        arm=np.repeat([int(Arm.Control), int(Arm.Treatment)], n),
        belief=np.concatenate([b, b]),
        effect=np.zeros(2 * n),
    )


def _arm_noise(snapshot, rng, control, treatment):
    treat = snapshot.arm == Arm.Treatment
    mean = np.where(treat, treatment[0], control[0])
    sd = np.where(treat, treatment[1], control[1])
    z = rng.standard_normal(len(snapshot))
    return mean + sd * z


def step_effects(snapshot: TrialSnapshot, config: SimConfig, rng) -> TrialSnapshot:
    """Advance time by one step and accumulate each participant's effect."""
    k1 = snapshot.step + 1
    w = _arm_noise(snapshot, rng, config.effect_noise_c, config.effect_noise_t)
    effect = snapshot.effect + w * math.exp(-k1 / config.decay_scale)
    return snapshot.replace(step=k1, effect=effect)


def step_beliefs(snapshot: TrialSnapshot, config: SimConfig, rng) -> TrialSnapshot:
    """Nudge beliefs by the current effect plus noise; tiers are left alone."""
    omega = sample_normal(rng, 0.0, config.belief_noise_sd, size=len(snapshot))
    return snapshot.replace(belief=snapshot.belief + config.belief_coupling * snapshot.effect + omega)


def advance(snapshot: TrialSnapshot, config: SimConfig, rng) -> TrialSnapshot:
    """One full step; the questionnaire is re-administered every ``questionnaire_every`` steps."""
    snap = step_beliefs(step_effects(snapshot, config, rng), config, rng)
    if snap.step % config.questionnaire_every == 0:
        snap = snap.administer_questionnaire()
    return snap


def simulate(config: SimConfig, rng=None) -> list:
    """Snapshots for steps ``0..config.steps`` with every participant active."""
    rng = make_rng(config.seed) if rng is None else rng
    snaps = [init_trial(config)]
    for _ in range(config.steps):
        snaps.append(advance(snaps[-1], config, rng))
    return snaps


def ground_truth_differential(snapshot: TrialSnapshot) -> GroundTruth:
    """Arm-mean effect difference over all participants, removed ones included.

    ``prob_better`` is the share of (treated, control) participant pairs in
    which the treated participant has the larger effect, ties counting half.
    """
    treat = snapshot.arm == Arm.Treatment
    et, ec = snapshot.effect[treat], snapshot.effect[~treat]
    if et.size == 0 or ec.size == 0:
        return GroundTruth(snapshot.step, math.nan)
    ec_sorted = np.sort(ec)
    below = np.searchsorted(ec_sorted, et, side="left")
    ties = np.searchsorted(ec_sorted, et, side="right") - below
    prob = float((below + 0.5 * ties).sum() / (et.size * ec.size))
    return GroundTruth(snapshot.step, float(et.mean() - ec.mean()), prob)


def write_trajectory_csv(snapshots, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["k", "participant_id", "arm", "belief", "effect", "tier", "active"])
    for s in snapshots:
        for i, a, b, e, t, act in zip(s.ids, s.arm, s.belief, s.effect, s.tier, s.active):
            w.writerow([s.step, int(i), Arm(a).name, repr(float(b)), repr(float(e)), BeliefTier(t).name, int(act)])


def write_ground_truth_csv(snapshots, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["k", "differential"])
    for s in snapshots:
        w.writerow([s.step, repr(ground_truth_differential(s).differential)])
