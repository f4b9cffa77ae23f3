"""End-to-end experiments: simulate once, adapt under each policy, analyse.

Seeds are derived from the master seed with ``numpy.random.SeedSequence``:
replicate ``r`` uses ``SeedSequence([master_seed, r]).spawn(3)``, where
child 0 drives the simulation, child 1 the UniformRandom selections and
child 2 the SensitivityGuided selections.  Both policies therefore see the
same simulated outcomes but draw their removals independently.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, NoEvidenceError, SingularStatisticError
from .inference import (
    GridSpec,
    IntegrationDomain,
    OutcomeTransform,
    differential_posterior,
)
from .numerics import QuadratureSpec, make_rng
from .policy import (
    AnalysisConfig,
    Policy,
    RemovalPlanConfig,
    remove_sequentially,
    write_log_csv,
)
from .simulation import SimConfig, ground_truth_differential, simulate, write_trajectory_csv
from .trial import Arm, BeliefTier

POLICY_STREAM = {Policy.UniformRandom: 1, Policy.SensitivityGuided: 2}
SUBGROUP_COLUMNS = tuple(f"{a.name}/{t.name}" for a in Arm for t in BeliefTier)


def default_schedule(n_rem: int = 120, burn_in: int = 10, per_step: int = 1) -> tuple:
    """``per_step`` removals at every step after ``burn_in``."""
    if per_step < 1:
        raise ConfigError("must be >= 1", "schedule.per_step")
    sched, left, step = [], n_rem, burn_in
    while left > 0:
        step += 1
        c = min(per_step, left)
        sched.append((step, c))
        left -= c
    return tuple(sched)


@dataclass(frozen=True)
class ExperimentConfig:
    sim: SimConfig = SimConfig()
    removal: tuple = (RemovalPlanConfig(120, Policy.UniformRandom), RemovalPlanConfig(120, Policy.SensitivityGuided))
    analysis: AnalysisConfig = AnalysisConfig()
    schedule: tuple = default_schedule(120, 10, 1)
    replicates: int = 50
    master_seed: int = 0
    output_dir: str | None = None
    workers: int = 1
    require_full: bool = False

    def __post_init__(self):
        if self.replicates < 1:
            raise ConfigError("must be >= 1", "experiment.replicates")
        steps = [s for s, _ in self.schedule]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ConfigError("steps must be strictly increasing", "schedule")
        if any(s < 0 or c < 0 for s, c in self.schedule):
            raise ConfigError("steps and removal counts must be non-negative", "schedule")
        if steps and steps[-1] > self.sim.steps:
            raise ConfigError(f"last scheduled step {steps[-1]} exceeds sim.steps={self.sim.steps}", "schedule")
        total = sum(c for _, c in self.schedule)
        for plan in self.removal:
            if plan.n_rem != total:
                raise ConfigError(f"schedule removes {total} but {plan.policy.value} requests {plan.n_rem}",
                                  "removal.n_rem")
        if len({p.policy for p in self.removal}) != len(self.removal):
            raise ConfigError("each policy may appear once", "removal.policies")
        if self.workers < 1:
            raise ConfigError("must be >= 1", "experiment.workers")

    @property
    def n_rem(self) -> int:
        return sum(c for _, c in self.schedule)


def protocol_config(replicates: int = 50, master_seed: int = 0, **kw) -> ExperimentConfig:
    """180 participants, burn-in of 10 steps, then one removal per step until 120 are gone."""
    return ExperimentConfig(replicates=replicates, master_seed=master_seed, **kw)


@dataclass(frozen=True)
class ComparisonRow:
    replicate_seed: int
    removals_so_far: int
    policy: Policy
    step: int
    map_estimate: float
    posterior_std: float
    ground_truth: float

    @property
    def abs_error(self) -> float:
        return abs(self.map_estimate - self.ground_truth)


ROW_COLUMNS = ("replicate_seed", "removals_so_far", "policy", "step", "map_estimate", "posterior_std",
               "ground_truth", "abs_error")


@dataclass
class PolicyRun:
    policy: Policy
    rows: list
    log: list
    sizes: list  # (removals_so_far, step, 6 sub-group sizes)
    final_posterior: object
    exhausted: bool


@dataclass
class ReplicateResult:
    replicate: int
    runs: dict
    trajectory_sha256: str
    ground_truth: list


def replicate_seeds(master_seed: int, replicate: int):
    return np.random.SeedSequence([master_seed, replicate]).spawn(3)


def _sizes(snapshot):
    s = snapshot.subgroup_sizes()
    return tuple(s[(a, t)] for a in Arm for t in BeliefTier)


def _analyse(snapshot, analysis: AnalysisConfig):
    try:
        return differential_posterior(snapshot.pairs, analysis.transform, GridSpec())
    except (NoEvidenceError, SingularStatisticError):
        return None


def _row(rep, k, policy, snap, post):
    gt = ground_truth_differential(snap).differential
    if post is None:
        return ComparisonRow(rep, k, policy, snap.step, math.nan, math.nan, gt)
    return ComparisonRow(rep, k, policy, snap.step, post.map_estimate, post.std, gt)


def run_policy(sim_snapshots, plan: RemovalPlanConfig, schedule, analysis: AnalysisConfig, rng,
               replicate: int = 0) -> PolicyRun:
    """Replay the shared simulation while removing per ``schedule``.

    A comparison row is recorded at the last step before the first removal
    and after every single removal.
    """
    by_step = dict(schedule)
    first = schedule[0][0] if schedule else len(sim_snapshots)
    active = np.ones(len(sim_snapshots[0]), dtype=bool)
    rows, log, sizes = [], [], []
    removed = 0
    exhausted = False
    post = None
    snap = sim_snapshots[0]
    for k, base in enumerate(sim_snapshots):
        snap = base.replace(active=active)
        if k == first - 1 or (k == first == 0):
            post = _analyse(snap, analysis)
            rows.append(_row(replicate, 0, plan.policy, snap, post))
            sizes.append((0, k) + _sizes(snap))
        for _ in range(by_step.get(k, 0)):
            if exhausted:
                break
            run = remove_sequentially(snap, replace(plan, n_rem=1), rng, analysis, start_index=removed)
            if run.exhausted:
                exhausted = True
                break
            snap = run.snapshot
            log.extend(run.log)
            removed += 1
            post = _analyse(snap, analysis)
            rows.append(_row(replicate, removed, plan.policy, snap, post))
            sizes.append((removed, k) + _sizes(snap))
        active = np.array(snap.active)
    return PolicyRun(plan.policy, rows, log, sizes, post, exhausted)


def run_replicate(config: ExperimentConfig, replicate: int) -> ReplicateResult:
    seeds = replicate_seeds(config.master_seed, replicate)
    sim = simulate(config.sim, make_rng(seeds[0]))
    buf = io.StringIO()
    write_trajectory_csv(sim, buf)
    digest = hashlib.sha256(buf.getvalue().encode()).hexdigest()
    runs = {}
    for plan in config.removal:
        rng = make_rng(seeds[POLICY_STREAM[plan.policy]])
        runs[plan.policy] = run_policy(sim, plan, config.schedule, config.analysis, rng, replicate)
    gt = [(s.step, ground_truth_differential(s).differential) for s in sim]
    return ReplicateResult(replicate, runs, digest, gt)


def _run_one(args):
    config, rep = args
    return run_replicate(config, rep)


def run_replicates(config: ExperimentConfig) -> list:
    jobs = [(config, r) for r in range(config.replicates)]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    return sorted(results, key=lambda r: r.replicate)


# ---------------------------------------------------------------------------
# Metrics and summaries
# ---------------------------------------------------------------------------

def linear_r2(y) -> float:
    """R² of a least-squares line through ``y`` against its index.

    A constant series is fitted exactly and scores 1.
    """
    y = np.asarray(y, dtype=float)
    if y.size < 2 or np.ptp(y) == 0:
        return 1.0
    x = np.arange(y.size, dtype=float)
    coef = np.polyfit(x, y, 1)
    resid = y - np.polyval(coef, x)
    return float(1.0 - resid.var() / y.var())


def is_non_monotonic(y) -> bool:
    d = np.diff(np.asarray(y, dtype=float))
    return bool((d > 0).any() and (d < 0).any())


def _final_third(rows):
    n_max = max(r.removals_so_far for r in rows)
    return [r for r in rows if r.removals_so_far > 2 * n_max / 3]


def _win(a, b) -> float:
    """1 if a < b, 0.5 on a tie, else 0 (NaN loses)."""
    if math.isnan(a) and math.isnan(b):
        return 0.5
    if math.isnan(a):
        return 0.0
    if math.isnan(b):
        return 1.0
    return 1.0 if a < b else 0.5 if a == b else 0.0


def summarize(table, sizes=None) -> dict:
    """Aggregate comparison rows across replicates.

    Win-rates are for SensitivityGuided against UniformRandom on the mean
    posterior std and mean |MAP - truth| over the final third of removals.
    When the sub-group size table is given, linearity and monotonicity
    statistics of the trajectories are added.
    """
    by_rep = {}
    for r in table:
        by_rep.setdefault(r.replicate_seed, {}).setdefault(r.policy, []).append(r)
    per_rep = []
    sg, ur = Policy.SensitivityGuided, Policy.UniformRandom
    for rep in sorted(by_rep):
        runs = by_rep[rep]
        if sg not in runs or ur not in runs:
            continue
        rec = {"replicate_seed": rep}
        for pol in (sg, ur):
            rows = sorted(runs[pol], key=lambda r: r.removals_so_far)
            tail = _final_third(rows)
            last20 = [r for r in rows if r.removals_so_far > rows[-1].removals_so_far - 20]
            rec[pol.value] = {
                "final_std": rows[-1].posterior_std,
                "final_third_std": float(np.nanmean([r.posterior_std for r in tail])) if tail else math.nan,
                "final_third_abs_error": float(np.nanmean([r.abs_error for r in tail])) if tail else math.nan,
                "last20_error_var": float(np.nanvar([r.map_estimate - r.ground_truth for r in last20])),
            }
        a, b = rec[sg.value], rec[ur.value]
        rec["win_std"] = _win(a["final_third_std"], b["final_third_std"])
        rec["win_abs_error"] = _win(a["final_third_abs_error"], b["final_third_abs_error"])
        rec["final_std_le"] = bool(a["final_std"] <= b["final_std"])
        rec["error_var_ur_gt_sg"] = bool(b["last20_error_var"] > a["last20_error_var"])
        per_rep.append(rec)
    n = len(per_rep)
    frac = lambda key: float(np.mean([r[key] for r in per_rep])) if n else math.nan
    report = {
        "replicates": n,
        "win_rate_posterior_std": frac("win_std"),
        "win_rate_abs_error": frac("win_abs_error"),
        "frac_final_std_sg_le_ur": frac("final_std_le"),
        "frac_error_var_ur_gt_sg": frac("error_var_ur_gt_sg"),
        "per_replicate": per_rep,
    }
    if sizes is not None:
        report["subgroups"] = summarize_sizes(sizes)
    return report


def summarize_sizes(sizes) -> dict:
    """Per-policy linear-fit R² and non-monotonicity of sub-group trajectories.

    ``sizes`` rows are ``(replicate_seed, policy, removals_so_far, step, *six sizes)``.
    """
    series = {}
    for row in sizes:
        series.setdefault((row[1], row[0]), []).append(row)
    out = {}
    for pol in Policy:
        r2s, nonmono = [], []
        for (p, rep), rows in sorted(series.items(), key=lambda kv: (kv[0][0].value, kv[0][1])):
            if p is not pol:
                continue
            arr = np.array([r[4:] for r in sorted(rows, key=lambda r: r[2])], dtype=float)
            r2s.append([linear_r2(arr[:, j]) for j in range(arr.shape[1])])
            nonmono.append(any(is_non_monotonic(arr[:, j]) for j in range(arr.shape[1])))
        if not r2s:
            continue
        r2s = np.array(r2s)
        out[pol.value] = {
            "mean_r2": float(r2s.mean()),
            "mean_r2_by_subgroup": dict(zip(SUBGROUP_COLUMNS, map(float, r2s.mean(axis=0)))),
            "frac_non_monotonic": float(np.mean(nonmono)),
        }
    return out


# ---------------------------------------------------------------------------
# Running and writing artifacts
# ---------------------------------------------------------------------------

@dataclass
class ExperimentResult:
    config: ExperimentConfig
    replicates: list
    table: list
    sizes: list
    report: dict
    exhausted: bool


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, Policy):
        return v.value
    return str(v)


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Run every replicate and, if ``output_dir`` is set, write all tables.

    Files: ``comparison.csv``, ``removals.csv``, ``subgroup_sizes.csv``,
    ``ground_truth.csv``, ``checksums.csv``, ``report.json`` and
    ``posteriors/<policy>_r<seed>.csv`` with a JSON sidecar.
    """
    results = run_replicates(config)
    table, sizes = [], []
    exhausted = False
    for res in results:
        for pol in sorted(res.runs, key=lambda p: p.value):
            run = res.runs[pol]
            table.extend(run.rows)
            sizes.extend((res.replicate, pol) + s for s in run.sizes)
            exhausted |= run.exhausted
    report = summarize(table, sizes)
    report["any_exhausted"] = exhausted
    result = ExperimentResult(config, results, table, sizes, report, exhausted)
    if config.output_dir is not None:
        write_artifacts(result, Path(config.output_dir))
    return result


def write_artifacts(result: ExperimentResult, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    rows = [(r.replicate_seed, r.removals_so_far, r.policy, r.step, r.map_estimate, r.posterior_std,
             r.ground_truth, r.abs_error) for r in result.table]
    _write_rows(out / "comparison.csv", ROW_COLUMNS, rows)
    _write_rows(out / "subgroup_sizes.csv",
                ("replicate_seed", "policy", "removals_so_far", "step") + SUBGROUP_COLUMNS, result.sizes)
    with open(out / "removals.csv", "w", newline="") as fh:
        header_done = False
        for res in result.replicates:
            for pol in sorted(res.runs, key=lambda p: p.value):
                buf = io.StringIO()
                write_log_csv(res.runs[pol].log, buf, extra=("replicate_seed", res.replicate))
                lines = buf.getvalue().splitlines(keepends=True)
                fh.writelines(lines if not header_done else lines[1:])
                header_done = True
        if not header_done:
            write_log_csv([], fh, extra=("replicate_seed", 0))
    _write_rows(out / "ground_truth.csv", ("replicate_seed", "k", "differential"),
                [(res.replicate, k, d) for res in result.replicates for k, d in res.ground_truth])
    _write_rows(out / "checksums.csv", ("replicate_seed", "policy", "trajectory_sha256"),
                [(res.replicate, pol, res.trajectory_sha256)
                 for res in result.replicates for pol in sorted(res.runs, key=lambda p: p.value)])
    post_dir = out / "posteriors"
    post_dir.mkdir(exist_ok=True)
    for res in result.replicates:
        for pol, run in sorted(res.runs.items(), key=lambda kv: kv[0].value):
            if run.final_posterior is not None:
                stem = post_dir / f"{pol.value}_r{res.replicate}"
                run.final_posterior.write(f"{stem}.csv", f"{stem}.json")
    with open(out / "report.json", "w") as fh:
        json.dump(result.report, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, Policy):
        return o.value
    raise TypeError(type(o))


def read_comparison_csv(path) -> list:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(ComparisonRow(int(rec["replicate_seed"]), int(rec["removals_so_far"]),
                                      Policy(rec["policy"]), int(rec["step"]), float(rec["map_estimate"]),
                                      float(rec["posterior_std"]), float(rec["ground_truth"])))
    return rows


def read_sizes_csv(path) -> list:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append((int(rec["replicate_seed"]), Policy(rec["policy"]), int(rec["removals_so_far"]),
                         int(rec["step"])) + tuple(int(rec[c]) for c in SUBGROUP_COLUMNS))
    return rows


# ---------------------------------------------------------------------------
# Config files
# ---------------------------------------------------------------------------

_SIM_FLOATS = ("decay_scale", "belief_coupling", "belief_noise_sd")
_SIM_INTS = ("n_per_arm", "steps", "questionnaire_every", "seed")


def _floats(text, field_name, n=None):
    try:
        vals = tuple(float(v) for v in text.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"expected numbers, got {text!r}", field_name) from exc
    if n is not None and len(vals) != n:
        raise ConfigError(f"expected {n} numbers", field_name)
    return vals


def _get(section, key, conv, field_name):
    try:
        return conv(section[key])
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"invalid value {section.get(key)!r}", field_name) from exc


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(text)


def parse_config(text: str) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from INI-style ``key = value`` text.

    Sections are ``[sim]``, ``[removal]``, ``[analysis]``, ``[schedule]`` and
    ``[experiment]``; keys mirror the dataclass field names.  See the README
    for the full list.  Anything omitted takes the 180-participant,
    120-removal defaults.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    known = {
        "sim": set(_SIM_FLOATS + _SIM_INTS + ("effect_noise_t", "effect_noise_c", "init_beliefs")),
        "removal": {"n_rem", "policies"},
        "analysis": {"transform", "domain", "abs_tol", "rel_tol", "max_subdivisions"},
        "schedule": {"burn_in", "per_step", "steps"},
        "experiment": {"replicates", "master_seed", "output_dir", "workers", "require_full"},
    }
    for sec in cp.sections():
        if sec not in known:
            raise ConfigError("unknown section", sec)
        for key in cp[sec]:
            if key not in known[sec]:
                raise ConfigError("unknown key", f"{sec}.{key}")
    sim_s = cp["sim"] if cp.has_section("sim") else {}
    rem_s = cp["removal"] if cp.has_section("removal") else {}
    ana_s = cp["analysis"] if cp.has_section("analysis") else {}
    sch_s = cp["schedule"] if cp.has_section("schedule") else {}
    exp_s = cp["experiment"] if cp.has_section("experiment") else {}

    n_rem = _get(rem_s, "n_rem", int, "removal.n_rem") if "n_rem" in rem_s else 120
    if "steps" in sch_s:
        sched = []
        for item in sch_s["steps"].replace(",", " ").split():
            try:
                s, c = item.split(":")
                sched.append((int(s), int(c)))
            except ValueError as exc:
                raise ConfigError(f"expected step:count, got {item!r}", "schedule.steps") from exc
        sched = tuple(sched)
    burn = _get(sch_s, "burn_in", int, "schedule.burn_in") if "burn_in" in sch_s else 10
    if "steps" not in sch_s:
        per = _get(sch_s, "per_step", int, "schedule.per_step") if "per_step" in sch_s else 1
        sched = default_schedule(n_rem, burn, per)

    sim_kw = {}
    for k in _SIM_INTS:
        if k in sim_s:
            sim_kw[k] = _get(sim_s, k, int, f"sim.{k}")
    for k in _SIM_FLOATS:
        if k in sim_s:
            sim_kw[k] = _get(sim_s, k, float, f"sim.{k}")
    for k in ("effect_noise_t", "effect_noise_c"):
        if k in sim_s:
            sim_kw[k] = _floats(sim_s[k], f"sim.{k}", 2)
    if "init_beliefs" in sim_s:
        sim_kw["init_beliefs"] = _floats(sim_s["init_beliefs"], "sim.init_beliefs")
    sim_kw.setdefault("steps", sched[-1][0] if sched else burn)
    sim = SimConfig(**sim_kw)

    if "policies" in rem_s:
        try:
            policies = [Policy(p.strip()) for p in rem_s["policies"].split(",") if p.strip()]
        except ValueError as exc:
            raise ConfigError(str(exc), "removal.policies") from exc
    else:
        policies = [Policy.UniformRandom, Policy.SensitivityGuided]
    removal = tuple(RemovalPlanConfig(n_rem, p) for p in policies)

    try:
        transform = OutcomeTransform(ana_s.get("transform", "identity").strip().lower())
    except ValueError as exc:
        raise ConfigError(str(exc), "analysis.transform") from exc
    try:
        domain = IntegrationDomain(ana_s.get("domain", "full").strip().lower())
    except ValueError as exc:
        raise ConfigError(str(exc), "analysis.domain") from exc
    quad = QuadratureSpec(
        abs_tol=_get(ana_s, "abs_tol", float, "analysis.abs_tol") if "abs_tol" in ana_s else 1e-8,
        rel_tol=_get(ana_s, "rel_tol", float, "analysis.rel_tol") if "rel_tol" in ana_s else 1e-6,
        max_subdivisions=(_get(ana_s, "max_subdivisions", int, "analysis.max_subdivisions")
                          if "max_subdivisions" in ana_s else 200),
    )
    return ExperimentConfig(
        sim=sim,
        removal=removal,
        analysis=AnalysisConfig(transform, domain, quad),
        schedule=sched,
        replicates=_get(exp_s, "replicates", int, "experiment.replicates") if "replicates" in exp_s else 50,
        master_seed=_get(exp_s, "master_seed", int, "experiment.master_seed") if "master_seed" in exp_s else 0,
        output_dir=exp_s.get("output_dir") if "output_dir" in exp_s else None,
        workers=_get(exp_s, "workers", int, "experiment.workers") if "workers" in exp_s else 1,
        require_full=_get(exp_s, "require_full", _bool, "experiment.require_full") if "require_full" in exp_s else False,
    )


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    return parse_config(text)
