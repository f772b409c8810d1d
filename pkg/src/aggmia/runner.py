"""Experiment orchestration.

A JSON spec (versioned schema) names one or more panels (generated or
loaded from file) and a list of runs. Every run sweeps group sizes,
inference-window labels, and optional perturbation mechanisms for a set
of target users, producing one ResultRow per (target, classifier,
configuration, repetition) plus a synthetic "BEST" classifier row that
takes the highest AUC per cell.

Named inference windows are evaluated inside the first week after the
observation period (or the first panel week when there is none):

  week        the whole week
  day(d)      the 24 hours of weekday index d (0 = Monday)
  8h(d)       eight hours of weekday d starting 08:00
  8h(d,h)     eight hours of weekday d starting at hour h

Rows carry pg relative to the unperturbed row of the same cell and
classifier. wall_time stays 0.0 unless the spec sets record_timings,
so reruns stay byte-identical.
"""

from __future__ import annotations

import csv
import json
import os
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .classifiers import train_knn, train_lr, train_mlp, train_rf
from .core import AggregateSeries, Window, load_panel, sensitivity
from .dp import MECHANISM_KINDS, MechanismConfig
from .features import extract, rfe, standardize
from .game import (
    DifferentGroupsPrior,
    ExperimentDataset,
    GameConfig,
    LabeledSample,
    PerfectKnowledgePrior,
    SameGroupsPrior,
    SubsetLocationsPrior,
    build_diff_groups_prior,
    build_perfect_prior,
    build_same_groups_prior,
    build_subset_prior,
    perturb_dataset,
    play_game,
)
from .metrics import mre, privacy_gain
from .seeds import derive_seed
from .synthgen import GeneratorConfig, generate_panel, sample_targets, tier_users

__all__ = [
    "RunnerError",
    "ResultRow",
    "RunResult",
    "RESULT_FIELDS",
    "load_spec",
    "window_for_label",
    "fit_classifiers",
    "run",
    "export_csv",
    "export_json",
    "load_rows",
    "cdf_points",
    "box_stats",
    "pg_series",
    "emit_plots",
]

CLASSIFIER_KINDS = ("LR", "KNN", "RF", "MLP")
PRIOR_KINDS = (
    "subset-locations",
    "same-groups",
    "different-groups",
    "perfect-knowledge",
)


class RunnerError(ValueError):
    pass


@dataclass(frozen=True)
class ResultRow:
    experiment: str
    target: int
    tier: int
    classifier: str
    m: int
    ti_slots: int
    window: str
    prior: str
    mechanism: str
    epsilon: float
    adversary: str
    auc: float
    pl: float
    pg: float
    mre: float
    wall_time: float

    def __post_init__(self):
        for name in ("epsilon", "auc", "pl", "pg", "mre", "wall_time"):
            if not np.isfinite(getattr(self, name)):
                raise RunnerError(f"non-finite {name} in result row")

    def to_record(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def sort_key(self):
        return tuple(getattr(self, f.name) for f in fields(self))


RESULT_FIELDS = tuple(f.name for f in fields(ResultRow))

_INT_FIELDS = {"target", "tier", "m", "ti_slots"}
_FLOAT_FIELDS = {"epsilon", "auc", "pl", "pg", "mre", "wall_time"}


@dataclass(frozen=True)
class RunResult:
    rows: tuple
    errors: tuple
    paths: dict


# --- spec handling -----------------------------------------------------------

def load_spec(source) -> dict:
    """Read and validate a v1 experiment spec (path, JSON text, or dict)."""
    if isinstance(source, dict):
        spec = source
    else:
        text = Path(source).read_text() if os.path.exists(str(source)) else str(source)
        spec = json.loads(text)
    if spec.get("format") != "aggmia-spec" or spec.get("version") != 1:
        raise RunnerError("spec must declare format aggmia-spec version 1")
    for key in ("id", "seed", "panels", "runs"):
        if key not in spec:
            raise RunnerError(f"spec is missing '{key}'")
    if not spec["panels"]:
        raise RunnerError("spec declares no panels")
    if not spec["runs"]:
        raise RunnerError("spec declares no runs")
    for i, entry in enumerate(spec["runs"]):
        _validate_run_entry(spec, i, entry)
    return spec


def _validate_run_entry(spec, index, entry) -> None:
    where = f"runs[{index}]"
    if entry.get("panel") not in spec["panels"]:
        raise RunnerError(f"{where}: unknown panel {entry.get('panel')!r}")
    prior = entry.get("prior", {})
    if prior.get("kind") not in PRIOR_KINDS:
        raise RunnerError(f"{where}: unknown prior kind {prior.get('kind')!r}")
    if prior["kind"] in ("same-groups", "different-groups"):
        if not entry.get("observation_weeks"):
            raise RunnerError(f"{where}: prior needs observation_weeks")
    if not entry.get("m"):
        raise RunnerError(f"{where}: m list must be non-empty")
    if not entry.get("windows"):
        raise RunnerError(f"{where}: windows list must be non-empty")
    classifiers = entry.get("classifiers", [])
    if not classifiers or set(classifiers) - set(CLASSIFIER_KINDS):
        raise RunnerError(f"{where}: classifiers must be a subset of {CLASSIFIER_KINDS}")
    for mech in entry.get("mechanisms", []):
        if mech.get("kind") not in MECHANISM_KINDS:
            raise RunnerError(f"{where}: unknown mechanism {mech.get('kind')!r}")
        if not mech.get("epsilons"):
            raise RunnerError(f"{where}: mechanism without epsilons")
    adversary = entry.get("adversary", "passive")
    if adversary not in ("passive", "strategic"):
        raise RunnerError(f"{where}: adversary must be passive or strategic")
    if adversary == "strategic" and not entry.get("mechanisms"):
        raise RunnerError(f"{where}: strategic adversary requires a mechanism")
    targets = entry.get("targets", {})
    if not ("ids" in targets) ^ ("per_tier" in targets):
        raise RunnerError(f"{where}: targets need exactly one of ids/per_tier")
    if entry.get("repetitions", 1) < 1:
        raise RunnerError(f"{where}: repetitions must be >= 1")


def _build_panel(name, source, root_seed):
    if "file" in source:
        return load_panel(source["file"])
    cfg = {k: v for k, v in source.items() if k != "seed"}
    seed = source.get("seed")
    if seed is None:
        seed = derive_seed(root_seed, "panel", name)
    return generate_panel(GeneratorConfig(seed=seed, **cfg))


# --- window labels ------------------------------------------------------------

_DAY_RE = re.compile(r"day\((\d+)\)")
_8H_RE = re.compile(r"8h\((\d+)(?:,(\d+))?\)")


def window_for_label(label: str, grid, base_start: int) -> Window:
    """Resolve a named inference window inside the week at base_start."""
    spd, spw = grid.slots_per_day, grid.slots_per_week
    if label == "week":
        return grid.validate_window((base_start, base_start + spw))
    if m := _DAY_RE.fullmatch(label):
        day = int(m.group(1))
    elif m := _8H_RE.fullmatch(label):
        day = int(m.group(1))
    else:
        raise RunnerError(f"unknown window label: {label!r}")
    if day > 6:
        raise RunnerError(f"weekday index out of range in {label!r}")
    offset = (day - grid.weekday_of_slot(base_start)) % 7
    start = base_start + offset * spd
    if label.startswith("day"):
        return grid.validate_window((start, start + spd))
    hour = int(m.group(2)) if m.group(2) else 8
    first = start + int(round(hour / grid.slot_duration))
    length = int(round(8.0 / grid.slot_duration))
    return grid.validate_window((first, first + length))


def _run_windows(panel, entry, label):
    """(observation window or None, inference window) for one run entry."""
    prior_kind = entry["prior"]["kind"]
    if prior_kind in ("same-groups", "different-groups"):
        weeks = int(entry["observation_weeks"])
        spw = panel.grid.slots_per_week
        observation = panel.grid.validate_window((0, weeks * spw))
        return observation, window_for_label(label, panel.grid, weeks * spw)
    return None, window_for_label(label, panel.grid, 0)


# --- dataset and model construction --------------------------------------------

def _build_dataset(panel, target, gcfg, entry) -> ExperimentDataset:
    prior = entry["prior"]
    kind = prior["kind"]
    if kind == "subset-locations":
        return build_subset_prior(
            panel,
            target,
            gcfg,
            SubsetLocationsPrior(alpha=prior["alpha"]),
            n_train=prior.get("n_train", 400),
            n_test=prior.get("n_test", 100),
        )
    if kind == "same-groups":
        return build_same_groups_prior(
            panel, target, gcfg, SameGroupsPrior(beta=prior["beta"])
        )
    if kind == "different-groups":
        return build_diff_groups_prior(
            panel, target, gcfg, DifferentGroupsPrior(beta=prior["beta"])
        )
    return build_perfect_prior(
        panel, target, gcfg, PerfectKnowledgePrior(beta=prior["beta"])
    )


def fit_classifiers(dataset: ExperimentDataset, kinds, seed: int) -> dict:
    """Train-split pipeline: extract, reduce features to the sample count,
    then fit each requested classifier. Only the MLP sees standardized
    inputs; its scaler travels inside the model."""
    fm = extract(dataset.train)
    if len(fm.columns) > len(dataset.train):
        selection = rfe(fm, len(dataset.train))
        fm = fm.select(selection.kept_columns)
    models = {}
    for kind in kinds:
        if kind == "LR":
            models[kind] = train_lr(fm)
        elif kind == "KNN":
            models[kind] = train_knn(fm)
        elif kind == "RF":
            models[kind] = train_rf(fm, seed=derive_seed(seed, "rf"))
        elif kind == "MLP":
            scaled, means, stds = standardize(fm)
            models[kind] = train_mlp(
                scaled, seed=derive_seed(seed, "mlp"), scaler=(means, stds)
            )
        else:
            raise RunnerError(f"unknown classifier kind: {kind}")
    return models


def _clamped(dataset: ExperimentDataset) -> ExperimentDataset:
    def clamp(samples):
        out = []
        for s in samples:
            agg = AggregateSeries(
                values=np.maximum(s.aggregate.values, 0.0),
                window=s.aggregate.window,
                group_size=s.aggregate.group_size,
            )
            out.append(LabeledSample(aggregate=agg, label=s.label, group=s.group))
        return tuple(out)

    return ExperimentDataset(
        target=dataset.target,
        train=clamp(dataset.train),
        test=clamp(dataset.test),
        prior_kind=dataset.prior_kind,
    )


def _mean_test_mre(raw: ExperimentDataset, noisy: ExperimentDataset) -> float:
    values = [
        mre(r.aggregate.values, n.aggregate.values)
        for r, n in zip(raw.test, noisy.test)
    ]
    return float(np.mean(values))


def _best_row(rows_by_kind: dict, template: ResultRow, pg: float) -> ResultRow:
    best_kind = max(sorted(rows_by_kind), key=lambda k: rows_by_kind[k].auc)
    best = rows_by_kind[best_kind]
    return replace(template, classifier="BEST", auc=best.auc, pl=best.pl, pg=pg)


# --- cell execution --------------------------------------------------------------

def _run_cell(panel, entry, experiment, target, tier, m, label, rep, root_seed,
              clamp, record_timings):
    started = time.perf_counter()
    observation, inference = _run_windows(panel, entry, label)
    cell_seed = derive_seed(root_seed, experiment, target, m, label, rep)
    gcfg = GameConfig(
        m=m, inference_window=inference, observation_window=observation,
        seed=cell_seed,
    )
    dataset = _build_dataset(panel, target, gcfg, entry)
    adversary = entry.get("adversary", "passive")
    kinds = list(entry["classifiers"])

    def make_row(classifier, mechanism, epsilon, auc, pl, pg, mre_value):
        return ResultRow(
            experiment=experiment, target=target, tier=tier,
            classifier=classifier, m=m, ti_slots=inference.length,
            window=label, prior=dataset.prior_kind, mechanism=mechanism,
            epsilon=epsilon, adversary=adversary, auc=auc, pl=pl, pg=pg,
            mre=mre_value, wall_time=0.0,
        )

    rows = []
    raw_models = fit_classifiers(dataset, kinds, derive_seed(cell_seed, "fit", "raw"))
    raw_rows = {}
    for kind in kinds:
        report = play_game(dataset, raw_models[kind])
        raw_rows[kind] = make_row(kind, "none", 0.0, report.auc, report.pl, 0.0, 0.0)
    rows.extend(raw_rows[k] for k in kinds)
    rows.append(_best_row(raw_rows, raw_rows[kinds[0]], pg=0.0))
    best_raw_auc = max(raw_rows[k].auc for k in kinds)

    for mech in entry.get("mechanisms", []):
        sens = sensitivity(panel, inference)
        for epsilon in mech["epsilons"]:
            mcfg = MechanismConfig(
                kind=mech["kind"], epsilon=float(epsilon), sensitivity=sens,
                delta=mech.get("delta", 0.0), kappa=mech.get("kappa"),
            )
            where = "test-only" if adversary == "passive" else "train-and-test"
            noisy = perturb_dataset(
                dataset, mcfg, where,
                seed=derive_seed(cell_seed, "mech", mech["kind"], epsilon),
            )
            if clamp:
                noisy = _clamped(noisy)
            mre_value = _mean_test_mre(dataset, noisy)
            if adversary == "strategic":
                models = fit_classifiers(
                    noisy, kinds,
                    derive_seed(cell_seed, "fit", mech["kind"], epsilon),
                )
            else:
                models = raw_models
            mech_rows = {}
            for kind in kinds:
                report = play_game(noisy, models[kind])
                mech_rows[kind] = make_row(
                    kind, mech["kind"], float(epsilon), report.auc, report.pl,
                    privacy_gain(raw_rows[kind].auc, report.auc), mre_value,
                )
            rows.extend(mech_rows[k] for k in kinds)
            best_noisy_auc = max(mech_rows[k].auc for k in kinds)
            rows.append(
                _best_row(
                    mech_rows, mech_rows[kinds[0]],
                    pg=privacy_gain(best_raw_auc, best_noisy_auc),
                )
            )

    if record_timings:
        elapsed = time.perf_counter() - started
        rows = [replace(r, wall_time=elapsed) for r in rows]
    return rows


def _run_target_job(payload):
    """One worker job: every cell of one target within one run entry."""
    (panel, entry, experiment, target, tier, cells, root_seed, clamp,
     record_timings) = payload
    rows, errors = [], []
    for m, label, rep in cells:
        try:
            rows.extend(
                _run_cell(panel, entry, experiment, target, tier, m, label,
                          rep, root_seed, clamp, record_timings)
            )
        except Exception as exc:  # noqa: BLE001 - cell errors are data, run continues
            errors.append(
                {
                    "experiment": experiment, "target": target, "m": m,
                    "window": label, "rep": rep,
                    "error": f"{type(exc).__name__}: {exc}",
                }
            )
    return rows, errors


def _resolve_targets(panel, entry, root_seed, experiment):
    tiers = tier_users(panel)
    tier_of = {}
    for i, tier in enumerate(tiers):
        for uid in tier:
            tier_of[uid] = i
    targets_spec = entry["targets"]
    if "ids" in targets_spec:
        ids = list(targets_spec["ids"])
        missing = [t for t in ids if t not in tier_of]
        if missing:
            raise RunnerError(f"targets not in panel: {missing}")
        return [(t, tier_of[t]) for t in ids]
    picks = sample_targets(
        tiers, targets_spec["per_tier"], derive_seed(root_seed, "targets", experiment)
    )
    return [(t, tier_of[t]) for t in picks]


def _resolve_workers(workers):
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("AGGMIA_WORKERS")
    if env:
        return max(1, int(env))
    return 1


def run(spec, out_dir=None, workers=None, seed=None, clamp_nonneg=None) -> RunResult:
    """Execute a spec and (optionally) write results.csv / results.json /
    errors.log under out_dir. Deterministic for a fixed root seed, for any
    worker count."""
    spec = load_spec(spec)
    root_seed = int(spec["seed"] if seed is None else seed)
    clamp = bool(spec.get("clamp_nonneg", False) if clamp_nonneg is None else clamp_nonneg)
    record_timings = bool(spec.get("record_timings", False))
    workers = _resolve_workers(workers)

    panels = {
        name: _build_panel(name, source, root_seed)
        for name, source in spec["panels"].items()
    }

    jobs = []
    for index, entry in enumerate(spec["runs"]):
        experiment = f"{spec['id']}/{entry.get('name', index)}"
        panel = panels[entry["panel"]]
        cells = [
            (int(m), label, rep)
            for m in entry["m"]
            for label in entry["windows"]
            for rep in range(int(entry.get("repetitions", 1)))
        ]
        for target, tier in _resolve_targets(panel, entry, root_seed, experiment):
            jobs.append(
                (panel, entry, experiment, target, tier, cells, root_seed,
                 clamp, record_timings)
            )

    rows, errors = [], []
    if workers == 1:
        outcomes = map(_run_target_job, jobs)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_target_job, jobs))
    for job_rows, job_errors in outcomes:
        rows.extend(job_rows)
        errors.extend(job_errors)
    rows.sort(key=lambda r: r.sort_key())
    errors.sort(key=lambda e: sorted(e.items()))

    paths = {}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths["csv"] = str(out / "results.csv")
        paths["json"] = str(out / "results.json")
        export_csv(rows, paths["csv"])
        export_json(rows, paths["json"])
        paths["errors"] = str(out / "errors.log")
        with open(paths["errors"], "w") as fh:
            for err in errors:
                fh.write(json.dumps(err, sort_keys=True) + "\n")
    return RunResult(rows=tuple(rows), errors=tuple(errors), paths=paths)


# --- persistence -------------------------------------------------------------------

def _format_cell(name, value):
    if name in _FLOAT_FIELDS:
        return repr(float(value))
    return str(value)


def export_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESULT_FIELDS)
        for row in rows:
            writer.writerow(
                [_format_cell(n, getattr(row, n)) for n in RESULT_FIELDS]
            )


def export_json(rows, path) -> None:
    with open(path, "w") as fh:
        json.dump([r.to_record() for r in rows], fh, indent=1)
        fh.write("\n")


def load_rows(path) -> tuple:
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != RESULT_FIELDS:
            raise RunnerError(f"unexpected result header in {path}")
        for line in reader:
            record = dict(zip(RESULT_FIELDS, line))
            for name in _INT_FIELDS:
                record[name] = int(record[name])
            for name in _FLOAT_FIELDS:
                record[name] = float(record[name])
            out.append(ResultRow(**record))
    return tuple(out)


# --- plots -----------------------------------------------------------------------

def cdf_points(values):
    """Empirical CDF as step coordinates; non-decreasing, ends at 1."""
    xs = np.sort(np.asarray(values, dtype=np.float64))
    if xs.size == 0:
        raise RunnerError("empty selection")
    ys = np.arange(1, xs.size + 1) / xs.size
    return xs, ys


def box_stats(values) -> dict:
    """Quartiles and 1.5 IQR whiskers, the standard box-plot recipe."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise RunnerError("empty selection")
    q1, med, q3 = np.percentile(arr, [25.0, 50.0, 75.0])
    span = 1.5 * (q3 - q1)
    # Interpolated quartiles can exceed every in-fence data point; whiskers
    # never retreat inside the box.
    lo = min(float(arr[arr >= q1 - span].min()), float(q1))
    hi = max(float(arr[arr <= q3 + span].max()), float(q3))
    return {"q1": float(q1), "median": float(med), "q3": float(q3),
            "whisker_low": lo, "whisker_high": hi}


def pg_series(rows, classifier: str = "BEST") -> dict:
    """mechanism -> (sorted epsilons, mean pg per epsilon)."""
    buckets = {}
    for row in rows:
        if row.classifier != classifier or row.mechanism == "none":
            continue
        buckets.setdefault(row.mechanism, {}).setdefault(row.epsilon, []).append(row.pg)
    if not buckets:
        raise RunnerError("empty selection")
    out = {}
    for mech in sorted(buckets):
        eps = sorted(buckets[mech])
        out[mech] = (eps, [float(np.mean(buckets[mech][e])) for e in eps])
    return out


def emit_plots(rows, out_dir, kinds=("cdf", "box", "line")) -> list:
    """SVG figures: AUC CDF per classifier, PL box per group size, PG vs
    epsilon per mechanism. Layout is deterministic (fixed hash salt, no
    timestamps)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "aggmia"
    rows = list(rows)
    if not rows:
        raise RunnerError("empty selection")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []

    def save(fig, name):
        path = out / name
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        paths.append(str(path))

    if "cdf" in kinds:
        raw = [r for r in rows if r.mechanism == "none"]
        if not raw:
            raise RunnerError("empty selection")
        fig, ax = plt.subplots(figsize=(6, 4))
        for kind in sorted({r.classifier for r in raw}):
            xs, ys = cdf_points([r.auc for r in raw if r.classifier == kind])
            ax.step(xs, ys, where="post", label=kind)
        ax.set_xlabel("AUC")
        ax.set_ylabel("fraction of targets")
        ax.set_xlim(0.0, 1.0)
        ax.set_ylim(0.0, 1.05)
        ax.legend(loc="upper left", fontsize=8)
        save(fig, "auc_cdf.svg")

    if "box" in kinds:
        best = [r for r in rows if r.classifier == "BEST" and r.mechanism == "none"]
        if not best:
            raise RunnerError("empty selection")
        sizes = sorted({r.m for r in best})
        data = [[r.pl for r in best if r.m == size] for size in sizes]
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.boxplot(data, tick_labels=[str(s) for s in sizes])
        ax.set_xlabel("group size m")
        ax.set_ylabel("privacy loss")
        save(fig, "pl_box.svg")

    if "line" in kinds:
        series = pg_series(rows)
        fig, ax = plt.subplots(figsize=(6, 4))
        for mech, (eps, means) in series.items():
            ax.plot(eps, means, marker="o", label=mech)
        ax.set_xscale("log")
        ax.set_xlabel("epsilon")
        ax.set_ylabel("mean privacy gain")
        ax.set_ylim(-0.05, 1.05)
        ax.legend(loc="lower left", fontsize=8)
        save(fig, "pg_line.svg")

    return paths
