"""Command-line interface: ``jmsl simulate | fit | superlearn | replicate | evaluate``."""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .. import __version__
from ..core import Dataset, assign_folds, check_interval_events, interval_event_count
from ..errors import (
    BracketError,
    CalibrationError,
    InitializationError,
    JMSLError,
    NumericalError,
    OptimizationError,
    PreconditionError,
    UndefinedWeightError,
)
from ..jointmodel import MCMCConfig, fit_mcmc
from ..simulate import ScenarioSpec, censoring_rate, simulate_dataset
from ..superlearn import (
    ModelLibrary,
    ScorePanel,
    SuperLearnerConfig,
    build_panel,
    cv_predictions,
    default_workers,
    evaluate_on_test,
    holdout_predictions,
    standard_library,
)
from .formats import (
    dump_json,
    library_from_json,
    library_to_json,
    model_spec_from_json,
    posterior_to_bytes,
    read_dataset,
    write_dataset,
)

log = logging.getLogger("jmsl")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_PARTIAL = 0, 2, 3, 4
NUMERICAL = (NumericalError, InitializationError, OptimizationError, BracketError, CalibrationError,
             UndefinedWeightError)
ARMS = ("dSL-train", "eSL-train", "dSL-test", "eSL-test", "oracle-test")
REPORT_COLUMNS = ("replication", "arm", "metric", "interval", "value")


class PartialResults(JMSLError):
    pass


def score_names(metric: str, weights: str) -> tuple:
    """Map ``--metric`` and ``--censoring-weights`` onto score names."""
    out = []
    if metric in ("ibs", "both"):
        kinds = ("ipcw", "model") if weights == "both" else (weights,)
        out += [f"ibs-{k}" for k in kinds]
    if metric in ("epce", "both"):
        out.append("epce")
    return tuple(out)


def interval_label(t: float, dt: float) -> str:
    return f"({t:g},{t + dt:g}]"


def config_to_dict(cfg: SuperLearnerConfig) -> dict:
    return {"landmarks": list(cfg.landmarks), "dt": cfg.dt, "scores": list(cfg.scores), "epsilon": cfg.epsilon,
            "scheme": cfg.scheme, "mc_draws": cfg.mc_draws, "mcmc": cfg.mcmc.as_dict(), "seed": cfg.seed}


def config_from_dict(doc: dict, workers: int = 1) -> SuperLearnerConfig:
    m = doc["mcmc"]
    return SuperLearnerConfig(tuple(doc["landmarks"]), doc["dt"], tuple(doc["scores"]), doc["epsilon"],
                              doc["scheme"], doc["mc_draws"],
                              MCMCConfig(m["iterations"], m["burn_in"], m["thin"], m["seed"], m["fixed"]),
                              doc["seed"], workers)


def _guard_output(paths, force: bool):
    existing = [str(p) for p in paths if Path(p).exists()]
    if existing and not force:
        raise PreconditionError(f"refusing to overwrite {', '.join(existing)} (use --force)")


def _write(path: Path, text: str):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(text.encode("utf-8"))


# ---------------------------------------------------------------------------
# simulate

def cmd_simulate(args) -> int:
    out = Path(args.out)
    spec = ScenarioSpec.standard(args.scenario, args.n).calibrated()
    names = []
    for rep in range(args.reps):
        names += [out / f"rep{rep:03d}_{part}{ext}" for part in ("train", "test") for ext in (".csv", "_truth.json")]
    _guard_output(names + [out / "manifest.json"], args.force)
    out.mkdir(parents=True, exist_ok=True)
    realized = []
    for rep in range(args.reps):
        for k, part in enumerate(("train", "test")):
            data, truth = simulate_dataset(spec, args.seed, stream=2 * rep + k)
            write_dataset(out / f"rep{rep:03d}_{part}.csv", data)
            _write(out / f"rep{rep:03d}_{part}_truth.json",
                   dump_json([asdict(t) for t in truth]))
            realized.append(censoring_rate(data))
    manifest = {
        "tool_version": __version__, "command": "simulate", "seed": args.seed, "config": _args_dict(args),
        "scenario": spec.scenario, "n": spec.n, "mixture": [list(m) for m in spec.mixture],
        "generators": {k: asdict(g) for k, g in spec.generators.items()},
        "censoring": {"kind": spec.censoring, "parameter": spec.censoring_parameter,
                      "target_rate": spec.target_censoring_rate, "calibration_seed": spec.calibration_seed,
                      "realized_rates": realized, "mean_realized_rate": float(np.mean(realized))},
    }
    _write(out / "manifest.json", dump_json(manifest))
    return EXIT_OK


# ---------------------------------------------------------------------------
# fit

def cmd_fit(args) -> int:
    out = Path(args.out)
    _guard_output([out], args.force)
    spec = model_spec_from_json(Path(args.model).read_text())
    data = read_dataset(Path(args.data))
    cfg = MCMCConfig(args.iterations, args.burn_in, args.thin, args.seed)
    post = fit_mcmc(spec, data, cfg)
    prov = {"tool_version": __version__, "command": "fit", "seed": args.seed, "config": _args_dict(args)}
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(posterior_to_bytes(post, prov))
    return EXIT_OK


# ---------------------------------------------------------------------------
# superlearn

def _sl_config(args, workers: int | None = None) -> SuperLearnerConfig:
    return SuperLearnerConfig(
        landmarks=tuple(args.landmarks), dt=args.dt, scores=score_names(args.metric, args.censoring_weights),
        epsilon=args.epsilon, scheme=args.diff, mc_draws=args.mc_draws,
        mcmc=MCMCConfig(args.iterations, args.burn_in, args.thin), seed=args.seed,
        workers=workers or args.workers)


def check_events(data: Dataset, landmarks, dt) -> dict:
    """Events per interval; fails below one event, warns below the usual minimum."""
    counts = {}
    for t in landmarks:
        n = interval_event_count(data, t, dt)
        if n < 1:
            raise PreconditionError(f"no events in {interval_label(t, dt)}; the interval cannot be scored")
        counts[interval_label(t, dt)] = check_interval_events(data, t, dt)
    return counts


def panel_document(panel: ScorePanel, library: ModelLibrary, cfg: SuperLearnerConfig, args, extra=None) -> dict:
    doc = {"tool_version": __version__, "seed": cfg.seed, "config": _args_dict(args),
           "superlearner": config_to_dict(cfg), "library": json.loads(library_to_json(library)),
           "panel": panel.as_dict(), "table": panel_table(panel)}
    doc.update(extra or {})
    return doc


def panel_table(panel: ScorePanel) -> list:
    """One row per model plus an SL row; score and weight per interval and metric."""
    rows = []
    for name in (*panel.model_names, "SL"):
        row = {"model": name}
        for e in panel.entries:
            key = f"{e.metric} {interval_label(e.landmark, e.dt)}"
            if name == "SL":
                row[key] = {"score": e.esl_score, "weight": None}
            else:
                w = e.weights[name]
                row[key] = {"score": e.model_scores[name], "weight": w if w >= 1e-8 else 0.0}
        rows.append(row)
    return rows


def cmd_superlearn(args) -> int:
    out = Path(args.out)
    _guard_output([out], args.force)
    data = read_dataset(Path(args.data))
    library = library_from_json(Path(args.library).read_text()) if args.library else standard_library()
    cfg = _sl_config(args)
    counts = check_events(data, cfg.landmarks, cfg.dt)
    folds = assign_folds(data, args.folds, cfg.seed)
    panel = build_panel(cv_predictions(library, data, folds, cfg), cfg)
    _write(out, dump_json(panel_document(panel, library, cfg, args, {"event_counts": counts})))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    out = Path(args.out)
    _guard_output([out], args.force)
    doc = json.loads(Path(args.panel).read_text())
    library = library_from_json(json.dumps(doc["library"]))
    cfg = config_from_dict(doc["superlearner"], args.workers)
    panel = panel_from_dict(doc["panel"])
    train, test = read_dataset(Path(args.train)), read_dataset(Path(args.test))
    results = evaluate_on_test(panel, holdout_predictions(library, train, test, cfg), cfg)
    _write(out, dump_json({"tool_version": __version__, "seed": cfg.seed, "config": _args_dict(args),
                           "results": [asdict(r) for r in results]}))
    return EXIT_OK


def panel_from_dict(doc: dict) -> ScorePanel:
    from ..superlearn import PanelEntry

    entries = tuple(PanelEntry(e["landmark"], e["dt"], e["metric"], e["model_scores"], e["esl_score"],
                               e["weights"], e["dsl"], e["dsl_with_esl"], e["largest_weight"], e["diagnostics"])
                    for e in doc["entries"])
    return ScorePanel(tuple(doc["models"]), entries)


# ---------------------------------------------------------------------------
# replicate

@dataclass(frozen=True)
class ReplicationSetup:
    scenario: str
    n: int
    folds: int
    seed: int
    config: SuperLearnerConfig


def rep_seed(seed: int, rep: int) -> int:
    return int(np.random.SeedSequence([seed, rep]).generate_state(1)[0])


def run_replication(setup: ReplicationSetup, rep: int, library: ModelLibrary | None = None) -> dict:
    """Simulate train and test sets, super-learn on train, score on test."""
    library = library or standard_library()
    spec = ScenarioSpec.standard(setup.scenario, setup.n).calibrated()
    train, _ = simulate_dataset(spec, setup.seed, stream=2 * rep)
    test, _ = simulate_dataset(spec, setup.seed, stream=2 * rep + 1)
    s = rep_seed(setup.seed, rep)
    c = setup.config
    cfg = SuperLearnerConfig(c.landmarks, c.dt, c.scores, c.epsilon, c.scheme, c.mc_draws, c.mcmc, s, c.workers)
    counts = check_events(train, cfg.landmarks, cfg.dt)
    panel = build_panel(cv_predictions(library, train, assign_folds(train, setup.folds, s), cfg), cfg)
    tests = evaluate_on_test(panel, holdout_predictions(library, train, test, cfg), cfg)
    return {"replication": rep, "seed": s, "event_counts": counts, "censoring_rate": censoring_rate(train),
            "panel": panel.as_dict(), "test": [asdict(r) for r in tests]}


def report_rows(result: dict) -> list:
    rows = []
    tests = {(r["landmark"], r["metric"]): r for r in result["test"]}
    for e in result["panel"]["entries"]:
        r = tests[(e["landmark"], e["metric"])]
        values = (e["model_scores"][e["dsl"]], e["esl_score"], r["dsl"], r["esl"], r["oracle"])
        label = interval_label(e["landmark"], e["dt"])
        rows += [(result["replication"], arm, e["metric"], label, v) for arm, v in zip(ARMS, values)]
    return rows


def report_csv(results: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for res in results:
        for row in report_rows(res):
            w.writerow([*row[:4], repr(float(row[4]))])
    return buf.getvalue()


def _quantiles(values) -> dict:
    v = np.asarray(values, dtype=float)
    q25, med, q75 = np.percentile(v, [25, 50, 75])
    return {"median": float(med), "q25": float(q25), "q75": float(q75), "n": int(v.size)}


def summarize(results: list) -> dict:
    arms, weights, dsl = {}, {}, {}
    for res in results:
        for rep, arm, metric, label, value in report_rows(res):
            arms.setdefault(f"{metric} {label} {arm}", []).append(value)
        for e in res["panel"]["entries"]:
            key = f"{e['metric']} {interval_label(e['landmark'], e['dt'])}"
            for name, w in e["weights"].items():
                weights.setdefault(key, {}).setdefault(name, []).append(w)
            counts = dsl.setdefault(key, {})
            counts[e["dsl"]] = counts.get(e["dsl"], 0) + 1
    violations = {}
    for res in results:
        for r in res["test"]:
            key = f"{r['metric']} {interval_label(r['landmark'], res['panel']['entries'][0]['dt'])}"
            v = violations.setdefault(key, [0, 0])
            v[0] += int(r["esl"] < r["oracle"])
            v[1] += 1
    return {
        "arms": {k: _quantiles(v) for k, v in arms.items()},
        "weights": {k: {n: _quantiles(v) for n, v in ws.items()} for k, ws in weights.items()},
        "dsl_counts": dsl,
        "esl_below_oracle_rate": {k: v[0] / v[1] for k, v in violations.items()},
    }


def _replicate_job(payload):
    setup, rep = payload
    try:
        return run_replication(setup, rep), None
    except JMSLError as exc:
        return None, {"replication": rep, "error": f"{type(exc).__name__}: {exc}"}


def replicate(setup: ReplicationSetup, reps: int, workers: int = 1) -> tuple[list, list]:
    jobs = [(setup, rep) for rep in range(reps)]
    if workers > 1 and reps > 1:
        with ProcessPoolExecutor(max_workers=min(workers, reps)) as pool:
            outcomes = list(pool.map(_replicate_job, jobs))
    else:
        outcomes = [_replicate_job(j) for j in jobs]
    return [r for r, _ in outcomes if r is not None], [e for _, e in outcomes if e is not None]


def cmd_replicate(args) -> int:
    out = Path(args.out)
    files = [out / "report.csv", out / "panels.json", out / "summary.json"]
    _guard_output(files, args.force)
    weights = args.censoring_weights or ("both" if args.scenario == "III" else "ipcw")
    args.censoring_weights = weights
    setup = ReplicationSetup(args.scenario, args.n, args.folds, args.seed, _sl_config(args, workers=1))
    results, failures = replicate(setup, args.reps, args.workers)
    prov = {"tool_version": __version__, "seed": args.seed, "config": _args_dict(args)}
    _write(files[0], report_csv(results))
    _write(files[1], dump_json({**prov, "replications": results}))
    _write(files[2], dump_json({**prov, "summary": summarize(results) if results else {},
                                "failures": failures}))
    if failures:
        raise PartialResults(f"{len(failures)} of {args.reps} replications failed")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing

def _args_dict(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "workers", "out", "force")}


def _landmarks(text: str) -> list:
    return [float(v) for v in text.split(",") if v.strip()]


# Desk-scale replication used for the qualitative checks: shorter chains and
# fewer Monte Carlo draws than the defaults so that 30 replications fit on a laptop.
DESK_SEEDS = {"I": 101, "II": 202, "III": 303}


def desk_replicate_args(scenario: str, out, reps: int = 30) -> list:
    return ["replicate", "--scenario", scenario, "--n", "300", "--reps", str(reps), "--folds", "3",
            "--landmarks", "16,19", "--dt", "2", "--metric", "both", "--censoring-weights", "ipcw",
            "--iterations", "2000", "--burn-in", "1000", "--thin", "5", "--mc-draws", "100",
            "--seed", str(DESK_SEEDS[scenario]), "--out", str(out)]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="jmsl", description=__doc__)
    p.add_argument("--version", action="version", version=f"jmsl {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed_required=True):
        sp.add_argument("--seed", type=int, required=seed_required, default=None if seed_required else 0)
        sp.add_argument("--workers", type=int, default=default_workers())
        sp.add_argument("--force", action="store_true", help="overwrite existing outputs")
        sp.add_argument("--out", required=True)

    def mcmc(sp):
        sp.add_argument("--iterations", type=int, default=6000)
        sp.add_argument("--burn-in", type=int, default=3000)
        sp.add_argument("--thin", type=int, default=3)

    def scoring(sp):
        sp.add_argument("--landmarks", type=_landmarks, default=[16.0, 19.0])
        sp.add_argument("--dt", type=float, default=2.0)
        sp.add_argument("--metric", choices=("ibs", "epce", "both"), default="both")
        sp.add_argument("--censoring-weights", choices=("ipcw", "model", "both"), default=None)
        sp.add_argument("--epsilon", type=float, default=1e-3)
        sp.add_argument("--diff", choices=("forward", "central"), default="forward")
        sp.add_argument("--folds", type=int, default=3)
        sp.add_argument("--mc-draws", type=int, default=200)

    s = sub.add_parser("simulate", help="simulate train/test datasets")
    common(s)
    s.add_argument("--scenario", choices=("I", "II", "III"), required=True)
    s.add_argument("--n", type=int, default=750)
    s.add_argument("--reps", type=int, default=1)
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="fit one joint model by MCMC")
    common(f)
    f.add_argument("--data", required=True)
    f.add_argument("--model", required=True, help="model spec JSON object")
    mcmc(f)
    f.set_defaults(func=cmd_fit)

    sl = sub.add_parser("superlearn", help="cross-validated super learner panel")
    common(sl)
    sl.add_argument("--data", required=True)
    sl.add_argument("--library", default=None, help="library JSON (default: six standard models)")
    scoring(sl)
    mcmc(sl)
    sl.set_defaults(func=cmd_superlearn)

    r = sub.add_parser("replicate", help="simulate, super-learn and test repeatedly")
    common(r)
    r.add_argument("--scenario", choices=("I", "II", "III"), required=True)
    r.add_argument("--n", type=int, default=300)
    r.add_argument("--reps", type=int, default=30)
    scoring(r)
    mcmc(r)
    r.set_defaults(func=cmd_replicate)

    e = sub.add_parser("evaluate", help="score a trained panel on a test dataset")
    common(e, seed_required=False)
    e.add_argument("--panel", required=True)
    e.add_argument("--train", required=True)
    e.add_argument("--test", required=True)
    e.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_VALIDATION if exc.code else EXIT_OK
    if getattr(args, "censoring_weights", "x") is None and args.command != "replicate":
        args.censoring_weights = "ipcw"
    try:
        return args.func(args)
    except PartialResults as exc:
        print(f"jmsl: {exc}", file=sys.stderr)
        return EXIT_PARTIAL
    except NUMERICAL as exc:
        print(f"jmsl: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (JMSLError, ValueError, OSError) as exc:
        print(f"jmsl: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
