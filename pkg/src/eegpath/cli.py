"""Command-line interface: ``eegpath <subcommand> ...``.

Subcommands
-----------
synth        generate a labelled synthetic EDF corpus
preprocess   EDF corpus -> frame archives (work dir, keyed by config hash)
featurize    frame archives -> per-recording summaries
train        fit models on one CV step's training/validation folds and save them
evaluate     6-fold cross-validation, one CvReport JSON per model
stats        Kruskal-Wallis, Conover-Iman and FDR over CvReport step AUCs
fit-scaling  fit the saturation power law to (n, AUC) points
report       AUC table and scaling-curve plot data

Exit status: 0 success, 1 runtime failure, 2 usage error, 3 configuration
error. Failures print one JSON line ``{"error": ..., "message": ...}`` on
stderr. Paths may be overridden with EEGPATH_INPUT_DIR, EEGPATH_WORK_DIR
and EEGPATH_OUTPUT_DIR.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1
REGIONS = {"EU-50Hz": 50.0, "US-60Hz": 60.0}
EXIT_OK, EXIT_FAILURE, EXIT_USAGE, EXIT_CONFIG = 0, 1, 2, 3
ENV_PATHS = {"input_dir": "EEGPATH_INPUT_DIR", "work_dir": "EEGPATH_WORK_DIR",
             "output_dir": "EEGPATH_OUTPUT_DIR"}


class UsageError(Exception):
    pass


class ConfigError(Exception):
    pass


# --- configuration ----------------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    """Flat, typed run configuration (JSON object with ``schema_version``).

    ``overrides`` maps dotted keys (``gbt.iterations``, ``sinet.epochs``,
    ``rf.n_trees``, ``meta.C``, ``gbe_members`` ...) to values applied on
    top of the selected training profile.
    """

    schema_version: int = SCHEMA_VERSION
    input_dir: str = ""
    work_dir: str = "eegpath-work"
    output_dir: str = "eegpath-out"
    region: str = "EU-50Hz"
    frame_seconds: float = 6.0
    max_abs_uv: float = 800.0
    min_valid_frames: int = 50
    models: tuple = ("GBE",)
    profile: str = "desk"
    overrides: dict = field(default_factory=dict)
    folds: int = 6
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"schema_version {self.schema_version} unsupported "
                              f"(expected {SCHEMA_VERSION})")
        if self.region not in REGIONS:
            raise ConfigError(f"region must be one of {sorted(REGIONS)}, got {self.region!r}")
        if self.profile not in ("desk", "full"):
            raise ConfigError("profile must be 'desk' or 'full'")
        if not self.frame_seconds > 0 or not self.max_abs_uv > 0:
            raise ConfigError("frame_seconds and max_abs_uv must be positive")
        if self.min_valid_frames < 1 or self.folds < 3 or self.workers < 1:
            raise ConfigError("min_valid_frames >= 1, folds >= 3 and workers >= 1 required")
        from .pipeline import SPEC_NAMES
        for m in self.models:
            if m not in SPEC_NAMES:
                raise ConfigError(f"unknown model {m!r}; choose from {SPEC_NAMES}")

    @property
    def mains_freq(self) -> float:
        return REGIONS[self.region]

    def preprocess_config(self):
        from .preprocess import PreprocessConfig
        return PreprocessConfig(mains_freq=self.mains_freq, frame_seconds=self.frame_seconds,
                                max_abs_uv=self.max_abs_uv,
                                min_valid_frames=self.min_valid_frames)

    def profile_obj(self):
        from .pipeline import Profile, desk_profile
        prof = desk_profile() if self.profile == "desk" else Profile()
        return apply_overrides(prof, self.overrides)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["models"] = list(self.models)
        return d

    @classmethod
    def from_dict(cls, d) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "schema_version" not in d:
            raise ConfigError("config lacks schema_version")
        for name, value in d.items():
            default = known[name].default
            if name == "models":
                if isinstance(value, str):
                    value = [v for v in value.split(",") if v]
                d[name] = tuple(canonical_model(v) for v in value)
            elif name == "overrides":
                if not isinstance(value, dict):
                    raise ConfigError("overrides must be an object of dotted keys")
            elif isinstance(default, bool) or not isinstance(default, (int, float, str)):
                continue
            else:
                try:
                    d[name] = type(default)(value)
                except (TypeError, ValueError):
                    raise ConfigError(f"{name}: expected {type(default).__name__}, got {value!r}")
        return cls(**d)


def canonical_model(name: str) -> str:
    from .pipeline import SPEC_NAMES
    lookup = {n.lower(): n for n in SPEC_NAMES}
    try:
        return lookup[name.lower()]
    except KeyError:
        raise ConfigError(f"unknown model {name!r}; choose from {SPEC_NAMES}") from None


def apply_overrides(profile, overrides: dict):
    """Return ``profile`` with dotted-key overrides applied (typed by the target field)."""
    for key, value in sorted(overrides.items()):
        parts = key.split(".")
        if len(parts) == 1:
            if not hasattr(profile, key) or not isinstance(getattr(profile, key), int):
                raise ConfigError(f"unknown override {key!r}")
            profile = replace(profile, **{key: int(value)})
            continue
        section, name = parts
        target = getattr(profile, section, None)
        if target is None or not hasattr(target, name):
            raise ConfigError(f"unknown override {key!r}")
        current = getattr(target, name)
        try:
            value = type(current)(value) if current is not None else value
        except (TypeError, ValueError):
            raise ConfigError(f"override {key}: expected {type(current).__name__}")
        profile = replace(profile, **{section: replace(target, **{name: value})})
    return profile


def config_hash(payload: dict) -> str:
    text = json.dumps(payload, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:12]


def load_config(args) -> RunConfig:
    d = {"schema_version": SCHEMA_VERSION}
    if getattr(args, "config", None):
        path = Path(args.config)
        try:
            loaded = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}")
        if not isinstance(loaded, dict) or "schema_version" not in loaded:
            raise ConfigError(f"{path}: expected a JSON object with schema_version")
        d.update(loaded)
    for key, env in ENV_PATHS.items():
        if os.environ.get(env):
            d[key] = os.environ[env]
    for key in ("input_dir", "work_dir", "output_dir", "region", "frame_seconds", "max_abs_uv",
                "min_valid_frames", "profile", "folds", "seed", "workers"):
        value = getattr(args, key, None)
        if value is not None:
            d[key] = value
    if getattr(args, "model", None):
        d["models"] = args.model
    if getattr(args, "set", None):
        overrides = dict(d.get("overrides", {}))
        for item in args.set:
            if "=" not in item:
                raise UsageError(f"--set expects key=value, got {item!r}")
            k, v = item.split("=", 1)
            overrides[k] = v
        d["overrides"] = overrides
    return RunConfig.from_dict(d)


# --- helpers ------------------------------------------------------------------------

def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True, default=str))


def _require_dir(path, what) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise ConfigError(f"{what} {str(p)!r} is not a directory")
    return p


def _stage_dir(root, stage: str, payload: dict) -> Path:
    return Path(root) / f"{stage}-{config_hash({'stage': stage, **payload})}"


def _prepared_payload(cfg: RunConfig, input_dir: Path) -> dict:
    pre = cfg.preprocess_config()
    return {"schema": SCHEMA_VERSION, "input": str(input_dir.resolve()),
            "preprocess": asdict(pre)}


def _dataset(prepared: Path):
    from .pipeline import load_dataset
    if not (prepared / "summaries.csv").exists():
        raise ConfigError(f"{prepared} has no summaries.csv; run `featurize` first")
    stage = json.loads((prepared / "stage.json").read_text()) if (prepared / "stage.json").exists() else {}
    return load_dataset(prepared, stage.get("hash", prepared.name))


# --- subcommands --------------------------------------------------------------------

def cmd_synth(args, cfg: RunConfig) -> int:
    from . import synth_data as sd
    overrides = {"seed": cfg.seed}
    if args.n is not None:
        overrides["n_recordings"] = args.n
    try:
        spec = sd.PRESETS[args.spec](**overrides)
    except ValueError as exc:
        raise ConfigError(str(exc))
    rows = sd.generate_corpus(spec, args.out)
    _emit({"stage": "synth", "output": str(Path(args.out)), "n_recordings": len(rows),
           "spec": args.spec})
    return EXIT_OK


def cmd_preprocess(args, cfg: RunConfig) -> int:
    from .pipeline import preprocess_corpus
    input_dir = _require_dir(args.input or cfg.input_dir, "input_dir")
    if not (input_dir / "manifest.jsonl").exists():
        raise ConfigError(f"{input_dir} has no manifest.jsonl")
    payload = _prepared_payload(cfg, input_dir)
    out = _stage_dir(cfg.work_dir, "prepared", payload)
    marker = out / "stage.json"
    if marker.exists():
        info = json.loads(marker.read_text())
        _emit({**{k: v for k, v in info.items() if k != "config"}, "reused": True})
        return EXIT_OK
    rows, excluded = preprocess_corpus(input_dir, out, cfg.preprocess_config(),
                                       workers=cfg.workers)
    info = {"stage": "preprocess", "output": str(out), "hash": out.name.split("-", 1)[1],
            "n_recordings": len(rows), "n_excluded": len(excluded), "config": payload}
    marker.write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    _emit({**{k: v for k, v in info.items() if k != "config"}, "reused": False})
    return EXIT_OK


def cmd_featurize(args, cfg: RunConfig) -> int:
    from .features import N_FEATURES, N_POWER, N_TIME, RF_SLICE
    from .pipeline import featurize_corpus
    prepared = _require_dir(args.prepared, "prepared directory")
    if not (prepared / "manifest.jsonl").exists():
        raise ConfigError(f"{prepared} has no manifest.jsonl; run `preprocess` first")
    reused = (prepared / "summaries.csv").exists()
    if reused:
        from .features import read_summaries
        n = len(read_summaries(prepared / "summaries.csv"))
    else:
        n = len(featurize_corpus(prepared, workers=cfg.workers))
    _emit({"stage": "featurize", "output": str(prepared / "summaries.csv"), "n_recordings": n,
           "n_features": N_FEATURES, "n_time": N_TIME, "n_power": N_POWER,
           "n_coherence": N_FEATURES - N_TIME - N_POWER,
           "n_rf_features": RF_SLICE.stop - RF_SLICE.start, "reused": reused})
    return EXIT_OK


def _suite(cfg: RunConfig):
    from .pipeline import suite_for
    return suite_for(cfg.models, cfg.profile_obj())


def _folds(ds, cfg: RunConfig):
    from .evaluation import stratified_folds
    return stratified_folds(ds.manifest, cfg.folds, cfg.seed)


def cmd_train(args, cfg: RunConfig) -> int:
    from .evaluation import cross_validate_suite, leakage_violations
    from .pipeline import save_fitted
    prepared = _require_dir(args.prepared, "prepared directory")
    ds = _dataset(prepared)
    folds = _folds(ds, cfg)
    if not 0 <= args.step < cfg.folds:
        raise ConfigError(f"--step must be in [0, {cfg.folds})")
    specs = _suite(cfg)
    payload = {"data": ds.dataset_id, "config": cfg.to_dict(), "step": args.step,
               "profile": cfg.profile_obj().to_dict()}
    out = _stage_dir(cfg.output_dir, "train", payload)
    contexts = {}
    reports = cross_validate_suite(specs, ds, folds, cfg.seed, [args.step], contexts)
    files = {}
    for spec in specs:
        files[spec.name] = save_fitted(spec.name, contexts[args.step][spec.name], out)
    summary = {"stage": "train", "output": str(out), "step": args.step,
               "test_auc": {k: r.steps[0].test_auc for k, r in reports.items()},
               "files": files, "leakage_violations": len(leakage_violations(ds.log, folds)),
               "config": payload}
    (out / "train.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    _emit({k: summary[k] for k in ("stage", "output", "test_auc", "leakage_violations")})
    return EXIT_OK


def cmd_evaluate(args, cfg: RunConfig) -> int:
    from .evaluation import cross_validate_suite, leakage_violations
    prepared = _require_dir(args.prepared, "prepared directory")
    ds = _dataset(prepared)
    folds = _folds(ds, cfg)
    steps = None
    if args.steps:
        steps = [int(s) for s in args.steps.split(",")]
        if any(not 0 <= s < cfg.folds for s in steps):
            raise ConfigError(f"--steps must be in [0, {cfg.folds})")
    specs = _suite(cfg)
    payload = {"data": ds.dataset_id, "config": cfg.to_dict(), "steps": steps,
               "profile": cfg.profile_obj().to_dict()}
    out = _stage_dir(cfg.output_dir, "evaluate", payload)
    out.mkdir(parents=True, exist_ok=True)
    reports = cross_validate_suite(specs, ds, folds, cfg.seed, steps)
    for name, rep in reports.items():
        rep.write(out / f"{name}.json")
    leaks = leakage_violations(ds.log, folds)
    audit = {"accesses": len(ds.log.entries), "violations": [list(v) for v in leaks],
             "fold_sizes": folds.sizes()}
    (out / "audit.json").write_text(json.dumps(audit, indent=2, sort_keys=True) + "\n")
    (out / "config.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    _emit({"stage": "evaluate", "output": str(out),
           "auc": {k: {"mean": r.mean(), "se": r.se()} for k, r in reports.items()},
           "leakage_violations": len(leaks)})
    return EXIT_OK


def _read_reports(paths):
    from .evaluation import CvReport
    files = []
    for p in map(Path, paths):
        if p.is_dir():
            files += sorted(f for f in p.glob("*.json") if f.name not in ("audit.json", "config.json"))
        elif p.exists():
            files.append(p)
        else:
            raise ConfigError(f"report {str(p)!r} does not exist")
    reports = []
    for f in files:
        try:
            reports.append(CvReport.read(f))
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{f} is not a CvReport: {exc}")
    if not reports:
        raise ConfigError("no CvReport files given")
    return reports


def cmd_stats(args, cfg: RunConfig) -> int:
    from .evaluation import adjusted_pairwise, conover_iman, kruskal_wallis
    reports = _read_reports(args.reports)
    if len(reports) < 2:
        raise ConfigError("stats needs at least two reports")
    names = [f"{r.model_id}@{r.dataset_id}" for r in reports]
    samples = [r._values("test_auc") for r in reports]
    kw = kruskal_wallis(samples)
    result = {"stage": "stats", "groups": names,
              "kruskal_wallis": {"H": kw.statistic, "p": kw.pvalue, "all_equal": kw.all_equal},
              "conover_iman_p": conover_iman(samples).tolist(),
              "conover_iman_p_fdr": adjusted_pairwise(samples).tolist()}
    if args.out:
        Path(args.out).write_text(json.dumps(result, indent=2) + "\n")
    _emit(result)
    return EXIT_OK


def _read_points(path):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}")
    if not rows:
        raise ConfigError(f"{path} has no rows")
    cols = rows[0].keys()
    n_col = next((c for c in ("n_recordings", "n") if c in cols), None)
    y_col = next((c for c in ("auc_mean", "auc", "metric") if c in cols), None)
    if n_col is None or y_col is None:
        raise ConfigError(f"{path} needs columns n_recordings/n and auc_mean/auc/metric")
    models = {r["model"] for r in rows if "model" in r}
    if len(models) > 1:
        raise ConfigError(f"{path} mixes models {sorted(models)}; filter first")
    n = np.array([float(r[n_col]) for r in rows])
    y = np.array([float(r[y_col]) for r in rows])
    se = np.array([float(r["auc_se"]) for r in rows]) if "auc_se" in cols else None
    return n, y, se


def _fit_payload(fit, n_db_value):
    d = fit.as_dict()
    d["n_db"] = n_db_value
    return d


def cmd_fit_scaling(args, cfg: RunConfig) -> int:
    from .evaluation import NoConvergence, TooFewPoints, elm_series, fit_power_law, n_db
    if args.input:
        n, y, se = _read_points(args.input)
    elif args.published:
        try:
            n, y, se = elm_series(args.published)
        except KeyError:
            raise ConfigError(f"no published series for model {args.published!r}")
    else:
        raise UsageError("fit-scaling needs --input CSV or --published MODEL")
    try:
        fit = fit_power_law(n, y, se if args.weighted else None)
    except TooFewPoints as exc:
        raise ConfigError(str(exc))
    try:
        ndb = n_db(fit)
    except (NoConvergence, ValueError):
        ndb = None
    _emit({"stage": "fit-scaling", **_fit_payload(fit, ndb)})
    print(f"asymptote = {fit.asymptote:.2f} +/- {fit.asymptote_se:.2f}", file=sys.stderr)
    return EXIT_OK


def auc_table(entries, percent: bool) -> str:
    """Columnar text: one row per model, one ``mean +/- se`` column per dataset."""
    models = list(dict.fromkeys(e["model"] for e in entries))
    datasets = list(dict.fromkeys(e["dataset"] for e in entries))
    cell = {(e["model"], e["dataset"]): e for e in entries}
    scale = 1.0 if percent else 100.0
    head = ["model"] + datasets
    rows = [head]
    for m in models:
        row = [m]
        for d in datasets:
            e = cell.get((m, d))
            row.append("-" if e is None else f"{scale * e['mean']:.1f} +/- {scale * e['se']:.1f}")
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows) + "\n"


def _write_curves(entries, out: Path, percent: bool) -> list:
    """Per-model (n, AUC, SE) data points and fitted-curve triples."""
    from .evaluation import NoConvergence, TooFewPoints, curve_points, fit_power_law
    (out / "scaling").mkdir(parents=True, exist_ok=True)
    fits = []
    for model in dict.fromkeys(e["model"] for e in entries):
        pts = sorted((e["n"], e["mean"], e["se"]) for e in entries
                     if e["model"] == model and e.get("n"))
        if not pts:
            continue
        arr = np.array(pts, dtype=float)
        if not percent:
            arr[:, 1:] *= 100.0
        np.savetxt(out / "scaling" / f"{model}.points.txt", arr, fmt="%.6g",
                   header="n auc se")
        if len(np.unique(arr[:, 0])) < 4:
            continue
        try:
            fit = fit_power_law(arr[:, 0], arr[:, 1])
        except (TooFewPoints, NoConvergence):
            continue
        grid = np.geomspace(arr[:, 0].min(), 10 * arr[:, 0].max(), 60)
        np.savetxt(out / "scaling" / f"{model}.curve.txt", curve_points(fit, grid), fmt="%.6g",
                   header="n auc se")
        fits.append({"model": model, "asymptote": fit.asymptote,
                     "asymptote_se": fit.asymptote_se, "converged": fit.converged})
    return fits


def cmd_report(args, cfg: RunConfig) -> int:
    from .evaluation import published_auc_table
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.published:
        entries = [{"model": r["model"], "dataset": r["dataset"], "n": r["n_recordings"],
                    "mean": r["auc_mean"], "se": r["auc_se"]} for r in published_auc_table()]
        percent = True
        entries_for_curves = [e for e in entries if e["dataset"].startswith("ELM")]
    else:
        entries = []
        for r in _read_reports(args.reports or []):
            n = sum(len(s.test_ids) for s in r.steps)
            entries.append({"model": r.model_id, "dataset": r.dataset_id, "n": n,
                            "mean": r.mean(), "se": r.se()})
        percent = False
        entries_for_curves = entries
    table = auc_table(entries, percent)
    (out / "auc_table.txt").write_text(table)
    fits = _write_curves(entries_for_curves, out, percent)
    (out / "scaling_fits.json").write_text(json.dumps(fits, indent=2) + "\n")
    sys.stdout.write(table)
    _emit({"stage": "report", "output": str(out), "fits": fits})
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "preprocess": cmd_preprocess, "featurize": cmd_featurize,
            "train": cmd_train, "evaluate": cmd_evaluate, "stats": cmd_stats,
            "fit-scaling": cmd_fit_scaling, "report": cmd_report}


# --- argument parsing -----------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p, paths=True, models=False, pipeline=False):
    p.add_argument("--config", help="JSON RunConfig file")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    if paths:
        p.add_argument("--work", dest="work_dir")
        p.add_argument("--output", dest="output_dir")
    if pipeline:
        p.add_argument("--region", choices=sorted(REGIONS))
        p.add_argument("--frame-seconds", dest="frame_seconds", type=float)
        p.add_argument("--max-abs-uv", dest="max_abs_uv", type=float)
        p.add_argument("--min-valid-frames", dest="min_valid_frames", type=int)
    if models:
        p.add_argument("--model", action="append", help="model name; repeatable")
        p.add_argument("--profile", choices=("desk", "full"))
        p.add_argument("--folds", type=int)
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="hyperparameter override, e.g. gbt.iterations=300")


def build_parser() -> argparse.ArgumentParser:
    from .synth_data import PRESETS
    parser = _Parser(prog="eegpath", description="EEG pathology screening pipeline")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic EDF corpus")
    p.add_argument("--spec", choices=sorted(PRESETS), default="default")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, help="number of recordings")
    _common(p, paths=False)

    p = sub.add_parser("preprocess", help="filter, resample and frame an EDF corpus")
    p.add_argument("input", nargs="?", help="corpus directory with manifest.jsonl")
    _common(p, pipeline=True)

    p = sub.add_parser("featurize", help="per-recording feature summaries")
    p.add_argument("prepared")
    _common(p)

    for name, helptext in (("train", "fit and save models on one CV step"),
                           ("evaluate", "cross-validate models")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--prepared", required=True)
        if name == "train":
            p.add_argument("--step", type=int, default=0)
        else:
            p.add_argument("--steps", help="comma-separated subset of CV steps")
        _common(p, models=True)

    p = sub.add_parser("stats", help="rank tests over CvReport step AUCs")
    p.add_argument("reports", nargs="+")
    p.add_argument("--out")
    _common(p, paths=False)

    p = sub.add_parser("fit-scaling", help="fit metric(n) = a - alpha * n^-beta")
    p.add_argument("--input", help="CSV with n_recordings and auc_mean (optional auc_se)")
    p.add_argument("--published", metavar="MODEL", help="use the bundled ELM series of MODEL")
    p.add_argument("--weighted", action="store_true", help="weight points by 1/SE")
    _common(p, paths=False)

    p = sub.add_parser("report", help="AUC table and scaling-curve data")
    p.add_argument("reports", nargs="*")
    p.add_argument("--published", action="store_true", help="report the bundled AUC table")
    p.add_argument("--out")
    _common(p, paths=False)
    return parser


def _fail(code: int, kind: str, message: str) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args)
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "UsageError", str(exc))
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "ConfigError", str(exc))
    except Exception as exc:  # noqa: BLE001 - reported as a machine-readable line
        return _fail(EXIT_FAILURE, type(exc).__name__, str(exc))


if __name__ == "__main__":
    sys.exit(main())
