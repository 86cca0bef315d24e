"""Command-line entry points and the end-to-end pipeline.

Stages read and write plain files, every numeric artifact is serialised
deterministically, and a manifest records the seeds and content hashes of
everything a pipeline run produced. Stage seeds are derived from the global
seed by hashing "<seed>:<stage label>" with SHA-256 and taking the first
8 bytes, so no two stages ever share a random stream.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
The environment variable MASKTAB_SEED overrides any configured seed.
"""

import argparse
import contextlib
import csv
import hashlib
import os
import sys
from pathlib import Path

from . import __version__, jsonio, nn_core, trainer, vimp
from .data_model import (
    SplitAssignment,
    load_dataset,
    load_raw_table,
    save_dataset,
    save_raw_table,
)
from .metrics import METRIC_NAMES, EvalReport, evaluate_predictions, winner_ranking
from .preprocess import preprocess_raw
from .synthgen import SynthConfig, generate
from .trainer import MODEL_KINDS, TrainConfig, train_model
from .vimp import importance_report

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

PIPELINE_STAGES = ("generate", "preprocess", "train", "evaluate", "importance", "report")


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


def derive_seed(global_seed: int, stage: str) -> int:
    """Stage seed = first 8 bytes of sha256("<seed>:<stage>"), mod 2^63."""
    digest = hashlib.sha256(f"{global_seed}:{stage}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % (2**63)


def resolve_seed(configured: int) -> int:
    env = os.environ.get("MASKTAB_SEED")
    if env is None:
        return configured
    try:
        return int(env)
    except ValueError as exc:
        raise ConfigError(f"MASKTAB_SEED is not an integer: {env!r}") from exc


def _load_json(path, what: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{what} not found: {p}")
    try:
        return jsonio.load(p)
    except Exception as exc:
        raise ConfigError(f"could not parse {what} {p}: {exc}") from exc


def _require_dir(path, what: str, hint: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise DataError(f"{what} not found: {p} ({hint})")
    return p


def _require_file(path, what: str, hint: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"{what} not found: {p} ({hint})")
    return p


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Individual commands
# ---------------------------------------------------------------------------

def cmd_generate(args) -> int:
    cfg_dict = _load_json(args.config, "synthesis config") if args.config else {}
    try:
        cfg = SynthConfig.from_dict(cfg_dict)
        cfg.seed = resolve_seed(cfg.seed)
        raw = generate(cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    save_raw_table(raw, args.out)
    print(f"generate: wrote raw table ({raw.n_samples} samples) to {args.out}")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    raw_dir = _require_dir(args.inp, "raw table directory", "run `masktab generate` first")
    raw = load_raw_table(raw_dir)
    seed = resolve_seed(args.seed)
    try:
        ds, split, report = preprocess_raw(
            raw, test_fraction=args.test_fraction,
            val_fraction_of_train=args.val_fraction, seed=seed,
        )
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    out = Path(args.out)
    save_dataset(ds, out)
    split.save(out / "split.json")
    report.save(out / "preprocess_report.json")
    print(
        f"preprocess: {ds.n_samples} rows, {ds.n_features} encoded columns, "
        f"{len(split.test_rows)} test rows -> {out}"
    )
    return EXIT_OK


def _load_dataset_and_split(dataset_dir, split_path):
    ds_dir = _require_dir(dataset_dir, "dataset directory", "run `masktab preprocess` first")
    ds = load_dataset(ds_dir)
    split_file = _require_file(split_path, "split file", "run `masktab preprocess` first")
    split = SplitAssignment.load(split_file)
    bad = split.violations(ds.blocks)
    if bad:
        raise DataError(f"invalid split for dataset: {'; '.join(bad)}")
    return ds, split


def cmd_train(args) -> int:
    ds, split = _load_dataset_and_split(args.dataset, args.split)
    cfg_dict = _load_json(args.config, "train config") if args.config else {}
    try:
        cfg = TrainConfig.from_dict(cfg_dict)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad train config: {exc}") from exc
    cfg.seed = resolve_seed(cfg.seed)
    if args.model not in MODEL_KINDS:
        raise ConfigError(f"unknown model {args.model!r}; expected one of {MODEL_KINDS}")
    params, history = train_model(ds, split, cfg, args.model)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    nn_core.save_checkpoint(params, out, extra={"model": args.model, "seed": cfg.seed})
    history.save(out.parent / f"{out.stem}_history.json")
    print(
        f"train[{args.model}]: stopped at epoch {history.stopped_epoch}, "
        f"best epoch {history.best_epoch}, best val loss "
        f"{history.best_val_loss:.6f} -> {out}"
    )
    return EXIT_OK


def cmd_evaluate(args) -> int:
    ds, split = _load_dataset_and_split(args.dataset, args.split)
    ckpt = _require_file(args.ckpt, "checkpoint", "run `masktab train` first")
    params, _ = nn_core.load_checkpoint(ckpt)
    rows = split.test_rows
    cont_hat, bin_prob = trainer.predict(params, ds.X[rows])
    report = evaluate_predictions(
        ds.Y_cont[rows], ds.Y_bin[rows], ds.M[rows], cont_hat, bin_prob,
        ds.response_names, threshold=args.threshold,
    )
    report.save(args.out)
    avg = report.averages()
    shown = ", ".join(
        f"{k}={avg[k]:.4f}" if avg[k] is not None else f"{k}=n/a" for k in METRIC_NAMES
    )
    print(f"evaluate: {shown} -> {args.out}")
    return EXIT_OK


def cmd_importance(args) -> int:
    ds, split = _load_dataset_and_split(args.dataset, args.split)
    ckpt = _require_file(args.ckpt, "checkpoint", "run `masktab train` first")
    params, _ = nn_core.load_checkpoint(ckpt)
    seed = resolve_seed(args.seed)
    report = importance_report(
        params, ds, split.test_rows, mode=args.mode, n_repeats=args.repeats, seed=seed,
    )
    report.save(args.out)
    ranking = vimp.rank_importance(report)
    top = ranking["regression"][:3]
    shown = ", ".join(f"{e['group']} (+{e['importance_pct']:.1f}%)" for e in top)
    print(f"importance[{args.mode}]: top regression groups: {shown} -> {args.out}")
    return EXIT_OK


def _written_report_files(out_dir: Path) -> dict[str, Path]:
    return {
        "json": out_dir / "report.json",
        "csv": out_dir / "report.csv",
        "txt": out_dir / "report_summary.txt",
    }


def build_report(artifact_dir) -> tuple[dict, str]:
    """Aggregate evaluation artifacts into the model-comparison report."""
    art = Path(artifact_dir)
    eval_files = sorted(art.glob("eval_*.json"))
    if not eval_files:
        raise DataError(f"no eval_*.json artifacts in {art} (run `masktab evaluate` first)")
    reports = {p.stem[len("eval_"):]: EvalReport.load(p) for p in eval_files}
    if len(reports) >= 2:
        ranking = winner_ranking(reports)
    else:
        only = next(iter(reports))
        ranking = {
            "version": 1,
            "total_pairs": sum(
                1 for r in reports[only].per_response for m in METRIC_NAMES
                if r.metric(m) is not None
            ),
            "wins": {only: None},
            "win_percentages": {only: 100.0},
            "ties": [],
        }
    rows = []
    for name in sorted(reports):
        avg = reports[name].averages()
        rows.append({"model": name, **{m: avg[m] for m in METRIC_NAMES}})

    width = max(len(r["model"]) for r in rows)
    lines = [
        f"{'model'.ljust(width)}  " + "  ".join(f"{m.upper():>8}" for m in METRIC_NAMES)
    ]
    for r in rows:
        cells = "  ".join(
            f"{r[m]:8.4f}" if r[m] is not None else f"{'n/a':>8}" for m in METRIC_NAMES
        )
        lines.append(f"{r['model'].ljust(width)}  {cells}")
    lines.append("")
    lines.append("win percentages:")
    for name, pct in sorted(ranking["win_percentages"].items()):
        lines.append(f"  {name.ljust(width)}  {pct:6.1f}%")
    text = "\n".join(lines) + "\n"
    aggregate = {"version": 1, "models": rows, "ranking": ranking}
    return aggregate, text


def write_report(artifact_dir) -> tuple[dict, str]:
    """Build the comparison report and write its JSON/CSV/text variants."""
    aggregate, text = build_report(artifact_dir)
    files = _written_report_files(Path(artifact_dir))
    jsonio.dump(aggregate, files["json"])
    with open(files["csv"], "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", *METRIC_NAMES, "win_pct"])
        for row in aggregate["models"]:
            w.writerow(
                [row["model"]]
                + [
                    jsonio.format_float(row[m]) if row[m] is not None else ""
                    for m in METRIC_NAMES
                ]
                + [jsonio.format_float(aggregate["ranking"]["win_percentages"][row["model"]])]
            )
    files["txt"].write_text(text, encoding="utf-8")
    return aggregate, text


def cmd_report(args) -> int:
    _, text = write_report(args.artifacts)
    print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------

DEFAULT_PIPELINE = {
    "seed": 0,
    "synth": {},
    "preprocess": {"test_fraction": 0.2, "val_fraction_of_train": 0.2},
    "train": {},
    "models": list(MODEL_KINDS),
    "importance": {"mode": "grouped", "repeats": 30},
    "threshold": 0.5,
}


class _Manifest:
    def __init__(self, path: Path, global_seed: int, stage_seeds: dict[str, int]):
        self.path = path
        self.doc = {
            "version": 1,
            "package_version": __version__,
            "global_seed": global_seed,
            "stage_seeds": stage_seeds,
            "stages": {},
            "completed": [],
        }
        if path.exists():
            try:
                existing = jsonio.load(path)
                if (
                    existing.get("global_seed") == global_seed
                    and existing.get("stage_seeds") == stage_seeds
                    and existing.get("package_version") == __version__
                ):
                    self.doc = existing
            except Exception:
                pass  # stale manifest; rebuild from scratch

    def stage_is_current(self, name: str, config_fp: str, root: Path) -> bool:
        rec = self.doc["stages"].get(name)
        if not rec or rec.get("config") != config_fp:
            return False
        for rel, digest in rec.get("outputs", {}).items():
            p = root / rel
            if not p.is_file() or sha256_file(p) != digest:
                return False
        return True

    def record(self, name: str, config_fp: str, outputs: list[Path], root: Path) -> None:
        rec = {
            "config": config_fp,
            "outputs": {
                str(p.relative_to(root)): sha256_file(p) for p in sorted(outputs)
            },
        }
        self.doc["stages"][name] = rec
        if name not in self.doc["completed"]:
            self.doc["completed"] = [s for s in PIPELINE_STAGES if s in set(self.doc["completed"]) | {name}]
        self.save()

    def save(self) -> None:
        jsonio.dump(self.doc, self.path)


def _fingerprint(obj) -> str:
    return hashlib.sha256(jsonio.dumps(obj).encode("utf-8")).hexdigest()


@contextlib.contextmanager
def _stage_scope(name: str):
    """Re-raise stage failures with the failing stage named."""
    try:
        yield
    except (ConfigError, DataError, FloatingPointError) as exc:
        raise type(exc)(f"stage '{name}' failed: {exc}") from exc
    except Exception as exc:
        raise DataError(f"stage '{name}' failed: {exc}") from exc


def run_pipeline(config: dict, out_dir, force: bool = False) -> Path:
    """Run generate -> preprocess -> train -> evaluate -> importance -> report.

    Completed stages with unchanged config and intact outputs are skipped
    unless force is set. Returns the artifact directory.
    """
    cfg = {**DEFAULT_PIPELINE, **config}
    unknown = set(cfg) - set(DEFAULT_PIPELINE)
    if unknown:
        raise ConfigError(f"unknown pipeline config keys: {sorted(unknown)}")
    models = list(cfg["models"])
    for m in models:
        if m not in MODEL_KINDS:
            raise ConfigError(f"unknown model {m!r} in pipeline config")
    if not models:
        raise ConfigError("pipeline config lists no models")

    global_seed = resolve_seed(int(cfg["seed"]))
    stage_seeds = {
        "generate": derive_seed(global_seed, "generate"),
        "preprocess": derive_seed(global_seed, "preprocess"),
        **{f"train:{m}": derive_seed(global_seed, f"train:{m}") for m in models},
        "importance": derive_seed(global_seed, "importance"),
    }

    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    manifest = _Manifest(root / "manifest.json", global_seed, stage_seeds)

    # generate
    synth_cfg = SynthConfig.from_dict(dict(cfg["synth"]))
    synth_cfg.seed = stage_seeds["generate"]
    gen_fp = _fingerprint(synth_cfg.to_dict())
    raw_dir = root / "raw"
    raw_outputs = [raw_dir / n for n in ("raw.csv", "responses.csv", "loq.json", "meta.json")]
    if force or not manifest.stage_is_current("generate", gen_fp, root):
        with _stage_scope("generate"):
            raw = generate(synth_cfg)
            save_raw_table(raw, raw_dir)
        manifest.record("generate", gen_fp, raw_outputs, root)

    # preprocess
    pre_cfg = {**DEFAULT_PIPELINE["preprocess"], **dict(cfg["preprocess"])}
    pre_fp = _fingerprint({"pre": pre_cfg, "seed": stage_seeds["preprocess"], "raw": gen_fp})
    ds_dir = root / "dataset"
    ds_outputs = [
        ds_dir / n
        for n in (
            "features.csv", "responses_cont.csv", "responses_bin.csv", "mask.csv",
            "blocks.csv", "schema.json", "split.json", "preprocess_report.json",
        )
    ]
    if force or not manifest.stage_is_current("preprocess", pre_fp, root):
        with _stage_scope("preprocess"):
            raw = load_raw_table(raw_dir)
            ds, split, report = preprocess_raw(
                raw,
                test_fraction=float(pre_cfg["test_fraction"]),
                val_fraction_of_train=float(pre_cfg["val_fraction_of_train"]),
                seed=stage_seeds["preprocess"],
            )
            save_dataset(ds, ds_dir)
            split.save(ds_dir / "split.json")
            report.save(ds_dir / "preprocess_report.json")
        manifest.record("preprocess", pre_fp, ds_outputs, root)

    # train (all requested models under one stage)
    train_fps = {}
    ckpts = {}
    train_outputs = []
    for m in models:
        t_cfg = TrainConfig.from_dict(dict(cfg["train"]))
        t_cfg.seed = stage_seeds[f"train:{m}"]
        train_fps[m] = _fingerprint({"train": t_cfg.to_dict(), "dataset": pre_fp, "model": m})
        ckpts[m] = root / f"ckpt_{m}.json"
        train_outputs += [ckpts[m], root / f"ckpt_{m}_history.json"]
    train_fp = _fingerprint(train_fps)
    if force or not manifest.stage_is_current("train", train_fp, root):
        with _stage_scope("train"):
            ds = load_dataset(ds_dir)
            split = SplitAssignment.load(ds_dir / "split.json")
            for m in models:
                t_cfg = TrainConfig.from_dict(dict(cfg["train"]))
                t_cfg.seed = stage_seeds[f"train:{m}"]
                params, history = train_model(ds, split, t_cfg, m)
                nn_core.save_checkpoint(params, ckpts[m], extra={"model": m, "seed": t_cfg.seed})
                history.save(root / f"ckpt_{m}_history.json")
        manifest.record("train", train_fp, train_outputs, root)

    # evaluate
    eval_fp = _fingerprint({"train": train_fp, "threshold": cfg["threshold"]})
    eval_outputs = [root / f"eval_{m}.json" for m in models] + [root / "winners.json"]
    if force or not manifest.stage_is_current("evaluate", eval_fp, root):
        with _stage_scope("evaluate"):
            ds = load_dataset(ds_dir)
            split = SplitAssignment.load(ds_dir / "split.json")
            rows = split.test_rows
            reports = {}
            for m in models:
                params, _ = nn_core.load_checkpoint(ckpts[m])
                cont_hat, bin_prob = trainer.predict(params, ds.X[rows])
                rep = evaluate_predictions(
                    ds.Y_cont[rows], ds.Y_bin[rows], ds.M[rows], cont_hat, bin_prob,
                    ds.response_names, threshold=float(cfg["threshold"]),
                )
                rep.save(root / f"eval_{m}.json")
                reports[m] = rep
            if len(models) >= 2:
                ranking = winner_ranking(reports)
            else:
                ranking = {"version": 1, "total_pairs": 0, "wins": {models[0]: None},
                           "win_percentages": {models[0]: 100.0}, "ties": []}
            jsonio.dump(ranking, root / "winners.json")
        manifest.record("evaluate", eval_fp, eval_outputs, root)

    # importance for the winning model
    ranking = jsonio.load(root / "winners.json")
    best = max(sorted(ranking["win_percentages"]), key=lambda m: ranking["win_percentages"][m])
    imp_cfg = {**DEFAULT_PIPELINE["importance"], **dict(cfg["importance"])}
    imp_fp = _fingerprint(
        {"imp": imp_cfg, "seed": stage_seeds["importance"], "eval": eval_fp, "best": best}
    )
    imp_outputs = [root / "importance.json"]
    if force or not manifest.stage_is_current("importance", imp_fp, root):
        with _stage_scope("importance"):
            ds = load_dataset(ds_dir)
            split = SplitAssignment.load(ds_dir / "split.json")
            params, _ = nn_core.load_checkpoint(ckpts[best])
            report = importance_report(
                params, ds, split.test_rows,
                mode=imp_cfg["mode"], n_repeats=int(imp_cfg["repeats"]),
                seed=stage_seeds["importance"],
            )
            report.save(root / "importance.json")
        manifest.record("importance", imp_fp, imp_outputs, root)

    # report
    rep_fp = _fingerprint({"eval": eval_fp, "imp": imp_fp})
    rep_outputs = list(_written_report_files(root).values())
    if force or not manifest.stage_is_current("report", rep_fp, root):
        with _stage_scope("report"):
            write_report(root)
        manifest.record("report", rep_fp, rep_outputs, root)

    return root


def cmd_pipeline(args) -> int:
    config = _load_json(args.config, "pipeline config") if args.config else {}
    run_pipeline(config, args.out, force=args.force)
    print(f"pipeline: all stages complete -> {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="masktab",
        description="Masked multi-task learning on partially observed tabular responses.",
    )
    parser.add_argument("--version", action="version", version=f"masktab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic raw table")
    p.add_argument("--config", help="synthesis config JSON (defaults used when omitted)")
    p.add_argument("--out", required=True, help="output raw-table directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("preprocess", help="encode a raw table and split it")
    p.add_argument("--in", dest="inp", required=True, help="raw-table directory")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--test-fraction", type=float, default=0.2, dest="test_fraction")
    p.add_argument("--val-fraction", type=float, default=0.2, dest="val_fraction",
                   help="fraction of training rows held out for validation")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train one model")
    p.add_argument("--dataset", required=True, help="dataset directory")
    p.add_argument("--split", required=True, help="split JSON file")
    p.add_argument("--model", required=True, choices=MODEL_KINDS)
    p.add_argument("--config", help="train config JSON (defaults used when omitted)")
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on the test rows")
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True, help="output report JSON")
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("importance", help="permutation variable importance")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--mode", choices=("grouped", "per-column"), default="grouped")
    p.add_argument("--repeats", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_importance)

    p = sub.add_parser("report", help="summarise evaluation artifacts")
    p.add_argument("artifacts", help="artifact directory holding eval_*.json")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("pipeline", help="run every stage end to end")
    p.add_argument("--config", help="pipeline config JSON (defaults used when omitted)")
    p.add_argument("--out", required=True, help="artifact directory")
    p.add_argument("--force", action="store_true", help="rerun stages even if current")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"masktab {args.command}: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"masktab {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as exc:
        print(f"masktab {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
