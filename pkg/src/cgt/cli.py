"""Command-line entry point: ``cgt <command> --config <path> [--key=value ...]``.

Configuration precedence, lowest first: TrainConfig defaults, the JSON config
file, ``$CGT_SEED``, then ``--key=value`` flags.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields
from pathlib import Path

import numpy as np

from .data import DatasetBundle, DatasetError, convert_linqs, degree_corrected_sbm, find_dataset, load_dataset, two_triangles
from .graph import Graph
from .records import MetricsRecord
from .training import ABLATION_GRID, DivergenceError, TrainConfig, pretrain, run_classification, train_cluster

log = logging.getLogger("cgt")

COMMANDS = ("pretrain", "classify", "cluster", "fairness", "ablate", "sweep", "convert-linqs")
# config keys that are not TrainConfig fields
EXTRA_KEYS = ("dataset",)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUN = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


def _coerce(key: str, raw, kind):
    if kind is bool or kind == "bool":
        if isinstance(raw, bool):
            return raw
        text = str(raw).strip().lower()
        if text in ("1", "true", "yes", "on"):
            return True
        if text in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if kind is int or kind == "int":
            if isinstance(raw, float) and not raw.is_integer():
                raise ValueError
            return int(raw)
        if kind is float or kind == "float":
            return float(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot interpret {raw!r} as {kind if isinstance(kind, str) else kind.__name__}") from None
    return str(raw)


_FIELD_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _check_keys(keys, source: str) -> None:
    unknown = sorted(set(keys) - set(_FIELD_TYPES) - set(EXTRA_KEYS))
    if unknown:
        valid = ", ".join(sorted(list(_FIELD_TYPES) + list(EXTRA_KEYS)))
        raise ConfigError(f"unknown config key(s) in {source}: {', '.join(unknown)}. Valid keys: {valid}")


def parse_overrides(tokens: list[str]) -> dict[str, str]:
    """``--key=value`` / ``--key value`` pairs left over by argparse."""
    out: dict[str, str] = {}
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--") or tok == "--":
            raise ConfigError(f"unexpected argument {tok!r}")
        body = tok[2:]
        if "=" in body:
            key, value = body.split("=", 1)
        elif i + 1 < len(tokens) and not tokens[i + 1].startswith("--"):
            key, value = body, tokens[i + 1]
            i += 1
        else:
            raise ConfigError(f"--{body} needs a value")
        out[key.replace("-", "_")] = value
        i += 1
    _check_keys(out, "command-line overrides")
    return out


def load_config(path, overrides: dict | None = None, env=None) -> tuple[TrainConfig, str | None]:
    """Build a TrainConfig and the dataset name from file, environment and overrides."""
    env = os.environ if env is None else env
    data: dict = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        _check_keys(data, str(path))
    if env.get("CGT_SEED") not in (None, ""):
        data["seed"] = _coerce("CGT_SEED", env["CGT_SEED"], int)
    data.update(overrides or {})
    dataset = data.pop("dataset", None)
    values = {k: _coerce(k, v, _FIELD_TYPES[k]) for k, v in data.items()}
    try:
        return TrainConfig(**values), dataset
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


SYNTHETIC = {
    "two_triangles": lambda: two_triangles("community"),
    "two_triangles_eye": lambda: two_triangles("eye"),
    "dcsbm": lambda: degree_corrected_sbm(300, seed=0),
}


def resolve_dataset(name: str | None) -> Graph:
    """A bundle directory, a name under ``$CGT_DATA_DIR`` or a built-in synthetic graph."""
    if not name:
        raise DatasetError("no dataset given (use --dataset or a 'dataset' config key)")
    if Path(name).is_dir():
        g, report = load_dataset(DatasetBundle.from_dir(name))
    elif (bundle := find_dataset(name)) is not None:
        g, report = load_dataset(bundle)
    elif name in SYNTHETIC:
        return SYNTHETIC[name]()
    else:
        raise DatasetError(f"dataset {name!r} not found as a directory, under $CGT_DATA_DIR, "
                           f"or among built-ins ({', '.join(SYNTHETIC)})")
    log.info("loaded %s: %d nodes, %d edges (%d duplicates, %d self-loops dropped)",
             g.name, report.nodes, report.edges, report.duplicates_dropped, report.self_loops_dropped)
    return g


# ---------------------------------------------------------------------------
# single runs

def _curves(history: list[dict], keys) -> dict[str, list[float]]:
    return {k: [float(h[k]) for h in history] for k in keys if history and k in history[0]}


def _record(task: str, dataset: str, cfg: TrainConfig, metrics: dict, curves: dict, started: float,
            variant: str = "full") -> MetricsRecord:
    config = cfg.to_dict()
    return MetricsRecord(MetricsRecord.make_id(task, dataset, config, variant), task, dataset, cfg.seed, config,
                         metrics, curves, time.perf_counter() - started, variant)


def run_pretrain(g: Graph, cfg: TrainConfig, variant: str = "full") -> MetricsRecord:
    t0 = time.perf_counter()
    hist = pretrain(g, cfg).history
    metrics = {"initial_loss": hist[0]["total"], "final_loss": hist[-1]["total"]}
    return _record("pretrain", g.name, cfg, metrics,
                   _curves(hist, ("total", "transition", "feature", "bce")), t0, variant)


def run_classify(g: Graph, cfg: TrainConfig, variant: str = "full", task: str = "classify") -> MetricsRecord:
    if g.labels is None:
        raise DatasetError(f"dataset {g.name!r} has no labels; classification needs labels.tsv")
    t0 = time.perf_counter()
    res, pre_hist = run_classification(g, cfg)
    metrics = {
        "accuracy": res.accuracy,
        "val_accuracy": res.val_accuracy,
        "best_epoch": res.best_epoch,
        "split_sizes": [len(res.split.train), len(res.split.val), len(res.split.test)],
        "fairness": res.fairness.to_dict(),
    }
    curves = {"pretrain_" + k: v for k, v in _curves(pre_hist, ("total",)).items()}
    curves.update({"finetune_" + k: v for k, v in _curves(res.history, ("loss", "val_accuracy")).items()})
    return _record(task, g.name, cfg, metrics, curves, t0, variant)


def run_cluster(g: Graph, cfg: TrainConfig, variant: str = "full") -> MetricsRecord:
    t0 = time.perf_counter()
    res = train_cluster(g, cfg)
    metrics = {"conductance": res.conductance, "modularity": res.modularity,
               "clusters_used": int(len(np.unique(res.assign))), "notes": res.notes}
    return _record("cluster", g.name, cfg, metrics, _curves(res.history, ("loss",)), t0, variant)


def ablation_variant(flags: dict) -> str:
    short = {"use_pretrain": "pre", "use_augmentation": "aug", "use_community_attention": "att"}
    return "_".join(f"{short[k]}{int(v)}" for k, v in flags.items())


def jobs_for(command: str, cfg: TrainConfig, sweep_param: str | None = None, sweep_values=()):
    """(callable name, config, variant) triples for one seed."""
    if command == "pretrain":
        return [(run_pretrain, cfg, "full")]
    if command == "classify":
        return [(run_classify, cfg, "full")]
    if command == "cluster":
        return [(run_cluster, cfg, "full")]
    if command == "fairness":
        return [(run_classify, cfg, "full"),
                (run_classify, cfg.replace(use_augmentation=False), "no_augmentation")]
    if command == "ablate":
        return [(run_classify, cfg.replace(**flags), ablation_variant(flags)) for flags in ABLATION_GRID]
    if command == "sweep":
        kind = _FIELD_TYPES[sweep_param]
        return [(run_classify, cfg.replace(**{sweep_param: _coerce(sweep_param, v, kind)}), f"{sweep_param}={v}")
                for v in sweep_values]
    raise ConfigError(f"unknown command {command!r}")


def execute(command: str, g: Graph, cfg: TrainConfig, repeats: int = 1, out_dir=None,
            sweep_param: str | None = None, sweep_values=(), workers: int = 1) -> list[MetricsRecord]:
    """Run every job for seeds ``cfg.seed .. cfg.seed + repeats - 1``; write records when ``out_dir`` is set."""
    jobs = []
    for r in range(repeats):
        seeded = cfg.replace(seed=cfg.seed + r)
        jobs.extend(jobs_for(command, seeded, sweep_param, sweep_values))
    task = "fairness" if command == "fairness" else None

    def go(job):
        fn, c, variant = job
        if task and fn is run_classify:
            return fn(g, c, variant, task=task)
        return fn(g, c, variant)

    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(go, jobs))
    else:
        records = [go(j) for j in jobs]
    if out_dir is not None:
        for rec in records:
            rec.write(out_dir)
    return records


def summarize(records: list[MetricsRecord]) -> dict[str, dict]:
    """Mean and sample std of scalar metrics, grouped by variant."""
    groups: dict[str, dict[str, list[float]]] = {}
    for rec in records:
        g = groups.setdefault(rec.variant, {})
        for k, v in rec.metrics.items():
            if isinstance(v, (int, float)) and not isinstance(v, bool):
                g.setdefault(k, []).append(float(v))
    out = {}
    for variant, metrics in groups.items():
        out[variant] = {k: {"mean": float(np.mean(v)), "std": float(np.std(v, ddof=1)) if len(v) > 1 else 0.0,
                            "n": len(v)} for k, v in metrics.items()}
    return out


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cgt", description="Community-aware graph transformer experiments.", allow_abbrev=False,
                                epilog="Any TrainConfig field can be overridden with --key=value.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON file mirroring TrainConfig (plus an optional 'dataset' key)")
    p.add_argument("--dataset", help="bundle directory, name under $CGT_DATA_DIR, or a built-in synthetic graph")
    p.add_argument("--repeats", type=int, default=1, help="number of seeds, starting at the configured seed")
    p.add_argument("--workers", type=int, default=1, help="threads used to fan out repeats")
    p.add_argument("--out-dir", default="runs", help="directory for run_<id>.json and fairness_<id>.csv")
    p.add_argument("--param", help="sweep: TrainConfig field to vary")
    p.add_argument("--values", help="sweep: comma-separated values")
    p.add_argument("--content", help="convert-linqs: path to the .content file")
    p.add_argument("--cites", help="convert-linqs: path to the .cites file")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, rest = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "convert-linqs":
            if not (args.content and args.cites):
                raise ConfigError("convert-linqs needs --content and --cites")
            bundle, report = convert_linqs(args.content, args.cites, args.out_dir)
            print(f"wrote {bundle.edges.parent}: {report.nodes} nodes, {report.edges} edges; "
                  + "; ".join(report.notes))
            return EXIT_OK
        overrides = parse_overrides(rest)
        if args.dataset:
            overrides["dataset"] = args.dataset
        cfg, dataset = load_config(args.config, overrides)
        if args.repeats < 1:
            raise ConfigError("--repeats must be >= 1")
        values: list[str] = []
        if args.command == "sweep":
            if not args.param or not args.values:
                raise ConfigError("sweep needs --param and --values")
            _check_keys([args.param], "--param")
            if args.param in EXTRA_KEYS:
                raise ConfigError(f"cannot sweep over {args.param!r}")
            values = [v.strip() for v in args.values.split(",") if v.strip()]
            for v in values:
                cfg.replace(**{args.param: _coerce(args.param, v, _FIELD_TYPES[args.param])})
        g = resolve_dataset(dataset)
        records = execute(args.command, g, cfg, args.repeats, args.out_dir, args.param, values, args.workers)
    except ConfigError as exc:
        print(f"cgt: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, FileNotFoundError) as exc:
        print(f"cgt: dataset error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DivergenceError, ValueError) as exc:
        print(f"cgt: run failed: {exc}", file=sys.stderr)
        return EXIT_RUN
    for rec in records:
        shown = {k: v for k, v in rec.metrics.items() if isinstance(v, (int, float))}
        print(f"{rec.task} {rec.dataset} seed={rec.seed} variant={rec.variant} run_{rec.run_id}.json "
              + " ".join(f"{k}={v:.4f}" for k, v in shown.items()))
    if args.repeats > 1:
        summary = summarize(records)
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        (Path(args.out_dir) / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                                         encoding="utf-8")
        for variant, metrics in summary.items():
            for k, s in metrics.items():
                print(f"summary variant={variant} {k}={s['mean']:.4f}±{s['std']:.4f} (n={s['n']})")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
