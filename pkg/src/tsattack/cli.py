"""``tsattack prepare | train | attack | evaluate | report``.

Every command reads the same run config and works inside one output
directory::

    <out>/dataset/{train,test,summary}.json
    <out>/model/{checkpoint.json,train_log.csv,summary.json}
    <out>/attacks/<target>__<method>__eps<eps>.{json,csv}
    <out>/eval/ks_eps<eps>.csv, ks.json, sweep.{csv,json}, histograms/*.csv
    <out>/report.md
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .attacks import AttackResult, attack_dataset, check_invariants
from .config import RunConfig, load_config
from .data import (load_csv, load_dataset, prepare_windows, resample_mean, save_dataset,
                   synth_series)
from .errors import EXIT_NUMERIC, EXIT_OK, DataError, TsAttackError
from .evaluation import (KS_PAIRS, detection_rates, histogram, ks_table, loss_distributions,
                         mean_shift, sweep_point)
from .io import SCHEMA_VERSION, atomic_write_text, read_json, write_csv, write_json
from .models import load_checkpoint, rmse, save_checkpoint, train

TRAIN_LOG_HEADER = ("epoch", "train_rmse", "val_rmse", "early_stop")
HIST_HEADER = ("bin_left", "bin_right", "count_original", "count_targeted", "count_untargeted")
SWEEP_HEADER = ("target", "method", "epsilon", "output_rmse", "output_rmse_truth", "mean_l2",
                "mean_linf", "mean_high_freq_ratio")


def result_stem(label: str, method: str, epsilon: float) -> str:
    return f"{label}__{method}__eps{float(epsilon)!r}"


def _paths(cfg: RunConfig) -> dict[str, Path]:
    out = Path(cfg.output)
    return {"dataset": out / "dataset", "model": out / "model", "attacks": out / "attacks",
            "eval": out / "eval", "report": out / "report.md"}


def _require(paths: list[Path], what: str) -> None:
    missing = [str(p) for p in paths if not p.is_file()]
    if missing:
        raise DataError(f"missing {what}: " + ", ".join(missing))


def cmd_prepare(cfg: RunConfig) -> int:
    d = cfg.dataset
    if d.source == "synthetic":
        series = synth_series(d.synthetic_kind, d.length, d.noise, cfg.seed, phi=d.phi,
                              period=d.period)
    else:
        series = load_csv(d.path, d.schema)
    loaded_rows = len(series)
    if d.resample:
        series = resample_mean(series, d.resample)
    tr, te, meta = prepare_windows(series, d.window, d.train_fraction)
    p = _paths(cfg)["dataset"]
    save_dataset(p / "train.json", tr)
    save_dataset(p / "test.json", te)
    summary = {
        "schema_version": SCHEMA_VERSION,
        "kind": "tsattack.dataset_summary",
        "source": d.source,
        "seed": cfg.seed,
        "loaded_rows": loaded_rows,
        "dropped_rows": series.dropped_rows,
        "resample": d.resample,
        "rows": len(series),
        "window": d.window,
        "train_samples": len(tr),
        "test_samples": len(te),
        "feature_names": list(series.feature_names),
        "target": series.feature_names[series.target_index],
        "normalization": meta.to_dict(),
    }
    write_json(p / "summary.json", summary)
    print(f"prepared {len(series)} rows ({series.dropped_rows} dropped, {loaded_rows} loaded): "
          f"{len(tr)} train / {len(te)} test windows -> {p}")
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    p = _paths(cfg)
    _require([p["dataset"] / "train.json", p["dataset"] / "test.json"], "prepared dataset")
    tr = load_dataset(p["dataset"] / "train.json")
    te = load_dataset(p["dataset"] / "test.json")
    mcfg = dataclasses.replace(cfg.model, window=tr.window, num_features=tr.num_features,
                               seed=cfg.seed)
    model, log = train(mcfg, tr, cfg.train)
    save_checkpoint(p["model"] / "checkpoint.json", model, tr.normalization)
    write_csv(p["model"] / "train_log.csv", TRAIN_LOG_HEADER, log.rows())
    test_rmse = rmse(model, te)
    write_json(p["model"] / "summary.json", {
        "schema_version": SCHEMA_VERSION,
        "kind": "tsattack.train_summary",
        "model": dataclasses.asdict(mcfg),
        "epochs_run": len(log.records),
        "best_epoch": log.best_epoch,
        "best_val_rmse": log.best_val_rmse,
        "test_rmse": test_rmse,
    })
    print(f"trained {mcfg.kind}: {len(log.records)} epochs, best epoch {log.best_epoch}, "
          f"test RMSE {test_rmse:.6f}")
    return EXIT_OK


def _attack_plan(cfg: RunConfig) -> list[tuple[str, str, float]]:
    labels = list(cfg.attack.targets) + (["untargeted"] if cfg.attack.untargeted else [])
    return [(label, method, eps) for label in labels for method in cfg.attack.methods
            for eps in cfg.attack.all_epsilons]


def cmd_attack(cfg: RunConfig) -> int:
    p = _paths(cfg)
    _require([p["model"] / "checkpoint.json", p["dataset"] / "test.json"],
             "checkpoint or test dataset")
    model, _ = load_checkpoint(p["model"] / "checkpoint.json")
    te = load_dataset(p["dataset"] / "test.json")
    section = cfg.attack
    if section.tau_quantile is not None:
        tau = float(np.quantile(model.predict(te.X), section.tau_quantile))
        section = dataclasses.replace(section, tau=tau)
        print(f"tau = {tau!r} (quantile {section.tau_quantile} of clean test predictions)")
    n_errors = 0
    for label, method, eps in _attack_plan(cfg):
        spec = section.target_spec(label)
        res = attack_dataset(model, te, spec, section.attack_config(method, eps))
        stem = result_stem(label, method, eps)
        json_path = p["attacks"] / f"{stem}.json"
        res.save(json_path, p["attacks"] / f"{stem}.csv")
        bad = check_invariants(AttackResult.load(json_path))
        if bad:
            raise DataError(f"{stem}: epsilon-ball violated on windows {bad[:10]}")
        for err in res.errors:
            print(f"{stem}: window {err['window']} failed: {err['error']}", file=sys.stderr)
        n_errors += len(res.errors)
        print(f"{stem}: {int(res.attacked.sum())}/{len(res.attacked)} windows attacked, "
              f"mean shift {mean_shift(res):+.6f}")
    if n_errors:
        print(f"{n_errors} window(s) failed", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def _load_results(cfg: RunConfig) -> dict[tuple[str, str, float], AttackResult]:
    p = _paths(cfg)["attacks"]
    if not cfg.attack.untargeted:
        raise DataError("evaluation needs untargeted results; set attack.untargeted = yes")
    plan = _attack_plan(cfg)
    files = {key: p / (result_stem(*key) + ".json") for key in plan}
    _require(list(files.values()), "attack result files")
    return {key: AttackResult.load(f) for key, f in files.items()}


def cmd_evaluate(cfg: RunConfig) -> int:
    results = _load_results(cfg)
    e = cfg.eval
    out = _paths(cfg)["eval"]
    methods = list(cfg.attack.methods)
    ks_doc = {"schema_version": SCHEMA_VERSION, "kind": "tsattack.ks_tables",
              "group_size": e.group_size, "reference": e.reference, "tables": []}
    for eps in cfg.attack.all_epsilons:
        rows, table = [], {}
        for label in cfg.attack.targets:
            row, cells = [label], {}
            for method in methods:
                o, t, u = loss_distributions(results[(label, method, eps)],
                                             results[("untargeted", method, eps)],
                                             e.group_size, e.reference)
                rep = ks_table(o, t, u)
                cells[method] = rep.to_dict()
                row.extend(rep.statistics[pair] for pair in KS_PAIRS)
                edges, counts = histogram([o, t, u], e.bins)
                write_csv(out / "histograms" / (result_stem(label, method, eps) + ".csv"),
                          HIST_HEADER,
                          [(edges[i], edges[i + 1], int(counts["original"][i]),
                            int(counts["targeted"][i]), int(counts["untargeted"][i]))
                           for i in range(len(edges) - 1)])
            rows.append(tuple(row))
            table[label] = cells
        header = ("attack",) + tuple(f"{m}_{pair}" for m in methods for pair in KS_PAIRS)
        write_csv(out / f"ks_eps{float(eps)!r}.csv", header, rows)
        ks_doc["tables"].append({"epsilon": eps, "cells": table})
    write_json(out / "ks.json", ks_doc)

    sweep_rows, curves = [], []
    for label in list(cfg.attack.targets) + ["untargeted"]:
        for method in methods:
            pts = []
            for eps in cfg.attack.all_epsilons:
                res = results[(label, method, eps)]
                sp = sweep_point(res)
                hf = detection_rates({"r": res})["r"]
                sweep_rows.append((label, method, eps, sp.output_rmse, sp.output_rmse_truth,
                                   sp.mean_l2, sp.mean_linf, hf))
                pts.append(dataclasses.asdict(sp) | {"mean_high_freq_ratio": hf})
            curves.append({"target": label, "method": method, "points": pts})
    write_csv(out / "sweep.csv", SWEEP_HEADER, sweep_rows)
    write_json(out / "sweep.json", {"schema_version": SCHEMA_VERSION, "kind": "tsattack.sweep",
                                    "curves": curves})
    print(f"evaluated {len(results)} results -> {out}")
    return EXIT_OK


def _md_table(header, rows) -> list[str]:
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(str(c) for c in r) + " |" for r in rows]
    return lines


def cmd_report(cfg: RunConfig) -> int:
    p = _paths(cfg)
    _require([p["dataset"] / "summary.json", p["model"] / "summary.json",
              p["eval"] / "ks.json"], "pipeline outputs")
    ds = read_json(p["dataset"] / "summary.json")
    tm = read_json(p["model"] / "summary.json")
    ks = read_json(p["eval"] / "ks.json")
    results = _load_results(cfg)
    methods = list(cfg.attack.methods)
    eps_t = cfg.eval.table_epsilon
    tables = {t["epsilon"]: t["cells"] for t in ks["tables"]}
    if eps_t not in tables:
        raise DataError(f"eval.table_epsilon {eps_t} is not among the attacked epsilons")

    L = ["# tsattack run report", "", f"- seed: {cfg.seed}", f"- toolkit version: {__version__}",
         "", "## Config", "", "```ini", cfg.source_text.strip(), "```", "", "## Dataset", ""]
    L += [f"- source: {ds['source']}", f"- rows: {ds['rows']} (loaded {ds['loaded_rows']}, "
          f"dropped {ds['dropped_rows']}, resample {ds['resample']})",
          f"- window: {ds['window']}", f"- windows: {ds['train_samples']} train, "
          f"{ds['test_samples']} test", f"- target feature: {ds['target']}", "",
          "## Model", "", f"- kind: {tm['model']['kind']}",
          f"- epochs run: {tm['epochs_run']} (best {tm['best_epoch']})",
          f"- best validation RMSE: {tm['best_val_rmse']:.6f}",
          f"- test RMSE: {tm['test_rmse']:.6f}", "",
          "## Mean prediction shift (adversarial minus clean)", ""]
    shift_rows = []
    for label in list(cfg.attack.targets) + ["untargeted"]:
        for method in methods:
            shift_rows.append([label, method] + [f"{mean_shift(results[(label, method, e)]):+.5f}"
                                                 for e in cfg.attack.all_epsilons])
    L += _md_table(["attack", "method"] + [f"eps={e!r}" for e in cfg.attack.all_epsilons],
                   shift_rows)

    L += ["", f"## KS distances at eps={eps_t!r}", ""]
    ks_rows = []
    for label in cfg.attack.targets:
        ks_rows.append([label] + [f"{tables[eps_t][label][m]['statistics'][pair]:.4f}"
                                  for m in methods for pair in KS_PAIRS])
    L += _md_table(["attack"] + [f"{m} {pair}" for m in methods for pair in KS_PAIRS], ks_rows)

    L += ["", "## Detectability verdicts", ""]
    for label in cfg.attack.targets:
        for m in methods:
            st = tables[eps_t][label][m]["statistics"]
            verdict = "YES" if st["O-T"] < st["O-U"] else "NO"
            L.append(f"- {label} / {m}: targeted statistically closer than untargeted: {verdict} "
                     f"(O-T {st['O-T']:.4f}, O-U {st['O-U']:.4f})")

    if "mapgd" in methods:
        L += ["", "## mAPGD step-size halvings", ""]
        rows = []
        for label in list(cfg.attack.targets) + ["untargeted"]:
            rows.append([label] + [str(sum(len(h) for h in results[(label, "mapgd", e)].halvings))
                                   for e in cfg.attack.all_epsilons])
        L += _md_table(["attack"] + [f"eps={e!r}" for e in cfg.attack.all_epsilons], rows)

    L += ["", "## Window failures", ""]
    failures = [(result_stem(*k), err) for k, r in results.items() for err in r.errors]
    L += [f"- {stem}: window {err['window']}: {err['error']}" for stem, err in failures] \
        or ["- none"]
    atomic_write_text(p["report"], "\n".join(L) + "\n")
    print(f"report -> {p['report']}")
    return EXIT_OK


COMMANDS = {"prepare": cmd_prepare, "train": cmd_train, "attack": cmd_attack,
            "evaluate": cmd_evaluate, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tsattack",
                                 description="Targeted adversarial attacks on forecasters.")
    ap.add_argument("--version", action="version", version=f"tsattack {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sp = sub.add_parser(name, help=fn.__name__.removeprefix("cmd_"))
        sp.add_argument("--config", required=True, help="run config (INI)")
        sp.add_argument("--out", help="output directory (overrides run.output)")
        sp.add_argument("--seed", type=int, help="global seed (overrides run.seed)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed=args.seed, output=args.out)
        return COMMANDS[args.command](cfg)
    except TsAttackError as exc:
        print(f"tsattack {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
