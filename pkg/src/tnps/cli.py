"""Command-line frontend: search / count / synth / fit / bench.

Conventions: machine-readable output goes to stdout and files, human-readable
progress to stderr. Exit codes: 0 success, 2 I/O error, 3 config/validation
error, 4 search or benchmark failure. An optional --config JSON overrides
defaults; explicit flags override the JSON; re-running a dumped config with
the same seed reproduces result files byte-identically.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .estimators import search_fit_config
from .fitting import FitConfig, fit, masked_rse, rse
from .graphs import count_space, load_graph, make_template
from .model import (
    TnModel,
    contract_network,
    efficiency,
    generate_synthetic,
    param_count,
    phi,
    save_model,
    structure_from_dict,
    structure_to_dict,
)
from .search import GaConfig, SearchConfig, SearchResult, tnga_plus, tnls
from .tensor import load_tensor, save_tnsb
from .validation import as_seed

EXIT_OK = 0
EXIT_IO = 2
EXIT_CONFIG = 3
EXIT_SEARCH = 4


def _say(msg: str) -> None:
    print(msg, file=sys.stderr)


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _template_from(cfg: dict):
    ref = cfg.get("template")
    if ref is None:
        raise ValueError("a template is required (--template)")
    if str(ref).endswith(".graph"):
        return load_graph(ref), str(ref)
    n = cfg.get("n")
    graph = make_template(str(ref), int(n) if n is not None else None)
    label = str(ref) if ":" in str(ref) or n is None else f"{ref}:{int(n)}"
    return graph, label


def _merge(defaults: dict, config: dict | None, flags: dict) -> dict:
    """defaults < config-file < explicit flags; nested dicts merge key-wise."""
    out = json.loads(json.dumps(defaults))
    for layer in (config or {}, flags):
        for key, val in layer.items():
            if val is None:
                continue
            if isinstance(val, dict) and isinstance(out.get(key), dict):
                for k2, v2 in val.items():
                    if v2 is not None:
                        out[key][k2] = v2
            else:
                out[key] = val
    return out


def _fit_cfg_from(d: dict, seed: int) -> FitConfig:
    return FitConfig(
        learning_rate=d["learning_rate"], max_steps=int(d["max_steps"]),
        restarts=int(d["restarts"]), init_std=d["init_std"],
        tolerance=d["tolerance"], seed=seed,
        plateau_window=int(d["plateau_window"]), plateau_rtol=d["plateau_rtol"],
        restart_gate=d["restart_gate"])


_SEARCH_FIT_DEFAULTS = {
    "learning_rate": 0.01, "max_steps": 4000, "restarts": 4,
    "init_std": math.sqrt(0.1), "tolerance": 1e-5,
    "plateau_window": 250, "plateau_rtol": 2e-2, "restart_gate": 1e-2,
}
_REFINE_FIT_DEFAULTS = {
    "learning_rate": 0.01, "max_steps": 12_000, "restarts": 6,
    "init_std": math.sqrt(0.1), "tolerance": 1e-5,
    "plateau_window": 1000, "plateau_rtol": 1e-3, "restart_gate": None,
}
_GA_DEFAULTS = {
    "population": 150, "generations": 30, "elimination_rate": 0.36,
    "elites": 2, "alpha": 20.0, "beta": 1.0, "mutation_rate": 0.24,
}


def _result_payload(result: SearchResult, dims, template_ref: str,
                    truth_structure=None) -> dict:
    payload = {
        "structure": structure_to_dict(result.structure, template_ref),
        "loss": result.loss,
        "rse": result.rse,
        "phi": result.phi,
        "param_count": result.param_count,
        "evaluations": result.evaluations,
        "seed": result.seed,
    }
    if truth_structure is not None:
        payload["eff"] = efficiency(result.structure, truth_structure, dims)
    return payload


def _write_trace(result: SearchResult, path: Path) -> None:
    lines = ["iteration,evaluations,best_loss,best_rse,best_phi"]
    for row in result.trace:
        lines.append(f"{row.iteration},{row.evaluations},{row.best_loss!r},"
                     f"{row.best_rse!r},{row.best_phi!r}")
    path.write_text("\n".join(lines) + "\n")


def _run_search(cfg: dict):
    """Shared by cmd_search and bench rows: returns (result, payload)."""
    target = load_tensor(cfg["input"])
    template, template_ref = _template_from(cfg)
    mask = load_tensor(cfg["mask"]) if cfg.get("mask") else None
    seed = as_seed(cfg.get("seed"))
    fit_cfg = _fit_cfg_from(cfg["fit"], seed)
    refine_cfg = None
    if cfg.get("refine", True):
        refine_cfg = _fit_cfg_from(dict(_REFINE_FIT_DEFAULTS,
                                        **(cfg.get("refine_fit") or {})), seed)
    if cfg["algo"] == "tnls":
        sc = SearchConfig(rank_max=int(cfg["rank_max"]), iters=int(cfg["iters"]),
                          samples=int(cfg["samples"]), c1=cfg["c1"], c2=cfg["c2"],
                          lam=cfg["lam"], fit=fit_cfg, refine_fit=refine_cfg,
                          seed=seed, patience=cfg.get("patience"),
                          jobs=int(cfg["jobs"]), rse_cap=cfg.get("rse_cap"))
        result = tnls(target, template, sc, mask=mask)
    elif cfg["algo"] == "ga":
        ga = cfg["ga"]
        gc = GaConfig(rank_max=int(cfg["rank_max"]),
                      population=int(ga["population"]),
                      generations=int(ga["generations"]),
                      elimination_rate=ga["elimination_rate"],
                      elites=int(ga["elites"]), alpha=ga["alpha"],
                      beta=ga["beta"], mutation_rate=ga["mutation_rate"],
                      lam=cfg["lam"], fit=fit_cfg, refine_fit=refine_cfg,
                      seed=seed, patience=cfg.get("patience"),
                      jobs=int(cfg["jobs"]), rse_cap=cfg.get("rse_cap"))
        result = tnga_plus(target, template, gc, mask=mask)
    else:
        raise ValueError(f"unknown algo {cfg['algo']!r} (tnls or ga)")

    truth_structure = None
    if cfg.get("truth"):
        truth_doc = json.loads(Path(cfg["truth"]).read_text())
        truth_structure = structure_from_dict(
            truth_doc["structure"], Path(cfg["truth"]).parent)
    payload = _result_payload(result, target.shape, template_ref, truth_structure)
    return result, payload


def cmd_search(args) -> int:
    config = json.loads(Path(args.config).read_text()) if args.config else None
    flags = {
        "input": args.input, "template": args.template, "n": args.n,
        "algo": args.algo, "rank_max": args.rank_max, "iters": args.iters,
        "samples": args.samples, "c1": args.c1, "c2": args.c2,
        "lam": args.lam, "seed": args.seed, "jobs": args.jobs,
        "patience": args.patience, "truth": args.truth, "mask": args.mask,
        "rse_cap": args.rse_cap,
        "fit": {"learning_rate": args.lr, "max_steps": args.max_steps,
                "restarts": args.restarts, "init_std": args.init_std,
                "tolerance": args.tolerance},
        "ga": {"population": args.population, "generations": args.generations,
               "elimination_rate": args.elimination_rate, "elites": args.elites,
               "alpha": args.alpha, "beta": args.beta,
               "mutation_rate": args.mutation_rate},
    }
    defaults = {
        "command": "search", "algo": "tnls", "rank_max": 7, "iters": 30,
        "samples": 60, "c1": 0.9, "c2": 0.9, "lam": 200.0, "jobs": 1,
        "patience": None, "truth": None, "mask": None, "n": None,
        "refine": True, "rse_cap": None, "fit": dict(_SEARCH_FIT_DEFAULTS),
        "ga": dict(_GA_DEFAULTS),
    }
    cfg = _merge(defaults, config, flags)
    if cfg.get("input") is None:
        raise ValueError("an input tensor is required (--input)")
    cfg["seed"] = as_seed(cfg.get("seed"))

    out = Path(args.out or "tnps-run")
    out.mkdir(parents=True, exist_ok=True)
    _dump_json(cfg, out / "config.json")
    t0 = time.perf_counter()
    result, payload = _run_search(cfg)
    _say(f"search done in {time.perf_counter() - t0:.1f}s: loss={result.loss:.6g} "
         f"rse={result.rse:.3g} evaluations={result.evaluations}")
    _dump_json(payload, out / "result.json")
    _write_trace(result, out / "trace.csv")
    summary = {"loss": payload["loss"], "rse": payload["rse"],
               "evaluations": payload["evaluations"]}
    if "eff" in payload:
        summary["eff"] = payload["eff"]
    _emit(summary)
    if not math.isfinite(result.loss):
        return EXIT_SEARCH
    return EXIT_OK


def cmd_count(args) -> int:
    if args.graph:
        template = load_graph(args.graph)
    else:
        template, _ = _template_from({"template": args.template, "n": args.n})
    sc = count_space(template, int(args.rank_max))
    _emit({"exact": sc.exact, "lower": sc.lower, "upper": sc.upper,
           "aut_size": sc.aut_size, "class_size": sc.class_size})
    if not sc.bounds_defined:
        return EXIT_CONFIG
    return EXIT_OK


def cmd_synth(args) -> int:
    template, template_ref = _template_from({"template": args.format, "n": args.n})
    ranks = [int(v) for v in str(args.ranks).split(",") if v]
    if not ranks:
        raise ValueError("--ranks needs at least one value")
    seed = as_seed(args.seed)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(3,)))
    truth = generate_synthetic(template, int(args.dim), ranks, rng,
                               core_std=args.core_std)
    out = Path(args.out or "tnps-synth")
    out.mkdir(parents=True, exist_ok=True)
    save_tnsb(truth.tensor, out / "tensor.tnsb")
    _dump_json({
        "structure": structure_to_dict(truth.structure, template_ref),
        "param_count": truth.param_count,
        "seed": seed,
        "core_std": args.core_std,
        "dims": list(truth.tensor.shape),
    }, out / "truth.json")
    _say(f"wrote {out / 'tensor.tnsb'} (shape {truth.tensor.shape}) and truth.json")
    _emit({"tensor": str(out / "tensor.tnsb"), "truth": str(out / "truth.json"),
           "param_count": truth.param_count})
    return EXIT_OK


def cmd_fit(args) -> int:
    target = load_tensor(args.input)
    doc = json.loads(Path(args.structure).read_text())
    structure = structure_from_dict(doc.get("structure", doc),
                                    Path(args.structure).parent)
    mask = None
    if args.mask:
        mask = load_tensor(args.mask)
        if not mask.any():
            raise ValueError("mask has no observed entries")
    seed = as_seed(args.seed)
    cfg = FitConfig(learning_rate=args.lr, max_steps=int(args.max_steps),
                    restarts=int(args.restarts), init_std=args.init_std,
                    tolerance=args.tolerance, seed=seed)
    result = fit(target, structure, cfg, mask=mask)
    out = Path(args.out or "tnps-model")
    save_model(result.model, out, doc.get("structure", doc)["template"])
    z = contract_network(result.model)
    payload = {"rse": rse(target, z), "rse_fit": result.rse,
               "rse_heldout": None, "steps": result.steps_used,
               "restart": result.restart_index}
    if mask is not None and (mask == 0).any():
        payload["rse_heldout"] = masked_rse(target, z, 1.0 - mask)
    _say(f"fitted model written to {out}")
    _emit(payload)
    return EXIT_OK


def _bench_rows(cfg: dict):
    rows = []
    for order in cfg["orders"]:
        for trial in range(1, cfg["trials"] + 1):
            for seed_idx in range(1, cfg["seeds"] + 1):
                for algo in cfg["algos"]:
                    rows.append({"order": order, "trial": trial,
                                 "seed_idx": seed_idx, "algo": algo})
    return rows


def _bench_c2(order: int) -> float:
    return {4: 0.9, 6: 0.94, 8: 0.98}.get(order, 0.9)


def cmd_bench(args) -> int:
    config = json.loads(Path(args.config).read_text()) if args.config else None
    flags = {
        "orders": [int(v) for v in args.orders.split(",")] if args.orders else None,
        "trials": args.trials, "seeds": args.seeds,
        "algos": args.algos.split(",") if args.algos else None,
        "rank_max": args.rank_max, "lam": args.lam, "jobs": args.jobs,
        "seed": args.seed, "patience": args.patience,
        "rank_choices": args.rank_choices, "dim": args.dim,
    }
    defaults = {
        "command": "bench", "orders": [4], "trials": 5, "seeds": 5,
        "algos": ["tnls"], "rank_max": 7, "lam": 200.0, "jobs": 1,
        "seed": 0, "patience": 10, "rank_choices": "1,2,3,4", "dim": 3,
        "rse_threshold": 1e-4,
    }
    cfg = _merge(defaults, config, flags)
    if any(o > 6 for o in cfg["orders"]) and not args.large:
        raise ValueError("orders above 6 need --large")
    out = Path(args.out or "tnps-bench")
    rows = _bench_rows(cfg)
    if args.dry_run:
        for row in rows:
            _emit(row)
        return EXIT_OK

    out.mkdir(parents=True, exist_ok=True)
    _dump_json(cfg, out / "config.json")
    rank_choices = [int(v) for v in str(cfg["rank_choices"]).split(",")]
    base_seed = as_seed(cfg["seed"])
    lines = ["trial,order,algo,eff,evaluations,rse,seconds"]
    failures = 0
    data_cache = {}
    for row in rows:
        order, trial, seed_idx, algo = (row["order"], row["trial"],
                                        row["seed_idx"], row["algo"])
        key = (order, trial)
        if key not in data_cache:
            rng = np.random.default_rng(
                np.random.SeedSequence(base_seed, spawn_key=(4, order, trial)))
            truth = generate_synthetic("cycle", cfg["dim"], rank_choices, rng,
                                       n=order)
            ddir = out / "data" / f"order{order}_trial{trial}"
            ddir.mkdir(parents=True, exist_ok=True)
            save_tnsb(truth.tensor, ddir / "tensor.tnsb")
            _dump_json({"structure": structure_to_dict(truth.structure,
                                                       f"cycle:{order}"),
                        "param_count": truth.param_count},
                       ddir / "truth.json")
            data_cache[key] = ddir
        ddir = data_cache[key]
        run_seed = int(np.random.SeedSequence(
            base_seed, spawn_key=(5, order, trial, seed_idx)).generate_state(
                1, dtype=np.uint64)[0] % (2 ** 63))
        fit_steps = {4: 4000, 6: 6000, 8: 8000}.get(order, 4000)
        row_cfg = {
            "command": "search", "algo": algo,
            "input": str((ddir / "tensor.tnsb").resolve()),
            "truth": str((ddir / "truth.json").resolve()),
            "mask": None, "template": f"cycle:{order}", "n": order,
            "rank_max": cfg["rank_max"], "iters": 30, "samples": 60,
            "c1": 0.9, "c2": _bench_c2(order), "lam": cfg["lam"],
            "seed": run_seed, "jobs": cfg["jobs"], "patience": cfg["patience"],
            "refine": True, "rse_cap": cfg["rse_threshold"],
            "fit": dict(_SEARCH_FIT_DEFAULTS, max_steps=fit_steps),
            "ga": dict(_GA_DEFAULTS, population=60),
        }
        rdir = out / "rows" / f"order{order}_trial{trial}_seed{seed_idx}_{algo}"
        rdir.mkdir(parents=True, exist_ok=True)
        _dump_json(row_cfg, rdir / "config.json")
        t0 = time.perf_counter()
        result, payload = _run_search(row_cfg)
        seconds = time.perf_counter() - t0
        _dump_json(payload, rdir / "result.json")
        _write_trace(result, rdir / "trace.csv")
        ok = payload["rse"] <= cfg["rse_threshold"]
        failures += 0 if ok else 1
        _say(f"order {order} trial {trial} seed {seed_idx} {algo}: "
             f"eff={payload.get('eff', float('nan')):.2f} rse={payload['rse']:.2e} "
             f"evals={payload['evaluations']} ({seconds:.1f}s)"
             + ("" if ok else "  [RSE FAIL]"))
        lines.append(f"{trial},{order},{algo},{payload.get('eff', '')!r},"
                     f"{payload['evaluations']},{payload['rse']!r},{seconds:.3f}")
    (out / "bench.csv").write_text("\n".join(lines) + "\n")
    _say(f"bench csv written to {out / 'bench.csv'}")
    return EXIT_SEARCH if failures else EXIT_OK


def _add_fit_flags(p, lr_default=None):
    p.add_argument("--lr", type=float, default=lr_default)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--restarts", type=int, default=None)
    p.add_argument("--init-std", type=float, default=None)
    p.add_argument("--tolerance", type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tnps",
        description="Tensor-network permutation search: search mode-vertex "
                    "mappings and bond ranks for a fixed TN format.")
    parser.add_argument("--version", action="version", version=f"tnps {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("search", help="run TNLS (or TNGA+) on a tensor")
    p.add_argument("--input")
    p.add_argument("--template")
    p.add_argument("--n", type=int)
    p.add_argument("--algo", choices=["tnls", "ga"], default=None)
    p.add_argument("--rank-max", type=int, default=None)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--c1", type=float, default=None)
    p.add_argument("--c2", type=float, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--rse-cap", type=float, default=None)
    p.add_argument("--truth")
    p.add_argument("--mask")
    p.add_argument("--out")
    p.add_argument("--config")
    _add_fit_flags(p)
    p.add_argument("--population", type=int, default=None)
    p.add_argument("--generations", type=int, default=None)
    p.add_argument("--elimination-rate", type=float, default=None)
    p.add_argument("--elites", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--mutation-rate", type=float, default=None)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("count", help="search-space size, bounds, automorphisms")
    p.add_argument("--template")
    p.add_argument("--n", type=int)
    p.add_argument("--graph", help=".graph file instead of a named template")
    p.add_argument("--rank-max", type=int, default=1)
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("synth", help="generate a synthetic ground-truth tensor")
    p.add_argument("--format", required=True, help="template name, e.g. tr, tt, mera")
    p.add_argument("--n", type=int)
    p.add_argument("--dim", type=int, default=3)
    p.add_argument("--ranks", default="1,2,3,4")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--core-std", type=float, default=1.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="fit cores for a fixed structure")
    p.add_argument("--input", required=True)
    p.add_argument("--structure", required=True)
    p.add_argument("--mask")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out")
    _add_fit_flags(p, lr_default=1e-3)
    p.set_defaults(func=cmd_fit)
    p.set_defaults(max_steps=10_000, restarts=4, init_std=math.sqrt(0.1),
                   tolerance=1e-5)

    p = sub.add_parser("bench", help="seeded synthetic benchmark suite")
    p.add_argument("--orders")
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--seeds", type=int, default=None)
    p.add_argument("--algos")
    p.add_argument("--rank-max", type=int, default=None)
    p.add_argument("--rank-choices", default=None)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--large", action="store_true")
    p.add_argument("--dry-run", action="store_true")
    p.add_argument("--out")
    p.add_argument("--config")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, AssertionError) as exc:
        _say(f"error: {exc}")
        return EXIT_CONFIG
    except OSError as exc:
        _say(f"i/o error: {exc}")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
