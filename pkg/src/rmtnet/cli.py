"""Command-line experiment driver.

    rmtnet gen-data --config exp.cfg --out data/
    rmtnet train    --config exp.cfg --data data/ --out models/
    rmtnet evaluate --config exp.cfg --data data/ --models models/ --out report/
    rmtnet summary  --data table.csv --out summary/
    rmtnet bench    --config bench.cfg --out bench/ --jobs 2

Config files are flat ``key = value`` lines with dotted section prefixes
(``data.``, ``model.``, ``sweep.``, ``run.``, ``bench.``); see README.
Every output is a pure function of the config, the input files and the
seed, so reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, fields
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import data as D
from .metrics import MetricReport, SUBSETS, ContingencyTable, UndefinedMetricError, evaluate_model, gate_curve, phi_correlation
from .models import MODEL_KINDS, ModelConfig, build_model, fit_model
from .nncore import load_snapshot, save_snapshot

logger = logging.getLogger("rmtnet")

DEFAULTS: Dict[str, str] = {
    "data.source": "synthetic",  # synthetic | csv
    "data.csv": "",
    "data.n": "20000",
    "data.d": "20",
    "data.noise": "1.0",
    "data.signal": "1.5",
    "data.base_rate": "0.3",
    "data.epsilon": "1.0",  # one value per policy; several values compose M policies
    "data.bins": str(D.DEFAULT_BINS),
    "data.mode": "approval-rejection",
    "model.kinds": "rmtnet",
    "sweep.eta": "0.3",
    "sweep.t": "2",
    "run.n_runs": "10",
    "run.seed": "0",
    "bench.epsilons": "1.0,0.5",
    "bench.kinds": "mlp,st,ips,rmtnet",
    "summary.fields": "",
}
for _f in fields(ModelConfig):
    if _f.name not in ("eta", "t", "seed", "M"):
        DEFAULTS[f"model.{_f.name}"] = str(_f.default)

_GRID_KINDS = ("rmtnet", "rmtnetpp")  # kinds whose loss uses eta


class ConfigError(ValueError):
    pass


# -- config ------------------------------------------------------------------


def parse_config(text: str) -> Dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string("[cfg]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"bad config: {exc}") from None
    out = dict(DEFAULTS)
    for key, value in cp["cfg"].items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        out[key] = value.strip()
    return out


def load_config(path: Optional[str]) -> Dict[str, str]:
    if path is None:
        return dict(DEFAULTS)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def _floats(v: str) -> List[float]:
    return [float(x) for x in v.split(",") if x.strip()]


def _ints(v: str) -> List[int]:
    return [int(x) for x in v.split(",") if x.strip()]


def _kinds(v: str) -> List[str]:
    kinds = [x.strip() for x in v.split(",") if x.strip()]
    for k in kinds:
        if k not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {k!r}; expected one of {MODEL_KINDS}")
    if not kinds:
        raise ConfigError("no model kinds configured")
    return kinds


def _bool(v: str) -> bool:
    if v.lower() in ("1", "true", "yes"):
        return True
    if v.lower() in ("0", "false", "no"):
        return False
    raise ConfigError(f"expected a boolean, got {v!r}")


def model_config(cfg: Dict[str, str], **over) -> ModelConfig:
    kw = {}
    for f in fields(ModelConfig):
        key = f"model.{f.name}"
        if key not in cfg:
            continue
        raw = cfg[key]
        if f.type in ("bool", bool):
            kw[f.name] = _bool(raw)
        elif f.type in ("int", int):
            kw[f.name] = int(raw)
        elif f.type in ("float", float):
            kw[f.name] = float(raw)
        else:
            kw[f.name] = raw
    kw.update(over)
    try:
        return ModelConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def grid(cfg: Dict[str, str], kind: str):
    etas = _floats(cfg["sweep.eta"]) if kind in _GRID_KINDS else [float(DEFAULTS["sweep.eta"])]
    ts = _ints(cfg["sweep.t"]) if kind != "lr" else [2]
    if not etas or not ts:
        raise ConfigError("sweep grids must be non-empty")
    return [(eta, t) for eta in etas for t in ts]


def _seeds(cfg, seed_flag):
    base = int(cfg["run.seed"]) if seed_flag is None else seed_flag
    n = int(cfg["run.n_runs"])
    if n < 1:
        raise ConfigError("run.n_runs must be >= 1")
    return [base + i for i in range(n)]


# -- output helpers ----------------------------------------------------------


def _dump(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


def _manifest(cfg, command, **extra):
    return {"command": command, "config": dict(sorted(cfg.items())), **extra}


# -- data generation ---------------------------------------------------------


def ratio_table(ds: D.Dataset) -> List[dict]:
    """Per-policy sample counts with rejection and default ratios (percent)."""
    rows = []
    labels = ds.eval_labels(np.arange(ds.n)) if ds.has_hidden_labels else ds.y
    for m in range(1, ds.n_policies + 1):
        sel = ds.policy_id == m
        r = ds.r[sel]
        y = labels[sel]
        app = y[r == 0]
        rej = y[(r == 1) & (y >= 0)]
        row = {
            "policy": m,
            "samples": int(sel.sum()),
            "rejected": int(r.sum()),
            "rejection_ratio": round(100.0 * float(r.mean()), 2),
            "default_ratio_approved": round(100.0 * float(app.mean()), 2) if len(app) else None,
            "default_ratio_rejected": round(100.0 * float(rej.mean()), 2) if len(rej) else None,
        }
        try:
            if len(rej) == int(r.sum()):
                row["phi_default_rejection"] = phi_correlation(ContingencyTable.from_labels(y, r))
        except UndefinedMetricError:
            row["phi_default_rejection"] = None
        rows.append(row)
    return rows


def build_dataset(cfg: Dict[str, str], seed: int, epsilon: Optional[List[float]] = None):
    """Dataset for one seed: synthetic table or CSV, rejection, splits, bins."""
    eps = _floats(cfg["data.epsilon"]) if epsilon is None else epsilon
    if cfg["data.source"] == "synthetic":
        table = D.make_credit_table(
            int(cfg["data.n"]),
            int(cfg["data.d"]),
            noise=float(cfg["data.noise"]),
            seed=seed,
            base_rate=float(cfg["data.base_rate"]),
            signal=float(cfg["data.signal"]),
        )
    elif cfg["data.source"] == "csv":
        if not cfg["data.csv"]:
            raise ConfigError("data.source = csv needs data.csv")
        table = D.load_csv(cfg["data.csv"])
    else:
        raise ConfigError(f"unknown data.source {cfg['data.source']!r}")

    if table.r is not None:
        ds = D.dataset_from_table(table)
    elif len(eps) == 1:
        ds, _ = D.generate_synthetic_rejection(table, eps[0], seed)
    else:
        parts = D.split_equal(table, len(eps), seed)
        ds = D.compose_multi_policy([(p, e, seed + 1000 * m) for m, (p, e) in enumerate(zip(parts, eps))])
    ds = D.assign_splits(ds, seed, mode=cfg["data.mode"])
    dmap = D.fit_discretizer(ds.x, int(cfg["data.bins"]))
    return ds.discretize(dmap), dmap


def write_data(ds, dmap, directory: Path, cfg, seed):
    D.write_dataset(ds, directory, dmap)
    _dump(directory / "policies.json", [p.to_json() for p in ds.policies])
    _dump(directory / "manifest.json", _manifest(cfg, "gen-data", seed=seed, M=ds.n_policies, ratios=ratio_table(ds)))


def cmd_gen_data(args, cfg):
    seed = int(cfg["run.seed"]) if args.seed is None else args.seed
    ds, dmap = build_dataset(cfg, seed)
    write_data(ds, dmap, Path(args.out), cfg, seed)
    for row in ratio_table(ds):
        print(
            f"policy {row['policy']}: {row['samples']} samples, rejection ratio {row['rejection_ratio']:.2f}%, "
            f"default ratio approved {row['default_ratio_approved']}%, rejected {row['default_ratio_rejected']}%"
        )
    return 0


# -- training ----------------------------------------------------------------


def _fit_one(job):
    """Train one (kind, eta, t, seed) point; returns snapshot bits and log."""
    ds, cfg, kind, eta, t, seed = job
    mc = model_config(cfg, eta=eta, t=t, seed=seed)
    model = fit_model(kind, ds, mc)
    return {
        "kind": kind,
        "eta": eta,
        "t": t,
        "seed": seed,
        "val_ks": model.log.best_val_ks,
        "best_epoch": model.log.best_epoch,
        "log": model.log.to_dict(),
        "arrays": model.snapshot(),
        "meta": model.meta(),
    }


def _run_jobs(jobs, n_jobs):
    if n_jobs <= 1 or len(jobs) <= 1:
        return [_fit_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(_fit_one, jobs))


def _select(results):
    """Pick the grid point with the best median validation KS (ties: first)."""
    points = {}
    for res in results:
        points.setdefault((res["eta"], res["t"]), []).append(res["val_ks"])
    best, best_score = None, -math.inf
    for point, vals in points.items():
        finite = [v for v in vals if math.isfinite(v)]
        score = float(np.median(finite)) if finite else -math.inf
        if score > best_score or best is None:
            best, best_score = point, score
    return best, {f"eta={e},t={t}": v for (e, t), v in points.items()}


def train_kinds(ds, cfg, kinds, seeds, n_jobs, out: Path):
    """Grid-train every kind and seed; write the selected runs' snapshots."""
    jobs = [(ds, cfg, k, eta, t, s) for k in kinds for (eta, t) in grid(cfg, k) for s in seeds]
    results = _run_jobs(jobs, n_jobs)
    chosen = {}
    for kind in kinds:
        mine = [r for r in results if r["kind"] == kind]
        (eta, t), table = _select(mine)
        _dump(out / kind / "selection.json", {"selected": {"eta": eta, "t": t}, "val_ks": table, "runs": len(mine)})
        for r in mine:
            if (r["eta"], r["t"]) != (eta, t):
                continue
            run_dir = out / kind / f"seed{r['seed']}"
            save_snapshot(run_dir / "snapshot.bin", r["arrays"], r["meta"])
            _dump(run_dir / "config.json", r["meta"]["config"])
            _dump(run_dir / "log.json", r["log"])
            _dump(run_dir / "manifest.json", _manifest(cfg, "train", kind=kind, seed=r["seed"], eta=eta, t=t))
        chosen[kind] = (eta, t)
    return chosen


def cmd_train(args, cfg):
    ds = _read_data(args.data)
    kinds = _kinds(cfg["model.kinds"])
    chosen = train_kinds(ds, cfg, kinds, _seeds(cfg, args.seed), args.jobs, Path(args.out))
    for kind, (eta, t) in chosen.items():
        print(f"{kind}: selected eta={eta} t={t}")
    return 0


# -- evaluation --------------------------------------------------------------


def _read_data(directory) -> D.Dataset:
    if directory is None:
        raise ConfigError("--data is required")
    path = Path(directory)
    if not (path / "dataset.csv").exists():
        raise ConfigError(f"{path} holds no dataset.csv (run gen-data first)")
    ds = D.read_dataset(path)
    if ds.bins is None:
        raise ConfigError(f"{path} has no discretizer.json")
    return ds


def _load_model(path: Path):
    arrays, meta = load_snapshot(path)
    model = build_model(meta)
    model.load(arrays)
    return model


def evaluate_dir(ds, models_dir: Path, kinds, out: Path, dataset_name="data"):
    report = MetricReport()
    for kind in kinds:
        runs = sorted((models_dir / kind).glob("seed*/snapshot.bin"), key=lambda p: int(p.parent.name[4:]))
        if not runs:
            raise ConfigError(f"no snapshots for {kind} under {models_dir}")
        entries = []
        for snap in runs:
            model = _load_model(snap)
            if model.embedding.n_bins.tolist() != list(ds.n_bins):
                raise ConfigError(f"{snap} was trained on a different discretization")
            res = evaluate_model(model, ds)
            entries.append(res)
            _dump(out / kind / snap.parent.name / "metrics.json", res)
            if kind in _GRID_KINDS:
                (out / kind / snap.parent.name / "gates.csv").write_text(gate_curve(model).to_csv())
        report.add(kind, dataset_name, entries)
    return report


def _write_report(report: MetricReport, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(report.to_json() + "\n")
    (out / "table.txt").write_text("\n".join(report.format_table(s) for s in SUBSETS))


def cmd_evaluate(args, cfg):
    ds = _read_data(args.data)
    if args.models is None:
        raise ConfigError("--models is required")
    kinds = _kinds(cfg["model.kinds"])
    report = evaluate_dir(ds, Path(args.models), kinds, Path(args.out))
    report.config = dict(sorted(cfg.items()))
    _write_report(report, Path(args.out))
    print(report.format_table("combined-test"), end="")
    return 0


# -- summary -----------------------------------------------------------------


def cmd_summary(args, cfg):
    if args.data is None:
        raise ConfigError("--data is required")
    path = Path(args.data)
    if path.is_dir():
        ds = D.read_dataset(path)
        table = D.RawTable(ds.x, ds.column_names, r=ds.r, policy_id=ds.policy_id)
    else:
        table = D.load_csv(path)
    if table.r is None:
        raise ConfigError("summary needs an r column")
    names = [f.strip() for f in cfg["summary.fields"].split(",") if f.strip()] or list(table.column_names)
    summary = D.group_summary(table, names)
    lines = [f"{'field':<16}{'approved':>14}{'rejected':>14}"]
    for f in names:
        cells = [summary[g][f] for g in ("approved", "rejected")]
        lines.append(f"{f:<16}" + "".join(f"{'-':>14}" if v is None else f"{v:>14.4f}" for v in cells))
    text = "\n".join(lines) + "\n"
    if args.out:
        out = Path(args.out)
        _dump(out / "summary.json", {"groups": summary, "rows": int(table.n), "dropped": int(table.dropped)})
        (out / "summary.txt").write_text(text)
    print(text, end="")
    return 0


# -- benchmark ---------------------------------------------------------------


def _bench_seed(job):
    cfg, eps, seed, kinds = job
    ds, dmap = build_dataset(cfg, seed, epsilon=[eps])
    results = []
    for kind in kinds:
        for eta, t in grid(cfg, kind):
            results.append(_fit_one((ds, cfg, kind, eta, t, seed)))
    return ds, dmap, results


def cmd_bench(args, cfg):
    out = Path(args.out)
    kinds = _kinds(cfg["bench.kinds"])
    seeds = _seeds(cfg, args.seed)
    eps_list = _floats(cfg["bench.epsilons"])
    jobs = [(cfg, eps, s, kinds) for eps in eps_list for s in seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            done = list(pool.map(_bench_seed, jobs))
    else:
        done = [_bench_seed(j) for j in jobs]

    report = MetricReport(config=dict(sorted(cfg.items())))
    per: Dict[tuple, list] = {}
    alphas: Dict[str, list] = {}
    for (cfg_, eps, seed, _), (ds, dmap, results) in zip(jobs, done):
        name = f"eps={eps:g}"
        data_dir = out / name / f"seed{seed}"
        _dump(data_dir / "manifest.json", _manifest(cfg, "bench", seed=seed, epsilon=eps, ratios=ratio_table(ds)))
        for kind in kinds:
            mine = [r for r in results if r["kind"] == kind]
            (eta, t), table = _select(mine)
            r = next(x for x in mine if (x["eta"], x["t"]) == (eta, t))
            model = build_model(r["meta"])
            model.load(r["arrays"])
            res = evaluate_model(model, ds)
            run_dir = data_dir / kind
            save_snapshot(run_dir / "snapshot.bin", r["arrays"], r["meta"])
            _dump(run_dir / "metrics.json", res)
            _dump(run_dir / "log.json", r["log"])
            _dump(run_dir / "manifest.json", _manifest(cfg, "bench", kind=kind, seed=seed, epsilon=eps,
                                                       selected={"eta": eta, "t": t}, val_ks=table))
            single = MetricReport()
            single.add(kind, name, [res])
            (run_dir / "table.txt").write_text("\n".join(single.format_table(s) for s in SUBSETS))
            if kind in _GRID_KINDS:
                (run_dir / "gates.csv").write_text(gate_curve(model).to_csv())
                alphas.setdefault(name, []).append(float(model.gate_params()[0][0, 0]))
            per.setdefault((kind, name), []).append(res)
    for (kind, name), runs in per.items():
        report.add(kind, name, runs)
    report.diagnostics = {"gate_alpha_layer1": alphas}
    _write_report(report, out)
    verdict = bench_verdict(report, alphas)
    _dump(out / "verdict.json", verdict)
    print(report.format_table("combined-test"), end="")
    for line in verdict["lines"]:
        print(line)
    return 0


def bench_verdict(report: MetricReport, alphas: Dict[str, list]) -> dict:
    """Directional checks on median combined-test KS and gate direction."""
    lines = []
    checks = {}
    kinds = list(report.results)
    for name in sorted({d for k in kinds for d in report.results[k]}):
        if "rmtnet" not in kinds:
            break
        rmt = report.median("rmtnet", name)
        for base, need in (("mlp", 0.10), ("st", 0.0), ("ips", 0.0)):
            if base not in kinds:
                continue
            other = report.median(base, name)
            ok = rmt is not None and other is not None and (rmt >= (1 + need) * other if need else rmt > other)
            checks[f"{name}:rmtnet_vs_{base}"] = ok
            lines.append(f"{name} rmtnet KS {rmt:.4f} vs {base} {other:.4f} "
                         f"({'needs +10% relative' if need else 'needs > 0 margin'}): {'PASS' if ok else 'FAIL'}")
        a = alphas.get(name, [])
        if a:
            n_pos = sum(v > 0 for v in a)
            ok = n_pos >= math.ceil(0.8 * len(a))
            checks[f"{name}:gate_increasing"] = ok
            lines.append(f"{name} gate alpha(1) > 0 in {n_pos}/{len(a)} seeds: {'PASS' if ok else 'FAIL'}")
    return {"checks": checks, "lines": lines}


# -- entry point -------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="rmtnet", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--seed", type=int, help="overrides run.seed")
        sp.add_argument("--jobs", type=int, default=1, help="parallel training processes")
        sp.add_argument("--out", required=out_required, help="output directory")
        return sp

    common(sub.add_parser("gen-data", help="generate a biased dataset"))
    common(sub.add_parser("train", help="grid-train models on a dataset")).add_argument("--data")
    ev = common(sub.add_parser("evaluate", help="score trained models"))
    ev.add_argument("--data")
    ev.add_argument("--models")
    common(sub.add_parser("summary", help="per-group feature means"), out_required=False).add_argument("--data")
    common(sub.add_parser("bench", help="run the directional benchmark"))
    return p


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "summary": cmd_summary,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, D.SchemaError, D.CSVParseError, D.ProtocolError, ValueError, OSError) as exc:
        print(f"rmtnet {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
