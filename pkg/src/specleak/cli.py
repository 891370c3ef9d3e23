"""Command-line entry point: generate, verify, defend, reconstruct, evaluate,
sweep and threshold.

Exit codes: 0 success, 1 runtime error, 2 usage error, 3 integrity failure,
4 at least one failed run in a sweep.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import resource
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from specleak.afr import AfrConfig, afr_reconstruct
from specleak.archive import IntegrityError, read_archive, verify_archive, write_archive
from specleak.dp import DpParams, sanitize_archive
from specleak.eigensync import eigensync_reconstruct
from specleak.generate import InstanceParams, generate_instance, graph_digest
from specleak.graph import load_edge_list
from specleak.metrics import (
    auroc,
    build_link_eval,
    edge_metrics,
    predicted_components,
    score_pairs,
)
from specleak.reconstruction import (
    Reconstruction,
    atomic_write_bytes,
    load_reconstruction,
    save_reconstruction,
)
from specleak.rng import substream
from specleak.spectral import proxy_threshold

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_INTEGRITY, EXIT_SWEEP = 0, 1, 2, 3, 4
WORKERS_ENV = "SPECLEAK_WORKERS"


def _emit(args, payload: dict, text: str | None = None) -> None:
    if getattr(args, "json", False):
        print(json.dumps(payload, sort_keys=True, default=str))
    elif text is not None:
        print(text)


def _epsilon(value: str) -> float:
    if value.lower() in ("inf", "infinity", "none"):
        return math.inf
    eps = float(value)
    if eps <= 0:
        raise argparse.ArgumentTypeError("epsilon must be positive")
    return eps


# ------------------------------------------------------------------ commands

def cmd_generate(args) -> int:
    g = load_edge_list(args.dataset, format=args.format)
    params = InstanceParams(strategy=args.strategy, d=args.d, k=args.k, sigma=args.sigma, p=args.p,
                            seed=args.seed, n_clusters=args.clusters, n_seeds=args.seed_count,
                            q_max=args.q_max)
    arch = generate_instance(g, params, dataset=args.name or Path(args.dataset).name)
    path = write_archive(arch, args.out, container=args.container)
    man = arch.sealed_manifest()
    _emit(args, {"out": str(path), "n_patches": man["n_patches"], "files": len(man["files"])},
          f"wrote {man['n_patches']} patches to {path}")
    return EXIT_OK


def cmd_verify(args) -> int:
    rep = verify_archive(args.archive)
    lines = [f"{status:9s} {name}" for name, status in rep.files.items()]
    _emit(args, rep.to_dict(), "\n".join(lines + ["OK" if rep.ok else "FAILED"]))
    return EXIT_OK if rep.ok else EXIT_INTEGRITY


def cmd_defend(args) -> int:
    arch = read_archive(args.inp)
    params = DpParams(epsilon=args.epsilon, delta=args.delta, clip_norm=args.clip, seed=args.seed,
                      per_row=args.per_row)
    out = sanitize_archive(arch, params)
    path = write_archive(out, args.out, container=args.container)
    _emit(args, {"out": str(path), "defense": out.manifest["defense"]}, f"wrote {path}")
    return EXIT_OK


def afr_config_from(args) -> AfrConfig:
    return AfrConfig(t=args.t, alpha=args.alpha, s_min=args.s_min, delta_min=args.delta_min,
                     k_base=args.k_base, gamma=args.gamma, ransac_iters=args.ransac_iters,
                     C0=args.c0, kappa=args.kappa, top_k_output=args.top_k, seed=args.seed)


def reconstruct_archive(arch, method: str, cfg: AfrConfig, k_nn: int = 10) -> Reconstruction:
    n = int(arch.manifest["dataset"]["n"])
    if method == "afr":
        rec = afr_reconstruct(arch.patches, n, cfg)
    else:
        rec = eigensync_reconstruct(arch.patches, n, k_nn=k_nn, t=cfg.t)
    rec.header["instance"] = {
        "dataset": arch.manifest.get("dataset"),
        "params": arch.manifest.get("params"),
    }
    if "defense" in arch.manifest:
        rec.header["defense"] = arch.manifest["defense"]
    return rec


def cmd_reconstruct(args) -> int:
    arch = read_archive(args.inp)
    rec = reconstruct_archive(arch, args.method, afr_config_from(args), args.k_nn)
    digest = save_reconstruction(rec, args.out)
    _emit(args, {"out": args.out, "sha256": digest, "edges": int(len(rec.edges))},
          f"wrote {len(rec.edges)} edges to {args.out}")
    return EXIT_OK


def evaluate_reconstruction(truth, rec: Reconstruction, link_seed: int | None = None) -> dict:
    m = edge_metrics(truth, rec.edges, nodes=rec.nodes)
    report = {
        "method": rec.method,
        "metrics": m.to_dict(),
        "f1_reference": "truth edges induced on the recovered node set",
        "islands": "connected components of the predicted graph",
        "truth_sha256": graph_digest(truth),
        "config": rec.header.get("config"),
    }
    if "defense" in rec.header:
        report["defense"] = rec.header["defense"]
    if link_seed is not None:
        comps = predicted_components(truth.n, rec.nodes, rec.edges)
        les = build_link_eval(truth, comps, substream(link_seed, "link-eval"))
        if not les.applicable:
            report["link_auroc"] = "inapplicable"
        else:
            if rec.method == "afr":
                s = score_pairs(les.pairs, probabilities=rec.cross_probability())
            else:
                s = score_pairs(les.pairs, embedding=rec.embedding, nodes=rec.nodes)
            npos = len(les.positives)
            report["link_auroc"] = auroc(s[:npos], s[npos:])
            report["link_pairs"] = int(npos)
    return report


def cmd_evaluate(args) -> int:
    truth = load_edge_list(args.truth, format=args.format)
    with open(args.rec, "rb") as fh:
        raw = fh.read()
    rec = Reconstruction.from_dict(json.loads(raw.decode("utf-8")))
    report = evaluate_reconstruction(truth, rec, args.link_seed)
    report["reconstruction_sha256"] = hashlib.sha256(raw).hexdigest()
    data = (json.dumps(report, sort_keys=True, indent=2, default=str) + "\n").encode("utf-8")
    if args.out:
        atomic_write_bytes(args.out, data)
    m = report["metrics"]
    _emit(args, report, f"coverage {m['node_coverage']:.4f}  precision {m['precision']:.4f}  "
                        f"recall {m['recall']:.4f}  f1 {m['f1']:.4f}  cohesion {m['island_cohesion']:.4f}")
    return EXIT_OK


def cmd_threshold(args) -> int:
    try:
        level = proxy_threshold(args.decay, args.C, args.alpha, args.eps)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    _emit(args, {"level": level}, str(level))
    return EXIT_OK


# ------------------------------------------------------------------ sweep

def parse_tuple(text: str) -> dict:
    """``strategy,d,k,sigma,p`` -> dict."""
    parts = [x.strip() for x in text.split(",")]
    if len(parts) != 5:
        raise argparse.ArgumentTypeError(f"expected strategy,d,k,sigma,p: {text!r}")
    strategy, d, k, sigma, p = parts
    return {"strategy": strategy, "d": int(d), "k": int(k), "sigma": float(sigma), "p": float(p)}


def run_one(job: dict) -> dict:
    """One (tuple, epsilon, method, seed) cell; failures are reported, not raised."""
    t0 = time.perf_counter()
    rec = {k: job[k] for k in ("tuple", "method", "seed", "epsilon")}
    try:
        g = load_edge_list(job["dataset"])
        params = InstanceParams(**job["tuple"], seed=job["seed"])
        arch = generate_instance(g, params, dataset=Path(job["dataset"]).name)
        if not math.isinf(job["epsilon"]):
            arch = sanitize_archive(arch, DpParams(job["epsilon"], seed=job["seed"]))
        cfg = AfrConfig(seed=job["seed"])
        r = reconstruct_archive(arch, job["method"], cfg)
        rec["metrics"] = edge_metrics(g, r.edges, nodes=r.nodes).to_dict()
        rec["ok"] = True
    except Exception as exc:  # recorded and counted by the caller
        rec["ok"] = False
        rec["error"] = f"{type(exc).__name__}: {exc}"
    rec["wall_seconds"] = time.perf_counter() - t0
    rec["peak_rss_kb"] = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    return rec


def aggregate(records: list[dict]) -> list[dict]:
    """Mean and (population) standard deviation per (tuple, epsilon, method)."""
    cells: dict[tuple, list[dict]] = {}
    for r in records:
        key = (json.dumps(r["tuple"], sort_keys=True), str(r["epsilon"]), r["method"])
        cells.setdefault(key, []).append(r)
    rows = []
    for (tup, eps, method), rs in cells.items():
        ok = [r for r in rs if r["ok"]]
        row = {"tuple": json.loads(tup), "epsilon": eps, "method": method,
               "runs": len(rs), "failures": len(rs) - len(ok)}
        for metric in ("f1", "precision", "recall", "node_coverage", "island_cohesion"):
            vals = np.array([r["metrics"][metric] for r in ok], dtype=float)
            row[f"{metric}_mean"] = float(vals.mean()) if len(vals) else None
            row[f"{metric}_std"] = float(vals.std()) if len(vals) else None
            row[f"{metric}_per_seed"] = [float(v) for v in vals]
        rows.append(row)
    return rows


def cmd_sweep(args) -> int:
    if args.grid:
        grid = json.loads(Path(args.grid).read_text(encoding="utf-8"))
        tuples = [parse_tuple(t) if isinstance(t, str) else t for t in grid["tuples"]]
        methods = grid.get("methods", ["afr", "eigensync"])
        seeds = grid.get("seeds", [0, 1, 2, 3, 4])
        dataset = grid.get("dataset", args.dataset)
        eps_list = [_epsilon(str(e)) for e in grid.get("epsilons", ["inf"])]
    else:
        tuples, methods, seeds, dataset = args.tuple, args.methods, args.seeds, args.dataset
        eps_list = args.epsilon
    if not tuples or not seeds or not dataset:
        print("error: sweep needs a dataset, tuples and seeds", file=sys.stderr)
        return EXIT_USAGE
    jobs = [{"dataset": dataset, "tuple": t, "method": m, "seed": s, "epsilon": e}
            for t in tuples for e in eps_list for m in methods for s in seeds]
    workers = max(1, int(os.environ.get(WORKERS_ENV, "1")))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(run_one, jobs))
    else:
        records = [run_one(j) for j in jobs]
    rows = aggregate(records)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stable = [{k: v for k, v in r.items() if k not in ("wall_seconds", "peak_rss_kb")} for r in records]
    timing = [{k: r[k] for k in ("tuple", "method", "seed", "epsilon", "wall_seconds", "peak_rss_kb")}
              for r in records]
    atomic_write_bytes(out / "records.json", _json_bytes(stable))
    atomic_write_bytes(out / "summary.json", _json_bytes(rows))
    atomic_write_bytes(out / "timings.json", _json_bytes(timing))
    atomic_write_bytes(out / "summary.csv", _summary_csv(rows))
    failures = sum(1 for r in records if not r["ok"])
    text = "\n".join(
        f"{r['tuple']} eps={r['epsilon']} {r['method']}: F1 "
        + (f"{100 * r['f1_mean']:.1f} ± {100 * r['f1_std']:.1f}" if r["f1_mean"] is not None else "n/a")
        for r in rows)
    _emit(args, {"summary": rows, "failures": failures}, text)
    return EXIT_SWEEP if failures else EXIT_OK


def _json_bytes(obj) -> bytes:
    return (json.dumps(obj, sort_keys=True, indent=2, default=str) + "\n").encode("utf-8")


def _summary_csv(rows: list[dict]) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["strategy", "d", "k", "sigma", "p", "epsilon", "method", "runs", "failures",
                "f1_mean", "f1_std", "precision_mean", "recall_mean", "coverage_mean"])
    for r in rows:
        t = r["tuple"]
        w.writerow([t["strategy"], t["d"], t["k"], t["sigma"], t["p"], r["epsilon"], r["method"],
                    r["runs"], r["failures"], r["f1_mean"], r["f1_std"], r["precision_mean"],
                    r["recall_mean"], r["node_coverage_mean"]])
    return buf.getvalue().encode("utf-8")


# ------------------------------------------------------------------ parser

def _add_afr_flags(p: argparse.ArgumentParser) -> None:
    d = AfrConfig()
    p.add_argument("--t", type=float, default=d.t, help="heat time")
    p.add_argument("--alpha", type=float, default=d.alpha, help="fidelity weight on the gap ratio")
    p.add_argument("--s-min", type=float, default=d.s_min)
    p.add_argument("--delta-min", type=float, default=d.delta_min)
    p.add_argument("--k-base", type=float, default=d.k_base)
    p.add_argument("--gamma", type=float, default=None, help="adaptive-threshold slope (default from k)")
    p.add_argument("--ransac-iters", type=int, default=d.ransac_iters)
    p.add_argument("--c0", type=float, default=d.C0, help="cross-vote threshold")
    p.add_argument("--kappa", type=float, default=d.kappa)
    p.add_argument("--top-k", type=int, default=d.top_k_output)
    p.add_argument("--k-nn", type=int, default=10, help="neighbors for the eigensync kNN graph")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="specleak", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="build an instance archive from an edge list")
    g.add_argument("--dataset", required=True)
    g.add_argument("--format", choices=["whitespace", "csv"], default="whitespace")
    g.add_argument("--name", default=None)
    g.add_argument("--strategy", choices=["d_hop", "cluster", "random"], default="d_hop")
    g.add_argument("--d", type=int, default=1)
    g.add_argument("--k", type=int, default=32)
    g.add_argument("--sigma", type=float, default=0.0)
    g.add_argument("--p", type=float, default=1.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--clusters", type=int, default=None)
    g.add_argument("--seed-count", type=int, default=None)
    g.add_argument("--q-max", type=int, default=500)
    g.add_argument("--container", choices=["auto", "zip", "dir"], default="auto")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    v = sub.add_parser("verify", help="recompute archive checksums")
    v.add_argument("archive")
    v.set_defaults(func=cmd_verify)

    d = sub.add_parser("defend", help="apply the Gaussian embedding defense")
    d.add_argument("--epsilon", type=_epsilon, required=True)
    d.add_argument("--delta", type=float, default=1e-5)
    d.add_argument("--clip", type=float, default=1.0)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--per-row", action="store_true", help="clip rows instead of the whole matrix")
    d.add_argument("--container", choices=["auto", "zip", "dir"], default="auto")
    d.add_argument("--in", dest="inp", required=True)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_defend)

    r = sub.add_parser("reconstruct", help="rebuild edges from an archive")
    r.add_argument("--method", choices=["afr", "eigensync"], default="afr")
    r.add_argument("--in", dest="inp", required=True)
    r.add_argument("--out", required=True)
    _add_afr_flags(r)
    r.set_defaults(func=cmd_reconstruct)

    e = sub.add_parser("evaluate", help="score a reconstruction against the true graph")
    e.add_argument("--truth", required=True)
    e.add_argument("--format", choices=["whitespace", "csv"], default="whitespace")
    e.add_argument("--rec", required=True)
    e.add_argument("--out", default=None)
    e.add_argument("--link-seed", type=int, default=None, help="also score cross-island link prediction")
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep", help="run a grid of scenarios and aggregate over seeds")
    s.add_argument("--grid", default=None, help="JSON sweep grid (overrides the flags below)")
    s.add_argument("--dataset", default=None)
    s.add_argument("--tuple", type=parse_tuple, action="append", default=[],
                   help="strategy,d,k,sigma,p (repeatable)")
    s.add_argument("--methods", type=lambda x: x.split(","), default=["afr", "eigensync"])
    s.add_argument("--seeds", type=lambda x: [int(v) for v in x.split(",")], default=[0, 1, 2, 3, 4])
    s.add_argument("--epsilon", type=_epsilon, action="append", default=None)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_sweep)

    t = sub.add_parser("threshold", help="truncation level for a given eigen-decay")
    t.add_argument("--decay", choices=["poly", "polynomial", "exp", "exponential"], required=True)
    t.add_argument("--C", type=float, required=True)
    t.add_argument("--alpha", type=float, required=True)
    t.add_argument("--eps", type=float, required=True)
    t.set_defaults(func=cmd_threshold)

    for p in (g, v, d, r, e, s, t):
        p.add_argument("--json", action="store_true", help="machine-readable output on stdout")
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    if args.command == "sweep" and args.epsilon is None:
        args.epsilon = [math.inf]
    try:
        return args.func(args)
    except IntegrityError as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except FileNotFoundError as exc:
        print(f"error: no such file: {exc.filename or exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
