# main.py
"""
Command-line front door.

    python -m main store "Alice lives in Paris" --session s1
    python -m main retrieve "Where does Alice live?" --top-k 5 --trace
    python -m main maintain --steps 10 --seed 7

Exit codes: 0 ok, 1 rejected by a gate, 2 usage error, 3 storage or I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sqlite3
import sys

import numpy as np
import pandas as pd

import analysis
from bench import run_bench
from errors import AdapterError, GeomemError, PreconditionError, StoreError
from fusion import Ablation, retrieve
from memory_store import MemoryStore, Rejected
from settings import Settings
from utils.utils import configure_logging

log = logging.getLogger("geomem.cli")

EXIT_OK, EXIT_REJECTED, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3

ANALYZE_OPS = ("cap", "neighbors", "snr", "contradictions", "depth", "hopfield", "ties", "scale")


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

def _emit(args, record: dict, text: str) -> None:
    if args.format == "structured":
        print(json.dumps(record, sort_keys=True, default=_json_default))
    else:
        print(text)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serialisable: {type(o).__name__}")


def _emit_frame(args, df: pd.DataFrame) -> None:
    if args.format == "structured":
        for row in df.to_dict(orient="records"):
            print(json.dumps(row, sort_keys=True, default=_json_default))
    else:
        df.to_csv(sys.stdout, index=False)


def _open(settings: Settings, read_only: bool = False, must_exist: bool = False) -> MemoryStore:
    if must_exist and not os.path.exists(settings.db_path):
        raise StoreError(f"no store at {settings.db_path}")
    return MemoryStore(settings.db_path, settings, read_only=read_only)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_store(args, settings: Settings) -> int:
    if args.file:
        with open(args.file, encoding="utf-8") as fh:
            contents = [line.strip() for line in fh if line.strip()]
    elif args.content:
        contents = [args.content]
    else:
        raise PreconditionError("give content or --file")
    meta = {k: v for k, v in {"session_id": args.session, "speaker": args.speaker, "source_document": args.source,
                              "timestamp": args.timestamp, "context": args.context}.items() if v is not None}
    code = EXIT_OK
    with _open(settings) as store:
        for content in contents:
            out = store.store(content, meta, settings.profile_id)
            if isinstance(out, Rejected):
                code = EXIT_REJECTED
                _emit(args, out.to_record(), f"rejected ({out.gate}): {out.detail}")
            else:
                _emit(args, {"id": out.id, "profile_id": out.profile_id, "entities": sorted(out.entities),
                             "facts": list(out.facts), "scene_id": out.scene_id}, f"stored {out.id}")
    return code


def cmd_retrieve(args, settings: Settings) -> int:
    names = [n for chunk in (args.disable or []) for n in chunk.split(",")]
    ablation = Ablation.from_names(names)
    with _open(settings, read_only=not args.record_access, must_exist=True) as store:
        result = retrieve(store, args.query, settings.top_k, ablation, settings.profile_id)
        for rank, c in enumerate(result.results, 1):
            snippet = result.contents[c.memory_id].replace("\n", " ")[:80]
            _emit(args, {"rank": rank, "score": c.final, "memory_id": c.memory_id, "origin": c.origin.value,
                         "snippet": snippet},
                  f"{rank:>3}  {c.final:.6f}  {c.memory_id}  {snippet}")
        if args.trace:
            trace = result.trace.to_record()
            if args.format == "structured":
                _emit(args, {"trace": trace}, "")
            else:
                print(json.dumps(trace, indent=2, sort_keys=True, default=_json_default))
        if args.record_access and result.results:
            store.record_accesses(result.ids, profile_id=settings.profile_id)
    return EXIT_OK


def cmd_maintain(args, settings: Settings) -> int:
    with _open(settings) as store:
        rep = store.maintain(settings.profile_id, args.steps, args.seed)
    record = {"steps": rep.steps, "seed": rep.seed, "counts_before": rep.counts_before,
              "counts_after": rep.counts_after,
              "transitions": [{"memory_id": t.memory_id, "from": t.before.name.lower(), "to": t.after.name.lower(),
                               "radius": t.radius} for t in rep.transitions]}
    _emit(args, record, f"{len(rep.transitions)} transitions over {rep.steps} steps; "
                        f"before {rep.counts_before} after {rep.counts_after}")
    return EXIT_OK


def cmd_check(args, settings: Settings) -> int:
    with _open(settings) as store:
        check = store.check_consistency(settings.profile_id)
    rec = check.to_record()
    lines = [f"kappa={check.report.kappa:.6f} h1={check.report.h1_dim} "
             f"offending={len(check.report.offending_edges)} supersedes_created={len(check.created)}"]
    lines += [f"  {u} -> {v}: {n:.6f}" for (u, v), n in check.report.offending_edges]
    _emit(args, rec, "\n".join(lines))
    return EXIT_OK


def cmd_stats(args, settings: Settings) -> int:
    with _open(settings, read_only=True) as store:
        stats = store.stats(None if args.all_profiles else settings.profile_id)
    _emit(args, stats, json.dumps(stats, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_analyze(args, settings: Settings) -> int:
    rows = []
    if args.op == "cap":
        for d in args.d:
            for eps in args.eps:
                row = {"d": d, "eps": eps, "cap_fraction": analysis.cap_fraction(d, eps)}
                if args.samples:
                    row["monte_carlo"], row["stderr"] = analysis.cap_fraction_monte_carlo(d, eps, args.samples,
                                                                                         args.seed)
                rows.append(row)
    elif args.op == "neighbors":
        rows = [{"N": n, "d": d, "eps": eps, "expected_neighbors": analysis.expected_neighbor_count(n, d, eps)}
                for n in args.n for d in args.d for eps in args.eps]
    elif args.op == "snr":
        rows = [{"N": n, "d": d, "eps": eps, "k_rel": args.k_rel,
                 "cosine_snr": analysis.cosine_snr(n, args.k_rel, d, eps)}
                for n in args.n for d in args.d for eps in args.eps]
    elif args.op == "contradictions":
        rows = [{"N": n, "p_c": args.p_c, "expected": analysis.expected_contradictions(n, args.p_c),
                 "probability": analysis.contradiction_probability(n, args.p_c)} for n in args.n]
    elif args.op == "depth":
        rows = [{"N": n, "r": args.r, "optimal_depth": analysis.optimal_depth(n, args.r),
                 "derived_depth": analysis.derived_depth(n, args.r),
                 "depth_budget": analysis.progressive_depth_budget(n)} for n in args.n]
    elif args.op == "hopfield":
        rng = np.random.default_rng(args.seed)
        X = rng.standard_normal((args.d[0], args.m))
        X /= np.linalg.norm(X, axis=0)
        xi = X[:, 0]
        for beta in args.beta:
            rows.append({"beta": beta, "M": args.m, "d": args.d[0],
                         "energy": analysis.hopfield_energy(X, xi, beta),
                         "update_error": float(np.linalg.norm(analysis.hopfield_update(X, xi, beta) - xi)),
                         "effective_memories": analysis.effective_memory_count(X, xi, beta),
                         "separation": analysis.separation(X)})
    elif args.op == "ties":
        _emit_frame(args, analysis.heteroscedastic_tie_pairs(args.pairs, args.d[0], args.seed))
        return EXIT_OK
    elif args.op == "scale":
        _emit_frame(args, analysis.scale_table(args.n, args.d[0], args.eps[0], args.k_rel, args.p_c, args.r))
        return EXIT_OK
    _emit_frame(args, pd.DataFrame(rows))
    return EXIT_OK


def cmd_bench(args, settings: Settings) -> int:
    result = run_bench(seed=args.seed, configs=args.configs, top_k=settings.top_k)
    _emit_frame(args, result.summary)
    if args.per_query:
        result.per_query.to_csv(args.per_query, index=False)
    return EXIT_OK


def cmd_export(args, settings: Settings) -> int:
    with _open(settings, read_only=True) as store:
        profile = settings.profile_id if args.profile_only else None
        if args.out:
            with open(args.out, "w", encoding="utf-8") as fh:
                n = store.export_jsonl(fh, profile)
            _emit(args, {"exported": n, "path": args.out}, f"exported {n} rows to {args.out}")
        else:
            store.export_jsonl(sys.stdout, profile)
    return EXIT_OK


def cmd_import(args, settings: Settings) -> int:
    with _open(settings) as store, open(args.file, encoding="utf-8") as fh:
        n = store.import_jsonl(fh)
    _emit(args, {"imported": n}, f"imported {n} rows")
    return EXIT_OK


def cmd_compact(args, settings: Settings) -> int:
    with _open(settings) as store:
        store.compact()
    _emit(args, {"compacted": settings.db_path}, f"compacted {settings.db_path}")
    return EXIT_OK


def cmd_erase(args, settings: Settings) -> int:
    with _open(settings) as store:
        if args.memory:
            n = store.erase(args.memory, profile_id=settings.profile_id)
        elif args.entity:
            n = store.erase(entity=args.entity, profile_id=settings.profile_id)
        else:
            n = store.erase(profile_id=settings.profile_id)
    _emit(args, {"erased": n}, f"erased {n} memories")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--db", help="store file (GEOMEM_DB)")
    common.add_argument("--profile", help="profile id (GEOMEM_PROFILE)")
    common.add_argument("--format", choices=("human", "structured"), default="human")
    common.add_argument("--embedder", help="hash | precomputed:<path> | remote:<url>")
    common.add_argument("--reranker", help="lexical | remote:<url> | off")
    common.add_argument("--embed-dim", type=int)
    common.add_argument("--top-k", type=int)
    common.add_argument("--log-level")

    cli = argparse.ArgumentParser(prog="python -m main", description="Local agent memory store")
    sub = cli.add_subparsers(dest="command", required=True)

    p = sub.add_parser("store", parents=[common], help="store one memory (or one per line of --file)")
    p.add_argument("content", nargs="?")
    p.add_argument("--file")
    p.add_argument("--session")
    p.add_argument("--speaker")
    p.add_argument("--source", help="source document; groups memories into scenes")
    p.add_argument("--timestamp", help="observation time (epoch or any date string)")
    p.add_argument("--context", help="context id for the consistency sheaf")
    p.set_defaults(func=cmd_store)

    p = sub.add_parser("retrieve", parents=[common], help="ranked retrieval")
    p.add_argument("query")
    p.add_argument("--disable", action="append", metavar="COMPONENT[,COMPONENT]",
                   help="fisher, sheaf, langevin, bm25, entity, temporal, cross_encoder, all_math")
    p.add_argument("--trace", action="store_true")
    p.add_argument("--record-access", action="store_true", help="count the returned memories as accessed")
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("maintain", parents=[common], help="Langevin lifecycle pass")
    p.add_argument("--steps", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_maintain)

    p = sub.add_parser("check", parents=[common], help="consistency sweep")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("stats", parents=[common])
    p.add_argument("--all-profiles", action="store_true")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("analyze", parents=[common], help="scale analysis tables (CSV)")
    p.add_argument("op", choices=ANALYZE_OPS)
    p.add_argument("--d", type=int, nargs="+", default=[384])
    p.add_argument("--eps", type=float, nargs="+", default=[0.05])
    p.add_argument("--n", type=int, nargs="+", default=[1_000, 10_000, 100_000])
    p.add_argument("--k-rel", type=int, default=5)
    p.add_argument("--p-c", type=float, default=1e-6)
    p.add_argument("--r", type=float, default=2.0)
    p.add_argument("--beta", type=float, nargs="+", default=[1.0, 8.0, 50.0])
    p.add_argument("--m", type=int, default=8, help="Hopfield pattern count")
    p.add_argument("--pairs", type=int, default=500)
    p.add_argument("--samples", type=int, default=0, help="Monte Carlo samples for cap (0 = off)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("bench", parents=[common], help="synthetic benchmark")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--configs", default="full,all_math_off", help="comma list of toggle sets, or 'all'")
    p.add_argument("--per-query", help="also write per-query metrics to this CSV")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("export", parents=[common], help="line-delimited JSON export")
    p.add_argument("--out")
    p.add_argument("--profile-only", action="store_true")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("import", parents=[common])
    p.add_argument("file")
    p.set_defaults(func=cmd_import)

    p = sub.add_parser("compact", parents=[common])
    p.set_defaults(func=cmd_compact)

    p = sub.add_parser("erase", parents=[common], help="hard delete")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--memory")
    g.add_argument("--entity")
    g.add_argument("--all", action="store_true", help="every memory of --profile")
    p.set_defaults(func=cmd_erase)
    return cli


def main(argv: list[str] | None = None) -> int:
    cli = build_parser()
    try:
        args = cli.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        settings = Settings.from_env().with_overrides(
            db_path=args.db, profile_id=args.profile, embedder=args.embedder, reranker=args.reranker,
            embed_dim=args.embed_dim, top_k=args.top_k, log_level=args.log_level)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    configure_logging(settings.log_level)
    try:
        return args.func(args, settings)
    except PreconditionError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (StoreError, AdapterError, OSError, sqlite3.Error) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (GeomemError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
