"""Command-line driver: synth, build-index, sparse, query, eval, ablate, sweep.

Config precedence for query-style commands is CLI flag > --config JSON >
built-in default (the tuned operating point).  Rankings and metrics files
are deterministic for fixed inputs and seed; wall-clock timings go to
stderr and, optionally, a separate --timings-out file.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import evaluation, features, index as index_mod, rerank, synth
from .chamfer import ChamferParams
from .errors import L2GError
from .mds import MdsConfig

RERANK_MODES = {"mds": "mds_only", "sg": "sg_only", "mds+sg": "mds_plus_sg"}

QUERY_DEFAULTS = {
    "rerank_mode": "mds+sg",
    "k_mds": 700,
    "m": 1600,
    "sg_k": 6,
    "beta": 0.31,
    "w": 0.19,
    "power": 0.01,
    "eps": 0.1,
    "dim": 128,
    "mds_mode": "metric",
    "mds_init": "classical",
    "max_iter": 100,
    "seed": 0,
    "threads": 0,
}


def _write_json(payload, path: str | None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    if path:
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)
            f.write("\n")
    else:
        print(text)


def _load_database(args) -> features.FeatureCollection:
    paths = list(args.features or [])
    if getattr(args, "manifest", None):
        manifest = features.load_manifest(args.manifest)
        paths = manifest.database + manifest.distractors + paths
    if not paths:
        raise L2GError("no feature files given (use --features or --manifest)")
    return features.concat_collections(
        [features.load_collection(p) for p in paths]
    )


def _resolve(args, key: str, config_file: dict):
    cli_value = getattr(args, key, None)
    if cli_value is not None:
        return cli_value
    if key in config_file:
        return config_file[key]
    return QUERY_DEFAULTS[key]


def _rerank_config(args) -> tuple[rerank.RerankConfig, str, int, int]:
    """Merge CLI/config-file/default into (config, mode_name, seed, threads)."""
    config_file = {}
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as f:
            config_file = json.load(f)
    get = lambda key: _resolve(args, key, config_file)
    mode_name = get("rerank_mode")
    if mode_name not in RERANK_MODES and mode_name != "none":
        raise L2GError(f"unknown rerank mode {mode_name!r}")
    seed = int(get("seed"))
    threads = int(get("threads"))
    if threads <= 0:
        threads = int(os.environ.get("L2G_THREADS", "1"))
    config = rerank.RerankConfig(
        k_mds=int(get("k_mds")),
        m_rerank=int(get("m")),
        sg_k=int(get("sg_k")),
        beta=float(get("beta")),
        w=float(get("w")),
        chamfer=ChamferParams(power=float(get("power"))),
        mds=MdsConfig(
            dim=int(get("dim")),
            eps=float(get("eps")),
            max_iter=int(get("max_iter")),
            mode=get("mds_mode"),
            init=get("mds_init"),
            seed=seed,
        ),
        mode=RERANK_MODES.get(mode_name, "mds_plus_sg"),
    )
    return config, mode_name, seed, threads


def _run_queries(
    db_index: index_mod.LocalIndex,
    sparse: index_mod.SparseDistances | None,
    queries: features.FeatureCollection,
    globals_store: features.GlobalStore | None,
    config: rerank.RerankConfig,
    mode_name: str,
    threads: int,
) -> tuple[list[dict], list[dict]]:
    """Per-query ranking payloads plus per-query timing records."""
    ids = db_index.db.image_ids

    def one(query: features.LocalFeatureSet) -> tuple[dict, dict]:
        if mode_name == "none":
            ranked = index_mod.rank_all(
                db_index,
                query,
                config.chamfer,
                rescore_depth=min(
                    db_index.approx.rescore_factor
                    * max(config.k_mds, config.m_rerank),
                    db_index.n_images,
                ),
            )
            scores = -ranked.scores  # report similarity-style, descending
            stats = {"search_ms": 0.0, "mds_ms": 0.0, "rerank_ms": 0.0}
        else:
            ranked, stats = rerank.l2g_query_with_stats(
                db_index, sparse, query, globals_store, config
            )
            scores = ranked.scores
        payload = {
            "id": query.image_id,
            "ranking": [
                [ids[o], float(s)] for o, s in zip(ranked.ordinals, scores)
            ],
        }
        timing = {"id": query.image_id, **{k: round(v, 3) if isinstance(v, float) else v for k, v in stats.items()}}
        return payload, timing

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, list(queries)))
    else:
        results = [one(q) for q in queries]
    return [r[0] for r in results], [r[1] for r in results]


def cmd_synth(args) -> int:
    params = synth.BenchmarkParams()
    database, queries, store, gt = synth.generate_partial_match_benchmark(
        args.seed, args.n_db, args.n_queries, args.n_distractors, params
    )
    os.makedirs(args.out, exist_ok=True)
    n_scene = args.n_db
    scene_sets = [database[i] for i in range(n_scene)]
    distractor_sets = [database[i] for i in range(n_scene, len(database))]
    db_path = os.path.join(args.out, "database.l2gf")
    features.save_collection(features.FeatureCollection(scene_sets), db_path)
    distractor_path = None
    if distractor_sets:
        distractor_path = os.path.join(args.out, "distractors.l2gf")
        features.save_collection(
            features.FeatureCollection(distractor_sets), distractor_path
        )
    queries_path = os.path.join(args.out, "queries.l2gf")
    features.save_collection(queries, queries_path)
    globals_path = os.path.join(args.out, "globals.l2gg")
    features.save_globals(store, globals_path)
    gt_path = os.path.join(args.out, "gt.json")
    gt.to_json(gt_path)
    manifest = features.Manifest(
        database=["database.l2gf"],
        queries="queries.l2gf",
        distractors=["distractors.l2gf"] if distractor_path else [],
        globals="globals.l2gg",
        ground_truth="gt.json",
    )
    features.save_manifest(manifest, os.path.join(args.out, "manifest.json"))
    print(f"wrote benchmark to {args.out}", file=sys.stderr)
    return 0


def cmd_build_index(args) -> int:
    db = _load_database(args)
    approx = index_mod.ApproxParams(
        clusters=args.clusters, probe=args.probe, seed=args.seed
    )
    built = index_mod.build_index(db, mode=args.mode, approx=approx)
    index_mod.save_index(built, args.out)
    print(
        f"indexed {built.n_images} images ({args.mode}"
        + (f", {built.n_clusters} clusters" if args.mode == "approx" else "")
        + ")",
        file=sys.stderr,
    )
    return 0


def cmd_sparse(args) -> int:
    db_index = index_mod.load_index(args.index)
    params = ChamferParams(power=args.power)
    external = (
        index_mod.load_external_similarity(args.sim_db) if args.sim_db else None
    )
    sparse = index_mod.precompute_sparse_distances(
        db_index, args.k_nn, params, external=external
    )
    index_mod.save_sparse_distances(sparse, args.out)
    print(
        f"stored {sparse.n_images} x {sparse.k_nn} neighbor dissimilarities",
        file=sys.stderr,
    )
    return 0


def cmd_query(args) -> int:
    config, mode_name, _, threads = _rerank_config(args)
    db_index = index_mod.load_index(args.index)
    sparse = (
        index_mod.load_sparse_distances(args.sparse) if args.sparse else None
    )
    queries = features.load_collection(args.queries)
    globals_store = features.load_globals(args.globals) if args.globals else None
    payloads, timings = _run_queries(
        db_index, sparse, queries, globals_store, config, mode_name, threads
    )
    _write_json(
        {
            "schema": "l2g/rankings-v1",
            "mode": mode_name,
            "config": {
                "k_mds": config.k_mds,
                "m": config.m_rerank,
                "sg_k": config.sg_k,
                "beta": config.beta,
                "w": config.w,
                "power": config.chamfer.power,
                "eps": config.mds.eps,
                "dim": config.mds.dim,
                "mds_mode": config.mds.mode,
                "seed": config.mds.seed,
            },
            "queries": payloads,
        },
        args.out,
    )
    if timings:
        mean = {
            stage: sum(t[stage] for t in timings) / len(timings)
            for stage in ("search_ms", "mds_ms", "rerank_ms")
        }
        print(
            "mean per-query timing: "
            f"search {mean['search_ms']:.1f} ms, mds {mean['mds_ms']:.1f} ms, "
            f"rerank {mean['rerank_ms']:.1f} ms",
            file=sys.stderr,
        )
    if args.timings_out:
        _write_json({"schema": "l2g/timings-v1", "queries": timings}, args.timings_out)
    return 0


def _rankings_ids(path: str) -> dict[str, list[str]]:
    with open(path, "r", encoding="utf-8") as f:
        payload = json.load(f)
    return {
        q["id"]: [item[0] for item in q["ranking"]] for q in payload["queries"]
    }


def _metrics_payload(rankings, gt, protocols, recall_kmax) -> dict:
    payload = {"schema": "l2g/metrics-v1", "protocols": {}}
    for protocol in protocols:
        per_query = evaluation.per_query_ap(rankings, gt, protocol)
        entry = {
            "map": evaluation.mean_ap(rankings, gt, protocol),
            "per_query_ap": {
                qid: (None if ap is None else round(ap, 6))
                for qid, ap in per_query.items()
            },
        }
        if recall_kmax:
            entry["recall_curve"] = [
                list(point)
                for point in evaluation.recall_curve(
                    rankings, gt, protocol, recall_kmax
                )
            ]
        payload["protocols"][protocol] = entry
    return payload


def cmd_eval(args) -> int:
    rankings = _rankings_ids(args.rankings)
    gt = evaluation.GroundTruth.from_json(args.gt)
    protocols = ["medium", "hard"] if args.protocol == "both" else [args.protocol]
    payload = _metrics_payload(rankings, gt, protocols, args.recall_kmax)
    _write_json(payload, args.out)
    for protocol in protocols:
        print(
            f"mAP {protocol}: {payload['protocols'][protocol]['map']:.1f}",
            file=sys.stderr,
        )
    return 0


ABLATION_ROWS = ("full", "no_sg_refinement", "no_merge_w1", "sg_on_raw_dissimilarities")


def _ablation_config(base: rerank.RerankConfig, row: str) -> rerank.RerankConfig:
    from dataclasses import replace

    if row == "full":
        return base
    if row == "no_sg_refinement":
        return replace(base, sg_k=0, beta=0.0)
    if row == "no_merge_w1":
        return replace(base, w=1.0)
    if row == "sg_on_raw_dissimilarities":
        return replace(base, embedding_source="similarity_rows")
    raise ValueError(row)


def cmd_ablate(args) -> int:
    config, _, _, threads = _rerank_config(args)
    db_index = index_mod.load_index(args.index)
    sparse = index_mod.load_sparse_distances(args.sparse)
    queries = features.load_collection(args.queries)
    globals_store = features.load_globals(args.globals)
    gt = evaluation.GroundTruth.from_json(args.gt)

    rows = []
    variants = list(ABLATION_ROWS)
    external_pair = None
    if args.sim_queries and args.sim_db:
        variants.append("external_similarity")
        external_pair = (
            index_mod.load_external_similarity(args.sim_queries),
            index_mod.load_external_similarity(args.sim_db),
        )
    for row in variants:
        if row == "external_similarity":
            row_config = config
            ext_q, ext_db = external_pair
            ext_sparse = index_mod.precompute_sparse_distances(
                db_index, sparse.k_nn, row_config.chamfer, external=ext_db
            )
            payloads = _external_query_payloads(
                db_index, ext_sparse, ext_q, queries, globals_store, row_config
            )
        else:
            row_config = _ablation_config(config, row)
            payloads, _ = _run_queries(
                db_index, sparse, queries, globals_store, row_config,
                "mds+sg", threads,
            )
        rankings = {
            q["id"]: [item[0] for item in q["ranking"]] for q in payloads
        }
        rows.append(
            {
                "configuration": row,
                "map_medium": evaluation.mean_ap(rankings, gt, "medium"),
                "map_hard": evaluation.mean_ap(rankings, gt, "hard"),
            }
        )
    _write_json({"schema": "l2g/ablation-v1", "rows": rows}, args.out)
    for row in rows:
        print(
            f"{row['configuration']}: medium {row['map_medium']:.1f}, "
            f"hard {row['map_hard']:.1f}",
            file=sys.stderr,
        )
    return 0


def _external_query_payloads(
    db_index, ext_sparse, ext_queries, queries, globals_store, config
) -> list[dict]:
    """Full pipeline with externally supplied query-to-database similarities."""
    ids = db_index.db.image_ids
    payloads = []
    for ordinal, query in enumerate(queries):
        initial = index_mod.rank_all(
            db_index, query, config.chamfer, external=ext_queries,
            query_ordinal=ordinal,
        )
        ranked, _ = rerank.rerank_initial_ranking(
            db_index, ext_sparse, query, globals_store, config, initial
        )
        payloads.append(
            {
                "id": query.image_id,
                "ranking": [
                    [ids[o], float(s)] for o, s in zip(ranked.ordinals, ranked.scores)
                ],
            }
        )
    return payloads


def cmd_sweep(args) -> int:
    values = [v for v in args.values.split(",") if v != ""]
    if not values:
        raise L2GError("empty --values list")
    param = args.param
    config, mode_name, _, threads = _rerank_config(args)
    db_index = index_mod.load_index(args.index)
    sparse = index_mod.load_sparse_distances(args.sparse)
    queries = features.load_collection(args.queries)
    globals_store = features.load_globals(args.globals) if args.globals else None
    gt = evaluation.GroundTruth.from_json(args.gt)

    from dataclasses import replace

    points = []
    for raw in values:
        value = float(raw)
        if param == "k-mds":
            cfg = replace(config, k_mds=int(value))
        elif param == "M":
            cfg = replace(config, m_rerank=int(value))
        elif param == "w":
            cfg = replace(config, w=value)
        elif param == "power":
            cfg = replace(config, chamfer=ChamferParams(power=value))
        elif param == "eps":
            cfg = replace(config, mds=replace(config.mds, eps=value))
        else:
            raise L2GError(f"unknown sweep parameter {param!r}")
        payloads, _ = _run_queries(
            db_index, sparse, queries, globals_store, cfg, mode_name, threads
        )
        rankings = {q["id"]: [i[0] for i in q["ranking"]] for q in payloads}
        points.append(
            {
                "value": value,
                "map_medium": evaluation.mean_ap(rankings, gt, "medium"),
                "map_hard": evaluation.mean_ap(rankings, gt, "hard"),
            }
        )
        print(
            f"{param}={raw}: medium {points[-1]['map_medium']:.1f}, "
            f"hard {points[-1]['map_hard']:.1f}",
            file=sys.stderr,
        )
    _write_json(
        {"schema": "l2g/sweep-v1", "param": param, "points": points}, args.out
    )
    return 0


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (CLI flags take precedence)")
    p.add_argument("--rerank-mode", dest="rerank_mode",
                   choices=["mds", "sg", "mds+sg", "none"])
    p.add_argument("--k-mds", dest="k_mds", type=int)
    p.add_argument("--M", dest="m", type=int)
    p.add_argument("--sg-k", dest="sg_k", type=int)
    p.add_argument("--beta", type=float)
    p.add_argument("--w", type=float)
    p.add_argument("--power", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--dim", type=int)
    p.add_argument("--mds-mode", dest="mds_mode", choices=["metric", "nonmetric"])
    p.add_argument("--mds-init", dest="mds_init", choices=["classical", "random"])
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int,
                   help="query parallelism (default: L2G_THREADS or 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="l2g",
        description="Local-feature retrieval with on-the-fly MDS re-ranking",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic benchmark")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--n-db", dest="n_db", type=int, default=2000)
    p.add_argument("--n-queries", dest="n_queries", type=int, default=50)
    p.add_argument("--n-distractors", dest="n_distractors", type=int, default=1500)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("build-index", help="build a local-feature index")
    p.add_argument("--features", nargs="+", help="L2GF files, concatenated in order")
    p.add_argument("--manifest", help="manifest.json (database + distractors)")
    p.add_argument("--mode", choices=["exact", "approx"], default="exact")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--clusters", type=int, default=0,
                   help="codebook size (0 = sqrt of descriptor count)")
    p.add_argument("--probe", type=int, default=8)
    p.set_defaults(func=cmd_build_index)

    p = sub.add_parser("sparse", help="precompute neighbor dissimilarities")
    p.add_argument("--index", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k-nn", dest="k_nn", type=int, default=700)
    p.add_argument("--power", type=float, default=0.01)
    p.add_argument("--sim-db", dest="sim_db",
                   help="L2GS database-to-database similarities replacing Chamfer")
    p.set_defaults(func=cmd_sparse)

    p = sub.add_parser("query", help="run retrieval with re-ranking")
    p.add_argument("--index", required=True)
    p.add_argument("--sparse")
    p.add_argument("--queries", required=True)
    p.add_argument("--globals")
    p.add_argument("--out")
    p.add_argument("--timings-out", dest="timings_out")
    _add_config_flags(p)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("eval", help="score rankings against ground truth")
    p.add_argument("--rankings", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--protocol", choices=["medium", "hard", "both"], default="both")
    p.add_argument("--recall-kmax", dest="recall_kmax", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the ablation table")
    p.add_argument("--index", required=True)
    p.add_argument("--sparse", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--globals", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out")
    p.add_argument("--sim-queries", dest="sim_queries",
                   help="L2GS query-to-database similarities (extra row)")
    p.add_argument("--sim-db", dest="sim_db",
                   help="L2GS database-to-database similarities (extra row)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", help="mAP across one hyperparameter")
    p.add_argument("--param", required=True,
                   choices=["k-mds", "M", "w", "power", "eps"])
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--index", required=True)
    p.add_argument("--sparse", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--globals")
    p.add_argument("--gt", required=True)
    p.add_argument("--out")
    _add_config_flags(p)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except L2GError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
