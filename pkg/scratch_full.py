import time
import numpy as np
from dataclasses import replace
from l2g.chamfer import ChamferParams
from l2g.evaluation import mean_ap
from l2g.index import build_index, precompute_sparse_distances, rank_all
from l2g.rerank import RerankConfig, l2g_query_with_stats
from l2g.synth import generate_partial_match_benchmark

t_all = time.time()
t0 = time.time()
db, queries, store, gt = generate_partial_match_benchmark(42, 2000, 50, 1500)
print(f"gen {time.time()-t0:.0f}s, total desc={sum(s.n for s in db)}", flush=True)
cp = ChamferParams(power=0.01)
index = build_index(db, "exact")
t0 = time.time()
sparse = precompute_sparse_distances(index, 700, cp)
print(f"sparse {time.time()-t0:.0f}s", flush=True)
ids = db.image_ids

def ev(rankings):
    return mean_ap(rankings, gt, "medium"), mean_ap(rankings, gt, "hard")

t0 = time.time()
rankings_none = {q.image_id: [ids[o] for o in rank_all(index, q, cp).ordinals] for q in queries}
print(f"none {ev(rankings_none)} ({time.time()-t0:.0f}s)", flush=True)
gmat = store.matrix(ids)
rank_g = {q.image_id: [ids[o] for o in np.lexsort((np.arange(len(ids)), -(gmat @ store.get(q.image_id).astype(np.float64))))] for q in queries}
print(f"global {ev(rank_g)}", flush=True)

base = RerankConfig()  # defaults
rows = [("mds_only", replace(base, mode="mds_only")),
        ("mds_plus_sg", base),
        ("no_sg_refinement", replace(base, sg_k=0, beta=0.0)),
        ("no_merge_w1", replace(base, w=1.0)),
        ("sg_on_raw_dissim", replace(base, embedding_source="similarity_rows")),
        ("sg_only", replace(base, mode="sg_only"))]
for label, cfg in rows:
    t0 = time.time()
    jobs = {}
    iters, per_q = [], []
    for q in queries:
        t1 = time.time()
        ranked, stats = l2g_query_with_stats(index, sparse, q, store, cfg)
        per_q.append(time.time()-t1)
        iters.append(stats["mds_iterations"])
        jobs[q.image_id] = [ids[o] for o in ranked.ordinals]
    print(f"{label}: {ev(jobs)} total {time.time()-t0:.0f}s per-q mean {np.mean(per_q):.2f}s max {max(per_q):.2f}s med-iters {np.median(iters)}", flush=True)
print(f"TOTAL {time.time()-t_all:.0f}s", flush=True)
