"""Scratch harness: measure mAP of every mode for one BenchmarkParams."""
import sys
import time

import numpy as np

from l2g.chamfer import ChamferParams
from l2g.evaluation import mean_ap
from l2g.index import build_index, precompute_sparse_distances, rank_all
from l2g.mds import MdsConfig
from l2g.rerank import RerankConfig, l2g_query
from l2g.synth import BenchmarkParams, generate_partial_match_benchmark


def measure(params, n_db=400, n_q=10, n_dx=300, k_nn=100, k_mds=100, m=250, seed=42,
            w=0.19, label=""):
    t0 = time.time()
    db, queries, store, gt = generate_partial_match_benchmark(seed, n_db, n_q, n_dx, params)
    cp = ChamferParams(power=0.01)
    index = build_index(db, "exact")
    sparse = precompute_sparse_distances(index, k_nn, cp)
    ids = db.image_ids

    def ev(rankfn):
        rankings = {q.image_id: [ids[o] for o in rankfn(q)] for q in queries}
        return mean_ap(rankings, gt, "medium"), mean_ap(rankings, gt, "hard")

    out = {}
    out["none"] = ev(lambda q: rank_all(index, q, cp).ordinals)
    gmat = store.matrix(ids)
    out["global"] = ev(lambda q: np.lexsort(
        (np.arange(len(ids)), -(gmat @ store.get(q.image_id).astype(np.float64)))))
    for mode in ("mds_only", "mds_plus_sg", "sg_only"):
        cfg = RerankConfig(k_mds=k_mds, m_rerank=m, w=w,
                           mds=MdsConfig(dim=32), mode=mode, chamfer=cp)
        out[mode] = ev(lambda q: l2g_query(index, sparse, q, store, cfg).ordinals)
    dt = time.time() - t0
    print(f"[{label}] ({dt:.0f}s)")
    for k, v in out.items():
        print(f"   {k:12s} medium {v[0]:5.1f} hard {v[1]:5.1f}")
    ok = (out["mds_plus_sg"][0] > out["mds_only"][0] > out["none"][0]
          and out["mds_plus_sg"][1] > out["mds_only"][1] > out["none"][1]
          and out["mds_plus_sg"][0] >= out["global"][0] + 10
          and out["mds_plus_sg"][1] >= out["global"][1] + 10)
    print(f"   ordering+gap OK: {ok}")
    return out


if __name__ == "__main__":
    measure(BenchmarkParams(), label="v5")
