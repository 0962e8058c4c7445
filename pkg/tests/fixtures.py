"""Hand-built five-query geometry shared by the evaluation and CLI tests.

Queries q1..q5 sit at x = 0, 1000, ..., 4000 m.  Every target ``t<k>_near``
is 10 m from query k, every ``t<k>_far`` 30 m away (outside 25 m).  Queries
1-3 rank a near target first; query 4 finds it at rank 3, query 5 at rank 5.
So recall@1 = 3/5 and recall@5 = 5/5.
"""

import numpy as np

from panomatch.corpus import GeoPosition
from panomatch.retrieval import RankedList

QUERY_POS = {f"q{k}": GeoPosition.planar(1000.0 * (k - 1), 0.0) for k in range(1, 6)}


def target_positions():
    out = {}
    for k in range(1, 6):
        x = 1000.0 * (k - 1)
        out[f"t{k}_near"] = GeoPosition.planar(x + 10.0, 0.0)
        out[f"t{k}_far"] = GeoPosition.planar(x, 30.0)
        out[f"t{k}_far2"] = GeoPosition.planar(x - 30.0, 0.0)
        out[f"t{k}_far3"] = GeoPosition.planar(x, -30.0)
        out[f"t{k}_far4"] = GeoPosition.planar(x + 18.0, 24.0)  # exactly 30 m
    return out


ORDERS = {
    "q1": ["t1_near", "t1_far", "t2_near", "t1_far2", "t1_far3"],
    "q2": ["t2_near", "t2_far", "t2_far2", "t2_far3", "t2_far4"],
    "q3": ["t3_near", "t1_near", "t3_far", "t3_far2", "t3_far3"],
    "q4": ["t4_far", "t4_far2", "t4_near", "t4_far3", "t4_far4"],
    "q5": ["t5_far", "t5_far2", "t5_far3", "t5_far4", "t5_near"],
}


def ranked_lists():
    return [RankedList(q, list(ids), np.linspace(1.0, 0.5, len(ids)), len(ids))
            for q, ids in ORDERS.items()]


def write_files(tmp_path):
    """Ranked CSV plus query/dataset metadata CSVs for the fixture."""
    ranked = tmp_path / "ranked.csv"
    lines = ["query_id,rank,target_id,score"]
    for q, ids in ORDERS.items():
        for rank, (tid, score) in enumerate(zip(ids, np.linspace(1.0, 0.5, 5)), start=1):
            lines.append(f"{q},{rank},{tid},{float(score)!r}")
    ranked.write_text("\n".join(lines) + "\n")
    qmeta = tmp_path / "qmeta.csv"
    qmeta.write_text("image_id,location_id,x,y\n" + "".join(
        f"{q}_img,{q},{p.a},{p.b}\n" for q, p in QUERY_POS.items()))
    dmeta = tmp_path / "dmeta.csv"
    dmeta.write_text("image_id,location_id,x,y\n" + "".join(
        f"{t},{t},{p.a},{p.b}\n" for t, p in target_positions().items()))
    return ranked, qmeta, dmeta
