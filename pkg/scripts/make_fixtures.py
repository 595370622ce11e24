"""Regenerate the topoB-sub, topoB-sub-bg and topoC fixtures and their oracle values.

Every link in these networks is bidirectional. Overlay-underlay links carry
2 packets/slot, underlay-underlay links 1. The lambda_max (and, for topoC,
the utility optimum) stored in each file is computed here by the LP
oracles, never typed in by hand.

    python3 scripts/make_fixtures.py [--check]

With ``--check`` nothing is written; the script exits non-zero if a stored
value disagrees with a fresh oracle run.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from overlay_routing import lp
from overlay_routing.harness import effective_capacity, oracle_lambda_max
from overlay_routing.topology import FIXTURE_DIR, load_scenario

UNDERLAY_EDGES = [(5, 6), (5, 7), (7, 10), (6, 9), (6, 8), (8, 9), (9, 12), (12, 14),
                  (14, 13), (10, 11), (11, 13), (8, 11)]
ATTACH = {1: (7, 10), 2: (12, 8), 3: (6, 9), 4: (13, 5)}
BACKGROUND = [{"path": ["7", "5", "6"], "rate": 0.5},
              {"path": ["8", "9", "12", "14"], "rate": 0.2}]
RATE_PATH = ["15", "5", "6", "9", "12", "14", "16"]
UTILITY = {"weight": 20.0, "cap": 20.0}


def _links(edges, attach):
    links = []
    for a, b in edges:
        links += [[str(a), str(b), 1], [str(b), str(a), 1]]
    for o, us in attach.items():
        for u in us:
            links += [[str(o), str(u), 2], [str(u), str(o), 2]]
    return links


def topo_b() -> dict:
    return {
        "name": "topoB-sub",
        "description": "Four overlay nodes over a ten-node underlay; full throughput needs overlay relaying.",
        "nodes": [{"id": str(i), "kind": "overlay"} for i in (1, 2, 3, 4)]
                 + [{"id": str(i), "kind": "underlay"} for i in range(5, 15)],
        "links": _links(UNDERLAY_EDGES, ATTACH),
        "commodities": [{"id": 1, "source": "1", "destination": "3"},
                        {"id": 2, "source": "2", "destination": "4"}],
    }


def topo_b_bg() -> dict:
    doc = topo_b()
    doc["name"] = "topoB-sub-bg"
    doc["description"] = "topoB-sub plus two Poisson background flows inside the underlay."
    doc["background"] = BACKGROUND
    return doc


def topo_c() -> dict:
    doc = topo_b_bg()
    doc["name"] = "topoC"
    doc["description"] = ("topoB-sub-bg plus a third commodity from overlay node 15 to overlay node 16, "
                          "pinned to one tunnel that crosses the paths of commodities 1 and 2.")
    doc["nodes"] += [{"id": "15", "kind": "overlay"}, {"id": "16", "kind": "overlay"}]
    doc["links"] += [["15", "5", 1], ["14", "16", 2]]
    doc["commodities"].append({"id": 3, "source": "15", "destination": "16"})
    doc["restrict"] = {"3": [RATE_PATH]}
    doc["utilities"] = [{"commodity": k, **UTILITY} for k in (1, 2, 3)]
    return doc


def with_oracles(doc: dict) -> dict:
    sc = load_scenario(doc)
    doc = dict(doc)
    doc["lambda_max"] = [round(float(x), 9) for x in oracle_lambda_max(sc)]
    if sc.utilities:
        opt = lp.utility_optimum_oracle(sc, {u.commodity: u.weight for u in sc.utilities},
                                        {u.commodity: u.cap for u in sc.utilities},
                                        effective_capacity(sc), tol=1e-7)
        doc["utility_optimum"] = {"rates": {str(k): round(v, 6) for k, v in opt.rates.items()},
                                  "utility": round(opt.utility, 6)}
    return doc


FIXTURES = {"topoB_sub": topo_b, "topoB_sub_bg": topo_b_bg, "topoC": topo_c}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--check", action="store_true", help="compare instead of writing")
    args = ap.parse_args(argv)
    bad = 0
    for fname, build in FIXTURES.items():
        doc = with_oracles(build())
        path = FIXTURE_DIR / f"{fname}.json"
        if args.check:
            old = json.loads(path.read_text())
            same = np.allclose(old["lambda_max"], doc["lambda_max"], atol=1e-6)
            print(f"{fname}: lambda_max {'ok' if same else 'MISMATCH'} {doc['lambda_max']}")
            bad += not same
        else:
            path.write_text(json.dumps(doc, indent=1) + "\n")
            print(f"wrote {path} lambda_max={doc['lambda_max']}"
                  + (f" utility_optimum={doc['utility_optimum']}" if "utility_optimum" in doc else ""))
    return 1 if bad else 0


if __name__ == "__main__":
    sys.exit(main())
