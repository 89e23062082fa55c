"""Domain webgraph of a collection: top domains by PageRank, plus a GraphML file.

    python3 scripts/webgraph_demo.py path/to/warcs --min-count 0 --top 10 --graphml web.graphml

With no path, a small synthetic collection is generated first.
"""

import argparse
import os
import sys
import tempfile

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "tests"))

from warc_distill.derivatives import derive_domain_webgraph  # noqa: E402
from warc_distill.graph import build_graph, degree_stats, export_graphml, pagerank  # noqa: E402


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("paths", nargs="*")
    ap.add_argument("--min-count", type=int, default=5, help="keep edges seen more than this many times")
    ap.add_argument("--top", type=int, default=10)
    ap.add_argument("--graphml", help="also write the graph here")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    paths = args.paths
    if not paths:
        import warcgen

        d = tempfile.mkdtemp(prefix="webgraph-demo-")
        site = warcgen.synthetic_site(300, 10, seed=3)
        paths = [str(p) for p in warcgen.write_collection(d, site, n_files=3)]
        print(f"no input given; generated {len(site.pages)} pages in {d}")

    edges = derive_domain_webgraph(paths, args.min_count, workers=args.workers)
    graph = build_graph(edges.rows)
    scores = pagerank(graph)
    degrees = degree_stats(graph)
    print(f"{graph.n_nodes} domains, {graph.n_edges} edges (count > {args.min_count}), total weight {edges.total()}")
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))[: args.top]
    width = max((len(d) for d, _ in ranked), default=6)
    print(f"{'domain':<{width}}  pagerank  in  out  w_in  w_out")
    for domain, score in ranked:
        s = degrees[domain]
        print(f"{domain:<{width}}  {score:8.5f} {s.in_degree:3d} {s.out_degree:4d} {s.weighted_in:5d} {s.weighted_out:6d}")
    if args.graphml:
        export_graphml(graph, args.graphml)
        print(f"wrote {args.graphml}")


if __name__ == "__main__":
    main()
