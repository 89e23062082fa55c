"""Generate a large synthetic .warc.gz collection and time `derive all` on it.

Reports wall time, throughput and the peak summed RSS of the CLI process
tree (workers included).

    python3 scripts/bench_streaming.py --size-mb 1024 --html-share 0.3
"""

import argparse
import os
import sys
import tempfile
import time

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "tests"))

import warcgen  # noqa: E402
from benchutil import run_measured  # noqa: E402


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size-mb", type=float, default=256)
    ap.add_argument("--html-share", type=float, default=0.3,
                    help="fraction of compressed bytes that are HTML pages (rest is images)")
    ap.add_argument("--files", type=int, default=8)
    ap.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    ap.add_argument("--dir", help="work directory (default: a temporary one)")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    work = args.dir or tempfile.mkdtemp(prefix="warc-bench-")
    src = os.path.join(work, "warcs")
    t0 = time.perf_counter()
    paths, manifest = warcgen.bulk_collection(src, int(args.size_mb * 1024 * 1024), args.html_share,
                                              n_files=args.files, seed=args.seed)
    print(f"generated {manifest.bytes_written / 2**20:.1f} MiB in {len(paths)} files "
          f"({manifest.pages} pages, {manifest.images} images) in {time.perf_counter() - t0:.1f}s")

    res = run_measured([sys.executable, "-m", "warc_distill", "derive", src, "all",
                        "--out-dir", os.path.join(work, "out"), "--workers", str(args.workers)])
    if res.returncode != 0:
        print(res.stderr, file=sys.stderr)
        sys.exit(res.returncode)
    print(res.stdout.strip())
    mib = manifest.bytes_written / 2**20
    print(f"wall_s: {res.elapsed_s:.1f}")
    print(f"throughput_mib_s: {mib / res.elapsed_s:.2f}")
    print(f"peak_tree_rss_mib: {res.peak_rss / 2**20:.1f}")
    print(f"workers: {args.workers} (cpus: {os.cpu_count()})")


if __name__ == "__main__":
    main()
