"""Write a synthetic WARC collection plus a manifest of what it contains.

The manifest (JSON) lists every page, its domain and visible text, and every
anchor, so derivative outputs can be checked by hand. A registry manifest for
`warc-distill collection register` is written alongside.

    python3 scripts/make_synthetic_collection.py out/ --pages 200 --domains 8
"""

import argparse
import hashlib
import json
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "tests"))

import warcgen  # noqa: E402


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out_dir")
    ap.add_argument("--pages", type=int, default=200)
    ap.add_argument("--domains", type=int, default=8)
    ap.add_argument("--files", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--plain", action="store_true", help="write .warc instead of .warc.gz")
    ap.add_argument("--no-extras", action="store_true", help="only page responses, no request/revisit/image noise")
    ap.add_argument("--id", default="synthetic", help="collection id for the registry manifest")
    args = ap.parse_args()

    site = warcgen.synthetic_site(args.pages, args.domains, seed=args.seed)
    warc_dir = os.path.join(args.out_dir, "warcs")
    paths = warcgen.write_collection(warc_dir, site, n_files=args.files, gz=not args.plain,
                                     extras=not args.no_extras, seed=args.seed)
    truth = {
        "pages": [{"url": p.url, "domain": p.domain, "crawl_date": p.timestamp[:8], "text": p.text} for p in site.pages],
        "anchors": [{"src": s, "dest": d, "anchor": a, "crawl_date": c} for s, d, a, c in site.anchors],
    }
    with open(os.path.join(args.out_dir, "truth.json"), "w", encoding="utf-8") as fh:
        json.dump(truth, fh, indent=1)
    registry_manifest = {
        "id": args.id,
        "title": f"Synthetic collection ({args.pages} pages, {args.domains} domains)",
        "files": [{"url": f"warcs/{p.name}", "size": p.stat().st_size,
                   "md5": hashlib.md5(p.read_bytes()).hexdigest()} for p in paths],
    }
    with open(os.path.join(args.out_dir, "collection.json"), "w", encoding="utf-8") as fh:
        json.dump(registry_manifest, fh, indent=1)
    print(f"wrote {len(paths)} files, {len(site.pages)} pages, {len(site.anchors)} anchors to {args.out_dir}")
    print(f"register with: warc-distill collection register {os.path.join(args.out_dir, 'collection.json')}")


if __name__ == "__main__":
    main()
