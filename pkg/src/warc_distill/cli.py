"""Command-line interface.

    warc-distill derive TARGET... [all|domains|webgraph|text] [--out-dir DIR]
    warc-distill recipe NAME [options] PATH...
    warc-distill collection register|fetch|run|status ...
    warc-distill plan run PLAN.json PATH...

Exit status: 0 success, 1 processing failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import tempfile

from .archive_io import FORMAT_HINTS, collect_paths
from .derivatives import DEFAULT_MIN_EXCLUSIVE, DERIVATIVES, DeriveConfig, derive_all
from .errors import ConfigError, ProcessingError
from .formats import FORMATS
from .pipeline import Plan, RunOptions, Sink, run_plans
from .recipes import RECIPES, RecipeParams, get_recipe
from .registry import CollectionManifest, Registry

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2
WHICH = ("all",) + DERIVATIVES


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _default_workers() -> int:
    return os.cpu_count() or 1


def _positive(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _non_negative(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return value


def _csv_list(text: str) -> list:
    return [t.strip() for t in text.split(",") if t.strip()]


def _print_stats(stats: dict, stream=None) -> None:
    for key, value in stats.items():
        if isinstance(value, dict):
            value = " ".join(f"{k}={v}" for k, v in value.items())
        print(f"{key}: {value}", file=stream or sys.stdout)


# -- derive -------------------------------------------------------------------------


def _split_targets(targets: list, which_opt: str | None):
    targets = list(targets)
    which = which_opt
    if len(targets) > 1 and targets[-1] in WHICH and not os.path.exists(targets[-1]):
        if which is not None and which != targets[-1]:
            raise ConfigError(f"conflicting derivative choices {targets[-1]!r} and --which {which!r}")
        which = targets.pop()
    return targets, which or "all"


def _resolve_inputs(targets: list, home: str | None):
    """Paths for the targets; a lone registered collection id stands for its fetched files."""
    if len(targets) == 1 and not os.path.exists(targets[0]):
        reg = Registry(home)
        if targets[0] in reg.ids():
            return collect_paths(reg.local_files(targets[0])), targets[0]
    return collect_paths(targets), None


def cmd_derive(args) -> int:
    targets, which = _split_targets(args.targets, args.which)
    paths, cid = _resolve_inputs(targets, args.home)
    chosen = DERIVATIVES if which == "all" else (which,)
    config = DeriveConfig(
        collection_id=args.id or cid or "collection",
        out_dir=args.out_dir,
        which=chosen,
        min_exclusive=args.min_count,
        workers=args.workers,
        format_hint=args.format,
    )
    report = derive_all(paths, config)
    summary = report.summary()
    summary["files"] = " ".join(sorted(os.path.basename(p) for p in report.files.values()))
    _print_stats(summary)
    return EXIT_OK


# -- recipe -------------------------------------------------------------------------


def _recipe_params(args) -> RecipeParams:
    return RecipeParams(
        pattern=args.pattern,
        keywords=args.keywords or [],
        url=args.url or [],
        site=args.site,
        mime=args.mime or [],
        date_from=args.date_from,
        date_to=args.date_to,
        limit=args.limit,
    )


def _run_to_stream(plan: Plan, paths: list, options: RunOptions, fmt: str, out: str | None):
    """Run ``plan`` into ``out`` or, when out is None, into stdout via a spool file."""
    if out is not None:
        result = run_plans([Plan(plan.view, plan.stages, (Sink(out, fmt),), plan.limit)], paths, options)[0]
        return result
    spool_dir = tempfile.mkdtemp(prefix="warc-distill-out-")
    try:
        spool = os.path.join(spool_dir, "out")
        result = run_plans([Plan(plan.view, plan.stages, (Sink(spool, fmt),), plan.limit)], paths, options)[0]
        with open(spool, "rb") as fh:
            sys.stdout.flush()
            shutil.copyfileobj(fh, sys.stdout.buffer)
            sys.stdout.buffer.flush()
        return result
    finally:
        shutil.rmtree(spool_dir, ignore_errors=True)


def cmd_recipe(args) -> int:
    spec = get_recipe(args.name)
    plan = spec.plan(_recipe_params(args))
    if args.print_plan:
        print(plan.to_json())
        return EXIT_OK
    if not args.paths:
        raise ConfigError("recipe needs at least one archive path")
    paths = collect_paths(args.paths)
    options = RunOptions(workers=args.workers, format_hint=args.format)
    result = _run_to_stream(plan, paths, options, args.output_format, args.out)
    s = result.stats
    if args.out is not None or args.verbose:
        print(
            f"rows={result.row_count} records_read={s.records_read} records_skipped={s.records_skipped} "
            f"files_skipped={s.files_skipped}",
            file=sys.stderr,
        )
    return EXIT_OK


def _list_recipes() -> str:
    width = max(len(n) for n in RECIPES)
    return "\n".join(f"  {name.ljust(width)}  {spec.question}" for name, spec in RECIPES.items())


# -- plan ---------------------------------------------------------------------------


def cmd_plan(args) -> int:
    try:
        with open(args.plan, encoding="utf-8") as fh:
            plan = Plan.from_json(fh.read())
    except FileNotFoundError:
        raise ConfigError(f"plan file not found: {args.plan}") from None
    paths = collect_paths(args.paths)
    options = RunOptions(workers=args.workers, format_hint=args.format)
    if plan.sinks:
        result = run_plans([plan], paths, options)[0]
        print(f"rows={result.row_count} records_read={result.stats.records_read} "
              f"records_skipped={result.stats.records_skipped}", file=sys.stderr)
    else:
        _run_to_stream(plan, paths, options, args.output_format, None)
    return EXIT_OK


# -- collection ---------------------------------------------------------------------


def _status_table(reg: Registry, cid: str) -> str:
    lines = [f"collection {cid}"]
    header = ("stage", "status", "started_at", "ended_at", "detail")
    rows = []
    for stage, job in reg.state(cid).items():
        detail = job.error or " ".join(f"{k}={v}" for k, v in job.stats.items() if not isinstance(v, (list, dict)))
        rows.append((stage, job.status, job.started_at or "-", job.ended_at or "-", detail))
    widths = [max(len(str(r[i])) for r in rows + [header]) for i in range(4)]
    for r in [header] + rows:
        lines.append("  ".join(str(v).ljust(w) for v, w in zip(r, widths)) + "  " + str(r[4]))
    return "\n".join(line.rstrip() for line in lines)


def cmd_collection(args) -> int:
    reg = Registry(args.home)
    action = args.action
    if action == "register":
        manifest = CollectionManifest.load(args.manifest)
        reg.register(manifest)
        print(f"registered {manifest.id} ({len(manifest.files)} files)")
        print(_status_table(reg, manifest.id))
        return EXIT_OK
    if action == "status":
        ids = [args.id] if args.id else reg.ids()
        if args.id:
            reg.get(args.id)
        if not ids:
            print("no collections registered")
        for cid in ids:
            print(_status_table(reg, cid))
            if args.history:
                for job in reg.history(cid):
                    print(json.dumps(job.to_dict(), sort_keys=True))
        return EXIT_OK
    if action == "fetch":
        # Fetch as the first link of the chain so the job log records it.
        jobs = reg.run_chain(args.id, force=args.force, stages=("fetch",))
        _report_jobs(jobs)
        return EXIT_OK
    jobs = reg.run_chain(
        args.id,
        force=args.force,
        workers=args.workers,
        min_exclusive=args.min_count,
        webhook=args.webhook,
    )
    _report_jobs(jobs)
    print(_status_table(reg, args.id))
    return EXIT_OK


def _report_jobs(jobs) -> None:
    if not jobs:
        print("nothing to do: every stage already finished (use --force to re-run)")
        return
    for job in jobs:
        if job.status != "running":
            print(f"{job.stage}: {job.status}")


# -- parser -------------------------------------------------------------------------


def _add_run_flags(p) -> None:
    p.add_argument("--workers", type=_positive, default=_default_workers(),
                   help="worker processes (default: CPU count); never changes the output")
    p.add_argument("--format", choices=FORMAT_HINTS, default="auto", help="archive format (default: sniff)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="warc-distill", description="Streaming analytics over WARC/ARC web archives.")
    parser.add_argument("--home", default=None, help="registry directory (default: $WARC_DISTILL_HOME or ~/.warc_distill)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("derive", help="compute the standard derivatives")
    p.add_argument("targets", nargs="+", metavar="TARGET",
                   help="archive files, directories or a registered collection id; "
                        "may end with one of " + "|".join(WHICH))
    p.add_argument("--which", choices=WHICH, default=None)
    p.add_argument("--min-count", type=_non_negative, default=DEFAULT_MIN_EXCLUSIVE,
                   help="keep webgraph edges with count strictly greater than this (default: 5)")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--id", default=None, help="collection id used in output file names")
    _add_run_flags(p)
    p.set_defaults(func=cmd_derive)

    p = sub.add_parser("recipe", help="run a cookbook recipe", epilog="recipes:\n" + _list_recipes(),
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("name", metavar="NAME")
    p.add_argument("paths", nargs="*", metavar="PATH")
    p.add_argument("--pattern", help="regular expression matched against URLs")
    p.add_argument("--keywords", type=_csv_list, help="comma-separated keywords")
    p.add_argument("--url", action="append", help="target URL (repeatable)")
    p.add_argument("--site", help="domain; subdomains match too")
    p.add_argument("--mime", type=_csv_list, help="comma-separated image types, e.g. image/gif")
    p.add_argument("--from", dest="date_from", help="earliest crawl date, yyyy[MM[dd]]")
    p.add_argument("--to", dest="date_to", help="latest crawl date, yyyy[MM[dd]]")
    p.add_argument("--limit", type=_non_negative, default=None, help="stop after N output rows")
    p.add_argument("--out", default=None, help="write here instead of stdout")
    p.add_argument("--output-format", choices=FORMATS, default="csv")
    p.add_argument("--print-plan", action="store_true", help="print the compiled plan as JSON and exit")
    _add_run_flags(p)
    p.set_defaults(func=cmd_recipe)

    p = sub.add_parser("collection", help="manage registered collections and their job chains")
    actions = p.add_subparsers(dest="action", required=True, parser_class=_Parser)
    a = actions.add_parser("register")
    a.add_argument("manifest")
    a = actions.add_parser("fetch")
    a.add_argument("id")
    a.add_argument("--force", action="store_true")
    a = actions.add_parser("run")
    a.add_argument("id")
    a.add_argument("--force", action="store_true", help="re-run finished stages")
    a.add_argument("--workers", type=_positive, default=_default_workers())
    a.add_argument("--min-count", type=_non_negative, default=DEFAULT_MIN_EXCLUSIVE)
    a.add_argument("--webhook", default=None, help="URL to POST the final job record to")
    a = actions.add_parser("status")
    a.add_argument("id", nargs="?")
    a.add_argument("--history", action="store_true", help="also print every job log entry")
    p.set_defaults(func=cmd_collection)

    p = sub.add_parser("plan", help="run a plan document")
    plan_actions = p.add_subparsers(dest="action", required=True, parser_class=_Parser)
    a = plan_actions.add_parser("run")
    a.add_argument("plan")
    a.add_argument("paths", nargs="+", metavar="PATH")
    a.add_argument("--output-format", choices=FORMATS, default="csv")
    _add_run_flags(a)
    p.set_defaults(func=cmd_plan)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    # Paths may follow options (``recipe NAME --site x DIR``); argparse leaves
    # such trailing positionals over, so hand them back to the path list.
    args, extra = parser.parse_known_args(argv)
    if extra:
        slot = {"derive": "targets", "recipe": "paths", "plan": "paths"}.get(args.command)
        if slot is None or any(e.startswith("-") for e in extra):
            parser.error("unrecognized arguments: " + " ".join(extra))
        setattr(args, slot, list(getattr(args, slot) or []) + extra)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        code = args.func(args)
        sys.stdout.flush()
        return code
    except ConfigError as exc:
        print(f"warc-distill: error: {exc}", file=sys.stderr)
        if getattr(args, "command", None) == "recipe" and "unknown recipe" in str(exc):
            print("valid recipes:\n" + _list_recipes(), file=sys.stderr)
        return EXIT_USAGE
    except ProcessingError as exc:
        print(f"warc-distill: failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except KeyboardInterrupt:
        return EXIT_FAILURE
    except OSError as exc:
        if isinstance(exc, BrokenPipeError):
            # Reader went away (e.g. piped into head); not a failure of ours.
            sys.stderr.close()
            return EXIT_OK
        print(f"warc-distill: failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
