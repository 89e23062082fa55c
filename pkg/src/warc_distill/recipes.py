"""Cookbook recipes: named, parameterized plans for common questions.

Each recipe turns a :class:`RecipeParams` into a :class:`~warc_distill.pipeline.Plan`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from .errors import ConfigError
from .pipeline import LINK_COLUMNS, Aggregate, Extract, Filter, Plan, Sink, compile_plan

IMAGE_PREFIX = "image/"


@dataclass
class RecipeParams:
    pattern: str | None = None
    keywords: list = field(default_factory=list)
    url: list = field(default_factory=list)
    site: str | None = None
    mime: list = field(default_factory=list)
    date_from: str | None = None
    date_to: str | None = None
    limit: int | None = None


@dataclass(frozen=True)
class RecipeSpec:
    name: str
    question: str
    parameters: tuple  # RecipeParams attributes the recipe reads
    required: tuple
    build: Callable[[RecipeParams], Plan]

    def plan(self, params: RecipeParams, sinks=()) -> Plan:
        missing = [p for p in self.required if not getattr(params, p)]
        if missing:
            flags = ", ".join("--" + p.replace("_", "-") for p in missing)
            raise ConfigError(f"recipe {self.name} requires {flags}")
        if params.limit is not None and params.limit < 0:
            raise ConfigError("--limit must be >= 0")
        plan = self.build(params)
        plan = Plan(plan.view, plan.stages, tuple(sinks), params.limit)
        compile_plan(plan)
        return plan


def _dates(p: RecipeParams) -> list:
    if p.date_from or p.date_to:
        params = {}
        if p.date_from:
            params["start"] = p.date_from
        if p.date_to:
            params["end"] = p.date_to
        return [Filter("date_range", params)]
    return []


def _site(p: RecipeParams, field_name: str = "domain") -> list:
    return [Filter("domain_is", {"field": field_name, "site": p.site})] if p.site else []


def _pattern(p: RecipeParams, field_name: str = "url") -> list:
    return [Filter("url_matches", {"field": field_name, "pattern": p.pattern})] if p.pattern else []


def _images(p: RecipeParams) -> list:
    types = list(p.mime) if p.mime else [IMAGE_PREFIX]
    bad = [t for t in types if not t.lower().startswith(IMAGE_PREFIX)]
    if bad:
        raise ConfigError(f"--mime must name image types, got {bad}")
    return [
        Filter("kind_in", {"kinds": ["response", "arc-entry"]}),
        Filter("status_is", {"codes": [200], "allow_absent": True}),
        Filter("mime_in", {"types": types}),
    ]


def _urls(p):
    stages = _dates(p) + _site(p) + _pattern(p) + [Extract("project", {"fields": ["crawl_date", "url"]})]
    return Plan("pages", tuple(stages))


def _domain_counts(p):
    stages = _dates(p) + _site(p) + _pattern(p)
    stages += [Filter("field_nonempty", {"fields": ["domain"]}), Aggregate(("domain",))]
    return Plan("pages", tuple(stages))


def _text_matching(p):
    return Plan("pages", tuple(_dates(p) + _site(p) + _pattern(p) + [Extract("plain_text")]))


def _keyword_counts(p):
    stages = _dates(p) + _site(p) + _pattern(p)
    stages += [
        Extract("keyword_counts", {"keywords": list(p.keywords)}),
        Aggregate(("keyword",), reducer="sum", value="count"),
    ]
    return Plan("pages", tuple(stages))


def _anchors_to(p):
    stages = _dates(p) + _site(p, "src") + [
        Filter("url_is", {"field": "dest", "urls": list(p.url)}),
        Extract("project", {"fields": list(LINK_COLUMNS)}),
    ]
    return Plan("webgraph", tuple(stages))


def _inlinks_of(p):
    stages = _dates(p) + _pattern(p, "src") + [
        Filter("domain_is", {"field": "dest", "site": p.site, "subdomains": True}),
        Extract("project", {"fields": list(LINK_COLUMNS)}),
    ]
    return Plan("webgraph", tuple(stages))


def _popular_images(p):
    stages = _dates(p) + _site(p, "url") + _pattern(p) + _images(p)
    stages += [Extract("checksum"), Aggregate(("md5",), exemplar="url")]
    return Plan("raw", tuple(stages))


def _image_checksums(p):
    stages = _dates(p) + _site(p, "url") + _pattern(p) + _images(p) + [Extract("checksum")]
    return Plan("raw", tuple(stages))


_FILTERS = ("date_from", "date_to", "limit")

RECIPES = {
    spec.name: spec
    for spec in (
        RecipeSpec("urls", "extract all URLs in a collection", ("pattern", "site") + _FILTERS, (), _urls),
        RecipeSpec("domain-counts", "count occurrences of each domain", ("pattern", "site") + _FILTERS, (), _domain_counts),
        RecipeSpec("text-matching", "plain text of pages whose URL matches a pattern", ("pattern", "site") + _FILTERS, ("pattern",), _text_matching),
        RecipeSpec("keyword-counts", "total occurrences of given keywords", ("keywords", "pattern", "site") + _FILTERS, ("keywords",), _keyword_counts),
        RecipeSpec("anchors-to", "anchor text of links to a URL", ("url", "site") + _FILTERS, ("url",), _anchors_to),
        RecipeSpec("inlinks-of", "all links pointing into a site", ("site", "pattern") + _FILTERS, ("site",), _inlinks_of),
        RecipeSpec("popular-images", "images grouped by payload checksum, most frequent first", ("mime", "pattern", "site") + _FILTERS, (), _popular_images),
        RecipeSpec("image-checksums", "MD5 checksum of every image", ("mime", "pattern", "site") + _FILTERS, (), _image_checksums),
    )
}


def get_recipe(name: str) -> RecipeSpec:
    try:
        return RECIPES[name]
    except KeyError:
        raise ConfigError(f"unknown recipe {name!r}; choose from: {', '.join(RECIPES)}") from None


def recipe_plan(name: str, params: RecipeParams | None = None, sinks=()) -> Plan:
    return get_recipe(name).plan(params or RecipeParams(), sinks)
