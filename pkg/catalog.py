"""
Metadata Catalogs
Loads the object / attribute / relation / scene-attribute catalogs against the
taxonomy and resolves scoped views used for sampling
"""

import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import config
from taxonomy import (
    ConceptNode,
    Taxonomy,
    category_kind,
    is_valid_category,
    subcategory_of,
    subtree,
)
from utils import DataError, ParseError, PathLike

logger = logging.getLogger(__name__)

MAX_REPORTED_OFFENDERS = 10


class CatalogError(DataError):
    """Catalog entries or scope do not resolve"""


class ScopeTooNarrowError(DataError):
    """A sampler draw needs a category whose scoped list is empty"""


def media_admits(media: str, target: str) -> bool:
    return media == "any" or media == target


def subcategory_admits(subcategory: str, target: str) -> bool:
    return media_admits(config.SCENE_ATTR_MEDIA.get(subcategory, "any"), target)


def _ordered_categories() -> List[str]:
    ordered = [config.OBJECT_KIND]
    for kind in config.FLAT_KINDS:
        ordered.extend(f"{kind}:{sub}" for sub in config.SUBCATEGORIES[kind])
    return ordered


CATEGORY_ORDER = tuple(_ordered_categories())


@dataclass(frozen=True)
class Catalog:
    taxonomy: Taxonomy
    entries: Dict[str, Tuple[str, ...]]
    tags: Dict[str, FrozenSet[str]] = field(default_factory=dict)
    media: Dict[str, str] = field(default_factory=dict)
    declared_counts: Optional[Dict[str, int]] = None

    def kind_entries(self, kind: str) -> Tuple[str, ...]:
        ids: List[str] = []
        for category in CATEGORY_ORDER:
            if category_kind(category) == kind:
                ids.extend(self.entries.get(category, ()))
        return tuple(ids)


@dataclass(frozen=True)
class ScopeSpec:
    include_subtrees: Tuple[str, ...] = ()
    exclude_subtrees: Tuple[str, ...] = ()
    required_tags: FrozenSet[str] = frozenset()
    allowed_attribute_subcategories: Optional[FrozenSet[str]] = None
    allowed_relation_subcategories: Optional[FrozenSet[str]] = None
    allowed_scene_attr_subcategories: Optional[FrozenSet[str]] = None
    tags_apply_to_all: bool = False

    def allowed_for(self, kind: str) -> Optional[FrozenSet[str]]:
        return {
            "attribute": self.allowed_attribute_subcategories,
            "relation": self.allowed_relation_subcategories,
            "scene_attr": self.allowed_scene_attr_subcategories,
        }.get(kind)

    @classmethod
    def from_dict(cls, data: Optional[dict]) -> "ScopeSpec":
        data = data or {}

        def optional_set(name):
            value = data.get(name)
            return None if value is None else frozenset(value)

        return cls(
            include_subtrees=tuple(data.get("include_subtrees", ())),
            exclude_subtrees=tuple(data.get("exclude_subtrees", ())),
            required_tags=frozenset(data.get("required_tags", ())),
            allowed_attribute_subcategories=optional_set("allowed_attribute_subcategories"),
            allowed_relation_subcategories=optional_set("allowed_relation_subcategories"),
            allowed_scene_attr_subcategories=optional_set("allowed_scene_attr_subcategories"),
            tags_apply_to_all=bool(data.get("tags_apply_to_all", False)),
        )

    def to_dict(self) -> dict:
        def optional_list(value):
            return None if value is None else sorted(value)

        return {
            "include_subtrees": list(self.include_subtrees),
            "exclude_subtrees": list(self.exclude_subtrees),
            "required_tags": sorted(self.required_tags),
            "allowed_attribute_subcategories": optional_list(self.allowed_attribute_subcategories),
            "allowed_relation_subcategories": optional_list(self.allowed_relation_subcategories),
            "allowed_scene_attr_subcategories": optional_list(self.allowed_scene_attr_subcategories),
            "tags_apply_to_all": self.tags_apply_to_all,
        }


@dataclass(frozen=True)
class CatalogView:
    source: Catalog
    resolved: Dict[str, Tuple[str, ...]]

    @property
    def taxonomy(self) -> Taxonomy:
        return self.source.taxonomy

    def concept(self, concept_id: str) -> ConceptNode:
        return self.source.taxonomy.node(concept_id)

    @cached_property
    def _by_kind(self) -> Dict[str, Tuple[str, ...]]:
        grouped: Dict[str, List[str]] = {kind: [] for kind in config.ALL_KINDS}
        for category in CATEGORY_ORDER:
            grouped[category_kind(category)].extend(self.resolved.get(category, ()))
        return {kind: tuple(ids) for kind, ids in grouped.items()}

    def objects(self) -> Tuple[str, ...]:
        return self._by_kind[config.OBJECT_KIND]

    def attributes(self) -> Tuple[str, ...]:
        return self._by_kind["attribute"]

    def relations(self) -> Tuple[str, ...]:
        return self._by_kind["relation"]

    def require(self, kind: str) -> Tuple[str, ...]:
        """Resolved ids for a kind; raises when a draw would come from an empty list"""
        ids = self._by_kind.get(kind, ())
        if not ids:
            raise ScopeTooNarrowError(f"scope too narrow: no {kind} entries left to sample")
        return ids

    def scene_attr_entries(self, subcategory: str, target: str) -> Tuple[str, ...]:
        if not subcategory_admits(subcategory, target):
            return ()
        ids = self.resolved.get(f"scene_attr:{subcategory}", ())
        return tuple(i for i in ids if media_admits(self.source.media.get(i, "any"), target))

    def admissible_scene_subcategories(self, target: str) -> Tuple[str, ...]:
        """Subcategories in precedence order that can supply at least one entry for target"""
        return tuple(sub for sub in config.SCENE_ATTR_SUBCATEGORIES
                     if self.scene_attr_entries(sub, target))


def _read_json_list(path: PathLike) -> list:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, path, e.lineno) from e
    if not isinstance(data, list):
        raise ParseError("catalog file must hold a JSON list", path)
    return data


def load_catalog(taxonomy: Taxonomy, paths: Sequence[PathLike],
                 declared_counts: Optional[Dict[str, int]] = None) -> Catalog:
    """
    Resolve catalog files against a taxonomy

    Args:
        taxonomy: Taxonomy holding every catalogued concept
        paths: JSON files, each a list of {lemma, sense, category, tags[, media]}
        declared_counts: Optional expected per-kind counts (mismatches only warn)

    Returns:
        Catalog with deduplicated, id-sorted entry lists
    """
    collected: Dict[str, set] = {}
    tags: Dict[str, FrozenSet[str]] = {}
    media: Dict[str, str] = {}
    offenders: List[str] = []

    for path in paths:
        for position, item in enumerate(_read_json_list(path)):
            if not isinstance(item, dict):
                raise ParseError(f"item {position} is not an object", path)
            try:
                lemma, sense, category = item["lemma"], item["sense"], item["category"]
            except KeyError as e:
                raise ParseError(f"item {position} lacks field {e.args[0]!r}", path) from None
            bare_kind = subcategory_of(category) is None and category != config.OBJECT_KIND
            if not is_valid_category(category) or bare_kind:
                raise ParseError(f"item {position} has invalid category {category!r}", path)
            nid = taxonomy.find(lemma, sense, category)
            if nid is None:
                offenders.append(f"{lemma} ({sense}, {category})")
                continue
            item_media = item.get("media", "any")
            if item_media not in config.MEDIA_VALUES:
                raise ParseError(f"item {position} has invalid media {item_media!r}", path)
            collected.setdefault(category, set()).add(nid)
            tags[nid] = tags.get(nid, taxonomy.nodes[nid].tags) | frozenset(item.get("tags", ()))
            if category_kind(category) == "scene_attr":
                media[nid] = item_media

    if offenders:
        shown = ", ".join(offenders[:MAX_REPORTED_OFFENDERS])
        more = f" (+{len(offenders) - MAX_REPORTED_OFFENDERS} more)" if len(offenders) > MAX_REPORTED_OFFENDERS else ""
        raise CatalogError(f"{len(offenders)} catalog entries name unknown concepts: {shown}{more}")

    entries = {category: tuple(sorted(ids)) for category, ids in sorted(collected.items())}
    catalog = Catalog(taxonomy, entries, tags, media, dict(declared_counts) if declared_counts else None)
    logger.info(f"Loaded catalog: {kind_totals(entries)}")
    reconcile_counts(catalog)
    return catalog


def kind_totals(entries: Dict[str, Iterable[str]]) -> Dict[str, int]:
    totals = {kind: 0 for kind in config.ALL_KINDS}
    for category, ids in entries.items():
        totals[category_kind(category)] += len(tuple(ids))
    return totals


def reconcile_counts(catalog: Catalog) -> List[str]:
    """Compare per-kind totals with declared counts; mismatches are logged, never raised"""
    if not catalog.declared_counts:
        return []
    totals = kind_totals(catalog.entries)
    mismatches = []
    for kind, expected in sorted(catalog.declared_counts.items()):
        actual = totals.get(kind, 0)
        if actual != expected:
            mismatches.append(f"{kind}: {actual} entries, declared {expected}")
    for line in mismatches:
        logger.warning(f"Catalog count mismatch - {line}")
    return mismatches


def _subtree_union(taxonomy: Taxonomy, ids: Iterable[str]) -> Dict[str, set]:
    by_kind: Dict[str, set] = {}
    for nid in ids:
        kind = taxonomy.nodes[nid].kind
        by_kind.setdefault(kind, set()).update(subtree(taxonomy, nid))
    return by_kind


def scope_filter(catalog: Catalog, spec: ScopeSpec) -> CatalogView:
    """
    Resolve the part of a catalog that a scope admits

    Include / exclude subtrees act on the kind of the node they name; a kind
    with no include ids is unrestricted. Required tags act on objects, or on
    every kind when `tags_apply_to_all` is set.

    Args:
        catalog: Loaded catalog
        spec: Scope filter settings

    Returns:
        View whose lists are order-preserving subsequences of the catalog lists
    """
    taxonomy = catalog.taxonomy
    for nid in tuple(spec.include_subtrees) + tuple(spec.exclude_subtrees):
        if nid not in taxonomy:
            raise CatalogError(f"scope references unknown concept id: {nid}")
    for kind in config.FLAT_KINDS:
        allowed = spec.allowed_for(kind)
        if allowed is not None:
            unknown = sorted(set(allowed) - set(config.SUBCATEGORIES[kind]))
            if unknown:
                raise CatalogError(f"scope names unknown {kind} subcategories: {', '.join(unknown)}")

    included = _subtree_union(taxonomy, spec.include_subtrees)
    excluded = _subtree_union(taxonomy, spec.exclude_subtrees)

    resolved: Dict[str, Tuple[str, ...]] = {}
    for category, ids in catalog.entries.items():
        kind = category_kind(category)
        allowed = spec.allowed_for(kind)
        if allowed is not None and subcategory_of(category) not in allowed:
            resolved[category] = ()
            continue
        inc = included.get(kind)
        exc = excluded.get(kind, set())
        check_tags = bool(spec.required_tags) and (kind == config.OBJECT_KIND or spec.tags_apply_to_all)
        resolved[category] = tuple(
            nid for nid in ids
            if (inc is None or nid in inc)
            and nid not in exc
            and (not check_tags or spec.required_tags <= catalog.tags.get(nid, frozenset()))
        )
    return CatalogView(catalog, resolved)


def counts(view: CatalogView) -> Dict[str, int]:
    """
    Sizes of the resolved lists

    Returns:
        Per-kind totals ('object', 'attribute', ...) and per-category sizes
        ('attribute:color', ...); absent categories count 0
    """
    result: Dict[str, int] = {}
    for kind in config.ALL_KINDS:
        result[kind] = 0
    for category in CATEGORY_ORDER:
        size = len(view.resolved.get(category, ()))
        if category != config.OBJECT_KIND:
            result[category] = size
        result[category_kind(category)] += size
    return result
