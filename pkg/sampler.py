"""
Scene Graph Sampling
Populates structure templates from a catalog view, samples scene attributes
and expands user-provided seed scene graphs
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, TypeVar

import networkx as nx
import numpy as np

import config
from catalog import CatalogView, ScopeTooNarrowError
from enumerator import StructureStore, StructureTemplate, query_structures
from taxonomy import Taxonomy, category_kind
from utils import DataError, ParseError, PathLike

logger = logging.getLogger(__name__)

T = TypeVar("T")

_U64 = 2 ** 64


class InvalidSceneGraphError(DataError):
    """Scene graph violates its invariants"""


class SeededRng:
    """
    Reproducible random stream

    Draws come from the Philox-4x64-10 counter-based generator keyed with the
    128-bit value (master_seed, stream_index), counter starting at zero. Raw
    64-bit outputs are mapped to bounded integers by rejection: for a bound n,
    outputs >= 2**64 - (2**64 mod n) are discarded and the rest reduced mod n.
    Floats use the top 53 bits. The stream is a pure function of the two
    integers, and distinct stream indexes give independent streams.
    """

    def __init__(self, master_seed: int, stream_index: int = 0):
        for name, value in (("master_seed", master_seed), ("stream_index", stream_index)):
            if not 0 <= int(value) <= config.MAX_SEED:
                raise DataError(f"{name} must be a 64-bit unsigned integer, got {value}")
        self.master_seed = int(master_seed)
        self.stream_index = int(stream_index)
        key = np.array([self.master_seed, self.stream_index], dtype=np.uint64)
        self._bits = np.random.Philox(key=key)

    def __repr__(self) -> str:
        return f"SeededRng(master_seed={self.master_seed}, stream_index={self.stream_index})"

    def next_u64(self) -> int:
        return int(self._bits.random_raw())

    def below(self, n: int) -> int:
        """Uniform integer in [0, n)"""
        if n < 1:
            raise ValueError(f"bound must be positive, got {n}")
        limit = _U64 - (_U64 % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def integer(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi]"""
        if hi < lo:
            raise ValueError(f"empty range [{lo}, {hi}]")
        return lo + self.below(hi - lo + 1)

    def random(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def choice(self, items: Sequence[T]) -> T:
        return items[self.below(len(items))]

    def sample(self, items: Sequence[T], k: int) -> List[T]:
        """k distinct positions drawn without replacement (partial Fisher-Yates)"""
        if not 0 <= k <= len(items):
            raise ValueError(f"cannot draw {k} of {len(items)} items")
        pool = list(items)
        for i in range(k):
            j = i + self.below(len(pool) - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]


@dataclass(frozen=True)
class Concept:
    concept_id: str
    lemma: str

    def to_dict(self) -> dict:
        return {"concept_id": self.concept_id, "lemma": self.lemma}


@dataclass(frozen=True)
class SceneObject:
    index: int
    concept_id: str
    lemma: str
    attributes: Tuple[Concept, ...] = ()

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "concept_id": self.concept_id,
            "lemma": self.lemma,
            "attributes": [a.to_dict() for a in self.attributes],
        }


@dataclass(frozen=True)
class SceneRelation:
    src: int
    dst: int
    concept_id: str
    lemma: str

    def to_dict(self) -> dict:
        return {"src": self.src, "dst": self.dst, "concept_id": self.concept_id, "lemma": self.lemma}


@dataclass(frozen=True)
class SceneGraph:
    objects: Tuple[SceneObject, ...]
    relations: Tuple[SceneRelation, ...] = ()

    @property
    def attr_counts(self) -> Tuple[int, ...]:
        return tuple(len(o.attributes) for o in self.objects)

    @property
    def edges(self) -> Tuple[Tuple[int, int], ...]:
        return tuple((r.src, r.dst) for r in self.relations)

    @property
    def element_counts(self) -> Dict[str, int]:
        return {
            "objects": len(self.objects),
            "attributes": sum(self.attr_counts),
            "relations": len(self.relations),
        }

    @property
    def complexity(self) -> int:
        return sum(self.element_counts.values())

    def concept_ids(self) -> List[str]:
        """Every object, attribute and relation concept, with repeats"""
        ids = []
        for obj in self.objects:
            ids.append(obj.concept_id)
            ids.extend(a.concept_id for a in obj.attributes)
        ids.extend(r.concept_id for r in self.relations)
        return ids

    def template(self) -> StructureTemplate:
        return StructureTemplate.create(self.attr_counts, self.edges)

    def to_dict(self) -> dict:
        return {
            "objects": [o.to_dict() for o in self.objects],
            "relations": [r.to_dict() for r in self.relations],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SceneGraph":
        try:
            objects = tuple(
                SceneObject(
                    int(o["index"]), o["concept_id"], o["lemma"],
                    tuple(Concept(a["concept_id"], a["lemma"]) for a in o.get("attributes", ())),
                )
                for o in data["objects"]
            )
            relations = tuple(
                SceneRelation(int(r["src"]), int(r["dst"]), r["concept_id"], r["lemma"])
                for r in data.get("relations", ())
            )
        except (KeyError, TypeError, ValueError) as e:
            raise InvalidSceneGraphError(f"malformed scene graph: {e!r}") from e
        return cls(objects, relations)


@dataclass(frozen=True)
class SceneAttribute:
    subcategory: str
    concept_id: str
    lemma: str

    def to_dict(self) -> dict:
        return {"subcategory": self.subcategory, "concept_id": self.concept_id, "lemma": self.lemma}


@dataclass(frozen=True)
class SceneAttributeSet:
    items: Tuple[SceneAttribute, ...] = ()

    def __len__(self) -> int:
        return len(self.items)

    def to_list(self) -> list:
        return [item.to_dict() for item in self.items]

    @classmethod
    def from_list(cls, data: list) -> "SceneAttributeSet":
        try:
            items = tuple(SceneAttribute(d["subcategory"], d["concept_id"], d["lemma"]) for d in data)
        except (KeyError, TypeError) as e:
            raise InvalidSceneGraphError(f"malformed scene attributes: {e!r}") from e
        subs = [i.subcategory for i in items]
        if len(set(subs)) != len(subs):
            raise InvalidSceneGraphError(f"scene attribute subcategories repeat: {subs}")
        return cls(items)


def check_scene_graph(graph: SceneGraph, taxonomy: Optional[Taxonomy] = None):
    """
    Raise InvalidSceneGraphError unless the graph is well formed

    Args:
        graph: Scene graph to check
        taxonomy: When given, every concept id must exist with the right kind
    """
    if not graph.objects:
        raise InvalidSceneGraphError("scene graph has no objects")
    for position, obj in enumerate(graph.objects):
        if obj.index != position:
            raise InvalidSceneGraphError(f"object at position {position} has index {obj.index}")
        attr_ids = [a.concept_id for a in obj.attributes]
        if len(set(attr_ids)) != len(attr_ids):
            raise InvalidSceneGraphError(f"object {position} repeats an attribute")
    n = len(graph.objects)
    pairs = set()
    for rel in graph.relations:
        if not (0 <= rel.src < n and 0 <= rel.dst < n):
            raise InvalidSceneGraphError(f"relation ({rel.src}, {rel.dst}) references a missing object")
        if rel.src == rel.dst:
            raise InvalidSceneGraphError(f"self-loop on object {rel.src}")
        if (rel.src, rel.dst) in pairs:
            raise InvalidSceneGraphError(f"duplicate relation ({rel.src}, {rel.dst})")
        pairs.add((rel.src, rel.dst))
    if not nx.is_directed_acyclic_graph(nx.DiGraph(list(pairs))):
        raise InvalidSceneGraphError("relations contain a cycle")

    if taxonomy is None:
        return
    expected = [(o.concept_id, config.OBJECT_KIND) for o in graph.objects]
    expected += [(a.concept_id, "attribute") for o in graph.objects for a in o.attributes]
    expected += [(r.concept_id, "relation") for r in graph.relations]
    for cid, kind in expected:
        node = taxonomy.nodes.get(cid)
        if node is None:
            raise InvalidSceneGraphError(f"unknown concept id {cid}")
        if category_kind(node.category) != kind:
            raise InvalidSceneGraphError(f"{cid} has category {node.category}, expected {kind}")


def load_seed_graph(path: PathLike) -> SceneGraph:
    """Read a seed scene graph JSON document"""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, path, e.lineno) from e
    graph = SceneGraph.from_dict(data)
    check_scene_graph(graph)
    return graph


def _concept(view: CatalogView, concept_id: str) -> Concept:
    return Concept(concept_id, view.concept(concept_id).lemma)


def populate(template: StructureTemplate, view: CatalogView, rng: SeededRng) -> SceneGraph:
    """
    Fill a structure template with concepts

    Objects are drawn with replacement; each object's attributes are drawn
    without replacement; each relation edge gets one uniform draw.

    Args:
        template: Structure to fill
        view: Scoped catalog view
        rng: Random stream, consumed in object, attribute, relation order

    Returns:
        Scene graph with exactly the template's shape
    """
    object_pool = view.require(config.OBJECT_KIND)
    attr_pool = view.require("attribute") if sum(template.attr_counts) else ()
    relation_pool = view.require("relation") if template.edges else ()

    objects = []
    for index, k in enumerate(template.attr_counts):
        cid = rng.choice(object_pool)
        if k > len(attr_pool):
            raise ScopeTooNarrowError(
                f"scope too narrow: object needs {k} distinct attributes, view has {len(attr_pool)}")
        attrs = tuple(_concept(view, a) for a in rng.sample(attr_pool, k))
        objects.append(SceneObject(index, cid, view.concept(cid).lemma, attrs))
    relations = []
    for src, dst in template.edges:
        cid = rng.choice(relation_pool)
        relations.append(SceneRelation(src, dst, cid, view.concept(cid).lemma))
    return SceneGraph(tuple(objects), tuple(relations))


def sample_scene_attributes(view: CatalogView, count_range: Tuple[int, int], target: str,
                            rng: SeededRng) -> SceneAttributeSet:
    """
    Draw caption-level scene attributes

    Args:
        view: Scoped catalog view
        count_range: Inclusive [lo, hi] bounds on the number of attributes
        target: Generation target: image, video or threed
        rng: Random stream

    Returns:
        Attributes with distinct subcategories, in precedence order
    """
    if target not in config.TARGETS:
        raise DataError(f"unknown generation target {target!r}")
    lo, hi = count_range
    if not 0 <= lo <= hi:
        raise DataError(f"invalid scene attribute range [{lo}, {hi}]")
    admissible = view.admissible_scene_subcategories(target)
    if hi > len(admissible):
        raise ScopeTooNarrowError(
            f"scope too narrow: {hi} scene attributes requested, {len(admissible)} subcategories admit {target}")
    k = rng.integer(lo, hi)
    precedence = {sub: i for i, sub in enumerate(config.SCENE_ATTR_SUBCATEGORIES)}
    chosen = sorted(rng.sample(admissible, k), key=precedence.__getitem__)
    items = []
    for sub in chosen:
        cid = rng.choice(view.scene_attr_entries(sub, target))
        items.append(SceneAttribute(sub, cid, view.concept(cid).lemma))
    return SceneAttributeSet(tuple(items))


def _shift(graph: SceneGraph, offset: int) -> SceneGraph:
    objects = tuple(SceneObject(o.index + offset, o.concept_id, o.lemma, o.attributes) for o in graph.objects)
    relations = tuple(SceneRelation(r.src + offset, r.dst + offset, r.concept_id, r.lemma) for r in graph.relations)
    return SceneGraph(objects, relations)


def expand_seed_graph(seed: SceneGraph, target_complexity: int, view: CatalogView,
                      store: StructureStore, rng: SeededRng) -> SceneGraph:
    """
    Grow a seed scene graph to an exact complexity

    The deficit is split between extra attributes on seed objects and a new
    part sampled from the structure store. With probability
    SEED_ATTACH_PROBABILITY (when the deficit leaves room for an object and a
    link) one relation joins a new object and a seed object; otherwise the
    new part stays disconnected. Seed content is never changed.

    Args:
        seed: Seed scene graph
        target_complexity: Complexity of the result
        view: Scoped catalog view for new content
        store: Structure store covering the sizes a new part may take
        rng: Random stream

    Returns:
        Scene graph containing the seed as an induced subgraph
    """
    check_scene_graph(seed, view.taxonomy)
    deficit = target_complexity - seed.complexity
    if deficit < 0:
        raise DataError(f"seed complexity {seed.complexity} exceeds target {target_complexity}")
    if deficit == 0:
        return seed

    attach = deficit >= 2 and bool(view.relations()) and rng.random() < config.SEED_ATTACH_PROBABILITY
    budget = deficit - 1 if attach else deficit

    attr_pool = view.attributes()
    free = [[a for a in attr_pool if a not in {x.concept_id for x in obj.attributes}] for obj in seed.objects]
    capacity = sum(len(f) for f in free)
    extra = rng.integer(0, min(capacity, budget - (1 if attach else 0)))

    added: List[List[Concept]] = [[] for _ in seed.objects]
    for _ in range(extra):
        open_objects = [i for i, f in enumerate(free) if f]
        target_obj = rng.choice(open_objects)
        cid = free[target_obj].pop(rng.below(len(free[target_obj])))
        added[target_obj].append(_concept(view, cid))

    objects = [
        SceneObject(o.index, o.concept_id, o.lemma, o.attributes + tuple(added[i]))
        for i, o in enumerate(seed.objects)
    ]
    relations = list(seed.relations)

    new_size = budget - extra
    if new_size > 0:
        template = rng.choice(query_structures(store, new_size))
        part = _shift(populate(template, view, rng), len(objects))
        if attach:
            new_obj = part.objects[rng.below(len(part.objects))].index
            seed_obj = rng.below(len(seed.objects))
            cid = rng.choice(view.require("relation"))
            # Seed and new part are disjoint, so either direction stays acyclic
            src, dst = (new_obj, seed_obj) if rng.below(2) == 0 else (seed_obj, new_obj)
            relations.append(SceneRelation(src, dst, cid, view.concept(cid).lemma))
        objects.extend(part.objects)
        relations[len(seed.relations):len(seed.relations)] = part.relations

    expanded = SceneGraph(tuple(objects), tuple(relations))
    if expanded.complexity != target_complexity:
        raise InvalidSceneGraphError(
            f"expansion produced complexity {expanded.complexity}, expected {target_complexity}")
    return expanded


def inject_focus(graph: SceneGraph, focus_ids: Sequence[str], view: CatalogView, rng: SeededRng) -> SceneGraph:
    """Redraw one uniformly chosen object slot from the focus concepts"""
    if not focus_ids:
        return graph
    for cid in focus_ids:
        node = view.concept(cid)
        if node.kind != config.OBJECT_KIND:
            raise DataError(f"focus concept {cid} is not an object")
    slot = rng.below(len(graph.objects))
    cid = rng.choice(list(focus_ids))
    old = graph.objects[slot]
    objects = list(graph.objects)
    objects[slot] = SceneObject(old.index, cid, view.concept(cid).lemma, old.attributes)
    return SceneGraph(tuple(objects), graph.relations)
