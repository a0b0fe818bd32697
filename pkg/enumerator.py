"""
Scene Graph Structure Enumeration
Enumerates every non-isomorphic structure template at a complexity, computes
canonical keys and persists the results as a per-complexity structure store
"""

import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import networkx as nx

import config
from utils import DataError, ParseError, PathLike, atomic_write, dumps_line

logger = logging.getLogger(__name__)

Edge = Tuple[int, int]
Form = Tuple[Tuple[int, ...], Tuple[Edge, ...]]


class InvalidStructureError(DataError):
    """Template violates the structural invariants"""


class NotEnumeratedError(DataError):
    """Requested complexity is absent from the structure store"""


class StructureOverflowError(DataError):
    """Enumeration produced more structures than the configured ceiling"""


@dataclass(frozen=True)
class StructureTemplate:
    n_objects: int
    attr_counts: Tuple[int, ...]
    edges: Tuple[Edge, ...]
    canonical_key: bytes

    @property
    def complexity(self) -> int:
        return self.n_objects + len(self.edges) + sum(self.attr_counts)

    @classmethod
    def create(cls, attr_counts: Sequence[int], edges: Iterable[Edge],
               canonicalize: bool = False) -> "StructureTemplate":
        """Validated template; with `canonicalize` the canonical relabeling is kept"""
        attrs = tuple(int(a) for a in attr_counts)
        edge_tuple = tuple(sorted((int(s), int(d)) for s, d in edges))
        check_structure(len(attrs), attrs, edge_tuple)
        form = _canonical_form(len(attrs), attrs, edge_tuple)
        key = _encode(form)
        if canonicalize:
            attrs, edge_tuple = form
        return cls(len(attrs), attrs, edge_tuple, key)

    def to_dict(self) -> dict:
        return {
            "key": self.canonical_key.decode("ascii"),
            "n_objects": self.n_objects,
            "attr_counts": list(self.attr_counts),
            "edges": [list(e) for e in self.edges],
        }


@dataclass(frozen=True)
class EnumerationLimits:
    max_objects: Optional[int] = None
    max_edges: Optional[int] = None
    max_attrs_per_object: Optional[int] = None
    ceiling: int = config.STRUCTURE_CEILING


@dataclass(frozen=True)
class StructureStore:
    by_complexity: Dict[int, Tuple[StructureTemplate, ...]] = field(default_factory=dict)
    provenance: Dict[int, dict] = field(default_factory=dict)

    def complexities(self) -> List[int]:
        return sorted(self.by_complexity)

    def covers(self, complexities: Iterable[int]) -> bool:
        return all(c in self.by_complexity for c in complexities)


def check_structure(n_objects: int, attr_counts: Sequence[int], edges: Sequence[Edge]):
    """Raise InvalidStructureError unless the template is a well-formed DAG shape"""
    if n_objects < 1:
        raise InvalidStructureError("a structure needs at least one object")
    if len(attr_counts) != n_objects:
        raise InvalidStructureError(f"attr_counts has {len(attr_counts)} entries for {n_objects} objects")
    if any(a < 0 for a in attr_counts):
        raise InvalidStructureError("attribute counts must be non-negative")
    seen = set()
    for s, d in edges:
        if not (0 <= s < n_objects and 0 <= d < n_objects):
            raise InvalidStructureError(f"edge ({s}, {d}) references a missing object")
        if s == d:
            raise InvalidStructureError(f"self-loop on object {s}")
        if (s, d) in seen:
            raise InvalidStructureError(f"duplicate edge ({s}, {d})")
        seen.add((s, d))
    graph = nx.DiGraph(list(edges))
    try:
        cycle = nx.find_cycle(graph)
    except nx.NetworkXNoCycle:
        return
    raise InvalidStructureError(f"relation edges contain a cycle: {cycle}")


def _rank(signatures: Dict[int, tuple]) -> Dict[int, int]:
    order = {sig: i for i, sig in enumerate(sorted(set(signatures.values())))}
    return {v: order[sig] for v, sig in signatures.items()}


def _refine(vertices: Sequence[int], attrs: Sequence[int],
            out: List[List[int]], inn: List[List[int]]) -> Dict[int, int]:
    """Equitable colouring seeded with (attr count, in-degree, out-degree)"""
    color = _rank({v: (attrs[v], len(inn[v]), len(out[v])) for v in vertices})
    while True:
        refined = _rank({
            v: (color[v],
                tuple(sorted(color[w] for w in out[v])),
                tuple(sorted(color[w] for w in inn[v])))
            for v in vertices
        })
        if len(set(refined.values())) == len(set(color.values())):
            return refined
        color = refined


def _label_orders(counts: Dict[int, int], length: int) -> Iterator[Tuple[int, ...]]:
    """Distinct orderings of a multiset of labels"""
    if length == 0:
        yield ()
        return
    for label in sorted(counts):
        if counts[label]:
            counts[label] -= 1
            for rest in _label_orders(counts, length - 1):
                yield (label,) + rest
            counts[label] += 1


def _cell_orderings(cell: Sequence[int], out: List[List[int]], inn: List[List[int]]) -> List[Tuple[int, ...]]:
    # Twins (same in- and out-neighbours) are interchangeable, so only their
    # relative order is fixed
    classes: Dict[tuple, List[int]] = {}
    for v in sorted(cell):
        classes.setdefault((tuple(sorted(out[v])), tuple(sorted(inn[v]))), []).append(v)
    members = list(classes.values())
    orderings = []
    for labels in _label_orders({i: len(m) for i, m in enumerate(members)}, len(cell)):
        cursors = [iter(m) for m in members]
        orderings.append(tuple(next(cursors[label]) for label in labels))
    return orderings


def _component_form(vertices: Sequence[int], attrs: Sequence[int],
                    out: List[List[int]], inn: List[List[int]]) -> Tuple[int, Tuple[int, ...], Tuple[Edge, ...]]:
    color = _refine(vertices, attrs, out, inn)
    cells: Dict[int, List[int]] = {}
    for v in vertices:
        cells.setdefault(color[v], []).append(v)
    ordered_cells = [cells[c] for c in sorted(cells)]
    form_attrs = tuple(attrs[v] for cell in ordered_cells for v in cell)

    best: Optional[Tuple[Edge, ...]] = None
    for choice in itertools.product(*(_cell_orderings(cell, out, inn) for cell in ordered_cells)):
        position = {}
        for cell_order in choice:
            for v in cell_order:
                position[v] = len(position)
        candidate = tuple(sorted((position[s], position[d]) for s in vertices for d in out[s]))
        if best is None or candidate < best:
            best = candidate
    return (len(vertices), form_attrs, best)


def _components(n: int, edges: Sequence[Edge]) -> List[List[int]]:
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for s, d in edges:
        rs, rd = find(s), find(d)
        if rs != rd:
            parent[rs] = rd
    groups: Dict[int, List[int]] = {}
    for v in range(n):
        groups.setdefault(find(v), []).append(v)
    return list(groups.values())


def _canonical_form(n: int, attrs: Sequence[int], edges: Sequence[Edge]) -> Form:
    """
    Canonical relabeling of a template

    Each weakly connected component is relabeled to its minimal edge list
    over the orderings that respect its refined colour cells; components are
    then sorted and concatenated.
    """
    out: List[List[int]] = [[] for _ in range(n)]
    inn: List[List[int]] = [[] for _ in range(n)]
    for s, d in edges:
        out[s].append(d)
        inn[d].append(s)
    forms = sorted(_component_form(comp, attrs, out, inn) for comp in _components(n, edges))

    all_attrs: List[int] = []
    all_edges: List[Edge] = []
    for size, comp_attrs, comp_edges in forms:
        offset = len(all_attrs)
        all_attrs.extend(comp_attrs)
        all_edges.extend((s + offset, d + offset) for s, d in comp_edges)
    return tuple(all_attrs), tuple(sorted(all_edges))


def _encode(form: Form) -> bytes:
    attrs, edges = form
    text = "{}|{}|{}".format(
        len(attrs),
        ",".join(str(a) for a in attrs),
        ";".join(f"{s}>{d}" for s, d in edges),
    )
    return text.encode("ascii")


def canonical_key(template: StructureTemplate) -> bytes:
    """
    Canonical key of a template

    Args:
        template: Template to key; its structure is validated first

    Returns:
        Byte string equal for two templates iff they are isomorphic
    """
    check_structure(template.n_objects, template.attr_counts, template.edges)
    return _encode(_canonical_form(template.n_objects, template.attr_counts, template.edges))


def _compositions(total: int, parts: int, cap: int, non_increasing: bool = False) -> Iterator[Tuple[int, ...]]:
    """Ordered ways to split `total` into `parts` values in [0, cap]"""
    if parts == 0:
        if total == 0:
            yield ()
        return
    upper = min(total, cap)
    for first in range(upper, -1, -1):
        if total - first > (parts - 1) * cap:
            continue
        next_cap = first if non_increasing else cap
        for rest in _compositions(total - first, parts - 1, next_cap, non_increasing):
            yield (first,) + rest


def _enumerate_for_objects(task: Tuple[int, int, Optional[int], Optional[int], int]) -> Dict[bytes, StructureTemplate]:
    complexity, n, max_edges, max_attrs, ceiling = task
    remaining = complexity - n
    cap = remaining if max_attrs is None else min(max_attrs, remaining)
    # Every DAG is isomorphic to one whose edges all go from lower to higher index
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    edge_limit = min(remaining, len(pairs))
    if max_edges is not None:
        edge_limit = min(edge_limit, max_edges)

    found: Dict[bytes, StructureTemplate] = {}
    for e in range(edge_limit + 1):
        attr_total = remaining - e
        if attr_total > n * cap:
            continue
        # Without edges all objects are alike, so sorted attribute counts suffice
        compositions = list(_compositions(attr_total, n, cap, non_increasing=(e == 0)))
        for edge_set in itertools.combinations(pairs, e):
            for attrs in compositions:
                form = _canonical_form(n, attrs, edge_set)
                key = _encode(form)
                if key not in found:
                    found[key] = StructureTemplate(n, form[0], form[1], key)
                    if len(found) > ceiling:
                        raise StructureOverflowError(
                            f"complexity {complexity}: more than {ceiling} structures")
    return found


def enumerate_structures(complexity: int, limits: Optional[EnumerationLimits] = None,
                         workers: int = 1) -> List[StructureTemplate]:
    """
    Enumerate every isomorphism class of templates at one complexity

    Args:
        complexity: Objects + attributes + relations, at least 1
        limits: Optional caps on objects, edges, attributes per object and
                the structure-count ceiling
        workers: Process count; output does not depend on it

    Returns:
        Canonical templates sorted by canonical key
    """
    if complexity < 1:
        raise InvalidStructureError(f"complexity must be at least 1, got {complexity}")
    limits = limits or EnumerationLimits()
    max_objects = complexity if limits.max_objects is None else min(limits.max_objects, complexity)
    tasks = [(complexity, n, limits.max_edges, limits.max_attrs_per_object, limits.ceiling)
             for n in range(1, max_objects + 1)]

    merged: Dict[bytes, StructureTemplate] = {}
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_enumerate_for_objects, tasks))
    else:
        results = [_enumerate_for_objects(task) for task in tasks]
    for task, found in zip(tasks, results):
        logger.debug(f"complexity {complexity}, {task[1]} objects: {len(found)} structures")
        merged.update(found)
        if len(merged) > limits.ceiling:
            raise StructureOverflowError(f"complexity {complexity}: more than {limits.ceiling} structures")

    templates = [merged[key] for key in sorted(merged)]
    logger.info(f"Enumerated {len(templates)} structures at complexity {complexity}")
    return templates


def store_structures(store: StructureStore, templates: Iterable[StructureTemplate],
                     provenance: Optional[dict] = None) -> StructureStore:
    """Return a new store with templates added; duplicates by canonical key are merged"""
    by_complexity = {c: {t.canonical_key: t for t in ts} for c, ts in store.by_complexity.items()}
    meta = dict(store.provenance)
    for template in templates:
        bucket = by_complexity.setdefault(template.complexity, {})
        bucket.setdefault(template.canonical_key, template)
        if provenance is not None:
            meta[template.complexity] = dict(provenance, complexity=template.complexity)
    return StructureStore(
        {c: tuple(bucket[k] for k in sorted(bucket)) for c, bucket in sorted(by_complexity.items())},
        meta,
    )


def query_structures(store: StructureStore, complexity: int, n_objects: Optional[int] = None,
                     min_edges: Optional[int] = None, max_edges: Optional[int] = None) -> List[StructureTemplate]:
    """
    Templates of one complexity, optionally filtered

    Args:
        store: Structure store
        complexity: Complexity to read
        n_objects: Exact object count
        min_edges: Minimum relation count
        max_edges: Maximum relation count

    Returns:
        Matching templates in canonical-key order
    """
    if complexity not in store.by_complexity:
        raise NotEnumeratedError(f"complexity {complexity} not enumerated")
    return [
        t for t in store.by_complexity[complexity]
        if (n_objects is None or t.n_objects == n_objects)
        and (min_edges is None or len(t.edges) >= min_edges)
        and (max_edges is None or len(t.edges) <= max_edges)
    ]


def ensure_store(store: StructureStore, complexities: Iterable[int],
                 limits: Optional[EnumerationLimits] = None, workers: int = 1) -> StructureStore:
    """Enumerate and add whichever complexities the store lacks or holds under other limits"""
    limits = limits or EnumerationLimits()
    complexities = sorted(set(complexities))
    stale = [c for c in complexities
             if store.provenance.get(c) and not limits_match(store.provenance[c], limits)]
    if stale:
        logger.info(f"Re-enumerating complexities {stale} under limits {asdict(limits)}")
        store = StructureStore({c: ts for c, ts in store.by_complexity.items() if c not in stale},
                               {c: p for c, p in store.provenance.items() if c not in stale})
    for c in complexities:
        if c not in store.by_complexity:
            store = store_structures(store, enumerate_structures(c, limits, workers), asdict(limits))
    return store


def save_store(store: StructureStore, directory: PathLike) -> List[Path]:
    """Write one JSONL file per complexity: a header line, then one template per line"""
    written = []
    for complexity, templates in sorted(store.by_complexity.items()):
        header = {
            "format": config.STORE_FORMAT_VERSION,
            "complexity": complexity,
            "count": len(templates),
            "parameters": store.provenance.get(complexity, {}),
        }
        lines = [dumps_line(header)] + [dumps_line(t.to_dict()) for t in templates]
        path = Path(directory) / config.STORE_FILE_PATTERN.format(complexity=complexity)
        written.append(atomic_write(path, "\n".join(lines) + "\n"))
    return written


def _template_from_dict(data: dict) -> StructureTemplate:
    attrs = tuple(int(a) for a in data["attr_counts"])
    edges = tuple((int(s), int(d)) for s, d in data["edges"])
    if int(data["n_objects"]) != len(attrs):
        raise ValueError("n_objects does not match attr_counts")
    return StructureTemplate(len(attrs), attrs, edges, data["key"].encode("ascii"))


def limits_match(parameters: dict, limits: EnumerationLimits) -> bool:
    """Whether recorded store parameters were produced with exactly these limits"""
    recorded = {k: v for k, v in parameters.items() if k != "complexity"}
    return recorded == asdict(limits)


def load_store(directory: PathLike, complexities: Optional[Iterable[int]] = None,
               limits: Optional[EnumerationLimits] = None) -> StructureStore:
    """
    Read a structure store directory

    Args:
        directory: Directory of per-complexity files (missing directory = empty store)
        complexities: Restrict loading to these complexities
        limits: When given, files whose header records other limits are
                skipped so that the caller re-enumerates them

    Returns:
        Structure store
    """
    root = Path(directory)
    wanted = None if complexities is None else set(complexities)
    by_complexity: Dict[int, Tuple[StructureTemplate, ...]] = {}
    provenance: Dict[int, dict] = {}
    if not root.is_dir():
        return StructureStore()
    for path in sorted(root.glob("structures_c*.jsonl")):
        lines = path.read_text(encoding="utf-8").splitlines()
        if not lines:
            raise ParseError("empty structure file", path, 1)
        try:
            header = json.loads(lines[0])
            complexity = int(header["complexity"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise ParseError(f"bad header: {e}", path, 1) from e
        if wanted is not None and complexity not in wanted:
            continue
        parameters = header.get("parameters") or {}
        if limits is not None and not limits_match(parameters, limits):
            logger.warning(f"{path} was built with limits {parameters}, not {asdict(limits)}; ignoring it")
            continue
        templates = []
        for lineno, line in enumerate(lines[1:], start=2):
            try:
                templates.append(_template_from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise ParseError(f"bad template record: {e}", path, lineno) from e
        if len(templates) != header.get("count", len(templates)):
            raise ParseError(f"header declares {header['count']} templates, found {len(templates)}", path)
        by_complexity[complexity] = tuple(sorted(templates, key=lambda t: t.canonical_key))
        provenance[complexity] = parameters
    logger.info(f"Loaded structure store from {root}: complexities {sorted(by_complexity)}")
    return StructureStore(by_complexity, provenance)
