"""
Taxonomy of Visual Concepts
Builds the object hypernym tree from a sense-annotated edge list and the flat
attribute / relation / scene-attribute trees from a vocabulary list
"""

import json
import logging
from collections import Counter, defaultdict, deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import networkx as nx

import config
from utils import DataError, ParseError, PathLike, atomic_write

logger = logging.getLogger(__name__)

SenseKey = Tuple[str, str]           # (lemma, sense)
ConceptKey = Tuple[str, str, str]    # (lemma, sense, category)

ROOT_SENSE = "root"
SUBCATEGORY_SENSE = "sub"


class TaxonomyError(DataError):
    """Taxonomy cannot be built or queried"""


def concept_id(category: str, lemma: str, sense: str) -> str:
    """Stable identifier for a concept"""
    return f"{category}/{lemma}#{sense}"


def category_kind(category: str) -> str:
    """'attribute:color' -> 'attribute'"""
    return category.split(":", 1)[0]


def subcategory_of(category: str) -> Optional[str]:
    """'attribute:color' -> 'color'; None for bare kinds"""
    parts = category.split(":", 1)
    return parts[1] if len(parts) == 2 else None


def is_valid_category(category: str) -> bool:
    kind = category_kind(category)
    sub = subcategory_of(category)
    if kind == config.OBJECT_KIND:
        return sub is None
    if kind not in config.SUBCATEGORIES:
        return False
    return sub is None or sub in config.SUBCATEGORIES[kind]


@dataclass(frozen=True)
class RawEdge:
    child_lemma: str
    child_sense: str
    parent_lemma: str
    parent_sense: str
    tags: FrozenSet[str] = frozenset()
    line: int = 0

    @property
    def child(self) -> SenseKey:
        return (self.child_lemma, self.child_sense)

    @property
    def parent(self) -> SenseKey:
        return (self.parent_lemma, self.parent_sense)


@dataclass(frozen=True)
class VocabEntry:
    lemma: str
    sense: str
    category: str
    tags: FrozenSet[str] = frozenset()
    line: int = 0


@dataclass(frozen=True)
class ConceptNode:
    id: str
    lemma: str
    sense_key: str
    category: str
    parent: Optional[str] = None
    tags: FrozenSet[str] = frozenset()

    @property
    def key(self) -> ConceptKey:
        return (self.lemma, self.sense_key, self.category)

    @property
    def kind(self) -> str:
        return category_kind(self.category)

    @property
    def surface(self) -> str:
        """Lemma as it appears in captions"""
        return self.lemma.replace("_", " ")


@dataclass(frozen=True)
class BuildReport:
    entries: int = 0
    nodes: int = 0
    secondary_parents_dropped: int = 0
    collapsed_senses: Tuple[SenseKey, ...] = ()
    unreachable: int = 0
    unreachable_examples: Tuple[SenseKey, ...] = ()


@dataclass(frozen=True)
class ValidationReport:
    counts_by_category: Dict[str, int]
    orphan_count: int
    violations: Tuple[str, ...]
    count_mismatches: Tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations


@dataclass(frozen=True)
class Taxonomy:
    """Forest of concept nodes; children are sorted by (lemma, sense_key)"""

    nodes: Dict[str, ConceptNode]
    roots: Dict[str, str]
    children: Dict[str, Tuple[str, ...]]
    report: Optional[BuildReport] = field(default=None, compare=False)

    @classmethod
    def from_nodes(cls, nodes: Iterable[ConceptNode], roots: Dict[str, str],
                   report: Optional[BuildReport] = None) -> "Taxonomy":
        node_map = {n.id: n for n in nodes}
        kids: Dict[str, List[str]] = {nid: [] for nid in node_map}
        for n in node_map.values():
            if n.parent is not None and n.parent in kids:
                kids[n.parent].append(n.id)
        children = {
            nid: tuple(sorted(ids, key=lambda c: (node_map[c].lemma, node_map[c].sense_key, c)))
            for nid, ids in kids.items()
        }
        return cls(nodes=node_map, roots=dict(roots), children=children, report=report)

    @cached_property
    def _key_index(self) -> Dict[ConceptKey, str]:
        return {n.key: n.id for n in self.nodes.values()}

    def node(self, node_id: str) -> ConceptNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise TaxonomyError(f"unknown concept id: {node_id}") from None

    def find(self, lemma: str, sense: str, category: str) -> Optional[str]:
        return self._key_index.get((lemma, sense, category))

    def __contains__(self, node_id: object) -> bool:
        return node_id in self.nodes

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def edge_count(self) -> int:
        return sum(1 for n in self.nodes.values() if n.parent is not None)

    def depth(self, node_id: str) -> int:
        steps = 0
        node = self.node(node_id)
        while node.parent is not None:
            node = self.node(node.parent)
            steps += 1
            if steps > len(self.nodes):
                raise TaxonomyError(f"parent chain of {node_id} does not terminate")
        return steps

    def to_edges(self, category: str = config.OBJECT_KIND) -> List[RawEdge]:
        """Re-emit one tree as sense edges, parents before children"""
        root_id = self.roots.get(category)
        if root_id is None:
            return []
        edges = []
        for nid in subtree(self, root_id)[1:]:
            n = self.nodes[nid]
            p = self.nodes[n.parent]
            edges.append(RawEdge(n.lemma, n.sense_key, p.lemma, p.sense_key, n.tags, len(edges) + 1))
        return edges

    def to_dict(self) -> dict:
        ordered: List[str] = []
        seen = set()
        for kind in sorted(self.roots):
            for nid in subtree(self, self.roots[kind]):
                if nid not in seen:
                    seen.add(nid)
                    ordered.append(nid)
        ordered.extend(sorted(nid for nid in self.nodes if nid not in seen))
        return {
            "nodes": [
                {
                    "id": n.id,
                    "lemma": n.lemma,
                    "sense": n.sense_key,
                    "category": n.category,
                    "parent": n.parent,
                    "tags": sorted(n.tags),
                }
                for n in (self.nodes[nid] for nid in ordered)
            ],
            "roots": {kind: self.roots[kind] for kind in sorted(self.roots)},
        }


def _parse_tags(field_text: str) -> FrozenSet[str]:
    return frozenset(t.strip() for t in field_text.split(",") if t.strip())


def _read_lines(path: PathLike) -> List[str]:
    try:
        return Path(path).read_text(encoding="utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as e:
        raise DataError(f"cannot read {path}: {e}") from e


def load_sense_edges(path: PathLike) -> List[RawEdge]:
    """
    Read a sense-edge TSV file

    Args:
        path: File of `child_lemma, child_sense, parent_lemma, parent_sense[, tags]`
              tab-separated lines; '#' lines are comments

    Returns:
        Edges in file order, no deduplication
    """
    edges = []
    for lineno, raw in enumerate(_read_lines(path), start=1):
        if not raw.strip() or raw.lstrip().startswith("#"):
            continue
        fields = raw.split("\t")
        if len(fields) not in (4, 5):
            raise ParseError(f"expected 4 or 5 tab-separated fields, got {len(fields)}", path, lineno)
        fields = [f.strip() for f in fields]
        if not all(fields[:4]):
            raise ParseError("empty lemma or sense field", path, lineno)
        tags = _parse_tags(fields[4]) if len(fields) == 5 else frozenset()
        edges.append(RawEdge(fields[0], fields[1], fields[2], fields[3], tags, lineno))
    logger.debug(f"Loaded {len(edges)} sense edges from {path}")
    return edges


def load_vocabulary(path: PathLike) -> List[VocabEntry]:
    """Read a flat-category TSV file: `lemma, sense, category[, tags]`"""
    entries = []
    for lineno, raw in enumerate(_read_lines(path), start=1):
        if not raw.strip() or raw.lstrip().startswith("#"):
            continue
        fields = raw.split("\t")
        if len(fields) not in (3, 4):
            raise ParseError(f"expected 3 or 4 tab-separated fields, got {len(fields)}", path, lineno)
        fields = [f.strip() for f in fields]
        if not all(fields[:3]):
            raise ParseError("empty lemma, sense or category field", path, lineno)
        tags = _parse_tags(fields[3]) if len(fields) == 4 else frozenset()
        entries.append(VocabEntry(fields[0], fields[1], fields[2], tags, lineno))
    return entries


def _cycle_witness(entries: Sequence[RawEdge]) -> Optional[List[SenseKey]]:
    graph = nx.DiGraph()
    graph.add_edges_from((e.parent, e.child) for e in entries)
    try:
        cycle = nx.find_cycle(graph)
    except nx.NetworkXNoCycle:
        return None
    return [u for u, _ in cycle] + [cycle[-1][1]]


def build_tree(entries: Sequence[RawEdge], root: SenseKey,
               category: str = config.OBJECT_KIND,
               allow_standalone: bool = False) -> Taxonomy:
    """
    Build a disambiguated hypernym tree

    Rules, in order: a child keeps only its first-listed parent; when two or
    more senses of one lemma share a parent, those senses are removed and
    their children move up to that parent (repeated until no such group is
    left); entries not reachable from the root are dropped.

    Args:
        entries: Raw edges in file order
        root: (lemma, sense) of the tree root
        category: Category given to every node of the tree
        allow_standalone: Accept a root that no entry mentions

    Returns:
        Taxonomy with a single root and a populated build report
    """
    root = (root[0], root[1])
    parent_keys = {e.parent for e in entries}
    if root not in parent_keys and not allow_standalone:
        raise TaxonomyError(f"root {root[0]} {root[1]} does not appear as a parent in the entries")

    witness = _cycle_witness(entries)
    if witness is not None:
        chain = " -> ".join(f"{lemma}.{sense}" for lemma, sense in witness)
        raise TaxonomyError(f"cycle among entries: {chain}")

    parent_of: Dict[SenseKey, SenseKey] = {}
    tags: Dict[SenseKey, set] = defaultdict(set)
    dropped = 0
    for e in entries:
        tags[e.child] |= e.tags
        if e.child == root or e.child in parent_of:
            dropped += 1
            continue
        parent_of[e.child] = e.parent

    kids: Dict[SenseKey, List[SenseKey]] = defaultdict(list)
    for child, parent in parent_of.items():
        kids[parent].append(child)

    collapsed: List[SenseKey] = []
    while True:
        groups: Dict[Tuple[str, SenseKey], List[SenseKey]] = defaultdict(list)
        for child, parent in parent_of.items():
            groups[(child[0], parent)].append(child)
        ambiguous = sorted(sorted(senses) for senses in groups.values() if len(senses) > 1)
        if not ambiguous:
            break
        for senses in ambiguous:
            for sense_key in senses:
                parent = parent_of.pop(sense_key)
                kids[parent].remove(sense_key)
                for grandchild in kids.pop(sense_key, []):
                    parent_of[grandchild] = parent
                    kids[parent].append(grandchild)
                collapsed.append(sense_key)
    if collapsed:
        logger.info(f"Collapsed {len(collapsed)} ambiguous senses sharing a parent")

    reachable = {root}
    queue = deque([root])
    while queue:
        for child in kids.get(queue.popleft(), ()):
            if child not in reachable:
                reachable.add(child)
                queue.append(child)
    unreachable = sorted(k for k in parent_of if k not in reachable)
    if unreachable:
        logger.warning(f"Dropped {len(unreachable)} entries not reachable from {root[0]}.{root[1]}")

    nodes = [ConceptNode(concept_id(category, root[0], root[1]), root[0], root[1], category,
                         None, frozenset(tags.get(root, ())))]
    for key in sorted(reachable - {root}):
        parent = parent_of[key]
        nodes.append(ConceptNode(concept_id(category, key[0], key[1]), key[0], key[1], category,
                                 concept_id(category, parent[0], parent[1]),
                                 frozenset(tags.get(key, ()))))
    report = BuildReport(
        entries=len(entries),
        nodes=len(nodes),
        secondary_parents_dropped=dropped,
        collapsed_senses=tuple(collapsed),
        unreachable=len(unreachable),
        unreachable_examples=tuple(unreachable[:10]),
    )
    return Taxonomy.from_nodes(nodes, {category: nodes[0].id}, report)


def build_flat(entries: Sequence[VocabEntry]) -> Taxonomy:
    """
    Build kind root -> subcategory -> entry trees for the flat kinds

    Args:
        entries: Vocabulary entries with categories such as 'relation:spatial'

    Returns:
        Taxonomy with one root per kind present in the entries
    """
    nodes: Dict[str, ConceptNode] = {}
    roots: Dict[str, str] = {}
    for entry in entries:
        kind = category_kind(entry.category)
        sub = subcategory_of(entry.category)
        if kind not in config.SUBCATEGORIES or sub is None or not is_valid_category(entry.category):
            raise TaxonomyError(f"line {entry.line}: unknown flat category {entry.category!r}")
        if kind not in roots:
            root_id = concept_id(kind, kind, ROOT_SENSE)
            roots[kind] = root_id
            nodes[root_id] = ConceptNode(root_id, kind, ROOT_SENSE, kind)
        sub_id = concept_id(entry.category, sub, SUBCATEGORY_SENSE)
        if sub_id not in nodes:
            nodes[sub_id] = ConceptNode(sub_id, sub, SUBCATEGORY_SENSE, entry.category, roots[kind])
        nid = concept_id(entry.category, entry.lemma, entry.sense)
        previous = nodes.get(nid)
        merged_tags = entry.tags | (previous.tags if previous else frozenset())
        nodes[nid] = ConceptNode(nid, entry.lemma, entry.sense, entry.category, sub_id, merged_tags)
    return Taxonomy.from_nodes(nodes.values(), roots)


def merge(*taxonomies: Taxonomy) -> Taxonomy:
    """Union of disjoint forests"""
    nodes: Dict[str, ConceptNode] = {}
    roots: Dict[str, str] = {}
    for tax in taxonomies:
        for kind, root_id in tax.roots.items():
            if kind in roots:
                raise TaxonomyError(f"two taxonomies both define a {kind} root")
            roots[kind] = root_id
        for nid, node in tax.nodes.items():
            if nid in nodes:
                raise TaxonomyError(f"duplicate concept across taxonomies: {nid}")
            nodes[nid] = node
    return Taxonomy.from_nodes(nodes.values(), roots)


def build_taxonomy(edges_path: PathLike, root: SenseKey,
                   vocab_path: Optional[PathLike] = None) -> Taxonomy:
    """Object tree from an edge file, plus flat trees from an optional vocabulary file"""
    objects = build_tree(load_sense_edges(edges_path), root)
    if vocab_path is None:
        return objects
    combined = merge(objects, build_flat(load_vocabulary(vocab_path)))
    return Taxonomy.from_nodes(combined.nodes.values(), combined.roots, objects.report)


def subtree(taxonomy: Taxonomy, node: str) -> List[str]:
    """
    Node and all descendants in pre-order

    Args:
        taxonomy: Taxonomy to walk
        node: Starting concept id

    Returns:
        Concept ids, `node` first
    """
    taxonomy.node(node)
    order = []
    stack = [node]
    while stack:
        current = stack.pop()
        order.append(current)
        stack.extend(reversed(taxonomy.children.get(current, ())))
    return order


def validate(taxonomy: Taxonomy, declared_counts: Optional[Dict[str, int]] = None) -> ValidationReport:
    """
    Check the forest invariants; never raises

    Args:
        taxonomy: Taxonomy to check
        declared_counts: Optional expected entry counts per kind (non-fatal)

    Returns:
        Validation report; `violations` is empty iff all invariants hold
    """
    violations: List[str] = []
    counts = Counter(n.category for n in taxonomy.nodes.values())

    key_counts = Counter(n.key for n in taxonomy.nodes.values())
    for key, count in sorted(key_counts.items()):
        if count > 1:
            violations.append(f"duplicate key (lemma={key[0]!r}, sense={key[1]!r}, category={key[2]!r}) x{count}")

    root_ids = set(taxonomy.roots.values())
    for kind, root_id in sorted(taxonomy.roots.items()):
        root = taxonomy.nodes.get(root_id)
        if root is None:
            violations.append(f"root for {kind} is missing: {root_id}")
        elif root.parent is not None:
            violations.append(f"root {root_id} has a parent")

    orphans = 0
    for nid, n in sorted(taxonomy.nodes.items()):
        if not is_valid_category(n.category):
            violations.append(f"{nid}: invalid category {n.category!r}")
        if nid in root_ids:
            continue
        if n.parent is None or n.parent not in taxonomy.nodes:
            orphans += 1
            violations.append(f"{nid}: orphan (parent {n.parent!r})")

    limit = len(taxonomy.nodes)
    for nid in sorted(taxonomy.nodes):
        seen = 0
        current = taxonomy.nodes[nid]
        while current.parent is not None and current.parent in taxonomy.nodes and seen <= limit:
            current = taxonomy.nodes[current.parent]
            seen += 1
        if seen > limit:
            violations.append(f"{nid}: parent chain contains a cycle")

    for nid, kids in taxonomy.children.items():
        expected = sorted(kids, key=lambda c: (taxonomy.nodes[c].lemma, taxonomy.nodes[c].sense_key, c))
        if list(kids) != expected:
            violations.append(f"{nid}: children are not sorted by (lemma, sense)")
        for kid in kids:
            if taxonomy.nodes[kid].parent != nid:
                violations.append(f"{nid}: child {kid} does not point back to it")

    if not orphans and taxonomy.edge_count != len(taxonomy.nodes) - len(taxonomy.roots):
        violations.append(
            f"edge count {taxonomy.edge_count} != nodes {len(taxonomy.nodes)} - roots {len(taxonomy.roots)}")

    mismatches: List[str] = []
    if declared_counts:
        by_kind = Counter(category_kind(n.category) for n in taxonomy.nodes.values()
                          if n.id not in root_ids and n.sense_key != SUBCATEGORY_SENSE)
        for kind, expected in sorted(declared_counts.items()):
            if by_kind.get(kind, 0) != expected:
                mismatches.append(f"{kind}: {by_kind.get(kind, 0)} entries, declared {expected}")
        for line in mismatches:
            logger.warning(f"Declared count mismatch - {line}")

    return ValidationReport(dict(sorted(counts.items())), orphans, tuple(violations), tuple(mismatches))


def save_taxonomy(taxonomy: Taxonomy, path: PathLike) -> Path:
    text = json.dumps(taxonomy.to_dict(), ensure_ascii=False, indent=2) + "\n"
    return atomic_write(path, text)


def load_taxonomy(path: PathLike) -> Taxonomy:
    """Read the JSON form written by save_taxonomy"""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, path, e.lineno) from e
    try:
        nodes = [
            ConceptNode(d["id"], d["lemma"], d["sense"], d["category"], d.get("parent"),
                        frozenset(d.get("tags", ())))
            for d in data["nodes"]
        ]
        roots = dict(data["roots"])
    except (KeyError, TypeError) as e:
        raise ParseError(f"malformed taxonomy document: {e}", path) from e
    return Taxonomy.from_nodes(nodes, roots)
