"""
Caption Realization
Turns a populated scene graph and its scene attributes into caption text
"""

import json
import logging
import re
import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional

import networkx as nx

import config
from sampler import SceneAttributeSet, SceneGraph, SceneObject
from utils import DataError, ParseError, PathLike, ordinal_word

logger = logging.getLogger(__name__)


class RealizationError(DataError):
    """Caption cannot be produced for this input"""


def surface(lemma: str) -> str:
    return lemma.replace("_", " ")


def article(phrase: str) -> str:
    """
    Indefinite article for a phrase

    Args:
        phrase: Non-empty noun phrase without article

    Returns:
        "an" when the first word starts with an ASCII vowel, otherwise "a"
    """
    words = phrase.split()
    if not words:
        raise ValueError("article needs a non-empty phrase")
    return "an" if words[0][0].lower() in config.VOWELS else "a"


def _check_template(subcategory: str, template: str):
    fields = [f for _, f, _, _ in string.Formatter().parse(template) if f is not None]
    if fields != [""]:
        raise RealizationError(f"template for {subcategory} must contain exactly one {{}} placeholder: {template!r}")


@dataclass(frozen=True)
class RealizationTemplates:
    """Scene-attribute subcategory to phrase format, one {} placeholder each"""

    phrases: Mapping[str, str] = field(default_factory=lambda: dict(config.DEFAULT_TEMPLATES))

    def phrase(self, subcategory: str, value: str) -> str:
        template = self.phrases.get(subcategory)
        if template is None:
            raise RealizationError(f"no realization template for scene attribute subcategory {subcategory}")
        return template.format(value)


def load_templates(path: Optional[PathLike] = None) -> RealizationTemplates:
    """
    Load templates from a JSON object, layered over the defaults

    Args:
        path: JSON file mapping subcategory to format string; None gives defaults

    Returns:
        Validated templates
    """
    phrases = dict(config.DEFAULT_TEMPLATES)
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as e:
            raise DataError(f"cannot read {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise ParseError(e.msg, path, e.lineno) from e
        if not isinstance(data, dict):
            raise ParseError("templates must be a JSON object", path)
        for sub, template in data.items():
            if sub not in config.SCENE_ATTR_SUBCATEGORIES:
                raise RealizationError(f"unknown scene attribute subcategory {sub!r} in {path}")
            if not isinstance(template, str):
                raise RealizationError(f"template for {sub} is not a string")
            phrases[sub] = template
        logger.info(f"Loaded {len(data)} realization templates from {path}")
    for sub, template in phrases.items():
        _check_template(sub, template)
    return RealizationTemplates(phrases)


class MentionState:
    """Tracks which objects were introduced and the ordinal of duplicated lemmas"""

    def __init__(self, graph: SceneGraph):
        self.lemma_counts = Counter(o.lemma for o in graph.objects)
        self.introduced = [False] * len(graph.objects)
        self.ordinals: List[Optional[int]] = [None] * len(graph.objects)
        seen: Dict[str, int] = {}
        for obj in graph.objects:
            if self.lemma_counts[obj.lemma] >= 2:
                seen[obj.lemma] = seen.get(obj.lemma, 0) + 1
                self.ordinals[obj.index] = seen[obj.lemma]


def noun_phrase(obj: SceneObject, state: MentionState) -> str:
    """
    Noun phrase for an object mention; marks the object introduced

    Attributes appear only on the first mention. Duplicated lemmas take
    "the <ordinal>" instead of an indefinite article.
    """
    ordinal = state.ordinals[obj.index]
    head = surface(obj.lemma)
    if ordinal is not None:
        head = f"{ordinal_word(ordinal)} {head}"
    if state.introduced[obj.index]:
        return f"the {head}"
    state.introduced[obj.index] = True
    words = [surface(a.lemma) for a in obj.attributes]
    if ordinal is not None:
        return " ".join(["the", ordinal_word(ordinal)] + words + [surface(obj.lemma)])
    body = " ".join(words + [head])
    return f"{article(body)} {body}"


def _sentence(text: str) -> str:
    return f"{text[0].upper()}{text[1:]}."


def topological_order(graph: SceneGraph) -> List[int]:
    """Object indexes in topological order over relations, ties by index"""
    g = nx.DiGraph()
    g.add_nodes_from(range(len(graph.objects)))
    g.add_edges_from(graph.edges)
    try:
        return list(nx.lexicographical_topological_sort(g))
    except nx.NetworkXUnfeasible as e:
        raise RealizationError("relations contain a cycle") from e


def realize(graph: SceneGraph, scene_attrs: SceneAttributeSet,
            templates: Optional[RealizationTemplates] = None) -> str:
    """
    Caption for a scene graph

    Args:
        graph: Populated scene graph
        scene_attrs: Caption-level attributes in precedence order
        templates: Scene-attribute phrasing, defaults when None

    Returns:
        Sentences separated by single spaces
    """
    templates = templates or RealizationTemplates()
    order = topological_order(graph)
    position = {index: pos for pos, index in enumerate(order)}
    outgoing: Dict[int, list] = {}
    for rel in graph.relations:
        outgoing.setdefault(rel.src, []).append(rel)

    state = MentionState(graph)
    sentences = []
    for index in order:
        for rel in sorted(outgoing.get(index, ()), key=lambda r: position[r.dst]):
            src = noun_phrase(graph.objects[rel.src], state)
            dst = noun_phrase(graph.objects[rel.dst], state)
            sentences.append(_sentence(f"{src} is {surface(rel.lemma)} {dst}"))

    for obj in graph.objects:
        if not state.introduced[obj.index]:
            sentences.append(_sentence(f"There is {noun_phrase(obj, state)}"))

    if len(scene_attrs):
        phrases = [templates.phrase(a.subcategory, surface(a.lemma)) for a in scene_attrs.items]
        sentences.append(_sentence(", ".join(phrases)))
    return " ".join(sentences)


@dataclass(frozen=True)
class CoverageReport:
    misses: List[dict]
    excess: List[dict] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.misses and not self.excess


def _occurrences(term: str, text: str) -> int:
    return len(re.findall(rf"(?<!\w){re.escape(term)}(?!\w)", text, flags=re.IGNORECASE))


def surface_coverage(graph: SceneGraph, caption: str,
                     scene_attrs: Optional[SceneAttributeSet] = None,
                     templates: Optional[RealizationTemplates] = None) -> CoverageReport:
    """
    Check every concept of the graph surfaces in the caption, and no more often than realized

    Object lemmas are expected once per relation they take part in (once if
    isolated); attribute lemmas and relation phrases once per use. A term is
    a miss when it occurs fewer times than expected. It is in excess when it
    occurs more often than its own uses plus its occurrences inside other
    expected terms, scene-attribute template text, sentence frames and
    ordinal words allow.
    """
    templates = templates or RealizationTemplates()
    degree = Counter()
    for rel in graph.relations:
        degree[rel.src] += 1
        degree[rel.dst] += 1
    state = MentionState(graph)
    expected = Counter()
    frame: List[str] = []
    for obj in graph.objects:
        mentions = max(1, degree[obj.index])
        expected[("object", surface(obj.lemma))] += mentions
        if state.ordinals[obj.index] is not None:
            frame.extend([ordinal_word(state.ordinals[obj.index])] * mentions)
        if not degree[obj.index]:
            frame.append("There is")
        for attr in obj.attributes:
            expected[("attribute", surface(attr.lemma))] += 1
    for rel in graph.relations:
        expected[("relation", surface(rel.lemma))] += 1
        frame.append("is")
    if scene_attrs is not None:
        for attr in scene_attrs.items:
            expected[("scene_attr", surface(attr.lemma))] += 1
            frame.append(templates.phrase(attr.subcategory, "|"))
    frame_text = " | ".join(frame)

    misses = []
    for (kind, term), want in sorted(expected.items()):
        got = _occurrences(term, caption)
        if got < want:
            misses.append({"kind": kind, "term": term, "expected": want, "actual": got})

    excess = []
    kinds: Dict[str, str] = {}
    for kind, term in sorted(expected):
        kinds.setdefault(term, kind)
    for term, kind in sorted(kinds.items()):
        allowed = sum(n * _occurrences(term, other) for (_, other), n in expected.items())
        allowed += _occurrences(term, frame_text)
        got = _occurrences(term, caption)
        if got > allowed:
            excess.append({"kind": kind, "term": term, "expected": allowed, "actual": got})
    return CoverageReport(misses, excess)
