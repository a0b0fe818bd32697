import json
from collections import Counter

import pytest

import config
from enumerator import query_structures
from realizer import (MentionState, RealizationError, RealizationTemplates, article, load_templates, noun_phrase,
                      realize, surface_coverage)
from sampler import (Concept, SceneAttribute, SceneAttributeSet, SceneGraph, SceneObject, SceneRelation, SeededRng,
                     populate, sample_scene_attributes)
from utils import ordinal_word

NO_ATTRS = SceneAttributeSet()


def obj(index, lemma, *attrs):
    return SceneObject(index, f"object/{lemma}#n.01", lemma,
                       tuple(Concept(f"attribute:color/{a}#a.01", a) for a in attrs))


def rel(src, dst, lemma):
    return SceneRelation(src, dst, f"relation:spatial/{lemma}#r.01", lemma)


def lamp_on_table():
    return SceneGraph((obj(0, "table", "red", "wooden"), obj(1, "lamp")), (rel(1, 0, "on_top_of"),))


@pytest.mark.parametrize("phrase,expected", [
    ("orange balloon", "an"),
    ("red car", "a"),
    ("umbrella", "an"),
    ("Elderly waiter", "an"),
    ("hour", "a"),
])
def test_article(phrase, expected):
    assert article(phrase) == expected


def test_article_needs_a_phrase():
    with pytest.raises(ValueError):
        article("  ")


def test_noun_phrase_first_and_later_mentions():
    graph = SceneGraph((obj(0, "table", "red", "wooden"), obj(1, "lamp")))
    state = MentionState(graph)
    assert noun_phrase(graph.objects[0], state) == "a red wooden table"
    assert noun_phrase(graph.objects[1], state) == "a lamp"
    assert noun_phrase(graph.objects[1], state) == "the lamp"
    assert noun_phrase(graph.objects[0], state) == "the table"


def test_noun_phrase_ordinals_for_duplicates():
    graph = SceneGraph((obj(0, "cat", "fluffy"), obj(1, "dog"), obj(2, "cat")))
    state = MentionState(graph)
    assert state.ordinals == [1, None, 2]
    assert noun_phrase(graph.objects[2], state) == "the second cat"
    assert noun_phrase(graph.objects[0], state) == "the first fluffy cat"
    assert noun_phrase(graph.objects[0], state) == "the first cat"


def test_relation_caption():
    assert realize(lamp_on_table(), NO_ATTRS) == "A lamp is on top of a red wooden table."


def test_scene_attribute_sentence():
    attrs = SceneAttributeSet((
        SceneAttribute("painting_style", "scene_attr:painting_style/cubism#s.01", "cubism"),
        SceneAttribute("camera_model", "scene_attr:camera_model/X100#s.01", "X100"),
    ))
    assert realize(lamp_on_table(), attrs) == "A lamp is on top of a red wooden table. In the style of cubism, shot on X100."


def test_isolated_duplicates():
    graph = SceneGraph((obj(0, "cat"), obj(1, "cat"), obj(2, "dog")))
    assert realize(graph, NO_ATTRS) == "There is the first cat. There is the second cat. There is a dog."


def test_chain_and_standalone_objects():
    graph = SceneGraph(
        (obj(0, "lamp"), obj(1, "table", "wooden"), obj(2, "chair"), obj(3, "umbrella")),
        (rel(0, 1, "on_top_of"), rel(1, 2, "next_to")),
    )
    assert realize(graph, NO_ATTRS) == (
        "A lamp is on top of a wooden table. The table is next to a chair. There is an umbrella.")


def test_duplicates_in_relations():
    graph = SceneGraph((obj(0, "cat"), obj(1, "cat")), (rel(1, 0, "behind"),))
    assert realize(graph, NO_ATTRS) == "The second cat is behind the first cat."


def test_outgoing_edges_follow_topological_position():
    graph = SceneGraph(
        (obj(0, "dog"), obj(1, "rock"), obj(2, "cup")),
        (rel(0, 1, "next_to"), rel(0, 2, "behind"), rel(2, 1, "on_top_of")),
    )
    assert realize(graph, NO_ATTRS) == (
        "A dog is behind a cup. The dog is next to a rock. The cup is on top of the rock.")


def test_numeric_ordinals_past_twenty():
    graph = SceneGraph(tuple(obj(i, "cat") for i in range(21)))
    assert realize(graph, NO_ATTRS).endswith("There is the twentieth cat. There is the 21st cat.")


def test_cycle_is_rejected():
    graph = SceneGraph((obj(0, "cat"), obj(1, "dog")), (rel(0, 1, "behind"), rel(1, 0, "behind")))
    with pytest.raises(RealizationError):
        realize(graph, NO_ATTRS)


def test_missing_template():
    attrs = SceneAttributeSet((SceneAttribute("lighting", "scene_attr:lighting/neon#s.01", "neon"),))
    with pytest.raises(RealizationError):
        realize(lamp_on_table(), attrs, RealizationTemplates({}))


def test_template_file_overrides_defaults(tmp_path):
    path = tmp_path / "templates.json"
    path.write_text(json.dumps({"lighting": "lit by {}"}), encoding="utf-8")
    templates = load_templates(path)
    attrs = SceneAttributeSet((
        SceneAttribute("lighting", "scene_attr:lighting/neon#s.01", "neon"),
        SceneAttribute("weather", "scene_attr:weather/rainy#s.01", "rainy"),
    ))
    assert realize(lamp_on_table(), attrs, templates).endswith(" Lit by neon, in rainy weather.")


@pytest.mark.parametrize("content", [{"lighting": "under {} and {}"}, {"lighting": "no placeholder"},
                                     {"mood": "feeling {}"}])
def test_bad_templates(tmp_path, content):
    path = tmp_path / "templates.json"
    path.write_text(json.dumps(content), encoding="utf-8")
    with pytest.raises(RealizationError):
        load_templates(path)


def test_coverage_of_realized_caption():
    graph = lamp_on_table()
    caption = realize(graph, NO_ATTRS)
    assert surface_coverage(graph, caption).ok
    report = surface_coverage(graph, caption.replace("lamp", ""))
    assert len(report.misses) == 1
    assert report.misses[0]["term"] == "lamp"


def test_coverage_flags_repeated_phrases():
    graph = lamp_on_table()
    report = surface_coverage(graph, realize(graph, NO_ATTRS) + " There is a lamp.")
    assert not report.misses
    assert [(e["term"], e["expected"], e["actual"]) for e in report.excess] == [("lamp", 1, 2)]
    assert not report.ok


def test_coverage_allows_terms_inside_template_text():
    graph = SceneGraph((obj(0, "cat"), obj(1, "orange", "orange")), (rel(0, 1, "under"),))
    attrs = SceneAttributeSet((SceneAttribute("lighting", "scene_attr:lighting/neon#s.01", "neon"),))
    caption = realize(graph, attrs)
    assert caption == "A cat is under an orange orange. Under neon lighting."
    assert surface_coverage(graph, caption, attrs).ok
    assert not surface_coverage(graph, caption.replace("A cat is under", "A cat is under under"), attrs).ok


def ordinals_by_index(graph):
    counts = Counter(o.lemma for o in graph.objects)
    seen = Counter()
    ordinals = {}
    for o in graph.objects:
        if counts[o.lemma] >= 2:
            seen[o.lemma] += 1
            ordinals[o.index] = seen[o.lemma]
    return ordinals


def words_of(lemma):
    return lemma.lower().split("_")


def referent(phrase, graph, ordinals):
    words = phrase.lower().split()
    found = [o.index for o in graph.objects
             if words[-len(words_of(o.lemma)):] == words_of(o.lemma)
             and (o.index not in ordinals or words[1] == ordinal_word(ordinals[o.index]))]
    assert len(found) == 1, phrase
    return found[0]


def object_sentences(caption, graph, attrs):
    """(subject, relation lemma, object) per relation sentence; (subject, None, None) per standalone one"""
    body = caption[:-1].split(". ")
    if len(attrs):
        body = body[:-1]
    parsed = []
    for text in body:
        if text.startswith("There is "):
            parsed.append((text[len("There is "):], None, None))
            continue
        src, rest = text.split(" is ", 1)
        lemma = next(r.lemma for r in graph.relations if rest.startswith(" ".join(words_of(r.lemma)) + " "))
        parsed.append((src, lemma, rest[len(lemma) + 1:]))
    return parsed


def check_mentions(caption, graph, attrs):
    ordinals = ordinals_by_index(graph)
    introduced, clauses, intro_ordinals = {}, {}, {}
    for pos, (src, lemma, dst) in enumerate(object_sentences(caption, graph, attrs)):
        refs = [src] if lemma is None else [src, dst]
        indexes = [referent(phrase, graph, ordinals) for phrase in refs]
        if lemma is not None:
            clauses[tuple(indexes)] = pos
        else:
            assert indexes[0] not in introduced
        for index, phrase in zip(indexes, refs):
            o = graph.objects[index]
            words = phrase.lower().split()
            ordinal = [ordinal_word(ordinals[index])] if index in ordinals else []
            assert any(w in config.ORDINAL_WORDS for w in words) == (index in ordinals)
            if index in introduced:
                assert words == ["the"] + ordinal + words_of(o.lemma)
                continue
            introduced[index] = pos
            body = [w for a in o.attributes for w in words_of(a.lemma)] + words_of(o.lemma)
            if ordinal:
                assert words == ["the"] + ordinal + body
                intro_ordinals.setdefault(o.lemma, []).append(ordinals[index])
            else:
                assert words[0] in ("a", "an") and words[1:] == body

    assert sorted(introduced) == list(range(len(graph.objects)))
    lemma_counts = Counter(o.lemma for o in graph.objects)
    assert set(intro_ordinals) == {lemma for lemma, n in lemma_counts.items() if n >= 2}
    for lemma, seen in intro_ordinals.items():
        assert sorted(seen) == list(range(1, lemma_counts[lemma] + 1))
    assert set(clauses) == set(graph.edges)
    for (src, dst), pos in clauses.items():
        assert introduced[src] <= pos and introduced[dst] <= pos
        for (after_src, _), later in clauses.items():
            if after_src == dst:
                assert pos < later


def test_mention_checks_on_known_caption():
    graph = SceneGraph(
        (obj(0, "cat", "fluffy"), obj(1, "dog"), obj(2, "cat"), obj(3, "lamp")),
        (rel(2, 0, "behind"), rel(0, 1, "next_to")),
    )
    caption = realize(graph, NO_ATTRS)
    assert caption == ("The second cat is behind the first fluffy cat. The first cat is next to a dog. "
                       "There is a lamp.")
    check_mentions(caption, graph, NO_ATTRS)


def test_random_graphs_realize_completely(view, store):
    for stream in range(1000):
        rng = SeededRng(555, stream)
        graph = populate(rng.choice(query_structures(store, rng.integer(1, 6))), view, rng)
        attrs = sample_scene_attributes(view, (0, 5), "video", rng)
        caption = realize(graph, attrs)
        assert caption == realize(graph, attrs)
        assert surface_coverage(graph, caption, attrs).ok, caption
        assert caption == caption.strip() and "  " not in caption
        involved = {r.src for r in graph.relations} | {r.dst for r in graph.relations}
        assert caption.count("There is") == len(graph.objects) - len(involved)
        check_mentions(caption, graph, attrs)
