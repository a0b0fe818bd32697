from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from catalog import ScopeSpec, ScopeTooNarrowError, scope_filter
from enumerator import StructureTemplate, query_structures
from sampler import (Concept, InvalidSceneGraphError, SceneGraph, SceneObject, SceneRelation, SeededRng,
                     check_scene_graph, expand_seed_graph, inject_focus, load_seed_graph, populate,
                     sample_scene_attributes)
from utils import DataError

CAT = "object/cat#n.01"
VIDEO_ONLY = {"camera_rig", "camera_movement", "video_editing_style", "temporal_span"}


def single(attr_counts=(0,), edges=()):
    return StructureTemplate.create(attr_counts, edges)


def test_rng_is_philox_keyed_by_seed_and_stream():
    bits = np.random.Philox(key=np.array([5, 9], dtype=np.uint64))
    rng = SeededRng(5, 9)
    assert [rng.next_u64() for _ in range(4)] == [int(x) for x in bits.random_raw(4)]


def test_rng_streams_are_reproducible_and_distinct():
    first = SeededRng(42, 0)
    again = SeededRng(42, 0)
    other = SeededRng(42, 1)
    seq = [first.next_u64() for _ in range(8)]
    assert seq == [again.next_u64() for _ in range(8)]
    assert seq != [other.next_u64() for _ in range(8)]


def test_rng_rejects_out_of_range_seed():
    with pytest.raises(DataError):
        SeededRng(-1, 0)
    with pytest.raises(DataError):
        SeededRng(2 ** 64, 0)


@given(seed=st.integers(min_value=0, max_value=2 ** 64 - 1), n=st.integers(min_value=1, max_value=10 ** 4))
@settings(max_examples=100, deadline=None)
def test_rng_bounded_draws_stay_in_range(seed, n):
    rng = SeededRng(seed, 3)
    assert 0 <= rng.below(n) < n
    assert 0.0 <= rng.random() < 1.0
    k = min(n, 5)
    drawn = rng.sample(range(n), k)
    assert len(set(drawn)) == k


def test_populate_single_object_view(catalog):
    view = scope_filter(catalog, ScopeSpec(include_subtrees=(CAT,)))
    graph = populate(single(), view, SeededRng(1, 0))
    assert graph == SceneGraph((SceneObject(0, CAT, "cat", ()),), ())


def test_populate_is_shape_faithful(view, store):
    for template in query_structures(store, 6):
        graph = populate(template, view, SeededRng(11, 0))
        assert graph.attr_counts == template.attr_counts
        assert graph.edges == template.edges
        assert graph.complexity == template.complexity
        check_scene_graph(graph, view.taxonomy)
        assert set(graph.concept_ids()) <= set(view.objects() + view.attributes() + view.relations())


def test_populate_two_objects_one_edge(view):
    graph = populate(single((0, 0), [(0, 1)]), view, SeededRng(3, 4))
    assert len(graph.objects) == 2
    assert len(graph.relations) == 1
    assert graph.attr_counts == (0, 0)


def test_populate_is_deterministic(view, store):
    template = query_structures(store, 5)[-1]
    assert populate(template, view, SeededRng(9, 2)) == populate(template, view, SeededRng(9, 2))


def test_object_draws_are_uniform(catalog):
    view = scope_filter(catalog, ScopeSpec(include_subtrees=("object/vehicle#n.01",)))
    assert len(view.objects()) == 4
    rng = SeededRng(2024, 0)
    freq = Counter(populate(single(), view, rng).objects[0].concept_id for _ in range(10_000))
    sigma = (10_000 * 0.25 * 0.75) ** 0.5
    assert set(freq) == set(view.objects())
    assert all(abs(n - 2500) <= 4 * sigma for n in freq.values())


def test_populate_needs_attributes_in_scope(catalog):
    view = scope_filter(catalog, ScopeSpec(allowed_attribute_subcategories=frozenset()))
    with pytest.raises(ScopeTooNarrowError):
        populate(single((1,)), view, SeededRng(0, 0))


def test_scene_attributes_empty_range(view):
    assert len(sample_scene_attributes(view, (0, 0), "image", SeededRng(1, 1))) == 0


def test_scene_attributes_respect_media_and_precedence(view):
    for stream in range(50):
        attrs = sample_scene_attributes(view, (2, 2), "image", SeededRng(8, stream))
        subs = [a.subcategory for a in attrs.items]
        assert len(subs) == 2 and len(set(subs)) == 2
        assert not set(subs) & (VIDEO_ONLY | {"threed_attribute"})
        order = view.admissible_scene_subcategories("image")
        assert subs == sorted(subs, key=order.index)


def test_scene_attribute_range_beyond_admissible(view):
    admissible = len(view.admissible_scene_subcategories("image"))
    with pytest.raises(ScopeTooNarrowError):
        sample_scene_attributes(view, (0, admissible + 1), "image", SeededRng(1, 1))
    with pytest.raises(DataError):
        sample_scene_attributes(view, (0, 1), "radio", SeededRng(1, 1))


def test_expand_zero_deficit_returns_seed(view, store):
    seed = populate(query_structures(store, 5)[0], view, SeededRng(5, 5))
    assert expand_seed_graph(seed, 5, view, store, SeededRng(1, 0)) == seed


def test_expand_single_cat_by_one(view, store):
    seed = SceneGraph((SceneObject(0, CAT, "cat"),))
    outcomes = set()
    for stream in range(200):
        grown = expand_seed_graph(seed, 2, view, store, SeededRng(77, stream))
        assert grown.objects[0].concept_id == CAT
        assert not grown.relations
        outcomes.add((len(grown.objects), grown.attr_counts[0]))
    assert outcomes == {(1, 1), (2, 0)}


def test_expand_preserves_seed(view, store):
    for stream in range(1000):
        rng = SeededRng(31, stream)
        seed = populate(rng.choice(query_structures(store, rng.integer(1, 4))), view, rng)
        target = seed.complexity + rng.integer(0, 6)
        grown = expand_seed_graph(seed, target, view, store, rng)
        assert grown.complexity == target
        check_scene_graph(grown, view.taxonomy)
        assert len(grown.objects) >= len(seed.objects)
        for old, new in zip(seed.objects, grown.objects):
            assert (new.index, new.concept_id, new.lemma) == (old.index, old.concept_id, old.lemma)
            assert new.attributes[:len(old.attributes)] == old.attributes
        seed_ids = {o.index for o in seed.objects}
        among_seed = [r for r in grown.relations if r.src in seed_ids and r.dst in seed_ids]
        assert among_seed == list(seed.relations)


def test_expand_rejects_small_target(view, store):
    seed = populate(query_structures(store, 4)[0], view, SeededRng(1, 2))
    with pytest.raises(DataError):
        expand_seed_graph(seed, 3, view, store, SeededRng(1, 3))


def test_inject_focus_replaces_one_object(view, store):
    dog = "object/dog#n.01"
    graph = populate(query_structures(store, 4, n_objects=3)[0], view, SeededRng(4, 4))
    focused = inject_focus(graph, [dog], view, SeededRng(4, 5))
    changed = [i for i, (a, b) in enumerate(zip(graph.objects, focused.objects)) if a != b]
    assert len(changed) <= 1
    assert dog in [o.concept_id for o in focused.objects]
    assert focused.relations == graph.relations
    with pytest.raises(DataError):
        inject_focus(graph, ["attribute:color/red#a.01"], view, SeededRng(4, 6))


def test_check_rejects_wrong_kind(taxonomy):
    graph = SceneGraph((SceneObject(0, CAT, "cat", (Concept(CAT, "cat"),)),))
    with pytest.raises(InvalidSceneGraphError):
        check_scene_graph(graph, taxonomy)


def test_check_rejects_cycles():
    objects = (SceneObject(0, CAT, "cat"), SceneObject(1, CAT, "cat"))
    relations = (SceneRelation(0, 1, "r", "r"), SceneRelation(1, 0, "r", "r"))
    with pytest.raises(InvalidSceneGraphError):
        check_scene_graph(SceneGraph(objects, relations))


def test_scene_graph_dict_form(view, store):
    graph = populate(query_structures(store, 6)[3], view, SeededRng(6, 6))
    assert SceneGraph.from_dict(graph.to_dict()) == graph


def test_load_sample_seed_graph(sample_dir):
    seed = load_seed_graph(sample_dir / "seed_graph.json")
    assert seed.complexity == 1
    assert seed.objects[0].concept_id == CAT
