import json
import math

import numpy as np
import pytest
from pydantic import ValidationError

from bev_domain_adapt.exceptions import DataError, ShapeError
from bev_domain_adapt.models import PrototypeGraph
from bev_domain_adapt.prototypes import (
    NEUTRAL_DISTANCE,
    PrototypeAccumulator,
    PrototypeSet,
    accumulate_prototypes,
    build_graph,
    cosine_distance_rows,
    load_graph,
    merge_contributions,
    save_graph,
)


def test_one_hot_heatmap_selects_feature_column(rng):
    features = rng.normal(size=(5, 4, 4))
    heatmap = np.zeros((2, 4, 4))
    heatmap[1, 2, 3] = 1.0
    prototypes = accumulate_prototypes([features], heatmap).prototypes('d')
    np.testing.assert_allclose(prototypes.levels[0][1], features[:, 2, 3])
    assert prototypes.zero_mass.tolist() == [True, False]
    np.testing.assert_array_equal(prototypes.levels[0][0], np.zeros(5))


def test_uniform_heatmap_gives_spatial_mean(rng):
    features = rng.normal(size=(3, 4, 4))
    prototypes = accumulate_prototypes([features], np.full((1, 4, 4), 0.3)).prototypes()
    np.testing.assert_allclose(prototypes.levels[0][0], features.mean(axis=(1, 2)))


def test_heatmap_is_resized_to_each_level(rng):
    levels = [rng.normal(size=(2, 8, 8)), rng.normal(size=(3, 4, 4)), rng.normal(size=(3, 2, 2))]
    contribution = accumulate_prototypes(levels, np.full((2, 8, 8), 0.5))
    assert [n.shape for n in contribution.numerators] == [(2, 2), (2, 3), (2, 3)]
    np.testing.assert_allclose(contribution.masses[1], np.full(2, 0.5 * 16))


def test_accumulation_is_additive_over_frames(rng):
    f1, f2 = rng.normal(size=(3, 4, 4)), rng.normal(size=(3, 4, 4))
    h1, h2 = rng.uniform(size=(2, 4, 4)), rng.uniform(size=(2, 4, 4))
    merged = merge_contributions([accumulate_prototypes([f1], h1), accumulate_prototypes([f2], h2)]).prototypes()
    joined = accumulate_prototypes([np.concatenate([f1, f2], axis=2)], np.concatenate([h1, h2], axis=2)).prototypes()
    np.testing.assert_allclose(merged.levels[0], joined.levels[0], atol=1e-12)
    assert merge_contributions([accumulate_prototypes([f1], h1)] * 2).frames == 2


def test_accumulator_rejects_level_mismatch(rng):
    total = PrototypeAccumulator().add(accumulate_prototypes([rng.normal(size=(3, 4, 4))], np.ones((1, 4, 4))))
    with pytest.raises(ShapeError):
        total.add(accumulate_prototypes([rng.normal(size=(2, 4, 4))], np.ones((1, 4, 4))))
    with pytest.raises(DataError):
        PrototypeAccumulator().prototypes()


def test_cosine_distance_rows():
    a = np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0], [0.0, 0.0]])
    b = np.array([[2.0, 0.0], [0.0, 3.0], [-1.0, 0.0], [1.0, 1.0]])
    np.testing.assert_allclose(cosine_distance_rows(a, b), [0.0, 1.0, 2.0, 1.0])


def _prototype_set(rows_per_level, name, zero_mass=None):
    levels = [np.asarray(rows, dtype=np.float64) for rows in rows_per_level]
    flags = np.zeros(levels[0].shape[0], dtype=bool) if zero_mass is None else np.asarray(zero_mass)
    return PrototypeSet(levels=levels, zero_mass=flags, domain=name)


def test_identical_domains_give_zero_graph(rng):
    rows = [rng.normal(size=(3, 4)) for _ in range(3)]
    graph = build_graph([_prototype_set(rows, n) for n in ('t', 's0', 's1')], ['Car', 'Pedestrian', 'Cyclist'])
    assert graph.distances.shape == (3, 3, 3)
    np.testing.assert_allclose(graph.distances, 0.0, atol=1e-12)


def test_graph_averages_levels():
    target = _prototype_set([[[1.0, 0.0]]] * 3, 'target')
    source = _prototype_set(
        [[[math.cos(t), math.sin(t)]] for t in (math.acos(0.7), math.acos(0.4), math.acos(0.1))], 'source'
    )
    graph = build_graph([target, source], ['Car'])
    assert graph.target_distance(0, 0) == pytest.approx(0.6)
    assert graph.distances[0, 1, 0] == pytest.approx(0.6)
    assert graph.domain_names == ['target', 'source']


def test_zero_mass_class_gets_neutral_distance():
    target = _prototype_set([[[1.0, 0.0], [0.0, 1.0]]], 'target', zero_mass=[False, True])
    source = _prototype_set([[[1.0, 0.0], [0.0, 1.0]]], 'source')
    graph = build_graph([target, source], ['Car', 'Pedestrian'])
    assert graph.distances[0, 0, 1] == pytest.approx(0.0)
    assert graph.distances[1, 0, 1] == NEUTRAL_DISTANCE
    assert graph.is_neutral(1, 0) and not graph.is_neutral(0, 0)


def test_graph_rejects_level_mismatch():
    target = _prototype_set([[[1.0, 0.0]]], 'target')
    source = _prototype_set([[[1.0, 0.0, 0.0]]], 'source')
    with pytest.raises(ShapeError):
        build_graph([target, source], ['Car'])
    with pytest.raises(DataError):
        build_graph([target], ['Car'])


def test_graph_save_load_and_schema(tmp_path, rng):
    rows = [rng.normal(size=(3, 4)) for _ in range(3)]
    sets = [_prototype_set([r + 0.1 * i for r in rows], f'd{i}') for i in range(3)]
    graph = build_graph(sets, ['Car', 'Pedestrian', 'Cyclist'])
    path = tmp_path / 'graph.json'
    save_graph(path, graph)
    loaded = load_graph(path)
    np.testing.assert_allclose(loaded.distances, graph.distances)
    assert loaded.num_sources == 2

    content = json.loads(path.read_text())
    content['schema'] = 'other/1'
    path.write_text(json.dumps(content))
    with pytest.raises(DataError):
        load_graph(path)


def test_graph_model_rejects_asymmetry():
    distances = np.zeros((1, 2, 2))
    distances[0, 0, 1] = 0.5
    with pytest.raises(ValidationError):
        PrototypeGraph(class_names=['Car'], domain_names=['t', 's'], distances=distances, zero_mass=np.zeros((1, 2), dtype=bool))


def test_uniform_graph_is_zero():
    graph = PrototypeGraph.uniform(['Car', 'Pedestrian'], ['t', 's0', 's1'])
    assert graph.num_sources == 2
    assert not graph.distances.any()


def test_prototypes_match_explicit_weighted_mean(rng):
    features = rng.normal(size=(4, 8, 8))
    heatmap = rng.uniform(size=(3, 8, 8))
    expected = np.zeros((3, 4))
    for k in range(3):
        numerator, mass = np.zeros(4), 0.0
        for row in range(8):
            for col in range(8):
                numerator += heatmap[k, row, col] * features[:, row, col]
                mass += heatmap[k, row, col]
        expected[k] = numerator / mass
    prototypes = accumulate_prototypes([features], heatmap).prototypes()
    np.testing.assert_allclose(prototypes.levels[0], expected, rtol=1e-12, atol=1e-12)


def _random_domain(rng, frames):
    return [
        ([rng.normal(size=(4, 8, 8)), rng.normal(size=(4, 4, 4)), rng.normal(size=(4, 2, 2))], rng.uniform(size=(3, 8, 8)))
        for _ in range(frames)
    ]


def _graph_of(domains, scale=None):
    sets = []
    for index, frames in enumerate(domains):
        factor = 1.0 if scale is None else scale[index]
        contributions = [accumulate_prototypes([factor * level for level in levels], heat) for levels, heat in frames]
        sets.append(merge_contributions(contributions).prototypes(f'domain_{index}'))
    return build_graph(sets, ['Car', 'Pedestrian', 'Cyclist'])


def test_graph_properties_on_random_domains(rng):
    for _ in range(100):
        domains = [_random_domain(rng, int(rng.integers(1, 4))) for _ in range(int(rng.integers(2, 5)))]
        graph = _graph_of(domains)
        g = graph.distances
        np.testing.assert_array_equal(g, np.transpose(g, (0, 2, 1)))
        assert np.all(np.diagonal(g, axis1=1, axis2=2) == 0.0)
        assert np.all((g >= 0.0) & (g <= 2.0))

        scaled = _graph_of(domains, scale=rng.uniform(0.1, 10.0, size=len(domains)))
        np.testing.assert_allclose(scaled.distances, g, atol=1e-9)

        shuffled = [[frames[i] for i in rng.permutation(len(frames))] for frames in domains]
        np.testing.assert_allclose(_graph_of(shuffled).distances, g, atol=1e-9)
