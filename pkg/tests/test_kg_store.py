import itertools
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semcomm.kg_store import (
    ExplicitSemantics,
    KnowledgeGraph,
    SemanticPath,
    TripleParseError,
    bidirectional_bfs_path,
    builtin_graph,
    chain_graph,
    expert_mechanism_distribution,
    generate_expert_paths,
    hard_toy_graph,
    induced_subgraph,
    load_triples,
    neighbors,
    random_toy_graph,
    sample_skg,
    serialize,
    synthetic_typed_graph,
)


def brute_shortest(kg, start, goal, max_length):
    """Plain BFS over forward edges; returns the hop count or None."""
    dist = {start: 0}
    q = deque([start])
    while q:
        u = q.popleft()
        for _, v in kg.neighbors(u):
            if v not in dist:
                dist[v] = dist[u] + 1
                q.append(v)
    d = dist.get(goal)
    return d if d is not None and 0 < d <= max_length else None


class TestLoading:
    def test_two_lines_share_entity(self):
        kg = load_triples("a\tr\tb\nb\tr\tc\n")
        assert kg.num_entities == 3
        assert kg.num_relations == 1
        assert kg.num_triples == 2

    def test_comments_and_blank_lines_skipped(self):
        kg = load_triples("# header\n\na\tr\tb\n# tail comment\n")
        assert kg.num_triples == 1
        assert kg.entity_labels == ("a", "b")

    def test_duplicates_stored_once(self):
        kg = load_triples("a\tr\tb\na\tr\tb\n")
        assert kg.num_triples == 1

    def test_malformed_line_reports_line_number(self):
        with pytest.raises(TripleParseError) as err:
            load_triples("a\tr\tb\nbroken line\n")
        assert err.value.line_no == 2

    def test_empty_field_is_malformed(self):
        with pytest.raises(TripleParseError):
            load_triples("a\t\tb\n")

    def test_round_trip_keeps_isolated_entities(self):
        kg = hard_toy_graph()
        again = load_triples(serialize(kg))
        assert again == kg
        assert again.num_entities == 20

    def test_serialize_header(self):
        text = serialize(chain_graph(2))
        assert text.splitlines()[0] == "#entities=3 relations=1"

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 2), st.integers(0, 6)),
                    min_size=1, max_size=25))
    def test_round_trip_property(self, triples):
        lines = "".join(f"n{h}\tp{r}\tn{t}\n" for h, r, t in triples)
        kg = load_triples(lines)
        assert load_triples(serialize(kg)) == kg
        assert kg.num_triples == len(set(triples))


class TestGraph:
    def test_neighbors_sorted(self):
        kg = KnowledgeGraph(["a", "b", "c"], ["x", "y"], [(0, 1, 2), (0, 0, 1), (0, 0, 2)])
        assert neighbors(kg, 0) == [(0, 1), (0, 2), (1, 2)]

    def test_neighbors_unknown_entity(self):
        with pytest.raises(KeyError):
            chain_graph(2).neighbors(7)

    def test_rejects_out_of_range_ids(self):
        with pytest.raises(ValueError):
            KnowledgeGraph(["a"], ["r"], [(0, 0, 1)])

    def test_rejects_duplicate_labels(self):
        with pytest.raises(ValueError):
            KnowledgeGraph(["a", "a"], ["r"], [])

    def test_triples_read_only(self):
        kg = chain_graph(2)
        with pytest.raises(ValueError):
            kg.triples[0, 0] = 1

    def test_triple_keys_match_membership(self):
        kg = random_toy_graph(seed=3)
        keys = set(kg.triple_keys().tolist())
        for h, r, t in itertools.product(range(20), range(6), range(20)):
            key = (h * 6 + r) * 20 + t
            assert (key in keys) == kg.has_triple(h, r, t)

    def test_random_toy_graph_is_functional(self):
        kg = random_toy_graph(seed=1)
        for e in range(kg.num_entities):
            rels = [r for r, _ in kg.neighbors(e)]
            assert len(rels) == len(set(rels)) == 3


class TestSubgraphs:
    def test_induced_subgraph_keeps_internal_triples(self):
        kg = chain_graph(4)
        sub = induced_subgraph(kg, [1, 2, 3])
        assert sub.num_entities == 3
        assert sub.num_triples == 2
        assert sub.entity_labels == ("e1", "e2", "e3")

    def test_full_budget_is_identity(self):
        kg = random_toy_graph(seed=0)
        assert sample_skg(kg, kg.num_entities, seed=5) == kg

    def test_budget_out_of_range(self):
        with pytest.raises(ValueError):
            sample_skg(chain_graph(2), 0, seed=0)
        with pytest.raises(ValueError):
            sample_skg(chain_graph(2), 4, seed=0)

    def test_sample_is_seeded(self):
        kg = synthetic_typed_graph(2000, 40, 20000, num_types=8, seed=1)
        a = sample_skg(kg, 150, seed=3)
        b = sample_skg(kg, 150, seed=3)
        assert a == b
        assert a.num_entities == 150

    def test_sampled_triples_exist_in_parent(self):
        kg = synthetic_typed_graph(2000, 40, 20000, num_types=8, seed=1)
        sub = sample_skg(kg, 100, seed=0)
        for h, r, t in sub.triples.tolist():
            hl, rl, tl = sub.entity_labels[h], sub.relation_labels[r], sub.entity_labels[t]
            assert kg.has_triple(kg.entity_index[hl], kg.relation_index[rl], kg.entity_index[tl])

    def test_synthetic_graph_size_profile(self):
        kg = builtin_graph("synthetic:fb15k237")
        assert (kg.num_entities, kg.num_relations, kg.num_triples) == (14541, 237, 272115)

    def test_unknown_builtin(self):
        with pytest.raises(KeyError):
            builtin_graph("toy:nothing")


class TestExpertPaths:
    def test_chain_path(self):
        kg = chain_graph(3)
        path = bidirectional_bfs_path(kg, 0, 3, 3)
        assert path == SemanticPath(0, ((0, 1), (0, 2), (0, 3)))

    def test_too_long(self):
        assert bidirectional_bfs_path(chain_graph(3), 0, 3, 2) is None

    def test_unreachable(self):
        assert bidirectional_bfs_path(chain_graph(3), 3, 0, 3) is None

    def test_lengths_match_bfs_oracle(self):
        kg = random_toy_graph(seed=2)
        rng = np.random.default_rng(0)
        for s, g in itertools.product(range(20), range(20)):
            path = bidirectional_bfs_path(kg, s, g, 3, rng=rng)
            want = brute_shortest(kg, s, g, 3)
            if want is None:
                assert path is None
            else:
                assert path.length == want
                assert path.is_valid(kg, 3)
                assert path.end == g

    def test_generated_paths_replay(self):
        kg = random_toy_graph(seed=0)
        experts = generate_expert_paths(kg, 3, 200, seed=4)
        assert experts.count == 200 and not experts.incomplete
        assert all(p.is_valid(kg, 3) for p in experts.paths)
        assert all(len(set(p.entities)) == len(p.entities) for p in experts.paths)

    def test_generation_is_seeded(self):
        kg = random_toy_graph(seed=0)
        assert generate_expert_paths(kg, 3, 30, seed=1) == generate_expert_paths(kg, 3, 30, seed=1)

    def test_incomplete_flag(self):
        kg = KnowledgeGraph([f"e{i}" for i in range(50)], ["r"], [(0, 0, 1)])
        experts = generate_expert_paths(kg, 2, 5, seed=0, max_attempts=20)
        assert experts.incomplete
        assert experts.count < 5

    def test_hard_graph_mechanism_uniform_over_eight(self):
        dist = expert_mechanism_distribution(hard_toy_graph(), 3)
        assert len(dist) == 8
        np.testing.assert_allclose(sorted(dist.values()), [1 / 8] * 8)

    def test_mechanism_matches_sampling(self):
        kg = random_toy_graph(seed=0)
        dist = expert_mechanism_distribution(kg, 2)
        experts = generate_expert_paths(kg, 2, 20000, seed=9)
        counts = {}
        for p in experts.paths:
            counts[p.key()] = counts.get(p.key(), 0) + 1
        for key, prob in dist.items():
            assert abs(counts.get(key, 0) / 20000 - prob) < 0.01
        assert set(counts) <= set(dist)


class TestValueTypes:
    def test_explicit_semantics_requires_entity(self):
        with pytest.raises(ValueError):
            ExplicitSemantics(())

    def test_path_key_round_trip(self):
        p = SemanticPath(3, ((1, 4), (0, 5)))
        assert SemanticPath.from_key(p.key()) == p
        assert p.entities == (3, 4, 5)
        assert p.relations == (1, 0)
        assert p.end == 5

    def test_from_key_rejects_even_length(self):
        with pytest.raises(ValueError):
            SemanticPath.from_key((1, 2))
