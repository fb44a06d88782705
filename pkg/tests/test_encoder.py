import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from semcomm.decoder import nearest_entities
from semcomm.encoder import (
    EmbeddingTable,
    EncoderConfig,
    EncoderDivergenceError,
    TripletBatch,
    UnsatisfiableError,
    encode_explicit,
    energy,
    init_table,
    margin_audit,
    margin_loss,
    margin_loss_grad,
    pack_symbols,
    path_energy,
    sample_negatives,
    train_encoder,
    unpack_symbols,
)
from semcomm.kg_store import (
    ExplicitSemantics,
    KnowledgeGraph,
    chain_graph,
    random_toy_graph,
    sample_skg,
    synthetic_typed_graph,
)

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


@pytest.fixture(scope="module")
def skg():
    return sample_skg(synthetic_typed_graph(3000, 60, 40000, num_types=10, seed=2), 200, seed=0)


class TestEnergy:
    def test_zero_case(self):
        z = np.zeros(3)
        assert energy(z, z, z, "l1") == 0.0

    def test_exact_translation(self):
        assert energy(np.array([1, 0]), np.array([0, 1]), np.array([1, 1]), "l1") == 0.0

    def test_l1_arithmetic(self):
        assert energy(np.array([1, 2]), np.array([3, -1]), np.array([0, 0]), "l1") == 5.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            energy(np.zeros(2), np.zeros(3), np.zeros(2))

    def test_path_energy_arithmetic(self):
        val = path_energy(np.array([1.0, 1.0]), [np.array([1.0, 0.0]), np.array([0.0, 2.0])],
                          np.zeros(2), "l2")
        np.testing.assert_allclose(val, math.sqrt(13), rtol=1e-12)
        assert abs(val - 3.6056) < 1e-4

    def test_path_energy_single_relation(self):
        rng = np.random.default_rng(0)
        h, r, t = rng.normal(size=(3, 6))
        for norm in ("l1", "l2"):
            assert path_energy(h, [r], t, norm) == pytest.approx(energy(h, r, t, norm))

    def test_path_energy_cancellation(self):
        e0 = np.array([0.3, -0.2])
        r = np.array([1.5, 2.0])
        assert path_energy(e0, [r, -r], e0) == 0.0

    def test_path_energy_needs_relations(self):
        with pytest.raises(ValueError):
            path_energy(np.zeros(2), [], np.zeros(2))

    @settings(max_examples=50, deadline=None)
    @given(arrays(float, 4, elements=finite), arrays(float, 4, elements=finite),
           arrays(float, 4, elements=finite), st.sampled_from(["l1", "l2"]))
    def test_negation_symmetry(self, h, r, t, norm):
        assert energy(h, r, t, norm) == pytest.approx(energy(-h, -r, -t, norm))
        assert energy(h, r, t, norm) >= 0

    def test_zero_iff_translation(self):
        h = np.array([0.5, 1.0])
        r = np.array([-1.0, 2.0])
        assert energy(h, r, h + r) == 0.0
        assert energy(h, r, h + r + 1e-3) > 0.0


class TestNegatives:
    def test_single_triple_graph(self):
        kg = KnowledgeGraph(["a", "b", "c"], ["r"], [(0, 0, 1)])
        batch = sample_negatives(kg, kg.triples, "both", seed=0)
        diff = (batch.negatives != batch.positives).sum(axis=1)
        assert diff.tolist() == [1]
        assert not kg.has_triple(*batch.negatives[0])

    def test_full_tail_side_falls_back_to_heads(self):
        # every tail of (0, r) is taken, so only head corruption can work
        kg = KnowledgeGraph(["a", "b", "c"], ["r"], [(0, 0, 0), (0, 0, 1), (0, 0, 2)])
        batch = sample_negatives(kg, kg.triples[:1], "both", seed=3)
        h, r, t = batch.negatives[0]
        assert t == 0 and h != 0
        assert not kg.has_triple(h, r, t)

    def test_tail_only_mode_unsatisfiable(self):
        kg = KnowledgeGraph(["a", "b"], ["r"], [(0, 0, 0), (0, 0, 1)])
        with pytest.raises(UnsatisfiableError):
            sample_negatives(kg, kg.triples[:1], "tail", seed=0)

    def test_complete_graph_unsatisfiable(self):
        trip = [(h, 0, t) for h in range(2) for t in range(2)]
        kg = KnowledgeGraph(["a", "b"], ["r"], trip)
        with pytest.raises(UnsatisfiableError):
            sample_negatives(kg, kg.triples, "both", seed=0)

    def test_no_collisions_on_skg(self, skg):
        rng = np.random.default_rng(1)
        pos = skg.triples[rng.integers(skg.num_triples, size=1000)]
        batch = sample_negatives(skg, pos, "both", seed=4)
        assert len(batch.negatives) == 1000
        assert not any(skg.has_triple(*t) for t in batch.negatives.tolist())
        # exactly one slot corrupted, never the relation
        diff = batch.negatives != batch.positives
        assert np.all(diff.sum(axis=1) == 1)
        assert not diff[:, 1].any()

    def test_modes_choose_side(self, skg):
        tail = sample_negatives(skg, skg.triples, "tail", seed=0)
        assert np.all(tail.negatives[:, 0] == skg.triples[:, 0])
        head = sample_negatives(skg, skg.triples, "head", seed=0)
        assert np.all(head.negatives[:, 2] == skg.triples[:, 2])

    def test_batch_alignment_checked(self):
        with pytest.raises(ValueError):
            TripletBatch(np.zeros((2, 3), dtype=int), np.zeros((1, 3), dtype=int))


def scalar_margin_loss(pos, neg, table, margin):
    total = 0.0
    for (h, r, t), (h2, r2, t2) in zip(pos, neg):
        ep = np.abs(table.entities[h] + table.relations[r] - table.entities[t]).sum() \
            if table.norm == "l1" else np.linalg.norm(table.entities[h] + table.relations[r] - table.entities[t])
        en = np.abs(table.entities[h2] + table.relations[r2] - table.entities[t2]).sum() \
            if table.norm == "l1" else np.linalg.norm(table.entities[h2] + table.relations[r2] - table.entities[t2])
        total += max(0.0, margin + ep - en)
    return total


class TestMarginLoss:
    def table(self, norm="l2"):
        ent = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        rel = np.array([[1.0, 0.0]])
        return EmbeddingTable(ent, rel, norm)

    def test_inactive_hinge(self):
        batch = TripletBatch(np.array([[0, 0, 1]]), np.array([[0, 0, 2]]))
        # positive energy 0, negative sqrt(2) > 1
        assert margin_loss(batch, self.table(), 1.0) == 0.0

    def test_hinge_at_margin(self):
        batch = TripletBatch(np.array([[0, 0, 2]]), np.array([[0, 0, 2]]))
        assert margin_loss(batch, self.table(), 1.0) == pytest.approx(1.0)

    def test_two_triple_scalar_oracle(self):
        pos = np.array([[0, 0, 1], [1, 0, 2]])
        neg = np.array([[0, 0, 2], [1, 0, 0]])
        for norm in ("l1", "l2"):
            t = self.table(norm)
            assert margin_loss(TripletBatch(pos, neg), t, 1.0) == pytest.approx(
                scalar_margin_loss(pos, neg, t, 1.0), rel=1e-12)

    @pytest.mark.parametrize("norm", ["l1", "l2"])
    def test_subgradient_matches_finite_differences(self, norm):
        kg = random_toy_graph(seed=0)
        rng = np.random.default_rng(5)
        table = init_table(kg.num_entities, kg.num_relations, EncoderConfig(n=6, norm=norm, seed=2))
        batch = sample_negatives(kg, kg.triples, "both", seed=1)
        margin = 3.0
        _, gE, gR = margin_loss_grad(batch, table, margin)
        eps = 1e-6
        checked = 0
        for which, grad in (("entities", gE), ("relations", gR)):
            arr = getattr(table, which)
            for _ in range(30):
                i = int(rng.integers(arr.shape[0]))
                j = int(rng.integers(arr.shape[1]))
                old = arr[i, j]
                arr[i, j] = old + eps
                up = margin_loss(batch, table, margin)
                arr[i, j] = old - eps
                down = margin_loss(batch, table, margin)
                arr[i, j] = old
                fd = (up - down) / (2 * eps)
                if abs(grad[i, j]) < 1e-6 and abs(fd) < 1e-6:
                    continue
                assert abs(fd - grad[i, j]) <= 1e-4 * max(abs(fd), abs(grad[i, j]))
                checked += 1
        assert checked > 10

    def test_non_negative_and_zero_iff_satisfied(self):
        kg = random_toy_graph(seed=0)
        table = init_table(20, 6, EncoderConfig(n=4, seed=1))
        batch = sample_negatives(kg, kg.triples, "both", seed=2)
        for margin in (0.01, 0.5, 2.0):
            val = margin_loss(batch, table, margin)
            assert val >= 0
            pe = np.abs(table.entities[batch.positives[:, 0]] + table.relations[batch.positives[:, 1]]
                        - table.entities[batch.positives[:, 2]]).sum(1)
            ne = np.abs(table.entities[batch.negatives[:, 0]] + table.relations[batch.negatives[:, 1]]
                        - table.entities[batch.negatives[:, 2]]).sum(1)
            assert (val == 0) == bool(np.all(pe + margin <= ne))


class TestTraining:
    def test_zero_epochs_returns_initialization(self):
        kg = chain_graph(3)
        cfg = EncoderConfig(n=8, epochs=0, seed=4)
        table, losses = train_encoder(kg, cfg)
        init = init_table(4, 1, cfg)
        np.testing.assert_array_equal(table.entities, init.entities)
        np.testing.assert_array_equal(table.relations, init.relations)
        assert losses == []

    def test_init_range(self):
        t = init_table(100, 10, EncoderConfig(n=36, seed=0))
        assert np.abs(t.entities).max() <= 1.0
        assert np.abs(t.entities).max() > 0.9

    def test_chain_loss_decreases(self):
        _, losses = train_encoder(chain_graph(3), EncoderConfig(n=8, epochs=200, seed=0))
        assert losses[-1] < losses[0]

    def test_rows_unit_norm_and_deterministic(self):
        kg = random_toy_graph(seed=1)
        cfg = EncoderConfig(n=8, epochs=20, seed=3)
        a, la = train_encoder(kg, cfg)
        b, lb = train_encoder(kg, cfg)
        np.testing.assert_allclose(np.linalg.norm(a.entities, axis=1), 1.0, rtol=1e-12)
        np.testing.assert_array_equal(a.entities, b.entities)
        assert la == lb

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_reports_epoch(self):
        cfg = EncoderConfig(n=4, epochs=5, lr=1e308, margin=1e308, seed=0)
        with pytest.raises(EncoderDivergenceError) as err:
            train_encoder(random_toy_graph(seed=0), cfg)
        assert err.value.epoch == 0

    def test_margin_audit_improves(self, skg):
        cfg = EncoderConfig(n=20, epochs=0, seed=0)
        before = margin_audit(skg, train_encoder(skg, cfg)[0], 1.0, seed=1)
        after = margin_audit(skg, train_encoder(skg, EncoderConfig(n=20, epochs=200, seed=0))[0],
                             1.0, seed=1)
        assert after > before

    def test_config_validation(self):
        with pytest.raises(ValueError):
            EncoderConfig(margin=0)
        with pytest.raises(ValueError):
            EncoderConfig(norm="l3")
        with pytest.raises(ValueError):
            EncoderConfig(corruption="relation")


class TestTableIO:
    def test_bit_exact_reload(self, tmp_path):
        table, _ = train_encoder(random_toy_graph(seed=0), EncoderConfig(n=6, epochs=3))
        path = tmp_path / "table.txt"
        table.save(path)
        again = EmbeddingTable.load(path)
        np.testing.assert_array_equal(again.entities, table.entities)
        np.testing.assert_array_equal(again.relations, table.relations)
        assert again.norm == table.norm
        assert path.read_text().splitlines()[0] == "6 6 l1 20 6"


class TestEncoding:
    def test_single_entity_lookup(self):
        t = init_table(5, 2, EncoderConfig(n=4))
        (x,) = encode_explicit(ExplicitSemantics((3,)), t)
        np.testing.assert_array_equal(x, t.entities[3])

    def test_shapes(self):
        t = init_table(5, 2, EncoderConfig(n=4, n_rel=6))
        xs = encode_explicit(ExplicitSemantics((1,), (0,)), t)
        assert [len(x) for x in xs] == [4, 6]

    def test_unknown_id(self):
        t = init_table(5, 2, EncoderConfig(n=4))
        with pytest.raises(KeyError):
            encode_explicit(ExplicitSemantics((9,)), t)

    def test_round_trip_nearest_neighbor(self, skg):
        table, _ = train_encoder(skg, EncoderConfig(n=16, epochs=30, seed=0))
        xs = np.array([encode_explicit(ExplicitSemantics((e,)), table)[0]
                       for e in range(skg.num_entities)])
        ids, dist = nearest_entities(xs, table)
        np.testing.assert_array_equal(ids, np.arange(skg.num_entities))
        assert np.all(dist == 0)


class TestPacking:
    def test_complex_pairing(self):
        s = pack_symbols(np.array([1.0, 2.0, 3.0, 4.0]), "complex")
        np.testing.assert_array_equal(s, [1 + 2j, 3 + 4j])

    def test_real_identity(self):
        x = np.array([0.5, -1.0, 2.0])
        np.testing.assert_array_equal(pack_symbols(x, "real"), x)

    def test_odd_dimension_rejected(self):
        with pytest.raises(ValueError):
            pack_symbols(np.zeros(3), "complex")

    @settings(max_examples=50, deadline=None)
    @given(arrays(float, st.integers(1, 6).map(lambda k: 2 * k), elements=finite),
           st.sampled_from(["real", "complex"]))
    def test_unpack_inverts_pack(self, x, mode):
        np.testing.assert_array_equal(unpack_symbols(pack_symbols(x, mode), mode), x)
