import numpy as np
import pytest

from semcomm import nn
from semcomm.encoder import EncoderConfig, init_table
from semcomm.interpreter import (
    PolicyNetwork,
    Rollout,
    RolloutConfig,
    State,
    action_mask,
    batch_policy_grad,
    featurize_state,
    log_prob_and_grad,
    path_distribution,
    policy_forward,
    policy_grad,
    rollout,
    rollout_batch,
    valid_actions,
)
from semcomm.kg_store import ExplicitSemantics, KnowledgeGraph, SemanticPath, chain_graph, random_toy_graph


def table_for(kg, n=4, seed=0):
    return init_table(kg.num_entities, kg.num_relations, EncoderConfig(n=n, seed=seed))


def random_net(n, num_rel, seed, hidden=8, stop=True, scale=1.0):
    net = PolicyNetwork(n, num_rel, hidden=hidden, stop=stop, seed=seed)
    rng = np.random.default_rng(seed + 100)
    for layer in net.layers:
        for p in layer:
            p[...] = rng.normal(scale=scale, size=p.shape)
    return net


def flat_grad(grads):
    return np.concatenate([g.ravel() for layer in grads for g in layer])


def finite_difference(net, objective, eps=1e-6):
    theta = nn.flatten(net.layers)
    out = np.zeros_like(theta)
    for i in range(len(theta)):
        for sign in (1, -1):
            t = theta.copy()
            t[i] += sign * eps
            nn.unflatten_into(net.layers, t)
            out[i] += sign * objective()
    nn.unflatten_into(net.layers, theta)
    return out / (2 * eps)


def rel_error(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


class TestFeatures:
    def test_initial_state(self):
        kg = chain_graph(3)
        table = table_for(kg)
        f = featurize_state(State(SemanticPath(1)), table, 3)
        np.testing.assert_array_equal(f, np.concatenate([table.entities[1], table.entities[1], [0.0]]))

    def test_last_step_fraction(self):
        kg = chain_graph(3)
        f = featurize_state(State(SemanticPath(0, ((0, 1), (0, 2), (0, 3)))), table_for(kg), 3)
        assert f[-1] == 1.0

    def test_soft_state_uses_raw_vector(self):
        kg = chain_graph(2)
        table = table_for(kg)
        v = np.arange(4.0)
        f = featurize_state(State(SemanticPath(0, ((0, 1),)), v), table, 2)
        np.testing.assert_array_equal(f[:4], v)
        np.testing.assert_array_equal(f[4:8], table.entities[0])

    def test_shape_on_random_rollouts(self):
        kg = random_toy_graph(seed=0)
        table = table_for(kg, n=6)
        net = PolicyNetwork(6, kg.num_relations, seed=1)
        ros = rollout_batch(net, kg, table, list(range(20)), 3, np.random.default_rng(0))
        for ro in ros:
            for f in ro.features:
                assert f.shape == (13,)


class TestMasks:
    def test_leaf_is_terminal(self):
        kg = chain_graph(3)
        assert not valid_actions(State(SemanticPath(3)), kg).any()

    def test_chain_midpoint(self):
        kg = chain_graph(3)
        assert valid_actions(State(SemanticPath(0, ((0, 1),))), kg).tolist() == [True]

    def test_revisit_excluded(self):
        kg = KnowledgeGraph(["a", "b"], ["f", "g"], [(0, 0, 1), (1, 1, 0)])
        s = State(SemanticPath(0, ((0, 1),)))
        assert not valid_actions(s, kg).any()

    def test_codomain(self):
        kg = random_toy_graph(seed=2)
        for e in range(kg.num_entities):
            m = valid_actions(State(SemanticPath(e)), kg)
            used = {r for r, _ in kg.neighbors(e)}
            assert set(np.flatnonzero(m).tolist()) == used

    def test_stop_allowed_after_first_step_only(self):
        kg = chain_graph(3)
        net = PolicyNetwork(2, 1, hidden=4)
        assert action_mask(net, State(SemanticPath(0)), kg, 3).tolist() == [True, False]
        assert action_mask(net, State(SemanticPath(0, ((0, 1),))), kg, 3).tolist() == [True, True]

    def test_nothing_allowed_at_max_length(self):
        kg = chain_graph(3)
        net = PolicyNetwork(2, 1, hidden=4)
        assert not action_mask(net, State(SemanticPath(0, ((0, 1),))), kg, 1).any()


class TestForward:
    def test_zero_net_uniform(self):
        net = PolicyNetwork(3, 5, hidden=6, stop=False)
        for layer in net.layers:
            for p in layer:
                p[...] = 0.0
        p = policy_forward(net, np.ones(7), np.ones(5, dtype=bool))
        np.testing.assert_allclose(p, np.full(5, 0.2))

    def test_single_allowed_action(self):
        net = random_net(3, 5, seed=0)
        mask = np.zeros(6, dtype=bool)
        mask[2] = True
        p = policy_forward(net, np.random.default_rng(0).normal(size=7), mask)
        assert p[2] == 1.0
        assert p.sum() == 1.0

    def test_terminal_signal(self):
        net = random_net(3, 5, seed=0)
        assert policy_forward(net, np.zeros(7), np.zeros(6, dtype=bool)) is None

    def test_random_masks_normalised(self):
        rng = np.random.default_rng(4)
        for seed in range(30):
            net = random_net(3, 7, seed=seed, scale=2.0)
            mask = rng.random(8) < 0.5
            mask[rng.integers(8)] = True
            p = policy_forward(net, rng.normal(size=7), mask)
            assert abs(p.sum() - 1) < 1e-6
            assert np.all(p[~mask] == 0.0)

    def test_relation_only_mask_disables_stop(self):
        net = random_net(3, 4, seed=1)
        p = policy_forward(net, np.ones(7), np.ones(4, dtype=bool))
        assert p.shape == (5,) and p[4] == 0.0

    def test_shift_invariance(self):
        net = random_net(3, 6, seed=2)
        x = np.random.default_rng(1).normal(size=7)
        mask = np.array([True, False, True, True, False, True, True])
        p = policy_forward(net, x, mask)
        net.layers[-1][1] += 12.5
        q = policy_forward(net, x, mask)
        np.testing.assert_allclose(p, q, atol=1e-9)

    def test_sampling_matches_probabilities(self):
        kg = KnowledgeGraph(["s", "a", "b", "c"], ["x", "y", "z"], [(0, 0, 1), (0, 1, 2), (0, 2, 3)])
        table = table_for(kg, n=3)
        net = random_net(3, 3, seed=5, stop=False)
        s = State(SemanticPath(0))
        p = policy_forward(net, featurize_state(s, table, 1), valid_actions(s, kg))
        rng = np.random.default_rng(0)
        ros = rollout_batch(net, kg, table, [0] * 100_000, 1, rng)
        freq = np.bincount([ro.actions[0] for ro in ros], minlength=3) / 100_000
        assert np.max(np.abs(freq - p)) < 0.01

    def test_feature_dimension_checked(self):
        net = random_net(3, 2, seed=0)
        with pytest.raises(ValueError):
            policy_forward(net, np.zeros(5), np.ones(3, dtype=bool))


class TestRollout:
    def test_chain_without_stop(self):
        kg = chain_graph(4)
        table = table_for(kg)
        for seed in range(5):
            net = random_net(4, 1, seed=seed, stop=False)
            for L in (1, 2, 4, 6):
                path = rollout(net, kg, table, ExplicitSemantics((0,)), RolloutConfig(L),
                               np.random.default_rng(seed))
                assert path.length == min(L, 4)
                assert path.entities == tuple(range(min(L, 4) + 1))

    def test_zero_length(self):
        kg = chain_graph(3)
        net = PolicyNetwork(4, 1, hidden=4)
        path = rollout(net, kg, table_for(kg), ExplicitSemantics((1,)), RolloutConfig(0),
                       np.random.default_rng(0))
        assert path == SemanticPath(1)

    def test_rollouts_replay(self):
        kg = random_toy_graph(seed=1)
        table = table_for(kg, n=5)
        net = random_net(5, kg.num_relations, seed=3, hidden=16)
        rng = np.random.default_rng(0)
        ros = rollout_batch(net, kg, table, list(rng.integers(20, size=1000)), 3, rng)
        for ro in ros:
            assert ro.path.is_valid(kg, 3)
            assert len(set(ro.path.entities)) == len(ro.path.entities)

    def test_uniform_tail_choice(self):
        kg = KnowledgeGraph(["s", "a", "b"], ["r"], [(0, 0, 1), (0, 0, 2)])
        net = PolicyNetwork(2, 1, hidden=4, stop=False)
        ros = rollout_batch(net, kg, table_for(kg, n=2), [0] * 20_000, 1, np.random.default_rng(0))
        ends = np.array([ro.path.end for ro in ros])
        assert abs(np.mean(ends == 1) - 0.5) < 0.01

    def test_seeded(self):
        kg = random_toy_graph(seed=1)
        table = table_for(kg, n=5)
        net = random_net(5, kg.num_relations, seed=3)
        a = rollout_batch(net, kg, table, list(range(20)), 3, np.random.default_rng(9))
        b = rollout_batch(net, kg, table, list(range(20)), 3, np.random.default_rng(9))
        assert [r.path for r in a] == [r.path for r in b]


class TestPathDistribution:
    def test_sums_to_one_and_matches_sampling(self):
        kg = random_toy_graph(seed=4)
        table = table_for(kg, n=5)
        net = random_net(5, kg.num_relations, seed=8, hidden=16, scale=0.5)
        exact = path_distribution(net, kg, table, 2, 3)
        assert abs(sum(exact.values()) - 1) < 1e-12
        ros = rollout_batch(net, kg, table, [2] * 50_000, 3, np.random.default_rng(1))
        counts = {}
        for ro in ros:
            counts[ro.path.key()] = counts.get(ro.path.key(), 0) + 1
        for key, p in exact.items():
            assert abs(counts.get(key, 0) / 50_000 - p) < 0.01
        assert set(counts) <= set(exact)


class TestGradients:
    def random_trajectory(self, net, rng, steps):
        feats = rng.normal(size=(steps, net.input_dim))
        masks = rng.random((steps, net.num_outputs)) < 0.6
        acts = []
        for m in masks:
            if not m.any():
                m[rng.integers(len(m))] = True
            acts.append(int(rng.choice(np.flatnonzero(m))))
        return list(zip(feats, masks, acts))

    def test_zero_when_reward_equals_baseline(self):
        net = random_net(3, 4, seed=0)
        traj = self.random_trajectory(net, np.random.default_rng(0), 3)
        assert np.all(flat_grad(policy_grad(net, traj, 1.7, 1.7)) == 0.0)

    def test_zero_for_forced_actions(self):
        net = random_net(3, 4, seed=0)
        m = np.zeros(5, dtype=bool)
        m[1] = True
        traj = [(np.ones(7), m, 1), (np.zeros(7), m, 1)]
        assert np.all(flat_grad(policy_grad(net, traj, 3.0, 0.0)) == 0.0)

    def test_non_finite_reward(self):
        net = random_net(3, 4, seed=0)
        traj = self.random_trajectory(net, np.random.default_rng(0), 2)
        with pytest.raises(ValueError):
            policy_grad(net, traj, float("nan"))

    def test_empty_trajectory(self):
        with pytest.raises(ValueError):
            policy_grad(random_net(3, 4, seed=0), [], 1.0)

    def test_finite_differences(self):
        rng = np.random.default_rng(11)
        for draw in range(20):
            net = random_net(3, 4, seed=draw, hidden=6)
            traj = self.random_trajectory(net, rng, int(rng.integers(1, 5)))
            reward, baseline = rng.normal(), rng.normal()
            analytic = flat_grad(policy_grad(net, traj, reward, baseline))
            feats, masks, acts = zip(*traj)

            def objective():
                p = [policy_forward(net, f, m)[a] for f, m, a in traj]
                return float(np.sum(np.log(p)) * (reward - baseline))

            numeric = finite_difference(net, objective)
            assert rel_error(analytic, numeric) < 1e-4, draw

    def test_entropy_term_finite_differences(self):
        rng = np.random.default_rng(3)
        net = random_net(3, 4, seed=1, hidden=6)
        traj = self.random_trajectory(net, rng, 4)
        feats, masks, acts = (np.array(v) for v in zip(*traj))
        w = rng.normal(size=4)
        _, grads = log_prob_and_grad(net, feats, masks, acts, w, entropy_coef=0.7)

        def objective():
            total = 0.0
            for f, m, a, wi in zip(feats, masks, acts, w):
                p = policy_forward(net, f, m)
                nz = p[p > 0]
                total += wi * np.log(p[a]) - 0.7 * np.sum(nz * np.log(nz))
            return total

        assert rel_error(flat_grad(grads), finite_difference(net, objective)) < 1e-4

    def test_batch_gradient_is_mean_of_singles(self):
        kg = random_toy_graph(seed=0)
        table = table_for(kg, n=4)
        net = random_net(4, kg.num_relations, seed=2, hidden=8, scale=0.3)
        ros = rollout_batch(net, kg, table, [0, 5, 9], 3, np.random.default_rng(0))
        adv = np.array([0.5, -1.0, 2.0])
        batch = flat_grad(batch_policy_grad(net, ros, adv))
        singles = sum(flat_grad(policy_grad(net, ro, a)) for ro, a in zip(ros, adv)) / 3
        np.testing.assert_allclose(batch, singles, rtol=1e-10, atol=1e-12)

    def test_batch_gradient_empty_rollouts(self):
        net = random_net(2, 1, seed=0)
        grads = batch_policy_grad(net, [Rollout(SemanticPath(0))], [1.0])
        assert np.all(flat_grad(grads) == 0)


class TestSerialization:
    def test_bit_exact(self, tmp_path):
        net = random_net(5, 7, seed=3, hidden=9)
        path = tmp_path / "policy.txt"
        net.save(path)
        again = PolicyNetwork.load(path)
        assert again.stop and again.num_relations == 7 and again.n == 5
        for (w1, b1), (w2, b2) in zip(net.layers, again.layers):
            np.testing.assert_array_equal(w1, w2)
            np.testing.assert_array_equal(b1, b2)
        assert path.read_text().splitlines()[0] == "3 11 9 7 stop"

    def test_without_stop(self):
        net = random_net(2, 3, seed=0, stop=False)
        again = PolicyNetwork.loads(net.dumps())
        assert not again.stop and again.num_outputs == 3

    def test_truncated_file(self):
        text = "\n".join(random_net(2, 3, seed=0).dumps().splitlines()[:-1])
        with pytest.raises(ValueError):
            PolicyNetwork.loads(text)
