import json

import numpy as np
import pytest

from haicollab.basemodel import BaseClassifier, predict_proba_batch
from haicollab.collab import (
    CollaborationMode,
    CollaborationModule,
    RecordedAnnotationProvider,
    TrainConfig,
    _batch_forward_backward,
    assemble_input,
    cost_vector,
    expected_cost,
    forward_train,
    infer,
    load_bundle,
    loss,
    mode_labels,
    save_bundle,
    shuffle_annotations,
    train,
    write_traces,
)
from haicollab.consensus import build_consensus_dataset
from haicollab.errors import InputError, ParameterError
from haicollab.numerics import Layer, MlpParameters, Rng, cross_entropy, one_hot
from haicollab.taskgen import MultiRaterDataset

from conftest import force_mode, small_task, tiny_model

M = 3
K = 3


class TestModes:
    def test_index_bijection(self):
        seen = set()
        for i in range(2 * M + 1):
            mode = CollaborationMode.from_index(i, M)
            assert mode.index(M) == i
            seen.add((mode.kind, mode.k))
        assert len(seen) == 2 * M + 1

    def test_costs_match_selection_positions(self):
        costs = [CollaborationMode.from_index(i, M).cost for i in range(2 * M + 1)]
        assert costs == [0, 1, 2, 3, 1, 2, 3]
        assert cost_vector(M).tolist() == [0, 1, 2, 3, 1, 2, 3]

    def test_labels(self):
        assert mode_labels(2) == ["ai_alone", "complement_1", "complement_2", "defer_1", "defer_2"]

    def test_out_of_range(self):
        with pytest.raises(ParameterError):
            CollaborationMode.from_index(8, M)
        with pytest.raises(ParameterError):
            CollaborationMode("complement", 4).index(M)


class TestAssembleInput:
    def setup_method(self):
        self.ai = np.array([0.7, 0.2, 0.1])
        self.ann = np.array([0, 1, 2])  # one-hots e0, e1, e2

    def _blocks(self, vec):
        return [vec[i * K : (i + 1) * K] for i in range(M + 1)]

    def test_ai_alone_layout(self):
        blocks = self._blocks(assemble_input(CollaborationMode("ai"), self.ai, self.ann))
        assert np.array_equal(blocks[0], self.ai)
        for b in blocks[1:]:
            assert np.array_equal(b, np.zeros(K))

    def test_full_complement_layout(self):
        vec = assemble_input(CollaborationMode("complement", 3), self.ai, self.ann)
        blocks = self._blocks(vec)
        assert np.array_equal(blocks[0], self.ai)
        assert np.array_equal(blocks[1], one_hot(0, K))
        assert np.array_equal(blocks[2], one_hot(1, K))
        assert np.array_equal(blocks[3], one_hot(2, K))

    def test_defer_one_layout(self):
        vec = assemble_input(CollaborationMode("defer", 1), self.ai, self.ann)
        blocks = self._blocks(vec)
        assert np.array_equal(blocks[0], np.zeros(K))
        assert np.array_equal(blocks[1], one_hot(0, K))
        assert np.array_equal(blocks[2], np.zeros(K))
        assert np.array_equal(blocks[3], np.zeros(K))

    def test_every_mode_zero_block_pattern(self):
        for i in range(2 * M + 1):
            mode = CollaborationMode.from_index(i, M)
            blocks = self._blocks(assemble_input(mode, self.ai, self.ann))
            assert np.array_equal(blocks[0], self.ai if mode.uses_ai else np.zeros(K))
            for u in range(1, M + 1):
                expected = one_hot(self.ann[u - 1], K) if u <= mode.k else np.zeros(K)
                assert np.array_equal(blocks[u], expected)

    def test_k_beyond_pool(self):
        with pytest.raises(ParameterError):
            assemble_input(CollaborationMode("defer", 4), self.ai, self.ann)


class TestExpectedCost:
    def test_one_hot_modes(self):
        assert expected_cost(one_hot(0, 7)) == 0.0
        assert expected_cost(one_hot(3, 7)) == 3.0  # complement with all 3 users
        assert expected_cost(one_hot(4, 7)) == 1.0  # defer to 1 user
        assert expected_cost(one_hot(6, 7)) == 3.0

    def test_uniform_hand_sum(self):
        # (0+1+2+3+1+2+3)/7
        val = expected_cost(np.full(7, 1 / 7))
        assert abs(val - 12 / 7) < 1e-12

    def test_cost_range_invariant(self):
        rng = Rng(1)
        for _ in range(100):
            p = rng.uniform(7)
            p /= p.sum()
            assert 0.0 <= expected_cost(p) <= M

    def test_validation(self):
        with pytest.raises(InputError):
            expected_cost(np.array([0.5, 0.5]))  # even length
        with pytest.raises(InputError):
            expected_cost(np.array([0.9, 0.0, 0.0]))  # not normalised


class TestLoss:
    def test_lambda_zero_is_plain_ce(self):
        final = np.array([0.5, 0.25, 0.25])
        sel = np.full(7, 1 / 7)
        assert loss(final, one_hot(0, K), sel, 0.0) == cross_entropy(one_hot(0, K), final)

    def test_perfect_ai_alone_is_zero(self):
        assert loss(one_hot(1, K), one_hot(1, K), one_hot(0, 7), 1.0) == 0.0

    def test_perfect_defer_two_costs_two(self):
        # defer(2) sits at index M+2 = 5; lambda=1 -> loss = 2
        val = loss(one_hot(1, K), one_hot(1, K), one_hot(5, 7), 1.0)
        assert val == 2.0


class TestShuffle:
    def test_singleton_identity(self):
        assert shuffle_annotations(np.array([2]), Rng(2)).tolist() == [2]

    def test_multiset_preserved(self):
        ann = np.array([0, 1, 1, 2, 0])
        out = shuffle_annotations(ann, Rng(3))
        assert sorted(out.tolist()) == sorted(ann.tolist())

    def test_uniform_over_permutations(self):
        rng = Rng(4)
        ann = np.array([10, 20, 30])
        counts = {}
        n = 10_000
        for _ in range(n):
            key = tuple(shuffle_annotations(ann, rng))
            counts[key] = counts.get(key, 0) + 1
        assert len(counts) == 6
        for c in counts.values():
            assert abs(c / n - 1 / 6) < 0.02


class TestForwardTrain:
    def test_forced_ai_mode_zeroes_user_blocks(self):
        model = force_mode(tiny_model(seed=5), 0)
        rng = Rng(6)
        res = forward_train(model, np.zeros(6), np.array([0, 1, 2]), rng)
        assert res.mode.kind == "ai"
        assert np.array_equal(res.collab_input[K:], np.zeros(M * K))
        assert np.array_equal(res.selection_hard, one_hot(0, 7))

    def test_deterministic_given_rng_state(self):
        model = tiny_model(seed=7)
        a = forward_train(model, np.ones(6), np.array([0, 1, 2]), Rng(8))
        b = forward_train(model, np.ones(6), np.array([0, 1, 2]), Rng(8))
        assert np.array_equal(a.final_probs, b.final_probs)
        assert a.mode == b.mode

    def test_annotation_count_checked(self):
        model = tiny_model(seed=9)
        with pytest.raises(InputError):
            forward_train(model, np.zeros(6), np.array([0, 1]), Rng(10))

    def test_selection_soft_on_simplex(self):
        model = tiny_model(seed=11)
        res = forward_train(model, np.ones(6) * 0.3, np.array([2, 0, 1]), Rng(12))
        assert abs(res.selection_soft.sum() - 1.0) < 1e-12
        assert np.all(res.selection_soft >= 0)
        assert res.selection_hard.sum() == 1.0


class TestGradients:
    def _setup(self, seed=13, b=6):
        model = tiny_model(seed=seed, dim=4, hidden=8)
        rng = Rng(seed + 1)
        x = rng.normal((b, 4))
        probs = predict_proba_batch(model.base, x)
        ann = rng.integers(b * M, K).reshape(b, M)
        y = rng.integers(b, K)
        noise = (rng.uniform2d(b, M), rng.gumbel((b, K)), rng.gumbel((b, 2 * M + 1)))
        return model, x, probs, ann, y, noise

    def _loss_only(self, model, x, probs, ann, y, lam, noise, hard):
        val, _, _ = _batch_forward_backward(
            model.selector, model.collaborator, x, probs, ann, y, lam, 0.5, K, None,
            noise=noise, hard=hard,
        )
        return val

    def _fd_max_rel(self, params, grads, eval_loss, step=1e-6, stride=5):
        worst = 0.0
        for li, layer in enumerate(params.layers):
            for name in ("weight", "bias"):
                arr = getattr(layer, name).reshape(-1)
                g = getattr(grads[li], name).reshape(-1)
                for j in range(0, arr.size, stride):
                    orig = arr[j]
                    arr[j] = orig + step
                    lp = eval_loss()
                    arr[j] = orig - step
                    lm = eval_loss()
                    arr[j] = orig
                    fd = (lp - lm) / (2 * step)
                    worst = max(worst, abs(fd - g[j]) / max(abs(fd), abs(g[j]), 1e-8))
        return worst

    def test_selector_gradient_relaxed_surrogate(self):
        # frozen Gumbel noise, soft-mixture forward: the function the
        # straight-through backward actually differentiates
        model, x, probs, ann, y, noise = self._setup()
        lam = 0.05
        _, sel_g, _ = _batch_forward_backward(
            model.selector, model.collaborator, x, probs, ann, y, lam, 0.5, K, None,
            noise=noise, hard=False,
        )
        rel = self._fd_max_rel(
            model.selector.params, sel_g,
            lambda: self._loss_only(model, x, probs, ann, y, lam, noise, hard=False),
        )
        assert rel < 1e-4, rel

    def test_collaborator_gradient_hard_path(self):
        # the hard forward is exactly differentiable in the collaborator
        model, x, probs, ann, y, noise = self._setup(seed=17)
        lam = 0.02
        _, _, col_g = _batch_forward_backward(
            model.selector, model.collaborator, x, probs, ann, y, lam, 0.5, K, None,
            noise=noise, hard=True,
        )
        rel = self._fd_max_rel(
            model.collaborator.params, col_g,
            lambda: self._loss_only(model, x, probs, ann, y, lam, noise, hard=True),
        )
        assert rel < 1e-4, rel

    def test_batch_loss_equals_mean_of_per_sample_losses(self):
        model, x, probs, ann, y, noise = self._setup(seed=19, b=5)
        lam = 0.1
        batch_loss = self._loss_only(model, x, probs, ann, y, lam, noise, hard=True)
        shuffle_keys, g_ai, g_sel = noise
        per_sample = []
        for i in range(5):
            res = forward_train(
                model, x[i], ann[i],
                shuffle_keys=shuffle_keys[i], gumbel_ai=g_ai[i], gumbel_sel=g_sel[i],
            )
            per_sample.append(loss(res.final_probs, one_hot(int(y[i]), K), res.selection_dist, lam))
        assert abs(batch_loss - np.mean(per_sample)) < 1e-12


def _behavioral_model():
    """Hand-built model: base strongly predicts class 0; collaborator follows
    the AI block when present (weight 10) else sums the user blocks."""
    base_params = MlpParameters([Layer(np.zeros((K, 4)), np.array([10.0, 0.0, 0.0]))])
    base = BaseClassifier(base_params, K, 4, "lnl_proxy")
    w = np.zeros((K, (M + 1) * K))
    for c in range(K):
        w[c, c] = 10.0  # AI block
        for u in range(1, M + 1):
            w[c, u * K + c] = 1.0
    collab_params = MlpParameters([Layer(w, np.zeros(K))])
    from haicollab.collab import CollabModel, SelectionModule
    from haicollab.numerics import init_mlp

    selector = SelectionModule(init_mlp((4, 4, 2 * M + 1), Rng(31)), 5.0)
    return CollabModel(base, selector, CollaborationModule(collab_params), M, K)


class CountingProvider:
    def __init__(self, labels):
        self.labels = labels
        self.requests = 0
        self.calls = 0

    def request(self, sample_id, k):
        self.calls += 1
        self.requests += k
        return np.asarray(self.labels[:k])


class ExplodingProvider:
    def request(self, sample_id, k):
        raise AssertionError("provider must not be called for AI-alone")


class TestInfer:
    def test_ai_alone_never_requests_labels(self):
        model = force_mode(_behavioral_model(), 0)
        trace = infer(model, np.zeros(4), ExplodingProvider(), sample_id=7)
        assert trace.mode.kind == "ai"
        assert trace.labels_consumed == 0
        assert trace.system_prediction == 0  # AI argmax
        assert trace.human_labels == []

    def test_defer_three_requests_exactly_three_and_ignores_ai(self):
        model = force_mode(_behavioral_model(), M + 3)  # defer(3)
        provider = CountingProvider([1, 1, 1])
        trace = infer(model, np.zeros(4), provider, sample_id=8)
        assert trace.mode == CollaborationMode("defer", 3)
        assert provider.requests == 3
        assert provider.calls == 1
        assert trace.labels_consumed == 3
        # AI says 0 loudly, but the AI block is zeroed in defer: users win
        assert trace.system_prediction == 1

    def test_complement_uses_ai_block(self):
        model = force_mode(_behavioral_model(), 3)  # complement(3)
        provider = CountingProvider([1, 1, 1])
        trace = infer(model, np.zeros(4), provider, sample_id=9)
        # AI weight 10 vs three user votes of 1: AI wins
        assert trace.system_prediction == 0
        assert trace.labels_consumed == 3

    def test_selection_probs_are_noiseless_distribution(self):
        model = _behavioral_model()
        t1 = infer(model, np.ones(4), CountingProvider([0, 0, 0]), 1)
        t2 = infer(model, np.ones(4), CountingProvider([0, 0, 0]), 1)
        assert np.array_equal(t1.selection_probs, t2.selection_probs)
        assert abs(t1.selection_probs.sum() - 1.0) < 1e-12

    def test_recorded_provider_shuffles_and_counts(self):
        mr = small_task(seed=21, n_train=50)[0]
        provider = RecordedAnnotationProvider(mr, Rng(22))
        got = provider.request(int(mr.ids[0]), 2)
        assert got.shape == (2,)
        assert provider.requests == 2
        assert all(v in mr.annotations[0] for v in got)


class TestTraining:
    def _consensus(self, seed=23, n=400):
        train_mr, test_mr = small_task(seed=seed, n_train=n, n_test=100)
        probs = one_hot(train_mr.true_labels, K)  # stand-in for a perfect base
        return build_consensus_dataset(train_mr, probs), train_mr, test_mr

    def test_deterministic_end_to_end(self):
        cons, train_mr, _ = self._consensus()
        base = BaseClassifier(
            MlpParameters([Layer(np.zeros((K, 6)), np.zeros(K))]), K, 6, "lnl_proxy"
        )
        cfg = TrainConfig(lambda_cost=0.01, epochs=4, batch_size=128, seed=5)
        m1 = train(cons, base, cfg)
        m2 = train(cons, base, cfg)
        for a, b in zip(
            m1.selector.params.layers + m1.collaborator.params.layers,
            m2.selector.params.layers + m2.collaborator.params.layers,
        ):
            assert np.array_equal(a.weight, b.weight)
            assert np.array_equal(a.bias, b.bias)

    def test_base_params_frozen(self):
        cons, _, _ = self._consensus(seed=24)
        rng = Rng(25)
        from haicollab.numerics import init_mlp

        base = BaseClassifier(init_mlp((6, 8, K), rng), K, 6, "lnl_proxy")
        before = [l.weight.copy() for l in base.params.layers]
        train(cons, base, TrainConfig(lambda_cost=0.0, epochs=3, batch_size=128, seed=1))
        for w0, layer in zip(before, base.params.layers):
            assert np.array_equal(w0, layer.weight)

    def test_empty_dataset_rejected(self):
        cons, _, _ = self._consensus(seed=26)
        empty = type(cons)(
            ids=cons.ids[:0], features=cons.features[:0], labels=cons.labels[:0],
            alphas=cons.alphas[:0], annotations=cons.annotations[:0],
            num_classes=cons.num_classes, true_labels=None,
        )
        base = BaseClassifier(
            MlpParameters([Layer(np.zeros((K, 6)), np.zeros(K))]), K, 6, "lnl_proxy"
        )
        with pytest.raises(InputError):
            train(empty, base, TrainConfig(epochs=1))


class TestPermutationInvariance:
    def test_final_label_distribution_chi2(self):
        # initial annotation order must not shift the output distribution
        model = tiny_model(seed=27)
        x = Rng(28).normal(6)
        ann_a = np.array([0, 1, 2])
        ann_b = np.array([2, 1, 0])
        rng = Rng(29)
        n = 10_000
        counts = np.zeros((2, K))
        for row, ann in enumerate((ann_a, ann_b)):
            for _ in range(n):
                res = forward_train(model, x, ann, rng)
                counts[row, int(np.argmax(res.final_probs))] += 1
        col = counts.sum(axis=0)
        keep = col > 0
        expected = np.outer(counts.sum(axis=1), col[keep]) / counts.sum()
        stat = float((((counts[:, keep] - expected) ** 2) / expected).sum())
        dof = int(keep.sum()) - 1
        critical = {1: 10.828, 2: 13.816}[dof]  # chi-square 0.999 quantile
        assert stat < critical, stat


class TestBundleIo:
    def test_round_trip(self, tmp_path):
        cons_src, train_mr, test_mr = small_task(seed=30, n_train=300), None, None
        train_mr, test_mr = cons_src
        probs = one_hot(train_mr.true_labels, K)
        cons = build_consensus_dataset(train_mr, probs)
        base = BaseClassifier(
            MlpParameters([Layer(np.eye(K, 6), np.zeros(K))]), K, 6, "lnl_proxy"
        )
        model = train(cons, base, TrainConfig(lambda_cost=0.01, epochs=2, batch_size=128, seed=3))
        save_bundle(tmp_path / "b", model, {"lambda": 0.01, "seed": 3})
        back, cfg = load_bundle(tmp_path / "b")
        assert cfg["lambda"] == 0.01
        assert back.num_users == M
        x = test_mr.features[0]
        p1 = infer(model, x, RecordedAnnotationProvider(test_mr, Rng(1)), int(test_mr.ids[0]))
        p2 = infer(back, x, RecordedAnnotationProvider(test_mr, Rng(1)), int(test_mr.ids[0]))
        assert p1.system_prediction == p2.system_prediction
        assert np.array_equal(p1.selection_probs, p2.selection_probs)

    def test_trace_export_schema(self, tmp_path):
        model = force_mode(_behavioral_model(), 3)
        trace = infer(model, np.zeros(4), CountingProvider([1, 0, 1]), sample_id=42)
        trace.true_label = 1
        write_traces(tmp_path / "t.jsonl", [trace])
        rec = json.loads((tmp_path / "t.jsonl").read_text().splitlines()[0])
        assert set(rec) == {
            "id", "human_labels", "ai_prediction", "selection_probs",
            "mode", "system_prediction", "true_label",
        }
        assert rec["id"] == 42
        assert rec["mode"] == "complement_3"
        assert len(rec["selection_probs"]) == 7
        assert rec["human_labels"] == [1, 0, 1]
