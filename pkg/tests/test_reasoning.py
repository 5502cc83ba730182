"""Tests for the predict-and-verify reasoning stack.

The heavy lifting is an independent float64 reimplementation of the whole
forward pass (loops and plain numpy), checked against the module graph with
frozen tolerances.  The rest pins the published behaviours: exact residual
identity at zero init, permutation equivariance, loss anchors, tie-breaking.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cvrlab.autodiff import ops
from cvrlab.autodiff.tensor import ShapeError, Tensor
from cvrlab.reasoning import (
    PanelScores,
    PooledScoreHead,
    ReasoningConfig,
    ReasoningLevel,
    ReasoningStack,
    bce_loss,
    bce_targets,
    prediction_error,
    total_loss,
)
from cvrlab.seeds import Stream

LN2 = 0.6931471805599453
# frozen by hand: mean BCE of logits [2, -1, -1, -1] against outlier slot 0
BCE_CONFIDENT = 0.2666782683994103


def randomize(module, seed, scale=0.25):
    rng = np.random.default_rng(seed)
    for p in module.named_parameters().values():
        p.data = (scale * rng.standard_normal(p.data.shape)).astype(np.float32)


def make_slots(seed, n=2, c=6, hw=4):
    rng = np.random.default_rng(seed)
    return [Tensor(rng.standard_normal((n, c, hw, hw)).astype(np.float32)) for _ in range(4)]


# ---------------------------------------------------------------------------
# independent reference implementation (float64, explicit loops over taps)

def ref_conv(x, w, b, pad):
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    n, cin, height, width = x.shape
    cout, _, k, _ = w.shape
    oh, ow = height - k + 1, width - k + 1
    out = np.zeros((n, cout, oh, ow))
    for i in range(oh):
        for j in range(ow):
            patch = x[:, :, i:i + k, j:j + k]
            out[:, :, i, j] = np.einsum("ncij,ocij->no", patch, w)
    return out + b[None, :, None, None]


def ref_predictor(stacked, weights, prefix):
    h = ref_conv(stacked, weights[prefix + "mix.w"], weights[prefix + "mix.b"], 0)
    h = np.maximum(ref_conv(h, weights[prefix + "conv_a.w"], weights[prefix + "conv_a.b"], 1), 0.0)
    return ref_conv(h, weights[prefix + "conv_b.w"], weights[prefix + "conv_b.b"], 1)


def ref_predict_target(contexts, weights, prefix, mode, eval_permutation):
    import itertools
    preds3 = None
    if mode in ("three", "both"):
        if eval_permutation == "canonical":
            orders = [(0, 1, 2)]
        else:
            orders = list(itertools.permutations(range(3)))
        rows = [ref_predictor(np.concatenate([contexts[p] for p in o], axis=1),
                              weights, prefix + "predict3.") for o in orders]
        preds3 = np.mean(rows, axis=0)
    preds2 = None
    if mode in ("two", "both"):
        orderings = []
        for pair in ((0, 1), (0, 2), (1, 2)):
            if eval_permutation == "canonical":
                orderings.append(pair)
            else:
                orderings.extend([pair, pair[::-1]])
        rows = [ref_predictor(np.concatenate([contexts[a], contexts[b]], axis=1),
                              weights, prefix + "predict2.") for a, b in orderings]
        preds2 = np.mean(rows, axis=0)
    if mode == "three":
        return preds3
    if mode == "two":
        return preds2
    return 0.5 * (preds3 + preds2)


def ref_refine(group, target, error, weights, prefix):
    contexts = [group[s] for s in range(4) if s != target]
    ctx_mean = (contexts[0] + contexts[1] + contexts[2]) / 3.0
    summary = np.maximum(ref_conv(np.concatenate([ctx_mean, error], axis=1),
                                  weights[prefix + "mix.w"], weights[prefix + "mix.b"], 1), 0.0)
    out = []
    for s in range(4):
        slot = error if s == target else group[s]
        h = np.maximum(ref_conv(np.concatenate([slot, summary], axis=1),
                                weights[prefix + "conv_a.w"], weights[prefix + "conv_a.b"], 0), 0.0)
        delta = ref_conv(h, weights[prefix + "conv_b.w"], weights[prefix + "conv_b.b"], 0)
        out.append(group[s] + delta)
    return out


def ref_logits(slots, weights, num_blocks, mode, eval_permutation):
    chains = [[s.copy() for s in slots] for _ in range(4)]
    for j in range(num_blocks):
        level = f"level{j}."
        errors = []
        for t in range(4):
            contexts = [chains[t][s] for s in range(4) if s != t]
            predicted = ref_predict_target(contexts, weights, level, mode, eval_permutation)
            errors.append(chains[t][t] - predicted)
        chains = [ref_refine(chains[t], t, errors[t], weights, level + "interact.")
                  for t in range(4)]
    cols = []
    for t in range(4):
        pooled = chains[t][t].mean(axis=(2, 3))
        h = np.maximum(pooled @ weights["head_fc1.w"] + weights["head_fc1.b"], 0.0)
        cols.append(h @ weights["head_fc2.w"] + weights["head_fc2.b"])
    return np.concatenate(cols, axis=1)


def float_weights(module):
    return {k: v.data.astype(np.float64) for k, v in module.named_parameters().items()}


# ---------------------------------------------------------------------------


class TestAgainstReference:
    @pytest.mark.parametrize("mode", ["three", "two", "both"])
    def test_predict_target_matches_reference(self, mode):
        level = ReasoningLevel(6, ReasoningConfig(context_mode=mode), Stream(21))
        randomize(level, 90)
        contexts = make_slots(31)[:3]
        got = level.predict_target(contexts).data
        want = ref_predict_target([c.data.astype(np.float64) for c in contexts],
                                  float_weights(level), "", mode, "average-all")
        assert np.max(np.abs(got - want)) < 1e-5

    def test_refine_matches_reference(self):
        level = ReasoningLevel(6, ReasoningConfig(), Stream(22))
        randomize(level, 91)
        slots = make_slots(32)
        error = Tensor(np.random.default_rng(33).standard_normal((2, 6, 4, 4)).astype(np.float32))
        got = level.interact.refine(slots, 2, error)
        want = ref_refine([s.data.astype(np.float64) for s in slots], 2,
                          error.data.astype(np.float64), float_weights(level), "interact.")
        for g, w in zip(got, want):
            assert np.max(np.abs(g.data - w)) < 1e-5

    @pytest.mark.parametrize("mode,eval_perm", [("both", "average-all"),
                                                ("three", "canonical"),
                                                ("two", "average-all")])
    def test_full_stack_matches_reference(self, mode, eval_perm):
        cfg = ReasoningConfig(num_blocks=2, context_mode=mode, eval_permutation=eval_perm)
        stack = ReasoningStack(6, cfg, Stream(23))
        randomize(stack, 92)
        slots = make_slots(34)
        got = stack(slots).data
        want = ref_logits([s.data.astype(np.float64) for s in slots],
                          float_weights(stack), 2, mode, eval_perm)
        assert np.max(np.abs(got - want)) < 1e-4


class TestResidualIdentity:
    def test_zero_final_convs_leave_group_untouched(self):
        level = ReasoningLevel(6, ReasoningConfig(), Stream(24))
        randomize(level, 93)
        for name in ("interact.conv_b.w", "interact.conv_b.b"):
            p = level.named_parameters()[name]
            p.data = np.zeros_like(p.data)
        slots = make_slots(35)
        error = Tensor(np.ones((2, 6, 4, 4), dtype=np.float32))
        out = level.interact.refine(slots, 1, error)
        for before, after in zip(slots, out):
            assert np.array_equal(before.data, after.data)

    def test_fresh_stack_scores_from_pooled_features_only(self):
        # zero-initialized refinement branches and head: logits are exactly 0
        stack = ReasoningStack(6, ReasoningConfig(), Stream(25))
        slots = make_slots(36)
        logits = stack(slots)
        assert np.array_equal(logits.data, np.zeros((2, 4), dtype=np.float32))
        assert np.array_equal(PanelScores(logits.data).predictions, np.zeros(2, dtype=np.int64))

    def test_zero_branches_reduce_to_head_on_pooled_features(self):
        stack = ReasoningStack(6, ReasoningConfig(num_blocks=3), Stream(26))
        randomize(stack, 94)
        params = stack.named_parameters()
        for name, p in params.items():
            if "interact.conv_b" in name:
                p.data = np.zeros_like(p.data)
        slots = make_slots(37)
        logits = stack(slots).data
        w1, b1 = params["head_fc1.w"].data, params["head_fc1.b"].data
        w2, b2 = params["head_fc2.w"].data, params["head_fc2.b"].data
        for t in range(4):
            pooled = slots[t].data.mean(axis=(2, 3))
            want = np.maximum(pooled @ w1 + b1, 0.0) @ w2 + b2
            np.testing.assert_allclose(logits[:, t:t + 1], want, atol=1e-6)


class TestPredictTarget:
    def test_zeroed_predictor_output_is_zero(self):
        level = ReasoningLevel(6, ReasoningConfig(), Stream(27))
        randomize(level, 95)
        for name, p in level.named_parameters().items():
            if "predict" in name and "conv_b" in name:
                p.data = np.zeros_like(p.data)
        pred = level.predict_target(make_slots(38)[:3])
        assert np.array_equal(pred.data, np.zeros_like(pred.data))

    def test_average_all_is_order_invariant(self):
        level = ReasoningLevel(6, ReasoningConfig(context_mode="both"), Stream(28))
        randomize(level, 96)
        contexts = make_slots(39)[:3]
        base = level.predict_target(contexts).data
        for order in [(1, 0, 2), (2, 1, 0), (1, 2, 0)]:
            shuffled = level.predict_target([contexts[i] for i in order]).data
            assert np.max(np.abs(shuffled - base)) < 1e-6

    def test_canonical_is_order_sensitive(self):
        cfg = ReasoningConfig(context_mode="three", eval_permutation="canonical")
        level = ReasoningLevel(6, cfg, Stream(29))
        randomize(level, 97)
        contexts = make_slots(40)[:3]
        a = level.predict_target(contexts).data
        b = level.predict_target([contexts[1], contexts[0], contexts[2]]).data
        assert np.max(np.abs(a - b)) > 1e-4

    def test_wrong_context_count_rejected(self):
        level = ReasoningLevel(6, ReasoningConfig(), Stream(30))
        slots = make_slots(41)
        with pytest.raises(ShapeError):
            level.predict_target(slots[:2])
        with pytest.raises(ShapeError):
            level.predict_target(slots)
        with pytest.raises(ShapeError):
            level.predict3(Tensor(np.zeros((2, 12, 4, 4), dtype=np.float32)))

    def test_identity_tap_wiring_exposes_the_error_slot(self):
        # with predictors zeroed, the error equals the raw target map; an
        # interaction net wired as an identity on the slot channels then
        # writes exactly that map back as the refinement
        level = ReasoningLevel(4, ReasoningConfig(), Stream(31))
        randomize(level, 98)
        params = level.named_parameters()
        for name, p in params.items():
            if "predict" in name and "conv_b" in name:
                p.data = np.zeros_like(p.data)
        wa = np.zeros((4, 8, 1, 1), dtype=np.float32)
        for c in range(4):
            wa[c, c, 0, 0] = 1.0  # pass the slot through, ignore the summary
        wb = np.zeros((4, 4, 1, 1), dtype=np.float32)
        for c in range(4):
            wb[c, c, 0, 0] = 1.0
        params["interact.conv_a.w"].data = wa
        params["interact.conv_a.b"].data = np.zeros(4, dtype=np.float32)
        params["interact.conv_b.w"].data = wb
        params["interact.conv_b.b"].data = np.zeros(4, dtype=np.float32)

        rng = np.random.default_rng(42)
        slots = [Tensor(rng.uniform(0.0, 1.0, (2, 4, 4, 4)).astype(np.float32))
                 for _ in range(4)]
        t = 3
        predicted = level.predict_target([slots[s] for s in range(4) if s != t])
        error = prediction_error(slots[t], predicted)
        assert np.array_equal(error.data, slots[t].data)
        refined = level.interact.refine(slots, t, error)
        assert np.array_equal(refined[t].data, 2.0 * slots[t].data)

    def test_train_shuffle_is_seeded(self):
        stack = ReasoningStack(6, ReasoningConfig(), Stream(32))
        randomize(stack, 99)
        slots = make_slots(43)
        a = stack(slots, train=True, stream=Stream(7)).data
        b = stack(slots, train=True, stream=Stream(7)).data
        c = stack(slots, train=True, stream=Stream(8)).data
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_train_requires_stream(self):
        stack = ReasoningStack(6, ReasoningConfig(), Stream(33))
        with pytest.raises(ValueError):
            stack(make_slots(44), train=True)


class TestStackBehaviour:
    def test_logits_permute_with_the_panel(self):
        stack = ReasoningStack(6, ReasoningConfig(), Stream(34))
        randomize(stack, 100)
        slots = make_slots(45)
        base = stack(slots).data
        for perm in [(1, 0, 3, 2), (3, 2, 1, 0), (2, 0, 3, 1)]:
            permuted = stack([slots[p] for p in perm]).data
            assert np.max(np.abs(permuted - base[:, list(perm)])) < 1e-5

    def test_depth_changes_the_answer(self):
        deep = ReasoningStack(6, ReasoningConfig(num_blocks=3), Stream(35))
        randomize(deep, 101)
        shallow = ReasoningStack(6, ReasoningConfig(num_blocks=1), Stream(36))
        deep_params = deep.named_parameters()
        for name, p in shallow.named_parameters().items():
            p.data = deep_params[name].data.copy()
        slots = make_slots(46)
        assert np.max(np.abs(deep(slots).data - shallow(slots).data)) > 1e-4

    def test_gradient_reaches_every_parameter(self):
        stack = ReasoningStack(6, ReasoningConfig(), Stream(37))
        randomize(stack, 102)
        loss = bce_loss(stack(make_slots(47), train=True, stream=Stream(9)), np.array([1, 3]))
        loss.backward()
        for name, p in stack.named_parameters().items():
            assert p.grad is not None and np.any(p.grad != 0), name

    def test_error_norm_collection(self):
        stack = ReasoningStack(6, ReasoningConfig(), Stream(38))
        randomize(stack, 103)
        params = stack.named_parameters()
        for name, p in params.items():
            if "predict" in name and "conv_b" in name:
                p.data = np.zeros_like(p.data)
        slots = make_slots(48)
        _, norms = stack(slots, collect_errors=True)
        assert norms.shape == (2, 4)
        # zeroed predictors: the depth-1 error is the raw feature map
        for t in range(4):
            want = np.sqrt((slots[t].data.astype(np.float64) ** 2).sum(axis=(1, 2, 3)))
            np.testing.assert_allclose(norms[:, t], want, rtol=1e-6)

    def test_input_validation(self):
        stack = ReasoningStack(6, ReasoningConfig(), Stream(39))
        slots = make_slots(49)
        with pytest.raises(ShapeError):
            stack(slots[:3])
        with pytest.raises(ShapeError):
            stack([slots[0], slots[1], slots[2], Tensor(np.zeros((2, 6, 5, 5), np.float32))])
        with pytest.raises(ShapeError):
            stack([Tensor(np.zeros((2, 5, 4, 4), np.float32)) for _ in range(4)])

    def test_pooled_baseline_head(self):
        head = PooledScoreHead(6, Stream(40))
        slots = make_slots(50)
        out = head(slots)
        assert out.shape == (2, 4)
        assert np.array_equal(out.data, np.zeros((2, 4), dtype=np.float32))
        randomize(head, 104)
        assert np.any(head(slots).data != 0)


class TestScoresAndLosses:
    def test_argmax_ties_break_to_the_lowest_slot(self):
        scores = PanelScores(np.array([[1.0, 1.0, 0.0, 1.0],
                                       [0.0, 3.0, 3.0, 1.0],
                                       [-1.0, -1.0, -1.0, -1.0]]))
        assert scores.predictions.tolist() == [0, 1, 0]

    def test_probabilities_are_sigmoids(self):
        scores = PanelScores(np.array([[0.0, 50.0, -50.0, 2.0]]))
        p = scores.probabilities
        assert abs(p[0, 0] - 0.5) < 1e-12
        assert p[0, 1] > 1.0 - 1e-12 and p[0, 2] < 1e-12
        assert abs(p[0, 3] - 1.0 / (1.0 + np.exp(-2.0))) < 1e-12

    def test_bce_of_zero_logits_is_ln2(self):
        logits = Tensor(np.zeros((3, 4), dtype=np.float32))
        loss = bce_loss(logits, np.array([0, 1, 3]))
        assert abs(float(loss.data) - LN2) < 1e-6

    def test_bce_confident_example(self):
        logits = Tensor(np.array([[2.0, -1.0, -1.0, -1.0]], dtype=np.float32))
        loss = bce_loss(logits, np.array([0]))
        assert abs(float(loss.data) - BCE_CONFIDENT) < 1e-6

    def test_bce_vanishes_with_extreme_confidence(self):
        logits = Tensor(np.array([[50.0, -50.0, -50.0, -50.0]], dtype=np.float32))
        loss = bce_loss(logits, np.array([0]))
        assert 0.0 <= float(loss.data) < 1e-8

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(-50.0, 50.0, allow_nan=False), min_size=4, max_size=4),
           st.integers(0, 3))
    def test_bce_finite_for_bounded_logits(self, row, outlier):
        logits = Tensor(np.array([row], dtype=np.float32))
        logits.requires_grad = True
        loss = bce_loss(logits, np.array([outlier]))
        assert np.isfinite(loss.data)
        loss.backward()
        assert np.all(np.isfinite(logits.grad))

    def test_soft_targets(self):
        hard = bce_targets(np.array([2]))
        assert hard.tolist() == [[0.0, 0.0, 1.0, 0.0]]
        soft = bce_targets(np.array([2]), soft=True)
        sig = 1.0 / (1.0 + np.exp(-1.0))
        np.testing.assert_allclose(soft[0], [0.5, 0.5, sig, 0.5], rtol=1e-6)
        loss = bce_loss(Tensor(np.zeros((1, 4), dtype=np.float32)), np.array([2]), soft=True)
        assert abs(float(loss.data) - LN2) < 1e-6  # zero logits: ln 2 either way

    def test_total_loss_weighting(self):
        task = Tensor(np.asarray(LN2, dtype=np.float32))
        contrast = Tensor(np.asarray(LN2, dtype=np.float32))
        assert total_loss(task, contrast, 0.0) is task
        assert total_loss(task, None, 0.5) is task
        combined = total_loss(task, contrast, 0.1)
        assert abs(float(combined.data) - 1.1 * LN2) < 1e-6
        with pytest.raises(ValueError):
            total_loss(task, contrast, -0.1)

    def test_combined_gradient_is_the_weighted_sum(self):
        def build():
            x = Tensor(np.array([[0.5, -0.3, 0.2, 0.1]], dtype=np.float32))
            x.requires_grad = True
            logits = ops.mul(x, Tensor(np.asarray(2.0, dtype=np.float32)))
            task = bce_loss(logits, np.array([0]))
            contrast = ops.mean(ops.mul(logits, logits))
            return x, task, contrast

        x, task, _ = build()
        task.backward()
        g_task = x.grad.copy()
        x, _, contrast = build()
        contrast.backward()
        g_contrast = x.grad.copy()
        x, task, contrast = build()
        total_loss(task, contrast, 0.1).backward()
        np.testing.assert_allclose(x.grad, g_task + 0.1 * g_contrast, atol=1e-7)


class TestConfig:
    def test_defaults(self):
        cfg = ReasoningConfig()
        assert (cfg.num_blocks, cfg.context_mode, cfg.eval_permutation,
                cfg.contrast_weight) == (3, "both", "average-all", 0.1)

    @pytest.mark.parametrize("kwargs", [
        {"num_blocks": 0},
        {"context_mode": "four"},
        {"eval_permutation": "sorted"},
        {"contrast_weight": -0.01},
    ])
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ValueError):
            ReasoningConfig(**kwargs)

    def test_prediction_error_shape_check(self):
        a = Tensor(np.zeros((1, 2, 3, 3), dtype=np.float32))
        b = Tensor(np.zeros((1, 2, 4, 4), dtype=np.float32))
        with pytest.raises(ShapeError):
            prediction_error(a, b)
