"""Model-level checks: trace shapes and identities, the two cross-entropy
objectives against hand values and the float64 mirror, end-to-end gradient
agreement with finite differences, and checkpoint round-trips."""

import numpy as np
import pytest

from avasdlab import autodiff as ad
from avasdlab.autodiff import ShapeError, Tensor
from avasdlab.model import (ForwardTrace, ModelConfig, frame_cross_entropy, forward,
                            init_params, load_checkpoint, multi_head_cross_entropy,
                            save_checkpoint)

import reference as ref


def rng(seed=0):
    return np.random.Generator(np.random.PCG64(seed))


def small_config(seed=0, embed=8, cross=True):
    return ModelConfig(d_audio=6, d_visual=10, embed=embed, cross_attention=cross,
                       audio_input_gain=1.0, visual_input_gain=1.0, seed=seed)


def random_clip(cfg, k, seed=0):
    r = rng(seed)
    xa = r.standard_normal((k, cfg.d_audio)).astype(np.float32)
    xv = r.standard_normal((k, cfg.d_visual)).astype(np.float32)
    labels = (r.random(k) < 0.5).astype(np.int8)
    if labels.sum() == 0:
        labels[0] = 1
    return xa, xv, labels


class TestForward:
    def test_trace_shapes(self):
        cfg = small_config(embed=8)
        params = init_params(cfg)
        xa, xv, _ = random_clip(cfg, 5, seed=1)
        tr = forward(params.as_tensors(), xa, xv)
        assert tr.e_a.shape == (5, 8) and tr.e_v.shape == (5, 8)
        assert tr.z_a.shape == (5, 8) and tr.z_v.shape == (5, 8)
        assert tr.s_av.shape == (5,) and tr.s_a.shape == (5,) and tr.s_v.shape == (5,)

    def test_zero_weight_heads_emit_sigmoid_of_bias(self):
        cfg = small_config()
        params = init_params(cfg)
        for name, bias in (("head_av_w", "head_av_b"), ("head_a_w", "head_a_b"),
                           ("head_v_w", "head_v_b")):
            params.values[name] = np.zeros_like(params.values[name])
            params.values[bias] = np.full_like(params.values[bias], 0.3)
        xa, xv, _ = random_clip(cfg, 4, seed=2)
        tr = forward(params.as_tensors(), xa, xv)
        want = ref.sigmoid64(0.3)
        for s in (tr.s_av.data, tr.s_a.data, tr.s_v.data):
            np.testing.assert_allclose(s, want, rtol=1e-6)

    def test_single_frame_attention_is_identity_mixing(self):
        # with K=1 every softmax row is [1.0]; the score depends only on
        # that frame, so two different single frames score independently
        cfg = small_config()
        params = init_params(cfg)
        xa, xv, _ = random_clip(cfg, 2, seed=3)
        s0 = forward(params.as_tensors(), xa[:1], xv[:1]).s_av.data
        s1 = forward(params.as_tensors(), xa[1:], xv[1:]).s_av.data
        both = forward(params.as_tensors(), xa, xv).s_av.data
        assert s0[0] != s1[0]
        # scores of isolated frames are deterministic reruns
        np.testing.assert_array_equal(s0, forward(params.as_tensors(), xa[:1], xv[:1]).s_av.data)
        assert both.shape == (2,)

    def test_frame_count_mismatch_rejected(self):
        cfg = small_config()
        params = init_params(cfg)
        xa, xv, _ = random_clip(cfg, 4)
        with pytest.raises(ShapeError, match="frame counts differ"):
            forward(params.as_tensors(), xa[:3], xv)

    def test_scores_within_unit_interval_for_wild_inputs(self):
        cfg = small_config()
        params = init_params(cfg)
        r = rng(9)
        xa = (r.standard_normal((6, cfg.d_audio)) * 1e3).astype(np.float32)
        xv = (r.standard_normal((6, cfg.d_visual)) * 1e3).astype(np.float32)
        tr = forward(params.as_tensors(), xa, xv)
        for s in (tr.s_av.data, tr.s_a.data, tr.s_v.data):
            assert np.all(s >= 0.0) and np.all(s <= 1.0)

    def test_encoder_embeddings_permutation_equivariant(self):
        cfg = small_config()
        params = init_params(cfg)
        xa, xv, _ = random_clip(cfg, 7, seed=4)
        perm = rng(5).permutation(7)
        tr = forward(params.as_tensors(), xa, xv)
        tr_p = forward(params.as_tensors(), xa[perm], xv[perm])
        np.testing.assert_array_equal(tr.e_a.data[perm], tr_p.e_a.data)
        np.testing.assert_array_equal(tr.e_v.data[perm], tr_p.e_v.data)

    def test_forward_matches_float64_mirror(self):
        cfg = small_config()
        params = init_params(cfg)
        xa, xv, _ = random_clip(cfg, 6, seed=6)
        tr = forward(params.as_tensors(), xa, xv)
        mirror = ref.model_forward64(params.values, cfg, xa, xv)
        for name, got in (("s_av", tr.s_av), ("s_a", tr.s_a), ("s_v", tr.s_v),
                          ("z_a", tr.z_a), ("z_v", tr.z_v)):
            assert ref.rel_error(got.data, mirror[name], floor=1e-3) < 1e-5

    def test_no_cross_attention_variant(self):
        cfg = small_config(cross=False)
        params = init_params(cfg)
        assert "cross_q_a" not in params.values
        xa, xv, _ = random_clip(cfg, 4, seed=7)
        tr = forward(params.as_tensors(), xa, xv)
        np.testing.assert_array_equal(tr.e_a.data, tr.z_a.data)

    def test_gradient_reaches_every_parameter(self):
        cfg = small_config()
        params = init_params(cfg)
        touched = {name: False for name in params.values}
        for seed in range(3):
            xa, xv, labels = random_clip(cfg, 8, seed=10 + seed)
            pt = params.as_tensors(requires_grad=True)
            multi_head_cross_entropy(forward(pt, xa, xv), labels).backward()
            for name in touched:
                g = getattr(pt, name).grad
                if g is not None and np.any(g != 0):
                    touched[name] = True
        dead = [n for n, ok in touched.items() if not ok]
        assert not dead, f"parameters with no gradient on any batch: {dead}"


class TestFrameCrossEntropy:
    def test_symmetric_half_scores(self):
        loss = frame_cross_entropy(Tensor([0.5, 0.5]), [1, 0])
        assert loss.item() == pytest.approx(np.log(2), rel=1e-5)

    def test_perfect_scores_give_negligible_loss(self):
        loss = frame_cross_entropy(Tensor([1.0, 0.0, 1.0]), [1, 0, 1])
        assert loss.item() < 1e-6

    def test_against_direct_formula(self):
        scores = [0.9, 0.2, 0.7]
        labels = [1, 0, 1]
        got = frame_cross_entropy(Tensor(scores), labels).item()
        assert got == pytest.approx(ref.frame_ce64(scores, labels), rel=1e-5)
        # frozen from the float64 oracle: -(ln .9 + ln .8 + ln .7)/3
        assert got == pytest.approx(0.22839300363692283, rel=1e-5)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            frame_cross_entropy(Tensor([0.5, 0.5]), [1, 0, 1])

    def test_gradient_matches_finite_differences(self):
        r = rng(21)
        scores = r.uniform(0.05, 0.95, size=9).astype(np.float32)
        labels = (r.random(9) < 0.5).astype(np.int8)
        t = Tensor(scores, requires_grad=True)
        frame_cross_entropy(t, labels).backward()
        fd = ref.central_difference(lambda x: ref.frame_ce64(x, labels),
                                    scores.astype(np.float64))
        assert ref.rel_error(t.grad, fd, floor=1e-3) < 1e-4


def fabricated_trace(s_av, s_a, s_v):
    k = len(s_av)
    dummy = Tensor(np.zeros((k, 2), dtype=np.float32))
    return ForwardTrace(e_a=dummy, e_v=dummy, z_a=dummy, z_v=dummy,
                        s_av=Tensor(s_av), s_a=Tensor(s_a), s_v=Tensor(s_v))


class TestMultiHeadLoss:
    def test_identical_heads_scale_by_1p8(self):
        scores = [0.8, 0.3, 0.6]
        labels = [1, 0, 1]
        tr = fabricated_trace(scores, scores, scores)
        single = frame_cross_entropy(Tensor(scores), labels).item()
        assert multi_head_cross_entropy(tr, labels).item() == pytest.approx(1.8 * single, rel=1e-5)

    def test_perfect_aux_heads_leave_fused_loss(self):
        labels = [1, 0]
        tr = fabricated_trace([0.7, 0.4], [1.0, 0.0], [1.0, 0.0])
        fused_only = frame_cross_entropy(Tensor([0.7, 0.4]), labels).item()
        assert multi_head_cross_entropy(tr, labels).item() == pytest.approx(fused_only, abs=1e-6)

    def test_weighted_sum_of_three_independent_losses(self):
        r = rng(33)
        s_av, s_a, s_v = (r.uniform(0.05, 0.95, size=6) for _ in range(3))
        labels = (r.random(6) < 0.5).astype(np.int8)
        tr = fabricated_trace(s_av, s_a, s_v)
        want = (ref.frame_ce64(s_av.astype(np.float32), labels)
                + 0.4 * ref.frame_ce64(s_a.astype(np.float32), labels)
                + 0.4 * ref.frame_ce64(s_v.astype(np.float32), labels))
        assert multi_head_cross_entropy(tr, labels).item() == pytest.approx(want, rel=1e-5)


class TestEndToEndGradients:
    def test_input_gradients_match_finite_differences(self):
        cfg = small_config()
        params = init_params(cfg)
        xa, xv, labels = random_clip(cfg, 5, seed=40)
        pt = params.as_tensors(False)
        xa_t, xv_t = Tensor(xa, requires_grad=True), Tensor(xv, requires_grad=True)
        multi_head_cross_entropy(forward(pt, xa_t, xv_t), labels).backward()

        def loss_a(x):
            tr = ref.model_forward64(params.values, cfg, x, xv)
            return ref.multi_head_ce64(tr, labels)

        def loss_v(x):
            tr = ref.model_forward64(params.values, cfg, xa, x)
            return ref.multi_head_ce64(tr, labels)

        fd_a = ref.central_difference(loss_a, xa.astype(np.float64))
        fd_v = ref.central_difference(loss_v, xv.astype(np.float64))
        assert ref.rel_error(xa_t.grad, fd_a, floor=1e-3) < 1e-3
        assert ref.rel_error(xv_t.grad, fd_v, floor=1e-3) < 1e-3

    def test_parameter_gradients_match_finite_differences(self):
        cfg = small_config()
        params = init_params(cfg)
        xa, xv, labels = random_clip(cfg, 4, seed=41)
        pt = params.as_tensors(requires_grad=True)
        multi_head_cross_entropy(forward(pt, xa, xv), labels).backward()
        for name in ("enc_a_w", "cross_q_a", "self_k", "head_av_w", "enc_v_b"):
            def loss_fn(w, name=name):
                vals = dict(params.values)
                vals[name] = w
                tr = ref.model_forward64(vals, cfg, xa, xv)
                return ref.multi_head_ce64(tr, labels)

            fd = ref.central_difference(loss_fn, params.values[name].astype(np.float64))
            got = getattr(pt, name).grad
            assert ref.rel_error(got, fd, floor=1e-3) < 1e-3, name


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        params = init_params(ModelConfig(seed=5))
        meta = {"loss_mode": "interaction", "weights": [0.1, 0.1, 0.1, 0.1], "seed": 5}
        path = tmp_path / "model.ckpt"
        save_checkpoint(params, path, meta)
        loaded, loaded_meta = load_checkpoint(path)
        assert loaded.config == params.config
        assert loaded_meta == meta
        assert set(loaded.values) == set(params.values)
        for name, arr in params.values.items():
            np.testing.assert_array_equal(arr, loaded.values[name])
            assert loaded.values[name].dtype == np.float32

    def test_no_cross_variant_round_trip(self, tmp_path):
        params = init_params(ModelConfig(seed=1, cross_attention=False))
        path = tmp_path / "nc.ckpt"
        save_checkpoint(params, path)
        loaded, _ = load_checkpoint(path)
        assert "cross_q_a" not in loaded.values
        for name, arr in params.values.items():
            np.testing.assert_array_equal(arr, loaded.values[name])

    def test_truncated_file_rejected(self, tmp_path):
        params = init_params(ModelConfig(seed=2))
        path = tmp_path / "trunc.ckpt"
        save_checkpoint(params, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-17])
        with pytest.raises(ValueError, match="truncated"):
            load_checkpoint(path)

    def test_garbage_file_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"not a checkpoint at all")
        with pytest.raises(ValueError, match="not a checkpoint"):
            load_checkpoint(path)
