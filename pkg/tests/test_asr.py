"""Recognizer model tests: encoder geometry, attention, losses, training."""

import numpy as np
import pytest

from imsk.asr import (
    AsrModel,
    AsrTrainConfig,
    AttentionConfig,
    DecoderConfig,
    EncoderConfig,
    HybridLossConfig,
    encoder_output_length,
    load_asr,
    make_batches,
    save_asr,
    train_asr,
)
from imsk.nn import tensor as tt
from imsk.nn.gradcheck import check_gradients
from imsk.nn.optim import DivergedError
from imsk.tokenizer import SOS_EOS_ID

RNG = np.random.default_rng(41)

TINY_ENC = EncoderConfig(input_dim=8, vgg_channels=(2, 3), blstm_layers=1, blstm_units=4)
TINY_ATT = AttentionConfig(attn_dim=5, conv_channels=2, conv_filters=3)
TINY_DEC = DecoderConfig(layers=1, units=6, embed_dim=4)
VOCAB = 7


def tiny_model(dtype=np.float64, seed=7):
    return AsrModel(
        VOCAB, TINY_ENC, TINY_ATT, TINY_DEC, np.random.default_rng(seed), dtype=dtype
    )


def feat(t, d=8, scale=0.5):
    return RNG.normal(0, scale, (t, d))


class TestEncoder:
    def test_length_formula_examples(self):
        assert encoder_output_length(100) == 25
        assert encoder_output_length(7) == 2

    def test_length_formula_holds_for_all_t(self):
        m = tiny_model()
        for t in [4, 5, 6, 7, 9, 16, 33]:
            h, lengths = m.encode_batch([feat(t)])
            assert h.shape[1] == encoder_output_length(t) == lengths[0]

    def test_output_dim_and_finiteness(self):
        m = tiny_model()
        h = m.encode(feat(20))
        assert h.shape == (5, 2 * TINY_ENC.blstm_units)
        assert np.all(np.isfinite(h.data))

    def test_dim_mismatch_rejected(self):
        with pytest.raises(ValueError):
            tiny_model().encode_batch([RNG.normal(0, 1, (10, 5))])

    def test_batch_lengths(self):
        m = tiny_model()
        h, lengths = m.encode_batch([feat(12), feat(7)])
        assert list(lengths) == [3, 2]
        assert h.shape[0] == 2


class TestAttention:
    def test_single_frame_gives_unit_weight(self):
        m = tiny_model()
        h = tt.Tensor(RNG.normal(0, 1, (1, 1, 8)))
        a0 = tt.Tensor(np.ones((1, 1)))
        q = tt.Tensor(np.zeros((1, TINY_DEC.units)))
        a, r = m.attend(a0, q, h)
        assert np.allclose(a.data, [[1.0]])
        assert np.allclose(r.data, h.data[:, 0])

    def test_weights_sum_to_one(self):
        m = tiny_model()
        h = tt.Tensor(RNG.normal(0, 1, (3, 6, 8)))
        a0 = tt.Tensor(np.full((3, 6), 1.0 / 6.0))
        q = tt.Tensor(RNG.normal(0, 1, (3, TINY_DEC.units)))
        a, _ = m.attend(a0, q, h)
        assert np.allclose(a.data.sum(axis=1), 1.0, atol=1e-6)

    def test_masked_frames_get_zero_weight(self):
        m = tiny_model()
        h = tt.Tensor(RNG.normal(0, 1, (2, 5, 8)))
        mask = np.array([[1, 1, 1, 1, 1], [1, 1, 0, 0, 0]], dtype=np.float64)
        a0 = tt.Tensor(mask / mask.sum(axis=1, keepdims=True))
        q = tt.Tensor(np.zeros((2, TINY_DEC.units)))
        a, _ = m.attend(a0, q, h, mask=mask)
        assert np.all(a.data[1, 2:] == 0.0)
        assert np.allclose(a.data.sum(axis=1), 1.0)

    def test_length_mismatch_rejected(self):
        m = tiny_model()
        h = tt.Tensor(RNG.normal(0, 1, (1, 4, 8)))
        with pytest.raises(ValueError):
            m.attend(tt.Tensor(np.ones((1, 3)) / 3), tt.Tensor(np.zeros((1, 6))), h)

    def test_gradients_through_attend(self):
        m = tiny_model()
        h = tt.Tensor(RNG.normal(0, 1, (1, 4, 8)), requires_grad=True)
        q = tt.Tensor(RNG.normal(0, 1, (1, TINY_DEC.units)), requires_grad=True)
        a0 = tt.Tensor(np.full((1, 4), 0.25))

        def loss():
            a, r = m.attend(a0, q, h)
            return tt.sum_(tt.mul(r, r)) + tt.sum_(tt.mul(a, a))

        tensors = [h, q, m.att_conv, m.att_vec, m.att_enc.w, m.att_dec.w, m.att_loc.w]
        report = check_gradients(loss, tensors)
        assert report.passed(1e-5), report.per_tensor


class TestDecodeStep:
    def test_distribution_normalized(self):
        m = tiny_model()
        r = tt.Tensor(RNG.normal(0, 1, (2, 8)))
        state = m.initial_decoder_state(2)
        logp, _ = m.decode_step(r, state, np.array([SOS_EOS_ID, 3]))
        assert np.allclose(np.exp(logp.data).sum(axis=1), 1.0, atol=1e-6)

    def test_deterministic(self):
        m = tiny_model()
        r = tt.Tensor(RNG.normal(0, 1, (1, 8)))
        state = m.initial_decoder_state(1)
        a, _ = m.decode_step(r, state, np.array([3]))
        b, _ = m.decode_step(r, state, np.array([3]))
        assert np.array_equal(a.data, b.data)

    def test_composed_steps_equal_attention_loss(self):
        m = tiny_model()
        f = feat(15)
        y = [3, 5, 4]
        h, lengths = m.encode_batch([f])
        vh = m.precompute_attention(h)
        a = m._uniform_alignment(lengths)
        state = m.initial_decoder_state(1)
        inputs = [SOS_EOS_ID] + y
        targets = y + [SOS_EOS_ID]
        total = 0.0
        for u in range(len(inputs)):
            a, r = m.attend(a, m.decoder_query(state), h, vh)
            logp, state = m.decode_step(r, state, np.array([inputs[u]]))
            total += logp.data[0, targets[u]]
        loss = m.attention_loss([f], [y])
        assert np.isclose(-total, loss.item(), atol=1e-9)


class TestLosses:
    def test_uniform_output_cross_entropy(self):
        m = tiny_model()
        m.out.w.data[:] = 0.0
        m.out.b.data[:] = 0.0
        y = [3, 4]
        loss = m.attention_loss([feat(12)], [y])
        assert np.isclose(loss.item(), (len(y) + 1) * np.log(VOCAB), atol=1e-9)

    def test_loss_nonnegative(self):
        m = tiny_model()
        assert m.attention_loss([feat(10)], [[3]]).item() >= 0.0

    def test_empty_labels_rejected(self):
        with pytest.raises(ValueError):
            tiny_model().attention_loss([feat(10)], [[]])

    def test_hybrid_boundaries(self):
        m = tiny_model()
        feats, labels = [feat(14)], [[3, 5]]
        att = m.attention_loss(feats, labels).item()
        ctc = m.ctc_branch_loss(feats, labels).item()
        assert np.isclose(m.hybrid_loss(feats, labels, 0.0).item(), att, atol=1e-12)
        assert np.isclose(m.hybrid_loss(feats, labels, 1.0).item(), ctc, atol=1e-12)

    def test_hybrid_linear_in_lambda(self):
        m = tiny_model()
        feats, labels = [feat(14), feat(9)], [[3, 5], [6]]
        l0 = m.hybrid_loss(feats, labels, 0.0).item()
        l1 = m.hybrid_loss(feats, labels, 1.0).item()
        lh = m.hybrid_loss(feats, labels, 0.5).item()
        assert abs(lh - 0.5 * (l0 + l1)) < 1e-9

    def test_hybrid_weight_validated(self):
        with pytest.raises(ValueError):
            HybridLossConfig(1.5)
        with pytest.raises(ValueError):
            tiny_model().hybrid_loss([feat(10)], [[3]], -0.1)

    def test_encoder_shared_between_branches(self):
        m = tiny_model()
        calls = []
        original = m.encode_batch

        def counting(feats):
            calls.append(1)
            return original(feats)

        m.encode_batch = counting
        m.hybrid_loss([feat(12)], [[3]], 0.5)
        assert len(calls) == 1

    def test_batched_loss_is_mean_of_singles(self):
        m = tiny_model()
        f1, f2 = feat(13), feat(13)
        y1, y2 = [3, 4], [5]
        lb = m.hybrid_loss([f1, f2], [y1, y2], 0.5).item()
        l1 = m.hybrid_loss([f1], [y1], 0.5).item()
        l2 = m.hybrid_loss([f2], [y2], 0.5).item()
        assert np.isclose(lb, 0.5 * (l1 + l2), atol=1e-9)

    def test_padded_batch_matches_short_run(self):
        # same utterance alone and padded inside a longer batch
        m = tiny_model()
        f_short, f_long = feat(9), feat(17)
        lb = m.hybrid_loss([f_long, f_short], [[3, 4], [5]], 0.5).item()
        l1 = m.hybrid_loss([f_long], [[3, 4]], 0.5).item()
        l2 = m.hybrid_loss([f_short], [[5]], 0.5).item()
        assert np.isclose(lb, 0.5 * (l1 + l2), atol=1e-9)

    def test_hybrid_gradients(self):
        m = tiny_model()
        feats, labels = [feat(9)], [[3, 5]]

        def loss():
            return m.hybrid_loss(feats, labels, 0.5)

        tensors = [
            m.block1.w1,
            m.blstms[0].fw.cell.w,
            m.att_conv,
            m.att_vec,
            m.att_dec.w,
            m.embed.table,
            m.dec_cells[0].w,
            m.out.w,
            m.ctc_out.w,
        ]
        report = check_gradients(loss, tensors)
        assert report.passed(1e-5), report.per_tensor


def memorization_task(n=6):
    rng = np.random.default_rng(3)
    data = []
    for i in range(n):
        label = 3 + (i % 3)
        f = rng.normal(0, 0.1, (10, 8))
        f[:, (label - 3) * 2] += 2.0  # distinct spectral stripe per label
        data.append((f, [label]))
    return data


class TestTrainLoop:
    def test_loss_decreases_and_history_recorded(self):
        m = tiny_model(dtype=np.float32, seed=11)
        data = memorization_task()
        res = train_asr(m, data, data, AsrTrainConfig(epochs=4, batch_size=3, seed=5))
        assert len(res.history) == 4
        assert res.history[-1].train_loss < res.history[0].train_loss
        assert 0.0 <= res.best_accuracy <= 1.0

    def test_best_epoch_not_last_and_eps_halving(self):
        m = tiny_model(dtype=np.float32, seed=11)
        data = memorization_task()
        scripted = iter([0.5, 0.9, 0.7, 0.6])
        res = train_asr(
            m,
            data,
            data,
            AsrTrainConfig(epochs=4, batch_size=3, seed=5),
            metric_fn=lambda model: next(scripted),
        )
        assert res.best_epoch == 2
        assert res.best_accuracy == 0.9
        # two consecutive non-improving epochs halve eps twice
        assert np.isclose(res.history[-1].eps, 2.5e-9)

    def test_divergence_aborts_with_diagnostic(self):
        m = tiny_model(dtype=np.float32, seed=11)
        m.out.w.data[:] = np.nan
        data = memorization_task(3)
        with pytest.raises(DivergedError):
            train_asr(m, data, data, AsrTrainConfig(epochs=1, batch_size=3))

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            train_asr(tiny_model(), [], [], AsrTrainConfig(epochs=1))

    def test_make_batches_sorted_by_length(self):
        data = [(feat(t), [3]) for t in [30, 10, 20, 40]]
        batches = make_batches(data, 2)
        lengths = [[item[0].shape[0] for item in b] for b in batches]
        assert lengths == [[10, 20], [30, 40]]


class TestPersistence:
    def test_round_trip(self, tmp_path):
        m = tiny_model(dtype=np.float32, seed=2)
        path = tmp_path / "asr.nnk"
        save_asr(path, m, extra={"vocab_sha": "abc123"})
        m2, config = load_asr(path)
        assert config["vocab_sha"] == "abc123"
        assert config["vocab_size"] == VOCAB
        for (_, p1), (_, p2) in zip(m.named_params(), m2.named_params()):
            assert np.array_equal(p1.data, p2.data)

    def test_wrong_kind_rejected(self, tmp_path):
        from imsk.nn.checkpoint import save_checkpoint

        path = tmp_path / "x.nnk"
        save_checkpoint(path, {"kind": "other"}, {"w": np.zeros(2, dtype=np.float32)})
        with pytest.raises(ValueError):
            load_asr(path)
