import numpy as np
import pytest

from ccner.encoder import EncoderConfig, HiddenStates, encode_forward, init_encoder_params
from ccner.nerhead import (
    HeadConfig,
    argmax_decode,
    bilstm_forward,
    build_composite,
    crf_log_partition,
    crf_nll,
    crf_nll_grad,
    head_emissions,
    head_emissions_backward,
    init_head_params,
    predict,
    viterbi_decode,
)
from ccner.textdata import Document, Sequence, build_vocab, custom_profile
from helpers import (
    brute_best_path,
    brute_log_partition,
    central_difference,
    lstm_cell_reference,
    relative_error,
)


@pytest.fixture(scope="module")
def vocab():
    return build_vocab([Document("d", "abcdefghij")], max_size=40)


class TestComposite:
    def test_layout_with_summary(self, vocab):
        comp = build_composite(Sequence("d", 0, list("abcde")), "fghi", vocab, max_len=64)
        assert len(comp.ids) == 12
        assert comp.ids[0] == 0
        assert comp.ids[6] == 1 and comp.ids[-1] == 1
        assert list(np.flatnonzero(comp.target_mask)) == [1, 2, 3, 4, 5]

    def test_layout_without_summary(self, vocab):
        comp = build_composite(Sequence("d", 0, list("abc")), None, vocab, max_len=64)
        assert len(comp.ids) == 5
        assert comp.s_len == 0

    def test_summary_truncated_from_right(self, vocab):
        comp = build_composite(
            Sequence("d", 0, list("abcdeabcde")), "fghij" + "fghij", vocab, max_len=16
        )
        assert comp.s_len == 3  # 16 - (10 + 3)
        assert len(comp.ids) == 16

    def test_empty_summary_same_as_absent(self, vocab):
        t = Sequence("d", 0, list("abc"))
        a = build_composite(t, "", vocab, max_len=64)
        b = build_composite(t, None, vocab, max_len=64)
        assert np.array_equal(a.ids, b.ids)

    def test_target_too_long(self, vocab):
        with pytest.raises(ValueError):
            build_composite(Sequence("d", 0, list("abcde")), "f", vocab, max_len=7)


class TestBilstm:
    def make(self, d_in=6, h=4, n=5, seed=0):
        cfg = HeadConfig(d_in=d_in, h_lstm=h, n_labels=3)
        params = init_head_params(cfg, seed=seed)
        rng = np.random.default_rng(seed + 50)
        x = rng.standard_normal((n, d_in))
        states = HiddenStates(hidden=x, mask=np.ones(n, bool))
        return cfg, params, states

    def test_matches_stepwise_cell_reference(self):
        cfg, params, states = self.make()
        feat = bilstm_forward(states, params)
        # layer 1 by hand
        l0f, l0b = params.lstm[0]
        x = states.hidden
        fwd = lstm_cell_reference(x, l0f.w_x, l0f.w_h, l0f.b)
        bwd = lstm_cell_reference(x, l0b.w_x, l0b.w_h, l0b.b, reverse=True)
        mid = np.concatenate([fwd, bwd], axis=1)
        # layer 2 by hand
        l1f, l1b = params.lstm[1]
        fwd2 = lstm_cell_reference(mid, l1f.w_x, l1f.w_h, l1f.b)
        bwd2 = lstm_cell_reference(mid, l1b.w_x, l1b.w_h, l1b.b, reverse=True)
        ref = np.concatenate([fwd2, bwd2], axis=1)
        np.testing.assert_allclose(feat, ref, rtol=0, atol=1e-12)

    def test_length_one_input(self):
        # with a single step both directions see identical inputs, so tying
        # the weights makes the two output halves equal
        cfg = HeadConfig(d_in=6, h_lstm=4, n_labels=3, n_lstm_layers=1)
        params = init_head_params(cfg, seed=1)
        params.lstm[0][1] = params.lstm[0][0]
        x = np.random.default_rng(1).standard_normal((1, 6))
        feat = bilstm_forward(HiddenStates(hidden=x, mask=np.ones(1, bool)), params)
        assert feat.shape == (1, 8)
        np.testing.assert_allclose(feat[0, :4], feat[0, 4:], atol=1e-15)

    def test_reversal_swaps_directional_halves(self):
        # run a single BiLSTM layer both ways: reversing the input must
        # reverse positions and swap the fwd/bwd halves when weights are tied
        cfg = HeadConfig(d_in=6, h_lstm=4, n_labels=3, n_lstm_layers=1)
        params = init_head_params(cfg, seed=3)
        params.lstm[0][1] = params.lstm[0][0]  # tie directions
        rng = np.random.default_rng(4)
        x = rng.standard_normal((5, 6))
        out = bilstm_forward(HiddenStates(x, np.ones(5, bool)), params)
        out_rev = bilstm_forward(HiddenStates(x[::-1].copy(), np.ones(5, bool)), params)
        h = 4
        np.testing.assert_allclose(out[:, :h], out_rev[::-1, h:], atol=1e-12)
        np.testing.assert_allclose(out[:, h:], out_rev[::-1, :h], atol=1e-12)

    def test_empty_input_errors(self):
        cfg, params, _ = self.make()
        with pytest.raises(ValueError):
            bilstm_forward(HiddenStates(np.zeros((0, 6)), np.zeros(0, bool)), params)

    def test_head_gradients_match_finite_differences(self):
        cfg, params, states = self.make(d_in=5, h=3, n=4, seed=9)
        rng = np.random.default_rng(10)
        weight = rng.standard_normal((4, cfg.n_labels))

        def loss():
            return float((head_emissions(states, params) * weight).sum())

        _, cache = head_emissions(states, params, return_cache=True)
        grads, d_hidden = head_emissions_backward(weight, cache, params)
        named = dict(grads.named_tensors())
        for name, arr in params.named_tensors():
            if name in ("trans", "start", "end"):
                continue  # not touched by the emission path
            num = central_difference(loss, arr)
            for idx, val in num.items():
                err = relative_error(named[name].reshape(-1)[idx], val)
                assert err <= 1e-5, f"{name}[{idx}]: {err:.2e}"
        # input gradient as well
        num = central_difference(loss, states.hidden)
        for idx, val in num.items():
            assert relative_error(d_hidden.reshape(-1)[idx], val) <= 1e-5


class TestCrfOps:
    def rand(self, rng, n, L):
        return (
            rng.standard_normal((n, L)),
            rng.standard_normal((L, L)),
            rng.standard_normal(L),
            rng.standard_normal(L),
        )

    def test_log_partition_single_step(self):
        rng = np.random.default_rng(0)
        emis, trans, start, end = self.rand(rng, 1, 4)
        v = start + emis[0] + end
        m = v.max()
        expected = m + np.log(np.exp(v - m).sum())
        assert crf_log_partition(emis, trans, start, end) == pytest.approx(expected, abs=1e-12)

    def test_log_partition_matches_brute_force(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            emis, trans, start, end = self.rand(rng, int(rng.integers(1, 6)), int(rng.integers(1, 5)))
            assert crf_log_partition(emis, trans, start, end) == pytest.approx(
                brute_log_partition(emis, trans, start, end), abs=1e-10
            )

    def test_uniform_scores(self):
        L, n = 4, 3
        z = np.zeros(L)
        assert crf_log_partition(np.zeros((n, L)), np.zeros((L, L)), z, z) == pytest.approx(
            n * np.log(L), abs=1e-12
        )

    def test_nll_single_label_is_zero(self):
        emis = np.array([[1.3], [0.2]])
        z = np.zeros(1)
        assert crf_nll(emis, [0, 0], np.zeros((1, 1)), z, z) == pytest.approx(0.0, abs=1e-12)

    def test_nll_matches_enumerated_probability(self):
        rng = np.random.default_rng(2)
        emis, trans, start, end = self.rand(rng, 4, 3)
        gold = np.array([2, 0, 1, 1])
        scores, paths = __import__("helpers").enumerate_crf_paths(emis, trans, start, end)
        log_z = brute_log_partition(emis, trans, start, end)
        gold_logp = scores[paths.index(tuple(gold))] - log_z
        assert crf_nll(emis, gold, trans, start, end) == pytest.approx(-gold_logp, abs=1e-10)

    def test_nll_rejects_bad_labels(self):
        emis = np.zeros((2, 3))
        z = np.zeros(3)
        with pytest.raises(ValueError):
            crf_nll(emis, [0, 5], np.zeros((3, 3)), z, z)

    def test_grad_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        emis, trans, start, end = self.rand(rng, 4, 3)
        gold = np.array([0, 2, 1, 0])
        _, d_emis, d_trans, d_start, d_end = crf_nll_grad(emis, gold, trans, start, end)
        for arr, ana in ((emis, d_emis), (trans, d_trans), (start, d_start), (end, d_end)):
            num = central_difference(lambda: crf_nll(emis, gold, trans, start, end), arr)
            for idx, val in num.items():
                assert relative_error(ana.reshape(-1)[idx], val) <= 1e-4

    def test_viterbi_is_exhaustive_max(self):
        rng = np.random.default_rng(4)
        for _ in range(15):
            emis, trans, start, end = self.rand(rng, int(rng.integers(1, 7)), int(rng.integers(1, 6)))
            path, score = viterbi_decode(emis, trans, start, end)
            brute_score, brute_path = brute_best_path(emis, trans, start, end)
            assert score == pytest.approx(brute_score, abs=1e-10)
            assert tuple(path) == brute_path

    def test_argmax_decode_ignores_transitions(self):
        rng = np.random.default_rng(5)
        emis = rng.standard_normal((6, 4))
        trans = rng.standard_normal((4, 4)) * 100
        path, _ = argmax_decode(emis, trans, np.zeros(4), np.zeros(4))
        assert list(path) == list(np.argmax(emis, axis=1))


class TestPredict:
    @pytest.fixture()
    def setup(self, vocab):
        enc_cfg = EncoderConfig(n_layers=1, n_heads=2, d_model=8, d_ffn=12,
                                vocab_size=len(vocab), max_len=64)
        enc_params = init_encoder_params(enc_cfg, seed=0)
        profile = custom_profile(["x"])
        head_cfg = HeadConfig(d_in=8, h_lstm=4, n_labels=len(profile.labels))
        head_params = init_head_params(head_cfg, seed=0)
        return enc_cfg, enc_params, head_cfg, head_params, profile

    def test_output_length_matches_target(self, setup, vocab):
        enc_cfg, enc_params, _, head_params, profile = setup
        t = Sequence("d", 0, list("abcd"))
        for summary in (None, "efg", "e" * 40):
            out = predict(t, summary, enc_params, enc_cfg, head_params, profile, vocab)
            assert len(out.labels) == 4
            assert all(lab in profile.labels for lab in out.labels)

    def test_deterministic(self, setup, vocab):
        enc_cfg, enc_params, _, head_params, profile = setup
        t = Sequence("d", 0, list("abcd"))
        a = predict(t, "ef", enc_params, enc_cfg, head_params, profile, vocab)
        b = predict(t, "ef", enc_params, enc_cfg, head_params, profile, vocab)
        assert a.labels == b.labels and a.score == b.score

    def test_summary_affects_target_emissions(self, setup, vocab):
        enc_cfg, enc_params, _, head_params, profile = setup
        t = Sequence("d", 0, list("abcd"))
        emis = {}
        for key, summary in (("s1", "efg"), ("s2", "ijh")):
            comp = build_composite(t, summary, vocab, enc_cfg.max_len)
            states = encode_forward(comp.ids, np.ones(len(comp.ids), bool), enc_params, enc_cfg)
            emis[key] = head_emissions(states, head_params)[comp.target_mask]
        assert not np.allclose(emis["s1"], emis["s2"])

    def test_summary_can_flip_predictions(self, vocab):
        # trained-free demonstration: search a few seeds for a model whose
        # decoded labels differ between two summaries, then pin that seed
        profile = custom_profile(["x"])
        enc_cfg = EncoderConfig(n_layers=1, n_heads=2, d_model=8, d_ffn=12,
                                vocab_size=len(vocab), max_len=64)
        t = Sequence("d", 0, list("abcd"))
        flipped = False
        for seed in range(40):
            enc_params = init_encoder_params(enc_cfg, seed=seed)
            head_params = init_head_params(HeadConfig(8, 4, len(profile.labels)), seed=seed)
            head_params.proj_w *= 6.0  # spread emissions so decisions are not knife-edge ties
            a = predict(t, "efg", enc_params, enc_cfg, head_params, profile, vocab)
            b = predict(t, "ijh", enc_params, enc_cfg, head_params, profile, vocab)
            if a.labels != b.labels:
                flipped = True
                break
        assert flipped, "no seed produced summary-dependent predictions"
