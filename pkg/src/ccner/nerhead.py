"""Token-classification head: 2-layer bidirectional LSTM over encoder states,
linear projection to label scores, and a linear-chain CRF.

The head consumes the jointly encoded composite input [CLS] T [SEP] S [SEP]
but the CRF chain runs over the target positions only; summary positions are
dropped after the projection.  Decoding is Viterbi by default with a
per-token argmax alternative for comparison.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import kernels
from .encoder import EncoderConfig, EncoderParams, HiddenStates, encode_backward, encode_forward
from .textdata import Sequence, TagProfile, Vocabulary, encode_ids


@dataclass
class CompositeInput:
    """Token ids of [CLS] T [SEP] (S [SEP]) plus the mask selecting T."""

    ids: np.ndarray
    target_mask: np.ndarray
    t_len: int
    s_len: int

    def __post_init__(self):
        if int(self.target_mask.sum()) != self.t_len:
            raise ValueError("target_mask must select exactly the target tokens")


@dataclass(frozen=True)
class HeadConfig:
    d_in: int
    h_lstm: int
    n_labels: int
    n_lstm_layers: int = 2


@dataclass
class LstmDirParams:
    w_x: np.ndarray  # [4h, d_in]
    w_h: np.ndarray  # [4h, h]
    b: np.ndarray  # [4h]


@dataclass
class HeadParams:
    lstm: list[list[LstmDirParams]]  # [layer][direction: 0 fwd, 1 bwd]
    proj_w: np.ndarray  # [n_labels, 2h]
    proj_b: np.ndarray  # [n_labels]
    trans: np.ndarray  # [n_labels, n_labels]
    start: np.ndarray  # [n_labels]
    end: np.ndarray  # [n_labels]

    def named_tensors(self) -> Iterator[tuple[str, np.ndarray]]:
        for li, layer in enumerate(self.lstm):
            for di, dirp in enumerate(layer):
                tag = "fwd" if di == 0 else "bwd"
                yield f"lstm{li}.{tag}.w_x", dirp.w_x
                yield f"lstm{li}.{tag}.w_h", dirp.w_h
                yield f"lstm{li}.{tag}.b", dirp.b
        yield "proj_w", self.proj_w
        yield "proj_b", self.proj_b
        yield "trans", self.trans
        yield "start", self.start
        yield "end", self.end

    def zeros_like(self) -> "HeadParams":
        return HeadParams(
            lstm=[
                [LstmDirParams(np.zeros_like(d.w_x), np.zeros_like(d.w_h), np.zeros_like(d.b)) for d in layer]
                for layer in self.lstm
            ],
            proj_w=np.zeros_like(self.proj_w),
            proj_b=np.zeros_like(self.proj_b),
            trans=np.zeros_like(self.trans),
            start=np.zeros_like(self.start),
            end=np.zeros_like(self.end),
        )


@dataclass
class TagSequence:
    labels: list[str]
    score: float


def init_head_params(cfg: HeadConfig, seed: int) -> HeadParams:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x4]))
    h = cfg.h_lstm
    layers = []
    for li in range(cfg.n_lstm_layers):
        d_in = cfg.d_in if li == 0 else 2 * h
        bound = 1.0 / np.sqrt(h)
        dirs = []
        for _ in range(2):
            b = np.zeros(4 * h)
            b[h : 2 * h] = 1.0  # forget-gate bias
            dirs.append(
                LstmDirParams(
                    w_x=rng.uniform(-bound, bound, size=(4 * h, d_in)),
                    w_h=rng.uniform(-bound, bound, size=(4 * h, h)),
                    b=b,
                )
            )
        layers.append(dirs)
    bound = 1.0 / np.sqrt(2 * h)
    return HeadParams(
        lstm=layers,
        proj_w=rng.uniform(-bound, bound, size=(cfg.n_labels, 2 * h)),
        proj_b=np.zeros(cfg.n_labels),
        trans=np.zeros((cfg.n_labels, cfg.n_labels)),
        start=np.zeros(cfg.n_labels),
        end=np.zeros(cfg.n_labels),
    )


def build_composite(
    target: Sequence,
    summary: str | None,
    vocab: Vocabulary,
    max_len: int,
) -> CompositeInput:
    """[CLS] T [SEP] S [SEP] as token ids; S is trimmed from its right end to
    fit max_len, T never is.  An empty or fully trimmed S degenerates to
    [CLS] T [SEP]."""
    t_ids = encode_ids(target, vocab)
    s_ids = [vocab.id_of(ch) for ch in summary] if summary else []
    if s_ids:
        if len(t_ids) + 3 > max_len:
            raise ValueError(f"target of {len(t_ids)} tokens leaves no room in budget {max_len}")
        s_ids = s_ids[: max_len - len(t_ids) - 3]
    if not s_ids:
        if len(t_ids) + 2 > max_len:
            raise ValueError(f"target of {len(t_ids)} tokens leaves no room in budget {max_len}")
        ids = [vocab.CLS_ID] + t_ids + [vocab.SEP_ID]
    else:
        ids = [vocab.CLS_ID] + t_ids + [vocab.SEP_ID] + s_ids + [vocab.SEP_ID]
    target_mask = np.zeros(len(ids), dtype=bool)
    target_mask[1 : 1 + len(t_ids)] = True
    return CompositeInput(
        ids=np.array(ids, dtype=np.int64),
        target_mask=target_mask,
        t_len=len(t_ids),
        s_len=len(s_ids),
    )


def bilstm_forward(hidden: HiddenStates, params: HeadParams, return_cache: bool = False):
    """Stacked bidirectional LSTM; per position the two directions'
    states are concatenated, and layer l+1 consumes layer l's output."""
    x = hidden.hidden
    if x.shape[0] == 0:
        raise ValueError("empty input to bilstm_forward")
    cache = {"layer_inputs": [], "scans": []}
    for layer in params.lstm:
        cache["layer_inputs"].append(x)
        outs = []
        scans = []
        for di, dirp in enumerate(layer):
            pre = x @ dirp.w_x.T + dirp.b
            if di == 1:
                pre = pre[::-1].copy()
            scan = kernels.lstm_scan(np.ascontiguousarray(pre), dirp.w_h)
            h_seq = scan[0]
            if di == 1:
                h_seq = h_seq[::-1]
            outs.append(h_seq)
            scans.append(scan)
        cache["scans"].append(scans)
        x = np.concatenate(outs, axis=1)
    if return_cache:
        return x, cache
    return x


def bilstm_backward(d_feat: np.ndarray, cache, params: HeadParams):
    """Gradients for all LSTM tensors plus the input hidden states."""
    grads = [[None, None] for _ in params.lstm]
    d_out = d_feat
    for li in range(len(params.lstm) - 1, -1, -1):
        layer = params.lstm[li]
        x_in = cache["layer_inputs"][li]
        h = layer[0].w_h.shape[1]
        d_x = np.zeros_like(x_in)
        for di, dirp in enumerate(layer):
            d_half = d_out[:, di * h : (di + 1) * h]
            if di == 1:
                d_half = d_half[::-1]
            d_pre, d_w_h = kernels.lstm_scan_backward(
                np.ascontiguousarray(d_half), dirp.w_h, *cache["scans"][li][di]
            )
            if di == 1:
                d_pre = d_pre[::-1]
            grads[li][di] = LstmDirParams(
                w_x=d_pre.T @ x_in, w_h=d_w_h, b=d_pre.sum(axis=0)
            )
            d_x += d_pre @ dirp.w_x
        d_out = d_x
    return grads, d_out


def head_emissions(hidden: HiddenStates, params: HeadParams, return_cache: bool = False):
    """Per-position label scores for the whole composite input."""
    if return_cache:
        feat, cache = bilstm_forward(hidden, params, return_cache=True)
        cache["feat"] = feat
        return feat @ params.proj_w.T + params.proj_b, cache
    feat = bilstm_forward(hidden, params)
    return feat @ params.proj_w.T + params.proj_b


def head_emissions_backward(d_emis: np.ndarray, cache, params: HeadParams):
    feat = cache["feat"]
    grads = params.zeros_like()
    grads.proj_w += d_emis.T @ feat
    grads.proj_b += d_emis.sum(axis=0)
    d_feat = d_emis @ params.proj_w
    lstm_grads, d_hidden = bilstm_backward(d_feat, cache, params)
    grads.lstm = lstm_grads
    return grads, d_hidden


def crf_log_partition(emissions, trans, start, end) -> float:
    """log sum over all label paths of exp(path score)."""
    emissions = np.ascontiguousarray(emissions, dtype=float)
    if emissions.shape[0] < 1:
        raise ValueError("need at least one position")
    _, log_z = kernels.crf_alphas(emissions, trans, start, end)
    return float(log_z)


def _check_gold(gold, n, n_labels):
    gold = np.asarray(gold, dtype=np.int64)
    if gold.shape[0] != n:
        raise ValueError(f"gold path length {gold.shape[0]} != {n} positions")
    if gold.size and (gold.min() < 0 or gold.max() >= n_labels):
        raise ValueError(f"gold label outside the {n_labels}-label set")
    return gold


def crf_nll(emissions, gold, trans, start, end) -> float:
    """log_partition minus the gold path score; nonnegative."""
    emissions = np.ascontiguousarray(emissions, dtype=float)
    gold = _check_gold(gold, emissions.shape[0], emissions.shape[1])
    nll, *_ = kernels.crf_nll_grad(emissions, trans, start, end, gold)
    return float(nll)


def crf_nll_grad(emissions, gold, trans, start, end):
    """(nll, d_emissions, d_trans, d_start, d_end)."""
    emissions = np.ascontiguousarray(emissions, dtype=float)
    gold = _check_gold(gold, emissions.shape[0], emissions.shape[1])
    return kernels.crf_nll_grad(emissions, trans, start, end, gold)


def viterbi_decode(emissions, trans, start, end):
    """(best path indices, path score); ties break toward lower label index."""
    emissions = np.ascontiguousarray(emissions, dtype=float)
    if emissions.shape[0] < 1:
        raise ValueError("need at least one position")
    path, score = kernels.viterbi(emissions, trans, start, end)
    return path, float(score)


def argmax_decode(emissions, trans, start, end):
    """Per-token argmax, ignoring transitions; kept for comparison."""
    path = np.argmax(emissions, axis=1).astype(np.int64)
    score = float(emissions[np.arange(len(path)), path].sum())
    return path, score


def predict(
    target: Sequence,
    summary: str | None,
    enc_params: EncoderParams,
    enc_cfg: EncoderConfig,
    head_params: HeadParams,
    profile: TagProfile,
    vocab: Vocabulary,
    decode: str = "viterbi",
) -> TagSequence:
    """Tag the target sequence, optionally with a context summary appended.

    The composite input is encoded jointly; emissions at target positions
    feed the decoder, so the output has exactly len(target) labels.
    """
    comp = build_composite(target, summary, vocab, enc_cfg.max_len)
    states = encode_forward(comp.ids, np.ones(len(comp.ids), bool), enc_params, enc_cfg)
    emissions = head_emissions(states, head_params)
    target_emissions = emissions[comp.target_mask]
    decoder = {"viterbi": viterbi_decode, "argmax": argmax_decode}[decode]
    path, score = decoder(target_emissions, head_params.trans, head_params.start, head_params.end)
    labels = [profile.labels[i] for i in path]
    return TagSequence(labels=labels, score=score)
