"""Hot inner loops, JIT-compiled with numba when available.

The LSTM time recurrence and the CRF dynamic programs are sequential over
positions and dominate training time; everything matmul-shaped (projections,
attention) stays in BLAS-backed NumPy outside these kernels.  Each kernel is
written once in numba-compatible NumPy and compiled with ``@njit`` unless the
environment variable ``CCNER_DISABLE_NUMBA`` is set to 1/true/yes, in which
case the plain NumPy version runs.  ``BACKEND`` reports which path is active;
``benchmarks/bench_kernels.py`` compares the two.

Gate layout is i, f, g, o in blocks of h along the 4h axis.  All kernels take
and return float64 C-contiguous arrays.
"""

from __future__ import annotations

import os

import numpy as np


def _lstm_scan(pre, w_hh):
    """Run an LSTM over precomputed gate inputs.

    pre[t] = x_t @ W_x.T + b, shape [n, 4h]; the kernel adds the recurrent
    term W_h @ h_{t-1} at each step.  Initial hidden and cell states are zero.
    Returns (h_seq, i, f, g, o, c, tanh_c), each [n, h].
    """
    n = pre.shape[0]
    h = w_hh.shape[1]
    h_seq = np.zeros((n, h))
    i_s = np.zeros((n, h))
    f_s = np.zeros((n, h))
    g_s = np.zeros((n, h))
    o_s = np.zeros((n, h))
    c_s = np.zeros((n, h))
    tc_s = np.zeros((n, h))
    h_prev = np.zeros(h)
    c_prev = np.zeros(h)
    for t in range(n):
        z = pre[t] + np.dot(w_hh, h_prev)
        i_t = 1.0 / (1.0 + np.exp(-z[0:h]))
        f_t = 1.0 / (1.0 + np.exp(-z[h : 2 * h]))
        g_t = np.tanh(z[2 * h : 3 * h])
        o_t = 1.0 / (1.0 + np.exp(-z[3 * h : 4 * h]))
        c_t = f_t * c_prev + i_t * g_t
        tc_t = np.tanh(c_t)
        i_s[t] = i_t
        f_s[t] = f_t
        g_s[t] = g_t
        o_s[t] = o_t
        c_s[t] = c_t
        tc_s[t] = tc_t
        h_seq[t] = o_t * tc_t
        h_prev = h_seq[t]
        c_prev = c_t
    return h_seq, i_s, f_s, g_s, o_s, c_s, tc_s


def _lstm_scan_backward(d_h_out, w_hh, h_seq, i_s, f_s, g_s, o_s, c_s, tc_s):
    """Backpropagation through time for one _lstm_scan call.

    d_h_out is the upstream gradient on h_seq.  Returns (d_pre, d_w_hh);
    gradients w.r.t. the zero initial states are discarded.
    """
    n, h = d_h_out.shape
    d_pre = np.zeros((n, 4 * h))
    d_w_hh = np.zeros_like(w_hh)
    dh_rec = np.zeros(h)
    dc = np.zeros(h)
    for t in range(n - 1, -1, -1):
        dh = d_h_out[t] + dh_rec
        do = dh * tc_s[t]
        dc = dc + dh * o_s[t] * (1.0 - tc_s[t] * tc_s[t])
        di = dc * g_s[t]
        dg = dc * i_s[t]
        if t > 0:
            c_prev = c_s[t - 1]
            h_prev = h_seq[t - 1]
        else:
            c_prev = np.zeros(h)
            h_prev = np.zeros(h)
        df = dc * c_prev
        dz = np.empty(4 * h)
        dz[0:h] = di * i_s[t] * (1.0 - i_s[t])
        dz[h : 2 * h] = df * f_s[t] * (1.0 - f_s[t])
        dz[2 * h : 3 * h] = dg * (1.0 - g_s[t] * g_s[t])
        dz[3 * h : 4 * h] = do * o_s[t] * (1.0 - o_s[t])
        d_pre[t] = dz
        d_w_hh += dz.reshape(4 * h, 1) * h_prev.reshape(1, h)
        dh_rec = np.dot(dz, w_hh)
        dc = dc * f_s[t]
    return d_pre, d_w_hh


def _crf_alphas(emis, trans, start, end):
    """Forward algorithm in log space.  Returns (alphas [n, L], log_partition)."""
    n, n_labels = emis.shape
    alphas = np.zeros((n, n_labels))
    alphas[0] = start + emis[0]
    for t in range(1, n):
        prev = alphas[t - 1]
        for j in range(n_labels):
            v = prev + trans[:, j]
            m = v.max()
            alphas[t, j] = m + np.log(np.sum(np.exp(v - m))) + emis[t, j]
    fin = alphas[n - 1] + end
    m = fin.max()
    log_z = m + np.log(np.sum(np.exp(fin - m)))
    return alphas, log_z


def _crf_betas(emis, trans, end):
    """Backward recursion in log space.  betas[n-1] = end."""
    n, n_labels = emis.shape
    betas = np.zeros((n, n_labels))
    betas[n - 1] = end
    for t in range(n - 2, -1, -1):
        nxt = betas[t + 1] + emis[t + 1]
        for i in range(n_labels):
            v = trans[i] + nxt
            m = v.max()
            betas[t, i] = m + np.log(np.sum(np.exp(v - m)))
    return betas


def _crf_nll_grad(emis, trans, start, end, gold):
    """Negative log-likelihood of the gold path and its exact gradients.

    Returns (nll, d_emis, d_trans, d_start, d_end) where the gradients are
    marginal expectations minus gold indicator counts.
    """
    n, n_labels = emis.shape
    alphas, log_z = _crf_alphas(emis, trans, start, end)
    betas = _crf_betas(emis, trans, end)

    gold_score = start[gold[0]] + emis[0, gold[0]] + end[gold[n - 1]]
    for t in range(1, n):
        gold_score += trans[gold[t - 1], gold[t]] + emis[t, gold[t]]
    nll = log_z - gold_score

    d_emis = np.exp(alphas + betas - log_z)
    d_trans = np.zeros_like(trans)
    for t in range(n - 1):
        for i in range(n_labels):
            for j in range(n_labels):
                d_trans[i, j] += np.exp(
                    alphas[t, i] + trans[i, j] + emis[t + 1, j] + betas[t + 1, j] - log_z
                )
    d_start = np.exp(alphas[0] + betas[0] - log_z)
    d_end = np.exp(alphas[n - 1] + betas[n - 1] - log_z)

    for t in range(n):
        d_emis[t, gold[t]] -= 1.0
    for t in range(n - 1):
        d_trans[gold[t], gold[t + 1]] -= 1.0
    d_start[gold[0]] -= 1.0
    d_end[gold[n - 1]] -= 1.0
    return nll, d_emis, d_trans, d_start, d_end


def _viterbi(emis, trans, start, end):
    """Maximum-score path; ties resolved toward the lowest label index.

    Returns (path [n] int64, best_score).
    """
    n, n_labels = emis.shape
    delta = np.zeros((n, n_labels))
    back = np.zeros((n, n_labels), dtype=np.int64)
    delta[0] = start + emis[0]
    for t in range(1, n):
        prev = delta[t - 1]
        for j in range(n_labels):
            v = prev + trans[:, j]
            b = np.argmax(v)
            back[t, j] = b
            delta[t, j] = v[b] + emis[t, j]
    fin = delta[n - 1] + end
    best = int(np.argmax(fin))
    path = np.zeros(n, dtype=np.int64)
    path[n - 1] = best
    for t in range(n - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path, fin[best]


numpy_impls = {
    "lstm_scan": _lstm_scan,
    "lstm_scan_backward": _lstm_scan_backward,
    "crf_alphas": _crf_alphas,
    "crf_betas": _crf_betas,
    "crf_nll_grad": _crf_nll_grad,
    "viterbi": _viterbi,
}


def _compile_numba():
    import numba

    jitted = {}
    jitted["crf_alphas"] = numba.njit(cache=True)(_crf_alphas)
    jitted["crf_betas"] = numba.njit(cache=True)(_crf_betas)
    jitted["lstm_scan"] = numba.njit(cache=True)(_lstm_scan)
    jitted["lstm_scan_backward"] = numba.njit(cache=True)(_lstm_scan_backward)
    jitted["viterbi"] = numba.njit(cache=True)(_viterbi)

    # _crf_nll_grad calls the alpha/beta kernels, so rebuild it against the
    # jitted versions instead of jitting a function with Python-level callees.
    crf_alphas_jit = jitted["crf_alphas"]
    crf_betas_jit = jitted["crf_betas"]

    @numba.njit(cache=True)
    def crf_nll_grad(emis, trans, start, end, gold):
        n, n_labels = emis.shape
        alphas, log_z = crf_alphas_jit(emis, trans, start, end)
        betas = crf_betas_jit(emis, trans, end)

        gold_score = start[gold[0]] + emis[0, gold[0]] + end[gold[n - 1]]
        for t in range(1, n):
            gold_score += trans[gold[t - 1], gold[t]] + emis[t, gold[t]]
        nll = log_z - gold_score

        d_emis = np.exp(alphas + betas - log_z)
        d_trans = np.zeros_like(trans)
        for t in range(n - 1):
            for i in range(n_labels):
                for j in range(n_labels):
                    d_trans[i, j] += np.exp(
                        alphas[t, i] + trans[i, j] + emis[t + 1, j] + betas[t + 1, j] - log_z
                    )
        d_start = np.exp(alphas[0] + betas[0] - log_z)
        d_end = np.exp(alphas[n - 1] + betas[n - 1] - log_z)

        for t in range(n):
            d_emis[t, gold[t]] -= 1.0
        for t in range(n - 1):
            d_trans[gold[t], gold[t + 1]] -= 1.0
        d_start[gold[0]] -= 1.0
        d_end[gold[n - 1]] -= 1.0
        return nll, d_emis, d_trans, d_start, d_end

    jitted["crf_nll_grad"] = crf_nll_grad
    return jitted


_DISABLED = os.environ.get("CCNER_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes"}

if _DISABLED:
    BACKEND = "numpy"
    _active = numpy_impls
else:
    try:
        _active = _compile_numba()
        BACKEND = "numba"
    except ImportError:
        BACKEND = "numpy"
        _active = numpy_impls

lstm_scan = _active["lstm_scan"]
lstm_scan_backward = _active["lstm_scan_backward"]
crf_alphas = _active["crf_alphas"]
crf_betas = _active["crf_betas"]
crf_nll_grad = _active["crf_nll_grad"]
viterbi = _active["viterbi"]


def warmup():
    """Trigger JIT compilation of every kernel on tiny inputs."""
    pre = np.zeros((2, 8))
    w_hh = np.zeros((8, 2))
    h_seq, i_s, f_s, g_s, o_s, c_s, tc_s = lstm_scan(pre, w_hh)
    lstm_scan_backward(np.zeros((2, 2)), w_hh, h_seq, i_s, f_s, g_s, o_s, c_s, tc_s)
    emis = np.zeros((3, 2))
    trans = np.zeros((2, 2))
    se = np.zeros(2)
    crf_alphas(emis, trans, se, se)
    crf_betas(emis, trans, se)
    crf_nll_grad(emis, trans, se, se, np.zeros(3, dtype=np.int64))
    viterbi(emis, trans, se, se)
