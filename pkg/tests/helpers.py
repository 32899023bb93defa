"""Independent oracles shared by the test modules.

Everything here is deliberately written the slow, obvious way (exhaustive
enumeration, step-by-step cells, central differences) and must stay
independent of the library code paths it checks.
"""

from itertools import product

import numpy as np


def enumerate_crf_paths(emis, trans, start, end):
    """Score of every possible label path, in lexicographic path order."""
    n, n_labels = emis.shape
    scores = []
    paths = []
    for path in product(range(n_labels), repeat=n):
        s = start[path[0]] + end[path[-1]]
        for t, lab in enumerate(path):
            s += emis[t, lab]
        for t in range(1, n):
            s += trans[path[t - 1], path[t]]
        scores.append(s)
        paths.append(path)
    return np.array(scores), paths


def brute_log_partition(emis, trans, start, end):
    scores, _ = enumerate_crf_paths(emis, trans, start, end)
    m = scores.max()
    return m + np.log(np.exp(scores - m).sum())


def brute_best_path(emis, trans, start, end):
    scores, paths = enumerate_crf_paths(emis, trans, start, end)
    best = int(np.argmax(scores))
    return scores[best], paths[best]


def lstm_cell_reference(x_seq, w_x, w_h, b, reverse=False):
    """Plain per-step LSTM, one gate at a time, for cross-checking."""

    def sigmoid(v):
        return 1.0 / (1.0 + np.exp(-v))

    h_dim = w_h.shape[1]
    order = range(len(x_seq) - 1, -1, -1) if reverse else range(len(x_seq))
    h = np.zeros(h_dim)
    c = np.zeros(h_dim)
    out = np.zeros((len(x_seq), h_dim))
    for t in order:
        z = w_x @ x_seq[t] + w_h @ h + b
        i = sigmoid(z[0:h_dim])
        f = sigmoid(z[h_dim : 2 * h_dim])
        g = np.tanh(z[2 * h_dim : 3 * h_dim])
        o = sigmoid(z[3 * h_dim : 4 * h_dim])
        c = f * c + i * g
        h = o * np.tanh(c)
        out[t] = h
    return out


def central_difference(fn, arr, indices=None, step=1e-5):
    """Central finite differences of scalar fn w.r.t. selected entries of arr.

    fn must read arr by reference (mutating entries changes what fn sees).
    Returns a dict {flat_index: derivative}.
    """
    flat = arr.reshape(-1)
    if indices is None:
        indices = range(flat.size)
    out = {}
    for idx in indices:
        orig = flat[idx]
        flat[idx] = orig + step
        up = fn()
        flat[idx] = orig - step
        down = fn()
        flat[idx] = orig
        out[idx] = (up - down) / (2.0 * step)
    return out


def relative_error(analytic, numeric, floor=1e-6):
    """Elementwise |a - n| / max(|a|, |n|, floor).

    The floor keeps the comparison meaningful where the true derivative is
    essentially zero and both sides only carry round-off noise.
    """
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def assert_gradients_match(fn, params_iter, analytic_lookup, tol=1e-4, step=1e-5, rng=None, sample=None):
    """Finite-difference check over (name, array) parameter pairs.

    analytic_lookup(name) must return the analytic gradient array for the
    parameter of the same shape.  When sample is given, at most that many
    randomly chosen entries per tensor are probed (rng required); otherwise
    every entry is checked.
    """
    worst = (0.0, None)
    for name, arr in params_iter:
        ana = analytic_lookup(name)
        assert ana.shape == arr.shape, f"{name}: gradient shape {ana.shape} != {arr.shape}"
        if sample is not None and arr.size > sample:
            idx = rng.choice(arr.size, size=sample, replace=False)
        else:
            idx = range(arr.size)
        numeric = central_difference(fn, arr, idx, step=step)
        for flat_idx, num in numeric.items():
            err = relative_error(ana.reshape(-1)[flat_idx], num)
            if err > worst[0]:
                worst = (float(err), f"{name}[{flat_idx}]")
            assert err <= tol, (
                f"{name}[{flat_idx}]: analytic {ana.reshape(-1)[flat_idx]:.8g} "
                f"vs numeric {num:.8g} (rel err {err:.3g})"
            )
    return worst
