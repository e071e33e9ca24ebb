"""Pure numpy/Python versions of the compiled kernels.

Semantics are identical to ``_kernels.pyx``; the test suite runs both.
"""

from __future__ import annotations

import numpy as np

_CHUNK = 1 << 22  # elements per (params x triples x classes) block


def fused_accuracy(logp_v, logp_e, ind, cat_v, cat_e, labels, params, silence_id):
    """Tune-set accuracy of reliability fusion for a batch of parameter rows.

    ``params`` rows are ``[t_lv, t_dv, t_le, t_de, w1..w4, a_vs, a_vu, a_es, a_eu]``.
    ``cat_*`` code each modality's argmax: 0 command, 1 silence, 2 unknown.
    Rejected triples count as correct only when the label is silence.
    """
    params = np.atleast_2d(params)
    T, C = logp_v.shape
    out = np.empty(params.shape[0])
    if T == 0:
        out[:] = 0.0
        return out
    arg_v = np.argmax(logp_v, axis=1)
    arg_e = np.argmax(logp_e, axis=1)
    step = max(1, _CHUNK // max(1, T * C))
    for lo in range(0, params.shape[0], step):
        p = params[lo:lo + step]
        rv = (ind[None, :, 0] > p[:, None, 0]) & (ind[None, :, 1] > p[:, None, 1])
        re = (ind[None, :, 2] > p[:, None, 2]) & (ind[None, :, 3] > p[:, None, 3])
        av = np.ones((p.shape[0], T))
        ae = np.ones((p.shape[0], T))
        av = np.where(cat_v[None, :] == 1, p[:, None, 8], av)
        av = np.where(cat_v[None, :] == 2, p[:, None, 9], av)
        ae = np.where(cat_e[None, :] == 1, p[:, None, 10], ae)
        ae = np.where(cat_e[None, :] == 2, p[:, None, 11], ae)
        z = (p[:, None, 4] * av * ind[None, :, 0] + p[:, None, 5] * av * ind[None, :, 1]
             + p[:, None, 6] * ae * ind[None, :, 2] + p[:, None, 7] * ae * ind[None, :, 3])
        lam = 1.0 / (1.0 + np.exp(-z))
        score = lam[:, :, None] * logp_v[None] + (1.0 - lam[:, :, None]) * logp_e[None]
        fused = np.argmax(score, axis=2)
        pred = np.where(rv & re, fused, np.where(rv, arg_v[None], arg_e[None]))
        ok = np.where(~rv & ~re, (labels == silence_id)[None, :], pred == labels[None, :])
        out[lo:lo + step] = ok.sum(axis=1) / T
    return out


def edit_counts(ref, hyp):
    """(S, D, I, C) of a minimum-edit alignment; ties prefer S, then D, then I."""
    ref = ref.tolist() if hasattr(ref, "tolist") else list(ref)
    hyp = hyp.tolist() if hasattr(hyp, "tolist") else list(hyp)
    n, m = len(ref), len(hyp)
    dist = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        dist[i][0] = i
    for j in range(m + 1):
        dist[0][j] = j
    for i in range(1, n + 1):
        ri = ref[i - 1]
        row, prev = dist[i], dist[i - 1]
        for j in range(1, m + 1):
            row[j] = min(prev[j - 1] + (ri != hyp[j - 1]), prev[j] + 1, row[j - 1] + 1)
    S = D = I = C = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dist[i][j] == dist[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            if ref[i - 1] == hyp[j - 1]:
                C += 1
            else:
                S += 1
            i, j = i - 1, j - 1
        elif i > 0 and dist[i][j] == dist[i - 1][j] + 1:
            D += 1
            i -= 1
        else:
            I += 1
            j -= 1
    return S, D, I, C
