"""Pure-numpy mixture kernels; the reference the compiled core must match.

Both functions take the noised-mixture parameters directly: every
component k is N(sqrt(alpha) * means[k], C_k I) with
C_k = alpha * scales[k]**2 + (1 - alpha).
"""

import numpy as np

LOG_2PI = float(np.log(2.0 * np.pi))


def _component_terms(x, alpha, log_w, means, scales):
    var = alpha * scales * scales + (1.0 - alpha)  # (K,)
    diff = x[:, None, :] - np.sqrt(alpha) * means[None, :, :]  # (n, K, d)
    sq = np.einsum("nkd,nkd->nk", diff, diff)
    d = x.shape[1]
    logp = log_w[None, :] - 0.5 * sq / var[None, :] - 0.5 * d * (LOG_2PI + np.log(var))[None, :]
    return diff, var, logp


def mixture_eps(x, alpha, log_w, means, scales):
    """Noise prediction -sqrt(1 - alpha) * grad log p_t for each row of x."""
    diff, var, logp = _component_terms(x, alpha, log_w, means, scales)
    logp -= logp.max(axis=1, keepdims=True)
    r = np.exp(logp)
    r /= r.sum(axis=1, keepdims=True)
    return np.sqrt(1.0 - alpha) * np.einsum("nk,nkd->nd", r / var[None, :], diff)


def mixture_logpdf(x, alpha, log_w, means, scales):
    """log p_t(x) for each row of x."""
    _, _, logp = _component_terms(x, alpha, log_w, means, scales)
    m = logp.max(axis=1)
    return m + np.log(np.exp(logp - m[:, None]).sum(axis=1))
