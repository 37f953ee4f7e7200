"""Hot numeric kernels with a compiled and a pure-numpy implementation.

Every kernel exists twice: ``_<name>_numba`` (plain loops, compiled with
``@njit``) and ``_<name>_numpy`` (vectorised). The public name is bound to
the compiled variant unless numba is missing or ``OPSURV_DISABLE_NUMBA`` is
set. Both variants are importable so tests and benchmarks can compare them.
"""

import math

import numpy as np

from ._accel import JIT_OPTIONS, USE_NUMBA, njit

PI_M14 = math.pi ** -0.25
SQRT2 = math.sqrt(2.0)


# -- Hermite recurrence -----------------------------------------------------

def _hermite_table_numpy(t, max_degree, weighted):
    t = np.ascontiguousarray(t, dtype=np.float64)
    out = np.empty((t.shape[0], max_degree + 1))
    if weighted:
        out[:, 0] = PI_M14 * np.exp(-0.5 * t * t)
    else:
        out[:, 0] = PI_M14
    if max_degree >= 1:
        out[:, 1] = SQRT2 * t * out[:, 0]
    for j in range(1, max_degree):
        out[:, j + 1] = (t * math.sqrt(2.0 / (j + 1)) * out[:, j]
                         - math.sqrt(j / (j + 1.0)) * out[:, j - 1])
    return out


@njit(**JIT_OPTIONS)
def _hermite_table_numba(t, max_degree, weighted):
    n = t.shape[0]
    out = np.empty((n, max_degree + 1))
    for i in range(n):
        ti = t[i]
        h_prev = PI_M14 * math.exp(-0.5 * ti * ti) if weighted else PI_M14
        out[i, 0] = h_prev
        if max_degree >= 1:
            h = SQRT2 * ti * h_prev
            out[i, 1] = h
            for j in range(1, max_degree):
                h_next = (ti * math.sqrt(2.0 / (j + 1)) * h
                          - math.sqrt(j / (j + 1.0)) * h_prev)
                out[i, j + 1] = h_next
                h_prev = h
                h = h_next
    return out


# -- pairwise ranking loss and its vector-Jacobian product -------------------

def _ranking_numpy(gram, coeffs, alphas, times, events, eps):
    n_rec, n_events, k = coeffs.shape
    grad_c = np.zeros_like(coeffs)
    grad_a = np.zeros_like(alphas)
    idx = np.flatnonzero(events > 0)
    if idx.size == 0:
        return 0.0, grad_c, grad_a
    ev = events[idx] - 1
    m = idx.size
    a_sel = coeffs[:, ev, :].transpose(1, 0, 2)          # (m, n, k): a[n, e_m]
    alpha_sel = alphas[:, ev].T                          # (m, n)
    ga = np.einsum("mkl,mnl->mnk", gram[idx], a_sel)
    w = np.maximum(np.sum(a_sel * a_sel, axis=-1), eps)
    f = np.sum(a_sel * ga, axis=-1) / w
    cif = alpha_sel * f
    rows = np.arange(m)
    own = cif[rows, idx]
    admissible = times[idx][:, None] < times[None, :]
    terms = np.where(admissible, np.exp(-(own[:, None] - cif)), 0.0)
    loss = float(terms.sum())

    d_cif = terms.copy()
    d_cif[rows, idx] -= terms.sum(axis=1)
    d_alpha = d_cif * f
    d_f = d_cif * alpha_sel
    d_coef = (d_f / w)[..., None] * (2.0 * ga - 2.0 * f[..., None] * a_sel)
    for e in range(n_events):
        sel = ev == e
        if sel.any():
            grad_c[:, e, :] += d_coef[sel].sum(axis=0)
            grad_a[:, e] += d_alpha[sel].sum(axis=0)
    return loss, grad_c, grad_a


@njit(**JIT_OPTIONS)
def _ranking_numba(gram, coeffs, alphas, times, events, eps):
    n_rec, n_events, k = coeffs.shape
    grad_c = np.zeros_like(coeffs)
    grad_a = np.zeros_like(alphas)
    ga = np.empty(k)
    ga_own = np.empty(k)
    loss = 0.0
    for m in range(n_rec):
        e = events[m] - 1
        if e < 0:
            continue
        g = gram[m]
        # subject m's own CIF at its event time
        w_own = 0.0
        q_own = 0.0
        for i in range(k):
            w_own += coeffs[m, e, i] * coeffs[m, e, i]
            acc = 0.0
            for j in range(k):
                acc += g[i, j] * coeffs[m, e, j]
            ga_own[i] = acc
        for i in range(k):
            q_own += coeffs[m, e, i] * ga_own[i]
        w_own = max(w_own, eps)
        f_own = q_own / w_own
        c_own = alphas[m, e] * f_own

        row_sum = 0.0
        for n in range(n_rec):
            if not times[m] < times[n]:
                continue
            w = 0.0
            q = 0.0
            for i in range(k):
                w += coeffs[n, e, i] * coeffs[n, e, i]
                acc = 0.0
                for j in range(k):
                    acc += g[i, j] * coeffs[n, e, j]
                ga[i] = acc
            for i in range(k):
                q += coeffs[n, e, i] * ga[i]
            w = max(w, eps)
            f = q / w
            term = math.exp(-(c_own - alphas[n, e] * f))
            loss += term
            row_sum += term
            grad_a[n, e] += term * f
            scale = term * alphas[n, e] / w
            for i in range(k):
                grad_c[n, e, i] += scale * (2.0 * ga[i] - 2.0 * f * coeffs[n, e, i])
        if row_sum != 0.0:
            grad_a[m, e] -= row_sum * f_own
            scale = -row_sum * alphas[m, e] / w_own
            for i in range(k):
                grad_c[m, e, i] += scale * (2.0 * ga_own[i] - 2.0 * f_own * coeffs[m, e, i])
    return loss, grad_c, grad_a


# -- concordance counting ---------------------------------------------------

def _concordance_numpy(risk, times, case):
    own = np.diagonal(risk)[:, None]
    other = risk.T                                       # other[m, n] = risk[n, m]
    comparable = case[:, None] & (times[None, :] > times[:, None])
    concordant = np.count_nonzero(comparable & (own > other))
    tied = np.count_nonzero(comparable & (own == other))
    return concordant + 0.5 * tied, int(np.count_nonzero(comparable))


@njit(**JIT_OPTIONS)
def _concordance_numba(risk, times, case):
    n = times.shape[0]
    concordant = 0.0
    comparable = 0
    for m in range(n):
        if not case[m]:
            continue
        own = risk[m, m]
        for j in range(n):
            if times[j] > times[m]:
                comparable += 1
                other = risk[j, m]
                if own > other:
                    concordant += 1.0
                elif own == other:
                    concordant += 0.5
    return concordant, comparable


# -- dispatch ---------------------------------------------------------------

def hermite_table(t, max_degree, weighted=False):
    """Rows of ``h_0..h_J`` at each ``t``; with ``weighted`` the factor
    ``exp(-t^2/2)`` is folded into the starting value of the recurrence."""
    t = np.ascontiguousarray(np.atleast_1d(t), dtype=np.float64)
    if USE_NUMBA:
        return _hermite_table_numba(t, int(max_degree), bool(weighted))
    return _hermite_table_numpy(t, int(max_degree), bool(weighted))


def ranking_loss_and_vjp(gram, coeffs, alphas, times, events, eps):
    """Pairwise ranking loss over one batch plus its gradient.

    ``gram[m]`` is the quadrature Gram matrix at ``times[m]``, so that
    ``F_e(times[m] | x_n) = a^T gram[m] a / max(|a|^2, eps)`` with
    ``a = coeffs[n, e]``. Returns ``(loss, d loss/d coeffs, d loss/d alphas)``.
    """
    args = (np.ascontiguousarray(gram, dtype=np.float64),
            np.ascontiguousarray(coeffs, dtype=np.float64),
            np.ascontiguousarray(alphas, dtype=np.float64),
            np.ascontiguousarray(times, dtype=np.float64),
            np.ascontiguousarray(events, dtype=np.int64),
            float(eps))
    if USE_NUMBA:
        return _ranking_numba(*args)
    return _ranking_numpy(*args)


def concordance_counts(risk, times, case):
    """Count concordant (ties as one half) and comparable pairs.

    A pair ``(m, n)`` is comparable when ``case[m]`` holds and
    ``times[n] > times[m]``; it is concordant when
    ``risk[m, m] > risk[n, m]``, i.e. the risk column ``m`` holds every
    subject's score at subject ``m``'s time.
    """
    risk = np.asarray(risk, dtype=np.float64)
    times = np.ascontiguousarray(times, dtype=np.float64)
    case = np.ascontiguousarray(case, dtype=np.bool_)
    if USE_NUMBA:
        return _concordance_numba(risk, times, case)
    return _concordance_numpy(risk, times, case)


def gram_matrices(times, nodes, weights, max_degree):
    """Quadrature Gram matrices ``(t/2) sum_g w_g phi(u_g) phi(u_g)^T`` with
    ``u_g = (t/2)(r_g + 1)`` and ``phi`` the weighted Hermite functions."""
    times = np.asarray(times, dtype=np.float64)
    half = 0.5 * times
    u = half[:, None] * (nodes[None, :] + 1.0)
    phi = hermite_table(u.ravel(), max_degree, weighted=True)
    phi = phi.reshape(times.shape[0], nodes.shape[0], max_degree + 1)
    return half[:, None, None] * np.einsum("g,mgk,mgl->mkl", weights, phi, phi)
