"""Hot kernels for the multi-scenario release objective.

Every kernel works on ``base``, a (K, H) array holding, per scenario, the
volume trajectory that would result from releasing nothing::

    base[k, t] = s0 + 3600 * sum(q_k[0..t])

so that for a release plan ``u`` the volumes are ``base[k] - 3600 * cumsum(u)``.
Scenario contributions are combined with ``weights`` (summing to one), which
lets duplicated scenarios be merged exactly.

Each kernel exists twice: a loop version compiled with numba and a
vectorised numpy version. ``RESMPC_DISABLE_NUMBA=1`` picks the latter.
"""
import numpy as np

from ._accel import USE_NUMBA, njit

SECONDS_PER_STEP = 3600.0


# -- sum of norms -----------------------------------------------------------

@njit
def son_value_grad_numba(base, weights, u, w, s_min, s_max, c, mu_vol, mu_dmd, grad):
    K, H = base.shape
    drain = np.empty(H)
    acc = 0.0
    for t in range(H):
        acc += SECONDS_PER_STEP * u[t]
        drain[t] = acc
    gs = np.zeros(H)
    mu2 = mu_vol * mu_vol
    total = 0.0
    for k in range(K):
        n_lo = 0.0
        n_hi = 0.0
        for t in range(H):
            s = base[k, t] - drain[t]
            n_lo += (s - s_min) ** 2
            n_hi += (s_max - s) ** 2
        n_lo = np.sqrt(n_lo + mu2)
        n_hi = np.sqrt(n_hi + mu2)
        wk = weights[k]
        total += wk * (n_lo + n_hi)
        a = wk / n_lo if n_lo > 0.0 else 0.0
        b = wk / n_hi if n_hi > 0.0 else 0.0
        for t in range(H):
            s = base[k, t] - drain[t]
            gs[t] += a * (s - s_min) - b * (s_max - s)
    nd = 0.0
    for t in range(H):
        nd += (u[t] - w[t]) ** 2
    nd = np.sqrt(nd + mu_dmd * mu_dmd)
    inv = 1.0 / nd if nd > 0.0 else 0.0
    # d s_t / d u_j = -3600 for j <= t
    tail = 0.0
    for j in range(H - 1, -1, -1):
        tail += gs[j]
        grad[j] = -SECONDS_PER_STEP * c * tail + (u[j] - w[j]) * inv
    return c * total + nd


def son_value_grad_numpy(base, weights, u, w, s_min, s_max, c, mu_vol, mu_dmd, grad):
    s = base - SECONDS_PER_STEP * np.cumsum(u)
    lo = s - s_min
    hi = s_max - s
    n_lo = np.sqrt(np.einsum("kt,kt->k", lo, lo) + mu_vol * mu_vol)
    n_hi = np.sqrt(np.einsum("kt,kt->k", hi, hi) + mu_vol * mu_vol)
    total = float(weights @ (n_lo + n_hi))
    a = np.divide(weights, n_lo, out=np.zeros_like(n_lo), where=n_lo > 0)
    b = np.divide(weights, n_hi, out=np.zeros_like(n_hi), where=n_hi > 0)
    gs = a @ lo - b @ hi
    e = u - w
    nd = float(np.sqrt(e @ e + mu_dmd * mu_dmd))
    inv = 1.0 / nd if nd > 0.0 else 0.0
    grad[:] = -SECONDS_PER_STEP * c * np.cumsum(gs[::-1])[::-1] + e * inv
    return c * total + nd


@njit
def son_value_numba(base, weights, u, w, s_min, s_max, c, mu_vol, mu_dmd):
    K, H = base.shape
    drain = np.empty(H)
    acc = 0.0
    for t in range(H):
        acc += SECONDS_PER_STEP * u[t]
        drain[t] = acc
    mu2 = mu_vol * mu_vol
    total = 0.0
    for k in range(K):
        n_lo = 0.0
        n_hi = 0.0
        for t in range(H):
            s = base[k, t] - drain[t]
            n_lo += (s - s_min) ** 2
            n_hi += (s_max - s) ** 2
        total += weights[k] * (np.sqrt(n_lo + mu2) + np.sqrt(n_hi + mu2))
    nd = 0.0
    for t in range(H):
        nd += (u[t] - w[t]) ** 2
    return c * total + np.sqrt(nd + mu_dmd * mu_dmd)


def son_value_numpy(base, weights, u, w, s_min, s_max, c, mu_vol, mu_dmd):
    s = base - SECONDS_PER_STEP * np.cumsum(u)
    lo = s - s_min
    hi = s_max - s
    n_lo = np.sqrt(np.einsum("kt,kt->k", lo, lo) + mu_vol * mu_vol)
    n_hi = np.sqrt(np.einsum("kt,kt->k", hi, hi) + mu_vol * mu_vol)
    e = u - w
    return c * float(weights @ (n_lo + n_hi)) + float(np.sqrt(e @ e + mu_dmd * mu_dmd))


# -- quadratic ---------------------------------------------------------------

@njit
def quad_value_grad_numba(base, weights, u, w, s_min, s_max, lam, grad):
    K, H = base.shape
    drain = np.empty(H)
    acc = 0.0
    for t in range(H):
        acc += SECONDS_PER_STEP * u[t]
        drain[t] = acc
    gs = np.zeros(H)
    total = 0.0
    for k in range(K):
        vk = 0.0
        wk = weights[k]
        for t in range(H):
            s = base[k, t] - drain[t]
            vk += (s - s_max) ** 2 + (s - s_min) ** 2
            gs[t] += wk * 2.0 * ((s - s_max) + (s - s_min))
        total += wk * vk
    dm = 0.0
    tail = 0.0
    for j in range(H - 1, -1, -1):
        e = u[j] - w[j]
        dm += e * e
        tail += gs[j]
        grad[j] = -SECONDS_PER_STEP * tail + 2.0 * lam * e
    return total + lam * dm


def quad_value_grad_numpy(base, weights, u, w, s_min, s_max, lam, grad):
    s = base - SECONDS_PER_STEP * np.cumsum(u)
    a = s - s_max
    b = s - s_min
    total = float(weights @ (np.einsum("kt,kt->k", a, a) + np.einsum("kt,kt->k", b, b)))
    gs = 2.0 * (weights @ (a + b))
    e = u - w
    grad[:] = -SECONDS_PER_STEP * np.cumsum(gs[::-1])[::-1] + 2.0 * lam * e
    return total + lam * float(e @ e)


if USE_NUMBA:
    son_value_grad = son_value_grad_numba
    son_value = son_value_numba
    quad_value_grad = quad_value_grad_numba
else:
    son_value_grad = son_value_grad_numpy
    son_value = son_value_numpy
    quad_value_grad = quad_value_grad_numpy

BACKEND = "numba" if USE_NUMBA else "numpy"


# -- solver loop ---------------------------------------------------------------

@njit
def _quad_vg_numba(base, weights, u, w, s_min, s_max, lam, mu_vol, mu_dmd, grad):
    return quad_value_grad_numba(base, weights, u, w, s_min, s_max, lam, grad)


@njit
def _quad_v_numba(base, weights, u, w, s_min, s_max, lam, mu_vol, mu_dmd):
    grad = np.empty(u.size)
    return quad_value_grad_numba(base, weights, u, w, s_min, s_max, lam, grad)


def _quad_vg_numpy(base, weights, u, w, s_min, s_max, lam, mu_vol, mu_dmd, grad):
    return quad_value_grad_numpy(base, weights, u, w, s_min, s_max, lam, grad)


def _quad_v_numpy(base, weights, u, w, s_min, s_max, lam, mu_vol, mu_dmd):
    return quad_value_grad_numpy(base, weights, u, w, s_min, s_max, lam, np.empty(u.size))


def _make_mfista(value_grad, value):
    """Monotone FISTA with backtracking, run over a decreasing smoothing schedule.

    Works on ``x`` in the unit box (updated in place); ``u = u_min + span * x``
    and objective values are divided by ``scale``. ``mus`` holds the relative
    smoothing levels. Accepted objective values are written to ``hist``.
    Returns ``(iterations, history length, converged, final step constant)``.
    """

    def mfista(base, weights, w, s_min, s_max, par, u_min, span, scale, x, mus, gtol,
               max_iters, L, hist):
        H = x.size
        vol_span = s_max - s_min
        g = np.empty(H)
        y = np.empty(H)
        z = np.empty(H)
        d = np.empty(H)
        uu = np.empty(H)
        iters = 0
        nh = 0
        converged = False
        for stage in range(mus.size):
            mu = mus[stage]
            mu_v = mu * vol_span
            mu_d = mu * span
            stage_tol = max(gtol, mu)
            for i in range(H):
                uu[i] = u_min + span * x[i]
            fx = value(base, weights, uu, w, s_min, s_max, par, mu_v, mu_d) / scale
            if not np.isfinite(fx):
                return iters, nh, False, -1.0
            hist[nh] = fx
            nh += 1
            for i in range(H):
                y[i] = x[i]
            t = 1.0
            converged = False
            while iters < max_iters:
                iters += 1
                for i in range(H):
                    uu[i] = u_min + span * y[i]
                fy = value_grad(base, weights, uu, w, s_min, s_max, par, mu_v, mu_d, g) / scale
                if not np.isfinite(fy):
                    return iters, nh, False, -1.0
                for i in range(H):
                    g[i] *= span / scale
                while True:
                    lin = 0.0
                    sq = 0.0
                    for i in range(H):
                        zi = y[i] - g[i] / L
                        if zi < 0.0:
                            zi = 0.0
                        elif zi > 1.0:
                            zi = 1.0
                        z[i] = zi
                        d[i] = zi - y[i]
                        lin += g[i] * d[i]
                        sq += d[i] * d[i]
                        uu[i] = u_min + span * zi
                    fz = value(base, weights, uu, w, s_min, s_max, par, mu_v, mu_d) / scale
                    if not np.isfinite(fz):
                        return iters, nh, False, -1.0
                    if fz <= fy + lin + 0.5 * L * sq + 1e-15 * abs(fy):
                        break
                    L *= 2.0
                    if L > 1e300:
                        return iters, nh, False, -1.0
                gmap = L * np.sqrt(sq)
                t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
                if fz < fx:
                    # accept z; momentum from the previous iterate
                    for i in range(H):
                        y[i] = z[i] + ((t - 1.0) / t_new) * (z[i] - x[i])
                        x[i] = z[i]
                    fx = fz
                    t = t_new
                else:
                    # keep x and restart momentum
                    for i in range(H):
                        y[i] = x[i]
                    t = 1.0
                hist[nh] = fx
                nh += 1
                L *= 0.9
                if gmap <= stage_tol:
                    converged = True
                    break
            if not converged:
                break
        return iters, nh, converged, L

    return mfista


mfista_son_numpy = _make_mfista(son_value_grad_numpy, son_value_numpy)
mfista_quad_numpy = _make_mfista(_quad_vg_numpy, _quad_v_numpy)
mfista_son_numba = njit(cache=False)(_make_mfista(son_value_grad_numba, son_value_numba))
mfista_quad_numba = njit(cache=False)(_make_mfista(_quad_vg_numba, _quad_v_numba))

if USE_NUMBA:
    mfista_son = mfista_son_numba
    mfista_quad = mfista_quad_numba
else:
    mfista_son = mfista_son_numpy
    mfista_quad = mfista_quad_numpy
