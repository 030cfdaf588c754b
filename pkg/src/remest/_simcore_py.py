"""Pure-Python trajectory kernel (fallback for the compiled one).

Implements exactly the same per-slot arithmetic, in the same order, as the
compiled kernel in ``_simcore.pyx``; both consume the SplitMix64 substreams
documented in ``remest.rng``.  All state is kept in flat Python lists so the
two kernels agree bit for bit on the same platform's libm.

The simulation runs in error coordinates: the sensor estimation error and
the remote estimation error follow closed recursions driven only by the
noises, so an unstable plant never overflows the state variables (the
absolute plant state grows like rho(A)^t and cannot be represented over
long horizons, while the errors stay at the error-trace scale).

Slot structure (slot t):
  1. age update from the previous slot's delivery flag; per-slot error
     trace (table lookup for smart mode, predicted filter trace for
     conventional) and saturation check;
  2. remote estimation error of x_t and its squared norm;
  3. measurement noise draw; sensor error update (smart mode);
  4. channel: dropout draw, then transition draw;
  5. delivery bookkeeping (renewal segments, conventional-mode
     measurement update of the error and covariance);
  6. process noise draw for the step to x_{t+1}.
"""

from __future__ import annotations

import math

import numpy as np

BACKEND = "python"

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_INV53 = 2.0 ** -53


class _Stream:
    __slots__ = ("s", "has_g", "g")

    def __init__(self, state):
        self.s = state & _MASK
        self.has_g = False
        self.g = 0.0


def _next_u64(st):
    st.s = (st.s + _GOLDEN) & _MASK
    x = st.s
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & _MASK
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & _MASK
    x ^= x >> 31
    return x


def _uniform(st):
    return (_next_u64(st) >> 11) * _INV53


def _gauss(st):
    if st.has_g:
        st.has_g = False
        return st.g
    while True:
        u = 2.0 * _uniform(st) - 1.0
        v = 2.0 * _uniform(st) - 1.0
        s = u * u + v * v
        if 0.0 < s < 1.0:
            f = math.sqrt(-2.0 * math.log(s) / s)
            st.g = v * f
            st.has_g = True
            return u * f


def _substream(seed, k):
    root = _Stream(seed)
    state = 0
    for _ in range(k + 1):
        state = _next_u64(root)
    return _Stream(state)


def _rows(a):
    arr = np.asarray(a, dtype=float)
    return [[float(v) for v in row] for row in arr]


def simulate(mode, horizon, seed, A, C, K, sqrtW, sqrtV, W, V, P0,
             pcum, d, picum, init_state, ctable, sat_limit, record):
    """Run one seed; see the module docstring for slot structure.

    mode 0 = smart sensor (state estimates over the link), 1 = conventional
    (raw measurements, gated filter at the remote side).  Returns a dict of
    plain scalars and numpy arrays.
    """
    a = _rows(A)
    c_mat = _rows(C)
    k_mat = _rows(K)
    sqw = _rows(sqrtW)
    sqv = _rows(sqrtV)
    w_mat = _rows(W)
    v_mat = _rows(V)
    p0 = _rows(P0)
    pc = _rows(pcum)
    dvec = [float(x) for x in np.asarray(d, dtype=float)]
    pic = [float(x) for x in np.asarray(picum, dtype=float)]
    ct = [float(x) for x in np.asarray(ctable, dtype=float)]

    n = len(a)
    m = len(c_mat)
    m_states = len(pc)
    table_len = len(ct)

    ch = _substream(seed, 0)
    pn = _substream(seed, 1)
    mn = _substream(seed, 2)

    if init_state >= 0:
        h = init_state
    else:
        r = _uniform(ch)
        h = m_states - 1
        for j in range(m_states):
            if r < pic[j]:
                h = j
                break

    es = [0.0] * n       # sensor error x_t - xhat^s_t (previous slot)
    er = [0.0] * n       # remote error of the current slot
    er_prev = [0.0] * n
    w_prev = [0.0] * n   # process noise driving x_{t-1} -> x_t
    vt = [0.0] * m       # measurement noise of the current slot
    epost = [0.0] * n    # conventional-mode posterior error
    epred = [0.0] * n
    ppost = [row[:] for row in p0]
    ppred = [[0.0] * n for _ in range(n)]
    scratch = [[0.0] * n for _ in range(n)]
    tmp_n = [0.0] * n
    tmp_m = [0.0] * m

    delta_counts = np.zeros(horizon + 2, dtype=np.int64)
    post_counts = np.zeros(m_states, dtype=np.int64)
    cycle_counts = np.zeros(horizon + 2, dtype=np.int64)
    if record:
        traj_state = np.zeros(horizon, dtype=np.int32)
        traj_gamma = np.zeros(horizon, dtype=np.int8)
        traj_delta = np.zeros(horizon, dtype=np.int64)
        traj_trace = np.zeros(horizon, dtype=np.float64)

    sum_trace = 0.0
    sum_sqerr = 0.0
    delta = 0
    gamma_prev = 1
    n_success = 0
    prefix = -1
    last_success_t = -1
    saturated = False
    steps = 0
    max_delta = 0
    max_cycle = 0

    for t in range(horizon):
        if gamma_prev == 1:
            delta = 0
        else:
            delta += 1

        if mode == 0:
            if delta >= table_len:
                saturated = True
                break
            trace = ct[delta]
        else:
            # covariance prediction A Ppost A^T + W, symmetrized
            for i in range(n):
                for j in range(n):
                    acc = 0.0
                    for kk in range(n):
                        acc += a[i][kk] * ppost[kk][j]
                    scratch[i][j] = acc
            for i in range(n):
                for j in range(n):
                    acc = 0.0
                    for kk in range(n):
                        acc += scratch[i][kk] * a[j][kk]
                    ppred[i][j] = acc + w_mat[i][j]
            for i in range(n):
                for j in range(i + 1, n):
                    s = 0.5 * (ppred[i][j] + ppred[j][i])
                    ppred[i][j] = s
                    ppred[j][i] = s
            trace = 0.0
            for i in range(n):
                trace += ppred[i][i]
            if not (trace <= sat_limit):
                saturated = True
                break

        sum_trace += trace
        if delta > max_delta:
            max_delta = delta
        delta_counts[delta] += 1

        # remote error: a fresh delivery carries the sensor estimate of the
        # previous slot, otherwise the previous remote estimate is held
        if mode == 0:
            if delta == 0:
                for i in range(n):
                    acc = 0.0
                    for j in range(n):
                        acc += a[i][j] * es[j]
                    er[i] = -acc - w_prev[i]
            else:
                for i in range(n):
                    acc = 0.0
                    for j in range(n):
                        acc += a[i][j] * er_prev[j]
                    er[i] = acc - w_prev[i]
            est = er
        else:
            for i in range(n):
                acc = 0.0
                for j in range(n):
                    acc += a[i][j] * epost[j]
                epred[i] = acc - w_prev[i]
            est = epred
        err = 0.0
        for i in range(n):
            err += est[i] * est[i]
        sum_sqerr += err

        if record:
            traj_state[t] = h
            traj_delta[t] = delta
            traj_trace[t] = trace

        # measurement noise of slot t
        for i in range(m):
            tmp_m[i] = _gauss(mn)
        for i in range(m):
            acc = 0.0
            for j in range(m):
                acc += sqv[i][j] * tmp_m[j]
            vt[i] = acc

        if mode == 0:
            # sensor error: predict, then correct with the steady gain
            for i in range(n):
                acc = 0.0
                for j in range(n):
                    acc += a[i][j] * es[j]
                tmp_n[i] = acc + w_prev[i]
            for i in range(m):
                acc = 0.0
                for j in range(n):
                    acc += c_mat[i][j] * tmp_n[j]
                tmp_m[i] = acc + vt[i]
            for i in range(n):
                acc = 0.0
                for j in range(m):
                    acc += k_mat[i][j] * tmp_m[j]
                es[i] = tmp_n[i] - acc

        dropped = _uniform(ch) < dvec[h]
        gamma = 0 if dropped else 1
        r = _uniform(ch)
        hnext = m_states - 1
        row = pc[h]
        for j in range(m_states):
            if r < row[j]:
                hnext = j
                break
        if record:
            traj_gamma[t] = gamma

        if gamma == 1:
            if mode == 1:
                _gated_update(n, m, c_mat, v_mat, ppred, epred, vt,
                              ppost, epost)
            n_success += 1
            if n_success == 1:
                prefix = t + 1
            else:
                length = t - last_success_t
                cycle_counts[length] += 1
                if length > max_cycle:
                    max_cycle = length
            last_success_t = t
            post_counts[hnext] += 1
        elif mode == 1:
            for i in range(n):
                epost[i] = epred[i]
                for j in range(n):
                    ppost[i][j] = ppred[i][j]

        gamma_prev = gamma
        h = hnext

        # process noise for the step to t+1
        for i in range(n):
            tmp_n[i] = _gauss(pn)
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc += sqw[i][j] * tmp_n[j]
            w_prev[i] = acc
        for i in range(n):
            er_prev[i] = er[i]

        steps = t + 1

    out = {
        "steps": steps,
        "sum_trace": sum_trace,
        "sum_sqerr": sum_sqerr,
        "delta_counts": delta_counts[: max_delta + 1].copy(),
        "post_counts": post_counts,
        "cycle_counts": cycle_counts[: max_cycle + 1].copy(),
        "prefix": prefix,
        "n_success": n_success,
        "saturated": saturated,
    }
    if record:
        out["trajectory"] = {
            "channel_state": traj_state[:steps].copy(),
            "gamma": traj_gamma[:steps].copy(),
            "delta": traj_delta[:steps].copy(),
            "trace": traj_trace[:steps].copy(),
        }
    return out


def _gated_update(n, m, c_mat, v_mat, ppred, epred, vt, ppost, epost):
    """Measurement update of the conventional remote filter.

    Works on the error directly: epost = (I - G C) epred + G v with G the
    gain from the innovation system, solved by Gaussian elimination with
    partial pivoting.  Writes the posterior pair in place.
    """
    # s = C Ppred C^T + V, t_mat = C Ppred
    t_mat = [[0.0] * n for _ in range(m)]
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for kk in range(n):
                acc += c_mat[i][kk] * ppred[kk][j]
            t_mat[i][j] = acc
    s_mat = [[0.0] * m for _ in range(m)]
    for i in range(m):
        for j in range(m):
            acc = 0.0
            for kk in range(n):
                acc += t_mat[i][kk] * c_mat[j][kk]
            s_mat[i][j] = acc + v_mat[i][j]
    # solve s z = t  (z is m x n); gain = z^T
    aug = [s_mat[i][:] + t_mat[i][:] for i in range(m)]
    for col in range(m):
        piv = col
        best = abs(aug[col][col])
        for r in range(col + 1, m):
            if abs(aug[r][col]) > best:
                best = abs(aug[r][col])
                piv = r
        if best == 0.0:
            raise ZeroDivisionError("singular innovation covariance")
        if piv != col:
            aug[col], aug[piv] = aug[piv], aug[col]
        prow = aug[col]
        for r in range(col + 1, m):
            f = aug[r][col] / prow[col]
            if f != 0.0:
                rrow = aug[r]
                for cc in range(col, m + n):
                    rrow[cc] -= f * prow[cc]
    z = [[0.0] * n for _ in range(m)]
    for r in range(m - 1, -1, -1):
        for cc in range(n):
            acc = aug[r][m + cc]
            for r2 in range(r + 1, m):
                acc -= aug[r][r2] * z[r2][cc]
            z[r][cc] = acc / aug[r][r]
    # innovation seen through the error: -C epred + v
    innov = [0.0] * m
    for i in range(m):
        acc = 0.0
        for j in range(n):
            acc += c_mat[i][j] * epred[j]
        innov[i] = vt[i] - acc
    for i in range(n):
        acc = 0.0
        for j in range(m):
            acc += z[j][i] * innov[j]
        epost[i] = epred[i] + acc
    # posterior covariance (I - gain C) Ppred, symmetrized
    gc = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            acc = 0.0
            for kk in range(m):
                acc += z[kk][i] * c_mat[kk][j]
            gc[i][j] = (1.0 if i == j else 0.0) - acc
    for i in range(n):
        for j in range(n):
            acc = 0.0
            for kk in range(n):
                acc += gc[i][kk] * ppred[kk][j]
            ppost[i][j] = acc
    for i in range(n):
        for j in range(i + 1, n):
            s = 0.5 * (ppost[i][j] + ppost[j][i])
            ppost[i][j] = s
            ppost[j][i] = s
