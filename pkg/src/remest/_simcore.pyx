# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled trajectory kernel.

Mirrors ``_simcore_py`` operation for operation (same SplitMix64 streams,
same error-coordinate recursions, same floating-point evaluation order) so
both backends produce identical trajectories on the same platform's libm.
The hot loop runs without the GIL, so multi-seed runs can use real threads.
"""

from libc.math cimport log, sqrt
from libc.stdint cimport int8_t, int32_t, int64_t, uint64_t

import numpy as np

BACKEND = "compiled"

cdef enum:
    MAXDIM = 32

cdef double INV53 = 1.0 / 9007199254740992.0  # 2**-53, exact


cdef struct Stream:
    uint64_t s
    bint has_g
    double g


cdef inline uint64_t _next_u64(Stream* st) noexcept nogil:
    st.s = st.s + <uint64_t>0x9E3779B97F4A7C15
    cdef uint64_t x = st.s
    x ^= x >> 30
    x = x * <uint64_t>0xBF58476D1CE4E5B9
    x ^= x >> 27
    x = x * <uint64_t>0x94D049BB133111EB
    x ^= x >> 31
    return x


cdef inline double _uniform(Stream* st) noexcept nogil:
    return <double>(_next_u64(st) >> 11) * INV53


cdef inline double _gauss(Stream* st) noexcept nogil:
    cdef double u, v, s, f
    if st.has_g:
        st.has_g = False
        return st.g
    while True:
        u = 2.0 * _uniform(st) - 1.0
        v = 2.0 * _uniform(st) - 1.0
        s = u * u + v * v
        if 0.0 < s < 1.0:
            f = sqrt(-2.0 * log(s) / s)
            st.g = v * f
            st.has_g = True
            return u * f


cdef inline void _substream(uint64_t seed, int k, Stream* out) noexcept nogil:
    cdef Stream root
    cdef uint64_t state = 0
    cdef int i
    root.s = seed
    root.has_g = False
    for i in range(k + 1):
        state = _next_u64(&root)
    out.s = state
    out.has_g = False
    out.g = 0.0


cdef int _gated_update(int n, int m, double[:, ::1] c_mat, double[:, ::1] v_mat,
                       double[:, ::1] ppred, double* epred, double* vt,
                       double[:, ::1] ppost, double* epost,
                       double[:, ::1] t_mat, double[:, ::1] aug,
                       double[:, ::1] z, double[:, ::1] gc,
                       double* innov) noexcept nogil:
    """Measurement update on the error; returns 1 on a singular system."""
    cdef int i, j, kk, col, piv, r, cc, r2
    cdef double acc, best, f, s
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for kk in range(n):
                acc += c_mat[i, kk] * ppred[kk, j]
            t_mat[i, j] = acc
    for i in range(m):
        for j in range(m):
            acc = 0.0
            for kk in range(n):
                acc += t_mat[i, kk] * c_mat[j, kk]
            aug[i, j] = acc + v_mat[i, j]
        for j in range(n):
            aug[i, m + j] = t_mat[i, j]
    for col in range(m):
        piv = col
        best = aug[col, col] if aug[col, col] >= 0 else -aug[col, col]
        for r in range(col + 1, m):
            f = aug[r, col] if aug[r, col] >= 0 else -aug[r, col]
            if f > best:
                best = f
                piv = r
        if best == 0.0:
            return 1
        if piv != col:
            for cc in range(m + n):
                f = aug[col, cc]
                aug[col, cc] = aug[piv, cc]
                aug[piv, cc] = f
        for r in range(col + 1, m):
            f = aug[r, col] / aug[col, col]
            if f != 0.0:
                for cc in range(col, m + n):
                    aug[r, cc] -= f * aug[col, cc]
    for r in range(m - 1, -1, -1):
        for cc in range(n):
            acc = aug[r, m + cc]
            for r2 in range(r + 1, m):
                acc -= aug[r, r2] * z[r2, cc]
            z[r, cc] = acc / aug[r, r]
    for i in range(m):
        acc = 0.0
        for j in range(n):
            acc += c_mat[i, j] * epred[j]
        innov[i] = vt[i] - acc
    for i in range(n):
        acc = 0.0
        for j in range(m):
            acc += z[j, i] * innov[j]
        epost[i] = epred[i] + acc
    for i in range(n):
        for j in range(n):
            acc = 0.0
            for kk in range(m):
                acc += z[kk, i] * c_mat[kk, j]
            gc[i, j] = (1.0 if i == j else 0.0) - acc
    for i in range(n):
        for j in range(n):
            acc = 0.0
            for kk in range(n):
                acc += gc[i, kk] * ppred[kk, j]
            ppost[i, j] = acc
    for i in range(n):
        for j in range(i + 1, n):
            s = 0.5 * (ppost[i, j] + ppost[j, i])
            ppost[i, j] = s
            ppost[j, i] = s
    return 0


def simulate(mode, horizon, seed, A, C, K, sqrtW, sqrtV, W, V, P0,
             pcum, d, picum, init_state, ctable, sat_limit, record):
    """Compiled counterpart of ``_simcore_py.simulate``; same contract."""
    cdef double[:, ::1] a = np.ascontiguousarray(A, dtype=np.float64)
    cdef double[:, ::1] c_mat = np.ascontiguousarray(C, dtype=np.float64)
    cdef double[:, ::1] k_mat = np.ascontiguousarray(K, dtype=np.float64)
    cdef double[:, ::1] sqw = np.ascontiguousarray(sqrtW, dtype=np.float64)
    cdef double[:, ::1] sqv = np.ascontiguousarray(sqrtV, dtype=np.float64)
    cdef double[:, ::1] w_mat = np.ascontiguousarray(W, dtype=np.float64)
    cdef double[:, ::1] v_mat = np.ascontiguousarray(V, dtype=np.float64)
    cdef double[:, ::1] pc = np.ascontiguousarray(pcum, dtype=np.float64)
    cdef double[::1] dvec = np.ascontiguousarray(d, dtype=np.float64)
    cdef double[::1] pic = np.ascontiguousarray(picum, dtype=np.float64)
    cdef double[::1] ct = np.ascontiguousarray(ctable, dtype=np.float64)
    cdef double[:, ::1] ppost = np.ascontiguousarray(P0, dtype=np.float64).copy()

    cdef int n = a.shape[0]
    cdef int m = c_mat.shape[0]
    cdef int m_states = pc.shape[0]
    cdef int table_len = ct.shape[0]
    cdef int cmode = mode
    cdef int64_t chorizon = horizon
    cdef int cinit = init_state
    cdef double csat = sat_limit
    cdef bint crecord = record
    if n > MAXDIM or m > MAXDIM:
        raise ValueError(f"kernel supports dimensions up to {MAXDIM}")

    cdef double[:, ::1] ppred = np.zeros((n, n))
    cdef double[:, ::1] scratch = np.zeros((n, n))
    cdef double[:, ::1] t_mat = np.zeros((m, n))
    cdef double[:, ::1] aug = np.zeros((m, m + n))
    cdef double[:, ::1] z = np.zeros((m, n))
    cdef double[:, ::1] gc = np.zeros((n, n))

    cdef double es[MAXDIM]
    cdef double er[MAXDIM]
    cdef double er_prev[MAXDIM]
    cdef double w_prev[MAXDIM]
    cdef double vt[MAXDIM]
    cdef double epost[MAXDIM]
    cdef double epred[MAXDIM]
    cdef double tmp_n[MAXDIM]
    cdef double tmp_m[MAXDIM]
    cdef double innov[MAXDIM]
    cdef int i, j, kk

    for i in range(n):
        es[i] = 0.0
        er[i] = 0.0
        er_prev[i] = 0.0
        w_prev[i] = 0.0
        epost[i] = 0.0
        epred[i] = 0.0

    delta_counts_arr = np.zeros(horizon + 2, dtype=np.int64)
    post_counts_arr = np.zeros(m_states, dtype=np.int64)
    cycle_counts_arr = np.zeros(horizon + 2, dtype=np.int64)
    cdef int64_t[::1] delta_counts = delta_counts_arr
    cdef int64_t[::1] post_counts = post_counts_arr
    cdef int64_t[::1] cycle_counts = cycle_counts_arr

    traj_state_arr = np.zeros(horizon if record else 0, dtype=np.int32)
    traj_gamma_arr = np.zeros(horizon if record else 0, dtype=np.int8)
    traj_delta_arr = np.zeros(horizon if record else 0, dtype=np.int64)
    traj_trace_arr = np.zeros(horizon if record else 0, dtype=np.float64)
    cdef int32_t[::1] traj_state = traj_state_arr
    cdef int8_t[::1] traj_gamma = traj_gamma_arr
    cdef int64_t[::1] traj_delta = traj_delta_arr
    cdef double[::1] traj_trace = traj_trace_arr

    cdef Stream ch, pn, mn
    _substream(<uint64_t>seed, 0, &ch)
    _substream(<uint64_t>seed, 1, &pn)
    _substream(<uint64_t>seed, 2, &mn)

    cdef int h
    cdef double r
    if cinit >= 0:
        h = cinit
    else:
        r = _uniform(&ch)
        h = m_states - 1
        for j in range(m_states):
            if r < pic[j]:
                h = j
                break

    cdef double sum_trace = 0.0
    cdef double sum_sqerr = 0.0
    cdef int64_t delta = 0
    cdef int gamma_prev = 1
    cdef int gamma
    cdef int64_t n_success = 0
    cdef int64_t prefix = -1
    cdef int64_t last_success_t = -1
    cdef bint saturated = False
    cdef bint singular = False
    cdef int64_t steps = 0
    cdef int64_t max_delta = 0
    cdef int64_t max_cycle = 0
    cdef int64_t t, length
    cdef int hnext
    cdef double trace, acc, err, e
    cdef bint dropped

    with nogil:
        for t in range(chorizon):
            if gamma_prev == 1:
                delta = 0
            else:
                delta += 1

            if cmode == 0:
                if delta >= table_len:
                    saturated = True
                    break
                trace = ct[delta]
            else:
                for i in range(n):
                    for j in range(n):
                        acc = 0.0
                        for kk in range(n):
                            acc += a[i, kk] * ppost[kk, j]
                        scratch[i, j] = acc
                for i in range(n):
                    for j in range(n):
                        acc = 0.0
                        for kk in range(n):
                            acc += scratch[i, kk] * a[j, kk]
                        ppred[i, j] = acc + w_mat[i, j]
                for i in range(n):
                    for j in range(i + 1, n):
                        e = 0.5 * (ppred[i, j] + ppred[j, i])
                        ppred[i, j] = e
                        ppred[j, i] = e
                trace = 0.0
                for i in range(n):
                    trace += ppred[i, i]
                if not (trace <= csat):
                    saturated = True
                    break

            sum_trace += trace
            if delta > max_delta:
                max_delta = delta
            delta_counts[delta] += 1

            if cmode == 0:
                if delta == 0:
                    for i in range(n):
                        acc = 0.0
                        for j in range(n):
                            acc += a[i, j] * es[j]
                        er[i] = -acc - w_prev[i]
                else:
                    for i in range(n):
                        acc = 0.0
                        for j in range(n):
                            acc += a[i, j] * er_prev[j]
                        er[i] = acc - w_prev[i]
                err = 0.0
                for i in range(n):
                    err += er[i] * er[i]
            else:
                for i in range(n):
                    acc = 0.0
                    for j in range(n):
                        acc += a[i, j] * epost[j]
                    epred[i] = acc - w_prev[i]
                err = 0.0
                for i in range(n):
                    err += epred[i] * epred[i]
            sum_sqerr += err

            if crecord:
                traj_state[t] = h
                traj_delta[t] = delta
                traj_trace[t] = trace

            for i in range(m):
                tmp_m[i] = _gauss(&mn)
            for i in range(m):
                acc = 0.0
                for j in range(m):
                    acc += sqv[i, j] * tmp_m[j]
                vt[i] = acc

            if cmode == 0:
                for i in range(n):
                    acc = 0.0
                    for j in range(n):
                        acc += a[i, j] * es[j]
                    tmp_n[i] = acc + w_prev[i]
                for i in range(m):
                    acc = 0.0
                    for j in range(n):
                        acc += c_mat[i, j] * tmp_n[j]
                    tmp_m[i] = acc + vt[i]
                for i in range(n):
                    acc = 0.0
                    for j in range(m):
                        acc += k_mat[i, j] * tmp_m[j]
                    es[i] = tmp_n[i] - acc

            dropped = _uniform(&ch) < dvec[h]
            gamma = 0 if dropped else 1
            r = _uniform(&ch)
            hnext = m_states - 1
            for j in range(m_states):
                if r < pc[h, j]:
                    hnext = j
                    break
            if crecord:
                traj_gamma[t] = <int8_t>gamma

            if gamma == 1:
                if cmode == 1:
                    if _gated_update(n, m, c_mat, v_mat, ppred, epred, vt,
                                     ppost, epost, t_mat, aug, z, gc,
                                     innov) != 0:
                        singular = True
                        break
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
            elif cmode == 1:
                for i in range(n):
                    epost[i] = epred[i]
                    for j in range(n):
                        ppost[i, j] = ppred[i, j]

            gamma_prev = gamma
            h = hnext

            for i in range(n):
                tmp_n[i] = _gauss(&pn)
            for i in range(n):
                acc = 0.0
                for j in range(n):
                    acc += sqw[i, j] * tmp_n[j]
                w_prev[i] = acc
            for i in range(n):
                er_prev[i] = er[i]

            steps = t + 1

    if singular:
        raise ZeroDivisionError("singular innovation covariance")

    out = {
        "steps": int(steps),
        "sum_trace": sum_trace,
        "sum_sqerr": sum_sqerr,
        "delta_counts": delta_counts_arr[: max_delta + 1].copy(),
        "post_counts": post_counts_arr,
        "cycle_counts": cycle_counts_arr[: max_cycle + 1].copy(),
        "prefix": int(prefix),
        "n_success": int(n_success),
        "saturated": bool(saturated),
    }
    if record:
        out["trajectory"] = {
            "channel_state": traj_state_arr[: steps].copy(),
            "gamma": traj_gamma_arr[: steps].copy(),
            "delta": traj_delta_arr[: steps].copy(),
            "trace": traj_trace_arr[: steps].copy(),
        }
    return out
