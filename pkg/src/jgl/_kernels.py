"""Inner loops.

Each function here is written against numpy arrays and scalar ``math`` so that
it runs unchanged with or without numba (see :mod:`jgl._accel`).  Callers own
all validation; kernels assume well-formed inputs.
"""

import math

import numpy as np

from ._accel import jit

LN2 = math.log(2.0)
_BIG = 2.0**512
_SMALL = 2.0**-512

# layout of the EFGP accumulator vector
ACC_Z, ACC_W, ACC_ZW, ACC_ZW2, ACC_A, ACC_LOG, ACC_TOL = range(7)
N_ACC = 7


# ---------------------------------------------------------------------------
# transfer matrices


@jit
def transfer_chunk(E, a, b, n_lo, state, rec_n, rec_ptr, out_m, out_ls, out_ld):
    """Left-multiply one-step matrices for sites ``n_lo .. n_lo + len(a) - 1``.

    ``state`` = [m00, m01, m10, m11, log_scale, log_det, a_prev] is updated in
    place.  Whenever the current site equals ``rec_n[rec_ptr]`` the renormalized
    matrix and both logs are written to row ``rec_ptr`` of the outputs.
    Returns the advanced record pointer.
    """
    m00 = state[0]
    m01 = state[1]
    m10 = state[2]
    m11 = state[3]
    ls = state[4]
    ld = state[5]
    ap = state[6]
    nrec = rec_n.shape[0]
    for i in range(a.shape[0]):
        an = a[i]
        x = (E - b[i]) / an
        y = -ap / an
        t0 = x * m00 + y * m10
        t1 = x * m01 + y * m11
        m10 = m00
        m11 = m01
        m00 = t0
        m01 = t1
        ld += math.log(ap / an)
        ap = an
        big = max(max(abs(m00), abs(m01)), max(abs(m10), abs(m11)))
        if big > _BIG or big < _SMALL:
            e = math.frexp(big)[1]
            m00 = math.ldexp(m00, -e)
            m01 = math.ldexp(m01, -e)
            m10 = math.ldexp(m10, -e)
            m11 = math.ldexp(m11, -e)
            ls += e * LN2
        n = n_lo + i
        while rec_ptr < nrec and rec_n[rec_ptr] == n:
            out_m[rec_ptr, 0] = m00
            out_m[rec_ptr, 1] = m01
            out_m[rec_ptr, 2] = m10
            out_m[rec_ptr, 3] = m11
            out_ls[rec_ptr] = ls
            out_ld[rec_ptr] = ld
            rec_ptr += 1
    state[0] = m00
    state[1] = m01
    state[2] = m10
    state[3] = m11
    state[4] = ls
    state[5] = ld
    state[6] = ap
    return rec_ptr


# ---------------------------------------------------------------------------
# EFGP recursion


@jit
def kappa_zeta_values(E, at0, at1, a1, b1):
    """Coefficients of cot(theta(n+1)) = kappa cot(theta(n) + k_n) + zeta."""
    c0 = E / (2.0 * at0)
    c1 = E / (2.0 * at1)
    s0 = math.sqrt((1.0 - c0) * (1.0 + c0))
    s1 = math.sqrt((1.0 - c1) * (1.0 + c1))
    a12 = a1 * a1
    kappa = (at1 * at0 / a12) * (s0 / s1)
    zeta = (c1 / s1) * (at1 * at1 / a12 - 1.0) - at1 * b1 / (s1 * a12)
    return kappa, zeta


@jit
def _log_remainder(y):
    # |log(1+y) - y + y^2/2|, bounded by |y|^3 / (3 (1 - |y|)) inside the unit disc
    ay = abs(y)
    if ay < 1.0:
        return ay * ay * ay / (3.0 * (1.0 - ay))
    return abs(math.log1p(y) - y + 0.5 * y * y)


@jit
def efgp_update(E, theta, at0, at1, a1, b1, out):
    """One EFGP step n -> n+1 for a single initial angle.

    ``theta`` is theta(n) (mod pi).  Fills ``out`` with
    [dlogR2, theta(n+1) mod pi, |theta(n+1) - theta_bar(n)|,
     |Z|^2 - 1, |W|^2, (Z, W), A(n+1), tolerance increment, k_{n+1}].
    """
    c0 = E / (2.0 * at0)
    c1 = E / (2.0 * at1)
    k0 = math.acos(c0)
    k1 = math.acos(c1)
    s0 = math.sin(k0)
    s1 = math.sin(k1)
    thb = theta + k0
    sb = math.sin(thb)
    cb = math.cos(thb)

    A1 = (a1 - at1) * (a1 + at1) / (at1 * at1)
    B1 = b1 / at1
    r = at1 / at0
    q = r * s1 / s0

    # Z = (q sb, cb);  W = (r sb / s0) (s1 A1, -(B1 + c1 A1))
    z0 = q * sb
    wp = r * sb / s0
    w0 = wp * s1 * A1
    w1 = -wp * (B1 + c1 * A1)
    zz = sb * sb * (q - 1.0) * (q + 1.0)
    ww = w0 * w0 + w1 * w1
    zw = z0 * w0 + cb * w1
    x = zz + 2.0 * zw + ww
    dlog = math.log1p(x) - math.log1p(A1)

    a12 = a1 * a1
    kappa = (at1 * at0 / a12) * (s0 / s1)
    zeta = (c1 / s1) * (at1 * at1 / a12 - 1.0) - at1 * b1 / (s1 * a12)
    th1 = math.atan2(sb, kappa * cb + zeta * sb)
    d = th1 - thb
    d -= math.pi * math.floor(d / math.pi + 0.5)
    th_new = thb + d
    th_new -= math.pi * math.floor(th_new / math.pi)

    zpw = zz + ww
    tol = 0.5 * abs(zpw * zpw + 4.0 * zw * zpw) + _log_remainder(x) + _log_remainder(A1)

    out[0] = dlog
    out[1] = th_new
    out[2] = abs(d)
    out[3] = zz
    out[4] = ww
    out[5] = zw
    out[6] = A1
    out[7] = tol
    out[8] = k1


@jit
def efgp_chunk(E, a, b, at, n_lo, at_prev, state, acc, rec_n, rec_ptr,
               out_logr2, out_theta, out_k, out_acc, incr):
    """Advance several EFGP trajectories over sites ``n_lo .. n_lo + len(a) - 1``.

    ``state`` has shape (n_phi, 2) holding (log R^2, theta) at site n_lo - 1;
    ``at_prev`` is the reference entry at that site.  ``acc`` (n_phi, N_ACC)
    accumulates the decomposition sums.  ``incr`` is either empty or of shape
    (n_phi, len(a)) and then receives the per-step angle increments.
    Returns the advanced record pointer.
    """
    nphi = state.shape[0]
    nrec = rec_n.shape[0]
    keep_incr = incr.shape[1] == a.shape[0]
    buf = np.empty(9)
    at0 = at_prev
    for i in range(a.shape[0]):
        at1 = at[i]
        for p in range(nphi):
            efgp_update(E, state[p, 1], at0, at1, a[i], b[i], buf)
            state[p, 0] += buf[0]
            state[p, 1] = buf[1]
            if keep_incr:
                incr[p, i] = buf[2]
            zw = buf[5]
            A1 = buf[6]
            acc[p, 0] += buf[3]
            acc[p, 1] += buf[4]
            acc[p, 2] += 2.0 * zw
            acc[p, 3] -= 2.0 * zw * zw
            acc[p, 4] -= A1 - 0.5 * A1 * A1
            acc[p, 5] += buf[0]
            acc[p, 6] += buf[7]
        at0 = at1
        n = n_lo + i
        while rec_ptr < nrec and rec_n[rec_ptr] == n:
            out_k[rec_ptr] = buf[8]
            for p in range(nphi):
                out_logr2[p, rec_ptr] = state[p, 0]
                out_theta[p, rec_ptr] = state[p, 1]
                for j in range(acc.shape[1]):
                    out_acc[p, rec_ptr, j] = acc[p, j]
            rec_ptr += 1
    return rec_ptr


# ---------------------------------------------------------------------------
# symmetric tridiagonal eigenproblem


@jit
def ql_implicit(d, e, z, max_iter):
    """Implicit-shift QL on a symmetric tridiagonal matrix, in place.

    ``d`` (N) is the diagonal; ``e`` (N) holds the off-diagonal in e[0..N-2]
    and is destroyed.  Every row of ``z`` (shape (m, N)) is rotated along with
    the columns of the eigenvector matrix: pass the identity for full vectors
    or its first row for first components only.  Returns 0 on success, or
    1 + index of the eigenvalue that failed to converge.
    """
    n = d.shape[0]
    eps = 2.220446049250313e-16
    if n > 0:
        e[n - 1] = 0.0
    for l in range(n):
        it = 0
        while True:
            m = l
            while m < n - 1:
                dd = abs(d[m]) + abs(d[m + 1])
                if abs(e[m]) <= eps * dd:
                    break
                m += 1
            if m == l:
                break
            it += 1
            if it > max_iter:
                return l + 1
            g = (d[l + 1] - d[l]) / (2.0 * e[l])
            r = math.hypot(g, 1.0)
            g = d[m] - d[l] + e[l] / (g + math.copysign(r, g))
            s = 1.0
            c = 1.0
            p = 0.0
            i = m - 1
            deflated = False
            while i >= l:
                f = s * e[i]
                bb = c * e[i]
                r = math.hypot(f, g)
                e[i + 1] = r
                if r == 0.0:
                    d[i + 1] -= p
                    e[m] = 0.0
                    deflated = True
                    break
                s = f / r
                c = g / r
                g = d[i + 1] - p
                r = (d[i] - g) * s + 2.0 * c * bb
                p = s * r
                d[i + 1] = g + p
                g = c * r - bb
                for k in range(z.shape[0]):
                    f = z[k, i + 1]
                    z[k, i + 1] = s * z[k, i] + c * f
                    z[k, i] = c * z[k, i] - s * f
                i -= 1
            if deflated:
                continue
            d[l] -= p
            e[l] = g
            e[m] = 0.0
    return 0


@jit
def sturm_count(d, e2, x, pivmin):
    """Number of eigenvalues strictly below ``x`` (``e2`` = squared off-diagonal)."""
    n = d.shape[0]
    cnt = 0
    q = d[0] - x
    if abs(q) < pivmin:
        q = -pivmin
    if q < 0.0:
        cnt += 1
    for i in range(1, n):
        q = d[i] - x - e2[i - 1] / q
        if abs(q) < pivmin:
            q = -pivmin
        if q < 0.0:
            cnt += 1
    return cnt


@jit
def bisect_eigenvalue(d, e2, k, lo, hi, pivmin):
    """The k-th smallest eigenvalue (0-based) by bisection on [lo, hi]."""
    eps = 2.220446049250313e-16
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if hi - lo <= 2.0 * eps * max(abs(lo), abs(hi)) + pivmin:
            break
        if sturm_count(d, e2, mid, pivmin) > k:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# resolvent and propagation


@jit
def resolvent_column_log(d, e, z):
    """Entries of x = (T - z)^{-1} delta_1 as (log|x_j|, arg x_j).

    Backward elimination: ratios x_j / x_{j-1} are formed from the last row
    upward, so no entry is ever formed explicitly and nothing underflows.
    For Im z != 0 every pivot has modulus at least |Im z|.
    """
    n = d.shape[0]
    logabs = np.empty(n)
    phase = np.empty(n)
    ratio = np.empty(n, dtype=np.complex128)
    nxt = 0.0 + 0.0j
    for j in range(n - 1, 0, -1):
        piv = d[j] - z
        if j < n - 1:
            piv += e[j] * nxt
        nxt = -e[j - 1] / piv
        ratio[j] = nxt
    piv = d[0] - z
    if n > 1:
        piv += e[0] * nxt
    x1 = 1.0 / piv
    logabs[0] = math.log(abs(x1))
    phase[0] = math.atan2(x1.imag, x1.real)
    for j in range(1, n):
        r = ratio[j]
        logabs[j] = logabs[j - 1] + math.log(abs(r))
        phase[j] = phase[j - 1] + math.atan2(r.imag, r.real)
    return logabs, phase


@jit
def chebyshev_propagate(d, e, psi, coef, shift, scale):
    """psi <- sum_k coef[k] T_k((T - shift) / scale) psi, T symmetric tridiagonal."""
    n = d.shape[0]
    v_prev = psi.copy()
    v_cur = np.empty(n, dtype=np.complex128)
    out = coef[0] * psi
    inv = 1.0 / scale
    for i in range(n):
        acc = (d[i] - shift) * v_prev[i]
        if i > 0:
            acc += e[i - 1] * v_prev[i - 1]
        if i < n - 1:
            acc += e[i] * v_prev[i + 1]
        v_cur[i] = acc * inv
    for i in range(n):
        out[i] += coef[1] * v_cur[i]
    v_next = np.empty(n, dtype=np.complex128)
    for k in range(2, coef.shape[0]):
        ck = coef[k]
        for i in range(n):
            acc = (d[i] - shift) * v_cur[i]
            if i > 0:
                acc += e[i - 1] * v_cur[i - 1]
            if i < n - 1:
                acc += e[i] * v_cur[i + 1]
            w = 2.0 * inv * acc - v_prev[i]
            v_next[i] = w
            out[i] += ck * w
        tmp = v_prev
        v_prev = v_cur
        v_cur = v_next
        v_next = tmp
    return out
