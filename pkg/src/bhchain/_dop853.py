"""Compiled DOP853 stepper specialised to the chain vector field.

The Butcher tableau, error estimators and dense-output coefficients are taken
from scipy so the step-size controller can be cross-checked against
``scipy.integrate.solve_ivp(method="DOP853")``.

State layout: ``y = [P(L), Q(L), V_1(2L), ..., V_k(2L)]`` where the optional
``V_i`` are tangent vectors evolved with the linearised flow.
"""
import numpy as np
from numba import njit
from scipy.integrate._ivp import dop853_coefficients as _c

N_STAGES = _c.N_STAGES
A = np.ascontiguousarray(_c.A)
B = np.ascontiguousarray(_c.B)
C = np.ascontiguousarray(_c.C)
E3 = np.ascontiguousarray(_c.E3)
E5 = np.ascontiguousarray(_c.E5)
D = np.ascontiguousarray(_c.D)

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0
ERR_EXPONENT = -1.0 / 8.0

COMPLETED = 0
CONSTRAINT_BREACH = 1
STEP_FAILURE = 2


@njit(cache=True)
def chain_rhs(y, J, U, mu, periodic, L, ntan, out):
    """Chain vector field, plus the linearised field on each tangent block."""
    for j in range(L):
        P = y[j]
        Q = y[L + j]
        w = 0.5 * U * (P * P + Q * Q) - mu
        sp = 0.0
        sq = 0.0
        if j > 0:
            sp += y[j - 1]
            sq += y[L + j - 1]
        elif periodic:
            sp += y[L - 1]
            sq += y[2 * L - 1]
        if j < L - 1:
            sp += y[j + 1]
            sq += y[L + j + 1]
        elif periodic:
            sp += y[0]
            sq += y[L]
        out[j] = -J * sq + Q * w
        out[L + j] = J * sp - P * w
    n2 = 2 * L
    for k in range(ntan):
        off = n2 * (k + 1)
        for j in range(L):
            P = y[j]
            Q = y[L + j]
            w = 0.5 * U * (P * P + Q * Q) - mu
            dP = y[off + j]
            dQ = y[off + L + j]
            g = U * (P * dP + Q * dQ)
            sp = 0.0
            sq = 0.0
            if j > 0:
                sp += y[off + j - 1]
                sq += y[off + L + j - 1]
            elif periodic:
                sp += y[off + L - 1]
                sq += y[off + 2 * L - 1]
            if j < L - 1:
                sp += y[off + j + 1]
                sq += y[off + L + j + 1]
            elif periodic:
                sp += y[off]
                sq += y[off + L]
            out[off + j] = -J * sq + dQ * w + Q * g
            out[off + L + j] = J * sp - dP * w - P * g


@njit(cache=True)
def _rms(x):
    return np.sqrt(np.sum(x * x) / x.size)


@njit(cache=True)
def initial_step(t0, y0, f0, direction, interval, rtol, atol, J, U, mu, periodic, L, ntan):
    scale = atol + np.abs(y0) * rtol
    d0 = _rms(y0 / scale)
    d1 = _rms(f0 / scale)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    h0 = min(h0, interval)
    y1 = y0 + h0 * direction * f0
    f1 = np.empty_like(y0)
    chain_rhs(y1, J, U, mu, periodic, L, ntan, f1)
    d2 = _rms((f1 - f0) / scale) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / 8.0)
    return min(100.0 * h0, h1, interval)


@njit(cache=True)
def _constraint(y, L):
    s = 0.0
    for j in range(2 * L):
        s += y[j] * y[j]
    return 0.5 * s


@njit(cache=True)
def integrate(y0, t0, t_end, sample_times, rtol, atol, h_init,
              J, U, mu, periodic, L, ntan,
              norm, constraint_tol, project, max_steps):
    """Adaptive DOP853 from ``t0`` to ``t_end`` with dense sampling.

    ``atol`` is a per-component array.  ``constraint_tol <= 0`` disables
    monitoring.  ``project`` rescales the orbit block onto the constraint
    sphere after every accepted step.

    Returns ``(status, t, y, samples, n_samples, n_accepted, n_rejected,
    h_next, max_violation)``.
    """
    n = y0.size
    ns = sample_times.size
    samples = np.empty((ns, n))
    direction = 1.0 if t_end >= t0 else -1.0
    y = y0.copy()
    t = t0
    K = np.empty((16, n))
    f = np.empty(n)
    chain_rhs(y, J, U, mu, periodic, L, ntan, f)
    interval = abs(t_end - t0)

    si = 0
    # samples at (or before) the start are the initial condition
    while si < ns and direction * (sample_times[si] - t0) <= 0.0:
        samples[si, :] = y
        si += 1

    max_violation = 0.0
    if constraint_tol > 0.0:
        v0 = abs(_constraint(y, L) - norm) / norm
        max_violation = v0
        if v0 > constraint_tol:
            return CONSTRAINT_BREACH, t, y, samples, si, 0, 0, h_init, max_violation

    if interval == 0.0:
        return COMPLETED, t, y, samples, si, 0, 0, h_init, max_violation

    if h_init > 0.0:
        h_abs = h_init
    else:
        h_abs = initial_step(t0, y, f, direction, interval, rtol, atol, J, U, mu, periodic, L, ntan)

    n_acc = 0
    n_rej = 0
    ytmp = np.empty(n)
    y_new = np.empty(n)
    f_new = np.empty(n)
    Fd = np.empty((7, n))
    status = COMPLETED

    while direction * (t_end - t) > 0.0:
        if n_acc >= max_steps:
            status = STEP_FAILURE
            break
        min_step = 10.0 * abs(np.nextafter(t, direction * np.inf) - t)
        if h_abs < min_step:
            h_abs = min_step
        accepted = False
        rejected = False
        while not accepted:
            if h_abs < min_step:
                status = STEP_FAILURE
                break
            h = h_abs * direction
            t_new = t + h
            if direction * (t_new - t_end) > 0.0:
                t_new = t_end
            h = t_new - t
            h_abs = abs(h)

            # stages
            for i in range(n):
                K[0, i] = f[i]
            for s in range(1, N_STAGES):
                for i in range(n):
                    acc = 0.0
                    for r in range(s):
                        acc += A[s, r] * K[r, i]
                    ytmp[i] = y[i] + h * acc
                chain_rhs(ytmp, J, U, mu, periodic, L, ntan, K[s])
            for i in range(n):
                acc = 0.0
                for r in range(N_STAGES):
                    acc += B[r] * K[r, i]
                y_new[i] = y[i] + h * acc
            chain_rhs(y_new, J, U, mu, periodic, L, ntan, f_new)
            for i in range(n):
                K[N_STAGES, i] = f_new[i]

            e5 = 0.0
            e3 = 0.0
            for i in range(n):
                sc = atol[i] + max(abs(y[i]), abs(y_new[i])) * rtol
                a5 = 0.0
                a3 = 0.0
                for r in range(N_STAGES + 1):
                    a5 += E5[r] * K[r, i]
                    a3 += E3[r] * K[r, i]
                a5 /= sc
                a3 /= sc
                e5 += a5 * a5
                e3 += a3 * a3
            if e5 == 0.0 and e3 == 0.0:
                err = 0.0
            else:
                err = h_abs * e5 / np.sqrt((e5 + 0.01 * e3) * n)

            if err < 1.0:
                if err == 0.0:
                    factor = MAX_FACTOR
                else:
                    factor = min(MAX_FACTOR, SAFETY * err ** ERR_EXPONENT)
                if rejected:
                    factor = min(1.0, factor)
                h_abs *= factor
                accepted = True
            else:
                h_abs *= max(MIN_FACTOR, SAFETY * err ** ERR_EXPONENT)
                rejected = True
                n_rej += 1
        if not accepted:
            break
        n_acc += 1

        # dense output for any samples inside (t, t_new]
        breach = False
        if si < ns and direction * (sample_times[si] - t_new) <= 0.0:
            for s in range(N_STAGES + 1, 16):
                for i in range(n):
                    acc = 0.0
                    for r in range(s):
                        acc += A[s, r] * K[r, i]
                    ytmp[i] = y[i] + h * acc
                chain_rhs(ytmp, J, U, mu, periodic, L, ntan, K[s])
            for i in range(n):
                dy = y_new[i] - y[i]
                Fd[0, i] = dy
                Fd[1, i] = h * K[0, i] - dy
                Fd[2, i] = 2.0 * dy - h * (f_new[i] + K[0, i])
                for m in range(4):
                    acc = 0.0
                    for r in range(16):
                        acc += D[m, r] * K[r, i]
                    Fd[3 + m, i] = h * acc
            while si < ns and direction * (sample_times[si] - t_new) <= 0.0:
                x = (sample_times[si] - t) / h
                for i in range(n):
                    v = 0.0
                    for m in range(6, -1, -1):
                        v += Fd[m, i]
                        if (6 - m) % 2 == 0:
                            v *= x
                        else:
                            v *= 1.0 - x
                    samples[si, i] = y[i] + v
                if constraint_tol > 0.0:
                    c = _constraint(samples[si], L)
                    if project:
                        sc = np.sqrt(norm / c)
                        for i in range(2 * L):
                            samples[si, i] *= sc
                    elif abs(c - norm) / norm > constraint_tol:
                        breach = True
                        break
                si += 1

        if constraint_tol > 0.0:
            c = _constraint(y_new, L)
            v = abs(c - norm) / norm
            if v > max_violation:
                max_violation = v
            if project:
                sc = np.sqrt(norm / c)
                for i in range(2 * L):
                    y_new[i] *= sc
                chain_rhs(y_new, J, U, mu, periodic, L, ntan, f_new)
            elif v > constraint_tol:
                breach = True
        if breach:
            status = CONSTRAINT_BREACH
            break

        t = t_new
        for i in range(n):
            y[i] = y_new[i]
            f[i] = f_new[i]

    return status, t, y, samples, si, n_acc, n_rej, h_abs, max_violation
