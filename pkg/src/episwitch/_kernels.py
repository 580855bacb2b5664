"""Inner loops shared by the simulators.

``_build(jit=True)`` compiles the loops with numba for array-form models;
``_build(jit=False)`` returns the very same functions as plain Python so
that models given by arbitrary callables run through identical code.

Rate callbacks have the signature ``rates(x, env, m, b, dc, q)`` and fill
``b`` (infection rates), ``dc`` (cure rates) and ``q`` (off-diagonal switch
rates out of ``env``, with ``q[env] = 0``); ``m`` is the tuple returned by
``ModelSpec.kernel_arrays``.
"""

import math
from types import SimpleNamespace

import numpy as np
from numba import njit

# chain status codes
ABSORBED = 0
HORIZON = 1
NEED_RANDOM = 2
EVENT_CAP = 3
LOG_FULL = 4
# integrator status codes
OK = 0
OVERSHOOT = 5

CUBE_TOL = 1e-9
TINY = 1e-300


def _build(jit):
    wrap = njit(nogil=True, cache=True) if jit else (lambda f: f)

    @wrap
    def ly_rates(x, env, m, b, dc, q):
        C, D, Q0, Q1, alpha = m
        d = x.shape[0]
        s = 0.0
        for i in range(d):
            acc = 0.0
            for j in range(d):
                acc += C[env, i, j] * x[j]
            b[i] = acc
            dc[i] = D[env, i]
            s += alpha[i] * x[i]
        for k in range(q.shape[0]):
            q[k] = 0.0 if k == env else Q0[env, k] + s * Q1[env, k]

    @wrap
    def field(rates, m, x, env, b, dc, q, out):
        rates(x, env, m, b, dc, q)
        for i in range(x.shape[0]):
            out[i] = (1.0 - x[i]) * b[i] - x[i] * dc[i]

    @wrap
    def chain_run(rates, m, n_env, sizes, counts, istate, fstate, horizon, u,
                  cand_t, cand_tgt, cand_u, thinned, max_events,
                  thresholds, hit_lo, hit_hi, record, ev_t, ev_kind, ev_counts, ev_env):
        """Event loop of the finite chain.

        ``istate = [env, upos, n_events, ev_pos, cand_pos]`` and
        ``fstate = [t, extinction_time]`` are updated in place so the loop can
        resume after a random-buffer refill or an event-log flush.  With
        ``thinned`` the environment is driven by the candidate stream
        ``(cand_t, cand_tgt, cand_u)`` instead of entering the total rate.
        """
        d = counts.shape[0]
        x = np.empty(d)
        b = np.empty(d)
        dc = np.empty(d)
        q = np.empty(n_env)
        prop = np.empty(2 * d + n_env)
        env = istate[0]
        upos = istate[1]
        nev = istate[2]
        epos = istate[3]
        cpos = istate[4]
        t = fstate[0]
        ext = fstate[1]
        ntot = 0
        for i in range(d):
            ntot += counts[i]
        ncand = cand_t.shape[0]
        status = -1
        while True:
            if nev >= max_events:
                status = EVENT_CAP
                break
            if record and epos >= ev_t.shape[0]:
                status = LOG_FULL
                break
            if upos + 2 > u.shape[0]:
                status = NEED_RANDOM
                break
            for i in range(d):
                x[i] = counts[i] / sizes[i]
            rates(x, env, m, b, dc, q)
            total = 0.0
            for i in range(d):
                r = sizes[i] * (1.0 - x[i]) * b[i]
                if r < 0.0:
                    r = 0.0
                prop[i] = r
                total += r
            for i in range(d):
                r = counts[i] * dc[i]
                prop[d + i] = r
                total += r
            nprop = 2 * d
            if not thinned:
                for k in range(n_env):
                    prop[2 * d + k] = q[k]
                    total += q[k]
                nprop += n_env
            tc = math.inf
            if thinned and cpos < ncand:
                tc = cand_t[cpos]
            if total <= 0.0 and tc == math.inf:
                if ntot == 0 and ext < 0.0:
                    ext = t
                if horizon == math.inf:
                    status = ABSORBED
                else:
                    t = horizon
                    status = HORIZON
                break
            tev = math.inf
            if total > 0.0:
                tev = t - math.log1p(-u[upos]) / total
                upos += 1
            if tc <= tev and tc <= horizon:
                t = tc
                tgt = cand_tgt[cpos]
                if tgt != env and cand_u[cpos] < q[tgt]:
                    env = tgt
                    nev += 1
                    if record:
                        ev_t[epos] = t
                        ev_kind[epos] = 2 * d + tgt
                        for i in range(d):
                            ev_counts[epos, i] = counts[i]
                        ev_env[epos] = env
                        epos += 1
                cpos += 1
                continue
            if tev > horizon:
                t = horizon
                status = HORIZON
                break
            t = tev
            target = u[upos] * total
            upos += 1
            acc = 0.0
            ksel = -1
            for k in range(nprop):
                if prop[k] > 0.0:
                    acc += prop[k]
                    ksel = k
                    if target < acc:
                        break
            if ksel < d:
                counts[ksel] += 1
                ntot += 1
            elif ksel < 2 * d:
                counts[ksel - d] -= 1
                ntot -= 1
            else:
                env = ksel - 2 * d
            nev += 1
            if record:
                ev_t[epos] = t
                ev_kind[epos] = ksel
                for i in range(d):
                    ev_counts[epos, i] = counts[i]
                ev_env[epos] = env
                epos += 1
            if thresholds.shape[0] > 0 and ksel < 2 * d:
                norm = 0.0
                for i in range(d):
                    norm += counts[i] / sizes[i]
                for k in range(thresholds.shape[0]):
                    if hit_lo[k] < 0.0 and norm <= thresholds[k]:
                        hit_lo[k] = t
                    if hit_hi[k] < 0.0 and norm >= thresholds[k]:
                        hit_hi[k] = t
            if ntot == 0 and ext < 0.0:
                ext = t
                if horizon == math.inf:
                    status = ABSORBED
                    break
        istate[0] = env
        istate[1] = upos
        istate[2] = nev
        istate[3] = epos
        istate[4] = cpos
        fstate[0] = t
        fstate[1] = ext
        return status

    @wrap
    def flow_segment(rates, m, x, env, duration, hmax, b, dc, q, k1, k2, k3, k4, xt):
        """RK4 over ``duration`` in equal sub-steps no longer than ``hmax``.

        Also integrates ``<1, F(x)> / |x|_1`` with the same stage weights.
        Returns ``(status, integral)``.
        """
        if duration <= 0.0:
            return OK, 0.0
        d = x.shape[0]
        n = int(math.ceil(duration / hmax))
        h = duration / n
        integral = 0.0
        for _ in range(n):
            field(rates, m, x, env, b, dc, q, k1)
            s0 = 0.0
            f0 = 0.0
            for i in range(d):
                s0 += x[i]
                f0 += k1[i]
            g1 = f0 / max(s0, TINY)
            for i in range(d):
                xt[i] = x[i] + 0.5 * h * k1[i]
            field(rates, m, xt, env, b, dc, q, k2)
            s0 = 0.0
            f0 = 0.0
            for i in range(d):
                s0 += xt[i]
                f0 += k2[i]
            g2 = f0 / max(s0, TINY)
            for i in range(d):
                xt[i] = x[i] + 0.5 * h * k2[i]
            field(rates, m, xt, env, b, dc, q, k3)
            s0 = 0.0
            f0 = 0.0
            for i in range(d):
                s0 += xt[i]
                f0 += k3[i]
            g3 = f0 / max(s0, TINY)
            for i in range(d):
                xt[i] = x[i] + h * k3[i]
            field(rates, m, xt, env, b, dc, q, k4)
            s0 = 0.0
            f0 = 0.0
            for i in range(d):
                s0 += xt[i]
                f0 += k4[i]
            g4 = f0 / max(s0, TINY)
            for i in range(d):
                v = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
                if not (v >= -CUBE_TOL and v <= 1.0 + CUBE_TOL):
                    return OVERSHOOT, integral
                x[i] = min(max(v, 0.0), 1.0)
            integral += h / 6.0 * (g1 + 2.0 * g2 + 2.0 * g3 + g4)
        return OK, integral

    @wrap
    def pdmp_run(rates, m, n_env, x, env0, hmax, out_times, cand_t, cand_tgt, cand_u, thinned,
                 out_x, out_env, out_int, jump_t, jump_env):
        """Switched flow sampled at ``out_times``.

        Without ``thinned`` every candidate is an actual jump; with it a
        candidate ``(t, target, u)`` is accepted when ``u < q(X_t, env, target)``.
        Returns ``(status, n_jumps)``.
        """
        d = x.shape[0]
        b = np.empty(d)
        dc = np.empty(d)
        q = np.empty(n_env)
        k1 = np.empty(d)
        k2 = np.empty(d)
        k3 = np.empty(d)
        k4 = np.empty(d)
        xt = np.empty(d)
        t = 0.0
        env = env0
        integral = 0.0
        ci = 0
        oi = 0
        nj = 0
        nout = out_times.shape[0]
        ncand = cand_t.shape[0]
        while oi < nout:
            tc = cand_t[ci] if ci < ncand else math.inf
            to = out_times[oi]
            if tc < to:
                st, inc = flow_segment(rates, m, x, env, tc - t, hmax, b, dc, q, k1, k2, k3, k4, xt)
                integral += inc
                if st != OK:
                    return st, nj
                t = tc
                tgt = cand_tgt[ci]
                accept = True
                if thinned:
                    rates(x, env, m, b, dc, q)
                    accept = tgt != env and cand_u[ci] < q[tgt]
                if accept:
                    env = tgt
                    jump_t[nj] = t
                    jump_env[nj] = env
                    nj += 1
                ci += 1
            else:
                st, inc = flow_segment(rates, m, x, env, to - t, hmax, b, dc, q, k1, k2, k3, k4, xt)
                integral += inc
                if st != OK:
                    return st, nj
                t = to
                for i in range(d):
                    out_x[oi, i] = x[i]
                out_env[oi] = env
                out_int[oi] = integral
                oi += 1
        return OK, nj

    @wrap
    def polar_rhs(rates, m, r, th, env, b, dc, q, y, f, dth):
        """Right-hand side of the radial/angular system; returns G and fills dth with H."""
        d = th.shape[0]
        for i in range(d):
            y[i] = r * th[i]
        field(rates, m, y, env, b, dc, q, f)
        rr = max(r, TINY)
        g = 0.0
        for i in range(d):
            f[i] = f[i] / rr
            g += f[i]
        for i in range(d):
            dth[i] = f[i] - g * th[i]
        return g

    @wrap
    def polar_run(rates, m, n_env, r, th, env0, hmax, out_times, cand_t, cand_tgt, cand_u, thinned,
                  out_r, out_th, out_s, out_env):
        """RK4 on ``(R, Theta, S)`` with ``R' = R G``, ``Theta' = H``, ``S' = G``."""
        d = th.shape[0]
        b = np.empty(d)
        dc = np.empty(d)
        q = np.empty(n_env)
        y = np.empty(d)
        f = np.empty(d)
        k1 = np.empty(d)
        k2 = np.empty(d)
        k3 = np.empty(d)
        k4 = np.empty(d)
        tt = np.empty(d)
        t = 0.0
        env = env0
        s = 0.0
        ci = 0
        oi = 0
        nout = out_times.shape[0]
        ncand = cand_t.shape[0]
        while oi < nout:
            tc = cand_t[ci] if ci < ncand else math.inf
            to = out_times[oi]
            stop = min(tc, to)
            dur = stop - t
            if dur > 0.0:
                n = int(math.ceil(dur / hmax))
                h = dur / n
                for _ in range(n):
                    g1 = polar_rhs(rates, m, r, th, env, b, dc, q, y, f, k1)
                    r1 = r * g1
                    for i in range(d):
                        tt[i] = th[i] + 0.5 * h * k1[i]
                    g2 = polar_rhs(rates, m, r + 0.5 * h * r1, tt, env, b, dc, q, y, f, k2)
                    r2 = (r + 0.5 * h * r1) * g2
                    for i in range(d):
                        tt[i] = th[i] + 0.5 * h * k2[i]
                    g3 = polar_rhs(rates, m, r + 0.5 * h * r2, tt, env, b, dc, q, y, f, k3)
                    r3 = (r + 0.5 * h * r2) * g3
                    for i in range(d):
                        tt[i] = th[i] + h * k3[i]
                    g4 = polar_rhs(rates, m, r + h * r3, tt, env, b, dc, q, y, f, k4)
                    r4 = (r + h * r3) * g4
                    r += h / 6.0 * (r1 + 2.0 * r2 + 2.0 * r3 + r4)
                    s += h / 6.0 * (g1 + 2.0 * g2 + 2.0 * g3 + g4)
                    tot = 0.0
                    for i in range(d):
                        v = th[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
                        if v < 0.0:
                            v = 0.0
                        th[i] = v
                        tot += v
                    for i in range(d):
                        th[i] /= tot
                    if not (r == r):
                        return OVERSHOOT
            t = stop
            if tc < to:
                tgt = cand_tgt[ci]
                accept = True
                if thinned:
                    for i in range(d):
                        y[i] = r * th[i]
                    rates(y, env, m, b, dc, q)
                    accept = tgt != env and cand_u[ci] < q[tgt]
                if accept:
                    env = tgt
                ci += 1
            else:
                out_r[oi] = r
                for i in range(d):
                    out_th[oi, i] = th[i]
                out_s[oi] = s
                out_env[oi] = env
                oi += 1
        return OK

    @wrap
    def ctmc_path(Q, env, t, horizon, u, out_t, out_env):
        """Exact jumps of a constant-rate chain on ``(t, horizon]``.

        Returns ``(n_written, env, t, upos, done)``; resumable when the
        uniform buffer or the output arrays run out.
        """
        E = Q.shape[0]
        upos = 0
        n = 0
        while True:
            if n >= out_t.shape[0] or upos + 2 > u.shape[0]:
                return n, env, t, upos, False
            rate = -Q[env, env]
            if rate <= 0.0:
                return n, env, horizon, upos, True
            tn = t - math.log1p(-u[upos]) / rate
            if tn > horizon:
                return n, env, horizon, upos + 1, True
            r = u[upos + 1] * rate
            upos += 2
            t = tn
            acc = 0.0
            tgt = -1
            for k in range(E):
                if k != env and Q[env, k] > 0.0:
                    acc += Q[env, k]
                    tgt = k
                    if r < acc:
                        break
            env = tgt
            out_t[n] = t
            out_env[n] = env
            n += 1

    @wrap
    def angular_run(A, th, env0, hmax, out_times, jump_t, jump_env, out_th, out_s, out_env, diag):
        """Angular process of the linearised flow with a prescribed environment path.

        ``Theta' = A Theta - <1, A Theta> Theta`` and ``S' = <1, A Theta>`` by RK4,
        renormalised to the simplex after every step.  ``diag[0]`` receives the
        most negative component seen before clamping and ``diag[1]`` the
        largest ``| |Theta|_1 - 1 |`` before renormalisation.
        """
        d = th.shape[0]
        k1 = np.empty(d)
        k2 = np.empty(d)
        k3 = np.empty(d)
        k4 = np.empty(d)
        tt = np.empty(d)
        t = 0.0
        env = env0
        s = 0.0
        ji = 0
        oi = 0
        nout = out_times.shape[0]
        nj = jump_t.shape[0]
        while oi < nout:
            tc = jump_t[ji] if ji < nj else math.inf
            to = out_times[oi]
            stop = min(tc, to)
            dur = stop - t
            if dur > 0.0:
                n = int(math.ceil(dur / hmax))
                h = dur / n
                for _ in range(n):
                    g = 0.0
                    for i in range(d):
                        acc = 0.0
                        for j in range(d):
                            acc += A[env, i, j] * th[j]
                        k1[i] = acc
                        g += acc
                    g1 = g
                    for i in range(d):
                        k1[i] -= g * th[i]
                        tt[i] = th[i] + 0.5 * h * k1[i]
                    g = 0.0
                    for i in range(d):
                        acc = 0.0
                        for j in range(d):
                            acc += A[env, i, j] * tt[j]
                        k2[i] = acc
                        g += acc
                    g2 = g
                    for i in range(d):
                        k2[i] -= g * tt[i]
                    for i in range(d):
                        tt[i] = th[i] + 0.5 * h * k2[i]
                    g = 0.0
                    for i in range(d):
                        acc = 0.0
                        for j in range(d):
                            acc += A[env, i, j] * tt[j]
                        k3[i] = acc
                        g += acc
                    g3 = g
                    for i in range(d):
                        k3[i] -= g * tt[i]
                    for i in range(d):
                        tt[i] = th[i] + h * k3[i]
                    g = 0.0
                    for i in range(d):
                        acc = 0.0
                        for j in range(d):
                            acc += A[env, i, j] * tt[j]
                        k4[i] = acc
                        g += acc
                    g4 = g
                    for i in range(d):
                        k4[i] -= g * tt[i]
                    s += h / 6.0 * (g1 + 2.0 * g2 + 2.0 * g3 + g4)
                    tot = 0.0
                    for i in range(d):
                        v = th[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
                        if v < diag[0]:
                            diag[0] = v
                        if v < 0.0:
                            v = 0.0
                        th[i] = v
                        tot += v
                    err = abs(tot - 1.0)
                    if err > diag[1]:
                        diag[1] = err
                    for i in range(d):
                        th[i] /= tot
            t = stop
            if tc < to:
                env = jump_env[ji]
                ji += 1
            else:
                for i in range(d):
                    out_th[oi, i] = th[i]
                out_s[oi] = s
                out_env[oi] = env
                oi += 1

    return SimpleNamespace(
        ly_rates=ly_rates, field=field, chain_run=chain_run, flow_segment=flow_segment,
        pdmp_run=pdmp_run, polar_rhs=polar_rhs, polar_run=polar_run, ctmc_path=ctmc_path,
        angular_run=angular_run,
    )


JIT = _build(True)
PY = _build(False)


def for_model(spec):
    """``(kernels, rates, model_arrays)`` for ``spec``."""
    m = spec.kernel_arrays()
    if spec.compiled:
        return JIT, JIT.ly_rates, m
    return PY, spec.python_rates(), m
