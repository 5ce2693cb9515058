"""Hot numerical kernels.

Every kernel exists twice: a loop-style ``*_nb`` variant compiled by numba and
a vectorized ``*_np`` variant written against numpy only. Both share one
signature. The unsuffixed public names are bound to one family at import time
according to :data:`multivirus._accel.USE_NUMBA`.

Array conventions: ``p`` is ``(m, n)``, ``betas`` is ``(m, n, n)`` with
``betas[k, i, j]`` the rate at which agent ``j`` infects agent ``i`` with
virus ``k``, ``deltas`` is ``(m, n)``.
"""
import numpy as np

from ._accel import USE_NUMBA, njit

RK4 = 0
EULER = 1

OK = 0
BLOWUP = 1


# ---------------------------------------------------------------------------
# right-hand side


def rhs_np(p, betas, deltas, out):
    pressure = np.einsum("kij,kj->ki", betas, p)
    out[...] = (1.0 - p.sum(axis=0)) * pressure - deltas * p
    return out


@njit(cache=True)
def rhs_nb(p, betas, deltas, out):
    m, n = p.shape
    for i in range(n):
        total = 0.0
        for k in range(m):
            total += p[k, i]
        free = 1.0 - total
        for k in range(m):
            acc = 0.0
            for j in range(n):
                acc += betas[k, i, j] * p[k, j]
            out[k, i] = free * acc - deltas[k, i] * p[k, i]
    return out


# ---------------------------------------------------------------------------
# invariant-set repair


# probabilities below FLUSH are set to zero: they carry no information, and
# their products with small rates are subnormal, which slows every flop
FLUSH = 1e-250
# squared distance beyond which exp(-d2) < FLUSH; such weights are zeroed
FLUSH_D2 = float(-np.log(FLUSH))


def repair_np(p):
    """Clamp to [0, 1], rescale columns whose total exceeds 1.

    Returns the largest violation seen before repair, or ``inf`` when ``p``
    holds non-finite values (left untouched in that case).
    """
    if not np.all(np.isfinite(p)):
        return np.inf
    p[np.abs(p) < FLUSH] = 0.0
    totals = p.sum(axis=0)
    viol = max(0.0, -p.min(), p.max() - 1.0, totals.max() - 1.0)
    if viol > 0.0:
        np.clip(p, 0.0, 1.0, out=p)
        totals = p.sum(axis=0)
        over = totals > 1.0
        if over.any():
            p[:, over] /= totals[over]
    return viol


@njit(cache=True)
def repair_nb(p):
    m, n = p.shape
    viol = 0.0
    for i in range(n):
        total = 0.0
        for k in range(m):
            x = p[k, i]
            if not np.isfinite(x):
                return np.inf
            if abs(x) < FLUSH:
                x = 0.0
                p[k, i] = 0.0
            if -x > viol:
                viol = -x
            if x - 1.0 > viol:
                viol = x - 1.0
            total += x
        if total - 1.0 > viol:
            viol = total - 1.0
    if viol > 0.0:
        for i in range(n):
            total = 0.0
            for k in range(m):
                x = min(max(p[k, i], 0.0), 1.0)
                p[k, i] = x
                total += x
            if total > 1.0:
                for k in range(m):
                    p[k, i] /= total
    return viol


# ---------------------------------------------------------------------------
# single explicit steps (beta may differ at the RK4 stage times)


def _make_steps(rhs):
    def rk4_step(p, b0, bh, b1, deltas, dt, out, k1, k2, k3, k4, tmp):
        rhs(p, b0, deltas, k1)
        tmp[...] = p + 0.5 * dt * k1
        rhs(tmp, bh, deltas, k2)
        tmp[...] = p + 0.5 * dt * k2
        rhs(tmp, bh, deltas, k3)
        tmp[...] = p + dt * k3
        rhs(tmp, b1, deltas, k4)
        out[...] = p + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        return out

    def euler_step(p, b0, deltas, dt, out, k1):
        rhs(p, b0, deltas, k1)
        out[...] = p + dt * k1
        return out

    return rk4_step, euler_step


rk4_step_np, euler_step_np = _make_steps(rhs_np)


@njit(cache=True)
def rk4_step_nb(p, b0, bh, b1, deltas, dt, out, k1, k2, k3, k4, tmp):
    m, n = p.shape
    rhs_nb(p, b0, deltas, k1)
    for k in range(m):
        for i in range(n):
            tmp[k, i] = p[k, i] + 0.5 * dt * k1[k, i]
    rhs_nb(tmp, bh, deltas, k2)
    for k in range(m):
        for i in range(n):
            tmp[k, i] = p[k, i] + 0.5 * dt * k2[k, i]
    rhs_nb(tmp, bh, deltas, k3)
    for k in range(m):
        for i in range(n):
            tmp[k, i] = p[k, i] + dt * k3[k, i]
    rhs_nb(tmp, b1, deltas, k4)
    for k in range(m):
        for i in range(n):
            out[k, i] = p[k, i] + (dt / 6.0) * (
                k1[k, i] + 2.0 * k2[k, i] + 2.0 * k3[k, i] + k4[k, i]
            )
    return out


@njit(cache=True)
def euler_step_nb(p, b0, deltas, dt, out, k1):
    m, n = p.shape
    rhs_nb(p, b0, deltas, k1)
    for k in range(m):
        for i in range(n):
            out[k, i] = p[k, i] + dt * k1[k, i]
    return out


# ---------------------------------------------------------------------------
# static-beta integration loop
#
# The loop bodies are written out twice rather than generated from a factory:
# numba cannot cache closures, and recompiling costs seconds per process.


def integrate_static_np(p0, betas, deltas, dt, dt_last, nsteps, method, record_steps):
    """Advance ``nsteps`` fixed steps (the last one of length ``dt_last``).

    Returns ``(records, max_violation, status, fail_step)``; ``records`` holds
    the state at every step index listed in ``record_steps`` (0 = initial).
    """
    m, n = p0.shape
    records = np.empty((record_steps.shape[0], m, n))
    p = p0.copy()
    nxt = np.empty_like(p)
    k1, k2, k3, k4, tmp = (np.empty_like(p) for _ in range(5))
    max_viol = 0.0
    r = 0
    if record_steps.shape[0] > 0 and record_steps[0] == 0:
        records[0] = p
        r = 1
    for step in range(1, nsteps + 1):
        h = dt_last if step == nsteps else dt
        if method == RK4:
            rk4_step_np(p, betas, betas, betas, deltas, h, nxt, k1, k2, k3, k4, tmp)
        else:
            euler_step_np(p, betas, deltas, h, nxt, k1)
        viol = repair_np(nxt)
        if not np.isfinite(viol):
            return records[:r], max_viol, BLOWUP, step
        max_viol = max(max_viol, viol)
        p, nxt = nxt, p
        if r < record_steps.shape[0] and record_steps[r] == step:
            records[r] = p
            r += 1
    return records, max_viol, OK, -1


@njit(cache=True)
def integrate_static_nb(p0, betas, deltas, dt, dt_last, nsteps, method, record_steps):
    m, n = p0.shape
    records = np.empty((record_steps.shape[0], m, n))
    p = p0.copy()
    nxt = np.empty_like(p)
    k1 = np.empty_like(p)
    k2 = np.empty_like(p)
    k3 = np.empty_like(p)
    k4 = np.empty_like(p)
    tmp = np.empty_like(p)
    max_viol = 0.0
    r = 0
    if record_steps.shape[0] > 0 and record_steps[0] == 0:
        records[0] = p
        r = 1
    for step in range(1, nsteps + 1):
        h = dt_last if step == nsteps else dt
        if method == RK4:
            rk4_step_nb(p, betas, betas, betas, deltas, h, nxt, k1, k2, k3, k4, tmp)
        else:
            euler_step_nb(p, betas, deltas, h, nxt, k1)
        viol = repair_nb(nxt)
        if not np.isfinite(viol):
            return records[:r], max_viol, BLOWUP, step
        if viol > max_viol:
            max_viol = viol
        p, nxt = nxt, p
        if r < record_steps.shape[0] and record_steps[r] == step:
            records[r] = p
            r += 1
    return records, max_viol, OK, -1


# ---------------------------------------------------------------------------
# mobility: reflecting drift and proximity kernel


def advance_positions_np(pos, drift, lo, hi, dt):
    """Specular reflection inside the box ``[lo, hi]`` per axis, in place."""
    pos += drift * dt
    while True:
        # sitting on a wall while moving inward is not a crossing
        above = (pos > hi) | ((pos == hi) & (drift > 0.0))
        below = (pos < lo) | ((pos == lo) & (drift < 0.0))
        hit = above | below
        if not hit.any():
            return pos, drift
        pos[...] = np.where(above, 2.0 * hi - pos, np.where(below, 2.0 * lo - pos, pos))
        drift[hit] *= -1.0


@njit(cache=True)
def advance_positions_nb(pos, drift, lo, hi, dt):
    n = pos.shape[0]
    for i in range(n):
        for ax in range(2):
            z = pos[i, ax] + drift[i, ax] * dt
            v = drift[i, ax]
            while True:
                if z > hi[ax] or (z == hi[ax] and v > 0.0):
                    z = 2.0 * hi[ax] - z
                    v = -v
                elif z < lo[ax] or (z == lo[ax] and v < 0.0):
                    z = 2.0 * lo[ax] - z
                    v = -v
                else:
                    break
            pos[i, ax] = z
            drift[i, ax] = v
    return pos, drift


def proximity_np(pos, r_hat, zero_diag, out):
    """``exp(-|z_i - z_j|^2)`` for pairs closer than ``r_hat``, else 0."""
    diff = pos[:, None, :] - pos[None, :, :]
    d2 = np.einsum("ijx,ijx->ij", diff, diff)
    out[...] = np.where((d2 < r_hat * r_hat) & (d2 < FLUSH_D2), np.exp(-d2), 0.0)
    if zero_diag:
        np.fill_diagonal(out, 0.0)
    return out


@njit(cache=True)
def proximity_nb(pos, r_hat, zero_diag, out):
    n = pos.shape[0]
    r2 = min(r_hat * r_hat, FLUSH_D2)
    for i in range(n):
        out[i, i] = 0.0 if zero_diag else 1.0
        for j in range(i + 1, n):
            dx = pos[i, 0] - pos[j, 0]
            dy = pos[i, 1] - pos[j, 1]
            d2 = dx * dx + dy * dy
            w = np.exp(-d2) if d2 < r2 else 0.0
            out[i, j] = w
            out[j, i] = w
    return out


def fill_betas_np(kernel, beta_base, factor, out):
    out[...] = beta_base[:, None, None] * kernel[None, :, :] * factor
    return out


@njit(cache=True)
def fill_betas_nb(kernel, beta_base, factor, out):
    m, n, _ = out.shape
    for k in range(m):
        for i in range(n):
            for j in range(n):
                out[k, i, j] = beta_base[k] * kernel[i, j] * factor[k, i, j]
    return out


def integrate_mobility_np(
    p0, pos0, drift0, lo, hi, beta_base, factor, r_hat, zero_diag,
    deltas, dt, dt_last, nsteps, method, record_steps,
):
    """Integrate with beta(t) generated by the moving agents.

    Positions advance alongside the state; beta is evaluated at the RK4 stage
    times from the exactly reflected positions, and ``factor`` multiplies it
    entrywise (a held perturbation). Returns ``(records, pos_records, pos,
    drift, max_violation, status, fail_step)``.
    """
    m, n = p0.shape
    nrec = record_steps.shape[0]
    records = np.empty((nrec, m, n))
    pos_records = np.empty((nrec, n, 2))
    p = p0.copy()
    pos = pos0.copy()
    drift = drift0.copy()
    kern = np.empty((n, n))
    b0, bh, b1 = (np.empty((m, n, n)) for _ in range(3))
    nxt = np.empty_like(p)
    k1, k2, k3, k4, tmp = (np.empty_like(p) for _ in range(5))
    max_viol = 0.0
    r = 0
    if nrec > 0 and record_steps[0] == 0:
        records[0] = p
        pos_records[0] = pos
        r = 1
    fill_betas_np(proximity_np(pos, r_hat, zero_diag, kern), beta_base, factor, b0)
    for step in range(1, nsteps + 1):
        h = dt_last if step == nsteps else dt
        if method == RK4:
            half_pos, half_drift = pos.copy(), drift.copy()
            advance_positions_np(half_pos, half_drift, lo, hi, 0.5 * h)
            fill_betas_np(proximity_np(half_pos, r_hat, zero_diag, kern), beta_base, factor, bh)
        advance_positions_np(pos, drift, lo, hi, h)
        fill_betas_np(proximity_np(pos, r_hat, zero_diag, kern), beta_base, factor, b1)
        if method == RK4:
            rk4_step_np(p, b0, bh, b1, deltas, h, nxt, k1, k2, k3, k4, tmp)
        else:
            euler_step_np(p, b0, deltas, h, nxt, k1)
        viol = repair_np(nxt)
        if not np.isfinite(viol):
            return records[:r], pos_records[:r], pos, drift, max_viol, BLOWUP, step
        max_viol = max(max_viol, viol)
        p, nxt = nxt, p
        b0, b1 = b1, b0
        if r < nrec and record_steps[r] == step:
            records[r] = p
            pos_records[r] = pos
            r += 1
    return records, pos_records, pos, drift, max_viol, OK, -1


@njit(cache=True)
def integrate_mobility_nb(
    p0, pos0, drift0, lo, hi, beta_base, factor, r_hat, zero_diag,
    deltas, dt, dt_last, nsteps, method, record_steps,
):
    m, n = p0.shape
    nrec = record_steps.shape[0]
    records = np.empty((nrec, m, n))
    pos_records = np.empty((nrec, n, 2))
    p = p0.copy()
    pos = pos0.copy()
    drift = drift0.copy()
    half_pos = np.empty_like(pos)
    half_drift = np.empty_like(drift)
    kern = np.empty((n, n))
    b0 = np.empty((m, n, n))
    bh = np.empty((m, n, n))
    b1 = np.empty((m, n, n))
    nxt = np.empty_like(p)
    k1 = np.empty_like(p)
    k2 = np.empty_like(p)
    k3 = np.empty_like(p)
    k4 = np.empty_like(p)
    tmp = np.empty_like(p)
    max_viol = 0.0
    r = 0
    if nrec > 0 and record_steps[0] == 0:
        records[0] = p
        pos_records[0] = pos
        r = 1
    proximity_nb(pos, r_hat, zero_diag, kern)
    fill_betas_nb(kern, beta_base, factor, b0)
    for step in range(1, nsteps + 1):
        h = dt_last if step == nsteps else dt
        if method == RK4:
            half_pos[...] = pos
            half_drift[...] = drift
            advance_positions_nb(half_pos, half_drift, lo, hi, 0.5 * h)
            proximity_nb(half_pos, r_hat, zero_diag, kern)
            fill_betas_nb(kern, beta_base, factor, bh)
        advance_positions_nb(pos, drift, lo, hi, h)
        proximity_nb(pos, r_hat, zero_diag, kern)
        fill_betas_nb(kern, beta_base, factor, b1)
        if method == RK4:
            rk4_step_nb(p, b0, bh, b1, deltas, h, nxt, k1, k2, k3, k4, tmp)
        else:
            euler_step_nb(p, b0, deltas, h, nxt, k1)
        viol = repair_nb(nxt)
        if not np.isfinite(viol):
            return records[:r], pos_records[:r], pos, drift, max_viol, BLOWUP, step
        if viol > max_viol:
            max_viol = viol
        p, nxt = nxt, p
        b0, b1 = b1, b0
        if r < nrec and record_steps[r] == step:
            records[r] = p
            pos_records[r] = pos
            r += 1
    return records, pos_records, pos, drift, max_viol, OK, -1


# ---------------------------------------------------------------------------
# power iteration on a matrix with a positive dominant eigenvalue


def power_iterate_np(a, v0, tol, max_iter):
    """Power iteration with Rayleigh-quotient eigenvalue estimates.

    Returns ``(value, vector, iterations, converged)``; the vector is scaled
    to unit infinity norm.
    """
    v = v0 / np.abs(v0).max()
    lam = 0.0
    for it in range(1, max_iter + 1):
        w = a @ v
        new = (v @ w) / (v @ v)
        scale = np.abs(w).max()
        if scale == 0.0:
            return 0.0, v, it, True
        v = w / scale
        if it > 1 and abs(new - lam) <= tol * max(1.0, abs(new)):
            return new, v, it, True
        lam = new
    return lam, v, max_iter, False


@njit(cache=True)
def power_iterate_nb(a, v0, tol, max_iter):
    n = a.shape[0]
    v = v0 / np.abs(v0).max()
    w = np.empty(n)
    lam = 0.0
    for it in range(1, max_iter + 1):
        num = 0.0
        den = 0.0
        scale = 0.0
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc += a[i, j] * v[j]
            w[i] = acc
            num += v[i] * acc
            den += v[i] * v[i]
            if abs(acc) > scale:
                scale = abs(acc)
        new = num / den
        if scale == 0.0:
            return 0.0, v, it, True
        for i in range(n):
            v[i] = w[i] / scale
        if it > 1 and abs(new - lam) <= tol * max(1.0, abs(new)):
            return new, v, it, True
        lam = new
    return lam, v, max_iter, False


# ---------------------------------------------------------------------------
# single-virus endemic fixed point  p <- Bp / (delta + Bp)


def ndfe_iterate_np(b, delta, p0, tol, max_iter):
    """Returns ``(p, iterations, last_step)``; stops once the sup-norm step is below ``tol``."""
    p = p0.copy()
    step = np.inf
    for it in range(1, max_iter + 1):
        bp = b @ p
        new = bp / (delta + bp)
        step = np.abs(new - p).max()
        p = new
        if step < tol:
            return p, it, step
    return p, max_iter, step


@njit(cache=True)
def ndfe_iterate_nb(b, delta, p0, tol, max_iter):
    n = p0.shape[0]
    p = p0.copy()
    new = np.empty(n)
    step = np.inf
    for it in range(1, max_iter + 1):
        step = 0.0
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc += b[i, j] * p[j]
            new[i] = acc / (delta[i] + acc)
            d = abs(new[i] - p[i])
            if d > step:
                step = d
        for i in range(n):
            p[i] = new[i]
        if step < tol:
            return p, it, step
    return p, max_iter, step


# ---------------------------------------------------------------------------
# public bindings

if USE_NUMBA:
    rhs = rhs_nb
    repair = repair_nb
    rk4_step = rk4_step_nb
    euler_step = euler_step_nb
    integrate_static = integrate_static_nb
    advance_positions = advance_positions_nb
    proximity = proximity_nb
    integrate_mobility = integrate_mobility_nb
    power_iterate = power_iterate_nb
    ndfe_iterate = ndfe_iterate_nb
else:
    rhs = rhs_np
    repair = repair_np
    rk4_step = rk4_step_np
    euler_step = euler_step_np
    integrate_static = integrate_static_np
    advance_positions = advance_positions_np
    proximity = proximity_np
    integrate_mobility = integrate_mobility_np
    power_iterate = power_iterate_np
    ndfe_iterate = ndfe_iterate_np

BACKEND = "numba" if USE_NUMBA else "numpy"
