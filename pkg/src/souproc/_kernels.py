"""Compiled inner loops shared by the branching engine and the integrators.

Particle state lives in parallel arrays.  ``Z``/``Y`` hold positions at the
start of the current grid step (the *anchor*).  Within a step every particle
owns one open noise segment starting at ``seg``; closing a segment at time
``b`` folds a Gaussian increment of length ``b - seg`` into two accumulators:

* ``AB``  - plain Brownian sum, used by the Euler step of the interacting system;
* ``AOU`` - OU-weighted sum ``int exp(-gamma (b - u)) dB_u``, used by the exact
  OU step of the ordinary system.

Both accumulators consume the *same* standard normal, which is what couples
the two systems pathwise.  Children copy the parent's anchor and
accumulators and open fresh segments, so family members share the parent's
path up to the split.

Integer state ``ist``: [count, event_counter, id_counter, phase].
Float state ``fst``: [next_event_time, t_switch, eta].
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

from .rng import cell_normal, child_key, hash3, mix64, to_unit, uniform

I_COUNT, I_EVENTS, I_IDS, I_PHASE = 0, 1, 2, 3
F_NEXT, F_SWITCH, F_ETA = 0, 1, 2

STATUS_OK, STATUS_CAPACITY, STATUS_EXTINCT = 0, 1, 2

_TWO_SALT = np.uint64(0x2545F4914F6CDD1D)

PHI_NONE, PHI_TANH, PHI_BUMP, PHI_CONST = 0, 1, 2, 3


@njit(cache=True, nogil=True)
def ou_sigma(gamma, h):
    """Std of the exact OU transition over time ``h`` (per coordinate)."""
    x = gamma * h
    if abs(x) < 1e-8:
        var = h * (1.0 - x + (2.0 / 3.0) * x * x)
    else:
        var = -math.expm1(-2.0 * x) / (2.0 * gamma)
    return math.sqrt(var)


@njit(cache=True, nogil=True)
def _close_segment(i, t_end, AOU, AB, seg, key, cell, level, gamma):
    length = t_end - seg[i]
    if length <= 0.0:
        return
    d = AB.shape[1]
    sq = math.sqrt(length)
    sig = ou_sigma(gamma, length)
    decay = math.exp(-gamma * length)
    k = key[i]
    for c in range(d):
        xi = cell_normal(k, cell, c, level)
        AB[i, c] += sq * xi
        AOU[i, c] = decay * AOU[i, c] + sig * xi
    seg[i] = t_end


@njit(cache=True, nogil=True)
def _draw_waiting(t, n, seed, counter, N, beta, phase, t_switch):
    e = -math.log(uniform(seed, counter, 0, 0xE7))
    if phase == 0:
        return t + e / (N * n)
    rate = N * math.exp(-beta * (t - t_switch))
    z = beta * e / (n * rate)
    if z >= 1.0:
        return math.inf
    return t - math.log1p(-z) / beta


@njit(cache=True, nogil=True)
def draw_first_event(ist, fst, seed, N, beta):
    fst[F_NEXT] = _draw_waiting(0.0, ist[I_COUNT], seed, 0, N, beta, 0, 0.0)


@njit(cache=True, nogil=True)
def advance_events(Z, Y, AOU, AB, seg, key, pid, parent, birth, ist, fst,
                   t_lo, t_hi, cell, level, ybar, gamma, seed, N, p2, beta,
                   cap, terminal):
    """Process branch events with times in (t_lo, t_hi] in exact time order.

    Returns a status code; ``STATUS_CAPACITY`` means the arrays are full and
    the call must be repeated after growing them.
    """
    capacity = Z.shape[0]
    d = Z.shape[1]
    while fst[F_NEXT] <= t_hi:
        n = ist[I_COUNT]
        if n + 1 > capacity:
            return STATUS_CAPACITY
        te = fst[F_NEXT]
        counter = ist[I_EVENTS]
        hc = hash3(seed, counter, 1, 0xC4)
        j = int(to_unit(hc) * n)
        if j >= n:
            j = n - 1
        phase = ist[I_PHASE]
        prob2 = p2 if phase == 0 else 0.5
        two = to_unit(mix64(hc ^ _TWO_SALT)) < prob2
        _close_segment(j, te, AOU, AB, seg, key, cell, level, gamma)
        if two:
            m = n
            for c in range(d):
                Z[m, c] = Z[j, c]
                Y[m, c] = Y[j, c]
                AOU[m, c] = AOU[j, c]
                AB[m, c] = AB[j, c]
            seg[m] = te
            old_key = key[j]
            key[j] = child_key(old_key, counter, 0)
            key[m] = child_key(old_key, counter, 1)
            ids = ist[I_IDS]
            parent[j] = pid[j]
            parent[m] = pid[j]
            pid[j] = ids
            pid[m] = ids + 1
            ist[I_IDS] = ids + 2
            birth[j] = te
            birth[m] = te
            ist[I_COUNT] = n + 1
            if phase == 0 and cap > 0 and n + 1 >= cap:
                ist[I_PHASE] = 1
                fst[F_SWITCH] = te
        else:
            if n == 1:
                dt = te - t_lo
                decay = math.exp(-gamma * dt)
                for c in range(d):
                    terminal[c] = decay * Z[j, c] + AOU[j, c]
                    terminal[d + c] = Y[j, c] + gamma * (ybar[c] - Y[j, c]) * dt + AB[j, c]
                ist[I_COUNT] = 0
                ist[I_EVENTS] = counter + 1
                fst[F_ETA] = te
                fst[F_NEXT] = math.inf
                return STATUS_EXTINCT
            last = n - 1
            if j != last:
                for c in range(d):
                    Z[j, c] = Z[last, c]
                    Y[j, c] = Y[last, c]
                    AOU[j, c] = AOU[last, c]
                    AB[j, c] = AB[last, c]
                seg[j] = seg[last]
                key[j] = key[last]
                pid[j] = pid[last]
                parent[j] = parent[last]
                birth[j] = birth[last]
            ist[I_COUNT] = last
        ist[I_EVENTS] = counter + 1
        fst[F_NEXT] = _draw_waiting(te, ist[I_COUNT], seed, counter + 1, N, beta,
                                    ist[I_PHASE], fst[F_SWITCH])
    return STATUS_OK


@njit(cache=True, nogil=True)
def finalize_step(Z, Y, AOU, AB, seg, key, n, t_lo, t_hi, cell, level, ybar, gamma):
    """Close all open segments at ``t_hi`` and move anchors to ``t_hi``.

    Ordinary system: exact OU transition along each lineage.
    Interacting system: explicit Euler with the COM frozen at the step start.
    """
    h = t_hi - t_lo
    decay = math.exp(-gamma * h)
    sq = math.sqrt(h)
    sig = ou_sigma(gamma, h)
    d = Z.shape[1]
    for i in range(n):
        if seg[i] == t_lo:
            # no event on this lineage during the step
            k = key[i]
            for c in range(d):
                xi = cell_normal(k, cell, c, level)
                Z[i, c] = decay * Z[i, c] + sig * xi
                Y[i, c] = Y[i, c] + gamma * (ybar[c] - Y[i, c]) * h + sq * xi
        else:
            _close_segment(i, t_hi, AOU, AB, seg, key, cell, level, gamma)
            for c in range(d):
                Z[i, c] = decay * Z[i, c] + AOU[i, c]
                Y[i, c] = Y[i, c] + gamma * (ybar[c] - Y[i, c]) * h + AB[i, c]
                AOU[i, c] = 0.0
                AB[i, c] = 0.0
        seg[i] = t_hi


@njit(cache=True, nogil=True)
def _phi(code, x):
    """Test function value, gradient along x[0]-only or radial, Laplacian."""
    d = x.shape[0]
    if code == PHI_TANH:
        th = math.tanh(x[0])
        s2 = 1.0 - th * th
        return th, s2, -2.0 * th * s2
    if code == PHI_BUMP:
        r2 = 0.0
        for c in range(d):
            r2 += x[c] * x[c]
        v = math.exp(-0.5 * r2)
        return v, -v, (r2 - d) * v
    return 1.0, 0.0, 0.0


@njit(cache=True, nogil=True)
def _phi_stats(P, n, center, gamma, code, interacting, out, base):
    """Mean of phi, phi^2 and of the generator applied to phi.

    Interacting generator: gamma grad(phi).(center - x) + Laplacian/2.
    Ordinary generator: -gamma x.grad(phi) + Laplacian/2.
    """
    d = P.shape[1]
    s1 = 0.0
    s2 = 0.0
    sb = 0.0
    for i in range(n):
        v, g, lap = _phi(code, P[i])
        if code == PHI_BUMP:
            # grad = g * x for the radial bump
            dot = 0.0
            for c in range(d):
                if interacting:
                    dot += g * P[i, c] * (center[c] - P[i, c])
                else:
                    dot += -g * P[i, c] * P[i, c]
        elif code == PHI_TANH:
            if interacting:
                dot = g * (center[0] - P[i, 0])
            else:
                dot = -g * P[i, 0]
        else:
            dot = 0.0
        s1 += v
        s2 += v * v
        sb += gamma * dot + 0.5 * lap
    out[base] = s1 / n
    out[base + 1] = s2 / n
    out[base + 2] = sb / n


@njit(cache=True, nogil=True)
def observe(Z, Y, n, acc, gamma, phi_code, lo, hi, zbar, ybar, scal, boxz, boxy):
    """Grid-time functionals of both clouds.

    ``scal``: [spread_z, spread_y, coupling_err, phi/phi2/gen for Y, same for Z].
    """
    d = Z.shape[1]
    for c in range(d):
        zbar[c] = 0.0
        ybar[c] = 0.0
    for i in range(n):
        for c in range(d):
            zbar[c] += Z[i, c]
            ybar[c] += Y[i, c]
    for c in range(d):
        zbar[c] /= n
        ybar[c] /= n
    sz = 0.0
    sy = 0.0
    err = 0.0
    for i in range(n):
        e2 = 0.0
        for c in range(d):
            dz = Z[i, c] - zbar[c]
            dy = Y[i, c] - ybar[c]
            sz += dz * dz
            sy += dy * dy
            de = Y[i, c] - Z[i, c] - acc[c]
            e2 += de * de
        if e2 > err:
            err = e2
    scal[0] = math.sqrt(sz / n)
    scal[1] = math.sqrt(sy / n)
    scal[2] = math.sqrt(err)
    if phi_code != PHI_NONE:
        _phi_stats(Y, n, ybar, gamma, phi_code, True, scal, 3)
        _phi_stats(Z, n, zbar, gamma, phi_code, False, scal, 6)
    nb = lo.shape[0]
    for b in range(nb):
        cz = 0
        cy = 0
        for i in range(n):
            inz = True
            iny = True
            for c in range(d):
                if Z[i, c] < lo[b, c] or Z[i, c] > hi[b, c]:
                    inz = False
                if Y[i, c] < lo[b, c] or Y[i, c] > hi[b, c]:
                    iny = False
            if inz:
                cz += 1
            if iny:
                cy += 1
        boxz[b] = cz
        boxy[b] = cy
