"""Compiled inner loops.

Every engine that evaluates the lattice map goes through the functions in
this module, so a single Python ``step`` call and a compiled orbit run
produce bit-identical states.

Map parameters are packed as ``(kind, pars, coeffs)``:

* kind 0, the standard tent, ignores ``pars``;
* kind 1, the general tent, uses ``pars[0]`` (left slope), ``pars[1]``
  (right slope magnitude) and ``pars[2]`` (kink);
* kind 2, the perturbed tent, uses ``pars[3]`` (slope s) and the sine
  coefficients ``coeffs``.
"""

import math

import numpy as np
from numba import njit

KIND_STANDARD = 0
KIND_GENERAL = 1
KIND_PERTURBED = 2

STATUS_OK = 0
STATUS_ESCAPE = 1

# Largest magnitude of the shadow perturbation: half an ulp of 1.
SHADOW_AMPLITUDE = 2.0 ** -53
ESCAPE_TOL = 1e-12

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


@njit(cache=True, inline="always")
def _mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(cache=True, inline="always")
def shadow_offset(key, n):
    """Counter-based uniform offset in [-2^-53, 2^-53) for step ``n``."""
    r = _mix64(key + np.uint64(n + 1) * _GOLDEN)
    u = (r >> np.uint64(11)) * (1.0 / 9007199254740992.0)
    return (2.0 * u - 1.0) * SHADOW_AMPLITUDE


@njit(cache=True, inline="always")
def fmap(kind, pars, coeffs, x):
    if kind == 0:
        if x < 0.5:
            return 2.0 * x
        return 2.0 * (1.0 - x)
    if kind == 1:
        if x < pars[2]:
            return pars[0] * x
        return pars[1] * (1.0 - x)
    s = pars[3]
    if x < 0.5:
        y = 1.0 - s * (0.5 - x)
    else:
        y = 1.0 - s * (x - 0.5)
    for k in range(coeffs.shape[0]):
        y += coeffs[k] * math.sin((k + 1) * math.pi * x)
    return y


@njit(cache=True, inline="always")
def fderiv(kind, pars, coeffs, x):
    if kind == 0:
        return 2.0 if x < 0.5 else -2.0
    if kind == 1:
        return pars[0] if x < pars[2] else -pars[1]
    y = pars[3] if x < 0.5 else -pars[3]
    for k in range(coeffs.shape[0]):
        w = (k + 1) * math.pi
        y += coeffs[k] * w * math.cos(w * x)
    return y


@njit(cache=True, inline="always")
def fderiv2(kind, pars, coeffs, x):
    y = 0.0
    if kind == 2:
        for k in range(coeffs.shape[0]):
            w = (k + 1) * math.pi
            y -= coeffs[k] * w * w * math.sin(w * x)
    return y


@njit(cache=True)
def map_array(kind, pars, coeffs, xs, order):
    out = np.empty_like(xs)
    for i in range(xs.shape[0]):
        if order == 0:
            out[i] = fmap(kind, pars, coeffs, xs[i])
        elif order == 1:
            out[i] = fderiv(kind, pars, coeffs, xs[i])
        else:
            out[i] = fderiv2(kind, pars, coeffs, xs[i])
    return out


@njit(cache=True, inline="always")
def _couple(kind, pars, coeffs, A, c, x, f, y):
    """y = (I + cA) f(x) in difference form; exact on the diagonal."""
    m = x.shape[0]
    for i in range(m):
        f[i] = fmap(kind, pars, coeffs, x[i])
    for i in range(m):
        acc = 0.0
        for j in range(m):
            if j != i:
                a = A[i, j]
                if a != 0.0:
                    acc += a * (f[j] - f[i])
        y[i] = f[i] + c * acc


@njit(cache=True, inline="always")
def _range_fix(y, clamp):
    """Clamp rounding-level excursions into [0,1].

    Returns False, leaving ``y`` untouched, when an unclamped system has a
    coordinate further than ESCAPE_TOL outside the unit interval.
    """
    if not clamp:
        for i in range(y.shape[0]):
            if y[i] < -ESCAPE_TOL or y[i] > 1.0 + ESCAPE_TOL:
                return False
    for i in range(y.shape[0]):
        if y[i] < 0.0:
            y[i] = 0.0
        elif y[i] > 1.0:
            y[i] = 1.0
    return True


@njit(cache=True, inline="always")
def _apply_shadow(y, xi):
    for i in range(y.shape[0]):
        v = abs(y[i] + xi)
        if v > 1.0:
            v = 2.0 - v
        y[i] = v


@njit(cache=True, inline="always")
def _dist(x):
    m = x.shape[0]
    if m == 2:
        return abs(x[0] - x[1]) / math.sqrt(2.0)
    acc = 0.0
    for i in range(m):
        for j in range(i + 1, m):
            d = x[i] - x[j]
            acc += d * d
    return math.sqrt(acc / m)


@njit(cache=True)
def step_kernel(kind, pars, coeffs, A, c, x, clamp, out):
    """One plain step. Returns STATUS_OK or STATUS_ESCAPE; ``out`` gets the
    raw (unclamped) image on escape."""
    f = np.empty_like(x)
    _couple(kind, pars, coeffs, A, c, x, f, out)
    if not _range_fix(out, clamp):
        return STATUS_ESCAPE
    return STATUS_OK


@njit(cache=True, nogil=True)
def step_many(kind, pars, coeffs, A, c, X, clamp, out):
    """Apply one plain step to every row of ``X``.

    Returns the index of the first escaping row, or -1 when all rows stay in
    range. Rows past an escape are still computed.
    """
    m = X.shape[1]
    f = np.empty(m)
    first = -1
    for r in range(X.shape[0]):
        _couple(kind, pars, coeffs, A, c, X[r], f, out[r])
        if not _range_fix(out[r], clamp):
            if first < 0:
                first = r
    return first


@njit(cache=True, nogil=True)
def dist_kernel(X):
    out = np.empty(X.shape[0])
    for r in range(X.shape[0]):
        out[r] = _dist(X[r])
    return out


@njit(cache=True, nogil=True, inline="always")
def _orbit_kernel_body(kind, pars, coeffs, A, c, x, n_steps, burn_in, eps, gamma,
                 sync_tol, sync_sustain, stride, shadow, key, clamp, trace, stop_on_sync):
    """Iterate in place and accumulate statistics.

    Returns ``(ints, floats)`` with
    ints = [status, last_step, order_entries, disorder_entries,
            alternations, order_count, sync_time, sustained_sync_time,
            n_post]
    floats = [min_dist, max_dist, max_dist_after_sync]

    last_step is the escape step, or the step of sustained synchronization
    when ``stop_on_sync`` ends the run early, else 0.
    """
    m = x.shape[0]
    f = np.empty(m)
    y = np.empty(m)
    ints = np.zeros(9, dtype=np.int64)
    floats = np.zeros(3)
    ints[6] = -1
    ints[7] = -1
    mn = np.inf
    mx = 0.0
    mx_sync = 0.0
    label = 0  # 0 undetermined, 1 ORDER, 2 DISORDER
    in_order = False
    in_dis = False
    run = 0
    row = 0
    stop = False

    d = _dist(x)
    for n in range(n_steps + 1):
        if n > 0:
            _couple(kind, pars, coeffs, A, c, x, f, y)
            if not _range_fix(y, clamp):
                ints[0] = STATUS_ESCAPE
                ints[1] = n
                x[:] = y
                break
            if shadow:
                _apply_shadow(y, shadow_offset(key, n))
            x[:] = y
            d = _dist(x)
        if stride > 0 and n % stride == 0:
            trace[row, 0] = n
            for i in range(m):
                trace[row, 1 + i] = x[i]
            trace[row, 1 + m] = d
            row += 1
        # synchronization bookkeeping over the whole horizon
        if ints[6] < 0:
            if d <= sync_tol:
                ints[6] = n
        elif d > mx_sync:
            mx_sync = d
        if ints[7] < 0:
            if d <= sync_tol:
                run += 1
                if run >= sync_sustain:
                    ints[7] = n - sync_sustain + 1
                    stop = stop_on_sync
            else:
                run = 0
        if stop:
            ints[1] = n
            break
        if n <= burn_in:
            continue
        ints[8] += 1
        if d < mn:
            mn = d
        if d > mx:
            mx = d
        if d <= eps:
            ints[5] += 1
            if not in_order:
                ints[2] += 1
                in_order = True
        else:
            in_order = False
        if d >= gamma:
            if not in_dis:
                ints[3] += 1
                in_dis = True
        else:
            in_dis = False
        # Schmitt trigger; the dead band keeps the previous label
        if label == 0:
            label = 1 if d <= eps else 2
        elif label == 1 and d >= gamma:
            label = 2
            ints[4] += 1
        elif label == 2 and d <= eps:
            label = 1
            ints[4] += 1
    floats[0] = mn
    floats[1] = mx
    floats[2] = mx_sync
    return ints, floats


@njit(cache=True, nogil=True)
def orbit_kernel(kind, pars, coeffs, A, c, x, n_steps, burn_in, eps, gamma,
                 sync_tol, sync_sustain, stride, shadow, key, clamp, trace, stop_on_sync):
    # one inlined copy per map kind, so the branch on kind folds away
    if kind == 0:
        return _orbit_kernel_body(0, pars, coeffs, A, c, x, n_steps, burn_in, eps, gamma,
                sync_tol, sync_sustain, stride, shadow, key, clamp, trace, stop_on_sync)
    if kind == 1:
        return _orbit_kernel_body(1, pars, coeffs, A, c, x, n_steps, burn_in, eps, gamma,
                sync_tol, sync_sustain, stride, shadow, key, clamp, trace, stop_on_sync)
    return _orbit_kernel_body(2, pars, coeffs, A, c, x, n_steps, burn_in, eps, gamma, sync_tol,
                sync_sustain, stride, shadow, key, clamp, trace, stop_on_sync)


@njit(cache=True, nogil=True, inline="always")
def _sync_search_body(kind, pars, coeffs, A, c, x, horizon, tol, sustain, shadow,
                key, clamp):
    """Return (status, step) of the first run of ``sustain`` consecutive
    states with dist <= tol; step is the start of that run, -1 if none."""
    m = x.shape[0]
    f = np.empty(m)
    y = np.empty(m)
    run = 0
    for n in range(horizon + 1):
        if n > 0:
            _couple(kind, pars, coeffs, A, c, x, f, y)
            if not _range_fix(y, clamp):
                x[:] = y
                return STATUS_ESCAPE, n
            if shadow:
                _apply_shadow(y, shadow_offset(key, n))
            x[:] = y
        if _dist(x) <= tol:
            run += 1
            if run >= sustain:
                return STATUS_OK, n - sustain + 1
        else:
            run = 0
    return STATUS_OK, -1


@njit(cache=True, nogil=True)
def sync_search(kind, pars, coeffs, A, c, x, horizon, tol, sustain, shadow,
                key, clamp):
    # one inlined copy per map kind, so the branch on kind folds away
    if kind == 0:
        return _sync_search_body(0, pars, coeffs, A, c, x, horizon, tol, sustain, shadow, key,
                clamp)
    if kind == 1:
        return _sync_search_body(1, pars, coeffs, A, c, x, horizon, tol, sustain, shadow, key,
                clamp)
    return _sync_search_body(2, pars, coeffs, A, c, x, horizon, tol, sustain, shadow, key, clamp)


@njit(cache=True)
def schmitt_events(dist, eps, gamma):
    """Switch points of the two-threshold labeling.

    Returns an (k, 2) array of (index, new_label) rows, label 1 = ORDER,
    2 = DISORDER. The first sample sets the initial label: ORDER if it is
    at most eps, DISORDER otherwise.
    """
    out = np.empty((dist.shape[0], 2), dtype=np.int64)
    k = 0
    label = 0
    for i in range(dist.shape[0]):
        d = dist[i]
        if label == 0:
            label = 1 if d <= eps else 2
        elif label == 1 and d >= gamma:
            label = 2
            out[k, 0] = i
            out[k, 1] = 2
            k += 1
        elif label == 2 and d <= eps:
            label = 1
            out[k, 0] = i
            out[k, 1] = 1
            k += 1
    return out[:k]


# ---------------------------------------------------------------------------
# error-free transformations (double-double) for transverse-factor checks


@njit(cache=True, inline="always")
def _two_sum(a, b):
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


@njit(cache=True, inline="always")
def _split(a):
    t = 134217729.0 * a
    hi = t - (t - a)
    return hi, a - hi


@njit(cache=True, inline="always")
def _two_prod(a, b):
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    return p, ((ah * bh - p) + ah * bl + al * bh) + al * bl


@njit(cache=True, inline="always")
def _dd_add(ah, al, bh, bl):
    s, e = _two_sum(ah, bh)
    e += al + bl
    return _two_sum(s, e)


@njit(cache=True, inline="always")
def _dd_mul(ah, al, b):
    p, e = _two_prod(ah, b)
    e += al * b
    return _two_sum(p, e)


@njit(cache=True, inline="always")
def _fmap_dd(kind, pars, coeffs, x):
    if kind == 0:
        if x < 0.5:
            return 2.0 * x, 0.0
        return 2.0 * (1.0 - x), 0.0
    if kind == 1:
        if x < pars[2]:
            return _two_prod(pars[0], x)
        u, ul = _two_sum(1.0, -x)
        return _dd_mul(u, ul, pars[1])
    if x < 0.5:
        u, ul = _two_sum(0.5, -x)
    else:
        u, ul = _two_sum(x, -0.5)
    p, pl = _dd_mul(u, ul, -pars[3])
    h, l = _dd_add(1.0, 0.0, p, pl)
    g = 0.0
    for k in range(coeffs.shape[0]):
        g += coeffs[k] * math.sin((k + 1) * math.pi * x)
    return _dd_add(h, l, g, 0.0)


@njit(cache=True, nogil=True)
def transverse_ratio_kernel(kind, pars, coeffs, A, c, X):
    """|y_1 - y_2| / |x_1 - x_2| for rows of X (m = 2), with the image
    y = (I + cA) f(x) and both differences evaluated in double-double."""
    out = np.empty(X.shape[0])
    a12 = A[0, 1]
    a21 = A[1, 0]
    for r in range(X.shape[0]):
        x1 = X[r, 0]
        x2 = X[r, 1]
        f1h, f1l = _fmap_dd(kind, pars, coeffs, x1)
        f2h, f2l = _fmap_dd(kind, pars, coeffs, x2)
        dh, dl = _dd_add(f2h, f2l, -f1h, -f1l)
        p1h, p1l = _dd_mul(dh, dl, a12 * c)
        p2h, p2l = _dd_mul(-dh, -dl, a21 * c)
        y1h, y1l = _dd_add(f1h, f1l, p1h, p1l)
        y2h, y2l = _dd_add(f2h, f2l, p2h, p2l)
        nh, nl = _dd_add(y1h, y1l, -y2h, -y2l)
        xh, xl = _two_sum(x1, -x2)
        out[r] = abs(nh + nl) / abs(xh + xl)
    return out


@njit(cache=True, nogil=True, inline="always")
def _trap_kernel_body(kind, pars, coeffs, A, c, x, horizon, lo, hi, hold, clamp):
    """First n such that states n .. n+hold-1 all lie in [lo, hi]^m.

    Returns (status, n), n = -1 if the orbit is not trapped within the
    horizon."""
    m = x.shape[0]
    f = np.empty(m)
    y = np.empty(m)
    run = 0
    for n in range(horizon + 1):
        if n > 0:
            _couple(kind, pars, coeffs, A, c, x, f, y)
            if not _range_fix(y, clamp):
                x[:] = y
                return STATUS_ESCAPE, n
            x[:] = y
        inside = True
        for i in range(m):
            if x[i] < lo or x[i] > hi:
                inside = False
        if inside:
            run += 1
            if run >= hold:
                return STATUS_OK, n - hold + 1
        else:
            run = 0
    return STATUS_OK, -1


@njit(cache=True, nogil=True)
def trap_kernel(kind, pars, coeffs, A, c, x, horizon, lo, hi, hold, clamp):
    # one inlined copy per map kind, so the branch on kind folds away
    if kind == 0:
        return _trap_kernel_body(0, pars, coeffs, A, c, x, horizon, lo, hi, hold, clamp)
    if kind == 1:
        return _trap_kernel_body(1, pars, coeffs, A, c, x, horizon, lo, hi, hold, clamp)
    return _trap_kernel_body(2, pars, coeffs, A, c, x, horizon, lo, hi, hold, clamp)
