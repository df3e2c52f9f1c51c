"""Hot numeric kernels: catalog field evaluation and explicit Runge-Kutta drivers.

Two interchangeable back ends are provided.  With numba available the field
evaluation and the integrator loops are compiled with ``@njit``; otherwise, or
when ``FLOWSTAB_NUMBA=0`` is set in the environment, the same drivers run as
plain Python on top of vectorised numpy field evaluation.  Both back ends use
the same Dormand-Prince tableau and step controller, so they agree to rounding.

The integrator state is always a 2-D array ``(N, n)``: ``N`` copies of an
``n``-dimensional system advanced with one shared step sequence.  Stacking the
copies is what makes finite-difference stencils of the flow map smooth in the
initial condition.
"""
import math
import os

import numpy as np

try:  # pragma: no cover - exercised implicitly
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    _HAVE_NUMBA = False


def _env_wants_numba():
    flag = os.environ.get("FLOWSTAB_NUMBA", "1").strip().lower()
    return flag not in ("0", "false", "no", "off")


USE_NUMBA = _HAVE_NUMBA and _env_wants_numba()

# perturbation kind codes, shared with fields.PerturbationKind
ZERO, BOUNDED, LINEAR_GROWTH, POWER_IN_BALL, COMPONENT_POWER = range(5)

# status codes returned by the drivers
OK, STEP_UNDERFLOW, MAX_STEPS, NON_FINITE = range(4)

# Dormand-Prince 5(4)
C2, C3, C4, C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
A21 = 1 / 5
A31, A32 = 3 / 40, 9 / 40
A41, A42, A43 = 44 / 45, -56 / 15, 32 / 9
A51, A52, A53, A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
A61, A62, A63, A64, A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
B1, B3, B4, B5, B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
E1, E3, E4, E5, E6, E7 = (
    71 / 57600,
    -71 / 16695,
    71 / 1920,
    -17253 / 339200,
    22 / 525,
    -1 / 40,
)


def _field_loops(Y, P, out):
    alpha, beta, m, kind, gamma, power, coupled = P
    N, n = Y.shape
    for r in range(N):
        s = 0.0
        for i in range(n):
            s += Y[r, i] * Y[r, i]
        h = 0.0
        if kind == BOUNDED:
            h = gamma * s / (1.0 + s) ** 1.5
        elif kind == LINEAR_GROWTH:
            h = gamma * s / (1.0 + s)
        elif kind == POWER_IN_BALL:
            h = gamma * s ** (power // 2)
        for i in range(n):
            xi = Y[r, i]
            v = alpha[i] * xi + beta[i] * xi ** (1 + m[i])
            if kind == BOUNDED or kind == LINEAR_GROWTH or kind == POWER_IN_BALL:
                j = (i + 1) % n if coupled else i
                v += h * Y[r, j]
            elif kind == COMPONENT_POWER:
                sc = s if coupled else xi * xi
                v += gamma * xi ** (2 + m[i]) / math.sqrt(1.0 + sc)
            out[r, i] = v


def _field_vec(Y, P, out):
    alpha, beta, m, kind, gamma, power, coupled = P
    v = alpha * Y + beta * Y ** (1 + m)
    if kind != ZERO:
        s = np.sum(Y * Y, axis=1, keepdims=True)
        if kind == COMPONENT_POWER:
            sc = s if coupled else Y * Y
            v = v + gamma * Y ** (2 + m) / np.sqrt(1.0 + sc)
        else:
            if kind == BOUNDED:
                h = gamma * s / (1.0 + s) ** 1.5
            elif kind == LINEAR_GROWTH:
                h = gamma * s / (1.0 + s)
            else:
                h = gamma * s ** (power // 2)
            shifted = np.roll(Y, -1, axis=1) if coupled else Y
            v = v + h * shifted
    out[:, :] = v


def make_dopri(field):
    """Build a Dormand-Prince driver around ``field(Y, P, out)``."""

    def dopri(Y0, t_out, P, rtol, atol, h_init, h_min, h_max, max_steps):
        N, n = Y0.shape
        T = t_out.shape[0]
        out = np.empty((T, N, n))
        y = Y0.copy()
        k1 = np.empty_like(y)
        k2 = np.empty_like(y)
        k3 = np.empty_like(y)
        k4 = np.empty_like(y)
        k5 = np.empty_like(y)
        k6 = np.empty_like(y)
        k7 = np.empty_like(y)
        direction = 1.0
        if T > 0 and t_out[T - 1] < 0.0:
            direction = -1.0
        t = 0.0
        field(y, P, k1)
        h = h_init
        if h <= 0.0:
            d0 = np.max(np.abs(y)) + 1e-12
            d1 = np.max(np.abs(k1))
            h = 1e-6
            if d1 > 1e-14:
                h = 0.01 * d0 / d1
            h = min(max(h, 1e-8), h_max)
        idx = 0
        while idx < T and t_out[idx] * direction <= 0.0:
            out[idx] = y
            idx += 1
        steps = 0
        rejected = 0
        status = OK
        while idx < T:
            target = t_out[idx]
            remaining = (target - t) * direction
            clipped = False
            hh = h
            if hh >= remaining:
                hh = remaining
                clipped = True
            if hh < h_min and remaining > h_min:
                status = STEP_UNDERFLOW
                break
            hs = direction * hh
            field(y + hs * (A21 * k1), P, k2)
            field(y + hs * (A31 * k1 + A32 * k2), P, k3)
            field(y + hs * (A41 * k1 + A42 * k2 + A43 * k3), P, k4)
            field(y + hs * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4), P, k5)
            field(y + hs * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5), P, k6)
            ynew = y + hs * (B1 * k1 + B3 * k3 + B4 * k4 + B5 * k5 + B6 * k6)
            field(ynew, P, k7)
            errv = hs * (E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7)
            scale = atol + rtol * np.maximum(np.abs(y), np.abs(ynew))
            err = np.max(np.abs(errv) / scale)
            if not np.isfinite(err):
                rejected += 1
                h = 0.2 * hh
                if h < h_min:
                    status = NON_FINITE
                    break
                continue
            if err <= 1.0:
                steps += 1
                if clipped:
                    t = target
                else:
                    t = t + hs
                y = ynew
                k1[:, :] = k7
                while idx < T and (t_out[idx] - t) * direction <= 0.0:
                    out[idx] = y
                    idx += 1
            else:
                rejected += 1
            if err == 0.0:
                fac = 5.0
            else:
                fac = min(5.0, max(0.2, 0.9 * err ** -0.2))
            hnew = hh * fac
            if clipped and err <= 1.0:
                hnew = max(hnew, h)
            h = min(hnew, h_max)
            if steps + rejected >= max_steps:
                status = MAX_STEPS
                break
        return out, t, steps, rejected, status

    return dopri


def make_rk4(field):
    """Build a fixed-step classical fourth-order driver around ``field``."""

    def rk4(Y0, t_out, P, h):
        N, n = Y0.shape
        T = t_out.shape[0]
        out = np.empty((T, N, n))
        y = Y0.copy()
        k1 = np.empty_like(y)
        k2 = np.empty_like(y)
        k3 = np.empty_like(y)
        k4 = np.empty_like(y)
        direction = 1.0
        if T > 0 and t_out[T - 1] < 0.0:
            direction = -1.0
        t = 0.0
        steps = 0
        status = OK
        for idx in range(T):
            target = t_out[idx]
            while (target - t) * direction > 0.0:
                hh = min(h, (target - t) * direction)
                hs = direction * hh
                field(y, P, k1)
                field(y + 0.5 * hs * k1, P, k2)
                field(y + 0.5 * hs * k2, P, k3)
                field(y + hs * k3, P, k4)
                y = y + hs / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                if (target - t) * direction <= h:
                    t = target
                else:
                    t = t + hs
                steps += 1
                if not np.all(np.isfinite(y)):
                    status = NON_FINITE
                    break
            if status != OK:
                for j in range(idx, T):
                    out[j] = np.nan
                break
            out[idx] = y
        return out, t, steps, 0, status

    return rk4


dopri_numpy = make_dopri(_field_vec)
rk4_numpy = make_rk4(_field_vec)
field_numpy = _field_vec

if _HAVE_NUMBA:
    field_numba = numba.njit(cache=True)(_field_loops)
    dopri_numba = numba.njit(cache=True)(make_dopri(field_numba))
    rk4_numba = numba.njit(cache=True)(make_rk4(field_numba))
else:  # pragma: no cover
    field_numba = dopri_numba = rk4_numba = None


def backend():
    """Name of the active back end: ``"numba"`` or ``"numpy"``."""
    return "numba" if USE_NUMBA else "numpy"


def catalog_field(Y, P, use_numba=None):
    """Evaluate the catalog vector field row-wise on a ``(N, n)`` array."""
    use_numba = USE_NUMBA if use_numba is None else use_numba
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    out = np.empty_like(Y)
    (field_numba if use_numba else field_numpy)(Y, P, out)
    return out


def integrate_catalog(Y0, t_out, P, rtol, atol, h_init, h_min, h_max, max_steps,
                      method="dopri", use_numba=None):
    """Integrate the stacked catalog system; returns ``(out, t, steps, rejected, status)``."""
    use_numba = USE_NUMBA if use_numba is None else use_numba
    Y0 = np.ascontiguousarray(Y0, dtype=np.float64)
    t_out = np.ascontiguousarray(t_out, dtype=np.float64)
    if method == "rk4":
        fn = rk4_numba if use_numba else rk4_numpy
        return fn(Y0, t_out, P, float(h_init))
    fn = dopri_numba if use_numba else dopri_numpy
    return fn(Y0, t_out, P, float(rtol), float(atol), float(h_init), float(h_min),
              float(h_max), int(max_steps))
