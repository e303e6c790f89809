"""Density-equalizing transform of a measure field by linear diffusion.

The measure is treated as a particle density. It is embedded in a larger
square "sea" of mean density and relaxed by the heat equation with
zero-flux walls. The heat equation is solved exactly in the cosine basis,
so the density and its gradient can be synthesised at any time ``t``.
Every original cell center is advected through ``v = -grad(rho) / rho``
with an adaptive Runge-Kutta 4(3) integrator until the flow has died out.

All solver-internal coordinates are in cell-index units: the padded
domain is ``[0, L]^2`` and each original cell is a unit square, so
displacement tolerances read directly as fractions of a cell width.
"""

from __future__ import annotations

import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from scipy import fft

from .errors import InputError, OutOfDomainError, SolverError
from .grid import GridSpec, MeasureField, interpolate

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DiffusionParams:
    """Knobs for :func:`solve_transform`.

    pad_factor:
        padded linear size relative to ``max(n_1, n_2)``, rounded up to a
        power of two.
    density_floor_rel:
        densities are floored at this fraction of the mean.
    convergence_tol:
        bound, in cell widths, on both the per-step local error estimate and
        the displacement still to come when integration stops.
    max_time_factor:
        hard horizon at ``exp(-lambda_min t) = 10**-max_time_factor``.
    rk_safety, max_step_displacement:
        step-size controller safety factor and the per-step displacement
        cap (cell widths).
    """

    pad_factor: float = 2.0
    density_floor_rel: float = 1e-8
    convergence_tol: float = 1e-9
    max_time_factor: float = 12.0
    rk_safety: float = 0.8
    max_step_displacement: float = 0.2
    max_steps: int = 200_000

    def __post_init__(self):
        for name in (
            "pad_factor",
            "density_floor_rel",
            "convergence_tol",
            "max_time_factor",
            "rk_safety",
            "max_step_displacement",
            "max_steps",
        ):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise InputError(f"{name} must be positive and finite, got {v}")
        if self.pad_factor < 1.5:
            raise InputError(f"pad_factor must be >= 1.5, got {self.pad_factor}")


@dataclass(frozen=True)
class TransformField:
    """Images ``T(z_c)`` of every cell center, shape ``(n_1, n_2, 2)``."""

    spec: GridSpec
    positions: np.ndarray
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        pos = np.array(self.positions, dtype=np.float64, copy=True)
        if pos.shape != self.spec.shape + (2,):
            raise InputError(f"positions must have shape {self.spec.shape + (2,)}, got {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise InputError("transform positions must be finite")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @property
    def values(self) -> np.ndarray:
        return self.positions


def identity_transform(spec: GridSpec) -> TransformField:
    return TransformField(spec, spec.cell_centers())


# exp(-55) ~ 1e-24: far below double resolution relative to the mean density
_MODE_CUTOFF = 55.0


def _next_pow2(n: int) -> int:
    return 1 << max(0, math.ceil(math.log2(n)))


class _SpectralDensity:
    """Closed-form solution of the heat equation on ``[0, L]^2`` with zero-flux walls.

    Snapshots are synthesised only for the band of rows (axis 1 index
    ranges are always complete) that the particles currently occupy. Rows
    are transformed independently, so the band never changes the values.
    """

    def __init__(self, rho0: np.ndarray, workers: int | None = None, cache_size: int = 3):
        self.L = rho0.shape[0]
        self.workers = workers
        self.coef = fft.dct(fft.dct(rho0, type=2, axis=0, workers=workers), type=2, axis=1, workers=workers)
        self.k = np.pi * np.arange(self.L) / self.L
        self.k2 = self.k**2
        self.floor = float(rho0.min()) * 0.5
        self._cache: OrderedDict[float, tuple] = OrderedDict()
        self._cache_size = cache_size
        self.snapshots = 0
        self.lo = self.L
        self.hi = -1

    def fields(self, t: float, lo: int = 0, hi: int | None = None):
        """Rows ``lo..hi`` of ``(rho, d rho / dx_1, d rho / dx_2)`` at time ``t``.

        Returns ``(first_row, (rho, d1, d2))`` with each field flattened
        row-major over the band.
        """
        hi = self.L - 1 if hi is None else hi
        hit = self._cache.get(t)
        if hit is not None and hit[0] <= lo and hit[1] >= hi:
            self._cache.move_to_end(t)
            return hit[0], hit[2]
        # grow the band monotonically so later snapshots rarely need a redo
        self.lo = min(self.lo, lo)
        self.hi = max(self.hi, hi)
        lo, hi = self.lo, self.hi
        w = self.workers
        L = self.L
        # modes damped below _MODE_CUTOFF can't move a double; dropping them
        # shrinks the axis-0 transforms to the K live columns
        K = max(2, int(np.count_nonzero(self.k2 * t < _MODE_CUTOFF)))
        k = self.k[:K]
        decay = np.exp(-self.k2[:K] * t)
        c = self.coef[:K, :K] * decay[:, None] * decay[None, :]

        s1 = c[1:, :] * -k[1:, None]
        b1 = fft.idst(s1, type=2, n=L, axis=0, workers=w, overwrite_x=True)[lo : hi + 1]
        a = fft.idct(c, type=2, n=L, axis=0, workers=w, overwrite_x=True)[lo : hi + 1]
        s2 = a[:, 1:] * -k[1:]

        rho = fft.idct(a, type=2, n=L, axis=1, workers=w)
        np.maximum(rho, self.floor, out=rho)
        d1 = fft.idct(b1, type=2, n=L, axis=1, workers=w)
        d2 = fft.idst(s2, type=2, n=L, axis=1, workers=w, overwrite_x=True)
        table = (rho.ravel(), d1.ravel(), d2.ravel())

        self._cache[t] = (lo, hi, table)
        self._cache.move_to_end(t)
        if len(self._cache) > self._cache_size:
            self._cache.popitem(last=False)
        self.snapshots += 1
        return lo, table

    def velocity(self, t: float, x: np.ndarray) -> np.ndarray:
        """Velocity at solver-coordinate points ``x`` of shape ``(M, 2)``."""
        L = self.L
        u = np.clip(x[:, 0] - 0.5, 0.0, L - 1.0)
        v = np.clip(x[:, 1] - 0.5, 0.0, L - 1.0)
        i0 = np.minimum(u.astype(np.int64), L - 2)
        j0 = np.minimum(v.astype(np.int64), L - 2)
        lo, table = self.fields(t, int(i0.min()), int(i0.max()) + 1)
        s = u - i0
        r = v - j0
        w00 = (1 - s) * (1 - r)
        w10 = s * (1 - r)
        w01 = (1 - s) * r
        w11 = s * r
        f00 = (i0 - lo) * L + j0
        f01 = f00 + 1
        f10 = f00 + L
        f11 = f10 + 1

        def at(a):
            return w00 * a.take(f00) + w10 * a.take(f10) + w01 * a.take(f01) + w11 * a.take(f11)

        rho, d1, d2 = table
        r_ = at(rho)
        out = np.empty_like(x)
        out[:, 0] = -at(d1) / r_
        out[:, 1] = -at(d2) / r_
        return out


def _advect(density: _SpectralDensity, y: np.ndarray, params: DiffusionParams, lam_min: float) -> tuple[np.ndarray, dict]:
    """Adaptive RK4 with an embedded third-order (FSAL) error estimate."""
    t_end = params.max_time_factor * math.log(10.0) / lam_min
    tol = params.convergence_tol
    cap = params.max_step_displacement
    safety = params.rk_safety

    def norm_max(a):
        return float(np.sqrt((a * a).sum(axis=1)).max()) if len(a) else 0.0

    t = 0.0
    evals = 1
    k1 = density.velocity(t, y)
    vmax = norm_max(k1)
    h = min(1.0, safety * cap / vmax) if vmax > 0 else 1.0
    steps = rejected = 0
    last_increment = 0.0
    stop_reason = "horizon"
    if vmax / lam_min < tol:
        stop_reason = "velocity"
        t_end = 0.0

    while t < t_end:
        if steps + rejected >= params.max_steps:
            raise SolverError(
                "advection exceeded the step budget",
                {"steps": steps, "rejected": rejected, "time": t, "horizon": t_end},
            )
        h = min(h, t_end - t)
        half = t + 0.5 * h
        k2 = density.velocity(half, y + (0.5 * h) * k1)
        k3 = density.velocity(half, y + (0.5 * h) * k2)
        k4 = density.velocity(t + h, y + h * k3)
        y_new = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        k5 = density.velocity(t + h, y_new)
        evals += 4
        err = norm_max((h / 6.0) * (k4 - k5))
        disp = norm_max(y_new - y)

        accepted = err <= tol and disp <= cap
        if accepted:
            t += h
            y = y_new
            k1 = k5
            steps += 1
            last_increment = disp
            vmax = norm_max(k1)
            if vmax / lam_min < tol:
                stop_reason = "velocity"
                break
        else:
            rejected += 1

        fac_err = safety * (tol / err) ** 0.25 if err > 0 else 5.0
        fac_disp = safety * cap / disp if disp > 0 else 5.0
        fac = min(fac_err, fac_disp, 5.0)
        fac = max(fac, 0.1)
        if not accepted:
            fac = min(fac, 0.9)
        h *= fac

    return y, {
        "steps": steps,
        "rejected": rejected,
        "evaluations": evals,
        "final_time": t,
        "horizon": t_end,
        "final_max_increment": last_increment,
        "final_max_velocity": vmax,
        "stop_reason": stop_reason,
    }


def quad_signed_areas(pos: np.ndarray) -> np.ndarray:
    """Signed areas of the quads spanned by neighbouring points of a ``(a, b, 2)`` lattice.

    Quads are ordered ``(i,j), (i+1,j), (i+1,j+1), (i,j+1)``; an unwarped grid
    gives positive areas.
    """
    d1 = pos[1:, 1:] - pos[:-1, :-1]
    d2 = pos[:-1, 1:] - pos[1:, :-1]
    return 0.5 * (d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0])


def solve_transform(m: MeasureField, params: DiffusionParams | None = None, workers: int | None = None) -> TransformField:
    """Compute the density-equalizing transform of ``m``.

    ``workers`` caps the threads used by the spectral transforms; it never
    changes the result.
    """
    params = params or DiffusionParams()
    vals = m.values
    if not vals.max() > 0:
        raise InputError("measure is identically zero; nothing to equalize")
    spec = m.spec
    n1, n2 = spec.shape
    rho = np.maximum(vals, params.density_floor_rel * vals.mean())
    L = _next_pow2(math.ceil(params.pad_factor * max(n1, n2)))
    o1, o2 = (L - n1) // 2, (L - n2) // 2
    padded = np.full((L, L), rho.mean())
    padded[o1 : o1 + n1, o2 : o2 + n2] = rho
    density = _SpectralDensity(padded, workers=workers)

    start = np.empty((n1, n2, 2))
    start[..., 0] = (o1 + np.arange(n1) + 0.5)[:, None]
    start[..., 1] = (o2 + np.arange(n2) + 0.5)[None, :]
    y0 = start.reshape(-1, 2)
    lam_min = (np.pi / L) ** 2
    log.info("diffusion solve on %dx%d padded grid for %dx%d cells", L, L, n1, n2)
    y, diag = _advect(density, y0.copy(), params, lam_min)

    shift = np.sqrt(((y - y0) ** 2).sum(axis=1))
    diag.update(
        padded_size=L,
        snapshots=density.snapshots,
        max_displacement=float(shift.max()),
    )
    if y.min() < 0 or y.max() > L:
        raise SolverError("advected points left the padded domain", diag)

    idx = y.reshape(n1, n2, 2)
    positions = np.empty_like(idx)
    positions[..., 0] = spec.min_1 + (idx[..., 0] - o1) * spec.dz_1
    positions[..., 1] = spec.min_2 + (idx[..., 1] - o2) * spec.dz_2

    areas = quad_signed_areas(idx)
    inverted = int((areas <= 0).sum())
    diag["inverted_quads"] = inverted
    diag["min_quad_area"] = float(areas.min())
    if inverted:
        raise SolverError(f"transform has {inverted} inverted quads", diag)
    return TransformField(spec, positions, diag)


def forward_map(T: TransformField, z) -> np.ndarray:
    """Bilinear image of latent point(s) ``z`` under the transform."""
    z = np.asarray(z, dtype=np.float64)
    out = interpolate(T.positions, T.spec, z.reshape(-1, 2))
    return out[0] if z.ndim == 1 else out


# inverse map -----------------------------------------------------------------

_EDGE_EPS = 1e-12
_NEWTON_TOL = 1e-12
_NEWTON_ITERS = 25


def _local_frame(P: np.ndarray, w: np.ndarray, i: np.ndarray, j: np.ndarray, q: np.ndarray):
    p00 = P[i, j]
    a = (P[i + 1, j] - p00) / w
    b = (P[i + 1, j + 1] - p00) / w
    c = (P[i, j + 1] - p00) / w
    x = (q - p00) / w
    return a, b, c, x


def _cross(u, v):
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


def _edge_sides(a, b, c, x):
    """Signed edge tests for quads ``0, a, b, c`` (counter-clockwise)."""
    zero = np.zeros_like(a)
    corners = (zero, a, b, c)
    out = []
    for k in range(4):
        p, r = corners[k], corners[(k + 1) % 4]
        e = r - p
        length = np.sqrt((e * e).sum(axis=-1))
        out.append(_cross(e, x - p) / np.maximum(length, 1e-300))
    return out


def _newton(a, b, c, x):
    """Solve ``s a + t c + s t (b - a - c) = x`` for ``(s, t)``; vectorized."""
    e = b - a - c
    s = np.full(len(x), 0.5)
    t = np.full(len(x), 0.5)
    res = np.full(len(x), np.inf)
    for _ in range(_NEWTON_ITERS):
        f = s[:, None] * a + t[:, None] * c + (s * t)[:, None] * e - x
        res = np.sqrt((f * f).sum(axis=1))
        if np.all(res <= _NEWTON_TOL):
            break
        ja = a + t[:, None] * e
        jc = c + s[:, None] * e
        det = _cross(ja, jc)
        with np.errstate(divide="ignore", invalid="ignore"):
            ds = -(f[:, 0] * jc[:, 1] - f[:, 1] * jc[:, 0]) / det
            dt = -(ja[:, 0] * f[:, 1] - ja[:, 1] * f[:, 0]) / det
        s = s + ds
        t = t + dt
    else:
        f = s[:, None] * a + t[:, None] * c + (s * t)[:, None] * e - x
        res = np.sqrt((f * f).sum(axis=1))
    return s, t, res


def _scan(P: np.ndarray, w: np.ndarray, q: np.ndarray):
    """Exhaustive search for the quad containing one point ``q``."""
    n1, n2 = P.shape[:2]
    lo = np.minimum.reduce([P[:-1, :-1], P[1:, :-1], P[1:, 1:], P[:-1, 1:]])
    hi = np.maximum.reduce([P[:-1, :-1], P[1:, :-1], P[1:, 1:], P[:-1, 1:]])
    slack = _EDGE_EPS * w
    hit = np.all((lo - slack <= q) & (q <= hi + slack), axis=-1)
    ci, cj = np.nonzero(hit)
    if len(ci) == 0:
        return None
    qq = np.broadcast_to(q, (len(ci), 2))
    a, b, c, x = _local_frame(P, w, ci, cj, qq)
    s, t, res = _newton(a, b, c, x)
    ok = (res <= _NEWTON_TOL) & (s >= -1e-9) & (s <= 1 + 1e-9) & (t >= -1e-9) & (t <= 1 + 1e-9)
    good = np.flatnonzero(ok)
    if len(good) == 0:
        return None
    k = good[0]
    return int(ci[k]), int(cj[k]), float(s[k]), float(t[k])


def inverse_map(T: TransformField, zt) -> np.ndarray:
    """Latent point(s) whose image under the transform is ``zt``.

    The containing transformed quad is found by walking from the quad that
    holds ``zt`` in untransformed coordinates (exhaustive scan as a fallback),
    then the bilinear patch is inverted by Newton iteration.
    """
    zt = np.asarray(zt, dtype=np.float64)
    single = zt.ndim == 1
    q = zt.reshape(-1, 2)
    if not np.all(np.isfinite(q)):
        raise InputError("inverse_map points must be finite")
    spec = T.spec
    P = T.positions
    w = spec.cell_widths
    n1, n2 = spec.shape
    npts = len(q)

    i = np.clip(np.floor((q[:, 0] - spec.min_1) / spec.dz_1 - 0.5), 0, n1 - 2).astype(np.int64)
    j = np.clip(np.floor((q[:, 1] - spec.min_2) / spec.dz_2 - 0.5), 0, n2 - 2).astype(np.int64)
    found = np.zeros(npts, dtype=bool)
    active = np.arange(npts)
    for _ in range(n1 + n2 + 8):
        if len(active) == 0:
            break
        a, b, c, x = _local_frame(P, w, i[active], j[active], q[active])
        e0, e1, e2, e3 = _edge_sides(a, b, c, x)
        out0, out1, out2, out3 = (e < -_EDGE_EPS for e in (e0, e1, e2, e3))
        inside = ~(out0 | out1 | out2 | out3)
        found[active[inside]] = True
        di = out1.astype(np.int64) - out3.astype(np.int64)
        dj = out2.astype(np.int64) - out0.astype(np.int64)
        ni = np.clip(i[active] + di, 0, n1 - 2)
        nj = np.clip(j[active] + dj, 0, n2 - 2)
        stuck = ~inside & (ni == i[active]) & (nj == j[active])
        i[active] = ni
        j[active] = nj
        active = active[~inside & ~stuck]

    s = np.full(npts, np.nan)
    t = np.full(npts, np.nan)
    idx = np.flatnonzero(found)
    if len(idx):
        a, b, c, x = _local_frame(P, w, i[idx], j[idx], q[idx])
        ss, tt, res = _newton(a, b, c, x)
        ok = (res <= _NEWTON_TOL) & (ss >= -1e-9) & (ss <= 1 + 1e-9) & (tt >= -1e-9) & (tt <= 1 + 1e-9)
        s[idx[ok]] = ss[ok]
        t[idx[ok]] = tt[ok]
        found[idx[~ok]] = False

    outside = []
    for k in np.flatnonzero(~found):
        hit = _scan(P, w, q[k])
        if hit is None:
            outside.append(int(k))
            continue
        i[k], j[k], s[k], t[k] = hit
    if outside:
        raise OutOfDomainError(
            f"{len(outside)} point(s) outside the transformed mesh, first at index {outside[0]}: "
            f"{tuple(q[outside[0]])}",
            indices=outside,
        )
    if not np.all(np.isfinite(s) & np.isfinite(t)):
        raise SolverError("inverse bilinear Newton iteration did not converge")

    out = np.empty_like(q)
    out[:, 0] = spec.min_1 + (i + s + 0.5) * spec.dz_1
    out[:, 1] = spec.min_2 + (j + t + 0.5) * spec.dz_2
    return out[0] if single else out


# diagnostics -----------------------------------------------------------------


def cell_corner_images(T: TransformField) -> np.ndarray:
    """Images of the ``(n_1 + 1, n_2 + 1)`` cell corners.

    Each corner is the mean of its four surrounding transformed centers,
    with the center lattice extended by one linearly extrapolated layer.
    """
    P = T.positions
    ext = np.empty((P.shape[0] + 2, P.shape[1] + 2, 2))
    ext[1:-1, 1:-1] = P
    ext[0, 1:-1] = 2 * P[0] - P[1]
    ext[-1, 1:-1] = 2 * P[-1] - P[-2]
    ext[:, 0] = 2 * ext[:, 1] - ext[:, 2]
    ext[:, -1] = 2 * ext[:, -2] - ext[:, -3]
    return 0.25 * (ext[:-1, :-1] + ext[1:, :-1] + ext[:-1, 1:] + ext[1:, 1:])


def transformed_cell_areas(T: TransformField) -> np.ndarray:
    return quad_signed_areas(cell_corner_images(T))


def floored_density(m: MeasureField, floor_rel: float = DiffusionParams.density_floor_rel) -> np.ndarray:
    return np.maximum(m.values, floor_rel * m.values.mean())


def cell_density_after(
    m: MeasureField, T: TransformField, floor_rel: float = DiffusionParams.density_floor_rel
) -> MeasureField:
    """Post-transform density: floored density times original over transformed cell area."""
    if m.spec != T.spec:
        raise InputError("measure and transform live on different grids")
    areas = transformed_cell_areas(T)
    if np.any(areas <= 0):
        raise SolverError(
            "degenerate transformed cell", {"degenerate_cells": int((areas <= 0).sum())}
        )
    return MeasureField(m.spec, floored_density(m, floor_rel) * m.spec.cell_area / areas)


def weighted_cv(values: np.ndarray, weights: np.ndarray | None = None) -> float:
    """Coefficient of variation, optionally weighted."""
    v = np.asarray(values, dtype=np.float64).ravel()
    wts = np.ones_like(v) if weights is None else np.asarray(weights, dtype=np.float64).ravel()
    mean = np.average(v, weights=wts)
    var = np.average((v - mean) ** 2, weights=wts)
    return float(np.sqrt(var) / mean) if mean != 0 else 0.0
