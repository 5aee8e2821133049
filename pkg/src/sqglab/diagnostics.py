"""
Hoelder-continuity diagnostics: advected recentering, nested-box oscillation
profiles, exponent fits, the renormalized zoom sequence and velocity norms.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RectBivariateSpline

from .extension import ExtensionConfig, ExtensionField, extend
from .solver import SimConfig, TrajectoryStore
from .spectral import (
    Grid,
    PhysicalField,
    SpectralField,
    VelocityField,
    _physical,
    _spectral,
    evaluate_on_lattice,
    forward_transform,
    riesz_velocity,
)

log = logging.getLogger(__name__)


class ResolutionWarning(UserWarning):
    pass


class GuardWarning(UserWarning):
    pass


# --- advected center -----------------------------------------------------------

@dataclass(frozen=True)
class CenterPath:
    times: np.ndarray
    points: np.ndarray  # (len(times), 2), absolute positions

    @property
    def displacement(self) -> np.ndarray:
        return self.points - self.points[0]

    def at(self, t: float) -> np.ndarray:
        ts = self.times
        order = np.argsort(ts)
        return np.array([np.interp(t, ts[order], self.points[order, i]) for i in range(2)])


def _sinc(x):
    return np.sinc(x / np.pi)


def box_average(coefficients: np.ndarray, grid: Grid, x0, R: float) -> float:
    """Mean over ``x0 + [-R, R]^2`` of the field with Fourier ``coefficients``."""
    phase = np.exp(1j * (grid.k1 * x0[0] + grid.k2 * x0[1]))
    w = _sinc(grid.k1 * R) * _sinc(grid.k2 * R)
    w = np.where(grid.nyquist, 0.0, w)
    return float(np.real(np.sum(coefficients * w * phase)))


def _velocity_coefficients(theta_hat: SpectralField, cfg: SimConfig):
    m1, m2 = cfg.velocity_multipliers()
    c = theta_hat.coefficients
    return m1 * c, m2 * c


def advected_center(traj: TrajectoryStore, x_start, ball_radius: float, cfg: SimConfig, *,
                    t_start: float | None = None, t_end: float | None = None,
                    velocity=None, substeps: int = 4) -> CenterPath:
    """Integrate ``x'(s) = mean of u over x(s) + [-R, R]^2`` with RK4.

    The box average is exact for the trigonometric interpolant (a sinc
    multiplier); between snapshots the velocity is interpolated linearly in
    time.  ``velocity`` may be a callable ``t -> (u1_hat, u2_hat)`` replacing
    the one reconstructed from the trajectory.  Integration may run
    backwards (``t_end < t_start``).
    """
    g = traj.grid
    if not 0 < ball_radius <= g.length / 2:
        raise ValueError("box radius must lie in (0, L/2]; the box would leave the periodic cell")
    times = traj.times
    t_start = times[0] if t_start is None else t_start
    t_end = times[-1] if t_end is None else t_end
    lo, hi = min(t_start, t_end), max(t_start, t_end)
    if velocity is None and (lo < times[0] - 1e-12 or hi > times[-1] + 1e-12):
        raise ValueError("integration interval outside the trajectory")
    if g != cfg.grid:
        from dataclasses import replace
        cfg = replace(cfg, grid=g)

    if velocity is None:
        def velocity(t):
            return _velocity_coefficients(traj.at(min(max(t, times[0]), times[-1])), cfg)

    def rhs(t, x):
        c1, c2 = velocity(t)
        return np.array([box_average(c1, g, x, ball_radius), box_average(c2, g, x, ball_radius)])

    inner = [t for t in times if lo < t < hi]
    nodes = sorted(set([t_start, t_end] + inner), reverse=bool(t_end < t_start))
    ts = [t_start]
    pts = [np.asarray(x_start, dtype=float)]
    x = pts[0].copy()
    for a, b in zip(nodes[:-1], nodes[1:]):
        h = (b - a) / substeps
        t = a
        for _ in range(substeps):
            k1 = rhs(t, x)
            k2 = rhs(t + h / 2, x + h / 2 * k1)
            k3 = rhs(t + h / 2, x + h / 2 * k2)
            k4 = rhs(t + h, x + h * k3)
            x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            t += h
        ts.append(b)
        pts.append(x.copy())
    return CenterPath(np.array(ts), np.array(pts))


# --- oscillation profile -----------------------------------------------------

@dataclass(frozen=True)
class OscillationProfile:
    scales: np.ndarray
    osc: np.ndarray
    errors: np.ndarray
    frame: str
    mu: float
    sup: np.ndarray = field(default=None)
    inf: np.ndarray = field(default=None)


def _periodic_offsets(grid: Grid, c):
    x = grid.x
    d = (x - c + grid.length / 2) % grid.length - grid.length / 2
    return d


def _box_nodes(grid: Grid, center, R, tol=1e-9):
    d1 = _periodic_offsets(grid, center[0])
    d2 = _periodic_offsets(grid, center[1])
    i1 = np.nonzero(np.abs(d1) <= R + tol * grid.spacing)[0]
    i2 = np.nonzero(np.abs(d2) <= R + tol * grid.spacing)[0]
    return i1, i2


def _refined_extrema(values, grid: Grid, center, R, method, density):
    """Sup and inf over a lattice covering the box (edges included)."""
    m = max(9, int(math.ceil(2 * R / grid.spacing * density)) + 1)
    s = np.linspace(-R, R, m)
    if method == "spectral":
        c = np.fft.fft2(values) / grid.n**2
        v = evaluate_on_lattice(SpectralField(grid, c), center[0] + s, center[1] + s)
    else:
        # local bicubic spline through the surrounding nodes (periodic indices)
        pad = 3
        h = grid.spacing
        base = [int(math.floor((center[i] - R) / h)) - pad for i in range(2)]
        cnt = int(math.ceil(2 * R / h)) + 2 * pad + 2
        ii = [(np.arange(cnt) + base[i]) for i in range(2)]
        patch = values[np.ix_(ii[0] % grid.n, ii[1] % grid.n)]
        spl = RectBivariateSpline(ii[0] * h, ii[1] * h, patch, kx=3, ky=3)
        v = spl(center[0] + s, center[1] + s)
    return float(np.max(v)), float(np.min(v)), 2 * R / (m - 1)


def max_scales(grid: Grid, radius: float, mu: float, min_cells: int = 4) -> int:
    """Largest K with the finest box ``2 radius mu^K`` spanning ``min_cells`` cells."""
    k = math.floor(math.log(min_cells * grid.spacing / (2 * radius)) / math.log(mu) + 1e-9)
    return max(k, 0)


def oscillation_profile(field, center, mu: float, K: int, frame: str = "fixed", *,
                        radius: float = 1.0, traj: TrajectoryStore | None = None,
                        time: float | None = None, cfg: SimConfig | None = None,
                        refine: str = "spline", density: int = 4, advect_radius: float = 4.0,
                        velocity=None) -> OscillationProfile:
    """``sup - inf`` of the field over ``center + radius mu^k [-1, 1]^2``.

    For an :class:`ExtensionField` the box also spans ``0 <= z <= radius mu^k``
    over the stored layers.  Sup and inf come from a node scan; the two
    finest scales are refined on a lattice (``refine`` = ``spline`` for a
    local bicubic, ``spectral`` for the trigonometric interpolant).  The
    extrema are propagated from fine to coarse so that the profile is
    non-increasing by construction.  In the ``advected`` frame the center is
    moved along :func:`advected_center` from the start of ``traj`` to
    ``time``.
    """
    if not 0 < mu <= 0.5:
        raise ValueError("mu must lie in (0, 1/2]")
    if frame not in ("fixed", "advected"):
        raise ValueError("frame must be 'fixed' or 'advected'")
    ext = field if isinstance(field, ExtensionField) else None
    if ext is not None:
        grid = ext.grid
        layers = ext.values
        base = layers[0]
    else:
        f = _physical(field)
        grid = f.grid
        base = f.values
    if radius > grid.length / 2:
        raise ValueError("radius exceeds half the periodic cell")
    kcap = max_scales(grid, radius, mu)
    if K > kcap:
        warnings.warn(f"finest scale unresolved; K truncated from {K} to {kcap}", ResolutionWarning,
                      stacklevel=2)
        K = kcap
    center = np.asarray(center, dtype=float)
    if frame == "advected":
        if traj is None or cfg is None:
            raise ValueError("advected frame needs traj and cfg")
        t_end = traj.times[-1] if time is None else time
        path = advected_center(traj, center, advect_radius, cfg, t_end=t_end, velocity=velocity)
        center = path.points[-1]
    gx = np.gradient(base, grid.spacing, axis=0)
    gy = np.gradient(base, grid.spacing, axis=1)
    gmag = np.hypot(gx, gy)
    scales = radius * mu ** np.arange(K + 1)
    sup = np.empty(K + 1)
    inf = np.empty(K + 1)
    err = np.empty(K + 1)
    for k in range(K, -1, -1):
        R = scales[k]
        i1, i2 = _box_nodes(grid, center, R)
        if ext is not None:
            zsel = ext.z <= R + 1e-15
            block = layers[np.ix_(zsel, i1, i2)]
        else:
            block = base[np.ix_(i1, i2)]
        s, i = float(np.max(block)), float(np.min(block))
        spacing = grid.spacing
        if k >= K - 1 and refine:
            rs, ri, spacing = _refined_extrema(base, grid, center, R, refine, density)
            s, i = max(s, rs), min(i, ri)
        if k < K:
            s, i = max(s, sup[k + 1]), min(i, inf[k + 1])
        sup[k], inf[k] = s, i
        gloc = float(np.max(gmag[np.ix_(i1, i2)])) if len(i1) and len(i2) else 0.0
        err[k] = gloc * spacing * math.sqrt(2) / 2 * 2
    return OscillationProfile(scales, sup - inf, err, frame, mu, sup, inf)


@dataclass(frozen=True)
class HolderEstimate:
    delta: float
    fit_r2: float
    scale_range: tuple
    flagged: bool = False


def holder_fit(profile: OscillationProfile, skip: int = 0) -> HolderEstimate:
    """Least-squares slope of ``log osc_k`` against ``k log mu``."""
    k = np.arange(len(profile.osc))[skip:]
    osc = profile.osc[skip:]
    # oscillations at round-off level of the field values count as zero
    size = 1.0 if profile.sup is None else max(1.0, float(np.max(np.abs(profile.sup))),
                                               float(np.max(np.abs(profile.inf))))
    ok = osc > 1e-12 * size
    if np.count_nonzero(ok) < 4:
        if not np.any(ok):
            return HolderEstimate(float("nan"), float("nan"), (), True)
        raise ValueError("need at least 4 scales with positive oscillation")
    xs = k[ok] * math.log(profile.mu)
    ys = np.log(osc[ok])
    slope, icpt = np.polyfit(xs, ys, 1)
    pred = slope * xs + icpt
    ss = np.sum((ys - ys.mean()) ** 2)
    r2 = 1 - np.sum((ys - pred) ** 2) / ss if ss > 0 else 1.0
    sc = profile.scales[skip:][ok]
    return HolderEstimate(float(slope), float(r2), (float(sc[0]), float(sc[-1])))


# --- zoom sequence --------------------------------------------------------------

@dataclass(frozen=True)
class ZoomLevel:
    k: int
    center: np.ndarray
    amplitude: float  # mu^((2 alpha - 1) k)
    shift: float  # midpoint of F_k over Q_4
    scale: float  # 4 / osc_{Q_4}(F_k)
    osc_Q1: float  # oscillation of the normalized field over Q_1
    osc_Q4_raw: float
    osc_Q1_raw: float
    contraction: float  # osc_{B_(mu^k)} / osc_{B_(mu^(k-1))} of theta, nan at k = 0

    def normalize(self, values):
        return self.scale * (np.asarray(values) - self.shift)

    def denormalize(self, values):
        return np.asarray(values) / self.scale + self.shift


@dataclass(frozen=True)
class ZoomSequence:
    levels: list
    mu: float
    guard: float
    guard_ok: bool
    terminated: bool
    velocity_bound: float

    @property
    def contractions(self) -> np.ndarray:
        return np.array([lv.contraction for lv in self.levels[1:]])

    @property
    def osc_Q1(self) -> np.ndarray:
        return np.array([lv.osc_Q1 for lv in self.levels])


def _slice_extrema(values, grid, center, R, refine, density):
    i1, i2 = _box_nodes(grid, center, R)
    s, i = -np.inf, np.inf
    if len(i1) and len(i2):
        block = values[np.ix_(i1, i2)]
        s, i = float(np.max(block)), float(np.min(block))
    if refine or not np.isfinite(s):
        refine = refine or "spectral"
        rs, ri, _ = _refined_extrema(values, grid, center, R, refine, density)
        s, i = max(s, rs), min(i, ri)
    return s, i


def zoom_sequence(traj: TrajectoryStore, ext_traj, center, mu: float = 0.25, K: int = 4,
                  cfg: SimConfig | None = None, *, time: float | None = None,
                  full: bool = False, time_scale: float = 1.0, radius: float = 0.5,
                  refine: str = "spectral", density: int = 4, degenerate_tol: float = 1e-12,
                  ext_cfg: ExtensionConfig | None = None) -> ZoomSequence:
    """Renormalized zoom of ``theta`` around ``center``.

    Level k looks at ``F_k(y) = mu^((2 alpha - 1) k) theta(X_k + mu^k y)``
    and rescales it to ``[-2, 2]`` on ``Q_4``.  By default only the time
    slice ``t = time`` and ``z = 0`` is used, where the recentering is
    trivial.  With ``full`` the boxes extend over
    ``[t - time_scale r mu^(2 alpha k), t]`` with centers moved backwards
    along :func:`advected_center` (box radius ``4 mu^k``) and, when
    ``ext_traj`` is given (or ``ext_cfg`` set), over ``0 <= z <= r mu^k``.
    The sequence stops when the ``Q_4`` oscillation drops below
    ``degenerate_tol``.
    """
    if cfg is None:
        raise ValueError("cfg is required")
    if not 0 < mu <= 1:
        raise ValueError("mu must lie in (0, 1]")
    g = traj.grid
    alpha = cfg.alpha
    t = traj.times[-1] if time is None else time
    it = traj.index_of(t)
    snap = traj[it][1]
    theta = np.fft.ifft2(snap.coefficients).real * g.n**2
    u = riesz_velocity(snap, cfg.velocity_multipliers())
    expo = 1 - 2 * alpha
    C = velocity_holder_norm(u, expo).holder_seminorm if expo > 0 else u.max_speed()
    guard = 4 * mu + C * mu ** (2 * alpha)
    guard_ok = guard < 1
    if not guard_ok:
        warnings.warn(f"smallness guard 4 mu + C mu^(2 alpha) = {guard:.3g} >= 1", GuardWarning,
                      stacklevel=2)
    center = np.asarray(center, dtype=float)

    def extrema(k, r):
        R = r * radius * mu**k
        if 4 * radius * mu**k > g.length / 2:
            raise ValueError("zoom box exceeds the periodic cell")
        if not full:
            return _slice_extrema(theta, g, center, R, refine, density)
        span = time_scale * r * mu ** (2 * alpha * k)
        t0 = max(traj.times[0], t - span)
        path = advected_center(traj, center, 4 * radius * mu**k, cfg, t_start=t, t_end=t0)
        hi, lo = -np.inf, np.inf
        for i in traj.window(t0, t):
            ti, s = traj[i]
            ci = path.at(ti)
            if ext_traj is not None or ext_cfg is not None:
                e = ext_traj[i] if ext_traj is not None else extend(s, ext_cfg)
                zsel = e.z <= R + 1e-15
                i1, i2 = _box_nodes(g, ci, R)
                block = e.values[np.ix_(zsel, i1, i2)]
                hi, lo = max(hi, float(block.max())), min(lo, float(block.min()))
            vals = np.fft.ifft2(s.coefficients).real * g.n**2
            a, b = _slice_extrema(vals, g, ci, R, refine, density)
            hi, lo = max(hi, a), min(lo, b)
        return hi, lo

    levels = []
    terminated = False
    prev_osc1 = None
    for k in range(K + 1):
        amp = mu ** ((2 * alpha - 1) * k)
        s4, i4 = extrema(k, 4.0)
        s1, i1 = extrema(k, 1.0)
        osc4 = amp * (s4 - i4)
        osc1 = amp * (s1 - i1)
        if osc4 < degenerate_tol:
            terminated = True
            break
        shift = amp * (s4 + i4) / 2
        scale = 4 / osc4
        contraction = float("nan") if prev_osc1 is None else (s1 - i1) / prev_osc1
        levels.append(ZoomLevel(k, center.copy(), amp, shift, scale, scale * osc1, osc4, osc1, contraction))
        prev_osc1 = s1 - i1
    return ZoomSequence(levels, mu, float(guard), bool(guard_ok), terminated, float(C))


# --- velocity norms ---------------------------------------------------------------

@dataclass(frozen=True)
class VelocityNormReport:
    holder_seminorm: float
    sup_norm: float
    sample_pair_count: int


def velocity_holder_norm(u: VelocityField, exponent: float, pairs: int = 4096, seed: int = 0
                         ) -> VelocityNormReport:
    """``max |u(x) - u(y)| / |x - y|^exponent`` over sampled node pairs.

    Base nodes are drawn with a fixed seed; separations are dyadic lattice
    vectors ``2^j (a, b)`` grid cells, ``a, b`` in {-1, 0, 1}, measured with
    the periodic minimum-image distance.
    """
    if not 0 < exponent <= 1:
        raise ValueError("exponent must lie in (0, 1]")
    g = u.grid
    n = g.n
    u1, u2 = u.u1, u.u2
    dirs = [(a, b) for a in (-1, 0, 1) for b in (-1, 0, 1) if (a, b) != (0, 0)]
    shifts = [(2**j * a, 2**j * b) for j in range(int(math.log2(n // 2)) + 1) for a, b in dirs]
    rng = np.random.default_rng(seed)
    per = max(1, pairs // len(shifts))
    best = 0.0
    count = 0
    for s1, s2 in shifts:
        i = rng.integers(0, n, per)
        j = rng.integers(0, n, per)
        d1 = ((s1 + n // 2) % n - n // 2) * g.spacing
        d2 = ((s2 + n // 2) % n - n // 2) * g.spacing
        dist = math.hypot(d1, d2)
        if dist == 0:
            continue
        ip, jp = (i + s1) % n, (j + s2) % n
        diff = np.hypot(u1[ip, jp] - u1[i, j], u2[ip, jp] - u2[i, j])
        best = max(best, float(np.max(diff)) / dist**exponent)
        count += per
    sup = float(np.sqrt(np.max(u1**2 + u2**2)))
    return VelocityNormReport(best, sup, count)
