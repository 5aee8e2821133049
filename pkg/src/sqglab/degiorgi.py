"""
Level-set (De Giorgi) diagnostics.

Everything here reports signed slacks or ratios rather than pass/fail flags;
thresholds live in :mod:`sqglab.tolerances`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.special import ndtr

from .extension import (
    ExtensionConfig,
    ExtensionField,
    _dz_layers,
    _u_quadrature,
    calibration_closed_form,
    extend,
)
from .solver import SimConfig, TrajectoryStore, interval_integrals
from .spectral import (
    Grid,
    PhysicalField,
    SpectralField,
    _physical,
    _spectral,
    forward_transform,
    inverse_transform,
    sup_norm,
    upsample,
)


# --- basic objects ----------------------------------------------------------

@dataclass(frozen=True)
class LevelSetFamily:
    """Levels ``C_k = M (1 - 2^-k)`` and cut times ``t_k = t0 (1 - 2^-k)``."""

    M: float
    t0: float
    k_max: int = 6
    alpha: float = 0.5
    n: int = 2

    def __post_init__(self):
        if not self.M > 0 or not self.t0 > 0:
            raise ValueError("M and t0 must be positive")
        if self.k_max < 1:
            raise ValueError("k_max must be >= 1")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")

    @property
    def levels(self) -> np.ndarray:
        k = np.arange(self.k_max + 1)
        return self.M * (1 - 2.0**-k)

    @property
    def times(self) -> np.ndarray:
        k = np.arange(self.k_max + 1)
        return self.t0 * (1 - 2.0**-k)

    @property
    def q(self) -> float:
        return 2 + 4 * self.alpha / self.n

    @property
    def sigma(self) -> float:
        return 2 * self.alpha / (self.n + 2 * self.alpha)

    @property
    def gamma(self) -> float:
        q = self.q
        return 2 * (q - 1) / (q - 2)

    def normalizer(self) -> float:
        """Denominator turning ``2^(gamma k) U_k`` into ``V_k``."""
        q, g = self.q, self.gamma
        return self.t0 ** (2 / (q - 2)) * self.M**2 * 2.0 ** ((-g * q - 2) / (q - 2))


@dataclass(frozen=True)
class LevelEnergyReport:
    U: np.ndarray
    V: np.ndarray
    recursion_ratio: np.ndarray  # V_k / V_{k-1}^(q/2), nan where undefined
    family: LevelSetFamily
    decays: bool
    M_star: float | None = None
    sup_at_t0: float | None = None


@dataclass(frozen=True)
class BoxSpec:
    center: tuple
    half_width: float
    z_height: float | None = None
    time_window: tuple | None = None

    def __post_init__(self):
        if not self.half_width > 0:
            raise ValueError("half_width must be positive")
        if self.z_height is not None and not self.z_height > 0:
            raise ValueError("z_height must be positive")

    @property
    def height(self) -> float:
        return self.half_width if self.z_height is None else self.z_height

    def check_fits(self, length: float):
        if 2 * self.half_width >= length:
            raise ValueError("box does not fit inside the periodic cell")


@dataclass(frozen=True)
class WeightedSets:
    A: float
    B: float
    C: float
    K: float
    p: float
    b: float
    total: float
    max_gradient: float = 0.0


@dataclass(frozen=True)
class IsoperimetricReport:
    lhs: float
    r_exponent: float
    r_power: float
    c_term: float
    k_term: float
    implied_constant: float
    sets: WeightedSets
    flagged: bool = False
    scale_free_exponent: float = float("nan")
    scale_free_constant: float = float("nan")


def truncate(theta, lam: float) -> PhysicalField:
    """``(theta - lam)_+``."""
    th = _physical(theta)
    return PhysicalField(th.grid, np.maximum(th.values - lam, 0.0))


# --- helpers -----------------------------------------------------------------

def _fine_values(snapshot: SpectralField, oversample: int):
    if oversample > 1:
        snapshot = upsample(snapshot, oversample)
    return snapshot.grid, inverse_transform(snapshot).values


def _seminorm_sq(grid: Grid, values, alpha: float) -> float:
    c = np.fft.fft2(values) / grid.n**2
    return float(grid.length**2 * np.sum(grid.kmag ** (2 * alpha) * np.abs(c) ** 2))


def _window(traj: TrajectoryStore, t1, t2):
    try:
        i1, i2 = traj.index_of(t1), traj.index_of(t2)
    except KeyError as exc:
        raise ValueError(f"t1 and t2 must be snapshot times ({exc})") from None
    if not i2 > i1:
        raise ValueError("need t1 < t2")
    return list(range(i1, i2 + 1))


def _time_integral(t, y) -> float:
    return float(np.sum(interval_integrals(t, y))) if len(t) > 1 else 0.0


# --- level-set energy --------------------------------------------------------

def level_set_energy_check(traj: TrajectoryStore, lam: float, t1: float, t2: float,
                           cfg: SimConfig, oversample: int = 2) -> float:
    """``int theta_lam^2(t1) - int theta_lam^2(t2) - 2 kappa int int |Lambda^alpha theta_lam|^2``.

    Non-negative for exact solutions; truncation is applied on an
    ``oversample`` times finer interpolation grid.
    """
    idx = _window(traj, t1, t2)
    mass, diss = [], []
    for i in idx:
        g, v = _fine_values(traj[i][1], oversample)
        w = np.maximum(v - lam, 0.0)
        mass.append(g.cell_area * np.sum(w * w))
        diss.append(2 * cfg.kappa * _seminorm_sq(g, w, cfg.alpha))
    t = traj.times[idx]
    return float(mass[0] - mass[-1] - _time_integral(t, diss))


def _level_energy(traj, lam, t_cut, cfg, oversample, sign=1.0):
    idx = [i for i, t in enumerate(traj.times) if t >= t_cut - 1e-14]
    if not idx:
        return 0.0
    mass, diss = [], []
    for i in idx:
        g, v = _fine_values(traj[i][1], oversample)
        w = np.maximum(sign * v - lam, 0.0)
        if not np.any(w):
            mass.append(0.0)
            diss.append(0.0)
            continue
        mass.append(g.cell_area * np.sum(w * w))
        diss.append(2 * cfg.kappa * _seminorm_sq(g, w, cfg.alpha))
    t = traj.times[idx]
    # positive-weight quadrature keeps U_k monotone in k
    integral = float(np.sum(0.5 * (np.array(diss[1:]) + np.array(diss[:-1])) * np.diff(t))) if len(t) > 1 else 0.0
    return max(mass) + integral


def level_energy_sequence(traj: TrajectoryStore, family: LevelSetFamily, cfg: SimConfig,
                          oversample: int = 1, fit_M: bool = True, threshold: float = 1e-8
                          ) -> LevelEnergyReport:
    """``U_k = sup_{t >= t_k} int theta_k^2 + 2 kappa int_{t_k} ||Lambda^alpha theta_k||^2``.

    Only snapshots at or after ``t_k`` enter ``U_k``.  ``V_k`` uses the
    k-independent normalizer for which the recursion reads
    ``V_k <= V_{k-1}^(q/2)``.  With ``fit_M`` the smallest ``M`` with
    ``U_{k_max} <= threshold * U_0`` is found by bisection, for ``theta`` and
    ``-theta``; the larger one is reported.
    """
    times = traj.times
    if times[0] > 1e-14 or times[-1] < family.t0 - 1e-12:
        raise ValueError("trajectory must cover [0, t0]")
    lv, tk = family.levels, family.times
    U = np.array([_level_energy(traj, lv[k], tk[k], cfg, oversample) for k in range(family.k_max + 1)])
    q = family.q
    V = 2.0 ** (family.gamma * np.arange(family.k_max + 1)) * U / family.normalizer()
    ratio = np.full(len(V), np.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio[1:] = np.where(V[:-1] > 0, V[1:] / V[:-1] ** (q / 2), np.nan)
    decays = bool(U[-1] <= threshold * U[0]) if U[0] > 0 else True
    i0 = traj.index_of(traj.times[np.argmin(np.abs(times - family.t0))])
    sup_t0 = sup_norm(traj[i0][1])
    m_star = None
    if fit_M:
        m_star = max(_fit_level(traj, family, cfg, oversample, threshold, s) for s in (1.0, -1.0))
    return LevelEnergyReport(U, V, ratio, family, decays, m_star, sup_t0)


def _fit_level(traj, family, cfg, oversample, threshold, sign, iters=40):
    k = family.k_max
    t_k = family.t0 * (1 - 2.0**-k)
    u0 = _level_energy(traj, 0.0, 0.0, cfg, oversample, sign)
    if u0 == 0:
        return 0.0
    after = [i for i, t in enumerate(traj.times) if t >= t_k - 1e-14]
    hi = 2 * max(np.max(sign * inverse_transform(traj[i][1]).values) for i in after)
    hi = max(hi, 1e-300)
    lo = 0.0

    def ok(M):
        return _level_energy(traj, M * (1 - 2.0**-k), t_k, cfg, oversample, sign) <= threshold * u0

    while not ok(hi):
        hi *= 2
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-10 * hi:
            break
    return hi


# --- L^inf decay --------------------------------------------------------------

@dataclass(frozen=True)
class DecayReport:
    times: np.ndarray
    series: np.ndarray
    empirical_C: float
    window: tuple


def linf_decay_check(traj: TrajectoryStore, cfg: SimConfig, n: int = 2,
                     window: tuple | None = None) -> DecayReport:
    """``t^(n / 4 alpha) ||theta(t)||_inf / ||theta_0||_2`` at each snapshot.

    The reported constant is the max over ``window`` (default: all t > 0).
    """
    times = traj.times
    if abs(times[0]) > 1e-14:
        raise ValueError("trajectory must start at t = 0")
    g = traj.grid
    l2_0 = g.length * math.sqrt(np.sum(np.abs(traj[0][1].coefficients) ** 2))
    expo = n / (4 * cfg.alpha)
    series = np.zeros(len(traj))
    if l2_0 > 0:
        for i, (t, s) in enumerate(traj):
            series[i] = sup_norm(s) * t**expo / l2_0 if t > 0 else 0.0
    lo, hi = window if window is not None else (0.0, times[-1])
    sel = (times > 0) & (times >= lo - 1e-12) & (times <= hi + 1e-12)
    c = float(np.max(series[sel])) if np.any(sel) else 0.0
    return DecayReport(times, series, c, (lo, hi))


# --- Cordoba-Cordoba ----------------------------------------------------------

@dataclass(frozen=True)
class ConvexFunction:
    """A smooth convex scalar function with its derivative."""

    name: str
    f: object
    df: object
    width: float = 0.0  # mollification width, if any

    def check_convex(self, lo=-10.0, hi=10.0, samples=2001):
        s = np.linspace(lo, hi, samples)
        d = np.asarray(self.df(s), dtype=float)
        if np.any(np.diff(d) < -1e-12 * max(1.0, np.max(np.abs(d)))):
            raise ValueError(f"function {self.name!r} is not convex")


def square() -> ConvexFunction:
    return ConvexFunction("square", lambda s: s * s, lambda s: 2 * s)


def affine(a: float = 1.0, c: float = 0.0) -> ConvexFunction:
    return ConvexFunction("affine", lambda s: a * s + c, lambda s: a * np.ones_like(s))


def smoothed_positive_part(lam: float, eps: float) -> ConvexFunction:
    """Gaussian mollification of ``(s - lam)_+`` with width ``eps``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    gauss = lambda x: np.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)  # noqa: E731

    def f(s):
        x = (s - lam) / eps
        return eps * (x * ndtr(x) + gauss(x))

    def df(s):
        return ndtr((s - lam) / eps)

    return ConvexFunction("positive_part", f, df, eps)


def mollification_width(theta, spacings: float = 3.0) -> float:
    """``spacings`` grid cells converted to value units via ``max |grad theta|``."""
    th = _spectral(theta)
    g = th.grid
    c = th.coefficients
    gx = np.fft.ifft2(1j * g.k1 * c).real * g.n**2
    gy = np.fft.ifft2(1j * g.k2 * c).real * g.n**2
    return spacings * g.spacing * float(np.max(np.hypot(gx, gy)))


@dataclass(frozen=True)
class CordobaReport:
    min_slack: float
    scale: float
    function: str


def cordoba_check(theta, convex_f: ConvexFunction, alpha: float, oversample: int | None = None
                  ) -> CordobaReport:
    """Pointwise ``f'(theta) Lambda^(2 alpha) theta - Lambda^(2 alpha) f(theta)``.

    Both sides are evaluated on a grid ``oversample`` times finer than the
    input (default 1 for ``square``/``affine``, 4 otherwise) so that
    ``f(theta)`` is resolved.
    """
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    convex_f.check_convex()
    th = _spectral(theta)
    if oversample is None:
        oversample = 1 if convex_f.name in ("square", "affine") else 4
    fine = upsample(th, oversample) if oversample > 1 else th
    g = fine.grid
    w = g.kmag ** (2 * alpha)
    v = np.fft.ifft2(fine.coefficients).real * g.n**2
    lap = np.fft.ifft2(w * fine.coefficients).real * g.n**2
    fv = convex_f.f(v)
    lap_f = np.fft.ifft2(w * np.fft.fft2(fv)).real
    lhs = convex_f.df(v) * lap
    slack = lhs - lap_f
    scale = float(np.max(np.abs(lhs)) + np.max(np.abs(lap_f)))
    return CordobaReport(float(np.min(slack)), scale, convex_f.name)


# --- interpolation -------------------------------------------------------------

def interpolation_ratio(field, alpha: float, n: int = 2) -> float:
    """``||f||_q^2 / (||f||_2^(2 sigma) ||Lambda^alpha f||_2^(2 (1 - sigma)))`` for one field."""
    th = _physical(field)
    g = th.grid
    q = 2 + 4 * alpha / n
    sigma = 2 * alpha / (n + 2 * alpha)
    v = th.values
    lq = (g.cell_area * np.sum(np.abs(v) ** q)) ** (2 / q)
    l2 = g.cell_area * np.sum(v * v)
    h = _seminorm_sq(g, v, alpha)
    if l2 == 0 or h == 0:
        return float("nan")
    return float(lq / (l2**sigma * h ** (1 - sigma)))


def interpolation_check(traj: TrajectoryStore, family: LevelSetFamily, cfg: SimConfig,
                        oversample: int = 1) -> float:
    """Space-time ratio for each ``theta_{k-1}`` on ``[t_{k-1}, T]``; returns
    the max over k (zero fields skipped, nan if all vanish)."""
    q, sigma = family.q, family.sigma
    best = float("nan")
    for k in range(1, family.k_max + 1):
        lam, tcut = family.levels[k - 1], family.times[k - 1]
        idx = [i for i, t in enumerate(traj.times) if t >= tcut - 1e-14]
        if len(idx) < 2:
            continue
        t = traj.times[idx]
        lqq, mass, diss = [], [], []
        for i in idx:
            g, v = _fine_values(traj[i][1], oversample)
            w = np.maximum(v - lam, 0.0)
            lqq.append(g.cell_area * np.sum(w**q))
            mass.append(g.cell_area * np.sum(w * w))
            diss.append(_seminorm_sq(g, w, cfg.alpha))
        num = _time_integral(t, lqq)
        den_d = _time_integral(t, diss)
        if max(mass) == 0 or den_d <= 0 or num <= 0:
            continue
        r = num ** (2 / q) / (max(mass) ** sigma * den_d ** (1 - sigma))
        best = r if not best == best else max(best, r)
    return best


def single_mode_ratio(alpha: float, n: int = 2) -> float:
    """Closed-form ratio for ``cos(x_1)`` on the ``2 pi`` periodic square."""
    q = 2 + 4 * alpha / n
    iq, _ = integrate.quad(lambda x: abs(math.cos(x)) ** q, 0, 2 * math.pi, limit=200,
                           points=[math.pi / 2, 3 * math.pi / 2])
    return (2 * math.pi * iq) ** (2 / q) / (2 * math.pi**2)


# --- local energy inequality ------------------------------------------------

def bump(s):
    """``exp(1 - 1/(1 - s^2))`` on ``|s| < 1``, 0 outside; value 1 at 0."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    m = np.abs(s) < 1
    out[m] = np.exp(1 - 1 / (1 - s[m] ** 2))
    return out


def bump_derivative(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    m = np.abs(s) < 1
    sm = s[m]
    out[m] = np.exp(1 - 1 / (1 - sm**2)) * (-2 * sm / (1 - sm**2) ** 2)
    return out


def _periodic_offset(x, c, length):
    return (x - c + length / 2) % length - length / 2


def cutoff_x(grid: Grid, box: BoxSpec):
    """Tensor bump on the box with its gradient."""
    box.check_fits(grid.length)
    X, Y = grid.mesh
    r = box.half_width
    sx = _periodic_offset(X, box.center[0], grid.length) / r
    sy = _periodic_offset(Y, box.center[1], grid.length) / r
    bx, by = bump(sx), bump(sy)
    return bx * by, bump_derivative(sx) * by / r, bx * bump_derivative(sy) / r


@dataclass(frozen=True)
class LocalEnergyReport:
    slack: float
    lhs: float
    rhs: float
    identity_residual: float
    fitted_factor: float
    C1: float
    C2: float | None
    terms: dict = field(default_factory=dict)


def _local_terms(snapshot: SpectralField, ext: ExtensionField, box: BoxSpec, cfg: SimConfig,
                 m1, m2):
    g = snapshot.grid
    n2 = g.n**2
    eta, ex, ey = cutoff_x(g, box)
    h = box.height
    z = ext.z
    ez = bump(z / h)
    ezp = bump_derivative(z / h) / h
    c = ext.coefficients
    vals = np.fft.ifft2(c, axes=(-2, -1)).real * n2
    gx = np.fft.ifft2(1j * g.k1 * c, axes=(-2, -1)).real * n2
    gy = np.fft.ifft2(1j * g.k2 * c, axes=(-2, -1)).real * n2
    dz = np.fft.ifft2(_dz_layers(ext), axes=(-2, -1)).real * n2
    pos = vals > 0
    vp = np.where(pos, vals, 0.0)
    # eta(x, z) = eta_x(x) eta_z(z); grad(eta theta*_+) = theta*_+ grad eta + eta 1{theta*>0} grad theta*
    e3 = eta[None] * ez[:, None, None]
    gex = ex[None] * ez[:, None, None]
    gey = ey[None] * ez[:, None, None]
    gez = eta[None] * ezp[:, None, None]
    ax = vp * gex + e3 * pos * gx
    ay = vp * gey + e3 * pos * gy
    az = vp[1:] * gez[1:] + e3[1:] * pos[1:] * dz
    dens_E = g.cell_area * np.sum(ax[1:] ** 2 + ay[1:] ** 2 + az**2, axis=(1, 2))
    dens_c = g.cell_area * np.sum((gex[1:] ** 2 + gey[1:] ** 2 + gez[1:] ** 2) * vp[1:] ** 2, axis=(1, 2))
    b = ext.b
    a = ext.alpha
    zl = z[1:]
    u = np.log(zl)
    z0 = zl[0]
    # below the first layer: x-part frozen at z = 0, z-part from theta* - theta ~ A z^(2 alpha)
    amp = np.fft.ifft2((c[1] - c[0]) / z0 ** (2 * a)).real * n2
    tail_E = (g.cell_area * np.sum(ax[0] ** 2 + ay[0] ** 2)) * z0 ** (1 + b) / (1 + b) \
        + 2 * a * g.cell_area * np.sum((eta * pos[0] * amp) ** 2) * z0 ** (2 * a)
    tail_c = g.cell_area * np.sum((ex**2 + ey**2) * vp[0] ** 2) * z0 ** (1 + b) / (1 + b)
    energy = _u_quadrature(u, zl ** (1 + b) * dens_E) + tail_E
    cut = _u_quadrature(u, zl ** (1 + b) * dens_c) + tail_c
    th = vals[0]
    tp = vp[0]
    mass = g.cell_area * np.sum((eta * tp) ** 2)
    grad_term = g.cell_area * np.sum((ex**2 + ey**2) * tp**2)
    u1 = np.fft.ifft2(m1 * snapshot.coefficients).real * n2
    u2 = np.fft.ifft2(m2 * snapshot.coefficients).real * n2
    transport = g.cell_area * np.sum((2 * eta * ex * u1 + 2 * eta * ey * u2) * tp**2)
    ln = 2 / cfg.alpha
    unorm = (g.cell_area * np.sum(np.hypot(u1, u2) ** ln)) ** (1 / ln)
    return dict(mass=mass, energy=energy, cut=cut, grad=grad_term, transport=transport,
                unorm=unorm, theta=th)


def local_energy_check(traj: TrajectoryStore, ext_traj, eta: BoxSpec, t1: float, t2: float,
                       cfg: SimConfig, ext_cfg: ExtensionConfig | None = None,
                       holder_C2: bool = True) -> LocalEnergyReport:
    """Terms of the localized energy inequality on ``[t1, t2]``.

    With ``D = 2 kappa / d_alpha`` (``d_alpha`` the boundary-flux constant)
    the exact balance reads

        M(t2) + D int E = M(t1) + D int Cut + int int grad(eta^2) . u theta_+^2

    with ``M = int (eta theta_+)^2``, ``E = int int z^b |grad(eta theta*_+)|^2``
    and ``Cut = int int z^b |grad eta|^2 (theta*_+)^2``.  The inequality form
    replaces the transport term by ``C1 int int (|grad eta| theta_+)^2`` with
    the measured ``C1 = max_t ||u||_{L^(2/alpha)}``.  ``fitted_factor`` is
    ``max(1, LHS / RHS)``.

    ``ext_traj`` is ``None`` (extensions computed here with ``ext_cfg``) or
    a sequence of extension fields aligned with the trajectory.
    """
    idx = _window(traj, t1, t2)
    g = traj.grid
    eta.check_fits(g.length)
    if ext_cfg is None:
        ext_cfg = ExtensionConfig(cfg.alpha)
    if ext_cfg.alpha != cfg.alpha:
        raise ValueError("extension alpha differs from the simulation alpha")
    if g != cfg.grid:
        from dataclasses import replace
        cfg = replace(cfg, grid=g)
    m1, m2 = cfg.velocity_multipliers()
    rows = []
    for i in idx:
        snap = traj[i][1]
        ext = ext_traj[i] if ext_traj is not None else extend(snap, ext_cfg)
        rows.append(_local_terms(snap, ext, eta, cfg, m1, m2))
    t = traj.times[idx]
    d = calibration_closed_form(cfg.alpha)
    D = 2 * cfg.kappa / d
    int_E = _time_integral(t, [r["energy"] for r in rows])
    int_cut = _time_integral(t, [r["cut"] for r in rows])
    int_grad = _time_integral(t, [r["grad"] for r in rows])
    int_tr = _time_integral(t, [r["transport"] for r in rows])
    C1 = max(r["unorm"] for r in rows)
    lhs = rows[-1]["mass"] + D * int_E
    balance = rows[0]["mass"] + D * int_cut + int_tr
    rhs = rows[0]["mass"] + D * int_cut + C1 * int_grad
    factor = max(1.0, lhs / rhs) if rhs > 0 else (1.0 if lhs <= 0 else float("inf"))
    C2 = None
    if holder_C2:
        from .diagnostics import velocity_holder_norm
        from .spectral import riesz_velocity

        expo = 1 - 2 * cfg.alpha
        C2 = 0.0
        for i in idx:
            u = riesz_velocity(traj[i][1], (m1, m2))
            rep = velocity_holder_norm(u, expo) if expo > 0 else None
            C2 = max(C2, rep.holder_seminorm if rep is not None else u.max_speed())
    terms = dict(mass_t1=rows[0]["mass"], mass_t2=rows[-1]["mass"], extension_energy=D * int_E,
                 cutoff_energy=D * int_cut, transport=int_tr, gradient_term=int_grad)
    return LocalEnergyReport(float(rhs - lhs), float(lhs), float(rhs), float(lhs - balance),
                             float(factor), float(C1), C2, terms)


# --- weighted sets and the isoperimetric inequality ----------------------------

def _weight_integral(z1, z2, b):
    return (z2 ** (1 + b) - z1 ** (1 + b)) / (1 + b)


def _sample(f, box: BoxSpec, resolution: int, zmap=None):
    r = box.half_width
    h = box.height
    cx = box.center[0] if len(box.center) else 0.0
    x = np.linspace(cx - r, cx + r, resolution + 1)
    zt = np.linspace(0.0, h, resolution + 1)
    zz = zt if zmap is None else zmap(zt)
    if callable(f):
        Z, Xg = np.meshgrid(zz, x, indexing="ij")
        vals = np.asarray(f(Xg, Z), dtype=float) * np.ones_like(Xg)
    else:
        vals = np.asarray(f, dtype=float)
        if vals.shape != (resolution + 1, resolution + 1):
            raise ValueError("sampled f must have shape (resolution + 1, resolution + 1) as (z, x)")
    return x, zt, vals


def _edge_flux(x1, z1, x2, z2, b):
    """``int Phi(z) dx`` along the segment, ``Phi(z) = z^(1+b) / (1+b)``."""
    dz = z2 - z1
    small = np.abs(dz) <= 1e-12 * np.maximum(np.abs(z1) + np.abs(z2), 1e-300)
    psi = lambda z: np.abs(z) ** (2 + b) / ((1 + b) * (2 + b))  # noqa: E731
    with np.errstate(divide="ignore", invalid="ignore"):
        exact = (x2 - x1) * (psi(z2) - psi(z1)) / dz
    mid = (x2 - x1) * np.abs(0.5 * (z1 + z2)) ** (1 + b) / (1 + b)
    return np.where(small, mid, exact)


def _clipped_measure(px, pz, pf, level, b):
    """Weighted measure of ``{f <= level}`` in each triangle, ``f`` linear.

    ``px, pz, pf`` have shape (T, 3).  The clipped polygon is integrated
    exactly with Green's theorem, ``int int z^b = -oint Phi(z) dx``.
    """
    below = np.all(pf <= level, axis=1)
    cut = ~below & np.any(pf < level, axis=1)
    out = np.zeros(len(px))
    if below.any():
        out[below] = _triangle_measure(px[below], pz[below], b)
    if cut.any():
        out[cut] = _clip_polygons(px[cut], pz[cut], pf[cut], level, b)
    return out


def _triangle_measure(px, pz, b):
    total = np.zeros(len(px))
    for i in range(3):
        j = (i + 1) % 3
        total -= _edge_flux(px[:, i], pz[:, i], px[:, j], pz[:, j], b)
    return np.abs(total)


def _clip_polygons(px, pz, pf, level, b):
    slots_x, slots_z, valid = [], [], []
    for i in range(3):
        j = (i + 1) % 3
        fi, fj = pf[:, i] - level, pf[:, j] - level
        slots_x.append(px[:, i])
        slots_z.append(pz[:, i])
        valid.append(fi <= 0)
        cross = fi * fj < 0
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.where(cross, fi / (fi - fj), 0.0)
        slots_x.append(px[:, i] + w * (px[:, j] - px[:, i]))
        slots_z.append(pz[:, i] + w * (pz[:, j] - pz[:, i]))
        valid.append(cross)
    X = np.stack(slots_x, axis=1)
    Z = np.stack(slots_z, axis=1)
    V = np.stack(valid, axis=1)
    total = np.zeros(len(px))
    m = X.shape[1]
    # walk to the next valid slot cyclically
    for s in range(m):
        nxt_x = np.zeros(len(px))
        nxt_z = np.zeros(len(px))
        found = np.zeros(len(px), dtype=bool)
        for d in range(1, m + 1):
            t = (s + d) % m
            take = V[:, t] & ~found
            nxt_x = np.where(take, X[:, t], nxt_x)
            nxt_z = np.where(take, Z[:, t], nxt_z)
            found |= take
        use = V[:, s] & found
        total -= np.where(use, _edge_flux(X[:, s], Z[:, s], nxt_x, nxt_z, b), 0.0)
    return np.abs(total)


def _triangles(x, z, vals):
    """Split each grid cell into two triangles; arrays of shape (T, 3)."""
    Zg, Xg = np.meshgrid(z, x, indexing="ij")

    def corners(a):
        return a[:-1, :-1], a[:-1, 1:], a[1:, 1:], a[1:, :-1]

    out = []
    for a in (Xg, Zg, vals):
        c00, c01, c11, c10 = (v.ravel() for v in corners(a))
        out.append(np.concatenate([np.stack([c00, c01, c11], 1), np.stack([c00, c11, c10], 1)]))
    return out


def weighted_set_measures(f, box: BoxSpec, b: float, resolution: int = 256,
                          p: float | None = None) -> WeightedSets:
    """``|A|_w, |B|_w, |C|_w`` and ``K = int int z^b |grad f|^2`` on ``B_r*``.

    ``f`` is a callable ``f(x, z)`` or samples of shape ``(res+1, res+1)``
    indexed ``(z, x)``.  The cross-section has one horizontal dimension.
    ``f`` is interpolated linearly on a triangulation of the grid and the
    weight ``z^b`` is integrated exactly over each clipped triangle.
    """
    if not -1 < b < 1:
        raise ValueError("b must lie in (-1, 1)")
    if p is None:
        p = default_p(b)
    x, z, vals = _sample(f, box, resolution)
    return _grid_measures(x, z, vals, b, p)


def _grid_measures(x, z, vals, b, p) -> WeightedSets:
    px, pz, pf = _triangles(x, z, vals)
    total = float(np.sum(_triangle_measure(px, pz, b)))
    A = float(np.sum(_clipped_measure(px, pz, pf, 0.0, b)))
    # {f >= 1} is the complement of {f < 1}; the level set itself is null
    B = total - float(np.sum(_clipped_measure(px, pz, pf, 1.0, b)))
    C = max(total - A - B, 0.0)
    # cell gradients (averaged edge differences), exact weight per cell
    hx = np.diff(x)[None, :]
    hz = np.diff(z)[:, None]
    fx = 0.5 * (np.diff(vals[:-1], axis=1) + np.diff(vals[1:], axis=1)) / hx
    fz = 0.5 * (np.diff(vals[:, :-1], axis=0) + np.diff(vals[:, 1:], axis=0)) / hz
    w = _weight_integral(z[:-1], z[1:], b)[:, None] * hx
    K = float(np.sum(w * (fx**2 + fz**2)))
    gmax = float(np.sqrt(np.max(fx**2 + fz**2)))
    return WeightedSets(A, B, C, K, p, b, total, gmax)


def default_p(b: float) -> float:
    return 2 * (1 + b) / (1 - b) + 1


def isoperimetric_exponent(n: int, b: float, p: float) -> float:
    return 1 + 0.5 * (n + 1 - (p + 1) / (p - 1) * b) * (1 - 1 / p)


def scale_free_exponent(n: int, b: float, p: float) -> float:
    """Power of ``r`` making the implied constant invariant under ``f(x/r, z/r)``."""
    d = n + 1 + b
    return 2 * d - d / (2 * p) - (d - 2) / 2


def isoperimetric_check(f, box: BoxSpec, b: float, p: float | None = None,
                        resolution: int = 256, n: int = 1, gradient_cap: float = 1e8
                        ) -> IsoperimetricReport:
    """Both sides of the weighted isoperimetric inequality and the implied
    constant ``|A|_w |B|_w / (r^e |C|_w^(1/2p) K^(1/2))``."""
    if p is None:
        p = default_p(b)
    if not p > (1 + b) / (1 - b):
        raise ValueError(f"p must exceed (1 + b)/(1 - b) = {(1 + b) / (1 - b)}")
    ws = weighted_set_measures(f, box, b, resolution, p)
    r = box.half_width
    e = isoperimetric_exponent(n, b, p)
    lhs = ws.A * ws.B
    cterm = ws.C ** (1 / (2 * p))
    kterm = math.sqrt(ws.K)
    flagged = ws.max_gradient > gradient_cap or not math.isfinite(ws.K)

    def implied(expo):
        rest = r**expo * cterm * kterm
        if lhs == 0:
            return 0.0
        return lhs / rest if rest > 0 else float("inf")

    es = scale_free_exponent(n, b, p)
    return IsoperimetricReport(lhs, e, r**e, cterm, kterm, implied(e), ws, flagged, es, implied(es))


def change_of_variables_check(f, box: BoxSpec, b: float, resolution: int = 256) -> float:
    """Relative mismatch between ``|A|_w`` in ``z`` and the plain measure of the
    image set under ``zt = z^(b+1) / (b+1)``.

    Both measures are Richardson-extrapolated from ``resolution`` and
    ``resolution // 2``.  The ``zt`` nodes are the images of uniform ``z``
    nodes, which keeps the pulled-back profile resolved near ``zt = 0``.
    """
    if not callable(f):
        raise ValueError("f must be callable for the change of variables")
    if resolution < 4 or resolution % 2:
        raise ValueError("resolution must be an even integer >= 4")
    p = default_p(b)

    def both(res):
        x, z, vals = _sample(f, box, res)
        zt = z ** (b + 1) / (b + 1)
        return (_grid_measures(x, z, vals, b, p).A, _grid_measures(x, zt, vals, 0.0, p).A)

    (a_fine, t_fine), (a_coarse, t_coarse) = both(resolution), both(resolution // 2)
    A = (4 * a_fine - a_coarse) / 3
    At = (4 * t_fine - t_coarse) / 3
    ref = A if A > 0 else _grid_measures(*_sample(f, box, resolution), b, p).total
    return float(abs(A - At) / ref)


def random_smooth_profile(seed: int, modes: int = 4):
    """Smooth ``F`` on the unit box ``[-1, 1] x [0, 1]`` crossing both 0 and 1.

    Scaled copies ``F(x / r, z / r)`` give the same profile on ``B_r*``.
    """
    rng = np.random.default_rng(seed)
    kx = rng.integers(1, modes + 1, size=modes)
    kz = rng.integers(1, modes + 1, size=modes)
    ph = rng.uniform(0, 2 * np.pi, size=(modes, 2))
    amp = rng.normal(size=modes) / np.arange(1, modes + 1)
    tilt = rng.uniform(-1, 1, size=2)

    def raw(x, z):
        x = np.asarray(x, dtype=float)
        z = np.asarray(z, dtype=float)
        out = 0.5 * (tilt[0] * x + tilt[1] * (2 * z - 1))
        for j in range(modes):
            out = out + 0.6 * amp[j] * np.cos(np.pi * kx[j] * x / 2 + ph[j, 0]) * np.cos(np.pi * kz[j] * z / 2 + ph[j, 1])
        return out

    # affine map so the sampled range is [-0.3, 1.3]
    zs, xs = np.meshgrid(np.linspace(0, 1, 65), np.linspace(-1, 1, 129), indexing="ij")
    v = raw(xs, zs)
    lo, hi = float(v.min()), float(v.max())
    span = hi - lo if hi > lo else 1.0

    def F(x, z):
        return -0.3 + 1.6 * (raw(x, z) - lo) / span

    return F


def scaled(F, r: float):
    return lambda x, z: F(np.asarray(x) / r, np.asarray(z) / r)
