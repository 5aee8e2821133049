"""
Weighted harmonic extension of a periodic field into the half space.

For ``b = 1 - 2 alpha`` the extension solves ``div(z^b grad theta*) = 0`` with
``theta*(x, 0) = theta(x)``.  Mode by mode it is the radial multiplier

    phi(s) = 2^(1 - alpha) / Gamma(alpha) * s^alpha K_alpha(s),   s = |k| z,

which also equals the normalized Fourier transform of the Poisson kernel
``z^(2 alpha) / (|x|^2 + z^2)^((n + 2 alpha)/2)``.  The weighted normal
derivative at ``z = 0`` recovers the fractional Laplacian up to a constant
that is calibrated numerically.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sparse
import scipy.sparse.linalg as spla
from scipy import integrate, special
from scipy.interpolate import CubicSpline
from scipy.linalg import eigh_tridiagonal

from .spectral import Grid, PhysicalField, SpectralField, _spectral, forward_transform, gradient

METHODS = ("bessel_multiplier", "kernel_quadrature")


class ExtrapolationWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class ExtensionConfig:
    """Extension parameters.

    The vertical grid is the boundary ``z = 0`` followed by the geometric
    layers ``z_min * rho**j``, ``j = 0..J``.  ``z_min`` defaults to
    ``1e-4 * L``.  An explicit ``z_values`` array (without the boundary)
    overrides the geometric grid.
    """

    alpha: float
    z_min: float | None = None
    rho: float = 1.25
    J: int = 60
    method: str = "bessel_multiplier"
    z_values: tuple | None = field(default=None, compare=True)

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1) for the extension, got {self.alpha}")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.z_min is not None and not self.z_min > 0:
            raise ValueError("z_min must be positive")
        if not self.rho > 1:
            raise ValueError("rho must exceed 1")
        if self.J < 2:
            raise ValueError("need J >= 2")
        if self.z_values is not None:
            z = np.asarray(self.z_values, dtype=float)
            if z.ndim != 1 or np.any(z <= 0) or np.any(np.diff(z) <= 0):
                raise ValueError("z_values must be positive and strictly increasing")
            object.__setattr__(self, "z_values", tuple(float(v) for v in z))

    @property
    def b(self) -> float:
        return 1.0 - 2.0 * self.alpha

    @property
    def geometric(self) -> bool:
        return self.z_values is None

    def z_grid(self, length: float = 2 * math.pi) -> np.ndarray:
        """Vertical nodes including ``z = 0``."""
        if self.z_values is not None:
            return np.concatenate([[0.0], self.z_values])
        zmin = self.z_min if self.z_min is not None else 1e-4 * length
        return np.concatenate([[0.0], zmin * self.rho ** np.arange(self.J + 1)])


@dataclass(frozen=True, eq=False)
class ExtensionField:
    """``theta*`` on (layer, x1, x2); layer 0 is ``z = 0``."""

    grid: Grid
    z: np.ndarray
    coefficients: np.ndarray
    alpha: float
    clamped: bool = False

    def __post_init__(self):
        for name in ("z", "coefficients"):
            a = np.array(getattr(self, name))
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def b(self) -> float:
        return 1.0 - 2.0 * self.alpha

    @property
    def values(self) -> np.ndarray:
        v = np.fft.ifft2(self.coefficients, axes=(-2, -1)).real * self.grid.n**2
        v.setflags(write=False)
        return v

    def layer(self, j: int) -> SpectralField:
        return SpectralField(self.grid, self.coefficients[j])


def _bessel_profile(s, alpha):
    s = np.asarray(s, dtype=float)
    out = np.ones_like(s)
    pos = s > 0
    sp = s[pos]
    with np.errstate(divide="ignore", over="ignore", under="ignore"):
        logv = (1 - alpha) * math.log(2) - special.gammaln(alpha) + alpha * np.log(sp) - sp \
            + np.log(special.kve(alpha, sp))
    vals = np.exp(logv)
    clamped = bool(np.any(~np.isfinite(logv)) or np.any((vals == 0) & (sp > 0)))
    vals[~np.isfinite(vals)] = 0.0
    out[pos] = vals
    return out, clamped


def _kernel_mass(alpha):
    # int_0^inf (1 + t^2)^(-(1/2 + alpha)) dt
    return 0.5 * math.sqrt(math.pi) * math.exp(special.gammaln(alpha) - special.gammaln(alpha + 0.5))


@lru_cache(maxsize=200_000)
def _kernel_profile_scalar(s: float, alpha: float) -> float:
    if s == 0:
        return 1.0
    p = 0.5 + alpha
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, _ = integrate.quad(lambda t: (1 + t * t) ** (-p), 0, np.inf, weight="cos", wvar=s,
                                limlst=200, limit=500)
    return val / _kernel_mass(alpha)


def _kernel_profile(s, alpha):
    s = np.asarray(s, dtype=float)
    uniq, inv = np.unique(s, return_inverse=True)
    vals = np.array([_kernel_profile_scalar(float(v), float(alpha)) for v in uniq])
    return vals[inv].reshape(s.shape), False


def extension_multiplier(s, alpha: float, method: str = "bessel_multiplier"):
    """Profile ``phi(s)`` with ``phi(0) = 1``; returns ``(values, clamped)``.

    ``kernel_quadrature`` integrates the plane-wave response of the Poisson
    kernel directly (reduced to one dimension along the wave vector).
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if method == "bessel_multiplier":
        return _bessel_profile(s, alpha)
    if method == "kernel_quadrature":
        return _kernel_profile(s, alpha)
    raise ValueError(f"unknown method {method!r}")


def extend(theta, cfg: ExtensionConfig) -> ExtensionField:
    """Extension of ``theta`` on the vertical grid of ``cfg``."""
    th = _spectral(theta)
    if not np.all(np.isfinite(th.coefficients)):
        raise ValueError("theta contains non-finite values")
    g = th.grid
    z = cfg.z_grid(g.length)
    kmag = g.kmag
    coeffs = np.empty((len(z),) + g.shape, dtype=complex)
    clamped = False
    # only modes actually present matter; skip the quadrature on empty ones
    active = np.abs(th.coefficients) > 0
    for j, zj in enumerate(z):
        s = kmag * zj
        phi = np.zeros(g.shape)
        vals, flag = extension_multiplier(s[active], cfg.alpha, cfg.method)
        phi[active] = vals
        clamped |= flag
        coeffs[j] = phi * th.coefficients
    coeffs[0] = th.coefficients
    return ExtensionField(g, z, coeffs, cfg.alpha, clamped)


def _richardson(h, rho, exponents):
    """Eliminate ``c z^p`` terms from samples ``h[j]`` at ``z_min rho^j``."""
    levels = [np.asarray(h)]
    cur = levels[0]
    for p in exponents:
        r = rho**p
        cur = (r * cur[:-1] - cur[1:]) / (r - 1)
        levels.append(cur)
    return levels


def _secant_slopes(ext: ExtensionField, layers: int):
    a = ext.alpha
    z = ext.z[1 : layers + 1]
    shape = (-1,) + (1,) * (ext.coefficients.ndim - 1)
    return -2 * a * (ext.coefficients[1 : layers + 1] - ext.coefficients[0]) / z.reshape(shape) ** (2 * a)


def _extrapolation_exponents(alpha):
    return [2 - 2 * alpha, 2.0, 4 - 2 * alpha]


def _check_geometric(z, rtol=1e-9):
    ratios = z[2:] / z[1:-1]
    if len(ratios) < 4 or np.ptp(ratios[:4]) > rtol * ratios[0]:
        raise ValueError("normal-derivative extrapolation needs a geometric z-grid near 0")
    return float(ratios[0])


def _limit_from_slopes(h, rho, alpha):
    ex = _extrapolation_exponents(alpha)
    lv = _richardson(h, rho, ex)
    best = lv[len(ex)][0]
    spread = lv[len(ex)][1] - best if len(lv[len(ex)]) > 1 else lv[len(ex) - 1][1] - lv[len(ex) - 1][0]
    return best, spread


@lru_cache(maxsize=64)
def calibration_constant(alpha: float, z_key: tuple, method: str = "bessel_multiplier") -> float:
    """Limit of the extrapolated weighted normal derivative for the unit mode.

    ``z_key`` holds the first geometric layers; the ratio of the returned
    constant to ``|k|^(2 alpha)`` is the factor separating the boundary flux
    from the fractional Laplacian.
    """
    z = np.asarray(z_key)
    phi, _ = extension_multiplier(z, alpha, method)
    h = -2 * alpha * (phi - 1) / z ** (2 * alpha)
    rho = z[1] / z[0]
    best, _ = _limit_from_slopes(h, rho, alpha)
    return float(best)


def calibration_closed_form(alpha: float) -> float:
    """``2 Gamma(1 - alpha) / (4^alpha Gamma(alpha))``; equals 1 at alpha = 1/2."""
    return 2 * math.gamma(1 - alpha) / (4**alpha * math.gamma(alpha))


def normal_derivative_limit(ext: ExtensionField, cfg: ExtensionConfig | None = None, *,
                            return_info: bool = False, rtol: float = 1e-5):
    """``lim_{z -> 0} -z^b d_z theta*`` divided by the calibration constant.

    The weighted secant ``-2 alpha (theta*(z) - theta) / z^(2 alpha)`` shares
    its limit with ``-z^b d_z theta*``; three Richardson sweeps on the
    geometric grid remove the ``z^(2 - 2 alpha)``, ``z^2`` and
    ``z^(4 - 2 alpha)`` corrections.  The result is normalized so that it
    equals ``fractional_laplacian(theta, alpha)``.
    """
    alpha = ext.alpha
    if len(ext.z) < 6:
        raise ValueError("need at least 5 layers above z = 0")
    rho = _check_geometric(ext.z)
    layers = 5
    h = _secant_slopes(ext, layers)
    lim, spread = _limit_from_slopes(h, rho, alpha)
    method = cfg.method if cfg is not None else "bessel_multiplier"
    # calibrate on the unit mode k = (1, 0) using the same layers
    k1 = 2 * math.pi / ext.grid.length
    d = calibration_constant(alpha, tuple(ext.z[1 : layers + 1] * k1), method)
    lim = lim / d
    spread = spread / d
    scale = np.max(np.abs(lim))
    err = float(np.max(np.abs(spread))) / scale if scale > 0 else 0.0
    converged = err <= rtol
    if not converged:
        warnings.warn(f"normal-derivative extrapolation not converged (relative spread {err:.2e})",
                      ExtrapolationWarning, stacklevel=2)
    out = PhysicalField(ext.grid, np.fft.ifft2(lim).real * ext.grid.n**2)
    if return_info:
        return out, {"calibration": d, "spread": err, "converged": converged}
    return out


def _dz_layers(ext: ExtensionField):
    """``d theta*/dz`` on the layers above 0 by a cubic spline in ``log z``."""
    z = ext.z[1:]
    u = np.log(z)
    c = ext.coefficients[1:]
    flat = c.reshape(len(z), -1)
    spl_re = CubicSpline(u, flat.real, axis=0)
    spl_im = CubicSpline(u, flat.imag, axis=0)
    du = (spl_re(u, 1) + 1j * spl_im(u, 1)).reshape(c.shape)
    return du / z.reshape(-1, 1, 1)


def _u_quadrature(u, f):
    du = np.diff(u)
    if np.ptp(du) <= 1e-9 * du[0] and len(u) % 2 == 1:
        return integrate.simpson(f, x=u, axis=0)
    return integrate.trapezoid(f, x=u, axis=0)


def weighted_dirichlet_energy(ext: ExtensionField, cutoff: PhysicalField | None = None,
                              cfg: ExtensionConfig | None = None) -> float:
    """``int int z^b |grad(eta theta*)|^2 dx dz`` over the torus times ``z > 0``.

    Spectral in x; in z the integral is taken in ``u = log z`` on the
    layers, with the leading ``z^(2 alpha)`` behaviour integrated
    analytically below the first layer.
    """
    g = ext.grid
    a = ext.alpha
    b = ext.b
    z = ext.z[1:]
    u = np.log(z)
    c = ext.coefficients[1:]
    dz = _dz_layers(ext)
    z0 = z[0]
    # leading amplitude A in theta* = theta + A z^(2 alpha) + ...
    amp = (ext.coefficients[1] - ext.coefficients[0]) / z0 ** (2 * a)
    n2 = g.n**2
    if cutoff is None:
        k2 = g.kmag**2
        gx = g.length**2 * np.sum(k2 * np.abs(c) ** 2, axis=(1, 2))
        gz = g.length**2 * np.sum(np.abs(dz) ** 2, axis=(1, 2))
        bottom_x = g.length**2 * np.sum(k2 * np.abs(ext.coefficients[0]) ** 2)
        bottom_z = g.length**2 * np.sum(np.abs(amp) ** 2)
    else:
        eta = np.asarray(cutoff.values if isinstance(cutoff, PhysicalField) else cutoff, dtype=float)
        vals = np.fft.ifft2(c, axes=(-2, -1)).real * n2
        dzv = np.fft.ifft2(dz, axes=(-2, -1)).real * n2
        prod = np.fft.fft2(eta * vals, axes=(-2, -1)) / n2
        k2 = g.kmag**2
        k2 = np.where(g.nyquist, 0.0, k2)
        gx = g.length**2 * np.sum(k2 * np.abs(prod) ** 2, axis=(1, 2))
        gz = g.cell_area * np.sum((eta * dzv) ** 2, axis=(1, 2))
        p0 = np.fft.fft2(eta * ext_values0(ext)) / n2
        bottom_x = g.length**2 * np.sum(k2 * np.abs(p0) ** 2)
        amp_v = np.fft.ifft2(amp).real * n2
        bottom_z = g.cell_area * np.sum((eta * amp_v) ** 2)
    integrand = z ** (1 + b) * (gx + gz)
    body = _u_quadrature(u, integrand)
    tail = bottom_x * z0 ** (1 + b) / (1 + b) + 2 * a * bottom_z * z0 ** (2 * a)
    return float(body + tail)


def ext_values0(ext: ExtensionField) -> np.ndarray:
    return np.fft.ifft2(ext.coefficients[0]).real * ext.grid.n**2


# --- weighted elliptic problems in an (x, z) cross-section -------------------

@dataclass(frozen=True)
class BoxBoundary:
    """Dirichlet data on ``[x0, x1] x [z0, z1]``; each side a constant or a
    callable of the running coordinate."""

    x_range: tuple
    z_range: tuple
    left: object = 0.0
    right: object = 0.0
    bottom: object = 0.0
    top: object = 0.0


@dataclass(frozen=True, eq=False)
class WeightedLaplaceSolution:
    x: np.ndarray
    z: np.ndarray
    values: np.ndarray  # indexed (z, x)
    b: float
    residual: float
    iterations: int | None = None


@dataclass(frozen=True)
class BarrierReport:
    b: float
    resolution: int
    lambda_margin: float | None = None
    beta0_fit: float | None = None
    Cbar_fit: float | None = None
    fit_r2: float | None = None
    residual: float = 0.0


def _side(spec, coord):
    if callable(spec):
        return np.asarray(spec(coord), dtype=float) * np.ones_like(coord)
    return np.full_like(coord, float(spec), dtype=float)


def _weighted_operator(x, z, b):
    """Grid spacings and flux coefficients of the five-point stencil."""
    hx = x[1] - x[0]
    hz = z[1] - z[0]
    zi = z[1:-1]
    # z-flux coefficient: exact harmonic mean of z^b over each vertical segment
    if b == 0:
        az = np.ones(len(z) - 1)
    else:
        az = (1 - b) * hz / (z[1:] ** (1 - b) - z[:-1] ** (1 - b))
    # x-flux coefficient: average of z^b over the dual cell of each row
    lo = np.maximum(zi - hz / 2, 0.0)
    ax = (((zi + hz / 2) ** (1 + b) - lo ** (1 + b)) / ((1 + b) * (zi + hz / 2 - lo)))
    return hx, hz, az, ax


def solve_weighted_laplace(boundary: BoxBoundary, b: float, resolution: int, *,
                           method: str = "direct", maxiter: int = 20_000, tol: float = 1e-12
                           ) -> WeightedLaplaceSolution:
    """Solve ``div(z^b grad f) = 0`` in a box with Dirichlet data.

    ``resolution`` is the number of cells per unit length.  The coefficient
    ``z^b`` enters through its exact harmonic mean on vertical segments, so
    the matrix is an M-matrix and the discrete maximum principle holds.
    """
    if not -1 < b < 1:
        raise ValueError(f"b must lie in (-1, 1), got {b}")
    if int(resolution) != resolution or resolution < 2:
        raise ValueError("resolution must be an integer >= 2")
    (x0, x1), (z0, z1) = boundary.x_range, boundary.z_range
    if z0 < 0 or not z1 > z0 or not x1 > x0:
        raise ValueError("invalid box")
    nx = int(round((x1 - x0) * resolution))
    nz = int(round((z1 - z0) * resolution))
    if nx < 2 or nz < 2:
        raise ValueError("box too small for this resolution")
    x = np.linspace(x0, x1, nx + 1)
    z = np.linspace(z0, z1, nz + 1)
    f = np.zeros((nz + 1, nx + 1))
    f[:, 0] = _side(boundary.left, z)
    f[:, -1] = _side(boundary.right, z)
    f[0, :] = _side(boundary.bottom, x)
    f[-1, :] = _side(boundary.top, x)

    hx, hz, az, ax = _weighted_operator(x, z, b)
    mi, mj = nz - 1, nx - 1
    idx = np.arange(mi * mj).reshape(mi, mj)
    wx = (ax / hx**2)[:, None] * np.ones((1, mj))
    wdown = (az[:-1] / hz**2)[:, None] * np.ones((1, mj))
    wup = (az[1:] / hz**2)[:, None] * np.ones((1, mj))
    diag = 2 * wx + wdown + wup
    rows, cols, data = [idx.ravel()], [idx.ravel()], [diag.ravel()]
    rhs = np.zeros((mi, mj))
    # x neighbours
    rows += [idx[:, 1:].ravel(), idx[:, :-1].ravel()]
    cols += [idx[:, :-1].ravel(), idx[:, 1:].ravel()]
    data += [-wx[:, 1:].ravel(), -wx[:, :-1].ravel()]
    rhs[:, 0] += wx[:, 0] * f[1:-1, 0]
    rhs[:, -1] += wx[:, -1] * f[1:-1, -1]
    # z neighbours
    rows += [idx[1:, :].ravel(), idx[:-1, :].ravel()]
    cols += [idx[:-1, :].ravel(), idx[1:, :].ravel()]
    data += [-wdown[1:, :].ravel(), -wup[:-1, :].ravel()]
    rhs[0, :] += wdown[0, :] * f[0, 1:-1]
    rhs[-1, :] += wup[-1, :] * f[-1, 1:-1]
    # symmetric by construction: vertical couplings share the segment coefficient
    A = sparse.csr_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(mi * mj, mi * mj))
    iters = None
    if method == "direct":
        sol = spla.spsolve(A.tocsc(), rhs.ravel())
    elif method == "cg":
        # symmetric Jacobi scaling keeps the system SPD
        dinv = 1.0 / np.sqrt(diag.ravel())
        D = sparse.diags(dinv)
        As = D @ A @ D
        count = [0]

        def cb(_):
            count[0] += 1

        y, info = spla.cg(As, dinv * rhs.ravel(), rtol=tol, maxiter=maxiter, callback=cb)
        if info != 0:
            raise RuntimeError(f"weighted Laplace solve did not converge in {maxiter} iterations")
        sol = dinv * y
        iters = count[0]
    else:
        raise ValueError("method must be 'direct' or 'cg'")
    f[1:-1, 1:-1] = sol.reshape(mi, mj)
    res = A @ sol - rhs.ravel()
    scale = max(np.max(np.abs(rhs)), np.max(np.abs(diag)) * max(np.max(np.abs(f)), 1e-300))
    return WeightedLaplaceSolution(x, z, f, b, float(np.max(np.abs(res)) / scale), iters)


def barrier_f1(b: float, resolution: int = 16, **kw) -> tuple[BarrierReport, WeightedLaplaceSolution]:
    """Box ``[-4, 4] x [0, 4]``: value 2 on the sides and top, 0 at ``z = 0``.
    The margin is ``lambda = (2 - max over [-2, 2] x [0, 2]) / 4``."""
    spec = BoxBoundary((-4.0, 4.0), (0.0, 4.0), left=2.0, right=2.0, bottom=0.0, top=2.0)
    sol = solve_weighted_laplace(spec, b, resolution, **kw)
    zin = sol.z <= 2 + 1e-12
    xin = np.abs(sol.x) <= 2 + 1e-12
    peak = np.max(sol.values[np.ix_(zin, xin)])
    return BarrierReport(b, resolution, lambda_margin=float((2 - peak) / 4), residual=sol.residual), sol


def barrier_f2(b: float, resolution: int = 40, length: float = 8.0,
               fit_window: tuple = (1.0, 4.0), **kw) -> tuple[BarrierReport, WeightedLaplaceSolution]:
    """Strip ``[0, length] x [0, 1]``: value 2 at ``x = 0`` and 0 elsewhere on
    the boundary (the far end truncates the half strip).  The decay rate is
    the slope of ``log max_z |f2|`` over ``fit_window``."""
    spec = BoxBoundary((0.0, length), (0.0, 1.0), left=2.0, right=0.0, bottom=0.0, top=0.0)
    sol = solve_weighted_laplace(spec, b, resolution, **kw)
    prof = np.max(np.abs(sol.values[1:-1, :]), axis=0)
    sel = (sol.x >= fit_window[0]) & (sol.x <= fit_window[1])
    xs, ys = sol.x[sel], np.log(prof[sel])
    slope, icpt = np.polyfit(xs, ys, 1)
    pred = slope * xs + icpt
    r2 = 1 - np.sum((ys - pred) ** 2) / np.sum((ys - ys.mean()) ** 2)
    beta0 = -slope
    inner = sol.x < length - 1e-12
    cbar = float(np.max(np.abs(sol.values[:, inner]) * np.exp(beta0 * sol.x[inner])))
    return BarrierReport(b, resolution, beta0_fit=float(beta0), Cbar_fit=cbar,
                         fit_r2=float(r2), residual=sol.residual), sol


def strip_decay_rate(b: float, cells: int = 2000) -> float:
    """Smallest ``beta`` with ``(z^b g')' + beta^2 z^b g = 0``, ``g(0) = g(1) = 0``.

    Separation of variables in the strip gives ``f2 ~ g(z) e^(-beta x)``;
    this is the finite-volume eigenvalue of the vertical problem.
    """
    if not -1 < b < 1:
        raise ValueError("b must lie in (-1, 1)")
    h = 1.0 / cells
    z = np.linspace(0, 1, cells + 1)
    if b == 0:
        a = np.ones(cells)
    else:
        a = (1 - b) * h / (z[1:] ** (1 - b) - z[:-1] ** (1 - b))
    zi = z[1:-1]
    w = ((zi + h / 2) ** (1 + b) - (zi - h / 2) ** (1 + b)) / ((1 + b) * h)
    d = (a[:-1] + a[1:]) / h**2
    e = -a[1:-1] / h**2
    s = 1 / np.sqrt(w)
    lam = eigh_tridiagonal(d * s * s, e * s[:-1] * s[1:], select="i", select_range=(0, 0),
                           eigvals_only=True)[0]
    return float(np.sqrt(lam))


def strip_series_profile(x, z, terms: int = 2001) -> np.ndarray:
    """Separation-of-variables solution at ``b = 0`` on the half strip:
    ``sum over odd m of 8/(m pi) sin(m pi z) exp(-m pi x)``."""
    x = np.asarray(x, dtype=float)[..., None]
    z = np.asarray(z, dtype=float)[..., None]
    m = np.arange(1, terms + 1, 2)
    return np.sum(8 / (m * np.pi) * np.sin(m * np.pi * z) * np.exp(-m * np.pi * x), axis=-1)
