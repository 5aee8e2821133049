"""Named checks producing JSON-lines records.

A check is a function ``(ctx, params) -> list[dict]``.  Each record holds
the check name, the instance parameters, one ``quantity``/``value`` pair
and the tolerance it is judged against.  Records carry no timing
information, so identical inputs give identical records.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import degiorgi as dg
from . import diagnostics as dx
from . import extension as ex
from .solver import (SimConfig, TrajectoryStore, energy_balance_residual, pde_residual,
                     rescale_solution, rescaled_config)
from .spectral import (PhysicalField, forward_transform, fractional_laplacian, inverse_transform,
                       l2_norm, riesz_velocity, sobolev_seminorm, sup_norm)
from .tolerances import judge, lookup


@dataclass
class Context:
    """Inputs shared by the checks.  ``traj`` is ``None`` for single-snapshot use."""

    cfg: SimConfig
    theta: PhysicalField
    traj: TrajectoryStore | None = None
    ext_cfg: ex.ExtensionConfig | None = None
    seed: int = 0
    time: float = 0.0
    cache: dict = field(default_factory=dict)

    @property
    def grid(self):
        return self.cfg.grid

    def need_traj(self, name):
        if self.traj is None:
            raise ValueError(f"check {name!r} needs a trajectory")
        return self.traj

    def extension_config(self):
        if self.ext_cfg is not None:
            return self.ext_cfg
        return ex.ExtensionConfig(self.cfg.alpha)

    def snapshot(self, t=None):
        """Spectral snapshot at ``t`` (default: the final/only one)."""
        if self.traj is None:
            return forward_transform(self.theta)
        if t is None:
            return self.traj[len(self.traj) - 1][1]
        return self.traj[self.traj.index_of(float(t))][1]


def record(ctx: Context, check: str, quantity: str, value, params: dict, **extra) -> dict:
    tol = lookup(check, quantity)
    out = {
        "check": check,
        "quantity": quantity,
        "value": None if value is None else float(value),
        "params": params,
        "tolerance": tol.as_dict(),
        "grid": {"N": ctx.grid.n, "L": ctx.grid.length},
        "seed": ctx.seed,
    }
    if extra:
        out["extra"] = extra
    out["status"] = "ok"
    out["pass"] = judge(out)
    return out


def skipped(ctx: Context, check: str, reason: str, params: dict) -> dict:
    return {"check": check, "quantity": None, "value": None, "params": params,
            "grid": {"N": ctx.grid.n, "L": ctx.grid.length}, "seed": ctx.seed,
            "status": "skipped", "reason": reason, "pass": True}


# --- solver-level checks ------------------------------------------------------------

def check_energy_balance(ctx, params):
    traj = ctx.need_traj("energy_balance")
    res = energy_balance_residual(traj, ctx.cfg, per_unit_time=True)
    return [record(ctx, "energy_balance", "residual_per_unit_time", float(np.max(res)), params)]


def check_l2_monotone(ctx, params):
    traj = ctx.need_traj("l2_monotone")
    norms = np.array([l2_norm(s) for _, s in traj])
    inc = float(np.max(np.diff(norms), initial=0.0)) / max(norms[0], 1e-300)
    return [record(ctx, "l2_monotone", "max_increase", inc, params)]


def check_max_principle(ctx, params):
    traj = ctx.need_traj("max_principle")
    sups = np.array([sup_norm(s) for _, s in traj])
    inc = float(np.max(np.diff(sups), initial=0.0)) / max(sups[0], 1e-300)
    return [record(ctx, "max_principle", "max_increase", inc, params)]


def check_mean_conservation(ctx, params):
    traj = ctx.need_traj("mean_conservation")
    means = np.array([s.coefficients[0, 0].real for _, s in traj])
    return [record(ctx, "mean_conservation", "drift", float(np.max(np.abs(means - means[0]))), params)]


def check_linf_decay(ctx, params):
    traj = ctx.need_traj("linf_decay")
    lo = float(params.get("t_min", 0.01))
    rep = dg.linf_decay_check(traj, ctx.cfg, window=(lo, traj.times[-1]))
    return [record(ctx, "linf_decay", "empirical_C", rep.empirical_C, params)]


def check_scaling(ctx, params):
    traj = ctx.need_traj("scaling")
    mu = int(params.get("mu", 2))
    cfg = ctx.cfg
    base = pde_residual(traj, cfg)
    resc = rescale_solution(traj, mu, cfg)
    r2 = pde_residual(resc, rescaled_config(cfg, mu))
    # compare at matching interior snapshots; both are absolute L2 residuals
    ratio = float(np.max(r2) / max(np.max(base), 1e-300))
    return [record(ctx, "scaling", "residual_ratio", ratio, params,
                   original=float(np.max(base)), rescaled=float(np.max(r2)))]


# --- De Giorgi checks -----------------------------------------------------------------

def check_level_set_energy(ctx, params):
    traj = ctx.need_traj("level_set_energy")
    fracs = params.get("fractions", (0.0, 0.25, 0.5, 0.75))
    th0 = inverse_transform(traj[0][1]).values
    n0 = l2_norm(traj[0][1]) ** 2
    t1 = float(params.get("t1", traj.times[0]))
    t2 = float(params.get("t2", traj.times[-1]))
    out = []
    for f in fracs:
        lam = float(f) * float(th0.max())
        s = dg.level_set_energy_check(traj, lam, t1, t2, ctx.cfg)
        out.append(record(ctx, "level_set_energy", "slack", s / n0,
                          dict(params, fraction=float(f), level=lam, t1=t1, t2=t2)))
    return out


def check_level_energy_sequence(ctx, params):
    traj = ctx.need_traj("level_energy_sequence")
    t0 = float(params.get("t0", traj.times[-1]))
    th0 = inverse_transform(traj[0][1]).values
    M = float(params.get("M", np.max(np.abs(th0))))
    k_max = int(params.get("k_max", 6))
    fam = dg.LevelSetFamily(M, t0, k_max=k_max, alpha=ctx.cfg.alpha)
    rep = dg.level_energy_sequence(traj, fam, ctx.cfg)
    inc = float(np.max(np.diff(rep.U), initial=0.0)) / max(rep.U[0], 1e-300)
    p = dict(params, t0=t0, M=M, k_max=k_max)
    return [record(ctx, "level_energy_sequence", "max_increase", inc, p, U=list(rep.U), V=list(rep.V)),
            record(ctx, "level_energy_sequence", "M_star_margin", rep.M_star - rep.sup_at_t0, p,
                   M_star=rep.M_star, sup_at_t0=rep.sup_at_t0)]


def check_cordoba(ctx, params):
    alpha = float(params.get("alpha", ctx.cfg.alpha))
    times = params.get("times")
    snaps = [ctx.snapshot(t) for t in times] if times else [ctx.snapshot()]
    out = []
    for snap in snaps:
        th = inverse_transform(snap)
        eps = dg.mollification_width(th)
        lam = float(params.get("level_fraction", 0.5)) * float(th.values.max())
        for f in (dg.square(), dg.smoothed_positive_part(lam, eps)):
            rep = dg.cordoba_check(snap, f, alpha)
            out.append(record(ctx, "cordoba", "min_slack", rep.min_slack / max(rep.scale, 1e-300),
                              dict(params, function=f.name, alpha=alpha), scale=rep.scale))
    return out


def check_interpolation(ctx, params):
    if ctx.traj is None:
        value = dg.interpolation_ratio(ctx.theta, ctx.cfg.alpha)
    else:
        th0 = inverse_transform(ctx.traj[0][1]).values
        fam = dg.LevelSetFamily(float(np.max(np.abs(th0))), ctx.traj.times[-1], alpha=ctx.cfg.alpha)
        value = dg.interpolation_check(ctx.traj, fam, ctx.cfg)
    return [record(ctx, "interpolation", "ratio", value, params)]


def check_local_energy(ctx, params):
    traj = ctx.need_traj("local_energy")
    if ctx.cfg.alpha >= 1:
        return [skipped(ctx, "local_energy", "extension needs alpha < 1", params)]
    L = ctx.grid.length
    r = float(params.get("half_width", L / 4))
    box = dg.BoxSpec((L / 2, L / 2), r)
    t1 = float(params.get("t1", traj.times[0]))
    t2 = float(params.get("t2", traj.times[-1]))
    rep = dg.local_energy_check(traj, None, box, t1, t2, ctx.cfg, ctx.extension_config(),
                                holder_C2=False)
    scale = max(rep.terms["mass_t1"], 1e-300)
    p = dict(params, half_width=r, t1=t1, t2=t2)
    return [record(ctx, "local_energy", "identity_residual", abs(rep.identity_residual) / scale, p),
            record(ctx, "local_energy", "fitted_factor", rep.fitted_factor, p, C1=rep.C1,
                   slack=rep.slack)]


def check_isoperimetric(ctx, params):
    cases = int(params.get("cases", 50))
    bs = params.get("b_values", (0.0, 0.3, 0.5))
    radii = params.get("radii", (1.0, 2.0, 4.0))
    res = int(params.get("resolution", 128))
    out = []
    for b in bs:
        literal = np.zeros((cases, len(radii)))
        free = np.zeros((cases, len(radii)))
        for c in range(cases):
            F = dg.random_smooth_profile(ctx.seed * 100003 + c)
            for j, r in enumerate(radii):
                rep = dg.isoperimetric_check(dg.scaled(F, r), dg.BoxSpec((0.0,), r), float(b),
                                             resolution=res)
                literal[c, j] = rep.implied_constant
                free[c, j] = rep.scale_free_constant
        p = dict(params, b=float(b), cases=cases, resolution=res)

        def spread(a):
            m = a.max(axis=0)
            return float((m.max() - m.min()) / m.max()) if m.max() > 0 else 0.0

        out.append(record(ctx, "isoperimetric", "max_constant", float(literal.max()), p))
        out.append(record(ctx, "isoperimetric", "r_variation", spread(literal), p,
                          max_by_r=list(literal.max(axis=0))))
        out.append(record(ctx, "isoperimetric", "scale_free_variation", spread(free), p,
                          max_by_r=list(free.max(axis=0))))
    return out


def check_change_of_variables(ctx, params):
    cases = int(params.get("cases", 10))
    b = float(params.get("b", 0.5))
    res = int(params.get("resolution", 256))
    worst = 0.0
    for c in range(cases):
        F = dg.random_smooth_profile(ctx.seed * 100003 + c)
        worst = max(worst, dg.change_of_variables_check(F, dg.BoxSpec((0.0,), 1.0), b, res))
    return [record(ctx, "change_of_variables", "mismatch", worst, dict(params, b=b, cases=cases,
                                                                       resolution=res))]


# --- extension checks -------------------------------------------------------------------

def _needs_extension(ctx, name, params):
    if ctx.cfg.alpha >= 1:
        return skipped(ctx, name, "extension needs alpha < 1", params)
    return None


def check_normal_derivative(ctx, params):
    if (s := _needs_extension(ctx, "normal_derivative", params)) is not None:
        return [s]
    snap = ctx.snapshot(params.get("time"))
    ecfg = ctx.extension_config()
    ext = ex.extend(snap, ecfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ex.ExtrapolationWarning)
        lim = forward_transform(ex.normal_derivative_limit(ext, ecfg))
    ref = fractional_laplacian(snap, ecfg.alpha)
    g = snap.grid
    band = g.dealias_mask & ~g.nyquist & (g.kmag > 0)
    err = np.abs(lim.coefficients - ref.coefficients)[band]
    scale = np.abs(ref.coefficients)[band]
    keep = scale > 1e-12 * max(scale.max(), 1e-300)
    rel = float(np.max(err[keep] / scale[keep])) if np.any(keep) else 0.0
    return [record(ctx, "normal_derivative", "relative_error", rel, params)]


def check_extension_agreement(ctx, params):
    alphas = params.get("alphas", (0.2, 0.35, 0.5, 0.75))
    s = np.geomspace(1e-3, 30.0, 40)
    worst = 0.0
    for a in alphas:
        v1, _ = ex.extension_multiplier(s, float(a), "bessel_multiplier")
        v2, _ = ex.extension_multiplier(s, float(a), "kernel_quadrature")
        worst = max(worst, float(np.max(np.abs(v1 - v2))))
    return [record(ctx, "extension_agreement", "max_difference", worst,
                   dict(params, alphas=[float(a) for a in alphas]))]


def check_dirichlet_energy(ctx, params):
    if (s := _needs_extension(ctx, "dirichlet_energy", params)) is not None:
        return [s]
    snap = ctx.snapshot(params.get("time"))
    ecfg = ctx.extension_config()
    ext = ex.extend(snap, ecfg)
    E = ex.weighted_dirichlet_energy(ext)
    d = ex.calibration_closed_form(ecfg.alpha)
    ref = d * sobolev_seminorm(snap, ecfg.alpha) ** 2
    rel = abs(E - ref) / ref if ref > 0 else abs(E)
    return [record(ctx, "dirichlet_energy", "relative_error", rel, params)]


def check_barrier_f1(ctx, params):
    b = float(params.get("b", 1 - 2 * min(ctx.cfg.alpha, 0.99)))
    res = int(params.get("resolution", 16))
    rep, _ = ex.barrier_f1(b, res)
    return [record(ctx, "barrier_f1", "lambda_margin", rep.lambda_margin, dict(params, b=b, resolution=res))]


def check_barrier_f2(ctx, params):
    b = float(params.get("b", 0.0))
    res = int(params.get("resolution", 40))
    rep, _ = ex.barrier_f2(b, res)
    target = math.pi if b == 0 else ex.strip_decay_rate(b)
    return [record(ctx, "barrier_f2", "beta0_relative_error", abs(rep.beta0_fit - target) / target,
                   dict(params, b=b, resolution=res), beta0=rep.beta0_fit, reference=target)]


# --- regularity diagnostics ---------------------------------------------------------------

def _center(ctx, params):
    c = params.get("center")
    if c is None:
        return (ctx.grid.length / 2, ctx.grid.length / 2)
    return tuple(float(v) for v in c)


def check_holder(ctx, params):
    snap = ctx.snapshot(params.get("time"))
    mu = float(params.get("mu", 0.5))
    radius = float(params.get("radius", snap.grid.length / 4))
    K = int(params.get("K", dx.max_scales(snap.grid, radius, mu)))
    center = _center(ctx, params)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", dx.ResolutionWarning)
        prof = dx.oscillation_profile(snap, center, mu, K, radius=radius)
    est = dx.holder_fit(prof)
    p = dict(params, mu=mu, radius=radius, K=K, center=list(center))
    ctx.cache["oscillation_profile"] = prof
    return [record(ctx, "holder", "delta", est.delta, p, osc=list(prof.osc), scales=list(prof.scales)),
            record(ctx, "holder", "fit_r2", est.fit_r2, p)]


def check_zoom(ctx, params):
    traj = ctx.need_traj("zoom")
    t = params.get("time")
    t = traj.times[-1] if t is None else float(t)
    mu = float(params.get("mu", 0.25))
    K = int(params.get("K", 4))
    center = _center(ctx, params)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", dx.GuardWarning)
        seq = dx.zoom_sequence(traj, None, center, mu, K, ctx.cfg, time=t)
    c = seq.contractions
    n = int(np.count_nonzero(np.asarray(c)[1:] < 1)) if len(c) > 1 else 0
    return [record(ctx, "zoom", "contracting_levels", n, dict(params, mu=mu, K=K, time=t, center=list(center)),
                   contractions=list(c), guard=seq.guard)]


def check_velocity_holder(ctx, params):
    snap = ctx.snapshot(params.get("time"))
    u = riesz_velocity(snap, ctx.cfg.velocity_multipliers())
    expo = float(params.get("exponent", 1 - 2 * ctx.cfg.alpha if ctx.cfg.alpha < 0.5 else 1.0))
    rep = dx.velocity_holder_norm(u, expo, seed=ctx.seed)
    return [record(ctx, "velocity_holder", "seminorm", rep.holder_seminorm, dict(params, exponent=expo),
                   sup_norm=rep.sup_norm)]


REGISTRY = {
    "energy_balance": check_energy_balance,
    "l2_monotone": check_l2_monotone,
    "max_principle": check_max_principle,
    "mean_conservation": check_mean_conservation,
    "linf_decay": check_linf_decay,
    "scaling": check_scaling,
    "level_set_energy": check_level_set_energy,
    "level_energy_sequence": check_level_energy_sequence,
    "cordoba": check_cordoba,
    "interpolation": check_interpolation,
    "local_energy": check_local_energy,
    "isoperimetric": check_isoperimetric,
    "change_of_variables": check_change_of_variables,
    "normal_derivative": check_normal_derivative,
    "extension_agreement": check_extension_agreement,
    "dirichlet_energy": check_dirichlet_energy,
    "barrier_f1": check_barrier_f1,
    "barrier_f2": check_barrier_f2,
    "holder": check_holder,
    "zoom": check_zoom,
    "velocity_holder": check_velocity_holder,
}

# checks that work from a single snapshot (``diagnose``)
SNAPSHOT_CHECKS = ("cordoba", "interpolation", "normal_derivative", "dirichlet_energy", "holder",
                   "velocity_holder", "extension_agreement", "barrier_f1", "barrier_f2",
                   "isoperimetric", "change_of_variables")


def run_check(name: str, ctx: Context, params: dict | None = None) -> list[dict]:
    if name not in REGISTRY:
        raise KeyError(f"unknown check {name!r}; known: {', '.join(sorted(REGISTRY))}")
    return REGISTRY[name](ctx, dict(params or {}))
