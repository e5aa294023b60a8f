"""Grid-quadrature information and estimation functionals.

Everything here is computed from gridded densities (no sample-based
estimators): entropy, weighted Fisher-type information, mutual
information, conditional score fields, weighted MMSE, the jump log-ratio
and jump KL terms of the rate identities, and high-order log-density
series terms.

Clamping policy: logarithms and ratios use a floor of 1e-12 times the
field's peak; the probability mass routed through clamped evaluations is
accumulated into each term's diagnostics so identity residuals can be
attributed to tail truncation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d, minimum_filter1d

from .density import DensityField, JointDensity
from .model import ChannelModel, Grid

__all__ = [
    "TermValue",
    "entropy",
    "fisher_type",
    "mutual_information",
    "mutual_fisher",
    "score_field",
    "generalized_mmse",
    "entropy_jump_term",
    "mi_jump_term",
    "log_derivative_term",
    "drift_correction",
    "km_drift_correction",
]

_FLOOR_FRACTION = 1e-12
_CLAMP_FLAG_LEVEL = 1e-6


@dataclass
class TermValue:
    """One named summand of an identity's right-hand side."""

    name: str
    value: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def low_confidence(self) -> bool:
        return self.diagnostics.get("clamp_mass", 0.0) > _CLAMP_FLAG_LEVEL

    def export_row(self) -> str:
        notes = ";".join(
            f"{k}={v:g}" for k, v in sorted(self.diagnostics.items()) if k != "clamp_mass"
        )
        return f"{self.name},{self.value!r},{self.diagnostics.get('clamp_mass', 0.0):g},{notes}"


def _trapz_weights(grid: Grid) -> np.ndarray:
    w = np.full(grid.n, grid.dx)
    w[0] = w[-1] = 0.5 * grid.dx
    return w


def _as_b(b_field, nodes, t=None) -> np.ndarray:
    if np.isscalar(b_field):
        out = np.full(len(nodes), float(b_field))
    elif callable(b_field):
        out = np.asarray(b_field(nodes, t), dtype=float)
    else:
        out = np.asarray(b_field, dtype=float)
        if out.shape != nodes.shape:
            raise ValueError("b_field length does not match the grid")
    if np.any(out < 0):
        raise ValueError("b_field must be non-negative")
    return out


# ---------------------------------------------------------------------------
# Entropy and Fisher-type information


def entropy(p: DensityField) -> float:
    """Differential entropy -integral p log p; exact zeros contribute zero."""
    v = p.values
    w = _trapz_weights(p.grid)
    pos = v > 0.0
    vp = np.maximum(v[pos], 1e-300)
    return float(-np.sum(w[pos] * vp * np.log(vp)))


def fisher_type(p: DensityField, b_field) -> float:
    """Weighted Fisher functional: integral of b * (p')^2 / p.

    The integrand is zeroed where p falls below the density floor; the
    result is non-negative by construction.
    """
    b = _as_b(b_field, p.grid.nodes)
    v = p.values
    floor = _FLOOR_FRACTION * float(v.max())
    dp = np.gradient(v, p.grid.dx)
    mask = v > floor
    integrand = np.zeros_like(v)
    integrand[mask] = b[mask] * dp[mask] ** 2 / v[mask]
    return float(np.sum(_trapz_weights(p.grid) * integrand))


# ---------------------------------------------------------------------------
# Joint-density functionals


def _conditional_columns(joint: JointDensity):
    """p(x0 | xt) columns, their masses, and the excluded-column mask."""
    w0 = _trapz_weights(joint.grid0)
    colmass = w0 @ joint.values
    ok = colmass > 1e-10
    cond = np.zeros_like(joint.values)
    cond[:, ok] = joint.values[:, ok] / colmass[ok]
    return cond, colmass, ok


def _conditional_rows(joint: JointDensity):
    """p(xt | x0) rows, their masses, and the excluded-row mask."""
    wt = _trapz_weights(joint.grid_t)
    rowmass = joint.values @ wt
    ok = rowmass > 1e-12
    cond = np.zeros_like(joint.values)
    cond[ok] = joint.values[ok] / rowmass[ok, None]
    return cond, rowmass, ok


def mutual_information(joint: JointDensity) -> float:
    """MI of the gridded joint against the product of its marginals.

    Small negative quadrature noise (above -1e-6) is clamped to zero; a
    larger negative value signals a broken joint and raises.
    """
    mass = joint.mass
    if abs(mass - 1.0) > 1e-4:
        raise ValueError(f"joint mass {mass:g} deviates from 1 beyond tolerance")
    w0 = _trapz_weights(joint.grid0)
    wt = _trapz_weights(joint.grid_t)
    p0 = joint.values @ wt
    pt = w0 @ joint.values
    j = joint.values
    floor = _FLOOR_FRACTION * float(j.max())
    mask = j > floor
    prod = np.outer(np.maximum(p0, 1e-300), np.maximum(pt, 1e-300))
    integrand = np.zeros_like(j)
    integrand[mask] = j[mask] * (np.log(j[mask]) - np.log(prod[mask]))
    value = float(np.sum(np.outer(w0, wt) * integrand))
    if value < -1e-6:
        raise ValueError(f"mutual information {value:g} below the noise floor; joint is inconsistent")
    return max(value, 0.0)


def mutual_fisher(joint: JointDensity, b_field) -> float:
    """Conditional-minus-marginal gap of the weighted Fisher functional.

    The conditional part averages the per-row Fisher value of p(xt | x0)
    over the initial marginal; linear in a constant scaling of b.
    """
    grid_t = joint.grid_t
    b = _as_b(b_field, grid_t.nodes)
    wt = _trapz_weights(grid_t)
    rows, rowmass, ok = _conditional_rows(joint)
    v = rows[ok]
    floor = _FLOOR_FRACTION * v.max(axis=1, keepdims=True)
    dp = np.gradient(v, grid_t.dx, axis=1)
    mask = v > floor
    integrand = np.where(mask, b[None, :] * dp**2 / np.where(mask, v, 1.0), 0.0)
    per_row = integrand @ wt
    w0 = _trapz_weights(joint.grid0)
    conditional = float(np.sum(w0[ok] * rowmass[ok] * per_row))
    marginal_vals = w0 @ joint.values
    marginal = fisher_type(DensityField(grid_t, marginal_vals, joint.time, normalize=True), b)
    value = conditional - marginal
    if value < -1e-6:
        raise ValueError(f"mutual Fisher value {value:g} below the noise floor")
    return max(value, 0.0)


def score_field(joint: JointDensity) -> np.ndarray:
    """Pointwise conditional score d/dxt log p(xt | x0), zero where masked."""
    rows, _, ok = _conditional_rows(joint)
    out = np.zeros_like(rows)
    if not np.any(ok):
        return out
    v = rows[ok]
    floor = _FLOOR_FRACTION * v.max(axis=1, keepdims=True)
    logv = np.log(np.maximum(v, floor))
    grad = np.gradient(logv, joint.grid_t.dx, axis=1)
    grad[v <= floor] = 0.0
    out[ok] = grad
    return out


def generalized_mmse(joint: JointDensity, b_field, target: np.ndarray) -> float:
    """Weighted minimum mean-square error of estimating ``target`` from xt.

    The optimizer is the conditional mean of the target given xt; the
    returned value is E[b(xt) * (target - E[target | xt])^2] >= 0.
    """
    target = np.asarray(target, dtype=float)
    if target.shape != joint.values.shape:
        raise ValueError("target shape must match the joint")
    if not np.all(np.isfinite(target)):
        raise ValueError("target must be finite on the joint's support")
    b = _as_b(b_field, joint.grid_t.nodes)
    w0 = _trapz_weights(joint.grid0)
    wt = _trapz_weights(joint.grid_t)
    cond, colmass, ok = _conditional_columns(joint)
    if not np.any(ok):
        raise ValueError("every xt column has vanishing support")
    cond_mean = w0 @ (cond * target)
    dev2 = (target - cond_mean[None, :]) ** 2
    inner = w0 @ (joint.values * dev2)  # integral over x0 of joint * dev^2
    value = float(np.sum(wt[ok] * b[ok] * inner[ok]))
    return max(value, 0.0)


# ---------------------------------------------------------------------------
# Jump terms


def _xi_quadrature(kernel, nodes, t, dx):
    """Common jump-size nodes and trapezoid weights covering the support."""
    lo, hi = kernel.support_bounds(nodes, t)
    scale = kernel.max_scale(nodes, t)
    h = min(dx, scale / 8.0) if scale > 0 else dx
    n_xi = int(min(max(math.ceil((hi - lo) / h) + 1, 33), 8193))
    xi = np.linspace(lo, hi, n_xi)
    w = np.full(n_xi, xi[1] - xi[0])
    w[0] = w[-1] = 0.5 * (xi[1] - xi[0])
    return xi, w


def entropy_jump_term(p: DensityField, model: ChannelModel, t: float,
                      max_overflow: float = 1e-3) -> TermValue:
    """Expected jump log-ratio E[lam * log(p(X)/p(X+xi))] under p and the kernel.

    Shifted densities are linearly interpolated on the grid and clamped at
    the density floor inside the log; the clamped and off-grid weight is
    reported in the diagnostics.
    """
    grid = p.grid
    nodes = grid.nodes
    lam = np.asarray(model.jump_rate(nodes, t), dtype=float)
    if not np.any(lam):
        return TermValue("jump_log_ratio", 0.0)
    xi, xw = _xi_quadrature(model.jump_kernel, nodes, t, grid.dx)
    wker = np.asarray(model.jump_kernel.pdf(xi[None, :], nodes[:, None], t), dtype=float)
    v = p.values
    floor = _FLOOR_FRACTION * float(v.max())
    logp = np.log(np.maximum(v, floor))
    targets = nodes[:, None] + xi[None, :]
    shifted = np.interp(targets, nodes, v, left=0.0, right=0.0)
    log_shift = np.log(np.maximum(shifted, floor))
    tw = _trapz_weights(grid)
    outer = tw * v * lam  # weight over x
    pair_w = outer[:, None] * (wker * xw[None, :])
    value = float(np.sum(pair_w * (logp[:, None] - log_shift)))
    total_w = float(np.sum(pair_w))
    off_grid = float(np.sum(pair_w[(targets < grid.x_min) | (targets > grid.x_max)]))
    clamp = float(np.sum(pair_w[shifted <= floor])) + float(np.sum(tw * v * lam * (v <= floor)))
    if total_w > 0 and off_grid > max_overflow * total_w:
        raise ValueError(
            f"kernel support overflows the grid: {off_grid / total_w:.2e} of the jump "
            "weight lands outside; widen the grid"
        )
    rel = off_grid / total_w if total_w > 0 else 0.0
    return TermValue(
        "jump_log_ratio",
        value,
        {"clamp_mass": clamp, "support_overflow": rel},
    )


def mi_jump_term(joint: JointDensity, model: ChannelModel, t: float,
                 max_overflow: float = 1e-3) -> TermValue:
    """Expected jump KL term: E[lam(Xt) * KL(p(x0|Xt) vs p(x0|Xt+xi))].

    Triple quadrature over (x0, xi, xt).  Shifted conditionals interpolate
    between adjacent xt columns (a convex combination of normalized
    conditionals, hence itself normalized); each inner KL is clamped at
    zero with the clipped amount reported.
    """
    grid_t = joint.grid_t
    grid0 = joint.grid0
    nodes_t = grid_t.nodes
    lam = np.asarray(model.jump_rate(nodes_t, t), dtype=float)
    if not np.any(lam):
        return TermValue("jump_kl", 0.0)
    w0 = _trapz_weights(grid0)
    wt = _trapz_weights(grid_t)
    cond, colmass, ok = _conditional_columns(joint)
    pt = colmass  # marginal density of xt (with quadrature weights folded out)
    floor = _FLOOR_FRACTION * float(cond.max())
    log_cond = np.log(np.maximum(cond, floor))
    xi, xw = _xi_quadrature(model.jump_kernel, nodes_t, t, grid_t.dx)
    wker = np.asarray(model.jump_kernel.pdf(xi[None, :], nodes_t[:, None], t), dtype=float)
    base_w = wt * pt * lam  # weight over xt
    relevant = ok & (base_w > 0)
    value = 0.0
    off_grid = 0.0
    kl_clipped = 0.0
    excluded_weight = 0.0
    n = grid_t.n
    dxt = grid_t.dx
    # entropy-like part of each KL: sum_j w0 C log C, reused for every shift
    self_term = w0 @ (cond * log_cond)
    for m in range(len(xi)):
        shift = xi[m] / dxt
        i0 = math.floor(shift)
        frac = shift - i0
        k_lo = max(0, -i0, -(i0 + 1))
        k_hi = min(n, n - i0, n - (i0 + 1))
        w_here = base_w * wker[:, m] * xw[m]
        if k_lo >= k_hi:
            off_grid += float(np.sum(w_here[relevant]))
            continue
        ks = np.arange(k_lo, k_hi)
        keep = relevant[ks] & ok[ks + i0] & ok[np.minimum(ks + i0 + 1, n - 1)]
        out_mask = np.ones(n, dtype=bool)
        out_mask[ks[keep]] = False
        off_grid += float(np.sum(w_here[relevant & out_mask]))
        ks = ks[keep]
        if len(ks) == 0:
            continue
        shifted = (1.0 - frac) * cond[:, ks + i0] + frac * cond[:, ks + i0 + 1]
        cross = w0 @ (cond[:, ks] * np.log(np.maximum(shifted, floor)))
        kl = self_term[ks] - cross
        neg = kl < 0
        kl_clipped += float(np.sum(-kl[neg] * w_here[ks][neg]))
        kl[neg] = 0.0
        value += float(np.sum(w_here[ks] * kl))
    total_w = float(np.sum(base_w[ok]))
    excluded_weight = float(np.sum(base_w[~ok]))
    if total_w > 0 and off_grid > max_overflow * total_w:
        raise ValueError(
            f"kernel support overflows the grid for the joint: {off_grid / total_w:.2e} "
            "of the jump weight lands outside"
        )
    return TermValue(
        "jump_kl",
        value,
        {
            "clamp_mass": kl_clipped,
            "support_overflow": off_grid / total_w if total_w else 0.0,
            "excluded_column_weight": excluded_weight,
        },
    )


# ---------------------------------------------------------------------------
# High-order log-density series terms


def _fornberg_weights(offsets: np.ndarray, m: int) -> np.ndarray:
    """Finite-difference weights for the m-th derivative at 0 on ``offsets``."""
    x = np.asarray(offsets, dtype=float)
    n = len(x)
    c = np.zeros((n, m + 1))
    c[0, 0] = 1.0
    c1 = 1.0
    c4 = x[0]
    for i in range(1, n):
        mn = min(i, m)
        c2 = 1.0
        c5 = c4
        c4 = x[i]
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, m]


def _central_derivative(vals: np.ndarray, order: int, dx: float, axis: int = -1) -> np.ndarray:
    """Minimal-width central-stencil n-th derivative along an axis."""
    half = (order + 1) // 2
    offsets = np.arange(-half, half + 1)
    w = _fornberg_weights(offsets, order) / dx**order
    return correlate1d(vals, w, axis=axis, mode="nearest")


def _valid_window(mask: np.ndarray, order: int, axis: int = -1) -> np.ndarray:
    """True where the full derivative stencil stays inside the mask."""
    half = (order + 1) // 2
    ok = minimum_filter1d(mask.astype(np.uint8), size=2 * half + 1, axis=axis, mode="constant")
    return ok.astype(bool)


def log_derivative_term(field, model: ChannelModel, n: int, t: float, mode: str) -> TermValue:
    """Series term E[B_n * d^n log p / dx^n] / n! of the rate expansions.

    mode "entropy": p is the output density and the expectation runs over
    it.  mode "mutual": p is the conditional p(x0 | xt) differentiated in
    xt, with the expectation over the joint.  Returned with positive sign;
    callers apply the identity's sign convention.
    """
    if n < 3:
        raise ValueError("series terms start at order 3")
    if n > 8:
        raise ValueError("stencil overflow: orders above 8 unsupported")
    if mode == "entropy":
        p: DensityField = field
        grid = p.grid
        if grid.n < 4 * n:
            raise ValueError("grid too small for the stencil")
        bn = np.asarray(model.km_coefficient(n, grid.nodes, t), dtype=float)
        tw = _trapz_weights(grid)
        if not np.any(bn):
            return TermValue(f"series_n{n}", 0.0)
        v = p.values
        floor = _FLOOR_FRACTION * float(v.max())
        mask = v > floor
        g = _central_derivative(np.log(np.maximum(v, floor)), n, grid.dx)
        valid = _valid_window(mask, n)
        value = float(np.sum(tw[valid] * v[valid] * bn[valid] * g[valid]) / math.factorial(n))
        clamp = float(np.sum(tw[~valid] * v[~valid]))
        return TermValue(f"series_n{n}", value, {"clamp_mass": clamp})
    if mode != "mutual":
        raise ValueError("mode must be 'entropy' or 'mutual'")
    joint: JointDensity = field
    grid_t = joint.grid_t
    if grid_t.n < 4 * n:
        raise ValueError("grid too small for the stencil")
    bn = np.asarray(model.km_coefficient(n, grid_t.nodes, t), dtype=float)
    if not np.any(bn):
        return TermValue(f"series_n{n}", 0.0)
    cond, colmass, ok = _conditional_columns(joint)
    floor = _FLOOR_FRACTION * float(cond.max())
    mask = (cond > floor) & ok[None, :]
    g = _central_derivative(np.log(np.maximum(cond, floor)), n, grid_t.dx, axis=1)
    valid = _valid_window(mask, n, axis=1)
    w2 = np.outer(_trapz_weights(joint.grid0), _trapz_weights(grid_t))
    integrand = np.where(valid, joint.values * bn[None, :] * g, 0.0)
    value = float(np.sum(w2 * integrand) / math.factorial(n))
    clamp = float(np.sum(w2[~valid] * joint.values[~valid]))
    return TermValue(f"series_n{n}", value, {"clamp_mass": clamp})


# ---------------------------------------------------------------------------
# Drift/diffusion derivative corrections


def _expected_correction(p: DensityField, f_vals: np.ndarray, g_vals: np.ndarray,
                         name: str) -> TermValue:
    """E[d f/dx - (1/2) d^2 g/dx^2] under p, by central differences."""
    grid = p.grid
    dx = grid.dx
    df = np.gradient(f_vals, dx)
    d2g = np.empty_like(g_vals)
    d2g[1:-1] = (g_vals[2:] - 2.0 * g_vals[1:-1] + g_vals[:-2]) / dx**2
    d2g[0] = d2g[1]
    d2g[-1] = d2g[-2]
    tw = _trapz_weights(grid)
    value = float(np.sum(tw * p.values * (df - 0.5 * d2g)))
    return TermValue(name, value)


def drift_correction(p: DensityField, model: ChannelModel, t: float) -> TermValue:
    """E[da/dx - (1/2) d^2 b/dx^2] under p."""
    nodes = p.grid.nodes
    a = np.asarray(model.drift(nodes, t), dtype=float)
    b = np.asarray(model.diffusion(nodes, t), dtype=float)
    return _expected_correction(p, a, b, "drift_correction")


def km_drift_correction(p: DensityField, model: ChannelModel, t: float) -> TermValue:
    """E[dB_1/dx - (1/2) d^2 B_2/dx^2] under p.

    Same code path as :func:`drift_correction`, so the two agree bitwise
    when the jump rate vanishes (B_1 = a, B_2 = b).
    """
    nodes = p.grid.nodes
    b1 = np.asarray(model.km_coefficient(1, nodes, t), dtype=float)
    b2 = np.asarray(model.km_coefficient(2, nodes, t), dtype=float)
    return _expected_correction(p, b1, b2, "km_drift_correction")
