"""Deterministic evolution of probability densities on a grid.

The forward equation combines a drift-diffusion part (discretized with a
Chang-Cooper flux: central where the cell Peclet number is small, smoothly
upwinded where it is large, which keeps the update positivity-preserving
and exactly conservative under zero-flux boundaries) and a jump part
(gain/loss integral discretized on grid-aligned offsets whose weights are
shared between gain and loss, so the discrete jump operator conserves mass
to roundoff by construction).

Time stepping is Strang splitting: a Crank-Nicolson drift-diffusion
half-step, an explicit Heun jump step, and a second Crank-Nicolson
half-step.  Crank-Nicolson half-steps are internally subdivided so the
explicit factor stays entrywise non-negative, which keeps sharp initial
data (mollified point masses) free of oscillation.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import quad_vec
from scipy.linalg import solve_banded

from .model import ChannelModel, Grid, ModelError

__all__ = [
    "DensityField",
    "JointDensity",
    "SolverDiagnostics",
    "evolve_density",
    "evolve_density_path",
    "evolve_joint",
    "evolve_joint_path",
    "additive_closed_form",
]

_MAX_JUMP_CFL = 0.1  # explicit jump step requires lam*dt below this
_CN_SAFETY = 0.9  # fraction of the positivity bound used per CN substep


@dataclass
class SolverDiagnostics:
    """Per-run solver quality bookkeeping."""

    n_steps: int = 0
    n_diffusion_solves: int = 0
    n_jump_applications: int = 0
    max_mass_drift: float = 0.0  # max per-step |pre-renormalization mass - 1|
    max_step_clipped: float = 0.0  # max negative mass clipped in one step
    total_clipped: float = 0.0
    min_value_seen: float = 0.0  # most negative solver output before clipping
    leaked_mass: float = 0.0  # jump mass redeposited from off-grid targets
    mollifier_sigma: Optional[float] = None
    mollifier_t_offset: Optional[float] = None
    notes: list = field(default_factory=list)


class DensityField:
    """Non-negative density values on a grid at a fixed time."""

    __slots__ = ("grid", "values", "time", "mass", "diagnostics")

    def __init__(self, grid: Grid, values, time: float, normalize: bool = True,
                 diagnostics: Optional[SolverDiagnostics] = None):
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.n,):
            raise ValueError(f"values shape {values.shape} does not match grid n={grid.n}")
        if not np.all(np.isfinite(values)):
            raise ValueError("density contains non-finite entries")
        lo = float(values.min(initial=0.0))
        if lo < -1e-9 * max(1.0, float(np.abs(values).max())):
            raise ValueError(f"density has significantly negative entries (min {lo:g})")
        values = np.clip(values, 0.0, None)
        mass = float(np.trapezoid(values, dx=grid.dx))
        if normalize:
            if mass <= 0 or not np.isfinite(mass):
                raise ValueError("density is not normalizable")
            values = values / mass
            mass = 1.0
        self.grid = grid
        self.values = values
        self.time = float(time)
        self.mass = mass
        self.diagnostics = diagnostics

    @classmethod
    def gaussian(cls, grid: Grid, mean: float, std: float, time: float = 0.0) -> "DensityField":
        vals = np.exp(-0.5 * ((grid.nodes - mean) / std) ** 2) / (std * math.sqrt(2 * math.pi))
        return cls(grid, vals, time)

    @classmethod
    def from_initial_law(cls, model: ChannelModel, grid: Grid, t0: float = 0.0,
                         mollify_std: Optional[float] = None) -> "DensityField":
        vals = model.initial_law.density_values(grid, t0, mollify_std=mollify_std)
        return cls(grid, vals, t0)

    def interp(self, x) -> np.ndarray:
        """Linear interpolation, zero outside the grid."""
        return np.interp(x, self.grid.nodes, self.values, left=0.0, right=0.0)

    def l1_distance(self, other: "DensityField") -> float:
        if other.grid.n != self.grid.n or other.grid.dx != self.grid.dx:
            raise ValueError("grids differ")
        return float(np.trapezoid(np.abs(self.values - other.values), dx=self.grid.dx))

    def to_csv(self, fh) -> None:
        close = isinstance(fh, str)
        if close:
            fh = open(fh, "w", newline="")
        try:
            fh.write("x,p\n")
            for x, v in zip(self.grid.nodes, self.values):
                fh.write(f"{float(x)!r},{float(v)!r}\n")
        finally:
            if close:
                fh.close()


class JointDensity:
    """Joint density of (X_t0, X_t) on a node-product grid.

    Row j holds p(x0_j) * p_cond(x_t | x0_j); rows whose initial weight is
    numerically zero are excluded from evolution and flagged in row_mask.
    """

    __slots__ = ("grid0", "grid_t", "values", "time", "row_mask", "diagnostics")

    def __init__(self, grid0: Grid, grid_t: Grid, values, time: float,
                 row_mask: Optional[np.ndarray] = None,
                 diagnostics: Optional[SolverDiagnostics] = None):
        values = np.asarray(values, dtype=float)
        if values.shape != (grid0.n, grid_t.n):
            raise ValueError("joint values shape does not match grids")
        if not np.all(np.isfinite(values)):
            raise ValueError("joint density contains non-finite entries")
        values = np.clip(values, 0.0, None)
        self.grid0 = grid0
        self.grid_t = grid_t
        self.values = values
        self.time = float(time)
        self.row_mask = np.ones(grid0.n, dtype=bool) if row_mask is None else row_mask
        self.diagnostics = diagnostics

    @property
    def mass(self) -> float:
        col = np.trapezoid(self.values, dx=self.grid_t.dx, axis=1)
        return float(np.trapezoid(col, dx=self.grid0.dx))

    def marginal0(self) -> DensityField:
        vals = np.trapezoid(self.values, dx=self.grid_t.dx, axis=1)
        return DensityField(self.grid0, vals, self.time, normalize=False)

    def marginal_t(self) -> DensityField:
        vals = np.trapezoid(self.values, dx=self.grid0.dx, axis=0)
        return DensityField(self.grid_t, vals, self.time, normalize=False)

    def to_csv(self, fh) -> None:
        close = isinstance(fh, str)
        if close:
            fh = open(fh, "w", newline="")
        try:
            fh.write("x0,xt,p\n")
            x0s = self.grid0.nodes
            xts = self.grid_t.nodes
            for j in range(self.grid0.n):
                row = self.values[j]
                for k in range(self.grid_t.n):
                    fh.write(f"{float(x0s[j])!r},{float(xts[k])!r},{float(row[k])!r}\n")
        finally:
            if close:
                fh.close()


# ---------------------------------------------------------------------------
# Drift-diffusion operator (Chang-Cooper flux, tridiagonal generator)


def _chang_cooper_delta(w: np.ndarray) -> np.ndarray:
    """Interpolation weight delta(w) = 1/w - 1/(e^w - 1), delta(0) = 1/2."""
    out = np.empty_like(w)
    small = np.abs(w) < 1e-8
    ws = w[~small]
    out[~small] = 1.0 / ws - 1.0 / np.expm1(ws)
    out[small] = 0.5 - w[small] / 12.0
    return out


def _build_generator(model: ChannelModel, grid: Grid, t: float):
    """Tridiagonal (lower, diag, upper) of the drift-diffusion generator."""
    nodes = grid.nodes
    dx = grid.dx
    faces = grid.faces
    a_f = np.asarray(model.drift(faces, t), dtype=float)
    b_f = np.asarray(model.diffusion(faces, t), dtype=float)
    b_n = np.asarray(model.diffusion(nodes, t), dtype=float)
    if np.any(b_f < 0) or np.any(b_n < 0):
        raise ModelError([f"diffusion negative at t={t}"])
    u_f = 0.5 * (b_n[1:] - b_n[:-1]) / dx - a_f
    d_f = 0.5 * b_f
    delta = np.empty_like(u_f)
    pos = d_f > 0.0
    delta[pos] = _chang_cooper_delta(u_f[pos] * dx / d_f[pos])
    delta[~pos] = np.where(u_f[~pos] > 0, 0.0, np.where(u_f[~pos] < 0, 1.0, 0.5))
    c_left = u_f * delta - d_f / dx  # coefficient of the left node in the face flux
    c_right = u_f * (1.0 - delta) + d_f / dx
    n = grid.n
    diag = np.zeros(n)
    diag[:-1] += c_left / dx
    diag[1:] -= c_right / dx
    lower = -c_left / dx
    upper = c_right / dx
    return lower, diag, upper


def _apply_generator(bands, p):
    """L @ p for vector (n,) or column-stacked (n, m) states."""
    lower, diag, upper = bands
    if p.ndim == 1:
        out = diag * p
        out[1:] += lower * p[:-1]
        out[:-1] += upper * p[1:]
    else:
        out = diag[:, None] * p
        out[1:] += lower[:, None] * p[:-1]
        out[:-1] += upper[:, None] * p[1:]
    return out


def _cn_substeps(bands, h: float) -> int:
    peak = float(np.max(-bands[1], initial=0.0))
    if peak <= 0.0:
        return 1
    return max(1, math.ceil(h * peak / (2.0 * _CN_SAFETY)))


def _cn_step(bands, p: np.ndarray, h: float) -> np.ndarray:
    """One Crank-Nicolson step of size h; p is (n,) or (n, m) columns."""
    lower, diag, upper = bands
    n = len(diag)
    ab = np.zeros((3, n))
    ab[0, 1:] = -0.5 * h * upper
    ab[1, :] = 1.0 - 0.5 * h * diag
    ab[2, :-1] = -0.5 * h * lower
    rhs = p + 0.5 * h * _apply_generator(bands, p)
    return solve_banded((1, 1), ab, rhs, overwrite_ab=True, overwrite_b=True)


# ---------------------------------------------------------------------------
# Jump operator (master-equation gain/loss on grid-aligned offsets)


class _JumpOperator:
    """Discrete gain/loss action of the jump part at a fixed time.

    redistribution[i, j] is the probability that a jump from node j lands in
    node i; columns sum to exactly 1 (off-grid mass is redeposited
    proportionally and accounted in leak_fraction).
    """

    def __init__(self, model: ChannelModel, grid: Grid, t: float):
        nodes = grid.nodes
        dx = grid.dx
        n = grid.n
        self.lam = np.asarray(model.jump_rate(nodes, t), dtype=float)
        if np.any(self.lam < 0):
            raise ModelError([f"jump rate negative at t={t}"])
        kernel = model.jump_kernel
        slo, shi = kernel.support_bounds(nodes, t)
        klo = math.floor(slo / dx)
        khi = math.ceil(shi / dx)
        redist = np.zeros((n, n))
        support_total = np.zeros(n)
        for k in range(klo, khi + 1):
            w = np.asarray(kernel.pdf(k * dx, nodes, t), dtype=float) * dx
            support_total += w
            j_lo = max(0, -k)
            j_hi = min(n, n - k)
            if j_lo < j_hi:
                idx = np.arange(j_lo, j_hi)
                redist[idx + k, idx] += w[j_lo:j_hi]
        # kernels narrower than the grid spacing are invisible to the node
        # sampling; deposit their mass on the two nodes bracketing the
        # kernel mean instead, preserving the jump's mean displacement
        narrow = support_total < 0.5
        if np.any(narrow):
            means = np.asarray(kernel.moment(1, nodes, t), dtype=float)
            means = np.broadcast_to(means, (n,))
            for j in np.nonzero(narrow)[0]:
                pos = (nodes[j] + means[j] - grid.x_min) / dx
                i0 = math.floor(pos)
                frac = pos - i0
                redist[:, j] = 0.0
                for i, wgt in ((i0, 1.0 - frac), (i0 + 1, frac)):
                    if 0 <= i < n:
                        redist[i, j] += wgt
            support_total = np.where(narrow, 1.0, support_total)
        colsum = redist.sum(axis=0)
        # off-grid landing mass is redeposited proportionally over the
        # in-grid targets and accounted as leak; a column with no in-grid
        # target at all keeps its mass in place (full leak)
        self.leak_fraction = np.clip(1.0 - colsum / np.maximum(support_total, 1e-300), 0.0, 1.0)
        dead = np.nonzero(colsum <= 0.0)[0]
        if len(dead):
            redist[dead, dead] = 1.0
            self.leak_fraction[dead] = 1.0
            colsum = redist.sum(axis=0)
        self.redistribution = redist / colsum

    def rate(self, p: np.ndarray) -> np.ndarray:
        """d p / dt from jumps; p is (n,) or (m, n) row-densities."""
        g = p * self.lam if p.ndim == 1 else p * self.lam[None, :]
        if p.ndim == 1:
            gain = self.redistribution @ g
        else:
            gain = g @ self.redistribution.T
        return gain - g

    def leak_rate(self, p: np.ndarray, dx: float):
        """Redeposited off-grid mass per unit time, per density row."""
        g = p * self.lam if p.ndim == 1 else p * self.lam[None, :]
        return (g * self.leak_fraction).sum(axis=-1) * dx


# ---------------------------------------------------------------------------
# Core marching loop


def _trapz_weights(grid: Grid) -> np.ndarray:
    w = np.full(grid.n, grid.dx)
    w[0] = w[-1] = 0.5 * grid.dx
    return w


def _evolve_rows(model, grid, rows, t0, snap_times, dt, diag, max_leak=1e-4):
    """March row-densities (m, n) from t0, snapshotting at snap_times.

    Returns the list of snapshot matrices in the order of snap_times.
    ``snap_times`` must lie on the dt lattice anchored at t0.
    """
    snap_times = [float(s) for s in snap_times]
    steps_at = []
    for s in snap_times:
        k = round((s - t0) / dt)
        if k < 0 or abs(s - t0 - k * dt) > 1e-9 * max(1.0, abs(s)):
            raise ValueError(f"snapshot time {s} is not on the dt={dt} lattice from t0={t0}")
        steps_at.append(k)
    n_steps = max(steps_at, default=0)
    t_end = t0 + n_steps * dt

    jump_active = model.has_jumps(grid, t0, max(t_end, t0 + dt))
    dd_active = model.has_drift_diffusion(grid, t0, max(t_end, t0 + dt))
    time_invariant = model.is_time_invariant()

    if not jump_active and not dd_active:
        # every generator vanishes; the density is frozen exactly
        diag.n_steps += n_steps
        return [rows.copy() for _ in steps_at]

    if jump_active:
        lam_peak = 0.0
        for ts in (t0, 0.5 * (t0 + t_end), t_end):
            lam_peak = max(lam_peak, float(np.max(model.jump_rate(grid.nodes, ts))))
        if lam_peak * dt > _MAX_JUMP_CFL:
            raise ValueError(
                f"stability violation: jump CFL lam*dt = {lam_peak * dt:g} exceeds "
                f"{_MAX_JUMP_CFL} (reduce dt below {_MAX_JUMP_CFL / lam_peak:g})"
            )

    tw = _trapz_weights(grid)
    bands_cache = _build_generator(model, grid, t0) if (dd_active and time_invariant) else None
    jump_cache = _JumpOperator(model, grid, t0) if (jump_active and time_invariant) else None

    def cn_half(p, t_from, h):
        bands = bands_cache if bands_cache is not None else _build_generator(
            model, grid, t_from + 0.5 * h
        )
        n_sub = _cn_substeps(bands, h)
        h_sub = h / n_sub
        for _ in range(n_sub):
            p = _cn_step(bands, p, h_sub)
            diag.n_diffusion_solves += 1
        return p

    snapshots = {}
    p = rows.T.copy()  # (n, m): solver works on column-stacked densities
    step_index = {k: i for i, k in enumerate(steps_at)}
    if 0 in step_index:
        snapshots[0] = p.T.copy()
    row_leak = np.zeros(p.shape[1])
    for step in range(n_steps):
        t = t0 + step * dt
        if dd_active:
            p = cn_half(p, t, 0.5 * dt)
        if jump_active:
            op = jump_cache if jump_cache is not None else _JumpOperator(model, grid, t + 0.5 * dt)
            rows_v = p.T
            r1 = op.rate(rows_v)
            r2 = op.rate(rows_v + dt * r1)
            p = (rows_v + 0.5 * dt * (r1 + r2)).T
            diag.n_jump_applications += 2
            row_leak += dt * op.leak_rate(rows_v, grid.dx)
            if np.max(row_leak) > max_leak:
                raise ValueError(
                    f"jump mass leaving the domain exceeds {max_leak:g} "
                    f"(got {np.max(row_leak):g}); widen the grid"
                )
        if dd_active:
            p = cn_half(p, t + 0.5 * dt, 0.5 * dt)
        # bookkeeping: pre-renormalization drift, clipping, renormalization
        mass = tw @ p
        diag.max_mass_drift = max(diag.max_mass_drift, float(np.max(np.abs(mass - 1.0))))
        mn = float(p.min())
        diag.min_value_seen = min(diag.min_value_seen, mn)
        if mn < 0.0:
            clipped = -(tw @ np.minimum(p, 0.0))
            worst = float(np.max(clipped))
            diag.max_step_clipped = max(diag.max_step_clipped, worst)
            diag.total_clipped += float(np.sum(clipped))
            np.clip(p, 0.0, None, out=p)
            mass = tw @ p
        p /= mass
        diag.n_steps += 1
        k = step + 1
        if k in step_index:
            snapshots[k] = p.T.copy()
    diag.leaked_mass = max(diag.leaked_mass, float(np.max(row_leak, initial=0.0)))
    return [snapshots[k] for k in steps_at]


def evolve_density_path(model: ChannelModel, p0: DensityField, t0: float, times, dt: float,
                        diagnostics: Optional[SolverDiagnostics] = None):
    """Evolve a density from t0 and return snapshots at the given times."""
    diag = diagnostics if diagnostics is not None else SolverDiagnostics()
    rows = p0.values[None, :]
    snaps = _evolve_rows(model, p0.grid, rows, t0, times, dt, diag)
    return [
        DensityField(p0.grid, s[0], time=t, normalize=True, diagnostics=diag)
        for s, t in zip(snaps, times)
    ]


def evolve_density(model: ChannelModel, p0: DensityField, t0: float, t1: float, dt: float,
                   diagnostics: Optional[SolverDiagnostics] = None) -> DensityField:
    """Evolve ``p0`` from t0 to t1 under the channel's forward equation."""
    if not t1 > t0:
        raise ValueError("t1 must exceed t0")
    return evolve_density_path(model, p0, t0, [t1], dt, diagnostics)[0]


def _joint_rows_initial(model, grid, w0, t0, dt):
    """Mollified conditional rows plus the (sigma, t_offset) actually used.

    The mollifier is the short-time propagator itself: the state at
    t0 + tau0 is approximated by the single-step mixture, a Gaussian of
    width sigma = sqrt(b * tau0) centred at x0 + a(x0)*tau0 plus the jump
    component with weight lam*tau0.  Treating the mollified rows as the
    state at t0 + tau0 (rather than at t0) removes the leading-order width
    bias a plain mollified delta would inject into every conditional.
    """
    nodes = grid.nodes
    dx = grid.dx
    active = np.nonzero(w0 * dx >= 1e-14)[0]
    b_vals = np.asarray(model.diffusion(nodes[active], t0), dtype=float)
    b_ref = float(np.median(b_vals))
    sigma_target = 2.0 * dx
    if b_ref > 0 and np.max(np.abs(b_vals - b_ref)) <= 0.05 * b_ref:
        k = max(1, math.ceil(sigma_target**2 / (b_ref * dt) - 1e-9))
        tau0 = k * dt
        sigma = math.sqrt(b_ref * tau0)
    else:
        tau0 = 0.0
        sigma = sigma_target
    x0s = nodes[active]
    centers = x0s + np.asarray(model.drift(x0s, t0), dtype=float) * tau0
    rows = np.exp(-0.5 * ((nodes[None, :] - centers[:, None]) / sigma) ** 2) / (
        sigma * math.sqrt(2.0 * math.pi)
    )
    if tau0 > 0 and model.has_jumps(grid, t0, t0 + tau0):
        lam = np.asarray(model.jump_rate(x0s, t0), dtype=float)[:, None]
        jump_part = np.asarray(
            model.jump_kernel.pdf(nodes[None, :] - centers[:, None], x0s[:, None], t0),
            dtype=float,
        )
        rows = (1.0 - lam * tau0) * rows + lam * tau0 * jump_part
    rows /= np.trapezoid(rows, dx=dx, axis=1)[:, None]
    return active, rows, sigma, tau0


def evolve_joint_path(model: ChannelModel, p0: DensityField, t0: float, times, dt: float,
                      diagnostics: Optional[SolverDiagnostics] = None):
    """Joint densities of (X_t0, X_t) at the given times.

    Conditional rows start from mollified point masses (see
    ``_joint_rows_initial``) and evolve as one vectorized block; the result
    is deterministic and independent of any row scheduling.
    """
    diag = diagnostics if diagnostics is not None else SolverDiagnostics()
    grid = p0.grid
    w0 = p0.values
    active, rows, sigma, tau0 = _joint_rows_initial(model, grid, w0, t0, dt)
    diag.mollifier_sigma = sigma
    diag.mollifier_t_offset = tau0
    for s in times:
        if s < t0 + tau0:
            raise ValueError(
                f"joint snapshot time {s} precedes the mollifier offset t0+{tau0:g}"
            )
    snaps = _evolve_rows(model, grid, rows, t0 + tau0, times, dt, diag)
    out = []
    mask = np.zeros(grid.n, dtype=bool)
    mask[active] = True
    for s, t in zip(snaps, times):
        values = np.zeros((grid.n, grid.n))
        values[active] = w0[active, None] * s
        out.append(JointDensity(grid, grid, values, time=t, row_mask=mask, diagnostics=diag))
    return out


def evolve_joint(model: ChannelModel, p0: DensityField, t: float, dt: float,
                 diagnostics: Optional[SolverDiagnostics] = None) -> JointDensity:
    """Joint density of (X_t0, X_t) with X_t0 distributed as ``p0``."""
    return evolve_joint_path(model, p0, p0.time, [t], dt, diagnostics)[0]


# ---------------------------------------------------------------------------
# Spectral solution for state-homogeneous (additive) channels


def _require_homogeneous(model: ChannelModel, grid: Grid, times, tol: float = 1e-12):
    if not model.is_state_homogeneous(grid, times, tol):
        raise ModelError(
            ["model is not state-homogeneous: coefficients vary across grid nodes"]
        )


def additive_closed_form(model: ChannelModel, p0: DensityField, t: float,
                         quad_tol: float = 1e-10, boundary_tol: float = 1e-6) -> DensityField:
    """Evolve a state-homogeneous channel by its Fourier-domain solution.

    The transform of the density is multiplied by
    exp(integral of [lam*(W(k)-1) - i*a*k - b*k^2/2]); the kernel
    characteristic function W is closed-form per family and the time
    integral uses adaptive quadrature when coefficients depend on t.
    """
    grid = p0.grid
    t0 = p0.time
    if t < t0:
        raise ValueError("target time precedes the density's time")
    _require_homogeneous(model, grid, (t0, 0.5 * (t0 + t), t))
    x_ref = float(grid.nodes[grid.n // 2])
    k = 2.0 * math.pi * np.fft.fftfreq(grid.n, d=grid.dx)

    def psi(tau: float) -> np.ndarray:
        lam = float(model.jump_rate(x_ref, tau))
        a = float(model.drift(x_ref, tau))
        b = float(model.diffusion(x_ref, tau))
        w = model.jump_kernel.char_fn(k, x_ref, tau) if lam != 0.0 else 0.0
        return lam * (w - 1.0) - 1j * a * k - 0.5 * b * k * k

    if model.is_time_invariant():
        exponent = psi(t0) * (t - t0)
    else:
        exponent, _ = quad_vec(psi, t0, t, epsabs=quad_tol, epsrel=quad_tol)
    vals = np.fft.ifft(np.fft.fft(p0.values) * np.exp(exponent)).real
    band = max(4, grid.n // 64)
    tail = (np.sum(np.abs(vals[:band])) + np.sum(np.abs(vals[-band:]))) * grid.dx
    if tail > boundary_tol:
        raise ValueError(
            f"aliasing check failed: boundary tail mass {tail:g} exceeds {boundary_tol:g}; "
            "widen the grid"
        )
    return DensityField(grid, np.clip(vals, 0.0, None), time=t, normalize=True)
