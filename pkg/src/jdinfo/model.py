"""Channel definitions: coefficient fields, jump kernels, initial laws.

A channel is the tuple (drift a, diffusion b, jump rate lam, jump kernel w)
plus an initial law for the state at t0.  Kernels are restricted to
parametric families (gaussian, laplace, uniform) whose raw moments,
densities, quantile functions and characteristic functions all have closed
forms; kernel parameters may themselves be fields of (x, t).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import ndtri

from .expressions import EvaluationError, ScalarField, parse_expression

__all__ = [
    "Grid",
    "JumpKernel",
    "InitialLaw",
    "ChannelModel",
    "ModelError",
    "build_model",
    "jump_moment",
    "analytic_km_coefficient",
]


class ModelError(ValueError):
    """Invalid channel definition; carries the full list of violations."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass(frozen=True)
class Grid:
    """Uniform node grid on [x_min, x_max] with n >= 16 nodes."""

    x_min: float
    x_max: float
    n: int

    def __post_init__(self):
        if self.n < 16:
            raise ModelError([f"grid needs at least 16 nodes, got {self.n}"])
        if not self.x_min < self.x_max:
            raise ModelError([f"grid requires x_min < x_max, got [{self.x_min}, {self.x_max}]"])

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.n - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n)

    @property
    def faces(self) -> np.ndarray:
        nodes = self.nodes
        return 0.5 * (nodes[:-1] + nodes[1:])


def _as_field(value, what: str) -> ScalarField:
    if isinstance(value, ScalarField):
        return value
    if isinstance(value, (int, float)):
        return parse_expression(repr(float(value)))
    if isinstance(value, str):
        return parse_expression(value)
    raise ModelError([f"{what} must be an expression string or number, got {type(value).__name__}"])


_KERNEL_PARAMS = {
    "gaussian": ("mean", "scale"),
    "laplace": ("mean", "scale"),
    "uniform": ("lo", "hi"),
}

# Truncation half-width of the effective kernel support, in units of the
# family's scale parameter.  Gaussian/uniform follow the 8-scale default;
# the Laplace tail decays only exponentially so 8 scales would leave
# ~3.4e-4 of mass outside and bias every jump quadrature.
_SUPPORT_SCALES = {"gaussian": 8.0, "laplace": 40.0}


@dataclass(frozen=True)
class JumpKernel:
    """Parametric jump-size law w(xi | x, t) with closed-form moments."""

    family: str
    params: dict

    def __post_init__(self):
        if self.family not in _KERNEL_PARAMS:
            raise ModelError([f"unknown kernel family {self.family!r}"])
        wanted = _KERNEL_PARAMS[self.family]
        got = tuple(sorted(self.params))
        if got != tuple(sorted(wanted)):
            raise ModelError(
                [f"{self.family} kernel takes parameters {wanted}, got {got}"]
            )
        object.__setattr__(
            self, "params", {k: _as_field(v, f"kernel parameter {k}") for k, v in self.params.items()}
        )

    def _values(self, x, t):
        return {k: f(x, t) for k, f in self.params.items()}

    def validate_at(self, x, t) -> list:
        """Sign/ordering constraints at the given nodes; returns violations."""
        out = []
        try:
            v = self._values(x, t)
        except EvaluationError as err:
            return [f"kernel parameter evaluation failed at t={t}: {err}"]
        if self.family in ("gaussian", "laplace"):
            scale = np.asarray(v["scale"], dtype=float)
            if np.any(scale <= 0.0):
                xs = np.broadcast_to(np.asarray(x, dtype=float), scale.shape)
                at = float(np.ravel(xs)[np.argmin(scale)]) if scale.ndim else float(xs)
                out.append(
                    f"kernel scale must be > 0; min {np.min(scale):g} at x={at:g}, t={t}"
                )
        else:
            lo, hi = np.asarray(v["lo"], dtype=float), np.asarray(v["hi"], dtype=float)
            if np.any(hi <= lo):
                out.append(f"uniform kernel requires hi > lo at every node (t={t})")
        return out

    def moment(self, n: int, x, t):
        """Raw moment E[xi^n] at (x, t), exact per family."""
        if n < 1:
            raise ValueError("moment order must be >= 1")
        v = self._values(x, t)
        if self.family == "gaussian":
            # raw-moment recurrence M_k = mu*M_{k-1} + (k-1)*sigma^2*M_{k-2}
            mu = np.asarray(v["mean"], dtype=float)
            var = np.asarray(v["scale"], dtype=float) ** 2
            m_km1 = np.ones_like(mu + var)
            m_k = mu + np.zeros_like(var)
            for k in range(2, n + 1):
                m_km1, m_k = m_k, mu * m_k + (k - 1) * var * m_km1
            return float(m_k) if np.isscalar(x) else m_k
        if self.family == "laplace":
            mu = np.asarray(v["mean"], dtype=float)
            s = np.asarray(v["scale"], dtype=float)
            total = np.zeros_like(mu + s)
            for j in range(0, n + 1, 2):
                total = total + math.comb(n, j) * math.factorial(j) * s**j * mu ** (n - j)
            return float(total) if np.isscalar(x) else total
        lo = np.asarray(v["lo"], dtype=float)
        hi = np.asarray(v["hi"], dtype=float)
        out = (hi ** (n + 1) - lo ** (n + 1)) / ((n + 1) * (hi - lo))
        return float(out) if np.isscalar(x) else out

    def pdf(self, xi, x, t):
        """Density w(xi | x, t); xi broadcasts against x."""
        v = self._values(x, t)
        xi = np.asarray(xi, dtype=float)
        if self.family == "gaussian":
            mu, sig = v["mean"], v["scale"]
            z = (xi - mu) / sig
            return np.exp(-0.5 * z * z) / (math.sqrt(2 * math.pi) * sig)
        if self.family == "laplace":
            mu, s = v["mean"], v["scale"]
            return np.exp(-np.abs(xi - mu) / s) / (2.0 * s)
        lo, hi = v["lo"], v["hi"]
        inside = (xi >= lo) & (xi <= hi)
        return np.where(inside, 1.0 / (hi - lo), 0.0)

    def ppf(self, u, x, t):
        """Quantile function for sampling; u in (0, 1) strictly."""
        v = self._values(x, t)
        u = np.asarray(u, dtype=float)
        if self.family == "gaussian":
            return v["mean"] + v["scale"] * ndtri(u)
        if self.family == "laplace":
            h = u - 0.5
            return v["mean"] - v["scale"] * np.sign(h) * np.log1p(-2.0 * np.abs(h))
        return v["lo"] + (v["hi"] - v["lo"]) * u

    def char_fn(self, k, x, t):
        """Characteristic function W(k) = E[exp(-i k xi)] at (x, t)."""
        v = self._values(x, t)
        k = np.asarray(k, dtype=float)
        if self.family == "gaussian":
            mu, sig = v["mean"], v["scale"]
            return np.exp(-1j * k * mu - 0.5 * (sig * k) ** 2)
        if self.family == "laplace":
            mu, s = v["mean"], v["scale"]
            return np.exp(-1j * k * mu) / (1.0 + (s * k) ** 2)
        lo, hi = v["lo"], v["hi"]
        c, h = 0.5 * (lo + hi), 0.5 * (hi - lo)
        return np.exp(-1j * k * c) * np.sinc(k * h / math.pi)

    def support_bounds(self, x, t):
        """Interval outside which the kernel mass is numerically negligible."""
        v = self._values(x, t)
        if self.family == "uniform":
            return np.min(v["lo"]), np.max(v["hi"])
        w = _SUPPORT_SCALES[self.family]
        mu = np.asarray(v["mean"], dtype=float)
        sig = np.asarray(v["scale"], dtype=float)
        return float(np.min(mu - w * sig)), float(np.max(mu + w * sig))

    def max_scale(self, x, t) -> float:
        v = self._values(x, t)
        if self.family == "uniform":
            return float(np.max(np.asarray(v["hi"]) - np.asarray(v["lo"])))
        return float(np.max(np.asarray(v["scale"], dtype=float)))

    def depends_on(self, name: str) -> bool:
        return any(f.depends_on(name) for f in self.params.values())


@dataclass(frozen=True)
class InitialLaw:
    """Law of the state at t0: gaussian, expression density, or point mass."""

    kind: str  # gaussian | expression | point
    mean: float = 0.0
    std: float = 1.0
    density: Optional[ScalarField] = None
    x0: float = 0.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "expression", "point"):
            raise ModelError([f"unknown initial law kind {self.kind!r}"])
        if self.kind == "gaussian" and self.std <= 0:
            raise ModelError([f"initial gaussian std must be > 0, got {self.std}"])
        if self.kind == "expression" and self.density is None:
            raise ModelError(["expression initial law needs a density expression"])

    def density_values(self, grid: Grid, t0: float = 0.0, mollify_std: Optional[float] = None):
        """Normalized density values on the grid.

        Point masses are represented as a Gaussian of standard deviation
        ``mollify_std`` (default 2*dx): deltas are not grid-representable.
        """
        nodes = grid.nodes
        if self.kind == "gaussian":
            vals = np.exp(-0.5 * ((nodes - self.mean) / self.std) ** 2)
        elif self.kind == "point":
            s = 2.0 * grid.dx if mollify_std is None else mollify_std
            vals = np.exp(-0.5 * ((nodes - self.x0) / s) ** 2)
        else:
            vals = np.asarray(self.density(nodes, t0), dtype=float)
            if np.any(vals < 0):
                raise ModelError(["initial density expression is negative on the grid"])
        mass = np.trapezoid(vals, dx=grid.dx)
        if not np.isfinite(mass) or mass <= 0:
            raise ModelError(["initial density is not normalizable on the grid"])
        return vals / mass

    def sample(self, u: np.ndarray, grid: Optional[Grid] = None, t0: float = 0.0) -> np.ndarray:
        """Inverse-CDF draws from uniforms in (0,1).  Point masses are exact."""
        if self.kind == "gaussian":
            return self.mean + self.std * ndtri(u)
        if self.kind == "point":
            return np.full_like(np.asarray(u, dtype=float), self.x0)
        if grid is None:
            raise ModelError(["sampling an expression initial law requires a grid"])
        vals = self.density_values(grid, t0)
        cdf = np.concatenate(([0.0], np.cumsum(0.5 * (vals[1:] + vals[:-1]) * grid.dx)))
        cdf /= cdf[-1]
        return np.interp(u, cdf, grid.nodes)


@dataclass(frozen=True)
class ChannelModel:
    """The four coefficient fields of a jump-diffusion channel plus its
    initial law.  Immutable; evaluation is pure."""

    drift: ScalarField
    diffusion: ScalarField
    jump_rate: ScalarField
    jump_kernel: JumpKernel
    initial_law: InitialLaw
    grid: Optional[Grid] = None

    def validate(self, grid: Grid, times) -> list:
        """Sign constraints on the grid at the sampled times; returns violations."""
        out = []
        nodes = grid.nodes
        for t in times:
            for name, f, cond in (
                ("diffusion b", self.diffusion, lambda v: v < 0),
                ("jump rate lam", self.jump_rate, lambda v: v < 0),
            ):
                try:
                    vals = np.asarray(f(nodes, t), dtype=float)
                except EvaluationError as err:
                    out.append(f"{name} failed to evaluate at t={t}: {err}")
                    continue
                bad = cond(vals)
                if np.any(bad):
                    i = int(np.argmax(bad))
                    out.append(
                        f"{name} = {vals[i]:g} < 0 at node x={nodes[i]:g}, t={t:g}"
                    )
            try:
                self.drift(nodes, t)
            except EvaluationError as err:
                out.append(f"drift a failed to evaluate at t={t}: {err}")
            out.extend(self.jump_kernel.validate_at(nodes, t))
        try:
            self.initial_law.density_values(grid, times[0])
        except ModelError as err:
            out.extend(err.violations)
        return out

    # -- analytic propagator moment coefficients -------------------------

    def km_coefficient(self, n: int, x, t):
        """B_n(x, t): the rate of the n-th conditional increment moment.

        B_1 = lam*w_1 + a, B_2 = lam*w_2 + b, B_n = lam*w_n for n >= 3.
        """
        if n < 1:
            raise ValueError("coefficient order must be >= 1")
        lam = self.jump_rate(x, t)
        wn = self.jump_kernel.moment(n, x, t)
        base = lam * wn
        if n == 1:
            return base + self.drift(x, t)
        if n == 2:
            return base + self.diffusion(x, t)
        return base

    # -- structural queries used by the solvers --------------------------

    def _sample_times(self, t0: float, t1: float):
        return (t0, 0.5 * (t0 + t1), t1)

    def is_zero_on(self, f: ScalarField, grid: Grid, t0: float, t1: float) -> bool:
        if f.is_literal_zero:
            return True
        nodes = grid.nodes
        return all(
            np.max(np.abs(np.asarray(f(nodes, t), dtype=float))) == 0.0
            for t in self._sample_times(t0, t1)
        )

    def has_jumps(self, grid: Grid, t0: float, t1: float) -> bool:
        return not self.is_zero_on(self.jump_rate, grid, t0, t1)

    def has_drift_diffusion(self, grid: Grid, t0: float, t1: float) -> bool:
        return not (
            self.is_zero_on(self.drift, grid, t0, t1)
            and self.is_zero_on(self.diffusion, grid, t0, t1)
        )

    def is_state_homogeneous(self, grid: Grid, times, tol: float = 1e-12) -> bool:
        """True when all coefficients are constant in x at the sampled times."""
        nodes = grid.nodes
        fields = [self.drift, self.diffusion, self.jump_rate]
        fields += list(self.jump_kernel.params.values())
        for t in times:
            for f in fields:
                vals = np.asarray(f(nodes, t), dtype=float)
                if np.max(vals) - np.min(vals) > tol * (1.0 + np.max(np.abs(vals))):
                    return False
        return True

    def is_time_invariant(self) -> bool:
        return not (
            self.drift.depends_on("t")
            or self.diffusion.depends_on("t")
            or self.jump_rate.depends_on("t")
            or self.jump_kernel.depends_on("t")
        )


# ---------------------------------------------------------------------------
# Construction from a config mapping


def _initial_from_config(section: dict) -> InitialLaw:
    kind = section.get("kind", "gaussian")
    if kind == "gaussian":
        return InitialLaw(kind="gaussian", mean=float(section.get("mean", 0.0)),
                          std=float(section.get("std", 1.0)))
    if kind == "point":
        return InitialLaw(kind="point", x0=float(section.get("x0", 0.0)))
    if kind == "expression":
        return InitialLaw(kind="expression",
                          density=parse_expression(section["density"]))
    raise ModelError([f"unknown initial law kind {kind!r}"])


def build_model(config: dict) -> ChannelModel:
    """Build and validate a :class:`ChannelModel` from a config mapping.

    Expects ``channel``, ``grid``, ``time`` and ``initial`` sections (same
    layout as the CLI config file).  Raises :class:`ModelError` listing all
    violations found on the grid at t0 and t1.
    """
    try:
        channel = config["channel"]
        gs = config["grid"]
        ts = config["time"]
    except KeyError as err:
        raise ModelError([f"missing config section {err.args[0]!r}"]) from None
    grid = Grid(float(gs["x_min"]), float(gs["x_max"]), int(gs["n"]))
    kernel_cfg = dict(channel.get("jump_kernel", {"family": "gaussian", "mean": "0", "scale": "1"}))
    family = kernel_cfg.pop("family")
    kernel = JumpKernel(family=family, params=kernel_cfg)
    model = ChannelModel(
        drift=_as_field(channel["drift"], "drift"),
        diffusion=_as_field(channel["diffusion"], "diffusion"),
        jump_rate=_as_field(channel["jump_rate"], "jump_rate"),
        jump_kernel=kernel,
        initial_law=_initial_from_config(config.get("initial", {})),
        grid=grid,
    )
    t0, t1 = float(ts["t0"]), float(ts["t1"])
    violations = model.validate(grid, (t0, t1))
    if violations:
        raise ModelError(violations)
    return model


def jump_moment(model: ChannelModel, n: int, x, t):
    """n-th raw moment of the jump-size law at (x, t), closed form."""
    if n < 1:
        raise ValueError("moment order must be >= 1")
    bad = model.jump_kernel.validate_at(x, t)
    if bad:
        raise ModelError(bad)
    return model.jump_kernel.moment(n, x, t)


def analytic_km_coefficient(model: ChannelModel, n: int, x, t):
    """B_n(x, t) from the coefficient fields and kernel moments."""
    return model.km_coefficient(n, x, t)
