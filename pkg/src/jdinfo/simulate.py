"""Monte Carlo engine for the single-step propagator and path ensembles.

One sub-step of size dt advances the state by

    dX = a*dt + sqrt(b*dt)*Z + xi*Y

with Z standard normal, Y Bernoulli(lam*dt) and xi drawn from the jump
kernel at the step's start point.  At most one jump fires per sub-step,
which carries an O(dt^2) bias that shrinks with the sub-step size.

Randomness is counter-based: the j-th uniform of path p at step s is a pure
function of (seed, s, 3*p + j), realized as word 3*p+j of a Philox stream
keyed by (seed, s).  Ensembles are therefore bit-identical no matter how
paths are chunked across workers.  Every step consumes exactly three words
per path (normal, jump indicator, jump size) so stream positions never
depend on the sampled values.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numpy.random import Philox
from scipy.special import ndtri

from .density import DensityField
from .model import ChannelModel, Grid, ModelError

__all__ = [
    "RngStream",
    "PathEnsemble",
    "propagator_step",
    "simulate_ensemble",
    "propagator_density",
]

_WORDS_PER_STEP = 3
_INITIAL_STREAM = 0  # stream index reserved for initial-law draws


def _uniforms(seed: int, stream: int, word_lo: int, n_words: int) -> np.ndarray:
    """Uniform doubles in (0,1) at absolute word positions of a keyed stream."""
    if n_words == 0:
        return np.empty(0)
    block_lo = word_lo // 4
    offset = word_lo - 4 * block_lo
    n_blocks = (offset + n_words + 3) // 4
    bg = Philox(key=[seed & 0xFFFFFFFFFFFFFFFF, stream], counter=[block_lo, 0, 0, 0])
    words = bg.random_raw(4 * n_blocks)[offset : offset + n_words]
    # 53-bit mantissa, offset by half a ulp so u is strictly inside (0,1)
    return ((words >> np.uint64(11)) + 0.5) * 2.0**-53


@dataclass(frozen=True)
class RngStream:
    """Counter-based substream keyed by (seed, path_index, step_index)."""

    seed: int
    path_index: int = 0
    step_index: int = 0

    def at(self, path_index: int, step_index: int) -> "RngStream":
        return RngStream(self.seed, path_index, step_index)

    def step_uniforms(self, n_paths: int) -> np.ndarray:
        """(n_paths, 3) uniforms for paths path_index..path_index+n_paths-1."""
        flat = _uniforms(
            self.seed,
            self.step_index + 1,
            _WORDS_PER_STEP * self.path_index,
            _WORDS_PER_STEP * n_paths,
        )
        return flat.reshape(n_paths, _WORDS_PER_STEP)

    def initial_uniforms(self, n_paths: int) -> np.ndarray:
        return _uniforms(self.seed, _INITIAL_STREAM, self.path_index, n_paths)


@dataclass(frozen=True)
class PathEnsemble:
    """States of M paths recorded at scheduled times."""

    times: np.ndarray  # (n_times,)
    states: np.ndarray  # (n_paths, n_times)
    seed: int
    step_dt: float

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    def to_csv(self, fh) -> None:
        """Write `path,time,state` rows; float formatting is repr-stable."""
        close = False
        if isinstance(fh, str):
            fh = open(fh, "w", newline="")
            close = True
        try:
            fh.write("path,time,state\n")
            times = [repr(float(t)) for t in self.times]
            for p in range(self.states.shape[0]):
                row = self.states[p]
                for j, ts in enumerate(times):
                    fh.write(f"{p},{ts},{float(row[j])!r}\n")
        finally:
            if close:
                fh.close()


def propagator_step(model: ChannelModel, x, t: float, dt: float, rng: RngStream):
    """One propagator sub-step from state(s) ``x`` at time ``t``.

    ``x`` may be a scalar or a vector of path states; vector entries use the
    path indices rng.path_index .. rng.path_index+len(x)-1.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    scalar = np.isscalar(x)
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    lam = np.atleast_1d(np.asarray(model.jump_rate(xs, t), dtype=float))
    p_jump = lam * dt
    if np.any(p_jump > 1.0):
        raise ValueError(
            f"step too large: lam*dt = {np.max(p_jump):g} > 1 (reduce dt below "
            f"{1.0 / np.max(lam):g})"
        )
    a = np.asarray(model.drift(xs, t), dtype=float)
    b = np.asarray(model.diffusion(xs, t), dtype=float)
    if np.any(b < 0):
        raise ModelError([f"diffusion negative at t={t}"])
    u = rng.step_uniforms(len(xs))
    z = ndtri(u[:, 0])
    jumped = u[:, 1] < p_jump
    dx = a * dt + np.sqrt(b * dt) * z
    if np.any(jumped):
        xi = np.asarray(model.jump_kernel.ppf(u[:, 2], xs, t), dtype=float)
        dx = dx + np.where(jumped, xi, 0.0)
    out = xs + dx
    return float(out[0]) if scalar else out


def _check_schedule(schedule: np.ndarray, step_dt: float) -> list:
    """Sub-step counts per schedule gap; rejects non-lattice schedules."""
    counts = []
    for i in range(len(schedule) - 1):
        gap = float(schedule[i + 1] - schedule[i])
        if gap <= 0:
            raise ValueError("schedule must be strictly ascending")
        k = round(gap / step_dt)
        if k < 1 or abs(gap - k * step_dt) > 1e-12 * max(1.0, abs(gap)):
            raise ValueError(
                f"step_dt {step_dt} does not divide schedule gap {gap} (within 1e-12)"
            )
        counts.append(k)
    return counts


def simulate_ensemble(
    model: ChannelModel,
    schedule,
    n_paths: int,
    step_dt: float,
    seed: int,
    n_workers: int = 1,
    max_states: int = 100_000_000,
) -> PathEnsemble:
    """Simulate ``n_paths`` trajectories recorded at the scheduled times.

    Deterministic in (model, schedule, n_paths, step_dt, seed); the result
    is bit-identical for any ``n_workers``.
    """
    schedule = np.asarray(schedule, dtype=float)
    if schedule.ndim != 1 or len(schedule) < 1:
        raise ValueError("schedule must be a non-empty 1-d time list")
    if n_paths < 1:
        raise ValueError("need at least one path")
    if n_paths * len(schedule) > max_states:
        raise MemoryError(
            f"ensemble would hold {n_paths * len(schedule)} states "
            f"(cap {max_states}); raise max_states to allow"
        )
    counts = _check_schedule(schedule, step_dt)
    states = np.empty((n_paths, len(schedule)))
    rng = RngStream(seed)

    def run_chunk(lo: int, hi: int) -> None:
        m = hi - lo
        u0 = rng.at(lo, 0).initial_uniforms(m)
        x = np.asarray(
            model.initial_law.sample(u0, grid=model.grid, t0=float(schedule[0])),
            dtype=float,
        )
        states[lo:hi, 0] = x
        step = 0
        t = float(schedule[0])
        for seg, k in enumerate(counts):
            for _ in range(k):
                x = propagator_step(model, x, t, step_dt, rng.at(lo, step))
                t += step_dt
                step += 1
            t = float(schedule[seg + 1])  # kill accumulated rounding
            states[lo:hi, seg + 1] = x

    if n_workers <= 1 or n_paths < 2:
        run_chunk(0, n_paths)
    else:
        chunk = -(-n_paths // n_workers)
        bounds = [(lo, min(lo + chunk, n_paths)) for lo in range(0, n_paths, chunk)]
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            list(pool.map(lambda be: run_chunk(*be), bounds))

    if not np.all(np.isfinite(states)):
        raise ArithmeticError("ensemble contains non-finite states")
    return PathEnsemble(times=schedule, states=states, seed=seed, step_dt=step_dt)


def propagator_density(
    model: ChannelModel,
    x: float,
    t: float,
    dt: float,
    grid: Grid | None = None,
) -> DensityField:
    """Density of the single-step increment from (x, t) over step dt.

    The mixture `lam*dt * w(.|x,t) + (1 - lam*dt) * N(a*dt, b*dt)`; its mass
    deviates from 1 by the neglected O(dt^2) terms and is not renormalized.
    """
    lam = float(model.jump_rate(x, t))
    if lam * dt >= 1.0:
        raise ValueError(f"lam*dt = {lam * dt:g} must be < 1")
    a = float(model.drift(x, t))
    b = float(model.diffusion(x, t))
    if b <= 0.0:
        raise ValueError("degenerate diffusion; use jump-only comparison")
    if grid is None:
        s = np.sqrt(b * dt)
        lo = a * dt - 10.0 * s
        hi = a * dt + 10.0 * s
        if lam > 0.0:
            klo, khi = model.jump_kernel.support_bounds(x, t)
            lo = min(lo, klo - 10.0 * s)
            hi = max(hi, khi + 10.0 * s)
        grid = Grid(lo, hi, 4001)
    xi = grid.nodes
    gauss = np.exp(-0.5 * (xi - a * dt) ** 2 / (b * dt)) / np.sqrt(2 * np.pi * b * dt)
    vals = (1.0 - lam * dt) * gauss
    if lam > 0.0:
        vals = vals + lam * dt * np.asarray(model.jump_kernel.pdf(xi, x, t), dtype=float)
    return DensityField(grid=grid, values=vals, time=t, normalize=False)
