"""Propagator moment estimation from ensembles and the truncated
moment-series form of the density's time derivative.

The estimator is the raw conditional-moment ratio

    Bhat_n(x) = mean[(X_{t+dt} - X_t)^n | X_t in bin] / dt

over consecutive recorded samples.  No finite-dt bias correction is
applied; tests compare against the analytic coefficients plus the known
leading bias terms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .density import DensityField
from .model import ChannelModel

__all__ = [
    "PropagatorMoments",
    "estimate_km",
    "km_series_rhs",
    "conservative_derivative",
]

MIN_BIN_COUNT = 50


@dataclass(frozen=True)
class PropagatorMoments:
    """Binned conditional-moment estimates Bhat_n with standard errors."""

    bin_centers: np.ndarray  # (n_bins,)
    estimates: np.ndarray  # (n_orders, n_bins); order n is row n-1
    standard_errors: np.ndarray  # (n_orders, n_bins)
    counts: np.ndarray  # (n_bins,)
    dt_used: float
    sample_iqr: tuple  # (q25, q75) of the conditioning samples

    @property
    def n_orders(self) -> int:
        return self.estimates.shape[0]

    @property
    def usable(self) -> np.ndarray:
        """Bins with enough samples to trust; others are flagged, not zeroed."""
        return self.counts >= MIN_BIN_COUNT

    @property
    def edge(self) -> np.ndarray:
        out = np.zeros(len(self.bin_centers), dtype=bool)
        out[0] = out[-1] = True
        return out

    @property
    def central(self) -> np.ndarray:
        """Usable non-edge bins whose centers lie in the sample interquartile range."""
        q25, q75 = self.sample_iqr
        inside = (self.bin_centers >= q25) & (self.bin_centers <= q75)
        return inside & self.usable & ~self.edge

    def estimate(self, n: int) -> np.ndarray:
        return self.estimates[n - 1]

    def stderr(self, n: int) -> np.ndarray:
        return self.standard_errors[n - 1]

    def to_csv(self, fh) -> None:
        close = isinstance(fh, str)
        if close:
            fh = open(fh, "w", newline="")
        try:
            fh.write("bin_center,order,estimate,stderr,count\n")
            for n in range(1, self.n_orders + 1):
                for c, est, se, cnt in zip(
                    self.bin_centers, self.estimates[n - 1], self.standard_errors[n - 1], self.counts
                ):
                    fh.write(f"{float(c)!r},{n},{float(est)!r},{float(se)!r},{int(cnt)}\n")
        finally:
            if close:
                fh.close()


def estimate_km(ensemble, n_max: int, bins: int, t_index: int | None = None) -> PropagatorMoments:
    """Estimate Bhat_1..Bhat_{n_max} from recorded increments.

    ``t_index`` selects one recorded interval (states at t_index and
    t_index+1).  With ``t_index=None`` all consecutive intervals are pooled,
    which assumes the recording interval is uniform (checked) and is the
    right call for time-invariant coefficients where every interval is an
    independent replicate.
    """
    if n_max < 1 or n_max > 6:
        raise ValueError("n_max must be between 1 and 6")
    if bins < 8:
        raise ValueError("need at least 8 bins")
    times = np.asarray(ensemble.times, dtype=float)
    states = ensemble.states
    if states.shape[1] < 2:
        raise ValueError("ensemble needs at least two recorded times")
    gaps = np.diff(times)
    if t_index is None:
        if np.max(gaps) - np.min(gaps) > 1e-12 * max(1.0, float(np.max(np.abs(gaps)))):
            raise ValueError("pooled estimation requires a uniform recording interval")
        dt = float(gaps[0])
        x = states[:, :-1].ravel()
        dxs = np.diff(states, axis=1).ravel()
    else:
        if not 0 <= t_index < states.shape[1] - 1:
            raise ValueError(f"t_index {t_index} out of range")
        dt = float(gaps[t_index])
        x = states[:, t_index]
        dxs = states[:, t_index + 1] - x
    if len(x) < 2 * MIN_BIN_COUNT:
        raise ValueError("insufficient samples for binned estimation")

    lo, hi = np.quantile(x, [0.01, 0.99])
    q25, q75 = np.quantile(x, [0.25, 0.75])
    if hi <= lo:  # degenerate spread (e.g. point-mass start), widen trivially
        lo, hi = lo - 0.5, hi + 0.5
    width = (hi - lo) / bins
    idx = np.floor((x - lo) / width).astype(np.int64)
    keep = (idx >= 0) & (idx < bins)
    idx = idx[keep]
    dkeep = dxs[keep]
    counts = np.bincount(idx, minlength=bins)
    centers = lo + (np.arange(bins) + 0.5) * width

    estimates = np.full((n_max, bins), np.nan)
    stderrs = np.full((n_max, bins), np.nan)
    safe = np.maximum(counts, 1)
    power = np.ones_like(dkeep)
    for n in range(1, n_max + 1):
        power = power * dkeep
        s1 = np.bincount(idx, weights=power, minlength=bins)
        s2 = np.bincount(idx, weights=power * power, minlength=bins)
        mean = s1 / safe
        var = np.maximum(s2 / safe - mean**2, 0.0)
        with np.errstate(invalid="ignore"):
            estimates[n - 1] = np.where(counts > 0, mean / dt, np.nan)
            stderrs[n - 1] = np.where(counts > 1, np.sqrt(var / safe) / dt, np.nan)
    return PropagatorMoments(
        bin_centers=centers,
        estimates=estimates,
        standard_errors=stderrs,
        counts=counts,
        dt_used=dt,
        sample_iqr=(float(q25), float(q75)),
    )


# ---------------------------------------------------------------------------
# Truncated moment-series right-hand side


def conservative_derivative(q: np.ndarray, order: int, dx: float) -> np.ndarray:
    """n-th derivative of a node field by composed flux-form differences.

    Every stage is a flux difference with zero boundary fluxes, so the
    result sums to zero exactly (summation by parts); in the interior the
    composition reduces to the minimal-width central stencil.
    """
    if order < 1:
        raise ValueError("derivative order must be >= 1")
    r = np.asarray(q, dtype=float)
    for _ in range(order // 2):
        f = np.empty(len(r) + 1)
        f[1:-1] = np.diff(r) / dx
        f[0] = f[-1] = 0.0
        r = np.diff(f) / dx
    if order % 2:
        f = np.empty(len(r) + 1)
        f[1:-1] = 0.5 * (r[:-1] + r[1:])
        f[0] = f[-1] = 0.0
        r = np.diff(f) / dx
    return r


def km_series_rhs(p: DensityField, model: ChannelModel, order: int, t: float) -> np.ndarray:
    """Truncated series for dp/dt: sum of (-1)^n/n! d^n(B_n p)/dx^n, n <= order.

    With no jumps and order >= 2 this is the drift-diffusion right-hand
    side exactly (B_n vanishes above 2); derivatives act on the product
    B_n*p so the field integrates to zero by construction.
    """
    if order < 2:
        raise ValueError("series order must be >= 2")
    if order > 8:
        raise ValueError("series order above 8 is not supported (stencil conditioning)")
    grid = p.grid
    if grid.n < 4 * order:
        raise ValueError(f"grid too small: need at least {4 * order} nodes for order {order}")
    nodes = grid.nodes
    jumps = model.has_jumps(grid, t, t)
    out = np.zeros(grid.n)
    for n in range(1, order + 1):
        if n >= 3 and not jumps:
            break
        bn = np.asarray(model.km_coefficient(n, nodes, t), dtype=float)
        if n >= 3 and not np.any(bn):
            continue
        q = bn * p.values
        sign = -1.0 if n % 2 else 1.0
        out += (sign / math.factorial(n)) * conservative_derivative(q, n, grid.dx)
    return out
