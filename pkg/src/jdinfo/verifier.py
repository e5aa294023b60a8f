"""Identity verification: finite-difference rates vs term decompositions.

Each identity check evolves the configured channel's density (or joint
density), measures the left-hand side as a central finite difference of
entropy or mutual information along the flow, assembles the right-hand
side from named terms, and reports residuals against the scenario
tolerance.  Suite runs aggregate the reports deterministically.
"""

from __future__ import annotations

import hashlib
import json
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .density import (
    DensityField,
    JointDensity,
    SolverDiagnostics,
    additive_closed_form,
    evolve_density_path,
    evolve_joint_path,
)
from .info_functionals import (
    TermValue,
    drift_correction,
    entropy,
    entropy_jump_term,
    fisher_type,
    generalized_mmse,
    km_drift_correction,
    log_derivative_term,
    mi_jump_term,
    mutual_fisher,
    mutual_information,
    score_field,
)
from .kramers_moyal import estimate_km
from .model import ChannelModel, Grid
from .simulate import RngStream, propagator_density, propagator_step, simulate_ensemble

__all__ = [
    "IDENTITY_IDS",
    "Scenario",
    "SuiteEntry",
    "IdentityReport",
    "SuiteReport",
    "finite_difference_rate",
    "verify_identity",
    "run_suite",
]

IDENTITY_IDS = (
    "THM1", "LEMMA1", "THM3", "THM4", "THM5", "THM6",
    "COR1", "COR2", "COR3", "COR4", "COR5", "DEBRUIJN", "IMMSE",
)

DEFAULT_EQUALITY_TOL = 1e-3
DEFAULT_INEQUALITY_SLACK = 1e-4

# tolerances for estimated-vs-analytic coefficient orders (THM1)
KM_ORDER_TOLERANCES = {1: 0.05, 2: 0.05, 3: 0.15, 4: 0.15}


class IncompatibleModelError(ValueError):
    """The identity's preconditions reject this channel."""


@dataclass(frozen=True)
class Scenario:
    """Grid/time/tolerance settings for one verification run."""

    grid: Grid
    t: float
    solver_dt: float = 1e-3
    fd_steps: int = 1  # finite-difference delta = fd_steps * solver_dt
    series_order: int = 4
    tolerance: Optional[float] = None  # default depends on the identity
    inequality_slack: float = DEFAULT_INEQUALITY_SLACK
    mc_paths: int = 100_000
    mc_step_dt: float = 1e-3
    mc_record_steps: int = 200
    km_bins: int = 12
    km_orders: int = 3
    lemma1_draws: int = 1_000_000
    lemma1_dt: float = 0.01
    seed: int = 20260810


@dataclass(frozen=True)
class SuiteEntry:
    identity: str
    model: ChannelModel
    scenario: Scenario
    label: str = ""


@dataclass
class IdentityReport:
    identity_id: str
    t: float
    lhs: float
    rhs_terms: list
    rhs_total: float
    abs_residual: float
    rel_residual: float
    tolerance: float
    verdict: bool
    provenance: dict = field(default_factory=dict)
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "identity_id": self.identity_id,
            "t": self.t,
            "lhs": self.lhs,
            "rhs_terms": [
                {"name": tv.name, "value": tv.value, "diagnostics": tv.diagnostics}
                for tv in self.rhs_terms
            ],
            "rhs_total": self.rhs_total,
            "abs_residual": self.abs_residual,
            "rel_residual": self.rel_residual,
            "tolerance": self.tolerance,
            "verdict": bool(self.verdict),
            "provenance": self.provenance,
            "note": self.note,
        }


def finite_difference_rate(q_minus: float, q_plus: float, delta: float) -> float:
    """Central finite-difference rate (q_plus - q_minus) / (2 delta)."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    return (q_plus - q_minus) / (2.0 * delta)


# ---------------------------------------------------------------------------
# Shared machinery


def _provenance(identity: str, model: ChannelModel, scenario: Scenario) -> dict:
    kernel = model.jump_kernel
    desc = {
        "drift": model.drift.source,
        "diffusion": model.diffusion.source,
        "jump_rate": model.jump_rate.source,
        "kernel_family": kernel.family,
        "kernel_params": {k: f.source for k, f in sorted(kernel.params.items())},
        "initial": repr(model.initial_law),
        "grid": [scenario.grid.x_min, scenario.grid.x_max, scenario.grid.n],
        "t": scenario.t,
        "solver_dt": scenario.solver_dt,
        "series_order": scenario.series_order,
        "seed": scenario.seed,
    }
    digest = hashlib.sha256(
        json.dumps({"identity": identity, **desc}, sort_keys=True).encode()
    ).hexdigest()[:16]
    return {**desc, "config_hash": digest}


def _diag_summary(diag: SolverDiagnostics) -> dict:
    return {
        "n_steps": diag.n_steps,
        "max_mass_drift": diag.max_mass_drift,
        "max_step_clipped": diag.max_step_clipped,
        "min_value_seen": diag.min_value_seen,
        "leaked_mass": diag.leaked_mass,
        "mollifier_sigma": diag.mollifier_sigma,
        "mollifier_t_offset": diag.mollifier_t_offset,
    }


def _fd_times(scenario: Scenario):
    delta = scenario.fd_steps * scenario.solver_dt
    t = scenario.t
    return delta, [t - 2 * delta, t - delta, t, t + delta, t + 2 * delta]


def _assemble(identity, scenario, lhs, terms, tolerance, verdict, diag=None,
              extra_prov=None, model=None) -> IdentityReport:
    rhs_total = 0.0
    for tv in terms:
        rhs_total += tv.value
    abs_residual = abs(lhs - rhs_total)
    scale = max(
        abs(lhs), abs(rhs_total), max((abs(tv.value) for tv in terms), default=0.0), 1e-300
    )
    rel_residual = abs_residual / scale
    prov = _provenance(identity, model, scenario)
    if diag is not None:
        prov["solver_diagnostics"] = _diag_summary(diag)
    if extra_prov:
        prov.update(extra_prov)
    if verdict is None:
        verdict = rel_residual <= tolerance
    return IdentityReport(
        identity_id=identity,
        t=scenario.t,
        lhs=lhs,
        rhs_terms=list(terms),
        rhs_total=rhs_total,
        abs_residual=abs_residual,
        rel_residual=rel_residual,
        tolerance=tolerance,
        verdict=bool(verdict),
        provenance=prov,
    )


def _require_gaussian_channel(model: ChannelModel, grid: Grid, times):
    nodes = grid.nodes
    for t in times:
        if (
            np.max(np.abs(np.asarray(model.drift(nodes, t)))) > 1e-12
            or np.max(np.abs(np.asarray(model.diffusion(nodes, t)) - 1.0)) > 1e-12
            or np.max(np.abs(np.asarray(model.jump_rate(nodes, t)))) > 1e-12
        ):
            raise IncompatibleModelError(
                "this identity requires the unit-diffusion channel (a=0, b=1, lam=0)"
            )


def _require_homogeneous(model: ChannelModel, grid: Grid, times):
    if not model.is_state_homogeneous(grid, times):
        raise IncompatibleModelError(
            "this identity requires a state-homogeneous (additive) channel"
        )


def _entropy_path(model, scenario):
    """Entropy at the five finite-difference times plus the centre field."""
    delta, times = _fd_times(scenario)
    diag = SolverDiagnostics()
    p0 = DensityField.from_initial_law(model, scenario.grid, 0.0)
    snaps = evolve_density_path(model, p0, 0.0, times, scenario.solver_dt, diag)
    hs = [entropy(p) for p in snaps]
    lhs = finite_difference_rate(hs[1], hs[3], delta)
    wide = finite_difference_rate(hs[0], hs[4], 2 * delta)
    return snaps[2], lhs, abs(lhs - wide), diag


_JOINT_CACHE: dict = {}
_JOINT_CACHE_LOCK = threading.Lock()
_JOINT_CACHE_LIMIT = 6


def _joint_path(model, scenario):
    """Joint snapshots at the finite-difference times, memoized.

    Several identities on the same (model, scenario time grid) share one
    joint evolution; duplicate computation under concurrent suite entries
    is possible but harmless (results are deterministic).
    """
    delta, times = _fd_times(scenario)
    prov = _provenance("joint", model, scenario)
    key = (prov["config_hash"], tuple(round(s, 12) for s in times), scenario.solver_dt)
    with _JOINT_CACHE_LOCK:
        hit = _JOINT_CACHE.get(key)
    if hit is None:
        diag = SolverDiagnostics()
        p0 = DensityField.from_initial_law(model, scenario.grid, 0.0)
        joints = evolve_joint_path(model, p0, 0.0, times, scenario.solver_dt, diag)
        mis = [mutual_information(j) for j in joints]
        hit = (joints, mis, diag)
        with _JOINT_CACHE_LOCK:
            if len(_JOINT_CACHE) >= _JOINT_CACHE_LIMIT:
                _JOINT_CACHE.pop(next(iter(_JOINT_CACHE)))
            _JOINT_CACHE[key] = hit
    joints, mis, diag = hit
    lhs = finite_difference_rate(mis[1], mis[3], delta)
    wide = finite_difference_rate(mis[0], mis[4], 2 * delta)
    return joints[2], lhs, abs(lhs - wide), diag


def _series_terms(field_obj, model, scenario, mode, sign):
    terms = []
    for n in range(3, scenario.series_order + 1):
        tv = log_derivative_term(field_obj, model, n, scenario.t, mode)
        terms.append(TermValue(tv.name, sign * tv.value, tv.diagnostics))
    trunc = 0.0
    for n in (scenario.series_order + 1, scenario.series_order + 2):
        if n <= 8:
            trunc += abs(log_derivative_term(field_obj, model, n, scenario.t, mode).value)
    return terms, trunc


# ---------------------------------------------------------------------------
# Identity implementations


def _verify_debruijn(model, scenario):
    _require_gaussian_channel(model, scenario.grid, (0.0, scenario.t))
    p_t, lhs, richardson, diag = _entropy_path(model, scenario)
    b_vals = np.asarray(model.diffusion(scenario.grid.nodes, scenario.t), dtype=float)
    terms = [TermValue("fisher_half", 0.5 * fisher_type(p_t, b_vals))]
    tol = scenario.tolerance or DEFAULT_EQUALITY_TOL
    return _assemble(
        "DEBRUIJN", scenario, lhs, terms, tol, None, diag,
        {"fd_richardson": richardson}, model,
    )


def _verify_immse(model, scenario):
    _require_gaussian_channel(model, scenario.grid, (0.0, scenario.t))
    joint, lhs, richardson, diag = _joint_path(model, scenario)
    target = np.tile(joint.grid0.nodes[:, None], (1, joint.grid_t.n))
    mmse = generalized_mmse(joint, 1.0, target)
    t = scenario.t
    terms = [TermValue("neg_mmse_over_2t2", -mmse / (2.0 * t * t), {"mmse": mmse})]
    tol = scenario.tolerance or DEFAULT_EQUALITY_TOL
    return _assemble(
        "IMMSE", scenario, lhs, terms, tol, None, diag,
        {"fd_richardson": richardson}, model,
    )


def _verify_thm1(model, scenario):
    schedule = np.arange(scenario.mc_record_steps + 1) * scenario.mc_step_dt
    ens = simulate_ensemble(
        model, schedule, scenario.mc_paths, scenario.mc_step_dt, scenario.seed
    )
    moments = estimate_km(ens, n_max=scenario.km_orders, bins=scenario.km_bins)
    central = np.nonzero(moments.central)[0]
    if len(central) == 0:
        raise ValueError("no central bins with enough samples")
    modal = central[np.argmax(moments.counts[central])]
    terms = []
    lhs = 0.0
    worst = 0.0
    t_eval = 0.0
    for n in range(1, scenario.km_orders + 1):
        analytic = np.asarray(
            model.km_coefficient(n, moments.bin_centers[central], t_eval), dtype=float
        )
        est = moments.estimate(n)[central]
        dev = np.max(np.abs(est - analytic) / np.abs(analytic))
        tol_n = KM_ORDER_TOLERANCES.get(n, 0.15)
        worst = max(worst, dev / tol_n)
        lhs += float(moments.estimate(n)[modal])
        terms.append(
            TermValue(
                f"B{n}_analytic",
                float(model.km_coefficient(n, moments.bin_centers[modal], t_eval)),
                {
                    "worst_rel_dev": float(dev),
                    "order_tolerance": tol_n,
                    "central_bins": int(len(central)),
                    "stderr_modal": float(moments.stderr(n)[modal]),
                },
            )
        )
    report = _assemble("THM1", scenario, lhs, terms, 1.0, worst <= 1.0, None, {
        "km_dt": moments.dt_used,
        "note": "rel_residual is the worst deviation as a fraction of its order tolerance",
    }, model)
    report.rel_residual = worst
    report.abs_residual = worst
    return report


def _verify_lemma1(model, scenario):
    x_ref = model.initial_law.x0 if model.initial_law.kind == "point" else 0.0
    gaps = []
    for stream, dt in ((0, scenario.lemma1_dt), (1, scenario.lemma1_dt / 4.0)):
        rng = RngStream(scenario.seed).at(0, stream)
        draws = propagator_step(
            model, np.full(scenario.lemma1_draws, x_ref), 0.0, dt, rng
        ) - x_ref
        dens = propagator_density(model, x_ref, 0.0, dt)
        edges = np.concatenate(
            [dens.grid.nodes - 0.5 * dens.grid.dx, [dens.grid.nodes[-1] + 0.5 * dens.grid.dx]]
        )
        hist, _ = np.histogram(draws, bins=edges, density=True)
        inside = np.mean((draws >= edges[0]) & (draws <= edges[-1]))
        gaps.append(float(np.sum(np.abs(hist * inside - dens.values)) * dens.grid.dx))
    tol = scenario.tolerance or 0.05
    terms = [TermValue("l1_at_quarter_dt", gaps[1], {"dt": scenario.lemma1_dt / 4.0})]
    verdict = gaps[0] <= tol and gaps[1] < gaps[0]
    report = _assemble("LEMMA1", scenario, gaps[0], terms, tol, verdict, None, {
        "l1_dt": gaps[0],
        "draws": scenario.lemma1_draws,
        "note": "lhs is the L1(histogram, mixture) gap at dt; the term is the gap at dt/4",
    }, model)
    report.abs_residual = gaps[0]
    report.rel_residual = gaps[0]
    return report


def _verify_thm3(model, scenario):
    p_t, lhs, richardson, diag = _entropy_path(model, scenario)
    nodes = scenario.grid.nodes
    b2 = np.asarray(model.km_coefficient(2, nodes, scenario.t), dtype=float)
    terms = [
        TermValue("fisher_half_B2", 0.5 * fisher_type(p_t, b2)),
        km_drift_correction(p_t, model, scenario.t),
    ]
    series, trunc = _series_terms(p_t, model, scenario, "entropy", -1.0)
    terms.extend(series)
    tol = scenario.tolerance or DEFAULT_EQUALITY_TOL
    return _assemble("THM3", scenario, lhs, terms, tol, None, diag, {
        "fd_richardson": richardson,
        "truncation_next_orders": trunc,
    }, model)


def _verify_thm4(model, scenario):
    joint, lhs, richardson, diag = _joint_path(model, scenario)
    b2 = np.asarray(model.km_coefficient(2, joint.grid_t.nodes, scenario.t), dtype=float)
    terms = [TermValue("neg_half_mutual_fisher_B2", -0.5 * mutual_fisher(joint, b2))]
    series, trunc = _series_terms(joint, model, scenario, "mutual", +1.0)
    terms.extend(series)
    tol = scenario.tolerance or DEFAULT_EQUALITY_TOL
    return _assemble("THM4", scenario, lhs, terms, tol, None, diag, {
        "fd_richardson": richardson,
        "truncation_next_orders": trunc,
    }, model)


def _verify_thm5(model, scenario):
    p_t, lhs, richardson, diag = _entropy_path(model, scenario)
    b_vals = np.asarray(model.diffusion(scenario.grid.nodes, scenario.t), dtype=float)
    terms = [
        TermValue("fisher_half", 0.5 * fisher_type(p_t, b_vals)),
        entropy_jump_term(p_t, model, scenario.t),
        drift_correction(p_t, model, scenario.t),
    ]
    tol = scenario.tolerance or DEFAULT_EQUALITY_TOL
    return _assemble("THM5", scenario, lhs, terms, tol, None, diag,
                     {"fd_richardson": richardson}, model)


def _verify_thm6(model, scenario):
    joint, lhs, richardson, diag = _joint_path(model, scenario)
    b_vals = np.asarray(model.diffusion(joint.grid_t.nodes, scenario.t), dtype=float)
    jump = mi_jump_term(joint, model, scenario.t)
    terms = [
        TermValue("neg_jump_kl", -jump.value, jump.diagnostics),
        TermValue("neg_half_mutual_fisher", -0.5 * mutual_fisher(joint, b_vals)),
    ]
    tol = scenario.tolerance or DEFAULT_EQUALITY_TOL
    return _assemble("THM6", scenario, lhs, terms, tol, None, diag,
                     {"fd_richardson": richardson}, model)


def _verify_cor1(model, scenario):
    joint, lhs, richardson, diag = _joint_path(model, scenario)
    b2 = np.asarray(model.km_coefficient(2, joint.grid_t.nodes, scenario.t), dtype=float)
    phi = score_field(joint)
    mmse = generalized_mmse(joint, b2, phi)
    mf = mutual_fisher(joint, b2)
    gap = abs(mmse - mf) / max(mf, 1e-300)
    terms = [TermValue("neg_half_mmse_score", -0.5 * mmse, {"mutual_fisher": mf})]
    series, trunc = _series_terms(joint, model, scenario, "mutual", +1.0)
    terms.extend(series)
    tol = scenario.tolerance or DEFAULT_EQUALITY_TOL
    return _assemble("COR1", scenario, lhs, terms, tol, None, diag, {
        "fd_richardson": richardson,
        "truncation_next_orders": trunc,
        "lemma8_rel_gap": gap,
    }, model)


def _verify_cor2(model, scenario):
    joint, lhs, richardson, diag = _joint_path(model, scenario)
    b_vals = np.asarray(model.diffusion(joint.grid_t.nodes, scenario.t), dtype=float)
    mmse = generalized_mmse(joint, b_vals, score_field(joint))
    terms = [TermValue("neg_half_mmse_bound", -0.5 * mmse)]
    slack = scenario.inequality_slack
    rhs_total = -0.5 * mmse
    verdict = (lhs <= slack) and (rhs_total <= slack) and (lhs - rhs_total <= slack)
    report = _assemble("COR2", scenario, lhs, terms, slack, verdict, diag, {
        "fd_richardson": richardson,
        "note": "inequality check: lhs <= 0 and lhs <= -mmse/2, up to the slack",
    }, model)
    report.abs_residual = max(0.0, lhs - rhs_total)
    report.rel_residual = report.abs_residual / max(abs(rhs_total), 1e-300)
    return report


def _verify_cor3(model, scenario):
    _require_homogeneous(model, scenario.grid, (0.0, scenario.t))
    diag = SolverDiagnostics()
    p0 = DensityField.from_initial_law(model, scenario.grid, 0.0)
    grid_solution = evolve_density_path(
        model, p0, 0.0, [scenario.t], scenario.solver_dt, diag
    )[0]
    spectral = additive_closed_form(model, p0, scenario.t)
    l1 = grid_solution.l1_distance(spectral)
    tol = scenario.tolerance or DEFAULT_EQUALITY_TOL
    report = _assemble("COR3", scenario, l1, [], tol, l1 <= tol, diag, {
        "note": "lhs is the L1 distance between the grid and spectral solutions",
    }, model)
    report.abs_residual = l1
    report.rel_residual = l1
    return report


def _verify_cor4(model, scenario):
    _require_homogeneous(model, scenario.grid, (0.0, scenario.t))
    p_t, lhs, richardson, diag = _entropy_path(model, scenario)
    b_vals = np.asarray(model.diffusion(scenario.grid.nodes, scenario.t), dtype=float)
    jump = entropy_jump_term(p_t, model, scenario.t)
    terms = [jump, TermValue("fisher_half", 0.5 * fisher_type(p_t, b_vals))]
    tol = scenario.tolerance or DEFAULT_EQUALITY_TOL
    slack = scenario.inequality_slack
    rhs_total = jump.value + terms[1].value
    rel = abs(lhs - rhs_total) / max(abs(lhs), abs(rhs_total), 1e-300)
    verdict = rel <= tol and lhs >= -slack and rhs_total >= -slack
    return _assemble("COR4", scenario, lhs, terms, tol, verdict, diag,
                     {"fd_richardson": richardson}, model)


def _verify_cor5(model, scenario):
    _require_homogeneous(model, scenario.grid, (0.0, scenario.t))
    joint, lhs, richardson, diag = _joint_path(model, scenario)
    b_vals = np.asarray(model.diffusion(joint.grid_t.nodes, scenario.t), dtype=float)
    jump = mi_jump_term(joint, model, scenario.t)
    terms = [
        TermValue("neg_conditional_jump_kl", -jump.value, jump.diagnostics),
        TermValue("neg_half_mutual_fisher", -0.5 * mutual_fisher(joint, b_vals)),
    ]
    tol = scenario.tolerance or DEFAULT_EQUALITY_TOL
    return _assemble("COR5", scenario, lhs, terms, tol, None, diag,
                     {"fd_richardson": richardson}, model)


_VERIFIERS = {
    "DEBRUIJN": _verify_debruijn,
    "IMMSE": _verify_immse,
    "THM1": _verify_thm1,
    "LEMMA1": _verify_lemma1,
    "THM3": _verify_thm3,
    "THM4": _verify_thm4,
    "THM5": _verify_thm5,
    "THM6": _verify_thm6,
    "COR1": _verify_cor1,
    "COR2": _verify_cor2,
    "COR3": _verify_cor3,
    "COR4": _verify_cor4,
    "COR5": _verify_cor5,
}


def verify_identity(identity: str, model: ChannelModel, scenario: Scenario) -> IdentityReport:
    """Verify one identity for one channel at one time; see IDENTITY_IDS."""
    if identity not in _VERIFIERS:
        raise ValueError(f"unknown identity {identity!r}; expected one of {IDENTITY_IDS}")
    return _VERIFIERS[identity](model, scenario)


# ---------------------------------------------------------------------------
# Suite running


@dataclass
class SuiteReport:
    reports: list  # IdentityReport, ordered by entry index
    labels: list

    @property
    def n_failed(self) -> int:
        return sum(1 for r in self.reports if not r.verdict)

    def summary(self) -> str:
        lines = []
        for label, r in zip(self.labels, self.reports):
            status = "PASS" if r.verdict else "FAIL"
            name = label or r.identity_id
            lines.append(
                f"{status} {r.identity_id:8s} t={r.t:<8g} lhs={r.lhs: .6g} "
                f"rhs={r.rhs_total: .6g} rel_residual={r.rel_residual:.3g} "
                f"tol={r.tolerance:g} [{name}]"
            )
        lines.append(
            f"{len(self.reports) - self.n_failed}/{len(self.reports)} identities passed"
        )
        return "\n".join(lines)

    def to_csv(self, fh) -> None:
        close = isinstance(fh, str)
        if close:
            fh = open(fh, "w", newline="")
        try:
            fh.write("identity,model,t,lhs,rhs_total,abs_residual,rel_residual,verdict\n")
            for label, r in zip(self.labels, self.reports):
                fh.write(
                    f"{r.identity_id},{label},{r.t!r},{r.lhs!r},{r.rhs_total!r},"
                    f"{r.abs_residual!r},{r.rel_residual!r},{'pass' if r.verdict else 'fail'}\n"
                )
        finally:
            if close:
                fh.close()

    def to_json(self, fh) -> None:
        payload = [
            {"label": label, **r.to_dict()} for label, r in zip(self.labels, self.reports)
        ]
        close = isinstance(fh, str)
        if close:
            fh = open(fh, "w")
        try:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        finally:
            if close:
                fh.close()


def _failed_report(entry: SuiteEntry, reason: str) -> IdentityReport:
    return IdentityReport(
        identity_id=entry.identity,
        t=entry.scenario.t,
        lhs=float("nan"),
        rhs_terms=[],
        rhs_total=0.0,
        abs_residual=float("nan"),
        rel_residual=float("nan"),
        tolerance=entry.scenario.tolerance or DEFAULT_EQUALITY_TOL,
        verdict=False,
        provenance=_provenance(entry.identity, entry.model, entry.scenario),
        note=f"failed: {reason}",
    )


def run_suite(entries, n_workers: int = 1) -> SuiteReport:
    """Run all suite entries; failures become failed reports, not crashes.

    Entries are independent and may run concurrently; reports are merged
    by entry index so the output is deterministic either way.
    """
    entries = list(entries)

    def run_one(entry: SuiteEntry) -> IdentityReport:
        try:
            return verify_identity(entry.identity, entry.model, entry.scenario)
        except Exception as err:  # noqa: BLE001 - suite must keep going
            return _failed_report(entry, f"{type(err).__name__}: {err}")

    if n_workers <= 1 or len(entries) <= 1:
        reports = [run_one(e) for e in entries]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            reports = list(pool.map(run_one, entries))
    labels = [e.label or f"{e.identity.lower()}_{i}" for i, e in enumerate(entries)]
    return SuiteReport(reports=reports, labels=labels)
