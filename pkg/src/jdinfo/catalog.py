"""Built-in verification catalog: the channels and scenarios every
identity is checked against by default (`jdinfo verify --default`)."""

from __future__ import annotations

from dataclasses import replace

from .expressions import parse_expression
from .model import ChannelModel, Grid, InitialLaw, JumpKernel
from .verifier import Scenario, SuiteEntry

__all__ = [
    "gaussian_channel",
    "ou_jump_channel",
    "mixed_jump_channel",
    "additive_jump_channel",
    "default_catalog",
]

GRID_1024 = Grid(-12.0, 12.0, 1024)
GRID_2048 = Grid(-12.0, 12.0, 2048)


def _model(drift, diffusion, rate, kernel=None, initial=None, grid=GRID_1024):
    return ChannelModel(
        drift=parse_expression(drift),
        diffusion=parse_expression(diffusion),
        jump_rate=parse_expression(rate),
        jump_kernel=kernel or JumpKernel("gaussian", {"mean": "0", "scale": "1"}),
        initial_law=initial or InitialLaw(kind="gaussian", mean=0.0, std=1.0),
        grid=grid,
    )


def gaussian_channel() -> ChannelModel:
    """Unit-diffusion channel: X_t = X_0 + W_t with X_0 ~ N(0, 1)."""
    return _model("0", "1", "0")


def ou_jump_channel() -> ChannelModel:
    """Mean-reverting drift, unit diffusion, moderate positive-mean jumps."""
    return _model(
        "-x", "1", "0.5", JumpKernel("gaussian", {"mean": "0.3", "scale": "0.5"})
    )


def mixed_jump_channel() -> ChannelModel:
    """Constant-coefficient channel with strong jumps, for estimator checks."""
    return _model(
        "1", "2", "3", JumpKernel("gaussian", {"mean": "1", "scale": "2"})
    )


def additive_jump_channel() -> ChannelModel:
    """State-homogeneous jump-diffusion with every component active."""
    return _model(
        "0.2", "0.5", "1", JumpKernel("gaussian", {"mean": "0", "scale": "0.7"})
    )


def default_catalog() -> list:
    """Every identity on its required channel at desk-scale settings."""
    gauss = gaussian_channel()
    ou = ou_jump_channel()
    mixed = mixed_jump_channel()
    additive = additive_jump_channel()
    base = Scenario(grid=GRID_1024, t=1.0)
    joint_ou = replace(base, solver_dt=5e-3, tolerance=1e-2)
    entries = [
        SuiteEntry("DEBRUIJN", gauss, replace(base, t=0.5), "debruijn_t0.5"),
        SuiteEntry("DEBRUIJN", gauss, replace(base, t=1.0), "debruijn_t1"),
        SuiteEntry("DEBRUIJN", gauss, replace(base, t=2.0), "debruijn_t2"),
        SuiteEntry("IMMSE", gauss, replace(base, t=1.0), "immse_t1"),
        SuiteEntry("THM1", mixed, replace(base, tolerance=1.0), "thm1_mixed"),
        SuiteEntry("LEMMA1", mixed, replace(base, tolerance=0.05), "lemma1_mixed"),
        SuiteEntry("THM3", ou, replace(base, t=0.5, tolerance=1e-2, series_order=6), "thm3_ou"),
        SuiteEntry("THM5", ou, replace(base, t=0.5, tolerance=1e-2), "thm5_ou"),
        SuiteEntry("THM4", ou, replace(joint_ou, t=0.25), "thm4_ou"),
        SuiteEntry("THM6", ou, replace(joint_ou, t=0.25), "thm6_ou_t0.25"),
        SuiteEntry("THM6", ou, replace(joint_ou, t=0.5), "thm6_ou_t0.5"),
        SuiteEntry("COR1", gauss, replace(base, t=1.0, tolerance=1e-2), "cor1_gauss"),
        SuiteEntry("COR1", ou, replace(joint_ou, t=0.25), "cor1_ou"),
        SuiteEntry("COR2", ou, replace(joint_ou, t=0.25), "cor2_ou"),
        SuiteEntry("COR3", additive, Scenario(grid=GRID_2048, t=1.0, tolerance=1e-3), "cor3_additive"),
        SuiteEntry("COR4", additive, replace(base, t=0.25, tolerance=1e-2), "cor4_t0.25"),
        SuiteEntry("COR4", additive, replace(base, t=0.5, tolerance=1e-2), "cor4_t0.5"),
        SuiteEntry("COR4", additive, replace(base, t=1.0, tolerance=1e-2), "cor4_t1"),
        SuiteEntry("COR5", additive, replace(joint_ou, t=0.5), "cor5_additive"),
    ]
    return entries
