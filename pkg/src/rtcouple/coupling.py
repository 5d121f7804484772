"""Operator-splitting drivers coupling transport and chemistry.

Both drivers talk to the two components only through the generic component
interface (set_input_field / compute_time_step / get_output_field), so any
registered implementation pair can be driven.

One split step: transport the totals (with the current reaction exchange
folded in), subtract that exchange to recover the pre-reaction transported
totals, equilibrate every cell against the step-start mineral state, and
read off the new exchange as the difference chemistry made.  SNIA does one
pass; SIA repeats until the equilibrated and transported totals agree in
relative L2 (the fixed point of that loop is exactly the backward-Euler
solve of the combined system).  SNIA is SIA with one pass and an infinite
tolerance, byte for byte.

The waste-package model is a 0D exponentially-decaying inventory feeding a
constant-rate source into its host cell over each step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .meshfield import CELLS, Field, field_norm


class StepFailure(RuntimeError):
    """A component refused or failed a step; carries phase and status."""

    def __init__(self, message: str, phase: str, suggested_dt=None):
        super().__init__(message)
        self.phase = phase
        self.suggested_dt = suggested_dt


@dataclass
class CouplingConfig:
    mode: str = "SNIA"            # SNIA or SIA
    dt: float = 1.0
    t_end: float = 1.0
    sia_max_iters: int = 50
    sia_tol: float = 1e-8
    porosity_feedback: bool = False
    reflow_threshold: float = 1e-3  # relative porosity change forcing a re-solve

    def validate(self) -> None:
        if self.mode not in ("SNIA", "SIA"):
            raise ValueError(f"mode must be SNIA or SIA, got {self.mode!r}")
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        if self.t_end < self.dt:
            raise ValueError("t_end must be >= dt")
        if self.sia_tol <= 0 or self.reflow_threshold <= 0:
            raise ValueError("tolerances must be > 0")
        if self.sia_max_iters < 1:
            raise ValueError("sia_max_iters must be >= 1")


@dataclass
class SiaReport:
    time: float
    iterations: int
    residual: float
    converged: bool
    reaction: object = None  # final exchange field, reusable as a warm start


@dataclass
class WastePackageState:
    """0D decaying inventory releasing into one mesh cell."""

    inventory: dict               # species name -> mol, >= 0
    rate_constant: float          # 1/s
    host_cell: int
    name: str = "package"

    def validate(self) -> None:
        if self.rate_constant < 0:
            raise ValueError("rate constant must be >= 0")
        if any(v < 0 for v in self.inventory.values()):
            raise ValueError("inventory must be >= 0")
        if self.host_cell < 0:
            raise ValueError("host_cell must be a valid cell id")


def waste_package_step(wp: WastePackageState, dt: float):
    """Exact exponential update; returns (new state, released mol by species).

    Released amounts are computed as old minus new inventory so that the
    sum over steps telescopes to m0 - m_final exactly, also in floats.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    f = math.exp(-wp.rate_constant * dt)
    new_inv = {}
    released = {}
    for species, amount in wp.inventory.items():
        remaining = amount * f
        new_inv[species] = remaining
        released[species] = amount - remaining
    return (WastePackageState(new_inv, wp.rate_constant, wp.host_cell,
                              wp.name), released)


def _require_ok(status, phase: str):
    if not status.ok:
        raise StepFailure(f"{phase} failed: {status.message}", phase,
                          status.suggested_dt)


def _split_step(transport, chemistry, totals: Field, t: float, dt: float,
                source, max_iters: int, tol: float, reaction0=None):
    """Shared transport/chemistry pass; see the module docstring."""
    minerals0 = chemistry.get_output_field("minerals")
    porosity0 = chemistry.get_output_field("porosity")
    if reaction0 is not None:
        reaction = Field("reaction", CELLS, reaction0.values.copy(),
                         list(totals.component_names), t, totals.unit)
    else:
        reaction = Field("reaction", CELLS, np.zeros_like(totals.values),
                         list(totals.component_names), t, totals.unit)

    iterations = 0
    residual = math.inf
    converged = False
    equilibrated = totals
    while iterations < max_iters:
        iterations += 1
        transport.set_input_field("conc", totals)
        transport.set_input_field("reaction", reaction)
        if source is not None:
            transport.set_input_field("source", source)
        _require_ok(transport.compute_time_step(t, dt), "transport")
        transported = transport.get_output_field("conc")

        # pre-reaction totals: what transport alone did to the step start
        pre = transported.copy()
        pre.values = transported.values - reaction.values
        chemistry.set_input_field("totals", pre)
        chemistry.set_input_field("minerals", minerals0)
        chemistry.set_input_field("porosity", porosity0)
        _require_ok(chemistry.compute_time_step(t, dt), "chemistry")
        equilibrated = chemistry.get_output_field("totals")

        mismatch = equilibrated.copy()
        mismatch.values = equilibrated.values - transported.values
        residual = field_norm(mismatch, "L2") \
            / max(field_norm(transported, "L2"), 1e-30)
        reaction = Field("reaction", CELLS,
                         equilibrated.values - pre.values,
                         list(totals.component_names), t, totals.unit)
        if residual <= tol:
            converged = True
            break
    return equilibrated, SiaReport(t + dt, iterations, residual, converged,
                                   reaction)


def snia_step(transport, chemistry, totals: Field, t: float, dt: float,
              source: Field | None = None):
    """One transport pass then one chemistry pass; first-order splitting."""
    return _split_step(transport, chemistry, totals, t, dt, source,
                       max_iters=1, tol=math.inf)


def sia_step(transport, chemistry, totals: Field, t: float, dt: float,
             config: CouplingConfig, source: Field | None = None,
             reaction0: Field | None = None):
    """Fixed-point iteration of the split until self-consistency.

    ``reaction0`` seeds the exchange term (defaults to zero; the previous
    step's exchange is a valid warm start).  Non-convergence is reported,
    not raised: the caller accepts the last iterate and is expected to
    shorten the next step.
    """
    return _split_step(transport, chemistry, totals, t, dt, source,
                       max_iters=config.sia_max_iters, tol=config.sia_tol,
                       reaction0=reaction0)
