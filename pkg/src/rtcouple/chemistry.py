"""Per-cell equilibrium speciation with mineral dissolution/precipitation.

A chemical system is a set of primary components, aqueous complexes formed
from them by mass action (c_j = 10^logK * prod_i c_i^S_ji), and minerals
with a solubility product.  Unknowns are natural-log free concentrations,
so positivity holds by construction; the ideal-solution convention applies
throughout (activity equals concentration).

Minerals are handled with an active set: present minerals impose
log Q = log Ksp as an equality and contribute their moles to the mass
balance; a present mineral whose moles turn negative is dropped (most
negative first), an absent one whose saturation index exceeds tol_SI is
added (most supersaturated first), and the loop is capped at 2*N_m + 2
passes.

Units: dissolved totals and free concentrations are mol per m^3 of water;
mineral moles are mol per m^3 of bulk, converted through the cell porosity.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import component
from .component import ComponentStatus, FieldSpec, NumericalComponent
from .meshfield import CELLS, Field
from .numerics import NoConvergenceError, newton_solve

LN10 = np.log(10.0)
LN_FLOOR = -80.0     # free concentrations never reported below e^-80
PHI_MIN = 1e-4
TOL_SI = 1e-8        # log10 units, active-set supersaturation trigger


class SpeciationError(RuntimeError):
    """Equilibrium solve failed; message carries the cell diagnostics."""


class PorosityClampWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ChemicalSystem:
    primaries: tuple            # component names, length N_c
    secondary_names: tuple      # aqueous complexes, length N_s
    stoich: np.ndarray          # (N_s, N_c) complex formation from primaries
    log_k: np.ndarray           # (N_s,) log10 formation constants
    mineral_names: tuple        # length N_m
    mineral_stoich: np.ndarray  # (N_m, N_c) dissolution stoichiometry
    log_ksp: np.ndarray         # (N_m,)
    molar_volume: np.ndarray    # (N_m,) m^3/mol

    @property
    def n_primaries(self) -> int:
        return len(self.primaries)

    @property
    def n_secondaries(self) -> int:
        return len(self.secondary_names)

    @property
    def n_minerals(self) -> int:
        return len(self.mineral_names)

    def validate(self) -> None:
        nc, ns, nm = self.n_primaries, self.n_secondaries, self.n_minerals
        if nc == 0:
            raise ValueError("a chemical system needs at least one primary")
        names = list(self.primaries) + list(self.secondary_names) \
            + list(self.mineral_names)
        if len(set(names)) != len(names):
            raise ValueError("species names must be unique")
        if self.stoich.shape != (ns, nc):
            raise ValueError(
                f"complex stoichiometry shape {self.stoich.shape} != ({ns}, {nc})")
        if self.mineral_stoich.shape != (nm, nc):
            raise ValueError(
                f"mineral stoichiometry shape {self.mineral_stoich.shape}"
                f" != ({nm}, {nc})")
        for name, arr, n in (("log_k", self.log_k, ns),
                             ("log_ksp", self.log_ksp, nm),
                             ("molar_volume", self.molar_volume, nm)):
            if arr.shape != (n,):
                raise ValueError(f"{name} shape {arr.shape} != ({n},)")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
        if nm and not np.all(self.molar_volume > 0):
            raise ValueError("molar volumes must be > 0")

    @classmethod
    def from_config(cls, config: dict) -> "ChemicalSystem":
        """Build from the scenario-style mapping.

        ``primaries`` is a list of names; ``secondaries`` and ``minerals``
        are lists of dicts with name, stoichiometry ({primary: coeff}) and
        log_k / log_ksp (+ molar_volume for minerals).
        """
        primaries = tuple(config["primaries"])
        index = {name: i for i, name in enumerate(primaries)}

        def rows(entries):
            out = np.zeros((len(entries), len(primaries)))
            for r, entry in enumerate(entries):
                for name, coeff in entry["stoichiometry"].items():
                    if name not in index:
                        raise ValueError(
                            f"{entry['name']!r} references unknown primary "
                            f"{name!r}; known: {sorted(index)}")
                    out[r, index[name]] = coeff
            return out

        secondaries = list(config.get("secondaries", []))
        minerals = list(config.get("minerals", []))
        system = cls(
            primaries=primaries,
            secondary_names=tuple(e["name"] for e in secondaries),
            stoich=rows(secondaries),
            log_k=np.array([float(e["log_k"]) for e in secondaries]),
            mineral_names=tuple(e["name"] for e in minerals),
            mineral_stoich=rows(minerals),
            log_ksp=np.array([float(e["log_ksp"]) for e in minerals]),
            molar_volume=np.array([float(e["molar_volume"]) for e in minerals]),
        )
        system.validate()
        return system


@dataclass
class ChemState:
    """One cell: log free concentrations, mineral moles, porosity."""

    ln_c: np.ndarray          # (N_c,) natural log of mol/m^3 water
    mineral_moles: np.ndarray  # (N_m,) mol/m^3 bulk, >= 0
    porosity: float = 1.0

    def copy(self) -> "ChemState":
        return ChemState(self.ln_c.copy(), self.mineral_moles.copy(),
                         self.porosity)


def secondary_conc(system: ChemicalSystem, ln_c) -> np.ndarray:
    return np.exp(LN10 * system.log_k + system.stoich @ ln_c)

def totals_from_state(system: ChemicalSystem, state: ChemState) -> np.ndarray:
    """Dissolved totals T_i = c_i + sum_j S_ji c_j; plain evaluation."""
    return np.exp(state.ln_c) + system.stoich.T @ secondary_conc(system, state.ln_c)


def saturation_index(system: ChemicalSystem, ln_c) -> np.ndarray:
    """log10 Q - log10 Ksp per mineral."""
    return system.mineral_stoich @ ln_c / LN10 - system.log_ksp


def _solve_cell(system: ChemicalSystem, T_target, active, ln_c0, y0, tol):
    """Newton solve for ln c (+ mineral moles per water for active minerals).

    Equations: scaled mass balance per primary, then log Q = log Ksp per
    active mineral.  Three deterministic perturbed restarts before failing.
    """
    nc = system.n_primaries
    M_act = system.mineral_stoich[active]
    ksp_act = system.log_ksp[active]
    scale = 1.0 / np.maximum(np.abs(T_target),
                             1e-6 * max(1.0, float(np.max(np.abs(T_target)))))

    def residual(z):
        x, y = z[:nc], z[nc:]
        mass = np.exp(x) + system.stoich.T @ secondary_conc(system, x) \
            + M_act.T @ y
        return np.concatenate([(mass - T_target) * scale,
                               M_act @ x / LN10 - ksp_act])

    def jacobian(z):
        x, y = z[:nc], z[nc:]
        sec = secondary_conc(system, x)
        na = len(y)
        J = np.zeros((nc + na, nc + na))
        J[:nc, :nc] = (np.diag(np.exp(x))
                       + system.stoich.T @ (system.stoich * sec[:, None])) \
            * scale[:, None]
        J[:nc, nc:] = M_act.T * scale[:, None]
        J[nc:, :nc] = M_act / LN10
        return J

    fresh = np.log(np.maximum(np.abs(T_target), 1e-20))
    last = None
    for attempt in range(4):
        if attempt == 0:
            x0 = ln_c0
        elif attempt == 1:
            x0 = fresh
        else:
            rng = np.random.default_rng(916233 + attempt)
            x0 = fresh + rng.uniform(-2.0, 2.0, nc)
        z0 = np.concatenate([x0, np.maximum(y0, 0.0)])
        try:
            z, _ = newton_solve(residual, jacobian, z0, tol=tol, max_iter=80,
                                max_step=10.0)
            return z[:nc], z[nc:]
        except NoConvergenceError as exc:
            last = exc
    raise SpeciationError(
        f"equilibrium Newton failed after 3 restarts "
        f"(residual {last.residual_norm:.3e}, targets {T_target!r})") from last


def speciate(system: ChemicalSystem, T, guess: ChemState,
             tol: float = 1e-12) -> ChemState:
    """Dissolved-only equilibrium: find primaries matching totals T > 0."""
    T = np.asarray(T, dtype=np.float64)
    if T.shape != (system.n_primaries,):
        raise ValueError(f"totals shape {T.shape} != ({system.n_primaries},)")
    if not np.all(T > 0):
        raise SpeciationError(f"speciation requires positive totals, got {T!r}")
    ln_c, _ = _solve_cell(system, T, [], guess.ln_c, np.zeros(0), tol)
    return ChemState(np.maximum(ln_c, LN_FLOOR), guess.mineral_moles.copy(),
                     guess.porosity)


def equilibrate_cell(system: ChemicalSystem, T_dissolved, state: ChemState,
                     tol: float = 1e-12):
    """Equilibrate one cell including minerals.

    T_dissolved are the cell's transported (dissolved) totals per m^3 water;
    mineral-bound mass is taken from ``state`` and the combined totals are
    redistributed.  Returns (new state, new dissolved totals).
    """
    T_dissolved = np.asarray(T_dissolved, dtype=np.float64)
    phi = state.porosity
    T_tot = T_dissolved + system.mineral_stoich.T @ state.mineral_moles / phi

    active = [k for k in range(system.n_minerals) if state.mineral_moles[k] > 0]
    ln_c = state.ln_c
    for _ in range(2 * system.n_minerals + 2):
        y0 = state.mineral_moles[active] / phi
        ln_c, y = _solve_cell(system, T_tot, active, ln_c, y0, tol)
        if len(active) and np.min(y) < 0.0:
            del active[int(np.argmin(y))]
            continue
        si = saturation_index(system, ln_c)
        si[active] = -np.inf
        if system.n_minerals and np.max(si) > TOL_SI:
            active.append(int(np.argmax(si)))
            active.sort()
            continue
        moles = np.zeros(system.n_minerals)
        moles[active] = y * phi
        new = ChemState(np.maximum(ln_c, LN_FLOOR), moles, phi)
        return new, totals_from_state(system, new)
    raise SpeciationError(
        f"mineral active set oscillated beyond {2 * system.n_minerals + 2} "
        f"passes (totals {T_tot!r})")


def update_porosity(system: ChemicalSystem, mineral_moles, phi0,
                    mineral_moles0):
    """phi = phi0 - sum_k V_m,k * (moles_k - moles0_k), clamped to [1e-4, 1]."""
    delta = (np.asarray(mineral_moles) - np.asarray(mineral_moles0)) \
        @ system.molar_volume
    phi = np.asarray(phi0, dtype=np.float64) - delta
    clipped = np.clip(phi, PHI_MIN, 1.0)
    if np.any(clipped != phi):
        warnings.warn("porosity clamped to [1e-4, 1]", PorosityClampWarning,
                      stacklevel=2)
    return clipped if clipped.ndim else float(clipped)


class EquilibriumChemistry(NumericalComponent):
    """Cell-by-cell equilibrium chemistry behind the component interface.

    Config keys: ``system`` (ChemicalSystem or its from_config mapping),
    ``n_cells``, ``initial_totals`` ((n_cells, N_c) dissolved),
    ``initial_minerals`` ((n_cells, N_m)), ``porosity`` (scalar or per
    cell), ``tolerance``.

    All three inputs ("totals", "minerals", "porosity") are one-shot state
    injections consumed by the next compute_time_step, which equilibrates
    every cell and refreshes the outputs.  dt is ignored: equilibrium is
    instantaneous.
    """

    application = "chemistry"

    def _initialize(self, config):
        system = config.get("system")
        if isinstance(system, dict):
            system = ChemicalSystem.from_config(system)
        if not isinstance(system, ChemicalSystem):
            raise component.ConfigError("chemistry config needs a system block")
        system.validate()
        self._system = system
        try:
            n = int(config["n_cells"])
        except KeyError as exc:
            raise component.ConfigError(f"chemistry config missing {exc}") from exc
        nc, nm = system.n_primaries, system.n_minerals
        self._tol = float(config.get("tolerance", 1e-12))
        totals = np.array(np.broadcast_to(
            np.asarray(config.get("initial_totals", np.zeros(nc)),
                       dtype=np.float64), (n, nc)))
        minerals = np.array(np.broadcast_to(
            np.asarray(config.get("initial_minerals", np.zeros(nm)),
                       dtype=np.float64), (n, nm)))
        if np.any(minerals < 0):
            raise component.ConfigError("mineral amounts must be >= 0")
        phi = np.broadcast_to(
            np.asarray(config.get("porosity", 1.0), dtype=np.float64), (n,))
        if not np.all((phi > 0) & (phi <= 1)):
            raise component.ConfigError("porosity must lie in (0, 1]")
        self._n = n
        self._totals = totals
        self._minerals = minerals
        self._phi = np.array(phi)
        self._ln_c = np.log(np.maximum(np.abs(totals), 1e-20))
        self._phi_ref = self._phi.copy()
        self._m_ref = minerals.copy()

    def declared_inputs(self):
        return [FieldSpec("totals", CELLS, self._system.n_primaries),
                FieldSpec("minerals", CELLS, max(self._system.n_minerals, 1)),
                FieldSpec("porosity", CELLS, 1)]

    def declared_outputs(self):
        return self.declared_inputs()

    def _compute_time_step(self, t, dt):
        for name, target in (("totals", "_totals"), ("minerals", "_minerals")):
            injected = self._inputs.pop(name, None)
            if injected is not None:
                setattr(self, target, injected.values.copy())
        injected = self._inputs.pop("porosity", None)
        if injected is not None:
            self._phi = injected.values[:, 0].copy()

        system = self._system
        for cell in range(self._n):
            state = ChemState(self._ln_c[cell], self._minerals[cell].copy(),
                              float(self._phi[cell]))
            try:
                new, dissolved = equilibrate_cell(
                    system, self._totals[cell], state, self._tol)
            except SpeciationError as exc:
                return ComponentStatus(ok=False,
                                       message=f"cell {cell}: {exc}")
            self._ln_c[cell] = new.ln_c
            self._minerals[cell] = new.mineral_moles
            self._totals[cell] = dissolved
        if system.n_minerals:
            self._phi = update_porosity(system, self._minerals, self._phi_ref,
                                        self._m_ref)
        return ComponentStatus(ok=True)

    def _get_output_field(self, name):
        system = self._system
        if name == "totals":
            return Field("totals", CELLS, self._totals,
                         list(system.primaries), unit="mol/m3")
        if name == "minerals":
            values = self._minerals if system.n_minerals \
                else np.zeros((self._n, 1))
            names = list(system.mineral_names) or ["none"]
            return Field("minerals", CELLS, values, names, unit="mol/m3")
        return Field("porosity", CELLS, self._phi.reshape(-1, 1), ["porosity"])


class IdentityChemistry(NumericalComponent):
    """Pass-through chemistry: totals come back untouched, no minerals.

    Used when a scenario has no reaction network, so the coupling drivers
    always see a chemistry component.  Config keys: ``n_cells``,
    ``component_names``, ``porosity``, ``initial_totals``.
    """

    application = "chemistry"

    def _initialize(self, config):
        try:
            self._n = int(config["n_cells"])
        except KeyError as exc:
            raise component.ConfigError(f"chemistry config missing {exc}") from exc
        self._names = list(config.get("component_names", ["c0"]))
        self._totals = np.array(np.broadcast_to(np.asarray(
            config.get("initial_totals", np.zeros(len(self._names))),
            dtype=np.float64), (self._n, len(self._names))))
        self._phi = np.array(np.broadcast_to(
            np.asarray(config.get("porosity", 1.0), dtype=np.float64),
            (self._n,)))
        if not np.all((self._phi > 0) & (self._phi <= 1)):
            raise component.ConfigError("porosity must lie in (0, 1]")

    def declared_inputs(self):
        return [FieldSpec("totals", CELLS, len(self._names)),
                FieldSpec("minerals", CELLS, 1),
                FieldSpec("porosity", CELLS, 1)]

    def declared_outputs(self):
        return self.declared_inputs()

    def _compute_time_step(self, t, dt):
        injected = self._inputs.pop("totals", None)
        if injected is not None:
            self._totals = injected.values.copy()
        self._inputs.pop("minerals", None)
        injected = self._inputs.pop("porosity", None)
        if injected is not None:
            self._phi = injected.values[:, 0].copy()
        return ComponentStatus(ok=True)

    def _get_output_field(self, name):
        if name == "totals":
            return Field("totals", CELLS, self._totals, list(self._names),
                         unit="mol/m3")
        if name == "minerals":
            return Field("minerals", CELLS, np.zeros((self._n, 1)), ["none"],
                         unit="mol/m3")
        return Field("porosity", CELLS, self._phi.reshape(-1, 1), ["porosity"])


component.register("chemistry", "equilibrium-reference", EquilibriumChemistry)
component.register("chemistry", "identity", IdentityChemistry)
