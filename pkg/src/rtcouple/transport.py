"""Cell-centered finite-volume solute transport.

Per species the operator solves

    phi*R dc/dt + div(q c - phi*(d_e + alpha_L*|v|) grad c)
        = -lambda*phi*R*c + lambda_p*phi*R_p*c_p + source

with upwind advection, two-point diffusion/dispersion and a theta time
scheme.  Species are solved one sparse system at a time; decay-chain
ingrowth enters the right-hand side using the parent's already-updated
values (parents are solved first in topological order), so a chain costs
one solve per species.

Boundary handling: faces in tags listed in ``boundary_conc`` carry a fixed
concentration (upwinded on inflow, half-cell diffusive exchange); all other
boundary faces are advective-outflow only with zero diffusive flux.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from . import component
from .component import ComponentStatus, FieldSpec, NumericalComponent
from .meshfield import CELLS, FACES, Field, Mesh
from .numerics import SparseMatrix, solve_sparse


class StepRejectedError(RuntimeError):
    """Explicit-scheme CFL violation; carries a step size that satisfies it."""

    def __init__(self, message: str, suggested_dt: float):
        super().__init__(message)
        self.suggested_dt = suggested_dt


def dispersion_coefficient(v_face: float, d_e: float, alpha_L: float):
    """Longitudinal model d_e + alpha_L*|v|, v the pore velocity at the face."""
    return d_e + alpha_L * np.abs(v_face)


def decay_order(parents) -> list:
    """Topological order of a decay chain (parents before children)."""
    parents = list(parents)
    remaining = set(range(len(parents)))
    order = []
    while remaining:
        ready = sorted(i for i in remaining
                       if parents[i] < 0 or parents[i] not in remaining)
        if not ready:
            raise ValueError("decay-chain parent graph has a cycle")
        order.extend(ready)
        remaining.difference_update(ready)
    return order


@dataclass
class TransportParams:
    """Everything the transport operator needs besides the state itself."""

    mesh: Mesh
    face_flux: Field                 # FACES, m^3/s signed along the normal
    porosity: Field                  # CELLS, (0, 1]
    effective_diffusion: np.ndarray  # per species, m^2/s
    dispersivity: float              # alpha_L, m
    retardation: np.ndarray          # per species, >= 1
    decay_rates: np.ndarray          # per species, 1/s
    parents: np.ndarray              # per species, index of parent or -1
    theta: float = 1.0
    boundary_conc: dict = dc_field(default_factory=dict)  # tag -> (n_species,)
    solver_tolerance: float = 1e-12
    solver_max_iter: int = 20000

    def __post_init__(self):
        self.effective_diffusion = np.atleast_1d(
            np.asarray(self.effective_diffusion, dtype=np.float64))
        self.retardation = np.atleast_1d(
            np.asarray(self.retardation, dtype=np.float64))
        self.decay_rates = np.atleast_1d(
            np.asarray(self.decay_rates, dtype=np.float64))
        self.parents = np.atleast_1d(np.asarray(self.parents, dtype=np.int64))

    @property
    def n_species(self) -> int:
        return len(self.effective_diffusion)

    def validate(self) -> None:
        ns = self.n_species
        for name, arr in (("retardation", self.retardation),
                          ("decay_rates", self.decay_rates),
                          ("parents", self.parents)):
            if arr.shape != (ns,):
                raise ValueError(f"{name} shape {arr.shape} != ({ns},)")
        phi = self.porosity.values[:, 0]
        if self.porosity.n_entities != self.mesh.n_cells:
            raise ValueError("porosity field does not match the mesh")
        if self.face_flux.n_entities != self.mesh.n_faces:
            raise ValueError("flux field does not match the mesh")
        if not np.all((phi > 0) & (phi <= 1)):
            raise ValueError("porosity must lie in (0, 1]")
        if not np.all(self.retardation >= 1):
            raise ValueError("retardation must be >= 1")
        if not np.all(self.decay_rates >= 0):
            raise ValueError("decay rates must be >= 0")
        if not np.all(self.effective_diffusion >= 0):
            raise ValueError("effective diffusion must be >= 0")
        if self.dispersivity < 0:
            raise ValueError("dispersivity must be >= 0")
        if not (0.0 <= self.theta <= 1.0):
            raise ValueError("theta must lie in [0, 1]")
        decay_order(self.parents)
        for tag, conc in self.boundary_conc.items():
            if tag not in self.mesh.boundary_tags:
                raise ValueError(f"unknown boundary tag {tag!r}")
            if np.asarray(conc).shape != (ns,):
                raise ValueError(f"boundary_conc[{tag!r}] needs {ns} values")


@dataclass
class TransportState:
    conc: Field  # CELLS x n_species, mol/m^3 of water
    time: float = 0.0


def _face_geometry(params: TransportParams):
    """Face porosity, pore velocity and two-point distances."""
    mesh = params.mesh
    L, R = mesh.face_left, mesh.face_right
    interior = mesh.interior
    phi = params.porosity.values[:, 0]
    q = params.face_flux.values[:, 0]

    phi_f = phi[L].copy()
    phi_f[interior] = 0.5 * (phi[L[interior]] + phi[R[interior]])
    v_f = q / (phi_f * mesh.face_areas)

    nrm = mesh.face_normals
    dist = np.abs(np.einsum("ij,ij->i",
                            mesh.face_centroids - mesh.cell_centroids[L], nrm))
    i = interior
    dist[i] = np.abs(np.einsum(
        "ij,ij->i", mesh.cell_centroids[R[i]] - mesh.cell_centroids[L[i]], nrm[i]))
    return phi_f, v_f, dist


def _cfl_limit(params: TransportParams) -> float:
    """Largest dt the explicit advective part allows (theta < 1)."""
    mesh = params.mesh
    q = params.face_flux.values[:, 0]
    L, R = mesh.face_left, mesh.face_right
    interior = mesh.interior
    out = np.zeros(mesh.n_cells)
    np.add.at(out, L, np.maximum(q, 0.0))
    np.add.at(out, R[interior], np.maximum(-q[interior], 0.0))
    phi = params.porosity.values[:, 0]
    cap = phi * mesh.cell_volumes * np.min(params.retardation)
    active = out > 0
    if not np.any(active):
        return np.inf
    return float(np.min(cap[active] / out[active]))


def transport_step(state: TransportState, dt: float, params: TransportParams,
                   source: Field | None = None,
                   reaction: Field | None = None) -> TransportState:
    """Advance all species by one step of size dt.

    ``source`` is a per-cell rate in mol/(m^3 bulk * s), applied with full
    weight over the step.  ``reaction`` is a per-cell concentration
    increment (mol/m^3 water over this step) injected into the storage
    term, the exchange channel the iterative coupling driver uses.  Raises
    StepRejectedError when theta < 1 and dt exceeds the advective CFL
    bound, with the admissible dt attached.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    params.validate()
    mesh = params.mesh
    ns = params.n_species
    c_old = state.conc.values
    if c_old.shape != (mesh.n_cells, ns):
        raise ValueError(
            f"state shape {c_old.shape} != ({mesh.n_cells}, {ns})")
    src = np.zeros_like(c_old) if source is None else source.values
    if src.shape != c_old.shape:
        raise ValueError("source field shape does not match the state")
    rxn = np.zeros_like(c_old) if reaction is None else reaction.values
    if rxn.shape != c_old.shape:
        raise ValueError("reaction field shape does not match the state")

    theta = params.theta
    if theta < 1.0:
        dt_max = _cfl_limit(params)
        if dt > dt_max * (1.0 + 1e-9):
            raise StepRejectedError(
                f"dt={dt:.6g} violates the CFL bound {dt_max:.6g}", dt_max)

    phi = params.porosity.values[:, 0]
    V = mesh.cell_volumes
    q = params.face_flux.values[:, 0]
    L, R = mesh.face_left, mesh.face_right
    interior = mesh.interior
    i = np.flatnonzero(interior)
    b = np.flatnonzero(~interior)
    phi_f, v_f, dist = _face_geometry(params)
    qpos = np.maximum(q, 0.0)
    qneg = np.minimum(q, 0.0)

    # fixed-concentration boundary faces
    bc_mask = np.zeros(mesh.n_faces, dtype=bool)
    bc_conc = np.zeros((mesh.n_faces, ns))
    for tag, conc in params.boundary_conc.items():
        ids = mesh.boundary_tags[tag]
        bc_mask[ids] = True
        bc_conc[ids] = np.asarray(conc, dtype=np.float64)
    bd = np.flatnonzero(bc_mask)

    c_new = np.empty_like(c_old)
    for s in decay_order(params.parents):
        D_f = dispersion_coefficient(v_f, params.effective_diffusion[s],
                                     params.dispersivity)
        G = np.zeros(mesh.n_faces)
        G[i] = phi_f[i] * D_f[i] * mesh.face_areas[i] / dist[i]
        G[bd] = phi_f[bd] * D_f[bd] * mesh.face_areas[bd] / dist[bd]

        # advection-diffusion operator: (A c)_cell = net outflux of the cell
        rows = np.concatenate([L[i], R[i], L[i], R[i],
                               L[i], L[i], R[i], R[i], L[b]])
        cols = np.concatenate([L[i], L[i], R[i], R[i],
                               L[i], R[i], R[i], L[i], L[b]])
        vals = np.concatenate([qpos[i], -qpos[i], qneg[i], -qneg[i],
                               G[i], -G[i], G[i], -G[i], qpos[b]])
        # half-cell Dirichlet exchange on fixed-concentration faces
        rows = np.concatenate([rows, L[bd]])
        cols = np.concatenate([cols, L[bd]])
        vals = np.concatenate([vals, G[bd]])
        A = SparseMatrix.from_triplets(mesh.n_cells, rows, cols, vals)

        b_bc = np.zeros(mesh.n_cells)
        np.add.at(b_bc, L[bd], (G[bd] - qneg[bd]) * bc_conc[bd, s])

        lam = params.decay_rates[s]
        Rs = params.retardation[s]
        Dt = phi * Rs * V / dt
        dec = lam * phi * Rs * V

        grow_old = np.zeros(mesh.n_cells)
        grow_new = np.zeros(mesh.n_cells)
        p = params.parents[s]
        if p >= 0:
            coef = params.decay_rates[p] * params.retardation[p] * phi * V
            grow_old = coef * c_old[:, p]
            grow_new = coef * c_new[:, p]  # parent already solved this step

        expl = A.matvec(c_old[:, s]) + dec * c_old[:, s]
        rhs = (Dt * (c_old[:, s] + rxn[:, s]) - (1.0 - theta) * expl
               + b_bc + V * src[:, s]
               + theta * grow_new + (1.0 - theta) * grow_old)

        if theta == 0.0:
            c_new[:, s] = rhs / Dt
        else:
            M = SparseMatrix.from_triplets(
                mesh.n_cells,
                np.concatenate([rows, np.arange(mesh.n_cells)]),
                np.concatenate([cols, np.arange(mesh.n_cells)]),
                np.concatenate([theta * vals, Dt + theta * dec]))
            c_new[:, s] = solve_sparse(M, rhs, tol=params.solver_tolerance,
                                       max_iter=params.solver_max_iter)

    conc = Field(state.conc.name, CELLS, c_new,
                 list(state.conc.component_names), state.time + dt,
                 state.conc.unit)
    return TransportState(conc=conc, time=state.time + dt)


def uniform_flux_field(mesh: Mesh, velocity) -> Field:
    """Face flux field for a uniform Darcy velocity vector (m/s)."""
    u = np.asarray(velocity, dtype=np.float64)
    q = mesh.face_normals @ u * mesh.face_areas
    return Field("flux", FACES, q.reshape(-1, 1), ["flux"], unit="m3/s")


class FiniteVolumeTransport(NumericalComponent):
    """Transport operator behind the component interface.

    Config keys: ``mesh``, ``species`` (list of dicts with name,
    effective_diffusion, retardation, decay_rate, parent), ``dispersivity``,
    ``theta``, ``porosity`` (scalar or per-cell initial), ``initial_conc``
    ((n_cells, n_species)), ``boundary_concentrations`` (tag ->
    {species: value}) and ``solver_tolerance``.

    The "conc" (state injection) and "reaction" (coupling exchange) inputs
    are one-shot, consumed by the next compute_time_step; "flux",
    "porosity" and "source" persist until overwritten.
    """

    application = "transport"

    def _initialize(self, config):
        try:
            self._mesh: Mesh = config["mesh"]
            species = config["species"]
        except KeyError as exc:
            raise component.ConfigError(f"transport config missing {exc}") from exc
        if not species:
            raise component.ConfigError("transport needs at least one species")
        self._names = [sp["name"] for sp in species]
        if len(set(self._names)) != len(self._names):
            raise component.ConfigError("duplicate species names")
        ns = len(species)
        n = self._mesh.n_cells
        self._d_e = np.array([sp.get("effective_diffusion", 0.0) for sp in species])
        self._retard = np.array([sp.get("retardation", 1.0) for sp in species])
        self._decay = np.array([sp.get("decay_rate", 0.0) for sp in species])
        parents = []
        for sp in species:
            parent = sp.get("parent")
            if parent is None:
                parents.append(-1)
            elif parent in self._names:
                parents.append(self._names.index(parent))
            else:
                raise component.ConfigError(
                    f"unknown parent species {parent!r}")
        self._parents = np.asarray(parents, dtype=np.int64)
        self._alpha = float(config.get("dispersivity", 0.0))
        self._theta = float(config.get("theta", 1.0))
        self._tol = float(config.get("solver_tolerance", 1e-12))
        phi = np.broadcast_to(
            np.asarray(config.get("porosity", 1.0), dtype=np.float64), (n,)).copy()
        self._phi0 = Field("porosity", CELLS, phi.reshape(-1, 1), ["porosity"])
        init = np.asarray(config.get("initial_conc", np.zeros((n, ns))),
                          dtype=np.float64)
        if init.shape != (n, ns):
            raise component.ConfigError(
                f"initial_conc shape {init.shape} != ({n}, {ns})")
        self._bc = {}
        for tag, by_species in dict(config.get("boundary_concentrations", {})).items():
            vec = np.zeros(ns)
            for name, value in by_species.items():
                if name not in self._names:
                    raise component.ConfigError(
                        f"boundary concentration for unknown species {name!r}")
                vec[self._names.index(name)] = value
            self._bc[tag] = vec
        self._state = TransportState(
            Field("conc", CELLS, init, list(self._names), 0.0, "mol/m3"), 0.0)
        # validate the static parts against a zero-flux placeholder
        self._params(Field("flux", FACES,
                           np.zeros((self._mesh.n_faces, 1)))).validate()

    def _params(self, flux: Field) -> TransportParams:
        porosity = self._inputs.get("porosity", self._phi0)
        return TransportParams(
            mesh=self._mesh, face_flux=flux, porosity=porosity,
            effective_diffusion=self._d_e, dispersivity=self._alpha,
            retardation=self._retard, decay_rates=self._decay,
            parents=self._parents, theta=self._theta, boundary_conc=self._bc,
            solver_tolerance=self._tol)

    def declared_inputs(self):
        ns = len(self._names)
        return [FieldSpec("conc", CELLS, ns), FieldSpec("flux", FACES, 1),
                FieldSpec("porosity", CELLS, 1), FieldSpec("source", CELLS, ns),
                FieldSpec("reaction", CELLS, ns)]

    def declared_outputs(self):
        return [FieldSpec("conc", CELLS, len(self._names))]

    def _compute_time_step(self, t, dt):
        injected = self._inputs.pop("conc", None)
        if injected is not None:
            self._state = TransportState(injected, t)
        reaction = self._inputs.pop("reaction", None)
        flux = self._input("flux")
        source = self._inputs.get("source")
        try:
            self._state = transport_step(self._state, dt, self._params(flux),
                                         source, reaction)
        except StepRejectedError as exc:
            return ComponentStatus(ok=False, message=str(exc),
                                   suggested_dt=exc.suggested_dt)
        return ComponentStatus(ok=True)

    def _get_output_field(self, name):
        return self._state.conc


component.register("transport", "fv-reference", FiniteVolumeTransport)
