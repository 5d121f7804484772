"""Steady saturated Darcy flow on the finite-volume mesh.

Two-point flux approximation with harmonic-mean face conductivity; fixed
head or no-flow boundary conditions per boundary tag.  The solution provides
the signed volumetric face fluxes consumed by the transport operator, and
can be re-solved when porosity feedback changes the conductivity through
the Kozeny-Carman ratio.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from . import component
from .component import ComponentStatus, FieldSpec, NumericalComponent
from .meshfield import BOUNDARY, CELLS, FACES, Field, Mesh
from .numerics import SparseMatrix, solve_sparse


class IllPosedProblemError(ValueError):
    """No fixed-head boundary: the pressure system is singular."""


@dataclass
class FlowProblem:
    """Mesh, hydraulic conductivity (m/s, per cell) and head BCs.

    ``boundary_heads`` maps tag name -> imposed head (m); tags not listed
    are no-flow.
    """

    mesh: Mesh
    conductivity: np.ndarray
    boundary_heads: dict = dc_field(default_factory=dict)

    def validate(self) -> None:
        k = np.asarray(self.conductivity, dtype=np.float64)
        if k.shape != (self.mesh.n_cells,):
            raise ValueError(
                f"conductivity shape {k.shape} != ({self.mesh.n_cells},)")
        if not np.all(k > 0):
            raise ValueError("conductivity must be positive everywhere")
        for tag in self.boundary_heads:
            if tag not in self.mesh.boundary_tags:
                raise ValueError(f"unknown boundary tag {tag!r}")
        if not any(len(self.mesh.boundary_tags[t]) > 0
                   for t in self.boundary_heads):
            raise IllPosedProblemError(
                "at least one fixed-head boundary is required")


@dataclass
class FlowSolution:
    head: Field       # CELLS, m
    face_flux: Field  # FACES, m^3/s signed along the face normal


def _face_transmissibilities(mesh: Mesh, k: np.ndarray, head_faces: np.ndarray):
    """Per-face transmissibility T with flux = T * (h_left - h_other).

    Interior faces use the series (harmonic) combination of the two
    half-cell conductances; fixed-head boundary faces use the half-cell
    conductance so the imposed head is reproduced at the face itself.
    """
    L, R = mesh.face_left, mesh.face_right
    interior = mesh.interior
    nrm = mesh.face_normals
    d_left = np.abs(np.einsum("ij,ij->i",
                              mesh.face_centroids - mesh.cell_centroids[L], nrm))
    T = np.zeros(mesh.n_faces)

    i = interior
    d_right = np.abs(np.einsum("ij,ij->i",
                               mesh.cell_centroids[R[i]] - mesh.face_centroids[i],
                               nrm[i]))
    T[i] = mesh.face_areas[i] / (d_left[i] / k[L[i]] + d_right / k[R[i]])

    hb = head_faces
    T[hb] = mesh.face_areas[hb] * k[L[hb]] / d_left[hb]
    return T


def solve_darcy(problem: FlowProblem, tol: float = 1e-12) -> FlowSolution:
    """Solve for cell heads and signed face fluxes (m^3/s along the normal)."""
    problem.validate()
    mesh = problem.mesh
    k = np.asarray(problem.conductivity, dtype=np.float64)
    n = mesh.n_cells
    L, R = mesh.face_left, mesh.face_right

    head_face_ids = np.concatenate(
        [mesh.boundary_tags[t] for t in problem.boundary_heads]) \
        if problem.boundary_heads else np.empty(0, dtype=np.int64)
    head_face_mask = np.zeros(mesh.n_faces, dtype=bool)
    head_face_mask[head_face_ids] = True
    bc_value = np.zeros(mesh.n_faces)
    for tag, h in problem.boundary_heads.items():
        bc_value[mesh.boundary_tags[tag]] = h

    T = _face_transmissibilities(mesh, k, head_face_mask)

    rows, cols, vals = [], [], []
    rhs = np.zeros(n)
    i = np.flatnonzero(mesh.interior)
    rows.extend([L[i], L[i], R[i], R[i]])
    cols.extend([L[i], R[i], R[i], L[i]])
    vals.extend([T[i], -T[i], T[i], -T[i]])
    b = np.flatnonzero(head_face_mask)
    rows.append(L[b])
    cols.append(L[b])
    vals.append(T[b])
    np.add.at(rhs, L[b], T[b] * bc_value[b])

    A = SparseMatrix.from_triplets(n, np.concatenate(rows),
                                   np.concatenate(cols), np.concatenate(vals))
    h = solve_sparse(A, rhs, tol=tol)

    flux = np.zeros(mesh.n_faces)
    flux[i] = T[i] * (h[L[i]] - h[R[i]])
    flux[b] = T[b] * (h[L[b]] - bc_value[b])

    head = Field("head", CELLS, h.reshape(-1, 1), ["head"], unit="m")
    face_flux = Field("flux", FACES, flux.reshape(-1, 1), ["flux"], unit="m3/s")
    return FlowSolution(head=head, face_flux=face_flux)


def kozeny_carman(k0: np.ndarray, phi: np.ndarray, phi0: np.ndarray) -> np.ndarray:
    """Conductivity ratio K = K0 * (phi/phi0)^3 * ((1-phi0)/(1-phi))^2.

    phi is clipped just below 1 to keep the ratio finite.
    """
    phi = np.minimum(np.asarray(phi, dtype=np.float64), 1.0 - 1e-12)
    phi0 = np.minimum(np.asarray(phi0, dtype=np.float64), 1.0 - 1e-12)
    return k0 * (phi / phi0) ** 3 * ((1.0 - phi0) / (1.0 - phi)) ** 2


class DarcyFlowComponent(NumericalComponent):
    """Steady Darcy solver behind the component interface.

    Config keys: ``mesh`` (Mesh), ``conductivity`` (scalar or per-cell),
    ``boundary_heads`` (tag -> head), optional ``reference_porosity``
    (scalar or per-cell; enables Kozeny-Carman scaling from the "porosity"
    input field) and ``solver_tolerance``.
    """

    application = "flow"

    def _initialize(self, config):
        try:
            self._mesh: Mesh = config["mesh"]
            k = config["conductivity"]
            self._boundary_heads = dict(config["boundary_heads"])
        except KeyError as exc:
            raise component.ConfigError(f"flow config missing {exc}") from exc
        n = self._mesh.n_cells
        self._k0 = np.broadcast_to(np.asarray(k, dtype=np.float64), (n,)).copy()
        phi0 = config.get("reference_porosity")
        self._phi0 = None if phi0 is None else \
            np.broadcast_to(np.asarray(phi0, dtype=np.float64), (n,)).copy()
        self._tol = float(config.get("solver_tolerance", 1e-12))
        FlowProblem(self._mesh, self._k0, self._boundary_heads).validate()
        self._head = Field("head", CELLS, np.zeros((n, 1)), ["head"], unit="m")
        self._flux = Field("flux", FACES, np.zeros((self._mesh.n_faces, 1)),
                           ["flux"], unit="m3/s")

    def declared_inputs(self):
        return [FieldSpec("porosity", CELLS, 1)]

    def declared_outputs(self):
        return [FieldSpec("head", CELLS, 1), FieldSpec("flux", FACES, 1)]

    def _compute_time_step(self, t, dt):
        k = self._k0
        if "porosity" in self._inputs:
            if self._phi0 is None:
                raise component.ConfigError(
                    "porosity input set but no reference_porosity configured")
            k = kozeny_carman(self._k0, self._inputs["porosity"].values[:, 0],
                              self._phi0)
        sol = solve_darcy(FlowProblem(self._mesh, k, self._boundary_heads),
                          tol=self._tol)
        sol.head.time = sol.face_flux.time = t
        self._head, self._flux = sol.head, sol.face_flux
        return ComponentStatus(ok=True)

    def _get_output_field(self, name):
        return self._head if name == "head" else self._flux


component.register("flow", "darcy-reference", DarcyFlowComponent)
