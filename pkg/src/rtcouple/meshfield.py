"""Shared mesh/field data model.

All numerical components exchange data through the two containers defined
here: a finite-volume :class:`Mesh` (cells, faces, geometry, boundary tags)
and a :class:`Field` (named multi-component values attached to cells or
faces).  A mesh-plus-fields bundle can be written to and read from the MFF
exchange format, a self-contained binary layout with a bit-exact round trip
for all float payloads.

Meshes are immutable after construction and safe to share between threads;
field values are plain mutable numpy arrays.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field

import numpy as np

CELLS = "CELLS"
FACES = "FACES"
_SUPPORTS = (CELLS, FACES)

MFF_MAGIC = b"MFF1"
MFF_VERSION = 1

BOUNDARY = -1  # right-cell marker for boundary faces


class IncompatibleFieldsError(ValueError):
    """Field algebra between fields of different shape/support."""


class MffFormatError(RuntimeError):
    """Malformed MFF file; carries the byte offset of the defect."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class Mesh:
    """Cell/face finite-volume mesh.

    Geometry is stored with 2-vector centroids and normals even for
    ``dim == 1`` meshes (a single row of cells); ``dim`` records the
    logical dimensionality only.  Interior faces carry the two adjacent
    cells with the unit normal pointing from ``face_left`` to
    ``face_right``; boundary faces carry the adjacent cell in
    ``face_left``, ``BOUNDARY`` in ``face_right``, an outward normal and
    membership in exactly one named boundary tag.
    """

    dim: int
    cell_centroids: np.ndarray   # (n_cells, 2)
    cell_volumes: np.ndarray     # (n_cells,)
    face_areas: np.ndarray       # (n_faces,)
    face_normals: np.ndarray     # (n_faces, 2)
    face_centroids: np.ndarray   # (n_faces, 2)
    face_left: np.ndarray        # (n_faces,) int
    face_right: np.ndarray      # (n_faces,) int, BOUNDARY on the boundary
    boundary_tags: dict = dc_field(default_factory=dict)

    @property
    def n_cells(self) -> int:
        return self.cell_volumes.shape[0]

    @property
    def n_faces(self) -> int:
        return self.face_areas.shape[0]

    @property
    def interior(self) -> np.ndarray:
        """Boolean mask of interior faces."""
        return self.face_right != BOUNDARY

    def n_entities(self, support: str) -> int:
        if support == CELLS:
            return self.n_cells
        if support == FACES:
            return self.n_faces
        raise ValueError(f"unknown support {support!r}; expected CELLS or FACES")

    def validate(self) -> None:
        """Check the geometric/topological invariants; raise ValueError."""
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if not np.all(self.cell_volumes > 0):
            raise ValueError("all cell volumes must be positive")
        if not np.all(self.face_areas > 0):
            raise ValueError("all face areas must be positive")
        norms = np.linalg.norm(self.face_normals, axis=1)
        if not np.all(np.abs(norms - 1.0) <= 1e-12):
            raise ValueError("face normals must have unit length to 1e-12")
        n = self.n_cells
        if not np.all((self.face_left >= 0) & (self.face_left < n)):
            raise ValueError("face_left references a nonexistent cell")
        inter = self.interior
        right = self.face_right
        if not np.all((right[inter] >= 0) & (right[inter] < n)):
            raise ValueError("interior face_right references a nonexistent cell")
        if np.any(self.face_left[inter] == right[inter]):
            raise ValueError("interior face references the same cell twice")
        tagged = np.concatenate([np.asarray(ids, dtype=np.int64)
                                 for ids in self.boundary_tags.values()]) \
            if self.boundary_tags else np.empty(0, dtype=np.int64)
        boundary_ids = np.flatnonzero(~inter)
        if len(np.unique(tagged)) != len(tagged):
            raise ValueError("a face appears in more than one boundary tag")
        if not np.array_equal(np.sort(tagged), boundary_ids):
            raise ValueError("boundary tags must cover exactly the boundary faces")


def build_structured_mesh(nx: int, ny: int, dx: float, dy: float) -> Mesh:
    """Build a rectilinear nx-by-ny mesh of dx-by-dy cells (unit thickness).

    Cells are ordered x-fastest (cell id ``i + nx*j``).  Interior faces come
    first (x-normal then y-normal), then boundary faces tagged LEFT, RIGHT,
    BOTTOM, TOP with outward normals.  ``ny == 1`` yields a logically 1D
    mesh (``dim == 1``) that still carries the four boundary tags.
    """
    if nx < 1 or ny < 1:
        raise ValueError(f"nx and ny must be >= 1, got {nx}, {ny}")
    if not (dx > 0 and dy > 0):
        raise ValueError(f"dx and dy must be positive, got {dx}, {dy}")

    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
    ii = ii.ravel()  # x-fastest: (i, j) -> i + nx*j
    jj = jj.ravel()
    centroids = np.column_stack(((ii + 0.5) * dx, (jj + 0.5) * dy))
    volumes = np.full(nx * ny, dx * dy)

    areas, normals, centers, left, right = [], [], [], [], []

    def cell(i, j):
        return i + nx * j

    # interior faces, x-normal
    for j in range(ny):
        for i in range(nx - 1):
            left.append(cell(i, j))
            right.append(cell(i + 1, j))
            normals.append((1.0, 0.0))
            areas.append(dy)
            centers.append(((i + 1) * dx, (j + 0.5) * dy))
    # interior faces, y-normal
    for j in range(ny - 1):
        for i in range(nx):
            left.append(cell(i, j))
            right.append(cell(i, j + 1))
            normals.append((0.0, 1.0))
            areas.append(dx)
            centers.append(((i + 0.5) * dx, (j + 1) * dy))

    tags = {}
    def boundary(tag, cells_, normal, area, centers_):
        ids = []
        for c, ctr in zip(cells_, centers_):
            ids.append(len(left))
            left.append(c)
            right.append(BOUNDARY)
            normals.append(normal)
            areas.append(area)
            centers.append(ctr)
        tags[tag] = np.asarray(ids, dtype=np.int64)

    boundary("LEFT", [cell(0, j) for j in range(ny)], (-1.0, 0.0), dy,
             [(0.0, (j + 0.5) * dy) for j in range(ny)])
    boundary("RIGHT", [cell(nx - 1, j) for j in range(ny)], (1.0, 0.0), dy,
             [(nx * dx, (j + 0.5) * dy) for j in range(ny)])
    boundary("BOTTOM", [cell(i, 0) for i in range(nx)], (0.0, -1.0), dx,
             [((i + 0.5) * dx, 0.0) for i in range(nx)])
    boundary("TOP", [cell(i, ny - 1) for i in range(nx)], (0.0, 1.0), dx,
             [((i + 0.5) * dx, ny * dy) for i in range(nx)])

    mesh = Mesh(
        dim=1 if ny == 1 else 2,
        cell_centroids=centroids,
        cell_volumes=volumes,
        face_areas=np.asarray(areas),
        face_normals=np.asarray(normals),
        face_centroids=np.asarray(centers),
        face_left=np.asarray(left, dtype=np.int64),
        face_right=np.asarray(right, dtype=np.int64),
        boundary_tags=tags,
    )
    mesh.validate()
    return mesh


@dataclass
class Field:
    """Named multi-component values on mesh cells or faces.

    ``values`` has shape (n_entities, n_components), float64.  Fields do
    not hold a mesh reference; entity-count consistency is checked where a
    mesh is in scope (components, MFF documents).
    """

    name: str
    support: str
    values: np.ndarray
    component_names: list | None = None
    time: float = 0.0
    unit: str = ""

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=np.float64))
        if self.support not in _SUPPORTS:
            raise ValueError(f"unknown support {self.support!r}")
        if self.component_names is None:
            self.component_names = [f"c{k}" for k in range(self.n_components)]
        if len(self.component_names) != self.n_components:
            raise ValueError(
                f"field {self.name!r}: {len(self.component_names)} component "
                f"names for {self.n_components} components")
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"field {self.name!r} contains non-finite values")

    @property
    def n_components(self) -> int:
        return self.values.shape[1]

    @property
    def n_entities(self) -> int:
        return self.values.shape[0]

    def copy(self) -> "Field":
        return Field(self.name, self.support, self.values.copy(),
                     list(self.component_names), self.time, self.unit)


def _check_compatible(x: Field, y: Field) -> None:
    if x.support != y.support or x.values.shape != y.values.shape:
        raise IncompatibleFieldsError(
            f"fields {x.name!r} ({x.support}, {x.values.shape}) and "
            f"{y.name!r} ({y.support}, {y.values.shape}) are not compatible")


def field_axpy(alpha: float, x: Field, y: Field) -> Field:
    """Return alpha*x + y; metadata (name, time, unit) taken from y."""
    _check_compatible(x, y)
    return Field(y.name, y.support, alpha * x.values + y.values,
                 list(y.component_names), y.time, y.unit)


def field_norm(x: Field, kind: str = "L2") -> float:
    """L2 (sqrt of sum of squares) or LINF (max magnitude) over all entries."""
    if x.values.size == 0:
        raise ValueError("norm of an empty field")
    if kind == "L2":
        return float(np.sqrt(np.sum(x.values * x.values)))
    if kind == "LINF":
        return float(np.max(np.abs(x.values)))
    raise ValueError(f"unknown norm kind {kind!r}; expected L2 or LINF")


@dataclass
class MffDocument:
    """A mesh with a list of fields, the unit of MFF file exchange."""

    mesh: Mesh
    fields: list
    format_version: int = MFF_VERSION

    def validate(self) -> None:
        self.mesh.validate()
        for f in self.fields:
            expect = self.mesh.n_entities(f.support)
            if f.n_entities != expect:
                raise ValueError(
                    f"field {f.name!r} has {f.n_entities} entities, mesh has "
                    f"{expect} {f.support}")


# --- MFF serialization ------------------------------------------------------
#
# Layout: b"MFF1" | uint32-le header length | UTF-8 JSON header | payload
# section.  The header holds topology (integer arrays, tags), field metadata
# and the offset/shape of every float payload; all float64 arrays live in the
# payload section as raw little-endian bytes, so the round trip is bit-exact.

_MESH_PAYLOADS = ("cell_centroids", "cell_volumes", "face_areas",
                  "face_normals", "face_centroids")


def write_mff(path, doc: MffDocument) -> None:
    doc.validate()
    payloads = []
    blobs = []
    offset = 0

    def add(name, arr):
        nonlocal offset
        blob = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        payloads.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)

    m = doc.mesh
    for name in _MESH_PAYLOADS:
        add(name, getattr(m, name))
    fields_meta = []
    for k, f in enumerate(doc.fields):
        add(f"field{k}", f.values)
        fields_meta.append({
            "name": f.name, "support": f.support,
            "n_components": f.n_components,
            "component_names": list(f.component_names),
            "time": f.time, "unit": f.unit,
            "payload": len(payloads) - 1,
        })

    header = {
        "format_version": doc.format_version,
        "mesh": {
            "dim": m.dim,
            "n_cells": m.n_cells,
            "n_faces": m.n_faces,
            "face_left": m.face_left.tolist(),
            "face_right": m.face_right.tolist(),
            "boundary_tags": {t: np.asarray(ids).tolist()
                              for t, ids in m.boundary_tags.items()},
        },
        "fields": fields_meta,
        "payloads": payloads,
    }
    hbytes = json.dumps(header, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MFF_MAGIC)
        fh.write(len(hbytes).to_bytes(4, "little"))
        fh.write(hbytes)
        for blob in blobs:
            fh.write(blob)


def read_mff(path) -> MffDocument:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[:4] != MFF_MAGIC:
        raise MffFormatError("bad magic bytes, not an MFF file", 0)
    if len(raw) < 8:
        raise MffFormatError("truncated header length", 4)
    hlen = int.from_bytes(raw[4:8], "little")
    if len(raw) < 8 + hlen:
        raise MffFormatError("truncated header", 8)
    try:
        header = json.loads(raw[8:8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MffFormatError(f"unreadable header: {exc}", 8) from exc
    version = header.get("format_version")
    if version != MFF_VERSION:
        raise MffFormatError(
            f"unsupported format version {version!r} (expected {MFF_VERSION})", 8)

    base = 8 + hlen

    def payload(idx):
        meta = header["payloads"][idx]
        shape = tuple(meta["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = base + meta["offset"]
        end = start + 8 * count
        if end > len(raw):
            raise MffFormatError(
                f"truncated payload {meta['name']!r}", start)
        return np.frombuffer(raw[start:end], dtype="<f8").reshape(shape).copy()

    hm = header["mesh"]
    by_name = {p["name"]: i for i, p in enumerate(header["payloads"])}
    mesh = Mesh(
        dim=hm["dim"],
        cell_centroids=payload(by_name["cell_centroids"]),
        cell_volumes=payload(by_name["cell_volumes"]),
        face_areas=payload(by_name["face_areas"]),
        face_normals=payload(by_name["face_normals"]),
        face_centroids=payload(by_name["face_centroids"]),
        face_left=np.asarray(hm["face_left"], dtype=np.int64),
        face_right=np.asarray(hm["face_right"], dtype=np.int64),
        boundary_tags={t: np.asarray(ids, dtype=np.int64)
                       for t, ids in hm["boundary_tags"].items()},
    )
    fields = []
    for fm in header["fields"]:
        fields.append(Field(fm["name"], fm["support"], payload(fm["payload"]),
                            list(fm["component_names"]), fm["time"], fm["unit"]))
    doc = MffDocument(mesh=mesh, fields=fields, format_version=version)
    doc.validate()
    return doc


def export_vtk(doc: MffDocument, path) -> None:
    """Write cell fields as legacy-ASCII VTK point data at cell centroids.

    Each field component becomes one SCALARS array; face fields are skipped.
    """
    m = doc.mesh
    n = m.n_cells
    lines = ["# vtk DataFile Version 3.0", "rtcouple cell fields", "ASCII",
             "DATASET POLYDATA", f"POINTS {n} double"]
    for x, y in m.cell_centroids:
        lines.append(f"{x!r} {y!r} 0.0")
    lines.append(f"VERTICES {n} {2 * n}")
    lines.extend(f"1 {i}" for i in range(n))
    lines.append(f"POINT_DATA {n}")
    for f in doc.fields:
        if f.support != CELLS:
            continue
        for k, comp in enumerate(f.component_names):
            safe = f"{f.name}_{comp}".replace(" ", "_")
            lines.append(f"SCALARS {safe} double 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend(repr(v) for v in f.values[:, k])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
