"""Scenario files: JSON schema, validation, build and the run loop.

A scenario is a single JSON document with blocks ``mesh``, ``flow``
(optional), ``transport``, ``chemistry`` (optional), ``coupling``,
``waste_packages`` (optional) and ``output``.  ``validate_scenario``
returns a list of diagnostics, each carrying the dotted config path it
refers to; an empty list means the scenario is runnable.

``run_simulation`` builds every component through the registry, solves the
initial flow field, time-loops the configured splitting mode with
waste-package sources and optional porosity feedback, and writes CSV time
series, MFF snapshots, a run log and a JSON manifest into the output
directory.  All outputs are deterministic byte-for-byte except the
manifest, which records wall-clock times.
"""

from __future__ import annotations

import copy
import datetime
import hashlib
import json
import math
import os
import warnings
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import __version__, component
from .coupling import (CouplingConfig, SiaReport, StepFailure,
                       WastePackageState, _split_step, waste_package_step)
from .meshfield import (CELLS, FACES, Field, Mesh, MffDocument,
                        build_structured_mesh, write_mff)

_TAGS = ("LEFT", "RIGHT", "BOTTOM", "TOP")


class ScenarioError(ValueError):
    """Scenario failed validation; carries the diagnostics."""

    def __init__(self, diagnostics):
        super().__init__("; ".join(str(d) for d in diagnostics))
        self.diagnostics = list(diagnostics)


class SimulationAbort(RuntimeError):
    pass


@dataclass
class Diagnostic:
    path: str
    message: str

    def __str__(self):
        return f"{self.path}: {self.message}"


def load_scenario(path) -> dict:
    """Parse the JSON file; parse errors carry line/column."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError([Diagnostic(
            str(path), f"JSON parse error at line {exc.lineno} column "
            f"{exc.colno}: {exc.msg}")]) from exc
    if not isinstance(doc, dict):
        raise ScenarioError([Diagnostic(str(path),
                                        "scenario root must be an object")])
    return doc


def apply_overrides(doc: dict, assignments) -> dict:
    """Dotted-path substitutions, e.g. coupling.mode=SIA.

    Integer segments index lists (waste_packages.0.rate_constant); values
    parse as JSON with a fallback to plain strings.
    """
    out = copy.deepcopy(doc)
    for item in assignments:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ValueError(f"override {item!r} is not of the form key=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            if isinstance(node, list):
                node = node[int(part)]
            else:
                node = node.setdefault(part, {})
            if not isinstance(node, (dict, list)):
                raise ValueError(f"override path {key!r} runs through a "
                                 "non-container value")
        if isinstance(node, list):
            node[int(parts[-1])] = value
        else:
            node[parts[-1]] = value
    return out


class _Checker:
    """Collects diagnostics while walking the document."""

    def __init__(self):
        self.diagnostics = []

    def add(self, path, message):
        self.diagnostics.append(Diagnostic(path, message))

    def number(self, block, key, path, *, low=None, high=None, required=False,
               default=None):
        if key not in block:
            if required:
                self.add(path, "missing required value")
            return default
        value = block[key]
        if not isinstance(value, (int, float)) or isinstance(value, bool) \
                or not math.isfinite(value):
            self.add(path, f"expected a finite number, got {value!r}")
            return default
        if low is not None and value < low:
            self.add(path, f"must be >= {low}, got {value}")
        if high is not None and value > high:
            self.add(path, f"must be <= {high}, got {value}")
        return value


def _cell_array(value, n, path, check, *, positive=False, unit_max=False):
    """Scalar or length-n list -> (n,) array, with range diagnostics."""
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = np.full(n, float(arr))
    if arr.shape != (n,):
        check.add(path, f"expected a scalar or {n} values, got shape {arr.shape}")
        return None
    if positive and not np.all(arr > 0):
        check.add(path, "all values must be > 0")
        return None
    if unit_max and not np.all(arr <= 1):
        check.add(path, "all values must be <= 1")
        return None
    return arr


def _region_cells(spec, n, path, check):
    if spec == "all":
        return np.arange(n)
    if isinstance(spec, list) and len(spec) == 2 \
            and all(isinstance(v, int) for v in spec):
        lo, hi = spec
        if not (0 <= lo <= hi < n):
            check.add(path, f"cell range [{lo}, {hi}] outside [0, {n - 1}]")
            return None
        return np.arange(lo, hi + 1)
    if isinstance(spec, list) and all(isinstance(v, int) for v in spec):
        ids = np.asarray(spec, dtype=np.int64)
        if len(ids) and (ids.min() < 0 or ids.max() >= n):
            check.add(path, f"cell ids outside [0, {n - 1}]")
            return None
        return ids
    check.add(path, 'expected "all", [lo, hi] or a list of cell ids')
    return None


def validate_scenario(doc: dict) -> list:
    """Structural and numeric checks; [] means runnable."""
    check = _Checker()
    if not isinstance(doc, dict):
        return [Diagnostic("scenario", "scenario root must be an object")]

    mesh_blk = doc.get("mesh")
    if not isinstance(mesh_blk, dict):
        check.add("mesh", "missing required block")
        return check.diagnostics
    nx = mesh_blk.get("nx", 0)
    ny = mesh_blk.get("ny", 1)
    for key, value in (("nx", nx), ("ny", ny)):
        if not isinstance(value, int) or value < 1:
            check.add(f"mesh.{key}", f"expected a positive integer, got {value!r}")
    check.number(mesh_blk, "dx", "mesh.dx", low=0.0, required=True)
    check.number(mesh_blk, "dy", "mesh.dy", low=0.0, required=True)
    if check.diagnostics:
        return check.diagnostics
    if mesh_blk["dx"] <= 0 or mesh_blk["dy"] <= 0:
        check.add("mesh", "dx and dy must be > 0")
        return check.diagnostics
    n = nx * ny

    flow_blk = doc.get("flow")
    if flow_blk is not None:
        if not isinstance(flow_blk, dict):
            check.add("flow", "expected an object")
        else:
            if "conductivity" not in flow_blk:
                check.add("flow.conductivity", "missing required value")
            else:
                _cell_array(flow_blk["conductivity"], n, "flow.conductivity",
                            check, positive=True)
            heads = flow_blk.get("boundary_heads")
            if not isinstance(heads, dict) or not heads:
                check.add("flow.boundary_heads",
                          "at least one fixed-head boundary is required")
            else:
                for tag in heads:
                    if tag not in _TAGS:
                        check.add(f"flow.boundary_heads.{tag}",
                                  f"unknown boundary tag; known: {list(_TAGS)}")

    tr = doc.get("transport")
    species_names = []
    if not isinstance(tr, dict):
        check.add("transport", "missing required block")
        return check.diagnostics
    species = tr.get("species")
    if not isinstance(species, list) or not species:
        check.add("transport.species", "at least one species is required")
        species = []
    for s, entry in enumerate(species):
        path = f"transport.species[{s}]"
        if not isinstance(entry, dict) or not isinstance(entry.get("name"), str):
            check.add(path, "each species needs a string name")
            continue
        species_names.append(entry["name"])
        check.number(entry, "effective_diffusion", f"{path}.effective_diffusion",
                     low=0.0)
        check.number(entry, "retardation", f"{path}.retardation", low=1.0)
        check.number(entry, "decay_rate", f"{path}.decay_rate", low=0.0)
    if len(set(species_names)) != len(species_names):
        check.add("transport.species", "species names must be unique")
    for s, entry in enumerate(species):
        parent = entry.get("parent") if isinstance(entry, dict) else None
        if parent is not None and parent not in species_names:
            check.add(f"transport.species[{s}].parent",
                      f"unknown species {parent!r}; known: {species_names}")
    check.number(tr, "dispersivity", "transport.dispersivity", low=0.0)
    check.number(tr, "theta", "transport.theta", low=0.0, high=1.0)
    if "porosity" in tr:
        _cell_array(tr["porosity"], n, "transport.porosity", check,
                    positive=True, unit_max=True)
    bc = tr.get("boundary_concentrations", {})
    if not isinstance(bc, dict):
        check.add("transport.boundary_concentrations", "expected an object")
        bc = {}
    for tag, by_species in bc.items():
        if tag not in _TAGS:
            check.add(f"transport.boundary_concentrations.{tag}",
                      f"unknown boundary tag; known: {list(_TAGS)}")
        if not isinstance(by_species, dict):
            check.add(f"transport.boundary_concentrations.{tag}",
                      "expected an object of species: value")
            continue
        for name in by_species:
            if name not in species_names:
                check.add(f"transport.boundary_concentrations.{tag}.{name}",
                          f"unknown species; known: {species_names}")

    chem = doc.get("chemistry")
    mineral_names = []
    if chem is not None:
        if not isinstance(chem, dict):
            check.add("chemistry", "expected an object")
            chem = {}
        primaries = chem.get("primaries", [])
        if not isinstance(primaries, list) or not primaries:
            check.add("chemistry.primaries", "at least one primary is required")
            primaries = []
        if primaries and sorted(primaries) != sorted(species_names):
            check.add("chemistry.primaries",
                      f"must match transport species; primaries {primaries}, "
                      f"species {species_names}")
        for kind in ("secondaries", "minerals"):
            for k, entry in enumerate(chem.get(kind, [])):
                path = f"chemistry.{kind}[{k}]"
                if not isinstance(entry, dict) \
                        or not isinstance(entry.get("name"), str):
                    check.add(path, "each entry needs a string name")
                    continue
                stoich = entry.get("stoichiometry", {})
                for name in stoich:
                    if name not in primaries:
                        check.add(f"{path}.stoichiometry",
                                  f"unknown primary {name!r}; known: {primaries}")
                key = "log_k" if kind == "secondaries" else "log_ksp"
                check.number(entry, key, f"{path}.{key}", required=True)
                if kind == "minerals":
                    check.number(entry, "molar_volume", f"{path}.molar_volume",
                                 low=0.0, required=True)
                    mineral_names.append(entry["name"])
        covered = np.zeros(n, dtype=np.int64)
        regions = chem.get("regions", [])
        if not isinstance(regions, list) or not regions:
            check.add("chemistry.regions", "at least one region is required")
            regions = []
        for r, region in enumerate(regions):
            path = f"chemistry.regions[{r}]"
            if not isinstance(region, dict):
                check.add(path, "expected an object")
                continue
            ids = _region_cells(region.get("cells", "all"), n,
                                f"{path}.cells", check)
            if ids is not None:
                covered[ids] += 1
            for name in region.get("totals", {}):
                if name not in primaries:
                    check.add(f"{path}.totals.{name}",
                              f"unknown primary; known: {primaries}")
            for name in region.get("minerals", {}):
                if name not in mineral_names:
                    check.add(f"{path}.minerals.{name}",
                              f"unknown mineral; known: {mineral_names}")
        if regions and not np.all(covered == 1):
            bad = int(np.flatnonzero(covered != 1)[0])
            check.add("chemistry.regions",
                      f"regions must cover every cell exactly once "
                      f"(cell {bad} covered {covered[bad]} times)")

    coup = doc.get("coupling")
    if not isinstance(coup, dict):
        check.add("coupling", "missing required block")
    else:
        mode = coup.get("mode", "SNIA")
        if mode not in ("SNIA", "SIA"):
            check.add("coupling.mode", f"must be SNIA or SIA, got {mode!r}")
        dt = check.number(coup, "dt", "coupling.dt", low=0.0, required=True)
        t_end = check.number(coup, "t_end", "coupling.t_end", low=0.0,
                             required=True)
        if dt is not None and t_end is not None and (dt <= 0 or t_end < dt):
            check.add("coupling", "need 0 < dt <= t_end")
        check.number(coup, "sia_tol", "coupling.sia_tol", low=0.0)
        check.number(coup, "reflow_threshold", "coupling.reflow_threshold",
                     low=0.0)
        iters = coup.get("sia_max_iters", 50)
        if not isinstance(iters, int) or iters < 1:
            check.add("coupling.sia_max_iters",
                      f"expected a positive integer, got {iters!r}")

    for p, pkg in enumerate(doc.get("waste_packages", [])):
        path = f"waste_packages[{p}]"
        if not isinstance(pkg, dict):
            check.add(path, "expected an object")
            continue
        host = pkg.get("host_cell")
        if not isinstance(host, int) or not (0 <= host < n):
            check.add(f"{path}.host_cell", f"must be a cell id in [0, {n - 1}]")
        check.number(pkg, "rate_constant", f"{path}.rate_constant", low=0.0,
                     required=True)
        inventory = pkg.get("inventory", {})
        if not isinstance(inventory, dict):
            check.add(f"{path}.inventory", "expected an object")
            continue
        for name, amount in inventory.items():
            if name not in species_names:
                check.add(f"{path}.inventory.{name}",
                          f"unknown species; known: {species_names}")
            elif not isinstance(amount, (int, float)) or amount < 0:
                check.add(f"{path}.inventory.{name}", "amount must be >= 0")

    out = doc.get("output", {})
    if not isinstance(out, dict):
        check.add("output", "expected an object")
    else:
        cadence = out.get("cadence", 1)
        if not isinstance(cadence, int) or cadence < 1:
            check.add("output.cadence",
                      f"expected a positive integer, got {cadence!r}")
        for fmt in out.get("formats", ["csv", "mff"]):
            if fmt not in ("csv", "mff"):
                check.add("output.formats", f"unknown format {fmt!r}")

    if check.diagnostics:
        return check.diagnostics
    try:
        build_simulation(doc)
    except Exception as exc:
        check.add("scenario", f"build failed: {exc}")
    return check.diagnostics


@dataclass
class Simulation:
    """Everything run_simulation needs, built from a validated document."""

    mesh: Mesh
    species: list
    transport: object
    chemistry: object
    flow: object | None
    config: CouplingConfig
    packages: list
    totals: Field
    porosity: np.ndarray
    mineral_names: list
    cadence: int = 1
    formats: tuple = ("csv", "mff")
    out_dir: str | None = None


def build_simulation(doc: dict) -> Simulation:
    mesh_blk = doc["mesh"]
    mesh = build_structured_mesh(int(mesh_blk["nx"]), int(mesh_blk.get("ny", 1)),
                                 float(mesh_blk["dx"]), float(mesh_blk["dy"]))
    n = mesh.n_cells
    tr = doc["transport"]
    chem_blk = doc.get("chemistry")
    species = [dict(entry) for entry in tr["species"]]
    if chem_blk is not None:
        order = list(chem_blk["primaries"])
        species.sort(key=lambda entry: order.index(entry["name"]))
    names = [entry["name"] for entry in species]
    ns = len(names)
    phi = np.broadcast_to(
        np.asarray(tr.get("porosity", 1.0), dtype=np.float64), (n,)).copy()

    minerals = [dict(e) for e in chem_blk.get("minerals", [])] if chem_blk else []
    mineral_names = [e["name"] for e in minerals]
    init_totals = np.zeros((n, ns))
    init_minerals = np.zeros((n, max(len(minerals), 1)))
    if chem_blk is not None:
        for region in chem_blk["regions"]:
            ids = _region_cells(region.get("cells", "all"), n, "", _Checker())
            for name, value in region.get("totals", {}).items():
                init_totals[ids, names.index(name)] = value
            for name, value in region.get("minerals", {}).items():
                init_minerals[ids, mineral_names.index(name)] = value
    else:
        for name, value in tr.get("initial", {}).items():
            init_totals[:, names.index(name)] = np.broadcast_to(
                np.asarray(value, dtype=np.float64), (n,))

    transport = component.create("transport",
                                 tr.get("implementation", "fv-reference"), {
        "mesh": mesh,
        "species": species,
        "dispersivity": tr.get("dispersivity", 0.0),
        "theta": tr.get("theta", 1.0),
        "porosity": phi,
        "initial_conc": init_totals,
        "boundary_concentrations": tr.get("boundary_concentrations", {}),
        "solver_tolerance": tr.get("solver_tolerance", 1e-12),
    })

    if chem_blk is not None:
        chemistry = component.create(
            "chemistry", chem_blk.get("implementation", "equilibrium-reference"), {
                "system": {"primaries": list(chem_blk["primaries"]),
                           "secondaries": chem_blk.get("secondaries", []),
                           "minerals": minerals},
                "n_cells": n,
                "initial_totals": init_totals,
                "initial_minerals": init_minerals[:, :len(minerals)]
                if minerals else np.zeros((n, 0)),
                "porosity": phi,
                "tolerance": chem_blk.get("tolerance", 1e-12),
            })
    else:
        chemistry = component.create("chemistry", "identity", {
            "n_cells": n, "component_names": names, "porosity": phi,
            "initial_totals": init_totals})

    flow_blk = doc.get("flow")
    flow = None
    if flow_blk is not None:
        flow = component.create("flow",
                                flow_blk.get("implementation", "darcy-reference"), {
            "mesh": mesh,
            "conductivity": flow_blk["conductivity"],
            "boundary_heads": flow_blk["boundary_heads"],
            "reference_porosity": phi,
            "solver_tolerance": flow_blk.get("solver_tolerance", 1e-12),
        })

    coup = doc.get("coupling", {})
    config = CouplingConfig(
        mode=coup.get("mode", "SNIA"), dt=float(coup["dt"]),
        t_end=float(coup["t_end"]),
        sia_max_iters=int(coup.get("sia_max_iters", 50)),
        sia_tol=float(coup.get("sia_tol", 1e-8)),
        porosity_feedback=bool(coup.get("porosity_feedback", False)),
        reflow_threshold=float(coup.get("reflow_threshold", 1e-3)))
    config.validate()

    packages = []
    for pkg in doc.get("waste_packages", []):
        wp = WastePackageState(dict(pkg.get("inventory", {})),
                               float(pkg["rate_constant"]),
                               int(pkg["host_cell"]), pkg.get("name", "package"))
        wp.validate()
        packages.append(wp)

    out = doc.get("output", {})
    totals = Field("totals", CELLS, init_totals, names, 0.0, "mol/m3")
    return Simulation(mesh=mesh, species=species, transport=transport,
                      chemistry=chemistry, flow=flow, config=config,
                      packages=packages, totals=totals, porosity=phi,
                      mineral_names=mineral_names,
                      cadence=int(out.get("cadence", 1)),
                      formats=tuple(out.get("formats", ("csv", "mff"))),
                      out_dir=out.get("directory"))


def _fmt(value: float) -> str:
    return repr(float(value))


class _RunWriter:
    """CSV/MFF/log sink for one run directory."""

    def __init__(self, out_dir: Path, formats):
        self.out_dir = out_dir
        self.formats = formats
        out_dir.mkdir(parents=True, exist_ok=True)
        self.outputs = []
        self._csv = None
        if "csv" in formats:
            self._csv = open(out_dir / "timeseries.csv", "w", encoding="utf-8",
                             newline="\n")
            self._csv.write("time,cell,component,value\n")
            self.outputs.append("timeseries.csv")
        self._log = open(out_dir / "run.log", "w", encoding="utf-8",
                         newline="\n")
        self.outputs.append("run.log")

    def log(self, line: str):
        self._log.write(line + "\n")
        self._log.flush()

    def series(self, time, columns: dict):
        if self._csv is None:
            return
        for name, values in columns.items():
            for cell, value in enumerate(values):
                self._csv.write(f"{_fmt(time)},{cell},{name},{_fmt(value)}\n")
        self._csv.flush()

    def snapshot(self, name: str, mesh, fields):
        if "mff" not in self.formats:
            return
        write_mff(self.out_dir / name, MffDocument(mesh, list(fields)))
        self.outputs.append(name)

    def close(self):
        if self._csv is not None:
            self._csv.close()
        self._log.close()


def _series_columns(sim: Simulation, totals: Field, minerals: Field,
                    porosity: Field) -> dict:
    columns = {}
    for k, name in enumerate(totals.component_names):
        columns[name] = totals.values[:, k]
    for k, name in enumerate(sim.mineral_names):
        columns[f"mineral:{name}"] = minerals.values[:, k]
    columns["porosity"] = porosity.values[:, 0]
    return columns


def run_simulation(doc: dict, out_dir, scenario_path=None, overrides=()):
    """Execute a validated scenario; returns the manifest dict.

    Raises ScenarioError if validation fails and SimulationAbort if the
    time loop cannot continue (the manifest and last-good snapshot are
    still written).
    """
    diagnostics = validate_scenario(doc)
    if diagnostics:
        raise ScenarioError(diagnostics)
    sim = build_simulation(doc)
    out_dir = Path(out_dir)
    writer = _RunWriter(out_dir, sim.formats)
    started = datetime.datetime.now(datetime.timezone.utc)
    manifest = {
        "artifact_version": __version__,
        "scenario_path": str(scenario_path) if scenario_path else None,
        "scenario_sha256": hashlib.sha256(
            Path(scenario_path).read_bytes()).hexdigest() if scenario_path
        else hashlib.sha256(
            json.dumps(doc, sort_keys=True).encode()).hexdigest(),
        "overrides": list(overrides),
        "status": "running",
        "start_time": started.isoformat(),
        "end_time": None,
        "steps": 0,
        "sia_iterations": [],
        "warnings": [],
    }

    def finish(status):
        manifest["status"] = status
        manifest["end_time"] = datetime.datetime.now(
            datetime.timezone.utc).isoformat()
        manifest["outputs"] = sorted(set(writer.outputs + ["manifest.json"]))
        tmp = out_dir / "manifest.json.tmp"
        tmp.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
        os.replace(tmp, out_dir / "manifest.json")
        writer.close()

    try:
        _time_loop(sim, writer, manifest)
    except SimulationAbort as exc:
        writer.log(f"abort: {exc}")
        manifest["warnings"].append(str(exc))
        finish("aborted")
        raise
    except Exception:
        finish("failed")
        raise
    finish("completed")
    return manifest


def _solve_flow(sim: Simulation, t, dt, porosity_field=None):
    if porosity_field is not None:
        sim.flow.set_input_field("porosity", porosity_field)
    status = sim.flow.compute_time_step(t, dt)
    if not status.ok:
        raise SimulationAbort(f"flow solve failed: {status.message}")
    return sim.flow.get_output_field("flux")


def _package_source(sim: Simulation, dt):
    """Constant-rate source field for this step plus the post-step states."""
    if not sim.packages:
        return None, sim.packages
    names = [entry["name"] for entry in sim.species]
    rates = np.zeros((sim.mesh.n_cells, len(names)))
    advanced = []
    for wp in sim.packages:
        new_wp, released = waste_package_step(wp, dt)
        advanced.append(new_wp)
        volume = sim.mesh.cell_volumes[wp.host_cell]
        for name, amount in released.items():
            rates[wp.host_cell, names.index(name)] += amount / (dt * volume)
    return Field("source", CELLS, rates, names, unit="mol/m3/s"), advanced


def _time_loop(sim: Simulation, writer: _RunWriter, manifest: dict):
    cfg = sim.config
    mesh = sim.mesh
    totals = sim.totals
    phi_transport = sim.porosity.copy()
    t = 0.0
    step = 0
    nonconv_streak = 0
    next_dt = cfg.dt

    flux = None
    phi_at_flow = phi_transport.copy()
    if sim.flow is not None:
        flux = _solve_flow(sim, 0.0, cfg.dt)
    else:
        flux = Field("flux", FACES, np.zeros((mesh.n_faces, 1)), ["flux"],
                     unit="m3/s")
    sim.transport.set_input_field("flux", flux)

    def emit(tag=None):
        minerals = sim.chemistry.get_output_field("minerals")
        porosity = sim.chemistry.get_output_field("porosity")
        writer.series(t, _series_columns(sim, totals, minerals, porosity))
        name = tag if tag else f"snapshot_{step:06d}.mff"
        fields = [totals, minerals, porosity]
        if sim.flow is not None:
            fields += [sim.flow.get_output_field("head"), flux]
        for fld in fields:
            fld.time = t
        writer.snapshot(name, mesh, fields)

    writer.log(f"run mode={cfg.mode} dt={_fmt(cfg.dt)} t_end={_fmt(cfg.t_end)} "
               f"cells={mesh.n_cells} species={len(sim.species)}")
    emit()

    max_iters = cfg.sia_max_iters if cfg.mode == "SIA" else 1
    tol = cfg.sia_tol if cfg.mode == "SIA" else math.inf
    eps_end = 1e-12 * max(1.0, cfg.t_end)
    while t < cfg.t_end - eps_end:
        dt = min(next_dt, cfg.t_end - t)
        source, advanced = _package_source(sim, dt)
        report = None
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            for attempt in range(6):
                try:
                    new_totals, report = _split_step(
                        sim.transport, sim.chemistry, totals, t, dt,
                        source, max_iters, tol)
                    break
                except StepFailure as exc:
                    halved = exc.suggested_dt if exc.suggested_dt else dt / 2
                    dt = min(dt / 2, halved)
                    writer.log(f"step {step + 1}: {exc}; retrying with "
                               f"dt={_fmt(dt)}")
                    if attempt == 5 or dt <= 0:
                        raise SimulationAbort(
                            f"step {step + 1} failed after retries: {exc}") \
                            from exc
                    source, advanced = _package_source(sim, dt)
        for warning in caught:
            manifest["warnings"].append(str(warning.message))
            writer.log(f"step {step + 1}: warning: {warning.message}")

        totals = new_totals
        sim.packages = advanced
        t += dt
        step += 1
        manifest["sia_iterations"].append(report.iterations)
        writer.log(f"step {step} t={_fmt(t)} dt={_fmt(dt)} "
                   f"iters={report.iterations} residual={report.residual:.3e} "
                   f"converged={report.converged}")

        if report.converged:
            nonconv_streak = 0
            next_dt = cfg.dt
        else:
            nonconv_streak += 1
            if nonconv_streak >= 3:
                emit("abort_state.mff")
                raise SimulationAbort(
                    "fixed-point iteration failed to converge on 3 "
                    "consecutive steps")
            next_dt = dt / 2
            writer.log(f"step {step}: not converged, next dt={_fmt(next_dt)}")

        if cfg.porosity_feedback:
            porosity = sim.chemistry.get_output_field("porosity")
            phi_new = porosity.values[:, 0]
            # water volume changed: keep dissolved mass per bulk volume fixed
            totals.values *= (phi_transport / phi_new)[:, None]
            phi_transport = phi_new.copy()
            sim.transport.set_input_field("porosity", porosity)
            if sim.flow is not None:
                drift = np.max(np.abs(phi_new - phi_at_flow) / phi_at_flow)
                if drift > cfg.reflow_threshold:
                    flux = _solve_flow(sim, t, cfg.dt, porosity)
                    sim.transport.set_input_field("flux", flux)
                    phi_at_flow = phi_new.copy()
                    writer.log(f"step {step}: flow re-solved "
                               f"(porosity drift {drift:.3e})")

        if step % sim.cadence == 0 or t >= cfg.t_end - eps_end:
            emit()
    manifest["steps"] = step
