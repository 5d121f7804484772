"""Stdio endpoint the TypeScript bindings talk to.

One JSON request per stdin line, one JSON response per stdout line:
{"id": n, "op": name, "args": {...}} in,
{"id": n, "ok": true, "result": {...}} or
{"id": n, "ok": false, "error": {"type": ..., "message": ...}} out.

The process holds mesh and component handles in plain dicts; ``finalize``
drops the entry so cycles of create/finalize leave no residue.  Field
values travel as flat row-major lists; JSON's shortest-representation
floats reparse to the identical doubles on both sides, so the boundary is
lossless.  Everything here goes through the public rtcouple API.
"""

import json
import os
import sys

import numpy as np

import rtcouple
from rtcouple import (CouplingConfig, Field, component, read_mff,
                      run_simulation, sia_step, snia_step)
from rtcouple.meshfield import build_structured_mesh


class Session:
    def __init__(self):
        self.meshes = {}
        self.components = {}
        self.next_handle = 1

    def take_handle(self):
        handle = self.next_handle
        self.next_handle += 1
        return handle

    def component(self, args, key="component"):
        handle = int(args[key])
        if handle not in self.components:
            raise KeyError(f"unknown component handle {handle}")
        return self.components[handle]


def decode_field(data) -> Field:
    rows, cols = int(data["rows"]), int(data["cols"])
    values = np.asarray(data["values"], dtype=np.float64).reshape(rows, cols)
    names = data.get("component_names")
    return Field(data.get("name", "field"), data["support"], values,
                 list(names) if names else None, data.get("time"),
                 data.get("unit", ""))


def encode_field(field: Field) -> dict:
    return {
        "name": field.name,
        "support": field.support,
        "component_names": list(field.component_names),
        "rows": int(field.values.shape[0]),
        "cols": int(field.values.shape[1]),
        "values": field.values.ravel().tolist(),
        "time": field.time,
        "unit": field.unit,
    }


def encode_report(report) -> dict:
    return {"time": report.time, "iterations": report.iterations,
            "residual": report.residual, "converged": report.converged}


def op_hello(session, args):
    return {"version": rtcouple.__version__}


def op_list(session, args):
    return {"pairs": [list(pair) for pair in component.available()]}


def op_mesh(session, args):
    mesh = build_structured_mesh(int(args["nx"]), int(args["ny"]),
                                 float(args["dx"]), float(args["dy"]))
    handle = session.take_handle()
    session.meshes[handle] = mesh
    return {"mesh": handle, "n_cells": mesh.n_cells, "n_faces": mesh.n_faces}


def op_create(session, args):
    config = dict(args.get("config", {}))
    if "mesh" in config:
        mesh_handle = int(config["mesh"])
        if mesh_handle not in session.meshes:
            raise KeyError(f"unknown mesh handle {mesh_handle}")
        config["mesh"] = session.meshes[mesh_handle]
    comp = component.create(args["application"], args["implementation"],
                            config)
    handle = session.take_handle()
    session.components[handle] = comp
    return {"component": handle}


def op_set_field(session, args):
    session.component(args).set_input_field(args["name"],
                                            decode_field(args["field"]))
    return {}


def op_step(session, args):
    status = session.component(args).compute_time_step(float(args["t"]),
                                                       float(args["dt"]))
    return {"status": {"ok": status.ok, "message": status.message,
                       "suggested_dt": status.suggested_dt}}


def op_get_field(session, args):
    field = session.component(args).get_output_field(args["name"])
    return {"field": encode_field(field)}


def op_finalize(session, args):
    comp = session.components.pop(int(args["component"]), None)
    if comp is not None:
        comp.finalize()
    return {}


def op_snia(session, args):
    source = decode_field(args["source"]) if args.get("source") else None
    totals, report = snia_step(
        session.component(args, "transport"),
        session.component(args, "chemistry"),
        decode_field(args["totals"]), float(args["t"]), float(args["dt"]),
        source)
    return {"totals": encode_field(totals), "report": encode_report(report)}


def op_sia(session, args):
    dt = float(args["dt"])
    config = CouplingConfig(mode="SIA", dt=dt, t_end=dt,
                            sia_max_iters=int(args.get("max_iters", 50)),
                            sia_tol=float(args.get("tol", 1e-8)))
    source = decode_field(args["source"]) if args.get("source") else None
    reaction0 = decode_field(args["reaction0"]) if args.get("reaction0") \
        else None
    totals, report = sia_step(
        session.component(args, "transport"),
        session.component(args, "chemistry"),
        decode_field(args["totals"]), float(args["t"]), dt, config,
        source, reaction0)
    return {"totals": encode_field(totals), "report": encode_report(report)}


def op_run(session, args):
    manifest = run_simulation(args["doc"], args["out_dir"])
    return {"manifest": manifest}


def op_read_mff(session, args):
    doc = read_mff(args["path"])
    return {"n_cells": doc.mesh.n_cells,
            "fields": [encode_field(f) for f in doc.fields]}


def op_stats(session, args):
    with open("/proc/self/statm", encoding="ascii") as statm:
        rss_pages = int(statm.read().split()[1])
    return {"components": len(session.components),
            "meshes": len(session.meshes),
            "rss_bytes": rss_pages * os.sysconf("SC_PAGE_SIZE")}


OPS = {
    "hello": op_hello,
    "list": op_list,
    "mesh": op_mesh,
    "create": op_create,
    "set_field": op_set_field,
    "step": op_step,
    "get_field": op_get_field,
    "finalize": op_finalize,
    "snia": op_snia,
    "sia": op_sia,
    "run": op_run,
    "read_mff": op_read_mff,
    "stats": op_stats,
}


def main():
    session = Session()
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        request_id = None
        try:
            request = json.loads(line)
            request_id = request.get("id")
            handler = OPS.get(request["op"])
            if handler is None:
                raise ValueError(f"unknown op {request['op']!r}")
            reply = {"id": request_id, "ok": True,
                     "result": handler(session, request.get("args", {}))}
        except Exception as exc:
            reply = {"id": request_id, "ok": False,
                     "error": {"type": type(exc).__name__,
                               "message": str(exc)}}
        sys.stdout.write(json.dumps(reply) + "\n")
        sys.stdout.flush()


if __name__ == "__main__":
    main()
