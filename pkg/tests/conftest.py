import copy
import json

# shared scenario documents; tests deepcopy and tweak them


_TRACER = {
    "mesh": {"nx": 12, "ny": 1, "dx": 0.1, "dy": 1.0},
    "flow": {"conductivity": 1e-5,
             "boundary_heads": {"LEFT": 1.0, "RIGHT": 0.0}},
    "transport": {
        "species": [{"name": "tracer", "effective_diffusion": 1e-9}],
        "porosity": 0.25,
        "theta": 1.0,
        "boundary_concentrations": {"LEFT": {"tracer": 1.0}},
        "initial": {"tracer": 0.0},
    },
    "coupling": {"mode": "SNIA", "dt": 500.0, "t_end": 5000.0},
    "output": {"cadence": 2, "formats": ["csv", "mff"]},
}

# ore dissolution: oxidant-rich water enters at the left, the mineral
# dissolves at the zone edge (one mole of oxidant per mole of mineral)
_MINERAL = {
    "mesh": {"nx": 20, "ny": 1, "dx": 0.1, "dy": 1.0},
    "flow": {"conductivity": 1e-5,
             "boundary_heads": {"LEFT": 4.0, "RIGHT": 0.0}},
    "transport": {
        "species": [{"name": "U", "effective_diffusion": 1e-9},
                    {"name": "Ox", "effective_diffusion": 1e-9}],
        "porosity": 0.3,
        "boundary_concentrations": {"LEFT": {"Ox": 1e-3}},
    },
    "chemistry": {
        "primaries": ["U", "Ox"],
        "minerals": [{"name": "UO2s", "stoichiometry": {"U": 1, "Ox": -1},
                      "log_ksp": 0.0, "molar_volume": 2.5e-5}],
        "regions": [
            {"cells": [0, 4], "totals": {"U": 1e-8, "Ox": 1e-6}},
            {"cells": [5, 19], "totals": {"U": 1e-8, "Ox": 1e-6},
             "minerals": {"UO2s": 50.0}},
        ],
    },
    "coupling": {"mode": "SNIA", "dt": 2000.0, "t_end": 20000.0},
    "output": {"cadence": 5, "formats": ["csv", "mff"]},
}


def tracer_doc():
    return copy.deepcopy(_TRACER)


def mineral_doc():
    return copy.deepcopy(_MINERAL)


def write_doc(path, doc):
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return path
