"""Library-level walkthrough: Darcy flow into advective transport.

No scenario file here: the script builds the mesh and components directly,
which is the path to take when embedding the solvers in another program.
A two-zone column (coarse upstream half, fine downstream half) is solved
for steady flow, the flux is checked against the series-resistance value,
and the resulting field advects a tracer pulse whose centre of mass should
move at the pore velocity.

Usage: python3 demos/darcy_column.py
"""

import numpy as np

from rtcouple.flow import FlowProblem, solve_darcy
from rtcouple.meshfield import CELLS, Field, build_structured_mesh
from rtcouple.transport import TransportParams, TransportState, transport_step


def main():
    n, dx = 40, 0.1
    mesh = build_structured_mesh(n, 1, dx, 1.0)
    k = np.where(np.arange(n) < n // 2, 4e-5, 1e-5)
    problem = FlowProblem(mesh, k, {"LEFT": 2.0, "RIGHT": 0.0})
    solution = solve_darcy(problem)

    # two equal-length zones in series: K_eff is the harmonic mean
    k_eff = 2.0 / (1.0 / 4e-5 + 1.0 / 1e-5)
    q_expected = k_eff * 2.0 / (n * dx)
    q = solution.face_flux.values[mesh.interior, 0]  # all normals point +x
    print(f"face flux {q[0]:.6e} m3/s, series-resistance value "
          f"{q_expected:.6e}, spread {q.max() - q.min():.2e}")

    phi = 0.25
    params = TransportParams(
        mesh=mesh,
        face_flux=solution.face_flux,
        porosity=Field("porosity", CELLS, np.full((n, 1), phi), ["porosity"]),
        effective_diffusion=[0.0],
        dispersivity=0.0,
        retardation=[1.0],
        decay_rates=[0.0],
        parents=[-1],
        theta=1.0,
    )
    conc = np.zeros((n, 1))
    conc[4:8, 0] = 1.0  # square pulse near the inlet
    state = TransportState(Field("tracer", CELLS, conc, ["tracer"]), 0.0)

    v = q_expected / phi
    dt = 2000.0
    x = mesh.cell_centroids[:, 0]
    print(f"pore velocity {v:.3e} m/s")
    print(f"{'time [s]':>9} {'pulse centre [m]':>17} {'x0 + v*t [m]':>13}")
    x0 = float(x @ conc[:, 0] / conc.sum())
    for step in range(6):
        centre = float(x @ state.conc.values[:, 0] / state.conc.values.sum())
        print(f"{state.time:>9.0f} {centre:>17.3f} {x0 + v * state.time:>13.3f}")
        state = transport_step(state, dt, params)


if __name__ == "__main__":
    main()
