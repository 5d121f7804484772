// Scripted coupling loops against the built-in driver on the reference
// column: a hand-written SNIA loop over the component handles, and the
// driver exposed as a callable, must all land on the same state.

import { mkdtempSync, readFileSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { fileURLToPath } from "node:url";
import { afterAll, beforeAll, expect, test } from "vitest";

import { BoundComponent, CoreBridge, buildMesh, cellField, createComponent,
         readMffFile, runScenario, sniaStep, zerosLike,
         type FieldData } from "../src/index.js";

const SCENARIO = fileURLToPath(
  new URL("../scenarios/reference_column.json", import.meta.url));

const N = 20;
const DT = 2000;
const STEPS = 10;

let bridge: CoreBridge;
let workDir: string;

beforeAll(async () => {
  bridge = await CoreBridge.connect();
  workDir = mkdtempSync(join(tmpdir(), "rtcouple-parity-"));
});

afterAll(() => {
  bridge.close();
  rmSync(workDir, { recursive: true, force: true });
});

function nested(values: Float64Array, cols: number): number[][] {
  const out: number[][] = [];
  for (let r = 0; r < values.length / cols; r++) {
    out.push(Array.from(values.subarray(r * cols, (r + 1) * cols)));
  }
  return out;
}

function relL2(a: Float64Array, b: Float64Array): number {
  let diff = 0;
  let ref = 0;
  for (let i = 0; i < a.length; i++) {
    diff += (a[i] - b[i]) ** 2;
    ref += b[i] ** 2;
  }
  return Math.sqrt(diff) / Math.max(Math.sqrt(ref), 1e-300);
}

function maxAbsDiff(a: Float64Array, b: Float64Array): number {
  let worst = 0;
  for (let i = 0; i < a.length; i++) {
    worst = Math.max(worst, Math.abs(a[i] - b[i]));
  }
  return worst;
}

interface Pair {
  transport: BoundComponent;
  chemistry: BoundComponent;
  initialTotals: FieldData;
}

// mirror of the scenario document, built over the component handles
async function buildPair(): Promise<Pair> {
  const mesh = await buildMesh(bridge, N, 1, 0.1, 1.0);
  const totals = new Float64Array(N * 2);
  const minerals = new Float64Array(N);
  for (let c = 0; c < N; c++) {
    totals[c * 2] = 1e-8;
    totals[c * 2 + 1] = 1e-6;
    if (c >= 5) minerals[c] = 50.0;
  }
  const species = [{ name: "U", effective_diffusion: 1e-9 },
                   { name: "Ox", effective_diffusion: 1e-9 }];
  const transport = await createComponent(bridge, "transport", "fv-reference", {
    mesh, species, theta: 1.0, dispersivity: 0.0, porosity: 0.3,
    initial_conc: nested(totals, 2),
    boundary_concentrations: { LEFT: { Ox: 1e-3 } },
    solver_tolerance: 1e-12,
  });
  const chemistry = await createComponent(
    bridge, "chemistry", "equilibrium-reference", {
      system: {
        primaries: ["U", "Ox"],
        secondaries: [],
        minerals: [{ name: "UO2s", stoichiometry: { U: 1, Ox: -1 },
                     log_ksp: 0.0, molar_volume: 2.5e-5 }],
      },
      n_cells: N,
      initial_totals: nested(totals, 2),
      initial_minerals: nested(minerals, 1),
      porosity: 0.3,
      tolerance: 1e-12,
    });
  const flow = await createComponent(bridge, "flow", "darcy-reference", {
    mesh, conductivity: 1e-5, boundary_heads: { LEFT: 4.0, RIGHT: 0.0 },
    reference_porosity: 0.3, solver_tolerance: 1e-12,
  });
  expect((await flow.computeTimeStep(0, DT)).ok).toBe(true);
  await transport.setInputField("flux", await flow.getOutputField("flux"));
  await flow.finalize();
  return { transport, chemistry,
           initialTotals: cellField("totals", totals, ["U", "Ox"], 0,
                                    "mol/m3") };
}

test("scripted SNIA loop reproduces the built-in driver", async () => {
  // reference: the built-in time loop, state read back from the final snapshot
  const doc = JSON.parse(readFileSync(SCENARIO, "utf-8"));
  const outDir = join(workDir, "reference");
  const manifest = await runScenario(bridge, doc, outDir);
  expect(manifest.status).toBe("completed");
  expect(manifest.steps).toBe(STEPS);
  const snapshot = await readMffFile(
    bridge, join(outDir, `snapshot_${String(STEPS).padStart(6, "0")}.mff`));
  const refTotals = snapshot.fields.find((f) => f.name === "totals")!;
  const refMinerals = snapshot.fields.find((f) => f.name === "minerals")!;

  // scripted loop: transport pass, then equilibrate, per step
  const scripted = await buildPair();
  let totals = scripted.initialTotals;
  for (let step = 0; step < STEPS; step++) {
    const t = step * DT;
    const minerals0 = await scripted.chemistry.getOutputField("minerals");
    const porosity0 = await scripted.chemistry.getOutputField("porosity");
    await scripted.transport.setInputField("conc", totals);
    await scripted.transport.setInputField("reaction",
                                           zerosLike(totals, "reaction"));
    expect((await scripted.transport.computeTimeStep(t, DT)).ok).toBe(true);
    const transported = await scripted.transport.getOutputField("conc");
    await scripted.chemistry.setInputField("totals", transported);
    await scripted.chemistry.setInputField("minerals", minerals0);
    await scripted.chemistry.setInputField("porosity", porosity0);
    expect((await scripted.chemistry.computeTimeStep(t, DT)).ok).toBe(true);
    totals = await scripted.chemistry.getOutputField("totals");
  }
  const scriptedMinerals =
    await scripted.chemistry.getOutputField("minerals");

  expect(relL2(totals.values, refTotals.values)).toBeLessThanOrEqual(1e-12);
  expect(relL2(scriptedMinerals.values, refMinerals.values))
    .toBeLessThanOrEqual(1e-12);

  // the driver as a callable must agree with the hand-written loop exactly
  const driven = await buildPair();
  let totals2 = driven.initialTotals;
  for (let step = 0; step < STEPS; step++) {
    const result = await sniaStep(bridge, driven.transport, driven.chemistry,
                                  totals2, step * DT, DT);
    expect(result.report.iterations).toBe(1);
    totals2 = result.totals;
  }
  expect(maxAbsDiff(totals2.values, totals.values)).toBe(0);

  // sanity: the run actually did chemistry (mineral dissolved at the front)
  expect(refMinerals.values[5]).toBeLessThan(50.0);
});
