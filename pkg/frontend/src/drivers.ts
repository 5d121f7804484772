/** The two coupling drivers as callables, plus scenario runs and MFF reads. */

import type { CoreBridge } from "./bridge.js";
import type { BoundComponent } from "./component.js";
import { decodeField, encodeField, type FieldData,
         type SplitReport } from "./protocol.js";

export interface SplitResult {
  totals: FieldData;
  report: SplitReport;
}

/** One transport pass then one chemistry pass (non-iterative splitting). */
export async function sniaStep(
    bridge: CoreBridge, transport: BoundComponent, chemistry: BoundComponent,
    totals: FieldData, t: number, dt: number,
    source?: FieldData): Promise<SplitResult> {
  const result = await bridge.request("snia", {
    transport: transport.handle, chemistry: chemistry.handle,
    totals: wire(totals), t, dt, source: source ? wire(source) : null,
  }) as { totals: never; report: SplitReport };
  return { totals: decodeField(result.totals), report: result.report };
}

export interface SiaOptions {
  maxIters?: number;
  tol?: number;
  reaction0?: FieldData;
}

/** Fixed-point iteration of the split until self-consistency. */
export async function siaStep(
    bridge: CoreBridge, transport: BoundComponent, chemistry: BoundComponent,
    totals: FieldData, t: number, dt: number, options: SiaOptions = {},
    source?: FieldData): Promise<SplitResult> {
  const result = await bridge.request("sia", {
    transport: transport.handle, chemistry: chemistry.handle,
    totals: wire(totals), t, dt,
    max_iters: options.maxIters ?? 50, tol: options.tol ?? 1e-8,
    reaction0: options.reaction0 ? wire(options.reaction0) : null,
    source: source ? wire(source) : null,
  }) as { totals: never; report: SplitReport };
  return { totals: decodeField(result.totals), report: result.report };
}

export interface RunManifest {
  status: string;
  steps: number;
  overrides: string[];
  warnings: string[];
  sia_iterations: number[];
  [key: string]: unknown;
}

/** Full built-in time loop on a scenario document; writes the usual outputs. */
export async function runScenario(bridge: CoreBridge, doc: object,
                                  outDir: string): Promise<RunManifest> {
  const result = await bridge.request("run", { doc, out_dir: outDir }) as
    { manifest: RunManifest };
  return result.manifest;
}

export interface MffDocumentData {
  nCells: number;
  fields: FieldData[];
}

export async function readMffFile(bridge: CoreBridge,
                                  path: string): Promise<MffDocumentData> {
  const result = await bridge.request("read_mff", { path }) as
    { n_cells: number; fields: never[] };
  return { nCells: result.n_cells, fields: result.fields.map(decodeField) };
}

function wire(field: FieldData) {
  return encodeField(field);
}
