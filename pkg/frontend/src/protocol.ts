/** Wire types shared with the Python bridge, plus the error taxonomy. */

export type Support = "CELLS" | "FACES";

/** A field crossing the boundary: contiguous float64 values plus metadata. */
export interface FieldData {
  name: string;
  support: Support;
  componentNames: string[];
  /** entities (cells or faces) */
  rows: number;
  /** components per entity */
  cols: number;
  /** row-major, length rows*cols; always a private copy on this side */
  values: Float64Array;
  time: number | null;
  unit: string;
}

export interface StepStatus {
  ok: boolean;
  message: string;
  suggestedDt: number | null;
}

export interface SplitReport {
  time: number;
  iterations: number;
  residual: number;
  converged: boolean;
}

/** The stdio channel itself failed (process death, unparseable reply). */
export class BridgeError extends Error {}

/** Core and bindings versions are incompatible; nothing was bound. */
export class BindingsLoadError extends Error {}

/** The core raised; carries the core exception type and diagnostic text. */
export class CoreError extends Error {
  constructor(readonly coreType: string, readonly coreMessage: string) {
    super(`${coreType}: ${coreMessage}`);
  }
}

/** A call on this side after finalize(); the core was never contacted. */
export class FinalizedHandleError extends Error {}

interface WireField {
  name: string;
  support: Support;
  component_names: string[];
  rows: number;
  cols: number;
  values: number[];
  time: number | null;
  unit: string;
}

export function encodeField(field: FieldData): WireField {
  if (field.values.length !== field.rows * field.cols) {
    throw new RangeError(
      `field ${field.name}: ${field.values.length} values for ` +
      `${field.rows}x${field.cols}`);
  }
  return {
    name: field.name,
    support: field.support,
    component_names: field.componentNames,
    rows: field.rows,
    cols: field.cols,
    values: Array.from(field.values),
    time: field.time,
    unit: field.unit,
  };
}

export function decodeField(wire: WireField): FieldData {
  return {
    name: wire.name,
    support: wire.support,
    componentNames: wire.component_names,
    rows: wire.rows,
    cols: wire.cols,
    values: Float64Array.from(wire.values),
    time: wire.time,
    unit: wire.unit,
  };
}

/** Convenience constructor for a cell field from a plain array. */
export function cellField(name: string, values: ArrayLike<number>,
                          componentNames: string[], time: number | null = null,
                          unit = ""): FieldData {
  const cols = componentNames.length;
  const data = Float64Array.from(values as ArrayLike<number>);
  if (data.length % cols !== 0) {
    throw new RangeError(`${data.length} values not divisible by ${cols}`);
  }
  return { name, support: "CELLS", componentNames, rows: data.length / cols,
           cols, values: data, time, unit };
}

export function zerosLike(field: FieldData, name: string): FieldData {
  return { ...field, name, values: new Float64Array(field.values.length) };
}
