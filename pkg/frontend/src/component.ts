/** Handles over core meshes and components. */

import type { CoreBridge } from "./bridge.js";
import { FinalizedHandleError, decodeField, encodeField,
         type FieldData, type StepStatus } from "./protocol.js";

export class MeshHandle {
  constructor(readonly handle: number, readonly nCells: number,
              readonly nFaces: number) {}
}

export async function buildMesh(bridge: CoreBridge, nx: number, ny: number,
                                dx: number, dy: number): Promise<MeshHandle> {
  const result = await bridge.request("mesh", { nx, ny, dx, dy }) as
    { mesh: number; n_cells: number; n_faces: number };
  return new MeshHandle(result.mesh, result.n_cells, result.n_faces);
}

/**
 * One core component held at arm's length.
 *
 * Field values cross as copies in both directions: mutating an array after
 * setInputField, or one returned by getOutputField, never touches the
 * component. After finalize() every other method throws without contacting
 * the core; finalize itself is idempotent.
 */
export class BoundComponent {
  private finalized = false;

  constructor(private bridge: CoreBridge, readonly handle: number,
              readonly application: string, readonly implementation: string) {}

  private open(): void {
    if (this.finalized) {
      throw new FinalizedHandleError(
        `${this.application}/${this.implementation} handle ${this.handle} ` +
        `has been finalized`);
    }
  }

  async setInputField(name: string, field: FieldData): Promise<void> {
    this.open();
    await this.bridge.request("set_field",
                              { component: this.handle, name,
                                field: encodeField(field) });
  }

  async computeTimeStep(t: number, dt: number): Promise<StepStatus> {
    this.open();
    const result = await this.bridge.request(
      "step", { component: this.handle, t, dt }) as
      { status: { ok: boolean; message: string; suggested_dt: number | null } };
    return { ok: result.status.ok, message: result.status.message,
             suggestedDt: result.status.suggested_dt };
  }

  async getOutputField(name: string): Promise<FieldData> {
    this.open();
    const result = await this.bridge.request(
      "get_field", { component: this.handle, name }) as { field: never };
    return decodeField(result.field);
  }

  async finalize(): Promise<void> {
    if (this.finalized) return;
    this.finalized = true;
    await this.bridge.request("finalize", { component: this.handle });
  }
}

/** Component config: JSON values, with MeshHandle allowed under "mesh". */
export type ComponentConfig = Record<string, unknown>;

export async function createComponent(
    bridge: CoreBridge, application: string, implementation: string,
    config: ComponentConfig = {}): Promise<BoundComponent> {
  const wire: Record<string, unknown> = { ...config };
  if (wire.mesh instanceof MeshHandle) {
    wire.mesh = wire.mesh.handle;
  }
  const result = await bridge.request(
    "create", { application, implementation, config: wire }) as
    { component: number };
  return new BoundComponent(bridge, result.component, application,
                            implementation);
}
