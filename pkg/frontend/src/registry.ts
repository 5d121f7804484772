/** Registry listing and factory binding. */

import type { CoreBridge } from "./bridge.js";
import { BoundComponent, createComponent,
         type ComponentConfig } from "./component.js";

export async function listRegistry(bridge: CoreBridge):
    Promise<Array<[string, string]>> {
  const result = await bridge.request("list", {}) as
    { pairs: Array<[string, string]> };
  return result.pairs;
}

export type ComponentFactory =
  (config?: ComponentConfig) => Promise<BoundComponent>;

/**
 * One factory per registered (application, implementation) pair, keyed
 * "application/implementation".
 */
export async function bindRegistry(bridge: CoreBridge):
    Promise<Record<string, ComponentFactory>> {
  const factories: Record<string, ComponentFactory> = {};
  for (const [application, implementation] of await listRegistry(bridge)) {
    factories[`${application}/${implementation}`] =
      (config: ComponentConfig = {}) =>
        createComponent(bridge, application, implementation, config);
  }
  return factories;
}
