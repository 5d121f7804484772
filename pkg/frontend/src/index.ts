export { CoreBridge, EXPECTED_CORE, type BridgeOptions } from "./bridge.js";
export { BoundComponent, MeshHandle, buildMesh, createComponent,
         type ComponentConfig } from "./component.js";
export { bindRegistry, listRegistry, type ComponentFactory } from "./registry.js";
export { readMffFile, runScenario, siaStep, sniaStep, type MffDocumentData,
         type RunManifest, type SiaOptions, type SplitResult } from "./drivers.js";
export { BindingsLoadError, BridgeError, CoreError, FinalizedHandleError,
         cellField, zerosLike, type FieldData, type SplitReport,
         type StepStatus, type Support } from "./protocol.js";
