/* tslint:disable */
/* eslint-disable */

/**
 * Takes `{"detections": [{"score", "tp"}], "num_truths"}` and returns JSON `{ap, ap11, steps}`.
 */
export function averagePrecision(query: string): string;

/**
 * IoU of two `(cx, cy, w, h)` boxes in unit coordinates.
 */
export function boxIou(a: Float64Array, b: Float64Array): number;

/**
 * JSON `{width, height, pixels, objects}`.
 */
export function syntheticScan(seed: bigint, image_size: number, max_objects: number, augmentation: string): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly averagePrecision: (a: number, b: number) => [number, number, number, number];
    readonly boxIou: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly syntheticScan: (a: bigint, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
