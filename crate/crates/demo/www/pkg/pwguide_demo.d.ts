/* tslint:disable */
/* eslint-disable */

/**
 * Radiating field of a smooth bump source on `periods` periods centred at
 * the origin. Returns `[rows, columns, |u| ...]` with the top row first.
 */
export function bump_field(kind: string, k: number, a: number, b: number, nx1: number, nx2: number, periods: number, center: number): Float64Array;

/**
 * `|G(x, y)|` on a `width × height` raster of `[x1_min, x1_max] × (0, x2_max]`,
 * row-major with the top row first.
 */
export function green_magnitude(k: number, y1: number, y2: number, x1_min: number, x1_max: number, x2_max: number, width: number, height: number): Float64Array;

/**
 * Smallest singular value of the cell operator at `nodes` points of the
 * Brillouin zone, returned as interleaved `(α, σ_min)` pairs.
 */
export function sigma_curve(kind: string, k: number, h: number, a: number, b: number, nx1: number, nx2: number, nodes: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly bump_field: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number) => [number, number, number, number];
    readonly green_magnitude: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number, number];
    readonly sigma_curve: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number) => [number, number, number, number];
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
