/* tslint:disable */
/* eslint-disable */

/**
 * Up to `cap` points within `radius` of `centre`, nearest first.
 */
export function ball_query(coords: Float64Array, dim: number, centre: Float64Array, radius: number, cap: number): Uint32Array;

/**
 * Reproducible 2-D demo cloud: a ring, a dense blob and uniform clutter.
 */
export function demo_cloud(n: number, seed: bigint): Float64Array;

/**
 * Farthest point sampling: `m` indices, the first being `start`.
 */
export function fps(coords: Float64Array, dim: number, m: number, start: number): Uint32Array;

/**
 * Inverse squared distance interpolation of per-source `values` (any
 * number of channels) onto `targets` from the `k` nearest sources.
 */
export function interpolate(targets: Float64Array, sources: Float64Array, values: Float64Array, dim: number, k: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly ball_query: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
    readonly demo_cloud: (a: number, b: bigint) => [number, number];
    readonly fps: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly interpolate: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
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
