/* tslint:disable */
/* eslint-disable */

export class PathExplorer {
    free(): void;
    [Symbol.dispose](): void;
    advance(steps: number): void;
    curvature(): Float64Array;
    cutoffs(): Float64Array;
    kappa(): number;
    constructor(n: number, seed: number, shear: number, noise: number, dt: number);
    time(): number;
}

/**
 * Flattened `[n0, r0, n1, r1, ...]`.
 */
export function galerkin_residuals(n_grid: number, seed: number, s: number): Float64Array;

export function theta_curve(radius: number, exponential: boolean, samples: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_pathexplorer_free: (a: number, b: number) => void;
    readonly galerkin_residuals: (a: number, b: number, c: number) => [number, number, number, number];
    readonly pathexplorer_advance: (a: number, b: number) => [number, number];
    readonly pathexplorer_curvature: (a: number) => [number, number, number, number];
    readonly pathexplorer_cutoffs: (a: number) => [number, number, number, number];
    readonly pathexplorer_kappa: (a: number) => number;
    readonly pathexplorer_new: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
    readonly pathexplorer_time: (a: number) => number;
    readonly theta_curve: (a: number, b: number, c: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
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
