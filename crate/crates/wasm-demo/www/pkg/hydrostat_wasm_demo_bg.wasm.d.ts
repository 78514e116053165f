/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_pathexplorer_free: (a: number, b: number) => void;
export const galerkin_residuals: (a: number, b: number, c: number) => [number, number, number, number];
export const pathexplorer_advance: (a: number, b: number) => [number, number];
export const pathexplorer_curvature: (a: number) => [number, number, number, number];
export const pathexplorer_cutoffs: (a: number) => [number, number, number, number];
export const pathexplorer_kappa: (a: number) => number;
export const pathexplorer_new: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
export const pathexplorer_time: (a: number) => number;
export const theta_curve: (a: number, b: number, c: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
