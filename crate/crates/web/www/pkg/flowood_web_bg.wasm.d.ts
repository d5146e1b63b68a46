/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_rocview_free: (a: number, b: number) => void;
export const __wbg_toydensity_free: (a: number, b: number) => void;
export const haar_rgba: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const roc: (a: number, b: number, c: number, d: number) => [number, number, number];
export const rocview_auc: (a: number) => number;
export const rocview_fpr: (a: number) => [number, number];
export const rocview_tpr: (a: number) => [number, number];
export const texture_rgba: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const toydensity_density: (a: number, b: number, c: number) => [number, number, number, number];
export const toydensity_new: (a: number, b: number, c: number, d: number) => [number, number, number];
export const toydensity_steps: (a: number) => number;
export const toydensity_train: (a: number, b: number, c: number) => [number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
