/* tslint:disable */
/* eslint-disable */

/**
 * ROC points and area, in-distribution as the positive class.
 */
export class RocView {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly auc: number;
    readonly fpr: Float64Array;
    readonly tpr: Float64Array;
}

/**
 * An elementwise affine layer followed by planar layers, fitted by Adam
 * to an equal mixture of `N((+-mu, 0), sd^2 I)`.
 */
export class ToyDensity {
    free(): void;
    [Symbol.dispose](): void;
    density(n: number, extent: number): Float64Array;
    constructor(depth: number, mu: number, sd: number, seed: number);
    train(steps: number, lr: number): number;
    readonly steps: number;
}

export function haar_rgba(kind: string, size: number, seed: number, levels: number, gain: number): Uint8Array;

export function roc(scores_in: string, scores_out: string): RocView;

export function texture_rgba(kind: string, size: number, seed: number): Uint8Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_rocview_free: (a: number, b: number) => void;
    readonly __wbg_toydensity_free: (a: number, b: number) => void;
    readonly haar_rgba: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly roc: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly rocview_auc: (a: number) => number;
    readonly rocview_fpr: (a: number) => [number, number];
    readonly rocview_tpr: (a: number) => [number, number];
    readonly texture_rgba: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly toydensity_density: (a: number, b: number, c: number) => [number, number, number, number];
    readonly toydensity_new: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly toydensity_steps: (a: number) => number;
    readonly toydensity_train: (a: number, b: number, c: number) => [number, number, number];
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
