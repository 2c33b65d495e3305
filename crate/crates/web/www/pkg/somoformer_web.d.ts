/* tslint:disable */
/* eslint-disable */

/**
 * A tiny model trained in the page on a handful of two-person scenes.
 */
export class Forecaster {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Ground truth, model forecast and the zero-velocity baseline for one
     * training window.
     */
    forecast(index: number): string;
    /**
     * `windows` two-person scenes of 8 observed and 8 future frames,
     * trained for at most `epochs` full-batch steps.
     */
    constructor(seed: bigint, windows: number, epochs: number);
    /**
     * Runs up to `steps` optimizer steps and reports the last loss.
     */
    train(steps: number): string;
    windows(): number;
}

/**
 * A synthetic multi-person window before and after the chosen augmentations,
 * with the grid cell each person is assigned to.
 */
export function augment_preview(seed: bigint, persons: number, grid: number, rotate: boolean, reverse: boolean, permute: boolean): string;

/**
 * DCT of `signal`, then the inverse with only the first `keep`
 * coefficients.
 */
export function dct_truncate(signal: Float64Array, keep: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_forecaster_free: (a: number, b: number) => void;
    readonly augment_preview: (a: bigint, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly dct_truncate: (a: number, b: number, c: number) => [number, number, number, number];
    readonly forecaster_forecast: (a: number, b: number) => [number, number, number, number];
    readonly forecaster_new: (a: bigint, b: number, c: number) => [number, number, number];
    readonly forecaster_train: (a: number, b: number) => [number, number, number, number];
    readonly forecaster_windows: (a: number) => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
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
