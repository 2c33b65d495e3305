/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_forecaster_free: (a: number, b: number) => void;
export const augment_preview: (a: bigint, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const dct_truncate: (a: number, b: number, c: number) => [number, number, number, number];
export const forecaster_forecast: (a: number, b: number) => [number, number, number, number];
export const forecaster_new: (a: bigint, b: number, c: number) => [number, number, number];
export const forecaster_train: (a: number, b: number) => [number, number, number, number];
export const forecaster_windows: (a: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_start: () => void;
