/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_sliceview_free: (a: number, b: number) => void;
export const generator_version: () => number;
export const model_info: () => [number, number, number, number];
export const sliceview_haar_rgba: (a: number, b: number, c: number) => [number, number, number, number];
export const sliceview_haar_roundtrip_error: (a: number, b: number, c: number) => [number, number, number];
export const sliceview_new: (a: number, b: number, c: number, d: number) => [number, number, number];
export const sliceview_segment_rgba: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const sliceview_segment_scores: (a: number, b: number) => [number, number, number, number];
export const sliceview_size: (a: number) => number;
export const sliceview_windowed_rgba: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
