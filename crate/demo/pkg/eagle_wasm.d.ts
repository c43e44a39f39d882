/* tslint:disable */
/* eslint-disable */

/**
 * One synthetic slice plus its ground-truth mask, generated in HU space so
 * the window controls re-render without regenerating.
 */
export class SliceView {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * RGBA grid of the four Haar sub-bands (L, HV / HH, HD).
     */
    haar_rgba(level: number, width: number): Uint8Array;
    /**
     * Max abs reconstruction error of the Haar round trip.
     */
    haar_roundtrip_error(level: number, width: number): number;
    /**
     * `kind` is "ce" or "ae"; `size` is 64, 128, or 256.
     */
    constructor(kind: string, seed: number, size: number);
    /**
     * RGBA heatmap of the embedded model's prediction, with predicted (red)
     * and ground-truth (green) boundaries.
     */
    segment_rgba(threshold: number, level: number, width: number): Uint8Array;
    /**
     * `[dsc, precision, recall]` of the thresholded prediction against the
     * generator's mask.
     */
    segment_scores(threshold: number): Float64Array;
    size(): number;
    /**
     * RGBA pixels of the windowed slice; optionally draws the ground-truth
     * lesion boundary.
     */
    windowed_rgba(level: number, width: number, show_mask: boolean): Uint8Array;
}

/**
 * Version tag of the synthetic generator baked into this build.
 */
export function generator_version(): number;

/**
 * Human-readable description of the embedded model.
 */
export function model_info(): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_sliceview_free: (a: number, b: number) => void;
    readonly generator_version: () => number;
    readonly model_info: () => [number, number, number, number];
    readonly sliceview_haar_rgba: (a: number, b: number, c: number) => [number, number, number, number];
    readonly sliceview_haar_roundtrip_error: (a: number, b: number, c: number) => [number, number, number];
    readonly sliceview_new: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly sliceview_segment_rgba: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly sliceview_segment_scores: (a: number, b: number) => [number, number, number, number];
    readonly sliceview_size: (a: number) => number;
    readonly sliceview_windowed_rgba: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
