/* tslint:disable */
/* eslint-disable */

export class ShuffleView {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly ratio: number;
    readonly shuffled: Uint8Array;
    readonly shuffled_ratio: number;
    readonly shuffled_spectrum: Uint8Array;
    /**
     * Log magnitude spectrum of the input, DC centered.
     */
    readonly spectrum: Uint8Array;
}

export class SplicePreview {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly coverage: number;
    /**
     * White where tampered.
     */
    readonly mask: Uint8Array;
    /**
     * `"strokes"` or `"boxes"` with their count.
     */
    readonly shapes: string;
    readonly spliced: Uint8Array;
}

/**
 * Shuffles `rgba` with the keyed permutation over `patch`-sized cells.
 */
export function shuffle_view(rgba: Uint8Array, width: number, height: number, seed: number, patch: number): ShuffleView;

/**
 * Draws a tamper mask at the default spec scaled to `size` and pastes
 * `donor` into `rgba` under it.
 */
export function splice_preview(rgba: Uint8Array, donor: Uint8Array, size: number, seed: number, strategy: string): SplicePreview;

/**
 * A smooth synthetic `size x size` image as RGBA.
 */
export function synthetic(seed: number, size: number, shapes: number): Uint8Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_shuffleview_free: (a: number, b: number) => void;
    readonly __wbg_splicepreview_free: (a: number, b: number) => void;
    readonly shuffle_view: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
    readonly shuffleview_ratio: (a: number) => number;
    readonly shuffleview_shuffled: (a: number) => [number, number];
    readonly shuffleview_shuffled_ratio: (a: number) => number;
    readonly shuffleview_shuffled_spectrum: (a: number) => [number, number];
    readonly shuffleview_spectrum: (a: number) => [number, number];
    readonly splice_preview: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number];
    readonly splicepreview_coverage: (a: number) => number;
    readonly splicepreview_mask: (a: number) => [number, number];
    readonly splicepreview_shapes: (a: number) => [number, number];
    readonly splicepreview_spliced: (a: number) => [number, number];
    readonly synthetic: (a: number, b: number, c: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
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
