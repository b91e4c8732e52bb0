/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_shuffleview_free: (a: number, b: number) => void;
export const __wbg_splicepreview_free: (a: number, b: number) => void;
export const shuffle_view: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
export const shuffleview_ratio: (a: number) => number;
export const shuffleview_shuffled: (a: number) => [number, number];
export const shuffleview_shuffled_ratio: (a: number) => number;
export const shuffleview_shuffled_spectrum: (a: number) => [number, number];
export const shuffleview_spectrum: (a: number) => [number, number];
export const splice_preview: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number];
export const splicepreview_coverage: (a: number) => number;
export const splicepreview_mask: (a: number) => [number, number];
export const splicepreview_shapes: (a: number) => [number, number];
export const splicepreview_spliced: (a: number) => [number, number];
export const synthetic: (a: number, b: number, c: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
