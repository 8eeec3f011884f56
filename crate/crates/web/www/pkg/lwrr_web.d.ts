/* tslint:disable */
/* eslint-disable */

export function cycle_report(bytes: Uint8Array): string;

/**
 * One line per entry, sorted by thread and event id.
 */
export function dump_log(bytes: Uint8Array): string;

export function graph_dot(bytes: Uint8Array): string;

/**
 * The communication graph as an SVG document; edges on a cycle are drawn
 * with class `cycle`.
 */
export function graph_svg(bytes: Uint8Array): string;

/**
 * A small built-in log in the binary format.
 */
export function sample_log(name: string): Uint8Array;

/**
 * Names accepted by [`sample_log`].
 */
export function sample_names(): string[];

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly cycle_report: (a: number, b: number) => [number, number, number, number];
    readonly dump_log: (a: number, b: number) => [number, number, number, number];
    readonly graph_dot: (a: number, b: number) => [number, number, number, number];
    readonly graph_svg: (a: number, b: number) => [number, number, number, number];
    readonly sample_log: (a: number, b: number) => [number, number, number, number];
    readonly sample_names: () => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_drop_slice: (a: number, b: number) => void;
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
