/* tslint:disable */
/* eslint-disable */

/**
 * Class label names in the order used by the scores.
 */
export function class_names(): string;

/**
 * Chronological cross-validation of SpecCSP, SPoC and FBCSP on one
 * synthetic session.
 */
export function cross_validate_synthetic(modulation: number, snr_db: number, n_trials: number, seed: number, folds: number, margin: number): string;

/**
 * Magnitude response (dB) of a Butterworth bandpass on `[0, fs/2]`.
 */
export function filter_response(order: number, low_hz: number, high_hz: number, fs_hz: number, n_points: number): string;

/**
 * Synthesizes a session, trains `method` on it, and returns the recovered
 * pattern next to the true one.
 */
export function train_synthetic(method: string, modulation: number, snr_db: number, n_trials: number, seed: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly class_names: () => [number, number];
    readonly cross_validate_synthetic: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly filter_response: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly train_synthetic: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_table_dealloc: (a: number) => void;
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
