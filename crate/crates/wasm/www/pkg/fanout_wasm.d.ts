/* tslint:disable */
/* eslint-disable */

/**
 * Group-normalized advantages and per-token weights. `rewards` is a list of
 * numbers; `agent_tokens` gives each rollout's per-agent output token counts
 * (e.g. `"120,40,40; 300"`), or is empty for one single-token agent each.
 */
export function group_advantages(rewards: string, agent_tokens: string): string;

/**
 * `[[length, penalty], ...]` from 0 to `max_len` in `step` increments.
 */
export function length_penalty_curve(max_len: number, step: number): string;

/**
 * Reward breakdown under the default reward settings.
 */
export function reward(answer_f1: number, format_valid: boolean, used_access: boolean, length: number): string;

/**
 * Item F1, row F1 and success of `pred` against `gt`. Either table may be
 * bare markdown or wrapped in a ```` ```markdown ```` block; `key_columns`
 * is comma separated.
 */
export function score_tables(pred: string, gt: string, key_columns: string): string;

/**
 * `[[ratio, surrogate, d/d logprob], ...]` for ratios in `(0, 2]`.
 */
export function surrogate_curve(adv: number, eps_low: number, eps_high: number, points: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly group_advantages: (a: number, b: number, c: number, d: number) => [number, number];
    readonly length_penalty_curve: (a: number, b: number) => [number, number];
    readonly reward: (a: number, b: number, c: number, d: number) => [number, number];
    readonly score_tables: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number];
    readonly surrogate_curve: (a: number, b: number, c: number, d: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
