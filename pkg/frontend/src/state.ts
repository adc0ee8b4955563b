/** Pure timeline state: every view is a fold over (loaded data, action log).
 *
 * All transitions return fresh objects and throw on invariant violations
 * (keyframe index out of range, ill-ordered selection, overlay length
 * mismatch), so replaying an action log always reproduces the same state.
 */

import type { Frames, SequencePayload } from "./types.js";

export interface KeyframeSet {
  readonly [frame: number]: readonly number[];
}

export interface Overlay {
  readonly seed: number;
  readonly data: Frames;
}

export interface TimelineState {
  readonly sequence: SequencePayload | null;
  readonly keyframes: KeyframeSet;
  /** [start, end) frame interval chosen for regeneration, or null. */
  readonly selection: readonly [number, number] | null;
  /** Candidate regenerations indexed by seed, all sharing the sequence length. */
  readonly overlays: readonly Overlay[];
  readonly guidanceScale: number;
  /** Channels hidden from the curve view. */
  readonly hiddenChannels: ReadonlySet<number>;
  /** True once local edits diverge from the last server response. */
  readonly dirty: boolean;
}

export const initialState: TimelineState = {
  sequence: null,
  keyframes: {},
  selection: null,
  overlays: [],
  guidanceScale: 0.5,
  hiddenChannels: new Set(),
  dirty: false,
};

export type Action =
  | { kind: "load"; sequence: SequencePayload }
  | { kind: "placeKeyframe"; frame: number; values: number[] }
  | { kind: "deleteKeyframe"; frame: number }
  | { kind: "select"; start: number; end: number }
  | { kind: "clearSelection" }
  | { kind: "setScale"; scale: number }
  | { kind: "toggleChannel"; channel: number }
  | { kind: "addOverlay"; seed: number; data: Frames }
  | { kind: "clearOverlays" }
  | { kind: "applyEdit"; data: Frames };

function frameCount(state: TimelineState): number {
  return state.sequence ? state.sequence.frames : 0;
}

function checkFrame(state: TimelineState, frame: number): void {
  const n = frameCount(state);
  if (!Number.isInteger(frame) || frame < 0 || frame >= n) {
    throw new RangeError(`frame ${frame} outside [0, ${n})`);
  }
}

function checkValues(state: TimelineState, values: number[]): void {
  const c = state.sequence?.channels ?? 0;
  if (values.length !== c || values.some((v) => !Number.isFinite(v))) {
    throw new RangeError(`keyframe values must be ${c} finite numbers`);
  }
}

export function reduce(state: TimelineState, action: Action): TimelineState {
  switch (action.kind) {
    case "load": {
      const seq = action.sequence;
      if (seq.data.length !== seq.frames) {
        throw new RangeError(
          `sequence metadata says ${seq.frames} frames but payload has ${seq.data.length}`,
        );
      }
      return { ...initialState, guidanceScale: state.guidanceScale, sequence: seq };
    }
    case "placeKeyframe": {
      checkFrame(state, action.frame);
      checkValues(state, action.values);
      return {
        ...state,
        keyframes: { ...state.keyframes, [action.frame]: [...action.values] },
        dirty: true,
      };
    }
    case "deleteKeyframe": {
      checkFrame(state, action.frame);
      const { [action.frame]: _removed, ...rest } = state.keyframes as Record<
        number,
        readonly number[]
      >;
      return { ...state, keyframes: rest, dirty: true };
    }
    case "select": {
      const n = frameCount(state);
      if (!(0 <= action.start && action.start < action.end && action.end <= n)) {
        throw new RangeError(`selection [${action.start}, ${action.end}) ill-ordered for N=${n}`);
      }
      return { ...state, selection: [action.start, action.end] };
    }
    case "clearSelection":
      return { ...state, selection: null };
    case "setScale": {
      if (!(action.scale >= 0) || !Number.isFinite(action.scale)) {
        throw new RangeError(`guidance scale must be a non-negative number`);
      }
      return { ...state, guidanceScale: action.scale };
    }
    case "toggleChannel": {
      const hidden = new Set(state.hiddenChannels);
      if (hidden.has(action.channel)) hidden.delete(action.channel);
      else hidden.add(action.channel);
      return { ...state, hiddenChannels: hidden };
    }
    case "addOverlay": {
      if (action.data.length !== frameCount(state)) {
        throw new RangeError(
          `overlay has ${action.data.length} frames, sequence has ${frameCount(state)}`,
        );
      }
      const overlays = state.overlays.filter((o) => o.seed !== action.seed);
      return { ...state, overlays: [...overlays, { seed: action.seed, data: action.data }] };
    }
    case "clearOverlays":
      return { ...state, overlays: [] };
    case "applyEdit": {
      if (!state.sequence) throw new Error("no sequence loaded");
      if (action.data.length !== state.sequence.frames) {
        throw new RangeError("edited frames do not match the loaded sequence length");
      }
      return {
        ...state,
        sequence: { ...state.sequence, data: action.data },
        dirty: false,
      };
    }
  }
}

/** Rebuild a view from scratch; the UI is a pure function of the log. */
export function replay(actions: readonly Action[], start: TimelineState = initialState): TimelineState {
  return actions.reduce(reduce, start);
}

/** 0/1 per-frame mask: keyframes are 1; outside the selection everything is
 * preserved (1), inside only keyframed frames are. */
export function buildMask(state: TimelineState): number[] {
  const n = frameCount(state);
  if (n === 0) throw new Error("no sequence loaded");
  const [s, e] = state.selection ?? [0, n];
  const mask = new Array<number>(n).fill(1);
  for (let i = s; i < e; i++) mask[i] = 0;
  for (const key of Object.keys(state.keyframes)) mask[Number(key)] = 1;
  return mask;
}

/** Base frames with placed keyframe values substituted in. */
export function framesWithKeyframes(state: TimelineState): Frames {
  if (!state.sequence) throw new Error("no sequence loaded");
  const out = state.sequence.data.map((row) => [...row]);
  for (const [key, values] of Object.entries(state.keyframes)) {
    out[Number(key)] = [...values];
  }
  return out;
}

/** True when the response honors every placed keyframe exactly. */
export function keyframesHonored(state: TimelineState, data: Frames): boolean {
  return Object.entries(state.keyframes).every(([key, values]) => {
    const row = data[Number(key)];
    return (
      row !== undefined &&
      values.every((v: number, c: number) => row[c] === v)
    );
  });
}
