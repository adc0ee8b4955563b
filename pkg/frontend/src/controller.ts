/** Editor controller: action log + server round trips.
 *
 * One edit request is in flight at a time; later requests queue behind it
 * and responses carrying a superseded request number are dropped, so the
 * visible state always reflects the newest user intent.
 */

import { ApiClient } from "./api.js";
import type { EditRequest, Frames } from "./types.js";
import {
  Action,
  TimelineState,
  buildMask,
  framesWithKeyframes,
  initialState,
  keyframesHonored,
  replay,
} from "./state.js";

export interface RegenerateResult {
  data: Frames;
  seed: number;
  /** True when every placed keyframe came back bit-equal. */
  honored: boolean;
}

export class EditorController {
  private log: Action[] = [];
  private listeners: Array<(s: TimelineState) => void> = [];
  private requestCounter = 0;
  private newestApplied = 0;
  private inFlight: Promise<unknown> = Promise.resolve();

  constructor(
    private readonly api: ApiClient,
    public modelName = "",
  ) {}

  get state(): TimelineState {
    return replay(this.log);
  }

  get actionLog(): readonly Action[] {
    return this.log;
  }

  onChange(fn: (s: TimelineState) => void): void {
    this.listeners.push(fn);
  }

  dispatch(action: Action): TimelineState {
    // validate against the current state before committing to the log
    const next = replay([action], this.state);
    this.log.push(action);
    for (const fn of this.listeners) fn(next);
    return next;
  }

  reset(): void {
    this.log = [];
    for (const fn of this.listeners) fn(initialState);
  }

  async loadSequence(id: string): Promise<TimelineState> {
    const seq = await this.api.getSequence(id);
    return this.dispatch({ kind: "load", sequence: seq });
  }

  /** POST /edit for one seed; queued behind any in-flight request. */
  regenerate(seed: number, asOverlay = false): Promise<RegenerateResult | null> {
    const requestNo = ++this.requestCounter;
    const run = async (): Promise<RegenerateResult | null> => {
      const state = this.state;
      if (!state.sequence) throw new Error("no sequence loaded");
      const req: EditRequest = {
        model: this.modelName,
        frames: framesWithKeyframes(state),
        mask: buildMask(state),
        seed,
        scale: state.guidanceScale,
        fps: state.sequence.fps,
      };
      const res = await this.api.edit(req);
      if (requestNo < this.newestApplied) return null; // superseded
      this.newestApplied = requestNo;
      const honored = keyframesHonored(state, res.data);
      if (asOverlay) {
        this.dispatch({ kind: "addOverlay", seed, data: res.data });
      } else {
        this.dispatch({ kind: "applyEdit", data: res.data });
      }
      return { data: res.data, seed, honored };
    };
    const result = this.inFlight.then(run, run);
    this.inFlight = result.catch(() => undefined);
    return result;
  }

  /** Overlay several candidate regenerations of the same selection. */
  async compareSeeds(seeds: number[]): Promise<RegenerateResult[]> {
    const out: RegenerateResult[] = [];
    for (const seed of seeds) {
      const r = await this.regenerate(seed, true);
      if (r) out.push(r);
    }
    return out;
  }
}
