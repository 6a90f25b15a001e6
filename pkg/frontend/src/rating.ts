// 2AFC rating flow: fetch a pair, force a choice, submit, advance.
//
// The flow never sees which side is edited; the server payload carries only
// opaque assignment tokens and per-assignment image URLs. Submissions are
// idempotent by token, so a dropped response is retried safely and a 409
// (already recorded) simply advances.

import { ApiError, Http, NetworkError, PairView, nextPair, submitJudgement } from "./api.js";

export interface Progress {
  answered: number;
  total: number;
}

export interface RatingView {
  showPair(pair: {
    left: string;
    right: string;
    question: string;
    progress: Progress;
  }): void;
  showDone(progress: Progress): void;
  showError(message: string): void;
  notifyRetrying(attempt: number): void;
  preload(urls: string[]): Promise<void> | void;
}

export interface RatingOptions {
  retryDelayMs?: number;
  maxRetries?: number;
  now?: () => number;
  sleep?: (ms: number) => Promise<void>;
}

const defaultSleep = (ms: number) => new Promise<void>((r) => setTimeout(r, ms));

export class RatingFlow {
  private current: PairView | null = null;
  private shownAt = 0;
  private busy = false;
  submitted = 0;

  constructor(
    private http: Http,
    private session: string,
    private view: RatingView,
    private options: RatingOptions = {},
  ) {}

  async start(): Promise<void> {
    await this.advance();
  }

  private async advance(): Promise<void> {
    let pair: PairView;
    try {
      pair = await nextPair(this.http, this.session);
    } catch (err) {
      this.view.showError(`could not fetch the next pair: ${err}`);
      return;
    }
    if (pair.done) {
      this.current = null;
      this.view.showDone(pair.progress);
      return;
    }
    this.current = pair;
    // Both sides are warmed before display so neither carries a loading
    // penalty the other does not.
    await this.view.preload([pair.left_url!, pair.right_url!]);
    this.shownAt = (this.options.now ?? Date.now)();
    this.view.showPair({
      left: pair.left_url!,
      right: pair.right_url!,
      question: pair.question,
      progress: pair.progress,
    });
  }

  async choose(side: "left" | "right"): Promise<void> {
    if (this.busy || this.current === null) {
      return; // double presses collapse into the in-flight submission
    }
    const pair = this.current;
    this.busy = true;
    const latency = (this.options.now ?? Date.now)() - this.shownAt;
    const maxRetries = this.options.maxRetries ?? 5;
    const delay = this.options.retryDelayMs ?? 1000;
    const sleep = this.options.sleep ?? defaultSleep;

    let attempt = 0;
    for (;;) {
      try {
        await submitJudgement(this.http, pair.assignment_id!, side, latency);
        this.submitted += 1;
        break;
      } catch (err) {
        if (err instanceof ApiError && err.status === 409) {
          break; // already recorded (an earlier retry landed): advance
        }
        if (err instanceof ApiError && err.status === 400) {
          break; // stale token: refetching yields the authoritative pair
        }
        if (err instanceof NetworkError && attempt < maxRetries) {
          attempt += 1;
          this.view.notifyRetrying(attempt);
          await sleep(delay);
          continue; // idempotent resubmission with the same token
        }
        this.busy = false;
        this.view.showError(`submission failed: ${err}`);
        return;
      }
    }
    this.busy = false;
    this.current = null;
    await this.advance();
  }
}
