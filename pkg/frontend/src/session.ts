/** Listening-session state machine.
 *
 * One entry at a time: the clip must be played at least once before the
 * score can be submitted; submissions are guarded against double clicks;
 * a refreshed or reconnected session resumes at the first unrated entry.
 */

import { ConflictError, EntryInfo, RatingApi } from "./api.js";
import { Player } from "./player.js";

export const DEFAULT_SCORE = 50;

export interface EntryState {
  index: number;
  token: string;
  played: boolean;
  score: number;
  submitting: boolean;
}

export type SubmitOutcome = "advanced" | "done" | "skipped";

export class SessionFlow {
  private sessionId = "";
  private total = 0;
  private entry: EntryState | null = null;
  private completed = false;

  constructor(
    private readonly api: RatingApi,
    private readonly player: Player,
    private readonly studyId: string,
    private readonly raterId: string,
  ) {}

  async start(): Promise<void> {
    const info = await this.api.createSession(this.studyId, this.raterId);
    this.sessionId = info.session_id;
    this.total = info.total;
    this.completed = info.position >= info.total;
    if (!this.completed) {
      await this.loadEntry(info.position);
    }
  }

  private async loadEntry(index: number): Promise<void> {
    if (index >= this.total) {
      this.entry = null;
      this.completed = true;
      return;
    }
    const info: EntryInfo = await this.api.getEntry(this.sessionId, index);
    if (info.rated) {
      // server-side progress ran ahead (reconnection race): move forward
      await this.loadEntry(index + 1);
      return;
    }
    this.entry = {
      index,
      token: info.token,
      played: false,
      score: DEFAULT_SCORE,
      submitting: false,
    };
  }

  current(): EntryState {
    if (!this.entry) {
      throw new Error("session complete or not started");
    }
    return this.entry;
  }

  isComplete(): boolean {
    return this.completed;
  }

  progress(): { position: number; total: number } {
    return { position: this.entry ? this.entry.index : this.total, total: this.total };
  }

  async play(): Promise<void> {
    const entry = this.current();
    await this.player.play(this.api.audioUrl(entry.token));
    entry.played = true;
  }

  setScore(value: number): void {
    const entry = this.current();
    entry.score = Math.min(100, Math.max(0, Math.round(value)));
  }

  canSubmit(): boolean {
    return !!this.entry && this.entry.played && !this.entry.submitting;
  }

  async submit(): Promise<SubmitOutcome> {
    const entry = this.current();
    if (!entry.played) {
      throw new Error("play the clip before rating it");
    }
    if (entry.submitting) {
      throw new Error("submission already in flight");
    }
    entry.submitting = true;
    try {
      await this.api.submitRating(this.sessionId, entry.token, entry.score);
    } catch (err) {
      if (err instanceof ConflictError) {
        // already recorded (e.g. an earlier attempt landed): skip forward
        await this.loadEntry(entry.index + 1);
        return this.completed ? "done" : "skipped";
      }
      // network or server failure: keep the local state for a retry
      entry.submitting = false;
      throw err;
    }
    await this.loadEntry(entry.index + 1);
    return this.completed ? "done" : "advanced";
  }
}
