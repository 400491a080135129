/**
 * Assessment flow state machine, free of DOM concerns.
 *
 * One assessor moves through: topic list -> tasks within a topic -> back to
 * the (refreshed) list -> everything judged.  The machine never advances
 * optimistically: after a submission is acknowledged, the next task is
 * whatever the service hands out.  Recoverable rejections (409 conflicts,
 * 422 validation) surface as a banner and the session re-fetches the next
 * task, so the UI cannot wedge on a document someone else already judged;
 * network failures keep the current task on screen so the same answer can
 * simply be pressed again.
 */

import { ApiError } from "./api.js";
import type { Progress, ReviewApi, Task, TopicOverview } from "./api.js";

export type View =
  | { kind: "loading"; message: string }
  | { kind: "topics"; topics: TopicOverview[]; allDone: boolean }
  | { kind: "judging"; task: Task }
  | { kind: "fatal"; message: string };

export interface SessionState {
  view: View;
  banner: string | null;
  progress: Progress | null;
  busy: boolean;
  assessorId: string;
}

export type Listener = (state: SessionState) => void;

function isRecoverable(error: unknown): error is ApiError {
  return error instanceof ApiError && (error.status === 409 || error.status === 422);
}

function describe(error: unknown): string {
  if (error instanceof ApiError) return error.detail;
  return error instanceof Error ? error.message : String(error);
}

export class Session {
  readonly assessorId: string;
  private readonly api: ReviewApi;
  private readonly listener: Listener;
  private view: View = { kind: "loading", message: "loading topics" };
  private banner: string | null = null;
  private progress: Progress | null = null;
  private busy = false;

  constructor(api: ReviewApi, assessorId: string, listener: Listener = () => {}) {
    this.api = api;
    this.assessorId = assessorId;
    this.listener = listener;
  }

  get state(): SessionState {
    return {
      view: this.view,
      banner: this.banner,
      progress: this.progress,
      busy: this.busy,
      assessorId: this.assessorId,
    };
  }

  private emit(): void {
    this.listener(this.state);
  }

  async start(): Promise<void> {
    await this.showTopics();
  }

  /** Load the topic list and overall progress; the landing view. */
  async showTopics(): Promise<void> {
    this.view = { kind: "loading", message: "loading topics" };
    this.emit();
    try {
      const [topics, progress] = await Promise.all([
        this.api.topics(),
        this.api.progress(),
      ]);
      this.progress = progress;
      const allDone = topics.every((t) => t.judged >= t.total);
      this.view = { kind: "topics", topics, allDone };
    } catch (error) {
      this.view = { kind: "fatal", message: describe(error) };
    }
    this.emit();
  }

  /** Enter a topic and lease its first open task. */
  async openTopic(topicId: string): Promise<void> {
    if (this.busy) return;
    this.busy = true;
    this.view = { kind: "loading", message: `loading ${topicId}` };
    this.emit();
    try {
      await this.advance(topicId);
    } catch (error) {
      this.view = { kind: "fatal", message: describe(error) };
    }
    this.busy = false;
    this.emit();
  }

  /**
   * Label the task on screen.  The next view comes from the service: the
   * following task, or the refreshed topic list when the topic is finished.
   */
  async judge(label: 0 | 1): Promise<void> {
    if (this.busy || this.view.kind !== "judging") return;
    const task = this.view.task;
    this.busy = true;
    this.emit();
    try {
      await this.api.submit({
        topic_id: task.topic_id,
        doc_id: task.doc_id,
        label,
        assessor_id: this.assessorId,
      });
      this.banner = null;
      this.progress = await this.api.progress();
      await this.advance(task.topic_id);
    } catch (error) {
      if (isRecoverable(error)) {
        // someone else got there first, or the submission was malformed:
        // tell the assessor and move on to whatever is actually open
        this.banner = describe(error);
        try {
          await this.advance(task.topic_id);
        } catch (advanceError) {
          this.view = { kind: "fatal", message: describe(advanceError) };
        }
      } else if (error instanceof ApiError) {
        this.view = { kind: "fatal", message: describe(error) };
      } else {
        // network hiccup: keep the task on screen, the same key retries
        this.banner = `submission failed (${describe(error)}); try again`;
      }
    }
    this.busy = false;
    this.emit();
  }

  /** Abandon the current topic and return to the list. */
  async leaveTopic(): Promise<void> {
    if (this.busy) return;
    this.banner = null;
    await this.showTopics();
  }

  dismissBanner(): void {
    this.banner = null;
    this.emit();
  }

  private async advance(topicId: string): Promise<void> {
    const task = await this.api.nextTask(topicId);
    if (task === null) {
      await this.showTopics();
      return;
    }
    this.view = { kind: "judging", task };
    this.emit();
  }
}
