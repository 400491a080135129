/**
 * Typed client for the relevance review service API.
 *
 * Endpoints (all JSON):
 *   GET  /api/topics              topics with per-topic progress
 *   GET  /api/topics/{id}/next    next unjudged task, or 204 when none remain
 *   POST /api/judgements          submit {topic_id, doc_id, label, assessor_id}
 *   GET  /api/progress            overall and per-topic progress
 */

export interface TopicOverview {
  topic_id: string;
  query_text: string;
  judged: number;
  total: number;
}

export interface Task {
  topic_id: string;
  doc_id: string;
  query_text: string;
  position: number;
  total_in_topic: number;
  doc_title: string;
  doc_text: string;
  error: string | null;
}

export type SubmissionStatus = "recorded" | "unchanged" | "corrected";

export interface SubmissionResult {
  status: SubmissionStatus;
  topic_id: string;
  doc_id: string;
  judged_in_topic: number;
  total_in_topic: number;
}

export interface TopicProgress {
  topic_id: string;
  judged: number;
  total: number;
}

export interface Progress {
  judged: number;
  total: number;
  per_topic: TopicProgress[];
}

export interface Submission {
  topic_id: string;
  doc_id: string;
  label: 0 | 1;
  assessor_id: string;
}

/** The service surface the session depends on (ApiClient implements it). */
export interface ReviewApi {
  topics(): Promise<TopicOverview[]>;
  nextTask(topicId: string): Promise<Task | null>;
  submit(submission: Submission): Promise<SubmissionResult>;
  progress(): Promise<Progress>;
}

/** Non-2xx response, carrying the HTTP status and the service's detail. */
export class ApiError extends Error {
  readonly status: number;
  readonly detail: string;

  constructor(status: number, detail: string) {
    super(`HTTP ${status}: ${detail}`);
    this.name = "ApiError";
    this.status = status;
    this.detail = detail;
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

async function errorDetail(res: Response): Promise<string> {
  try {
    const body = (await res.json()) as { detail?: unknown };
    if (typeof body.detail === "string") return body.detail;
    if (body.detail !== undefined) return JSON.stringify(body.detail);
  } catch {
    // not JSON; fall through to the status line
  }
  return res.statusText || `status ${res.status}`;
}

export class ApiClient implements ReviewApi {
  private readonly baseUrl: string;
  private readonly fetchImpl: FetchLike;

  /**
   * @param baseUrl  origin prefix; empty for same-origin (the service mounts
   *                 the UI and the API on one origin)
   * @param fetchImpl injectable for tests
   */
  constructor(baseUrl = "", fetchImpl?: FetchLike) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
    this.fetchImpl = fetchImpl ?? ((input, init) => fetch(input, init));
  }

  private async request(path: string, init?: RequestInit): Promise<Response> {
    const res = await this.fetchImpl(this.baseUrl + path, init);
    if (!res.ok) {
      throw new ApiError(res.status, await errorDetail(res));
    }
    return res;
  }

  async topics(): Promise<TopicOverview[]> {
    const res = await this.request("/api/topics");
    return (await res.json()) as TopicOverview[];
  }

  /** Lease the next unjudged document of a topic; null when the topic is done. */
  async nextTask(topicId: string): Promise<Task | null> {
    const res = await this.request(`/api/topics/${encodeURIComponent(topicId)}/next`);
    if (res.status === 204) return null;
    return (await res.json()) as Task;
  }

  async submit(submission: Submission): Promise<SubmissionResult> {
    const res = await this.request("/api/judgements", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(submission),
    });
    return (await res.json()) as SubmissionResult;
  }

  async progress(): Promise<Progress> {
    const res = await this.request("/api/progress");
    return (await res.json()) as Progress;
  }
}
