import type {
  ContextBinding,
  ContextResponse,
  FeedbackVerdict,
  MessageResponse,
  SessionPayload,
  TaskResults,
} from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

/** 409: another turn is in flight on this session. */
export class BusyError extends ApiError {
  constructor() {
    super(409, "busy");
  }
}

type FetchFn = typeof globalThis.fetch;

export interface ApiOptions {
  token?: string;
  fetchFn?: FetchFn;
}

/** What the store needs from the transport; ApiClient is the real one. */
export interface Api {
  createSession(): Promise<{ session_id: string }>;
  getSession(sessionId: string): Promise<SessionPayload>;
  postMessage(sessionId: string, text: string): Promise<MessageResponse>;
  putContext(sessionId: string, bindings: ContextBinding[]): Promise<ContextResponse>;
  getResults(taskId: string): Promise<TaskResults>;
  postFeedback(
    sessionId: string,
    turnIndex: number,
    verdict: FeedbackVerdict,
  ): Promise<{ ok: boolean }>;
}

export class ApiClient implements Api {
  private fetchFn: FetchFn;
  private token: string;

  constructor(public baseUrl: string, options: ApiOptions = {}) {
    this.fetchFn = options.fetchFn ?? ((...args) => globalThis.fetch(...args));
    this.token = options.token ?? "";
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const headers: Record<string, string> = { "content-type": "application/json" };
    if (this.token) headers["authorization"] = `Bearer ${this.token}`;
    const response = await this.fetchFn(this.baseUrl + path, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (response.status === 409) throw new BusyError();
    if (!response.ok) {
      throw new ApiError(response.status, `${method} ${path} -> ${response.status}`);
    }
    return (await response.json()) as T;
  }

  createSession(): Promise<{ session_id: string }> {
    return this.request("POST", "/sessions");
  }

  getSession(sessionId: string): Promise<SessionPayload> {
    return this.request("GET", `/sessions/${sessionId}`);
  }

  postMessage(sessionId: string, text: string): Promise<MessageResponse> {
    return this.request("POST", `/sessions/${sessionId}/messages`, { text });
  }

  putContext(sessionId: string, bindings: ContextBinding[]): Promise<ContextResponse> {
    return this.request("PUT", `/sessions/${sessionId}/context`, { bindings });
  }

  getResults(taskId: string): Promise<TaskResults> {
    return this.request("GET", `/tasks/${taskId}/results`);
  }

  postFeedback(
    sessionId: string,
    turnIndex: number,
    verdict: FeedbackVerdict,
  ): Promise<{ ok: boolean }> {
    return this.request("POST", "/feedback", {
      session_id: sessionId,
      turn_index: turnIndex,
      verdict,
    });
  }
}
