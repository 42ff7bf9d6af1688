/** Wire types for the chat service protocol. The client renders exactly what
 * the server sends; severity, intents, and slot decisions never originate
 * client-side. */

export type ResponseKind =
  | "clarification"
  | "disambiguation"
  | "confirmation"
  | "dispatch_ack"
  | "answer"
  | "fallback";

export type Severity = "malicious" | "suspicious" | "info";

export interface BotReply {
  kind: ResponseKind;
  text: string;
  choices: string[];
}

export interface Pivot {
  entity_type: string;
  value: string;
}

export interface Card {
  record_id: string;
  endpoint_id: string;
  hostname: string;
  kind: string;
  name: string;
  timestamp: number;
  severity: Severity;
  color: string;
  tags: string[];
  pivots: Pivot[];
  summary: string;
}

export interface MessageResponse {
  reply: BotReply;
  cards: Card[];
  task_id: string | null;
  turn_index: number;
}

export interface ContextBinding {
  entity_type: string;
  value: string;
  source: string;
}

export interface ContextResponse {
  ok: boolean;
  view_context: ContextBinding[];
}

export interface TaskResults {
  task_id: string;
  state: "done" | "pending";
  result: {
    task_id: string;
    statuses: Record<string, string>;
    records: unknown[];
    bytes_shipped: number;
    bytes_local: number;
  } | null;
  cards: Card[];
}

export interface TranscriptEvent {
  who?: "user" | "bot" | "system";
  event?: string;
  text?: string;
  kind?: ResponseKind;
  choices?: string[];
  [key: string]: unknown;
}

export interface SessionPayload {
  session_id: string;
  state: string;
  transcript: TranscriptEvent[];
  view_context: ContextBinding[];
}

export type FeedbackVerdict = "up" | "down" | number;
