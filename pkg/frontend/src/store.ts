/** Chat view state and its transitions.
 *
 * The state is a plain serializable object; the view renders it with no
 * hidden extras, so rebuilding the state from the server transcript renders
 * the same turn list. One in-flight turn max; a 409 rolls the optimistic
 * user bubble back (server transcript is the source of truth) and surfaces a
 * notice; a network failure keeps the text for a retry affordance.
 */

import { BusyError } from "./api.js";
import type { Api } from "./api.js";
import type {
  Card,
  ContextBinding,
  FeedbackVerdict,
  ResponseKind,
  TranscriptEvent,
} from "./types.js";

export interface Turn {
  who: "user" | "bot";
  text: string;
  kind?: ResponseKind;
  choices?: string[];
  turnIndex?: number;
  feedback?: "up" | "down";
}

export interface PendingChoice {
  kind: "disambiguation" | "confirmation";
  choices: string[];
}

export type Connection = "idle" | "connecting" | "ready" | "error";

export interface ChatViewState {
  sessionId: string | null;
  connection: Connection;
  turns: Turn[];
  pendingChoice: PendingChoice | null;
  cards: Card[];
  context: ContextBinding[];
  notice: string | null;
  inFlight: boolean;
  retryText: string | null;
  pendingTaskId: string | null;
}

export function initialState(): ChatViewState {
  return {
    sessionId: null,
    connection: "idle",
    turns: [],
    pendingChoice: null,
    cards: [],
    context: [],
    notice: null,
    inFlight: false,
    retryText: null,
    pendingTaskId: null,
  };
}

type Listener = (state: ChatViewState) => void;

export class ChatStore {
  state: ChatViewState = initialState();
  private listeners: Listener[] = [];

  constructor(private api: Api) {}

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private emit(): void {
    for (const listener of this.listeners) listener(this.state);
  }

  private patch(partial: Partial<ChatViewState>): void {
    this.state = { ...this.state, ...partial };
    this.emit();
  }

  async connect(): Promise<void> {
    this.patch({ connection: "connecting" });
    try {
      const { session_id } = await this.api.createSession();
      this.patch({ sessionId: session_id, connection: "ready" });
    } catch (error) {
      this.patch({ connection: "error", notice: `connection failed: ${error}` });
    }
  }

  /** Rebuild the turn list from the server transcript (page reload path). */
  async hydrate(sessionId: string): Promise<void> {
    const payload = await this.api.getSession(sessionId);
    const turns: Turn[] = [];
    payload.transcript.forEach((event: TranscriptEvent, index: number) => {
      if (event.who === "user" && typeof event.text === "string") {
        turns.push({ who: "user", text: event.text });
      } else if (event.who === "bot" && typeof event.text === "string") {
        turns.push({
          who: "bot",
          text: event.text,
          kind: event.kind,
          choices: event.choices ?? [],
          turnIndex: index,
        });
      }
    });
    const last = turns[turns.length - 1];
    let pendingChoice: PendingChoice | null = null;
    if (last?.kind === "confirmation" || last?.kind === "disambiguation") {
      pendingChoice = { kind: last.kind, choices: last.choices ?? [] };
    }
    this.patch({
      sessionId,
      connection: "ready",
      turns,
      pendingChoice,
      context: payload.view_context,
    });
  }

  async sendTurn(text: string): Promise<void> {
    if (!this.state.sessionId || this.state.inFlight) return;
    const optimistic: Turn = { who: "user", text };
    this.patch({
      turns: [...this.state.turns, optimistic],
      inFlight: true,
      notice: null,
      retryText: null,
    });
    try {
      const response = await this.api.postMessage(this.state.sessionId, text);
      const botTurn: Turn = {
        who: "bot",
        text: response.reply.text,
        kind: response.reply.kind,
        choices: response.reply.choices,
        turnIndex: response.turn_index,
      };
      const isChoice =
        response.reply.kind === "confirmation" || response.reply.kind === "disambiguation";
      this.patch({
        turns: [...this.state.turns, botTurn],
        pendingChoice: isChoice
          ? { kind: response.reply.kind as PendingChoice["kind"], choices: response.reply.choices }
          : null,
        cards: response.cards,
        inFlight: false,
        pendingTaskId:
          response.task_id && response.cards.length === 0 && /poll/.test(response.reply.text)
            ? response.task_id
            : null,
      });
    } catch (error) {
      const turns = this.state.turns.slice(0, -1); // roll back the optimistic bubble
      if (error instanceof BusyError) {
        this.patch({ turns, inFlight: false, notice: "The session is busy with another turn; try again." });
      } else {
        this.patch({
          turns,
          inFlight: false,
          notice: `send failed: ${error}`,
          retryText: text,
        });
      }
    }
  }

  /** Choice buttons send the literal choice text as the next turn. */
  async choose(choice: string): Promise<void> {
    await this.sendTurn(choice);
  }

  async retry(): Promise<void> {
    const text = this.state.retryText;
    if (text) await this.sendTurn(text);
  }

  /** Pin one pivot chip as the whole view context (replacement semantics). */
  async pivotToContext(entityType: string, value: string, source: string): Promise<void> {
    if (!this.state.sessionId) return;
    try {
      const response = await this.api.putContext(this.state.sessionId, [
        { entity_type: entityType, value, source },
      ]);
      this.patch({ context: response.view_context, notice: null });
    } catch (error) {
      this.patch({ notice: `context update failed: ${error}` });
    }
  }

  async sendFeedback(turnIndex: number, verdict: FeedbackVerdict): Promise<void> {
    if (!this.state.sessionId) return;
    const latch = (value: "up" | "down" | undefined) =>
      this.state.turns.map((turn) =>
        turn.turnIndex === turnIndex && turn.who === "bot"
          ? { ...turn, feedback: value }
          : turn,
      );
    if (verdict === "up" || verdict === "down") {
      this.patch({ turns: latch(verdict) });
    }
    try {
      await this.api.postFeedback(this.state.sessionId, turnIndex, verdict);
    } catch (error) {
      // unlatch so the control is usable again
      this.patch({ turns: latch(undefined), notice: `feedback failed: ${error}` });
    }
  }

  async pollPendingTask(): Promise<boolean> {
    const taskId = this.state.pendingTaskId;
    if (!taskId) return false;
    const results = await this.api.getResults(taskId);
    if (results.state === "done") {
      this.patch({ cards: results.cards, pendingTaskId: null });
      return false;
    }
    return true;
  }
}
