/** DOM rendering: a pure function of ChatViewState.
 *
 * Card accents derive solely from the server's severity field; pivot values
 * render as clickable chips (hashes truncated to 8 chars + ellipsis).
 */

import type { Card, Pivot } from "./types.js";
import type { ChatViewState, Turn } from "./store.js";

export const SEVERITY_CLASS: Record<string, string> = {
  malicious: "accent-red",
  suspicious: "accent-yellow",
  info: "accent-neutral",
};

export function chipLabel(pivot: Pivot): string {
  if (pivot.entity_type === "FILE_HASH" && pivot.value.length > 8) {
    return pivot.value.slice(0, 8) + "…";
  }
  return pivot.value;
}

function el(tag: string, className: string, text?: string): HTMLElement {
  const node = document.createElement(tag);
  node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function renderTurn(turn: Turn): HTMLElement {
  const bubble = el("div", `turn ${turn.who}`);
  if (turn.kind) bubble.dataset.kind = turn.kind;
  bubble.appendChild(el("div", "turn-text", turn.text));
  if (turn.kind === "fallback" && turn.choices?.length) {
    // Capability list as tappable suggestions that prefill the composer.
    const suggestions = el("div", "suggestions");
    for (const label of turn.choices) {
      const chip = el("button", "suggestion-chip", label);
      chip.dataset.fill = label.replace(/_/g, " ");
      suggestions.appendChild(chip);
    }
    bubble.appendChild(suggestions);
  }
  if (turn.who === "bot" && turn.turnIndex !== undefined) {
    const controls = el("div", "feedback");
    for (const verdict of ["up", "down"] as const) {
      const button = el("button", `feedback-${verdict}`, verdict === "up" ? "\u{1F44D}" : "\u{1F44E}");
      button.dataset.turnIndex = String(turn.turnIndex);
      button.dataset.verdict = verdict;
      if (turn.feedback === verdict) {
        button.classList.add("latched");
        button.setAttribute("disabled", "disabled");
      }
      controls.appendChild(button);
    }
    bubble.appendChild(controls);
  }
  return bubble;
}

function renderCard(card: Card): HTMLElement {
  const node = el("article", `card ${SEVERITY_CLASS[card.severity] ?? "accent-neutral"}`);
  node.dataset.recordId = card.record_id;
  node.dataset.severity = card.severity;
  node.appendChild(el("header", "card-title", `${card.kind}: ${card.name}`));
  node.appendChild(el("div", "card-host", `${card.hostname} @ ${card.timestamp}`));
  if (card.tags.length) {
    node.appendChild(el("div", "card-tags", card.tags.join(", ")));
  }
  const chips = el("div", "card-pivots");
  for (const pivot of card.pivots) {
    const chip = el("button", "pivot-chip", chipLabel(pivot));
    chip.dataset.entityType = pivot.entity_type;
    chip.dataset.value = pivot.value;
    chip.title = `${pivot.entity_type} ${pivot.value}`;
    chips.appendChild(chip);
  }
  node.appendChild(chips);
  return node;
}

export function render(state: ChatViewState, root: HTMLElement): void {
  root.textContent = "";

  const status = el("div", `status status-${state.connection}`);
  status.textContent = state.sessionId
    ? `session ${state.sessionId.slice(0, 8)} (${state.connection})`
    : state.connection;
  root.appendChild(status);

  if (state.notice) {
    const notice = el("div", "notice", state.notice);
    if (state.retryText) {
      const retry = el("button", "retry-btn", "Retry");
      notice.appendChild(retry);
    }
    root.appendChild(notice);
  }

  const contextPanel = el("aside", "context-panel");
  contextPanel.appendChild(el("h3", "panel-title", "Pinned context"));
  if (state.context.length === 0) {
    contextPanel.appendChild(el("div", "context-empty", "nothing pinned"));
  }
  for (const binding of state.context) {
    const row = el("div", "context-binding", `${binding.entity_type}: ${binding.value}`);
    row.dataset.entityType = binding.entity_type;
    row.dataset.value = binding.value;
    contextPanel.appendChild(row);
  }
  root.appendChild(contextPanel);

  const stream = el("main", "message-stream");
  for (const turn of state.turns) stream.appendChild(renderTurn(turn));
  root.appendChild(stream);

  if (state.pendingChoice) {
    const prompt = el("div", `choice-prompt ${state.pendingChoice.kind}`);
    state.pendingChoice.choices.forEach((choice, index) => {
      const button = el("button", "choice-btn", choice);
      // Confirmation buttons send the literal affirmation/negation text;
      // disambiguation buttons send the 1-based option number.
      button.dataset.send =
        state.pendingChoice!.kind === "confirmation" ? choice : String(index + 1);
      prompt.appendChild(button);
    });
    root.appendChild(prompt);
  }

  const cardPane = el("section", "card-list");
  if (state.pendingTaskId) {
    cardPane.appendChild(el("div", "cards-pending", "results pending…"));
  } else if (state.cards.length === 0) {
    cardPane.appendChild(el("div", "empty-state", "No results yet."));
  }
  for (const card of state.cards) cardPane.appendChild(renderCard(card));
  root.appendChild(cardPane);

  const composer = el("form", "composer");
  const input = document.createElement("input");
  input.className = "composer-input";
  input.type = "text";
  input.placeholder = "Ask about your fleet…";
  if (state.inFlight) input.setAttribute("disabled", "disabled");
  const send = el("button", "composer-send", "Send");
  if (state.inFlight) send.setAttribute("disabled", "disabled");
  composer.appendChild(input);
  composer.appendChild(send);
  root.appendChild(composer);
}
