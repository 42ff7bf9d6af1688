/** Browser bootstrap: wires the store to the DOM with event delegation and a
 * 1-second poll for long-running task results. */

import { ApiClient } from "./api.js";
import { ChatStore } from "./store.js";
import { render } from "./view.js";

const POLL_INTERVAL_MS = 1000;

export function startApp(root: HTMLElement, baseUrl: string, token = ""): ChatStore {
  const store = new ChatStore(new ApiClient(baseUrl, { token }));
  let pollTimer: ReturnType<typeof setInterval> | null = null;

  function ensurePolling(): void {
    if (store.state.pendingTaskId && pollTimer === null) {
      pollTimer = setInterval(async () => {
        const stillPending = await store.pollPendingTask().catch(() => false);
        if (!stillPending && pollTimer !== null) {
          clearInterval(pollTimer);
          pollTimer = null;
        }
      }, POLL_INTERVAL_MS);
    }
  }

  store.subscribe((state) => {
    render(state, root);
    ensurePolling();
  });

  root.addEventListener("click", (event) => {
    const target = event.target as HTMLElement;
    if (target.classList.contains("choice-btn") && target.dataset.send) {
      void store.choose(target.dataset.send);
    } else if (target.classList.contains("pivot-chip")) {
      void store.pivotToContext(
        target.dataset.entityType ?? "",
        target.dataset.value ?? "",
        "card pivot",
      );
    } else if (
      target.classList.contains("feedback-up") ||
      target.classList.contains("feedback-down")
    ) {
      const turnIndex = Number(target.dataset.turnIndex);
      void store.sendFeedback(turnIndex, target.dataset.verdict as "up" | "down");
    } else if (target.classList.contains("retry-btn")) {
      void store.retry();
    } else if (target.classList.contains("suggestion-chip") && target.dataset.fill) {
      const input = root.querySelector<HTMLInputElement>(".composer-input");
      if (input) {
        input.value = target.dataset.fill;
        input.focus();
      }
    }
  });

  root.addEventListener("submit", (event) => {
    event.preventDefault();
    const input = root.querySelector<HTMLInputElement>(".composer-input");
    const text = input?.value.trim();
    if (text) void store.sendTurn(text);
  });

  void store.connect();
  return store;
}

declare global {
  interface Window {
    fleetchatStore?: ChatStore;
  }
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  const params = new URLSearchParams(window.location.search);
  const baseUrl = params.get("api") ?? "http://127.0.0.1:8123";
  const token = params.get("token") ?? "";
  window.fleetchatStore = startApp(document.getElementById("app")!, baseUrl, token);
}
