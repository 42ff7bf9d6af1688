import { describe, expect, it } from "vitest";

import { initialState } from "../src/store.js";
import type { ChatViewState } from "../src/store.js";
import { chipLabel, render } from "../src/view.js";
import type { Card, MessageResponse } from "../src/types.js";
import { fixture } from "./fixtures.js";

const cardsResponse = fixture<MessageResponse>("message_cards.json");

function mount(state: ChatViewState): HTMLElement {
  const root = document.createElement("div");
  render(state, root);
  return root;
}

function stateWith(partial: Partial<ChatViewState>): ChatViewState {
  return { ...initialState(), sessionId: "s", connection: "ready", ...partial };
}

describe("render_cards", () => {
  it("malicious cards carry the red accent class", () => {
    const root = mount(stateWith({ cards: cardsResponse.cards }));
    const malicious = root.querySelectorAll(".card.accent-red");
    expect(malicious.length).toBe(
      cardsResponse.cards.filter((c) => c.severity === "malicious").length,
    );
    expect(malicious.length).toBeGreaterThan(0);
  });

  it("color classes derive solely from the severity field", () => {
    const base = cardsResponse.cards[0];
    const variants: Card[] = [
      { ...base, severity: "malicious" },
      { ...base, severity: "suspicious" },
      { ...base, severity: "info" },
    ];
    const root = mount(stateWith({ cards: variants }));
    const classes = Array.from(root.querySelectorAll(".card")).map((n) => n.className);
    expect(classes[0]).toContain("accent-red");
    expect(classes[1]).toContain("accent-yellow");
    expect(classes[2]).toContain("accent-neutral");
  });

  it("zero cards renders the empty state", () => {
    const root = mount(stateWith({ cards: [] }));
    expect(root.querySelector(".empty-state")?.textContent).toBe("No results yet.");
  });

  it("hash pivots render truncated chips (8 chars + ellipsis)", () => {
    const root = mount(stateWith({ cards: cardsResponse.cards }));
    const chip = Array.from(
      root.querySelectorAll<HTMLElement>(".pivot-chip"),
    ).find((c) => c.dataset.entityType === "FILE_HASH");
    expect(chip).toBeDefined();
    expect(chip!.textContent).toBe("2b99370d…");
    expect(chip!.dataset.value).toBe("2b99370daf5b210267708eb5208ef6b9");
  });

  it("short pivot values are not truncated", () => {
    expect(chipLabel({ entity_type: "PID", value: "4412" })).toBe("4412");
    expect(chipLabel({ entity_type: "FILE_HASH", value: "abc" })).toBe("abc");
  });
});

describe("choice prompts", () => {
  it("confirmation buttons send the literal affirmation strings", () => {
    const root = mount(
      stateWith({ pendingChoice: { kind: "confirmation", choices: ["yes", "no"] } }),
    );
    const buttons = Array.from(root.querySelectorAll<HTMLElement>(".choice-btn"));
    expect(buttons.map((b) => b.dataset.send)).toEqual(["yes", "no"]);
    expect(buttons.map((b) => b.textContent)).toEqual(["yes", "no"]);
  });

  it("disambiguation buttons send 1-based option numbers", () => {
    const root = mount(
      stateWith({
        pendingChoice: {
          kind: "disambiguation",
          choices: ["file name: command.com", "domain: command.com"],
        },
      }),
    );
    const buttons = Array.from(root.querySelectorAll<HTMLElement>(".choice-btn"));
    expect(buttons.map((b) => b.dataset.send)).toEqual(["1", "2"]);
  });

  it("at most one pending prompt is rendered", () => {
    const root = mount(
      stateWith({ pendingChoice: { kind: "confirmation", choices: ["yes", "no"] } }),
    );
    expect(root.querySelectorAll(".choice-prompt").length).toBe(1);
  });
});

describe("fallback suggestions", () => {
  it("renders capability choices as tappable suggestion chips", () => {
    const fallback = fixture<MessageResponse>("message_fallback.json");
    const root = mount(
      stateWith({
        turns: [
          {
            who: "bot",
            text: fallback.reply.text,
            kind: "fallback",
            choices: fallback.reply.choices,
            turnIndex: 1,
          },
        ],
      }),
    );
    const chips = Array.from(root.querySelectorAll<HTMLElement>(".suggestion-chip"));
    expect(chips.length).toBe(fallback.reply.choices.length);
    expect(chips[0].dataset.fill).toBe(fallback.reply.choices[0].replace(/_/g, " "));
  });
});

describe("turns and feedback controls", () => {
  it("feedback buttons exist only on bot turns", () => {
    const root = mount(
      stateWith({
        turns: [
          { who: "user", text: "hello" },
          { who: "bot", text: "hi", kind: "answer", turnIndex: 1 },
        ],
      }),
    );
    const userTurn = root.querySelector(".turn.user")!;
    const botTurn = root.querySelector(".turn.bot")!;
    expect(userTurn.querySelectorAll(".feedback-up").length).toBe(0);
    expect(botTurn.querySelectorAll(".feedback-up").length).toBe(1);
  });

  it("latched feedback disables the button", () => {
    const root = mount(
      stateWith({
        turns: [{ who: "bot", text: "hi", kind: "answer", turnIndex: 1, feedback: "up" }],
      }),
    );
    const up = root.querySelector<HTMLButtonElement>(".feedback-up")!;
    expect(up.classList.contains("latched")).toBe(true);
    expect(up.disabled).toBe(true);
  });

  it("busy notice renders without touching the transcript", () => {
    const turns = [{ who: "user" as const, text: "hello" }];
    const root = mount(stateWith({ turns, notice: "The session is busy" }));
    expect(root.querySelector(".notice")?.textContent).toContain("busy");
    expect(root.querySelectorAll(".turn").length).toBe(1);
  });
});

describe("render purity", () => {
  it("identical state renders identical DOM", () => {
    const state = stateWith({
      turns: [
        { who: "user", text: "find it" },
        { who: "bot", text: "done", kind: "dispatch_ack", turnIndex: 1 },
      ],
      cards: cardsResponse.cards,
      context: [{ entity_type: "FILE_HASH", value: "a".repeat(32), source: "x" }],
    });
    expect(mount(state).innerHTML).toBe(mount(state).innerHTML);
  });

  it("rendering is driven only by the state object", () => {
    const root = document.createElement("div");
    const state = stateWith({ cards: cardsResponse.cards });
    render(state, root);
    const first = root.innerHTML;
    render(stateWith({}), root);
    render(state, root);
    expect(root.innerHTML).toBe(first);
  });
});
