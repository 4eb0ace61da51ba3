import { ApiError, createSession, getSession, submitTurn } from "./api.js";
import { buildGallery } from "./gallery.js";
import { boxAt, drawOverlay } from "./overlay.js";
import type { DesignFailureDetail, TurnPayload } from "./types.js";

const SESSION_KEY = "stagecraft-session";

const state = {
  sessionId: null as string | null,
  canvas: [512, 512] as [number, number],
  turns: [] as TurnPayload[],
  overlaysOn: true,
  highlightId: null as number | null,
  inFlight: false,
};

const el = {
  chat: document.getElementById("chat") as HTMLDivElement,
  gallery: document.getElementById("gallery") as HTMLDivElement,
  form: document.getElementById("composer") as HTMLFormElement,
  input: document.getElementById("instruction") as HTMLInputElement,
  send: document.getElementById("send") as HTMLButtonElement,
  overlayToggle: document.getElementById("overlay-toggle") as HTMLInputElement,
  newSession: document.getElementById("new-session") as HTMLButtonElement,
  seed: document.getElementById("seed") as HTMLInputElement,
  status: document.getElementById("status") as HTMLSpanElement,
};

function setStatus(text: string): void {
  el.status.textContent = text;
}

function setInFlight(busy: boolean): void {
  state.inFlight = busy;
  el.input.disabled = busy;
  el.send.disabled = busy;
  el.send.textContent = busy ? "rendering..." : "send";
}

// ---------------------------------------------------------------------------
// chat rendering

function appendInstructionBubble(text: string): void {
  const bubble = document.createElement("div");
  bubble.className = "bubble user";
  bubble.textContent = text;
  el.chat.appendChild(bubble);
  el.chat.scrollTop = el.chat.scrollHeight;
}

function appendErrorBubble(message: string, transcripts: string[], retry: () => void): void {
  const bubble = document.createElement("div");
  bubble.className = "bubble error";
  const text = document.createElement("div");
  text.textContent = message;
  bubble.appendChild(text);
  if (transcripts.length) {
    const details = document.createElement("details");
    const summary = document.createElement("summary");
    summary.textContent = `designer transcripts (${transcripts.length})`;
    details.appendChild(summary);
    const pre = document.createElement("pre");
    pre.textContent = transcripts.join("\n\n--- attempt ---\n\n");
    details.appendChild(pre);
    bubble.appendChild(details);
  }
  const button = document.createElement("button");
  button.type = "button";
  button.textContent = "retry";
  button.addEventListener("click", () => {
    bubble.remove();
    retry();
  });
  bubble.appendChild(button);
  el.chat.appendChild(bubble);
  el.chat.scrollTop = el.chat.scrollHeight;
}

function appendTurnBubble(turn: TurnPayload): void {
  const bubble = document.createElement("div");
  bubble.className = "bubble image";

  const frame = document.createElement("div");
  frame.className = "frame";
  const img = document.createElement("img");
  img.src = turn.image_url;
  img.alt = `turn ${turn.turn_index}`;
  const canvas = document.createElement("canvas");
  canvas.className = "overlay";
  frame.appendChild(img);
  frame.appendChild(canvas);
  bubble.appendChild(frame);

  const caption = document.createElement("div");
  caption.className = "caption";
  caption.textContent =
    `turn ${turn.turn_index} - ` +
    `${turn.layout.length} character box${turn.layout.length === 1 ? "" : "es"}`;
  bubble.appendChild(caption);
  el.chat.appendChild(bubble);

  const redraw = () => {
    const scale = img.clientWidth > 0 ? img.clientWidth / state.canvas[0] : 1;
    canvas.width = img.clientWidth || state.canvas[0];
    canvas.height = img.clientHeight || state.canvas[1];
    const ctx = canvas.getContext("2d");
    if (!ctx) return;
    if (state.overlaysOn) {
      drawOverlay(ctx, turn.layout, scale, state.highlightId);
    } else {
      ctx.clearRect(0, 0, canvas.width, canvas.height);
    }
  };
  img.addEventListener("load", redraw);
  window.addEventListener("resize", redraw);
  redrawers.push(redraw);

  canvas.addEventListener("mousemove", (event) => {
    const rect = canvas.getBoundingClientRect();
    const scale = img.clientWidth > 0 ? img.clientWidth / state.canvas[0] : 1;
    const hit = boxAt(
      turn.layout,
      event.clientX - rect.left,
      event.clientY - rect.top,
      scale,
    );
    setHighlight(hit ? hit.id : null);
  });
  canvas.addEventListener("mouseleave", () => setHighlight(null));
  el.chat.scrollTop = el.chat.scrollHeight;
}

const redrawers: (() => void)[] = [];

function redrawAll(): void {
  for (const redraw of redrawers) redraw();
}

function setHighlight(id: number | null): void {
  if (state.highlightId === id) return;
  state.highlightId = id;
  redrawAll();
  for (const card of el.gallery.querySelectorAll<HTMLElement>(".card")) {
    card.classList.toggle("active", card.dataset.id === String(id));
  }
}

// ---------------------------------------------------------------------------
// gallery rendering

function renderGallery(): void {
  el.gallery.replaceChildren();
  for (const card of buildGallery(state.turns)) {
    const node = document.createElement("div");
    node.className = "card" + (card.removedAtTurn !== null ? " removed" : "");
    node.dataset.id = String(card.id);

    const title = document.createElement("div");
    title.className = "card-title";
    title.textContent = `#${card.id} ${card.prompt}`;
    node.appendChild(title);

    const row = document.createElement("div");
    row.className = "thumbs";
    for (const [label, url] of [
      ["reference", card.referenceUrl],
      ["on stage", card.onstageUrl],
    ] as const) {
      const cell = document.createElement("figure");
      const img = document.createElement("img");
      img.src = url;
      img.alt = `${label} for character ${card.id}`;
      const fig = document.createElement("figcaption");
      fig.textContent = label;
      cell.appendChild(img);
      cell.appendChild(fig);
      row.appendChild(cell);
    }
    node.appendChild(row);

    const meta = document.createElement("div");
    meta.className = "card-meta";
    meta.textContent =
      card.removedAtTurn !== null
        ? `removed at turn ${card.removedAtTurn}`
        : `first seen turn ${card.firstSeenTurn}`;
    node.appendChild(meta);

    node.addEventListener("mouseenter", () => setHighlight(card.id));
    node.addEventListener("mouseleave", () => setHighlight(null));
    el.gallery.appendChild(node);
  }
}

// ---------------------------------------------------------------------------
// session flow

async function ensureSession(): Promise<string> {
  if (state.sessionId) return state.sessionId;
  const seed = el.seed.value.trim() === "" ? undefined : Number(el.seed.value);
  const created = await createSession(seed);
  state.sessionId = created.session_id;
  localStorage.setItem(SESSION_KEY, created.session_id);
  setStatus(`session ${created.session_id}`);
  return created.session_id;
}

async function sendInstruction(instruction: string): Promise<void> {
  setInFlight(true);
  try {
    const sessionId = await ensureSession();
    const turn = await submitTurn(sessionId, instruction);
    state.turns.push(turn);
    appendTurnBubble(turn);
    renderGallery();
  } catch (error) {
    const { message, transcripts } = describeError(error);
    appendErrorBubble(message, transcripts, () => void sendInstruction(instruction));
  } finally {
    setInFlight(false);
  }
}

function describeError(error: unknown): { message: string; transcripts: string[] } {
  if (error instanceof ApiError) {
    if (error.status === 409) {
      return { message: "a turn is already in flight; wait and retry", transcripts: [] };
    }
    const detail = error.detail as DesignFailureDetail | string | null;
    if (detail && typeof detail === "object" && "transcripts" in detail) {
      return { message: detail.message, transcripts: detail.transcripts };
    }
    return { message: `request failed (${error.status})`, transcripts: [] };
  }
  return { message: String(error), transcripts: [] };
}

async function restoreSession(): Promise<void> {
  const stored = localStorage.getItem(SESSION_KEY);
  if (!stored) return;
  try {
    const history = await getSession(stored);
    state.sessionId = history.session_id;
    state.canvas = history.canvas;
    state.turns = history.turns;
    for (const turn of history.turns) {
      appendInstructionBubble(turn.prompt_book.caption);
      appendTurnBubble(turn);
    }
    renderGallery();
    setStatus(`session ${history.session_id} (${history.turns.length} turns restored)`);
  } catch {
    localStorage.removeItem(SESSION_KEY);
  }
}

function resetSession(): void {
  localStorage.removeItem(SESSION_KEY);
  state.sessionId = null;
  state.turns = [];
  redrawers.length = 0;
  el.chat.replaceChildren();
  el.gallery.replaceChildren();
  setStatus("new session on next instruction");
}

// ---------------------------------------------------------------------------
// wiring

el.form.addEventListener("submit", (event) => {
  event.preventDefault();
  const instruction = el.input.value.trim();
  if (!instruction || state.inFlight) return;
  appendInstructionBubble(instruction);
  el.input.value = "";
  void sendInstruction(instruction);
});

el.overlayToggle.addEventListener("change", () => {
  state.overlaysOn = el.overlayToggle.checked;
  redrawAll();
});

el.newSession.addEventListener("click", resetSession);

void restoreSession();
