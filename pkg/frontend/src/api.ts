import type { SessionHistory, TurnPayload } from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: unknown,
  ) {
    super(`request failed with ${status}`);
  }
}

async function parseDetail(res: Response): Promise<unknown> {
  try {
    const body = await res.json();
    return body && typeof body === "object" && "detail" in body
      ? (body as { detail: unknown }).detail
      : body;
  } catch {
    return null;
  }
}

async function request<T>(path: string, init?: RequestInit): Promise<T> {
  const res = await fetch(path, init);
  if (!res.ok) {
    throw new ApiError(res.status, await parseDetail(res));
  }
  if (res.status === 204) {
    return undefined as T;
  }
  return (await res.json()) as T;
}

export function createSession(seed?: number): Promise<{ session_id: string }> {
  return request("/sessions", {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(seed === undefined ? {} : { seed }),
  });
}

export function submitTurn(
  sessionId: string,
  instruction: string,
): Promise<TurnPayload> {
  return request(`/sessions/${sessionId}/turns`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify({ instruction }),
  });
}

export function getSession(sessionId: string): Promise<SessionHistory> {
  return request(`/sessions/${sessionId}`);
}

export function deleteSession(sessionId: string): Promise<void> {
  return request(`/sessions/${sessionId}`, { method: "DELETE" });
}
