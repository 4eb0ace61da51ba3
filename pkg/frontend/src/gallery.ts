import type { TurnPayload } from "./types.js";

export interface CharacterCard {
  id: number;
  prompt: string;
  referenceUrl: string;
  onstageUrl: string;
  firstSeenTurn: number;
  /** Set when the character is absent from the latest turn's book. */
  removedAtTurn: number | null;
}

/** Fold the session's turns into one card per character id.
 *
 * The reference thumbnail is frozen at first appearance; the on-stage
 * image and prompt track the character's most recent turn; a character
 * missing from the newest book is marked removed at the first turn it
 * went missing after last being seen.
 */
export function buildGallery(turns: TurnPayload[]): CharacterCard[] {
  const cards = new Map<number, CharacterCard>();
  const lastSeen = new Map<number, number>();
  for (const turn of turns) {
    const present = new Set(turn.layout.map((box) => box.id));
    for (const image of turn.character_images) {
      const existing = cards.get(image.id);
      const prompt =
        turn.layout.find((box) => box.id === image.id)?.prompt ?? "";
      if (!existing) {
        cards.set(image.id, {
          id: image.id,
          prompt,
          referenceUrl: image.reference_url,
          onstageUrl: image.onstage_url,
          firstSeenTurn: turn.turn_index,
          removedAtTurn: null,
        });
      } else {
        existing.onstageUrl = image.onstage_url;
        if (prompt) {
          existing.prompt = prompt;
        }
      }
    }
    for (const id of present) {
      lastSeen.set(id, turn.turn_index);
    }
  }
  const latest = turns.length ? turns[turns.length - 1].turn_index : 0;
  for (const card of cards.values()) {
    const seen = lastSeen.get(card.id) ?? card.firstSeenTurn;
    card.removedAtTurn = seen < latest ? seen + 1 : null;
  }
  return [...cards.values()].sort((a, b) => a.id - b.id);
}
