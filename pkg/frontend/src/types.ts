export interface LayoutBox {
  id: number;
  prompt: string;
  box: [number, number, number, number]; // x, y, w, h in canvas pixels
}

export interface PromptBookPayload {
  caption: string;
  objects: [string, [number, number, number, number], number][];
  background: string;
  negative: string;
}

export interface CharacterImage {
  id: number;
  reference_url: string;
  onstage_url: string;
}

export interface TurnPayload {
  turn_index: number;
  prompt_book: PromptBookPayload;
  image_url: string;
  character_images: CharacterImage[];
  layout: LayoutBox[];
}

export interface SessionHistory {
  session_id: string;
  seed: number;
  canvas: [number, number];
  turns: TurnPayload[];
}

export interface DesignFailureDetail {
  message: string;
  transcripts: string[];
}
