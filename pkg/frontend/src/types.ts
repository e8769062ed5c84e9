export interface ShapePayload {
  dims: [number, number, number];
  occupied: number[][];
}

export interface PairPayload {
  pair_id: string;
  category: string;
  shape_a: ShapePayload;
  shape_b: ShapePayload;
}

export interface NextAssignment {
  annotator: string;
  done: boolean;
  pair: PairPayload | null;
}

export interface ImagePayload {
  pair_id: string;
  h: number;
  w: number;
  pixels: number[][];
}

export type Choice = "a" | "b";

export interface VoteRecord {
  pair_id: string;
  annotator_id: string;
  realism_choice: Choice;
  coherence_choice: Choice;
  t_realism: number;
  t_coherence: number;
  protocol_version: number;
}

export interface Progress {
  total_pairs: number;
  complete_pairs: number;
  total_votes: number;
  votes_per_pair: number;
}

export type Phase = "judging_realism" | "judging_coherence" | "done";

export const PROTOCOL_VERSION = 1;
