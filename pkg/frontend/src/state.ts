/** Client-side session state: a pure mirror of the server's history tree
 * plus the gallery being displayed. All transitions are synchronous and
 * side-effect free so the feedback loop (view -> vary -> promote -> vary)
 * is unit testable without a server or a DOM.
 *
 * Concurrency rule: at most one variations request may be in flight per
 * session; starting a new one aborts the previous (cancel-and-replace).
 */

import type { History } from "./api";

export interface Card {
  nodeId: string;
  tNoise: number;
  seed: number;
  parentId: string;
}

export interface SessionState {
  sessionId: string;
  rootId: string;
  currentId: string;
  /** node id -> parent id (null for the root) */
  parents: Map<string, string | null>;
  cards: Card[];
  pending: AbortController | null;
  error: string | null;
}

export function startSession(sessionId: string, rootId: string): SessionState {
  return {
    sessionId,
    rootId,
    currentId: rootId,
    parents: new Map([[rootId, null]]),
    cards: [],
    pending: null,
    error: null,
  };
}

/** Begin a variations request; aborts any in-flight one (cancel-and-replace). */
export function beginRequest(state: SessionState): {
  state: SessionState;
  controller: AbortController;
} {
  state.pending?.abort();
  const controller = new AbortController();
  return { state: { ...state, pending: controller, error: null }, controller };
}

export function applyVariations(
  state: SessionState,
  ids: string[],
  tNoise: number,
  seed: number,
): SessionState {
  const parents = new Map(state.parents);
  const cards: Card[] = ids.map((nodeId) => {
    parents.set(nodeId, state.currentId);
    return { nodeId, tNoise, seed, parentId: state.currentId };
  });
  return { ...state, parents, cards, pending: null };
}

export function promote(state: SessionState, nodeId: string): SessionState {
  if (!state.parents.has(nodeId)) {
    throw new Error(`unknown node ${nodeId}`);
  }
  return { ...state, currentId: nodeId, cards: [] };
}

export function fail(state: SessionState, message: string): SessionState {
  return { ...state, pending: null, error: message };
}

/** Rebuild the mirror from a server history document (page reload path). */
export function fromHistory(history: History): SessionState {
  const parents = new Map<string, string | null>();
  for (const node of history.nodes) parents.set(node.id, node.parent);
  return {
    sessionId: history.session_id,
    rootId: history.root_id,
    currentId: history.current_id,
    parents,
    cards: [],
    pending: null,
    error: null,
  };
}

/** Chain of node ids from the root to the given node, for breadcrumbs. */
export function lineage(state: SessionState, nodeId: string): string[] {
  const chain: string[] = [];
  let cursor: string | null = nodeId;
  while (cursor !== null) {
    chain.push(cursor);
    if (chain.length > state.parents.size) {
      throw new Error("history tree contains a cycle");
    }
    const parent = state.parents.get(cursor);
    if (parent === undefined) throw new Error(`unknown node ${cursor}`);
    cursor = parent;
  }
  return chain.reverse();
}
