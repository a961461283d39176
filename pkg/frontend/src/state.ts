// Annotation flow state machine: pure transitions, no DOM, no network.
// The controller in main.ts feeds it canvas/ring events and service
// responses; tests drive it headlessly.

export type Phase =
  | "awaiting-pick"
  | "awaiting-pick-rotation"
  | "awaiting-place"
  | "awaiting-place-rotation";

export interface PendingAction {
  pick?: { u: number; v: number };
  pickRot?: number;
  place?: { u: number; v: number };
  placeRot?: number;
}

export interface FlowState {
  phase: Phase;
  pending: PendingAction;
  previewRot: number;
  pickCommitted: boolean;
  message: string | null;
}

export function initialFlow(): FlowState {
  return {
    phase: "awaiting-pick",
    pending: {},
    previewRot: 0,
    pickCommitted: false,
    message: null,
  };
}

/** Canvas click in image pixel coordinates; ignored outside the image. */
export function canvasClick(
  state: FlowState,
  u: number,
  v: number,
  height: number,
  width: number,
): FlowState {
  if (u < 0 || v < 0 || u >= height || v >= width) {
    return state; // outside the canvas: ignored, phase unchanged
  }
  if (state.phase === "awaiting-pick") {
    return {
      ...state,
      phase: "awaiting-pick-rotation",
      pending: { pick: { u, v } },
      previewRot: 0,
      message: null,
    };
  }
  if (state.phase === "awaiting-place") {
    return {
      ...state,
      phase: "awaiting-place-rotation",
      pending: { ...state.pending, place: { u, v } },
      previewRot: 0,
      message: null,
    };
  }
  return state;
}

/** Ring click fixes the rotation bin for the current phase. */
export function ringClick(state: FlowState, sector: number, k: number): FlowState {
  const rot = ((sector % k) + k) % k;
  if (state.phase === "awaiting-pick-rotation") {
    return {
      ...state,
      phase: "awaiting-place",
      pending: { ...state.pending, pickRot: rot },
      previewRot: 0,
    };
  }
  if (state.phase === "awaiting-place-rotation") {
    return {
      ...state,
      pending: { ...state.pending, placeRot: rot },
    };
  }
  return state;
}

/** +-1 bin keyboard nudge adjusts the previewed rotation before it is fixed. */
export function nudgePreview(state: FlowState, delta: number, k: number): FlowState {
  if (
    state.phase !== "awaiting-pick-rotation" &&
    state.phase !== "awaiting-place-rotation"
  ) {
    return state;
  }
  return { ...state, previewRot: (((state.previewRot + delta) % k) + k) % k };
}

export function confirmPreview(state: FlowState, k: number): FlowState {
  return ringClick(state, state.previewRot, k);
}

/** Undo removes the last uncommitted click. */
export function undo(state: FlowState): FlowState {
  switch (state.phase) {
    case "awaiting-pick-rotation":
      return { ...state, phase: "awaiting-pick", pending: {} };
    case "awaiting-place":
      return {
        ...state,
        phase: "awaiting-pick-rotation",
        pending: { pick: state.pending.pick },
      };
    case "awaiting-place-rotation":
      return {
        ...state,
        phase: "awaiting-place",
        pending: { ...state.pending, place: undefined, placeRot: undefined },
      };
    default:
      return state;
  }
}

/** True when both poses are fixed and the pair can be submitted. */
export function readyToSubmit(state: FlowState): boolean {
  const p = state.pending;
  return (
    state.phase === "awaiting-place-rotation" &&
    p.pick !== undefined &&
    p.pickRot !== undefined &&
    p.place !== undefined &&
    p.placeRot !== undefined
  );
}

/** The service accepted the pair: start the next annotation. */
export function submitted(state: FlowState): FlowState {
  return { ...initialFlow(), message: state.message };
}

/** Validation error: roll the phase back one step so the click can be redone. */
export function validationRollback(state: FlowState, failed: "pick" | "place",
                                   message: string): FlowState {
  if (failed === "pick") {
    return { ...initialFlow(), message };
  }
  return {
    ...state,
    phase: "awaiting-place",
    pending: { ...state.pending, place: undefined, placeRot: undefined },
    pickCommitted: true,
    message,
  };
}

/** Protocol error: reset, trusting the server's pending-pick report. */
export function protocolReset(
  state: FlowState,
  serverPendingPick: { u: number; v: number; rot: number } | null,
  message: string,
): FlowState {
  if (serverPendingPick) {
    return {
      phase: "awaiting-place",
      pending: {
        pick: { u: serverPendingPick.u, v: serverPendingPick.v },
        pickRot: serverPendingPick.rot,
      },
      previewRot: 0,
      pickCommitted: true,
      message,
    };
  }
  return { ...initialFlow(), message };
}

// ---------------------------------------------------------------------------
// Rotation-ring geometry (pure; shared by renderer and tests)

/** Number of selectable sectors on the ring: exactly k. */
export function ringSectorCount(k: number): number {
  return k;
}

/**
 * Map a pointer offset from the ring center to a rotation bin.
 * Screen y grows downward and equals image row u; screen x equals column v.
 * A bin angle theta has image-plane direction (cos theta, sin theta) in
 * (u, v), i.e. pointer (dx, dy) selects theta = atan2(dx, dy).
 */
export function sectorFromPointer(dx: number, dy: number, k: number): number {
  const theta = Math.atan2(dx, dy);
  const width = (2 * Math.PI) / k;
  return ((Math.round(theta / width) % k) + k) % k;
}

/** Screen-angle (radians, standard atan2 frame) of a bin's sector center. */
export function sectorScreenAngle(rot: number, k: number): number {
  const theta = (rot * 2 * Math.PI) / k;
  return Math.atan2(Math.cos(theta), Math.sin(theta));
}

/** World coordinates of a pixel center, for the cursor readout. */
export function pixelToWorld(
  u: number,
  v: number,
  frame: { x_min: number; y_min: number; pixel_size: number },
): { x: number; y: number } {
  return {
    x: frame.x_min + (u + 0.5) * frame.pixel_size,
    y: frame.y_min + (v + 0.5) * frame.pixel_size,
  };
}
