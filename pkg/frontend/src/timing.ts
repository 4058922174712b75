// Frame-locked stimulus presentation.
//
// Both images are revealed inside a single animation frame (one paint)
// and, for timed trials, hidden in the first frame at or past the nominal
// deadline. The shown duration is measured from the frame timestamps so
// the report reflects what was actually on screen.

export type FrameCallback = (timeMs: number) => void;

export interface FrameSource {
  request(cb: FrameCallback): number;
  cancel(id: number): void;
}

export interface PairSurface {
  reveal(): void;
  hide(): void;
}

export interface Presentation {
  nominalMs: number | null;
  shownMs: number | null; // null for unlimited display
  revealedAt: number;
}

export const browserFrames: FrameSource = {
  request: (cb) => requestAnimationFrame(cb),
  cancel: (id) => cancelAnimationFrame(id),
};

/** Reveals the pair; for timed trials resolves once it is hidden again. */
export function presentPair(
  frames: FrameSource,
  surface: PairSurface,
  displayMs: number | null,
): Promise<Presentation> {
  return new Promise((resolve) => {
    frames.request((t0) => {
      surface.reveal();
      if (displayMs === null) {
        resolve({ nominalMs: null, shownMs: null, revealedAt: t0 });
        return;
      }
      const deadline = t0 + displayMs;
      const tick: FrameCallback = (t) => {
        if (t >= deadline) {
          surface.hide();
          resolve({ nominalMs: displayMs, shownMs: t - t0, revealedAt: t0 });
        } else {
          frames.request(tick);
        }
      };
      frames.request(tick);
    });
  });
}
