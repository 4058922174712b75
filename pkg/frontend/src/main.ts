// DOM entry point. Layout: two 400x200 slots side by side, two choice
// buttons underneath, status line on top. Left/right placement comes
// solely from the server's trial record.

import { runSession, type StudyView } from "./session.js";
import { browserFrames } from "./timing.js";
import type { Choice } from "./types.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

class DomView implements StudyView {
  private left = el<HTMLImageElement>("left-img");
  private right = el<HTMLImageElement>("right-img");
  private leftBtn = el<HTMLButtonElement>("choose-left");
  private rightBtn = el<HTMLButtonElement>("choose-right");
  private status = el<HTMLElement>("status");
  private stagePane = el<HTMLElement>("stage");
  private donePane = el<HTMLElement>("done");
  private resolveChoice: ((c: Choice) => void) | null = null;

  constructor() {
    this.leftBtn.addEventListener("click", () => this.pick("left"));
    this.rightBtn.addEventListener("click", () => this.pick("right"));
    this.disableChoices();
  }

  private pick(choice: Choice) {
    if (this.resolveChoice) {
      const resolve = this.resolveChoice;
      this.resolveChoice = null;
      resolve(choice);
    }
  }

  setProgress(answered: number, total: number) {
    this.status.textContent = `pair ${answered + 1} of ${total}: pick the more realistic image`;
  }

  stage(leftUrl: string, rightUrl: string) {
    this.left.src = leftUrl;
    this.right.src = rightUrl;
    this.hide();
  }

  reveal() {
    this.stagePane.classList.remove("masked");
  }

  hide() {
    this.stagePane.classList.add("masked");
  }

  showBlank() {
    this.hide();
  }

  awaitChoice(): Promise<Choice> {
    this.leftBtn.disabled = false;
    this.rightBtn.disabled = false;
    return new Promise((resolve) => {
      this.resolveChoice = resolve;
    });
  }

  disableChoices() {
    this.leftBtn.disabled = true;
    this.rightBtn.disabled = true;
    this.resolveChoice = null;
  }

  showCompletion(answered: number, total: number) {
    this.stagePane.hidden = true;
    this.donePane.hidden = false;
    this.donePane.textContent =
      `Session complete: ${answered} of ${total} comparisons answered. Thank you.`;
  }
}

function preload(leftUrl: string, rightUrl: string): Promise<void> {
  const one = (url: string) =>
    new Promise<void>((resolve, reject) => {
      const img = new Image();
      img.onload = () => resolve();
      img.onerror = () => reject(new Error(`failed to load ${url}`));
      img.src = url;
    });
  return Promise.all([one(leftUrl), one(rightUrl)]).then(() => undefined);
}

function sessionId(): string {
  const key = "study-session-id";
  let sid = window.localStorage.getItem(key);
  if (!sid) {
    sid = `s-${Math.random().toString(36).slice(2, 10)}`;
    window.localStorage.setItem(key, sid);
  }
  return sid;
}

window.addEventListener("DOMContentLoaded", () => {
  runSession({
    baseUrl: "",
    session: sessionId(),
    view: new DomView(),
    frames: browserFrames,
    net: { fetchFn: (url, init) => fetch(url, init) },
    preload,
    now: () => performance.now(),
    sleep: (ms) => new Promise((r) => setTimeout(r, ms)),
  }).catch((err) => {
    const status = document.getElementById("status");
    if (status) status.textContent = `error: ${err.message ?? err}`;
  });
});
