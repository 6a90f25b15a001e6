// Rating page bootstrap: DOM wiring for the forced-choice flow.

import { FetchHttp } from "./api.js";
import { Progress, RatingFlow, RatingView } from "./rating.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function sessionToken(): string {
  const params = new URLSearchParams(window.location.search);
  const fromUrl = params.get("session");
  if (fromUrl) {
    window.localStorage.setItem("leverlab-session", fromUrl);
    return fromUrl;
  }
  let token = window.localStorage.getItem("leverlab-session");
  if (!token) {
    token = `sess-${Math.random().toString(36).slice(2, 10)}`;
    window.localStorage.setItem("leverlab-session", token);
  }
  return token;
}

function preloadImages(urls: string[]): Promise<void> {
  return new Promise((resolve) => {
    let pending = urls.length;
    if (pending === 0) return resolve();
    const settle = () => {
      pending -= 1;
      if (pending === 0) resolve();
    };
    for (const url of urls) {
      const image = new Image();
      image.onload = settle;
      image.onerror = settle;
      image.src = url;
    }
    // never block the pair on a stalled image fetch
    setTimeout(resolve, 4000);
  });
}

const view: RatingView = {
  showPair(pair) {
    el<HTMLImageElement>("left-image").src = pair.left;
    el<HTMLImageElement>("right-image").src = pair.right;
    el("question").textContent = pair.question;
    el("progress").textContent =
      `${pair.progress.answered} of ${pair.progress.total} pairs judged`;
    el("status").textContent = "";
    el("pair").style.display = "";
    el("done").style.display = "none";
  },
  showDone(progress: Progress) {
    el("pair").style.display = "none";
    el("done").style.display = "";
    el("done").textContent =
      `All done - ${progress.answered} of ${progress.total} pairs judged. Thank you!`;
  },
  showError(message: string) {
    el("status").textContent = message;
  },
  notifyRetrying(attempt: number) {
    el("status").textContent = `connection trouble, retrying (${attempt})...`;
  },
  preload: preloadImages,
};

const flow = new RatingFlow(new FetchHttp(), sessionToken(), view);

el("left-image").addEventListener("click", () => void flow.choose("left"));
el("right-image").addEventListener("click", () => void flow.choose("right"));
el("choose-left").addEventListener("click", () => void flow.choose("left"));
el("choose-right").addEventListener("click", () => void flow.choose("right"));
document.addEventListener("keydown", (event) => {
  if (event.key === "ArrowLeft") void flow.choose("left");
  if (event.key === "ArrowRight") void flow.choose("right");
});

void flow.start();
