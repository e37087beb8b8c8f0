/**
 * DOM rendering for the console: results grid, mental-image pane, history
 * strip, status banners. Every number shown is copied verbatim from an API
 * payload.
 */

import type { RankedItem } from "./api.js";
import type { HistoryEntry } from "./state.js";

export function clear(el: HTMLElement): void {
  while (el.firstChild) el.removeChild(el.firstChild);
}

export function renderResultsGrid(container: HTMLElement, results: RankedItem[]): void {
  clear(container);
  for (const item of results) {
    const card = document.createElement("figure");
    card.className = "result-card";
    card.dataset.imageId = item.image_id;

    const img = document.createElement("img");
    img.src = item.image_url;
    img.alt = item.image_id;
    img.loading = "lazy";

    const caption = document.createElement("figcaption");
    const rank = document.createElement("span");
    rank.className = "rank";
    rank.textContent = `#${item.rank}`;
    const score = document.createElement("span");
    score.className = "score";
    score.textContent = item.score.toFixed(4);
    caption.append(rank, ` ${item.image_id} `, score);

    card.append(img, caption);
    container.append(card);
  }
}

export function renderMentalPane(
  pane: HTMLElement,
  mentalImageUrl: string | null,
  description: string | null,
): void {
  clear(pane);
  if (mentalImageUrl) {
    const img = document.createElement("img");
    img.src = mentalImageUrl;
    img.alt = "generated target image";
    pane.append(img);
  }
  if (description) {
    const text = document.createElement("p");
    text.className = "description";
    text.textContent = description;
    pane.append(text);
  }
  pane.hidden = !mentalImageUrl && !description;
}

export function renderHistoryStrip(
  strip: HTMLElement,
  entries: HistoryEntry[],
  onRestore: (index: number) => void,
): void {
  clear(strip);
  strip.hidden = entries.length === 0;
  entries.forEach((entry, index) => {
    const button = document.createElement("button");
    button.type = "button";
    button.className = "history-item";
    button.title = entry.modificationText;
    if (entry.mentalImageUrl) {
      const thumb = document.createElement("img");
      thumb.src = entry.mentalImageUrl;
      thumb.alt = entry.modificationText;
      button.append(thumb);
    }
    const label = document.createElement("span");
    label.textContent = entry.modificationText;
    button.append(label);
    button.addEventListener("click", () => onRestore(index));
    strip.append(button);
  });
}

export function showBanner(banner: HTMLElement, message: string | null): void {
  banner.textContent = message ?? "";
  banner.hidden = message === null;
}
