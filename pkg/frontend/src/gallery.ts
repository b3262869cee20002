// Recommendation gallery: the latest generation's top thumbnails. Clicking a
// card promotes that candidate into the viewport.

import { Store } from "./store";

export function mountGallery(host: HTMLElement, store: Store): void {
  host.innerHTML = `
    <div class="panel-title">Gallery <span id="gallery-meta"></span></div>
    <div id="gallery-cards" class="cards"></div>
  `;
  const meta = host.querySelector<HTMLSpanElement>("#gallery-meta")!;
  const cards = host.querySelector<HTMLDivElement>("#gallery-cards")!;

  store.subscribe(() => {
    if (!store.gallery) return;
    meta.textContent = `generation ${store.gallery.generation}`;
    cards.replaceChildren();
    for (const entry of store.gallery.entries) {
      const card = document.createElement("button");
      card.className = "card";
      if (entry.genome_id === store.selectedGenomeId) card.classList.add("selected");
      card.dataset.genomeId = entry.genome_id;

      const img = document.createElement("img");
      img.src = store.api.url(entry.url);
      img.alt = `genome ${entry.genome_id}`;
      const label = document.createElement("div");
      label.className = "card-label";
      label.textContent = `${entry.genome_id}  ${entry.rating.toFixed(1)}`;

      card.append(img, label);
      card.addEventListener("click", () => store.selectGenome(entry.genome_id));
      cards.appendChild(card);
    }
  });
}
