// Feature panel: one isolation render per gene of the current best genome.
// Selecting a feature highlights it in the viewport and arms the refine box.

import { Store } from "./store";

export function mountFeatures(host: HTMLElement, store: Store): void {
  host.innerHTML = `
    <div class="panel-title">Features <span id="features-genome"></span></div>
    <div id="feature-cards" class="cards"></div>
  `;
  const genomeLabel = host.querySelector<HTMLSpanElement>("#features-genome")!;
  const cards = host.querySelector<HTMLDivElement>("#feature-cards")!;

  store.subscribe(() => {
    if (!store.features) return;
    genomeLabel.textContent = `of ${store.features.genome_id}`;
    cards.replaceChildren();
    for (const feature of store.features.features) {
      const card = document.createElement("button");
      card.className = "card feature";
      card.dataset.geneIndex = String(feature.gene_index);
      if (feature.gene_index === store.selectedGeneIndex) card.classList.add("selected");
      if (feature.frozen) card.classList.add("frozen");

      const img = document.createElement("img");
      // cache-bust per best genome: isolation renders change when it does
      img.src = store.api.url(feature.url) + `?b=${store.features!.genome_id}`;
      img.alt = `gene ${feature.gene_index} isolated`;
      const label = document.createElement("div");
      label.className = "card-label";
      label.textContent = feature.frozen
        ? `gene ${feature.gene_index} (frozen)`
        : `gene ${feature.gene_index}`;

      card.append(img, label);
      card.addEventListener("click", () => {
        store.selectGene(feature.gene_index);
        document.getElementById("refine-directive")?.focus();
      });
      cards.appendChild(card);
    }
  });
}
