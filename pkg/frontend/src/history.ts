// Generation strip. Each chip shows a generation's best thumbnail; the
// rollback button clones that generation into a fresh session and opens it.

import { Store } from "./store";
import { toast } from "./toast";

export function mountHistory(
  host: HTMLElement,
  store: Store,
  openSession: (sessionId: string) => void,
): void {
  host.innerHTML = `
    <div class="panel-title">History</div>
    <div id="history-strip" class="strip"></div>
  `;
  const strip = host.querySelector<HTMLDivElement>("#history-strip")!;

  store.subscribe(() => {
    strip.replaceChildren();
    for (const record of store.history) {
      const chip = document.createElement("div");
      chip.className = "history-chip";
      chip.dataset.generation = String(record.generation_index);

      const best = record.entries[0];
      if (best) {
        const img = document.createElement("img");
        img.src = store.api.url(best.url);
        img.alt = `generation ${record.generation_index} best`;
        img.addEventListener("click", () => store.selectGenome(best.genome_id));
        chip.appendChild(img);
      }
      const label = document.createElement("div");
      label.className = "chip-label";
      label.textContent = `g${record.generation_index} ${record.stage.slice(0, 7)}`;
      chip.appendChild(label);

      const back = document.createElement("button");
      back.className = "rollback";
      back.textContent = "roll back";
      back.addEventListener("click", async () => {
        try {
          const { new_session_id } = await store.api.rollback(
            store.sessionId,
            record.generation_index,
          );
          openSession(new_session_id);
        } catch (err) {
          toast(err instanceof Error ? err.message : String(err));
        }
      });
      chip.appendChild(back);
      strip.appendChild(chip);
    }
  });
}
