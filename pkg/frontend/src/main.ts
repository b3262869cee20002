// Application shell: session creation / opening, stage banner, and the five
// panels (gallery, history, viewport, features, query) wired to one store.

import { Api } from "./api";
import { mountFeatures } from "./features";
import { mountGallery } from "./gallery";
import { mountHistory } from "./history";
import { mountQuery } from "./query";
import { Store } from "./store";
import { toast } from "./toast";
import { mountViewport } from "./viewport";

const STAGES = ["exploration", "customization", "refinement"];

export function mountStageBanner(host: HTMLElement, store: Store): void {
  host.innerHTML = STAGES.map(
    (stage) => `<span class="stage" data-stage="${stage}">${stage}</span>`,
  ).join('<span class="stage-arrow">&rarr;</span>');
  store.subscribe(() => {
    for (const el of host.querySelectorAll<HTMLSpanElement>(".stage")) {
      el.classList.toggle("active", el.dataset.stage === store.summary?.stage);
    }
  });
}

export function mountApp(root: HTMLElement, api: Api, sessionId: string): Store {
  root.innerHTML = `
    <header>
      <h1>tfevolve</h1>
      <div id="stage-banner" class="stage-banner"></div>
      <span id="session-label" class="session-label"></span>
    </header>
    <main>
      <section id="history-panel" class="panel wide"></section>
      <div class="columns">
        <section id="viewport-panel" class="panel"></section>
        <section id="gallery-panel" class="panel"></section>
      </div>
      <div class="columns">
        <section id="features-panel" class="panel"></section>
        <section id="query-panel" class="panel"></section>
      </div>
    </main>
  `;
  const store = new Store(api, sessionId);
  root.querySelector<HTMLSpanElement>("#session-label")!.textContent =
    `session ${sessionId}`;

  const openSession = (nextId: string) => {
    const url = new URL(window.location.href);
    url.searchParams.set("session", nextId);
    window.location.assign(url.toString());
  };

  mountStageBanner(root.querySelector("#stage-banner")!, store);
  mountHistory(root.querySelector("#history-panel")!, store, openSession);
  mountViewport(root.querySelector("#viewport-panel")!, store);
  mountGallery(root.querySelector("#gallery-panel")!, store);
  mountFeatures(root.querySelector("#features-panel")!, store);
  mountQuery(root.querySelector("#query-panel")!, store);
  return store;
}

export function mountCreateForm(root: HTMLElement, api: Api): void {
  root.innerHTML = `
    <header><h1>tfevolve</h1></header>
    <main>
      <section class="panel create-form">
        <div class="panel-title">New session</div>
        <label>volume
          <select id="create-volume">
            <option value="nested_spheres">nested_spheres</option>
            <option value="slab_stack">slab_stack</option>
            <option value="ramp">ramp</option>
          </select>
        </label>
        <label>resolution <input id="create-dims" type="number" value="32" min="2" /></label>
        <label>population <input id="create-pop" type="number" value="25" min="2" /></label>
        <label>generations per stage
          <input id="create-gens" type="number" value="10" min="1" /></label>
        <label>seed <input id="create-seed" type="number" value="0" /></label>
        <button id="create-button">Create</button>
      </section>
    </main>
  `;
  root.querySelector<HTMLButtonElement>("#create-button")!.addEventListener(
    "click",
    async () => {
      const dim = Number(root.querySelector<HTMLInputElement>("#create-dims")!.value);
      try {
        const { session_id } = await api.createSession({
          volume: {
            kind: "synthetic",
            name: root.querySelector<HTMLSelectElement>("#create-volume")!.value,
            dims: [dim, dim, dim],
          },
          config: {
            population_size: Number(
              root.querySelector<HTMLInputElement>("#create-pop")!.value,
            ),
            max_generations: Number(
              root.querySelector<HTMLInputElement>("#create-gens")!.value,
            ),
            rng_seed: Number(root.querySelector<HTMLInputElement>("#create-seed")!.value),
          },
        });
        const url = new URL(window.location.href);
        url.searchParams.set("session", session_id);
        window.location.assign(url.toString());
      } catch (err) {
        toast(err instanceof Error ? err.message : String(err));
      }
    },
  );
}

async function boot(): Promise<void> {
  const root = document.getElementById("app");
  if (!root) return;
  const params = new URLSearchParams(window.location.search);
  const api = new Api(params.get("api") ?? "");
  const sessionId = params.get("session");
  if (!sessionId) {
    mountCreateForm(root, api);
    return;
  }
  const store = mountApp(root, api, sessionId);
  try {
    await store.refresh();
  } catch (err) {
    toast(err instanceof Error ? err.message : String(err));
  }
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  void boot();
}
