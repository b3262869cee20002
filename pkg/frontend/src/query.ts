// Query view: natural-language or reference-image intent, generation stepping
// and the progress bar. Submitting with neither text nor image is rejected
// locally; nothing is sent.

import { Api } from "./api";
import { Store } from "./store";
import { toast } from "./toast";

export const POLL_MS = 250;

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

/** Polls /progress until the running step finishes; reports each sample. */
export async function pollUntilIdle(
  api: Api,
  sessionId: string,
  onTick: (text: string, fraction: number) => void,
): Promise<void> {
  for (;;) {
    const p = await api.progress(sessionId);
    if (!p.busy) {
      if (p.error) toast(`step failed: ${p.error}`);
      onTick("idle", 0);
      return;
    }
    const fraction = p.matches_total > 0 ? p.matches_done / p.matches_total : 0;
    onTick(
      `generation ${p.generation}: ${p.phase} ${p.matches_done}/${p.matches_total}`,
      fraction,
    );
    await sleep(POLL_MS);
  }
}

function readAsBase64(file: File): Promise<string> {
  return new Promise((resolve, reject) => {
    const reader = new FileReader();
    reader.onload = () => {
      const url = reader.result as string;
      resolve(url.slice(url.indexOf(",") + 1));
    };
    reader.onerror = () => reject(reader.error);
    reader.readAsDataURL(file);
  });
}

export function mountQuery(host: HTMLElement, store: Store): void {
  host.innerHTML = `
    <div class="panel-title">Intent</div>
    <textarea id="intent-text" rows="2"
              placeholder="e.g. emphasize the outer shell in cool colors"></textarea>
    <div id="intent-drop" class="dropzone">
      drop a reference image or <label class="filepick">browse
        <input id="intent-file" type="file" accept="image/png" hidden />
      </label>
      <span id="intent-file-name"></span>
    </div>
    <div id="intent-error" class="field-error" hidden></div>
    <div class="intent-actions">
      <button id="intent-submit">Apply intent + evolve</button>
      <label>generations <input id="step-count" type="number" value="1" min="1" /></label>
      <button id="step-button">Step</button>
    </div>
    <div class="progress-track"><div id="progress-fill"></div></div>
    <div id="progress-label" class="progress-label">idle</div>
  `;
  const text = host.querySelector<HTMLTextAreaElement>("#intent-text")!;
  const drop = host.querySelector<HTMLDivElement>("#intent-drop")!;
  const file = host.querySelector<HTMLInputElement>("#intent-file")!;
  const fileName = host.querySelector<HTMLSpanElement>("#intent-file-name")!;
  const error = host.querySelector<HTMLDivElement>("#intent-error")!;
  const submit = host.querySelector<HTMLButtonElement>("#intent-submit")!;
  const stepCount = host.querySelector<HTMLInputElement>("#step-count")!;
  const stepButton = host.querySelector<HTMLButtonElement>("#step-button")!;
  const fill = host.querySelector<HTMLDivElement>("#progress-fill")!;
  const label = host.querySelector<HTMLDivElement>("#progress-label")!;

  let droppedFile: File | null = null;

  function setFile(next: File | null): void {
    droppedFile = next;
    fileName.textContent = next ? next.name : "";
  }

  drop.addEventListener("dragover", (event) => event.preventDefault());
  drop.addEventListener("drop", (event) => {
    event.preventDefault();
    const dropped = event.dataTransfer?.files?.[0] ?? null;
    if (dropped) setFile(dropped);
  });
  file.addEventListener("change", () => setFile(file.files?.[0] ?? null));

  function onTick(message: string, fraction: number): void {
    label.textContent = message;
    fill.style.width = `${Math.round(fraction * 100)}%`;
  }

  async function runGenerations(count: number): Promise<void> {
    submit.disabled = true;
    stepButton.disabled = true;
    try {
      await store.api.step(store.sessionId, count);
      await pollUntilIdle(store.api, store.sessionId, onTick);
      await store.refresh();
    } finally {
      submit.disabled = false;
      stepButton.disabled = false;
    }
  }

  submit.addEventListener("click", async () => {
    const intentText = text.value.trim();
    if (!intentText && !droppedFile) {
      error.hidden = false;
      error.textContent = "Type an intent or drop a reference image first.";
      return;
    }
    error.hidden = true;
    try {
      if (intentText) {
        await store.api.intentText(store.sessionId, intentText);
      } else {
        await store.api.intentImage(store.sessionId, await readAsBase64(droppedFile!));
      }
      text.value = "";
      setFile(null);
      await runGenerations(Number(stepCount.value) || 1);
    } catch (err) {
      toast(err instanceof Error ? err.message : String(err));
      submit.disabled = false;
      stepButton.disabled = false;
    }
  });

  stepButton.addEventListener("click", async () => {
    try {
      await runGenerations(Number(stepCount.value) || 1);
    } catch (err) {
      toast(err instanceof Error ? err.message : String(err));
      submit.disabled = false;
      stepButton.disabled = false;
    }
  });
}
