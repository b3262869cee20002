// Interactive viewport: the selected genome rendered server-side, orbited by
// dragging. Clicking (without dragging) picks the feature under the cursor;
// a directive box then sends the refine request for the picked gene.

import { Api, ApiError, CameraPose } from "./api";
import { Store } from "./store";
import { toast } from "./toast";

export const MAX_IN_FLIGHT = 4;
const DRAG_THRESHOLD_PX = 4;
const YAW_PER_PX = 0.5;
const PITCH_PER_PX = 0.5;
const DIST_MIN = 0.4;
const DIST_MAX = 6.0;

export interface RenderRequest {
  genomeId: string;
  pose: CameraPose;
}

/** Caps concurrent render fetches and drops responses an applied newer
 * request has already superseded. Only the newest waiting request survives;
 * intermediate drag positions are never fetched. */
export class OrbitRenderer {
  private inFlight = 0;
  private nextSeq = 1;
  private appliedSeq = 0;
  private pending: RenderRequest | null = null;

  constructor(
    private readonly fetchImage: (req: RenderRequest) => Promise<Blob>,
    private readonly apply: (blob: Blob, req: RenderRequest) => void,
    private readonly limit: number = MAX_IN_FLIGHT,
  ) {}

  request(req: RenderRequest): void {
    if (this.inFlight >= this.limit) {
      this.pending = req;
      return;
    }
    this.launch(req);
  }

  private launch(req: RenderRequest): void {
    const seq = this.nextSeq++;
    this.inFlight += 1;
    this.fetchImage(req)
      .then((blob) => {
        if (seq > this.appliedSeq) {
          this.appliedSeq = seq;
          this.apply(blob, req);
        }
      })
      .catch(() => {
        // a dropped frame is fine; the next pose change re-renders
      })
      .finally(() => {
        this.inFlight -= 1;
        if (this.pending && this.inFlight < this.limit) {
          const next = this.pending;
          this.pending = null;
          this.launch(next);
        }
      });
  }
}

function clamp(value: number, lo: number, hi: number): number {
  return Math.min(hi, Math.max(lo, value));
}

/** Maps a mouse event to image pixel coordinates. Falls back to raw client
 * coordinates when the element has no layout box (non-browser DOM). */
export function eventToPixel(
  event: { clientX: number; clientY: number },
  rect: { left: number; top: number; width: number; height: number },
  imageWidth: number,
  imageHeight: number,
): { x: number; y: number } {
  const scaleX = rect.width > 0 ? imageWidth / rect.width : 1;
  const scaleY = rect.height > 0 ? imageHeight / rect.height : 1;
  const x = clamp(Math.floor((event.clientX - rect.left) * scaleX), 0, imageWidth - 1);
  const y = clamp(Math.floor((event.clientY - rect.top) * scaleY), 0, imageHeight - 1);
  return { x, y };
}

export function mountViewport(host: HTMLElement, store: Store): void {
  host.innerHTML = `
    <div class="panel-title">Viewport</div>
    <div class="viewport-frame">
      <img id="viewport-image" alt="current render" draggable="false" />
      <span id="viewport-gene" class="gene-chip" hidden></span>
    </div>
    <div class="viewport-controls">
      <span id="viewport-pose" class="pose-label"></span>
      <input id="refine-directive" type="text"
             placeholder="refine directive, e.g. make it softer" />
      <button id="refine-button" disabled>Refine selected gene</button>
    </div>
  `;
  const image = host.querySelector<HTMLImageElement>("#viewport-image")!;
  const geneChip = host.querySelector<HTMLSpanElement>("#viewport-gene")!;
  const poseLabel = host.querySelector<HTMLSpanElement>("#viewport-pose")!;
  const directive = host.querySelector<HTMLInputElement>("#refine-directive")!;
  const refineButton = host.querySelector<HTMLButtonElement>("#refine-button")!;

  const api: Api = store.api;
  let objectUrl: string | null = null;
  const renderer = new OrbitRenderer(
    async (req) => {
      const size = store.summary ? store.summary.image_size[0] : 0;
      const res = await fetch(api.renderUrl(store.sessionId, req.genomeId, req.pose, size));
      if (!res.ok) throw new Error(`render failed: ${res.status}`);
      return await res.blob();
    },
    (blob, req) => {
      if (objectUrl) URL.revokeObjectURL(objectUrl);
      objectUrl = URL.createObjectURL(blob);
      image.src = objectUrl;
      image.dataset.genome = req.genomeId;
      image.dataset.pose = `${req.pose.yaw.toFixed(2)},${req.pose.pitch.toFixed(2)},${req.pose.dist.toFixed(3)}`;
    },
  );

  let shownGenome: string | null = null;
  let shownPose = "";

  function requestRender(): void {
    if (!store.selectedGenomeId) return;
    const key = `${store.pose.yaw},${store.pose.pitch},${store.pose.dist}`;
    if (store.selectedGenomeId === shownGenome && key === shownPose) return;
    shownGenome = store.selectedGenomeId;
    shownPose = key;
    renderer.request({ genomeId: store.selectedGenomeId, pose: { ...store.pose } });
  }

  // drag to orbit; a press that never crosses the threshold is a pick
  let dragging = false;
  let moved = false;
  let lastX = 0;
  let lastY = 0;
  let downX = 0;
  let downY = 0;

  image.addEventListener("pointerdown", (event) => {
    dragging = true;
    moved = false;
    lastX = downX = event.clientX;
    lastY = downY = event.clientY;
  });

  image.addEventListener("pointermove", (event) => {
    if (!dragging) return;
    if (
      Math.abs(event.clientX - downX) + Math.abs(event.clientY - downY) >
      DRAG_THRESHOLD_PX
    ) {
      moved = true;
    }
    if (!moved) return;
    const yaw = store.pose.yaw + (event.clientX - lastX) * YAW_PER_PX;
    const pitch = clamp(store.pose.pitch - (event.clientY - lastY) * PITCH_PER_PX, -89, 89);
    lastX = event.clientX;
    lastY = event.clientY;
    store.setPose({ yaw, pitch, dist: store.pose.dist });
  });

  const endDrag = () => {
    dragging = false;
  };
  image.addEventListener("pointerup", endDrag);
  image.addEventListener("pointerleave", endDrag);

  image.addEventListener("wheel", (event) => {
    event.preventDefault();
    const dist = clamp(
      store.pose.dist * (event.deltaY > 0 ? 1.1 : 0.9),
      DIST_MIN,
      DIST_MAX,
    );
    store.setPose({ yaw: store.pose.yaw, pitch: store.pose.pitch, dist });
  });

  image.addEventListener("click", async (event) => {
    if (moved || !store.summary) return;
    const [width, height] = store.summary.image_size;
    const { x, y } = eventToPixel(event, image.getBoundingClientRect(), width, height);
    try {
      const { gene_index } = await api.pick(store.sessionId, x, y);
      store.selectGene(gene_index);
    } catch (err) {
      if (err instanceof ApiError && err.message === "no_feature") {
        toast("No feature under that point.");
        return;
      }
      toast(err instanceof Error ? err.message : String(err));
    }
  });

  refineButton.addEventListener("click", async () => {
    if (store.selectedGeneIndex === null) return;
    try {
      await api.refine(store.sessionId, store.selectedGeneIndex, directive.value.trim());
      directive.value = "";
      await store.refresh();
      toast("Refinement stage: all other genes are frozen.");
    } catch (err) {
      toast(err instanceof Error ? err.message : String(err));
    }
  });

  store.subscribe(() => {
    poseLabel.textContent =
      `yaw ${store.pose.yaw.toFixed(0)}  pitch ${store.pose.pitch.toFixed(0)}` +
      `  dist ${store.pose.dist.toFixed(2)}`;
    if (store.selectedGeneIndex !== null) {
      geneChip.hidden = false;
      geneChip.textContent = `gene ${store.selectedGeneIndex}`;
      refineButton.disabled = store.summary?.busy ?? false;
    } else {
      geneChip.hidden = true;
      refineButton.disabled = true;
    }
    requestRender();
  });
}
