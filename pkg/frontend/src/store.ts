// Shared view state. Views subscribe and re-render on change; every mutation
// of session data itself happens server-side through the Api.

import {
  Api,
  CameraPose,
  FeatureList,
  Gallery,
  HistoryRecord,
  SessionSummary,
} from "./api";

export const GALLERY_K = 8;

export interface Listener {
  (store: Store): void;
}

export class Store {
  summary: SessionSummary | null = null;
  gallery: Gallery | null = null;
  history: HistoryRecord[] = [];
  features: FeatureList | null = null;
  selectedGenomeId: string | null = null;
  selectedGeneIndex: number | null = null;
  pose: CameraPose = { yaw: 45, pitch: 30, dist: 1.6 };

  private listeners: Listener[] = [];

  constructor(
    readonly api: Api,
    readonly sessionId: string,
  ) {}

  subscribe(listener: Listener): void {
    this.listeners.push(listener);
  }

  notify(): void {
    for (const listener of this.listeners) listener(this);
  }

  async refresh(): Promise<void> {
    this.summary = await this.api.summary(this.sessionId);
    this.gallery = await this.api.gallery(this.sessionId, GALLERY_K);
    this.history = (await this.api.history(this.sessionId)).records;
    this.features = await this.api.features(this.sessionId);
    // a selection must stay inside what the gallery or history can show
    if (this.selectedGenomeId !== null && !this.knowsGenome(this.selectedGenomeId)) {
      this.selectedGenomeId = null;
    }
    if (this.selectedGenomeId === null && this.gallery.entries.length > 0) {
      this.selectedGenomeId = this.gallery.entries[0].genome_id;
    }
    this.notify();
  }

  knowsGenome(genomeId: string): boolean {
    if (this.gallery?.entries.some((e) => e.genome_id === genomeId)) return true;
    return this.history.some((r) => r.entries.some((e) => e.genome_id === genomeId));
  }

  selectGenome(genomeId: string): void {
    if (!this.knowsGenome(genomeId)) return;
    this.selectedGenomeId = genomeId;
    this.notify();
  }

  selectGene(geneIndex: number | null): void {
    this.selectedGeneIndex = geneIndex;
    this.notify();
  }

  setPose(pose: CameraPose): void {
    this.pose = pose;
    this.notify();
  }
}
