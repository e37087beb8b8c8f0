/**
 * Console wiring: composer form, weight sliders, history strip.
 *
 * Flow: upload a reference photo, type how to change it, submit; inspect the
 * generated target image and the retrieval grid; then iterate — drag lambda
 * or beta (one rerank per release) or click a history thumbnail to restore a
 * past query into the composer for refinement.
 */

import { ApiError, ParacosmClient } from "./api.js";
import { renderHistoryStrip, renderMentalPane, renderResultsGrid, showBanner } from "./render.js";
import { RerankScheduler } from "./sliders.js";
import { SessionState } from "./state.js";

const DEFAULT_K = 6;

function byId<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing #${id}`);
  return el as T;
}

function setup(): void {
  const client = new ParacosmClient("");
  const state = new SessionState();

  const form = byId<HTMLFormElement>("composer");
  const fileInput = byId<HTMLInputElement>("reference");
  const textInput = byId<HTMLInputElement>("modification");
  const conceptInput = byId<HTMLInputElement>("concept");
  const conceptRow = byId<HTMLElement>("concept-row");
  const submit = byId<HTMLButtonElement>("submit");
  const banner = byId<HTMLElement>("banner");
  const mentalPane = byId<HTMLElement>("mental-pane");
  const grid = byId<HTMLElement>("results");
  const historyStrip = byId<HTMLElement>("history");
  const sliderPanel = byId<HTMLElement>("sliders");
  const lambdaSlider = byId<HTMLInputElement>("lambda");
  const betaSlider = byId<HTMLInputElement>("beta");
  const lambdaLabel = byId<HTMLElement>("lambda-value");
  const betaLabel = byId<HTMLElement>("beta-value");
  const resetButton = byId<HTMLButtonElement>("reset-weights");
  const latencyLabel = byId<HTMLElement>("rerank-latency");

  let defaults = { lambda: 0.3, beta: 0.5 };

  void client
    .storeInfo()
    .then((info) => {
      defaults = { lambda: info.lambda, beta: info.beta };
      lambdaSlider.value = String(info.lambda);
      betaSlider.value = String(info.beta);
      lambdaLabel.textContent = info.lambda.toFixed(2);
      betaLabel.textContent = info.beta.toFixed(2);
      betaSlider.disabled = !info.rerankable_beta;
      conceptRow.hidden = info.dataset_kind !== "circo";
      showBanner(banner, null);
    })
    .catch(() => showBanner(banner, "service unreachable — is the store being served?"));

  const updateSubmitState = () => {
    submit.disabled = !textInput.value.trim() || !fileInput.files?.length;
  };
  textInput.addEventListener("input", updateSubmitState);
  fileInput.addEventListener("change", updateSubmitState);
  updateSubmitState();

  const scheduler = new RerankScheduler(async ({ lambda, beta }) => {
    const active = state.active;
    if (!active) return;
    const started = performance.now();
    try {
      const response = await client.rerank(active.response.query_id, lambda, beta);
      state.applyRerank(response.results);
      renderResultsGrid(grid, response.results);
      latencyLabel.textContent = `${(performance.now() - started).toFixed(0)} ms`;
      showBanner(banner, null);
    } catch (err) {
      showBanner(banner, describe(err));
    }
  });

  const sliderWeights = () => ({
    lambda: Number(lambdaSlider.value),
    beta: Number(betaSlider.value),
  });
  lambdaSlider.addEventListener("input", () => {
    lambdaLabel.textContent = Number(lambdaSlider.value).toFixed(2);
  });
  betaSlider.addEventListener("input", () => {
    betaLabel.textContent = Number(betaSlider.value).toFixed(2);
  });
  // 'change' fires once per release: exactly one rerank per drag
  lambdaSlider.addEventListener("change", () => scheduler.request(sliderWeights()));
  betaSlider.addEventListener("change", () => scheduler.request(sliderWeights()));
  resetButton.addEventListener("click", () => {
    lambdaSlider.value = String(defaults.lambda);
    betaSlider.value = String(defaults.beta);
    lambdaLabel.textContent = defaults.lambda.toFixed(2);
    betaLabel.textContent = defaults.beta.toFixed(2);
    scheduler.request(defaults);
  });

  form.addEventListener("submit", (event) => {
    event.preventDefault();
    const file = fileInput.files?.[0];
    if (!file || !textInput.value.trim()) return;
    submit.disabled = true;
    showBanner(banner, null);

    void client
      .submitQuery({
        reference: file,
        modificationText: textInput.value.trim(),
        sharedConcept: conceptRow.hidden ? undefined : conceptInput.value.trim() || undefined,
        k: DEFAULT_K,
      })
      .then((response) => {
        state.beginQuery(response, file, textInput.value.trim(), defaults, conceptInput.value);
        renderMentalPane(mentalPane, response.mental_image_url, response.description);
        renderResultsGrid(grid, response.results);
        renderHistoryStrip(historyStrip, state.history, restoreFromHistory);
        sliderPanel.hidden = false;
        lambdaSlider.value = String(defaults.lambda);
        betaSlider.value = String(defaults.beta);
      })
      .catch((err) => showBanner(banner, describe(err)))
      .finally(updateSubmitState);
  });

  function restoreFromHistory(index: number): void {
    const entry = state.restore(index);
    textInput.value = entry.modificationText;
    conceptInput.value = entry.sharedConcept ?? "";
    const transfer = new DataTransfer();
    transfer.items.add(new File([entry.reference], "reference.png", { type: "image/png" }));
    fileInput.files = transfer.files;
    renderMentalPane(mentalPane, entry.mentalImageUrl, entry.description);
    renderResultsGrid(grid, entry.results);
    updateSubmitState();
  }

  function describe(err: unknown): string {
    if (err instanceof ApiError) {
      if (err.status === 503) return "backends are down — the service cannot generate right now";
      return `request failed (${err.status}): ${err.message}`;
    }
    return `request failed: ${String(err)}`;
  }
}

window.addEventListener("DOMContentLoaded", setup);
