/**
 * Result panels. Category names, ranges and colors all come from the
 * service schema; nothing here re-derives a band from the number.
 */

import type { AqiPrediction, CategoryBand, SeverityPrediction } from "./api.js";

export function bandFor(
  category: string,
  bands: CategoryBand[],
): CategoryBand | null {
  return bands.find((band) => band.name === category) ?? null;
}

export function renderAqiView(
  el: HTMLElement,
  prediction: AqiPrediction,
  bands: CategoryBand[],
): void {
  const doc = el.ownerDocument;
  el.replaceChildren();

  const headline = doc.createElement("div");
  headline.className = "aqi-number";
  headline.textContent = `AQI ${prediction.aqi.toFixed(1)}`;
  el.appendChild(headline);

  const band = bandFor(prediction.category, bands);
  const badge = doc.createElement("div");
  badge.className = "category-band";
  badge.dataset.category = prediction.category;
  badge.textContent = prediction.out_of_scale
    ? `${prediction.category} (beyond scale)`
    : prediction.category;
  if (band) {
    badge.style.backgroundColor = band.color;
    badge.dataset.color = band.color;
  }
  el.appendChild(badge);

  if (prediction.dominant) {
    const dominant = doc.createElement("div");
    dominant.className = "dominant";
    dominant.textContent = `dominant pollutant: ${prediction.dominant}`;
    el.appendChild(dominant);
  }

  const list = doc.createElement("dl");
  list.className = "pollutants";
  for (const [label, value] of Object.entries(prediction.pollutants)) {
    if (value === null) continue;
    const dt = doc.createElement("dt");
    dt.textContent = label;
    const dd = doc.createElement("dd");
    dd.textContent = value.toFixed(1);
    list.appendChild(dt);
    list.appendChild(dd);
  }
  el.appendChild(list);
}

export function renderSeverityView(
  el: HTMLElement,
  prediction: SeverityPrediction,
  range: { min: number; max: number },
): void {
  const doc = el.ownerDocument;
  el.replaceChildren();

  const label = doc.createElement("div");
  label.className = "severity-label";
  label.dataset.severity = String(prediction.severity);
  label.textContent =
    `Severity ${prediction.severity} of ${range.max} ` +
    `(${prediction.model_used.toUpperCase()})`;
  el.appendChild(label);

  const meter = doc.createElement("meter");
  meter.min = range.min;
  meter.max = range.max;
  meter.value = prediction.severity;
  el.appendChild(meter);

  if (prediction.exposure_level !== null) {
    const exposure = doc.createElement("div");
    exposure.className = "exposure";
    exposure.textContent = `air-pollution exposure level ${prediction.exposure_level}`;
    el.appendChild(exposure);
  }
}
