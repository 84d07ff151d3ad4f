/**
 * Dashboard wiring: schema-driven form, live predictions, what-if
 * exploration. All numbers shown come from the service; the only
 * client-side logic is plumbing, validation against the schema's
 * scales, and staleness control.
 */

import {
  ApiClient,
  ApiError,
  type AqiPrediction,
  type Schema,
} from "./api.js";
import { debounce } from "./debounce.js";
import { LatestGate } from "./latest.js";
import { PatientForm } from "./form.js";
import { renderAqiView, renderSeverityView } from "./views.js";

const EXPOSURE_FEATURE = "Air Pollution";

export interface AppOptions {
  debounceMs?: number;
  model?: "knn" | "svc";
}

export class DashboardApp {
  readonly ready: Promise<void>;
  form: PatientForm | null = null;
  lastAqi: AqiPrediction | null = null;

  private schema: Schema | null = null;
  private severityShown = false;
  private readonly doc: Document;
  private readonly aqiGate = new LatestGate();
  private readonly severityGate = new LatestGate();
  private readonly whatIf: (() => void) & { cancel(): void };
  private readonly model: "knn" | "svc";

  private banner!: HTMLElement;
  private main!: HTMLElement;
  private aqiView!: HTMLElement;
  private severityView!: HTMLElement;
  private aqiError!: HTMLElement;
  private severityError!: HTMLElement;
  private submitButton!: HTMLButtonElement;
  private useAqiToggle!: HTMLInputElement;
  private readingInputs = new Map<string, HTMLInputElement>();
  private readingErrors = new Map<string, HTMLElement>();

  constructor(
    private readonly root: HTMLElement,
    private readonly client: ApiClient,
    options: AppOptions = {},
  ) {
    this.doc = root.ownerDocument;
    this.model = options.model ?? "knn";
    this.whatIf = debounce(() => {
      void this.predictSeverity();
    }, options.debounceMs ?? 250);
    this.renderShell();
    this.ready = this.loadSchema();
  }

  private renderShell(): void {
    this.root.replaceChildren();
    this.banner = this.doc.createElement("div");
    this.banner.className = "banner";
    this.banner.hidden = true;
    this.root.appendChild(this.banner);

    this.main = this.doc.createElement("div");
    this.main.className = "panels";
    this.root.appendChild(this.main);
  }

  private async loadSchema(): Promise<void> {
    try {
      this.schema = await this.client.fetchSchema();
    } catch {
      this.showRetryBanner();
      return;
    }
    this.banner.hidden = true;
    this.banner.replaceChildren();
    this.renderPanels(this.schema);
  }

  private showRetryBanner(): void {
    this.banner.hidden = false;
    this.banner.replaceChildren();
    this.banner.setAttribute("role", "alert");
    const note = this.doc.createElement("span");
    note.textContent = "The prediction service is unreachable.";
    this.banner.appendChild(note);
    const retry = this.doc.createElement("button");
    retry.className = "banner-retry";
    retry.textContent = "Retry";
    retry.addEventListener("click", () => {
      void this.loadSchema();
    });
    this.banner.appendChild(retry);
  }

  private renderPanels(schema: Schema): void {
    this.main.replaceChildren();

    const aqiPanel = this.doc.createElement("section");
    aqiPanel.className = "aqi-panel";
    const aqiTitle = this.doc.createElement("h2");
    aqiTitle.textContent = "Air quality";
    aqiPanel.appendChild(aqiTitle);

    const readings = this.doc.createElement("div");
    readings.className = "readings";
    for (const label of schema.pollutants) {
      const row = this.doc.createElement("div");
      row.className = "reading-row";
      row.dataset.pollutant = label;
      const caption = this.doc.createElement("label");
      caption.textContent = label;
      row.appendChild(caption);
      const input = this.doc.createElement("input");
      input.type = "number";
      input.min = "0";
      row.appendChild(input);
      const error = this.doc.createElement("span");
      error.className = "field-error";
      row.appendChild(error);
      readings.appendChild(row);
      this.readingInputs.set(label, input);
      this.readingErrors.set(label, error);
    }
    aqiPanel.appendChild(readings);

    const readingsButton = this.doc.createElement("button");
    readingsButton.className = "predict-readings";
    readingsButton.textContent = "Predict from readings";
    readingsButton.addEventListener("click", () => {
      void this.predictFromReadings();
    });
    aqiPanel.appendChild(readingsButton);

    aqiPanel.appendChild(this.buildPhotoControls(schema));

    this.aqiError = this.doc.createElement("div");
    this.aqiError.className = "panel-error";
    aqiPanel.appendChild(this.aqiError);

    this.aqiView = this.doc.createElement("div");
    this.aqiView.className = "aqi-view";
    aqiPanel.appendChild(this.aqiView);
    this.main.appendChild(aqiPanel);

    const patientPanel = this.doc.createElement("section");
    patientPanel.className = "patient-panel";
    const patientTitle = this.doc.createElement("h2");
    patientTitle.textContent = "Lung-disease severity";
    patientPanel.appendChild(patientTitle);

    this.form = new PatientForm(this.doc, schema.features);
    patientPanel.appendChild(this.form.element);

    const toggleRow = this.doc.createElement("label");
    toggleRow.className = "use-aqi";
    this.useAqiToggle = this.doc.createElement("input");
    this.useAqiToggle.type = "checkbox";
    this.useAqiToggle.disabled = true;
    this.useAqiToggle.addEventListener("change", () => {
      this.form?.setSkipped(
        EXPOSURE_FEATURE,
        this.useAqiToggle.checked && this.lastAqi !== null,
      );
    });
    toggleRow.appendChild(this.useAqiToggle);
    toggleRow.appendChild(
      this.doc.createTextNode(" derive exposure from the predicted AQI"),
    );
    patientPanel.appendChild(toggleRow);

    this.submitButton = this.doc.createElement("button");
    this.submitButton.className = "predict-severity";
    this.submitButton.textContent = "Predict severity";
    this.submitButton.disabled = true;
    this.submitButton.addEventListener("click", () => {
      this.whatIf.cancel();
      void this.predictSeverity();
    });
    patientPanel.appendChild(this.submitButton);

    this.severityError = this.doc.createElement("div");
    this.severityError.className = "panel-error";
    patientPanel.appendChild(this.severityError);

    this.severityView = this.doc.createElement("div");
    this.severityView.className = "severity-view";
    patientPanel.appendChild(this.severityView);
    this.main.appendChild(patientPanel);

    this.form.onChange(() => {
      this.submitButton.disabled = !this.form!.isValid();
      // every what-if adjustment re-predicts, one call per pause
      if (this.severityShown && this.form!.isValid()) {
        this.whatIf();
      }
    });
  }

  private buildPhotoControls(schema: Schema): HTMLElement {
    const photo = this.doc.createElement("div");
    photo.className = "photo-controls";

    const file = this.doc.createElement("input");
    file.type = "file";
    file.accept = "image/png,image/jpeg";
    photo.appendChild(file);

    const city = this.doc.createElement("select");
    city.className = "city-select";
    for (const name of schema.cities) {
      const option = this.doc.createElement("option");
      option.value = name;
      option.textContent = name;
      city.appendChild(option);
    }
    photo.appendChild(city);

    const stamp = this.doc.createElement("input");
    stamp.type = "datetime-local";
    photo.appendChild(stamp);

    const button = this.doc.createElement("button");
    button.className = "predict-photo";
    button.textContent = "Predict from photo";
    button.addEventListener("click", () => {
      const chosen = file.files?.[0];
      if (!chosen || !stamp.value) return;
      const reader = new FileReader();
      reader.onload = () => {
        const url = String(reader.result);
        const base64 = url.slice(url.indexOf(",") + 1);
        void this.predictFromPhoto(base64, city.value, stamp.value);
      };
      reader.readAsDataURL(chosen);
    });
    photo.appendChild(button);
    return photo;
  }

  async predictFromReadings(): Promise<void> {
    const readings: Record<string, number> = {};
    for (const [label, input] of this.readingInputs) {
      const raw = input.value.trim();
      if (raw !== "") readings[label] = Number(raw);
    }
    await this.runAqi({ readings });
  }

  async predictFromPhoto(
    base64: string,
    city: string,
    timestamp: string,
  ): Promise<void> {
    await this.runAqi({ image_base64: base64, city, timestamp });
  }

  private async runAqi(request: Parameters<ApiClient["predictAqi"]>[0]): Promise<void> {
    if (!this.schema) return;
    this.aqiError.textContent = "";
    for (const error of this.readingErrors.values()) error.textContent = "";
    const token = this.aqiGate.issue();
    let prediction: AqiPrediction;
    try {
      prediction = await this.client.predictAqi(request);
    } catch (err) {
      if (this.aqiGate.isCurrent(token)) this.showAqiError(err);
      return;
    }
    if (!this.aqiGate.isCurrent(token)) return;
    this.lastAqi = prediction;
    this.useAqiToggle.disabled = false;
    renderAqiView(this.aqiView, prediction, this.schema.categories);
  }

  private showAqiError(err: unknown): void {
    if (err instanceof ApiError && err.body.field) {
      const inline = this.readingErrors.get(err.body.field);
      if (inline) {
        inline.textContent = err.body.message;
        return;
      }
    }
    this.aqiError.textContent =
      err instanceof ApiError ? err.body.message : "prediction failed";
  }

  async predictSeverity(): Promise<void> {
    if (!this.schema || !this.form || !this.form.isValid()) return;
    this.severityError.textContent = "";
    const request: Parameters<ApiClient["predictSeverity"]>[0] = {
      features: this.form.values(),
      model: this.model,
    };
    if (this.useAqiToggle.checked && this.lastAqi) {
      request.aqi = this.lastAqi.aqi;
    }
    const token = this.severityGate.issue();
    let prediction;
    try {
      prediction = await this.client.predictSeverity(request);
    } catch (err) {
      if (this.severityGate.isCurrent(token)) this.showSeverityError(err);
      return;
    }
    if (!this.severityGate.isCurrent(token)) return;
    this.severityShown = true;
    renderSeverityView(this.severityView, prediction, this.schema.severity);
  }

  private showSeverityError(err: unknown): void {
    if (err instanceof ApiError && err.body.field && this.form) {
      if (this.form.showFieldError(err.body.field, err.body.message)) return;
    }
    this.severityError.textContent =
      err instanceof ApiError ? err.body.message : "prediction failed";
  }
}
