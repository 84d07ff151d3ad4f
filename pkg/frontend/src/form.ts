/**
 * Patient form rendered from the live feature schema. Every field is
 * a slider plus a synced number box constrained to the feature's
 * scale; a field counts as filled only after the user (or caller)
 * sets it, so submission stays disabled on a fresh form.
 */

import type { SchemaField } from "./api.js";

export interface FieldHandle {
  readonly name: string;
  readonly min: number;
  readonly max: number;
  value: number | null;
  row: HTMLElement;
  slider: HTMLInputElement;
  number: HTMLInputElement;
  error: HTMLElement;
}

export class PatientForm {
  readonly element: HTMLFieldSetElement;
  private fields = new Map<string, FieldHandle>();
  private skipped = new Set<string>();
  private listeners: Array<(name: string) => void> = [];

  constructor(doc: Document, features: SchemaField[]) {
    this.element = doc.createElement("fieldset");
    this.element.className = "patient-form";
    for (const feature of features) {
      const handle = this.buildField(doc, feature);
      this.fields.set(feature.name, handle);
      this.element.appendChild(handle.row);
    }
  }

  private buildField(doc: Document, feature: SchemaField): FieldHandle {
    const row = doc.createElement("div");
    row.className = "field-row";
    row.dataset.feature = feature.name;

    const label = doc.createElement("label");
    label.textContent = `${feature.name} (${feature.min}–${feature.max})`;
    row.appendChild(label);

    const slider = doc.createElement("input");
    slider.type = "range";
    slider.min = String(feature.min);
    slider.max = String(feature.max);
    slider.step = "1";
    slider.value = String(feature.min);
    row.appendChild(slider);

    const number = doc.createElement("input");
    number.type = "number";
    number.min = String(feature.min);
    number.max = String(feature.max);
    number.step = "1";
    row.appendChild(number);

    const error = doc.createElement("span");
    error.className = "field-error";
    row.appendChild(error);

    const handle: FieldHandle = {
      name: feature.name,
      min: feature.min,
      max: feature.max,
      value: null,
      row,
      slider,
      number,
      error,
    };
    slider.addEventListener("input", () => {
      this.apply(handle, Number(slider.value));
    });
    number.addEventListener("input", () => {
      const raw = number.value.trim();
      this.apply(handle, raw === "" ? null : Number(raw));
    });
    return handle;
  }

  private apply(handle: FieldHandle, value: number | null): void {
    if (value !== null && Number.isFinite(value)) {
      const clamped = Math.min(Math.max(Math.round(value), handle.min), handle.max);
      handle.value = clamped;
      handle.slider.value = String(clamped);
      handle.number.value = String(clamped);
    } else {
      handle.value = null;
      handle.number.value = "";
    }
    handle.error.textContent = "";
    for (const listener of this.listeners) listener(handle.name);
  }

  onChange(listener: (name: string) => void): void {
    this.listeners.push(listener);
  }

  /** Programmatic set, firing the same path as user input. */
  setValue(name: string, value: number): void {
    const handle = this.fields.get(name);
    if (!handle) throw new Error(`no field named ${name}`);
    this.apply(handle, value);
  }

  field(name: string): FieldHandle {
    const handle = this.fields.get(name);
    if (!handle) throw new Error(`no field named ${name}`);
    return handle;
  }

  get fieldNames(): string[] {
    return [...this.fields.keys()];
  }

  /** Exclude a field from values() and validity (filled elsewhere). */
  setSkipped(name: string, skipped: boolean): void {
    const handle = this.field(name);
    if (skipped) this.skipped.add(name);
    else this.skipped.delete(name);
    handle.slider.disabled = skipped;
    handle.number.disabled = skipped;
    handle.row.classList.toggle("skipped", skipped);
    for (const listener of this.listeners) listener(name);
  }

  isValid(): boolean {
    for (const [name, handle] of this.fields) {
      if (this.skipped.has(name)) continue;
      if (handle.value === null) return false;
    }
    return true;
  }

  values(): Record<string, number> {
    const out: Record<string, number> = {};
    for (const [name, handle] of this.fields) {
      if (this.skipped.has(name) || handle.value === null) continue;
      out[name] = handle.value;
    }
    return out;
  }

  showFieldError(name: string, message: string): boolean {
    const handle = this.fields.get(name);
    if (!handle) return false;
    handle.error.textContent = message;
    return true;
  }
}
