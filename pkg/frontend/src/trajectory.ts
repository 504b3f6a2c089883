// Small-multiple trajectory panels. Abnormal styling and trend arrows come
// straight from the server's flags/deltas; nothing is recomputed here.

import { h, VNode } from "./vdom.js";
import { TrajectoryPayload, TrajectoryStep } from "./types.js";

const GROUP_ORDER = ["demographics", "vitals", "labs", "ventilation", "fluids"];

export function trendArrow(delta: number | null): string {
  if (delta === null || delta === 0) return "→";
  return delta > 0 ? "↑" : "↓";
}

function sparkline(values: number[], width = 120, height = 28): VNode {
  const lo = Math.min(...values);
  const hi = Math.max(...values);
  const span = hi - lo || 1;
  const step = values.length > 1 ? width / (values.length - 1) : 0;
  const points = values
    .map((v, i) => `${(i * step).toFixed(1)},${(height - ((v - lo) / span) * height).toFixed(1)}`)
    .join(" ");
  return h(
    "svg",
    { class: "sparkline", width: String(width), height: String(height), viewBox: `0 0 ${width} ${height}` },
    h("polyline", { points, fill: "none", "stroke-width": "1.5" })
  );
}

function featurePanel(
  name: string,
  payload: TrajectoryPayload,
  bin: number
): VNode {
  const step = payload.timesteps[bin];
  const flag = step.flags[name] ?? "normal";
  const delta = step.deltas[name] ?? null;
  const values = payload.timesteps.map((t) => t.features[name]);
  const valueClass = flag === "normal" ? "value" : "value abnormal";
  return h(
    "div",
    { class: "feature-panel", "data-feature": name },
    h("div", { class: "feature-name" }, name),
    h(
      "div",
      { class: valueClass, "data-flag": flag },
      formatNumber(step.features[name]),
      h("span", { class: `trend trend-${arrowName(delta)}` }, trendArrow(delta))
    ),
    sparkline(values)
  );
}

function arrowName(delta: number | null): string {
  if (delta === null || delta === 0) return "flat";
  return delta > 0 ? "up" : "down";
}

export function formatNumber(v: number): string {
  if (Number.isInteger(v)) return String(v);
  return Math.abs(v) >= 100 ? v.toFixed(0) : v.toFixed(2);
}

function groupFor(payload: TrajectoryPayload, name: string): string {
  const group = payload.feature_groups[name];
  return group && GROUP_ORDER.includes(group) ? group : "other";
}

export function renderStepper(payload: TrajectoryPayload, bin: number): VNode {
  return h(
    "div",
    { class: "timestep-stepper" },
    h("button", { class: "step-prev", "data-action": "step-prev", disabled: bin === 0 ? "disabled" : "" }, "◀"),
    h("span", { class: "step-label" }, `4-hour interval ${bin + 1} of ${payload.timesteps.length}`),
    h("button", { class: "step-next", "data-action": "step-next", disabled: bin === payload.timesteps.length - 1 ? "disabled" : "" }, "▶")
  );
}

export function renderTrajectory(payload: TrajectoryPayload, bin: number): VNode {
  if (bin < 0 || bin >= payload.timesteps.length) {
    return h("div", { class: "error-panel" }, `bin ${bin} out of range`);
  }
  const step = payload.timesteps[bin];
  const names = Object.keys(payload.timesteps[0].features);
  const groups = new Map<string, string[]>();
  for (const name of names) {
    const g = groupFor(payload, name);
    if (!groups.has(g)) groups.set(g, []);
    groups.get(g)!.push(name);
  }
  const ordered = [...GROUP_ORDER, "other"].filter((g) => groups.has(g));
  const sections = ordered.map((g) =>
    h(
      "section",
      { class: "feature-group", "data-group": g },
      h(
        "h3",
        {},
        g,
        g === "other" ? h("span", { class: "warning-badge" }, "ungrouped") : null
      ),
      groups.get(g)!.map((name) => featurePanel(name, payload, bin))
    )
  );
  return h(
    "div",
    { class: "trajectory-view", "data-patient": payload.patient_id },
    renderStepper(payload, bin),
    h(
      "div",
      { class: "treatments" },
      h("span", { class: "fluid-dose" }, `IV fluids: ${formatNumber(step.fluid_dose)} mL / 4h`),
      h("span", { class: "vaso-dose" }, `vasopressor: ${formatNumber(step.vaso_dose)} mcg/kg/min`),
      h("span", { class: "scores" }, `SOFA ${step.sofa} · SIRS ${step.sirs}`)
    ),
    sections
  );
}

export function currentDoses(payload: TrajectoryPayload, bin: number): {
  fluid: number;
  vaso: number;
} {
  const step: TrajectoryStep = payload.timesteps[bin];
  return { fluid: step.fluid_dose, vaso: step.vaso_dose };
}
