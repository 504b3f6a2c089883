// Condition-gated recommendation panels. The server already trims payloads
// per condition; this layer refuses to render anything that does not match
// the active condition (no silent fallback), so gating cannot be bypassed
// client-side.

import { h, VNode } from "./vdom.js";
import { Alternative, Condition, RecommendationResponse } from "./types.js";

export class ConditionMismatch extends Error {}

/** Fields allowed per condition; extras or gaps mean a gating violation. */
export function payloadMatchesCondition(resp: RecommendationResponse): boolean {
  const rec = resp.recommendation;
  switch (resp.condition) {
    case "no_ai":
      return rec === undefined;
    case "text_only":
      return !!rec && !rec.explanation && !rec.alternatives && !rec.q_heatmap;
    case "feature_explanation":
      return !!rec && !!rec.explanation && !rec.alternatives;
    case "alternative_treatments":
      return !!rec && !!rec.alternatives && !rec.explanation;
    default:
      return false;
  }
}

function errorPanel(message: string): VNode {
  return h("div", { class: "error-panel", role: "alert" }, message);
}

/** Clinician-frequency color: presentational intensity ramp only. */
export function frequencyColor(freq: number): string {
  const clamped = Math.max(0, Math.min(1, freq));
  const alpha = 0.15 + 0.85 * clamped;
  return `rgba(31, 119, 180, ${alpha.toFixed(3)})`;
}

function alternativeBar(alt: Alternative, maxAbsQ: number): VNode {
  const q = alt.q_value;
  const width = q === null ? 4 : Math.max(4, Math.round((Math.abs(q) / (maxAbsQ || 1)) * 160));
  return h(
    "div",
    { class: "alt-bar", "data-action-id": String(alt.action_id) },
    h("span", { class: "alt-label" },
      `fluid bin ${alt.fluid_bin} / vaso bin ${alt.vaso_bin}`),
    h("div", {
      class: "alt-fill",
      style: `width:${width}px;background:${frequencyColor(alt.clinician_freq)}`,
      title: `clinician frequency ${(alt.clinician_freq * 100).toFixed(1)}%`,
    }),
    h("span", { class: "alt-q" }, q === null ? "not estimated" : q.toFixed(1)),
    h("span", { class: "alt-freq" }, `${(alt.clinician_freq * 100).toFixed(1)}%`)
  );
}

function explanationChart(resp: RecommendationResponse): VNode {
  const exp = resp.recommendation!.explanation!;
  const maxAbs = Math.max(...exp.features.map((f) => Math.abs(f.attribution)), 1e-12);
  return h(
    "div",
    { class: "explanation-chart" },
    h("h4", {}, `Patient state ${exp.state_id}`),
    h("div", { class: "mortality" },
      `Historical mortality in this state: ${(exp.mortality_rate * 100).toFixed(1)}% ` +
      `(${exp.n_support} observations)`),
    exp.features.map((f) => {
      const width = Math.max(4, Math.round((Math.abs(f.attribution) / maxAbs) * 160));
      const sign = f.attribution >= 0 ? "pos" : "neg";
      return h(
        "div",
        { class: "attr-bar", "data-feature": f.name },
        h("span", { class: "attr-name" }, f.name),
        h("div", { class: `attr-fill ${sign}`, style: `width:${width}px` }),
        h("span", { class: "attr-direction" }, `${f.direction} average`)
      );
    })
  );
}

function heatmap(grid: (number | null)[][], cls: string, caption: string): VNode {
  // rows = fluid bins, columns = vasopressor bins, cell (i, j) = action i*5+j
  return h(
    "table",
    { class: `heatmap ${cls}` },
    h("caption", {}, caption),
    h("tr", {}, h("th", {}, "fluid \\ vaso"),
      [0, 1, 2, 3, 4].map((j) => h("th", {}, String(j)))),
    grid.map((row, i) =>
      h("tr", {}, h("th", {}, String(i)),
        row.map((cell, j) =>
          h(
            "td",
            {
              class: cell === null ? "cell not-estimated" : "cell",
              "data-action-id": String(i * 5 + j),
            },
            cell === null ? "–" : cell.toFixed(1)
          )
        ))
    )
  );
}

export function renderRecommendation(
  resp: RecommendationResponse,
  activeCondition: Condition
): VNode {
  if (resp.condition !== activeCondition) {
    return errorPanel(
      `recommendation payload is for condition "${resp.condition}" but the ` +
      `active condition is "${activeCondition}"`);
  }
  if (!payloadMatchesCondition(resp)) {
    return errorPanel(
      `payload does not match condition "${resp.condition}" gating`);
  }
  if (resp.condition === "no_ai") {
    return h("div", { class: "recommendation-region", "data-condition": "no_ai" });
  }
  const rec = resp.recommendation!;
  const children: VNode[] = [
    h("p", { class: "recommendation-text" }, rec.text),
  ];
  if (rec.low_data) {
    children.push(h("p", { class: "low-data-note" },
      "Limited historical data for this state; alternatives show clinician frequency only."));
  }
  if (resp.condition === "feature_explanation") {
    children.push(explanationChart(resp));
  }
  if (resp.condition === "alternative_treatments") {
    const alts = rec.alternatives!;
    const maxAbsQ = Math.max(
      ...alts.map((a) => (a.q_value === null ? 0 : Math.abs(a.q_value))), 1e-12);
    children.push(
      h("div", { class: "alternatives-chart" },
        h("h4", {}, "Alternative treatments ranked by estimated value"),
        alts.map((a) => alternativeBar(a, maxAbsQ)))
    );
    if (rec.q_heatmap) {
      children.push(heatmap(rec.q_heatmap, "q-heatmap", "Estimated treatment values"));
    }
    if (rec.clinician_probs) {
      children.push(heatmap(rec.clinician_probs, "clinician-heatmap",
                            "Historical clinician actions"));
    }
  }
  return h(
    "div",
    { class: "recommendation-region", "data-condition": resp.condition },
    children
  );
}
