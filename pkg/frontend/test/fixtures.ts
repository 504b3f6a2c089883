import {
  RecommendationResponse,
  TrajectoryPayload,
} from "../src/types.js";

export const trajectoryFixture: TrajectoryPayload = {
  schema_version: 1,
  patient_id: "p01",
  age: 67,
  gender: "F",
  weight: 70,
  comorbidities: { diabetes: true, chf: false },
  died: false,
  feature_groups: { hr: "vitals", map: "vitals", lactate: "labs", mystery: "zzz" },
  timesteps: [
    {
      bin: 0,
      features: { hr: 85, map: 70, lactate: 3.3, mystery: 1 },
      flags: { hr: "normal", map: "normal", lactate: "above", mystery: "normal" },
      deltas: { hr: null, map: null, lactate: null, mystery: null },
      fluid_dose: 250,
      vaso_dose: 0.12,
      mech_vent: true,
      sofa: 7,
      sirs: 2,
    },
    {
      bin: 1,
      features: { hr: 95, map: 60, lactate: 2.5, mystery: 1 },
      flags: { hr: "normal", map: "below", lactate: "above", mystery: "normal" },
      deltas: { hr: 10, map: -10, lactate: -0.8, mystery: 0 },
      fluid_dose: 0,
      vaso_dose: 0,
      mech_vent: true,
      sofa: 7,
      sirs: 2,
    },
  ],
};

export function recommendationFixture(
  condition: RecommendationResponse["condition"]
): RecommendationResponse {
  if (condition === "no_ai") {
    return { schema_version: 1, condition };
  }
  const base = {
    text: "For this patient, the AI recommends increasing IV fluids to about 75 mL over the next 4 hours and no change in vasopressors.",
    state_id: 3,
    recommended_action: 5,
    fluid_delta: "increase" as const,
    vaso_delta: "no_change" as const,
    recommended_fluid_dose: 75,
    recommended_vaso_dose: 0,
    low_data: false,
  };
  if (condition === "text_only") {
    return { schema_version: 1, condition, recommendation: { ...base } };
  }
  if (condition === "feature_explanation") {
    return {
      schema_version: 1,
      condition,
      recommendation: {
        ...base,
        explanation: {
          state_id: 3,
          features: [
            { name: "lactate", attribution: 1.4, direction: "above" },
            { name: "map", attribution: -0.9, direction: "below" },
            { name: "hr", attribution: 0.2, direction: "above" },
          ],
          baseline_score: -2.0,
          mortality_rate: 0.18,
          n_support: 420,
        },
      },
    };
  }
  return {
    schema_version: 1,
    condition,
    recommendation: {
      ...base,
      alternatives: [
        { action_id: 5, fluid_bin: 1, vaso_bin: 0, q_value: 62.1, clinician_freq: 0.4 },
        { action_id: 6, fluid_bin: 1, vaso_bin: 1, q_value: 55.0, clinician_freq: 0.25 },
        { action_id: 0, fluid_bin: 0, vaso_bin: 0, q_value: 31.7, clinician_freq: 0.35 },
      ],
      q_heatmap: [
        [31.7, null, null, null, null],
        [62.1, 55.0, null, null, null],
        [null, null, null, null, null],
        [null, null, null, null, null],
        [null, null, null, null, null],
      ],
      clinician_probs: [
        [0.35, 0, 0, 0, 0],
        [0.4, 0.25, 0, 0, 0],
        [0, 0, 0, 0, 0],
        [0, 0, 0, 0, 0],
        [0, 0, 0, 0, 0],
      ],
    },
  };
}
