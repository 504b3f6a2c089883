// Wire types mirroring the server's JSON contracts. The UI renders these
// verbatim and never recomputes model quantities.

export type Flag = "below" | "normal" | "above";
export type Condition =
  | "no_ai"
  | "text_only"
  | "feature_explanation"
  | "alternative_treatments";
export type Choice = "increase" | "decrease" | "no_change";

export interface TrajectoryStep {
  bin: number;
  features: Record<string, number>;
  flags: Record<string, Flag>;
  deltas: Record<string, number | null>;
  fluid_dose: number;
  vaso_dose: number;
  mech_vent: boolean;
  sofa: number;
  sirs: number;
}

export interface TrajectoryPayload {
  schema_version: number;
  patient_id: string;
  age: number;
  gender: string;
  weight: number;
  comorbidities: Record<string, boolean>;
  died: boolean;
  feature_groups: Record<string, string>;
  timesteps: TrajectoryStep[];
}

export interface ExplanationFeature {
  name: string;
  attribution: number;
  direction: string;
}

export interface Explanation {
  state_id: number;
  features: ExplanationFeature[];
  baseline_score: number;
  mortality_rate: number;
  n_support: number;
}

export interface Alternative {
  action_id: number;
  fluid_bin: number;
  vaso_bin: number;
  q_value: number | null;
  clinician_freq: number;
}

export interface Recommendation {
  text: string;
  state_id: number;
  recommended_action: number;
  fluid_delta: Choice;
  vaso_delta: Choice;
  recommended_fluid_dose: number;
  recommended_vaso_dose: number;
  low_data: boolean;
  explanation?: Explanation;
  alternatives?: Alternative[];
  q_heatmap?: (number | null)[][];
  clinician_probs?: number[][];
}

export interface RecommendationResponse {
  schema_version: number;
  condition: Condition;
  recommendation?: Recommendation;
}

export interface StudyCase {
  case_id: string;
  patient_id: string;
  bin: number;
  condition: Condition;
  pseudonym: string;
  vignette: string;
}

export interface PatientRow {
  patient_id: string;
  age: number;
  gender: string;
  died: boolean;
  n_bins: number;
  max_sofa: number;
  matching_bins: number[];
  discordant_bins: number | null;
}

export interface BrowseResponse {
  schema_version: number;
  total: number;
  patients: PatientRow[];
}

export interface DecisionBody {
  participant_id: string;
  role: string;
  years_experience: string;
  case_id: string;
  condition: Condition;
  fluid_choice: Choice;
  vaso_choice: Choice;
  confidence: number;
  difficulty: number;
  usefulness?: number;
  ai_confidence_effect?: number;
  idempotency_key?: string;
}

export interface DecisionAck {
  schema_version: number;
  record_id: number;
  duplicate: boolean;
}
