export type TaskKind = "sc" | "proof";

export type TaskSummary = {
  task_id: string;
  kind: TaskKind;
  done: boolean;
};

type TaskBase = {
  task_id: string;
  lemma_id: string;
  attempt_id: string;
  statement: string;
  definitions: string[];
  hypotheses: string[];
  // Present only when the task was fetched with ?reveal=1.
  model_verdict?: boolean;
};

export type ScTask = TaskBase & {
  kind: "sc";
};

export type ProofTask = TaskBase & {
  kind: "proof";
  prover_model: string;
  judge_model: string;
  steps: string;
};

export type Task = ScTask | ProofTask;

export type VerdictRequest = {
  reviewer: string;
  verdict: boolean;
  comment?: string;
};

export type VerdictResponse = {
  ok: boolean;
  review_id: string;
  agrees: boolean;
};

export type KindProgress = {
  total: number;
  done: number;
};

export type Progress = {
  total: number;
  done: number;
  reviews: number;
  by_kind: Record<string, KindProgress>;
};
