export type StepView = {
  number: number;
  subgoal: string;
  cites: string[];
  theorems: string[];
  proof: string;
};

const STEP_RE = /^STEP (\d+):\s*$/;
const FIELD_RE = /^(SUBGOAL|CITES|THEOREMS|PROOF): ?(.*)$/;

function splitNames(value: string): string[] {
  return value
    .split(",")
    .map((name) => name.trim())
    .filter((name) => name.length > 0);
}

/**
 * Parse the canonical step text served with proof tasks.
 *
 * The text is a flat sequence of "STEP n:" headers, each followed by
 * SUBGOAL/PROOF lines and optional CITES/THEOREMS lines. A line that
 * starts no field continues the previous field's value, so multi-line
 * proofs survive the round trip.
 */
export function parseSteps(rendered: string): StepView[] {
  const steps: StepView[] = [];
  let current: StepView | null = null;
  let field: "subgoal" | "proof" | null = null;

  const append = (text: string): void => {
    if (current === null || field === null) {
      return;
    }
    current[field] = current[field] ? `${current[field]}\n${text}` : text;
  };

  for (const line of rendered.split("\n")) {
    const stepMatch = STEP_RE.exec(line);
    if (stepMatch !== null) {
      current = {
        number: Number(stepMatch[1]),
        subgoal: "",
        cites: [],
        theorems: [],
        proof: "",
      };
      steps.push(current);
      field = null;
      continue;
    }
    if (current === null) {
      continue;
    }
    const fieldMatch = FIELD_RE.exec(line);
    if (fieldMatch === null) {
      append(line);
      continue;
    }
    const [, name, value] = fieldMatch;
    switch (name) {
      case "SUBGOAL":
        current.subgoal = value ?? "";
        field = "subgoal";
        break;
      case "PROOF":
        current.proof = value ?? "";
        field = "proof";
        break;
      case "CITES":
        current.cites = splitNames(value ?? "");
        field = null;
        break;
      case "THEOREMS":
        current.theorems = splitNames(value ?? "");
        field = null;
        break;
    }
  }
  return steps;
}
