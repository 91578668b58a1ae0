import katex from "katex";

export type SegmentKind = "text" | "inline" | "display";

export type MathSegment = {
  kind: SegmentKind;
  content: string;
};

type Delimiter = {
  open: string;
  close: string;
  kind: "inline" | "display";
};

// Order matters: $$ must be probed before $.
const DELIMITERS: Delimiter[] = [
  { open: "$$", close: "$$", kind: "display" },
  { open: "\\[", close: "\\]", kind: "display" },
  { open: "\\(", close: "\\)", kind: "inline" },
  { open: "$", close: "$", kind: "inline" },
];

function isEscaped(source: string, index: number): boolean {
  let backslashes = 0;
  for (let i = index - 1; i >= 0 && source[i] === "\\"; i--) {
    backslashes++;
  }
  return backslashes % 2 === 1;
}

function delimiterAt(source: string, index: number): Delimiter | null {
  for (const delimiter of DELIMITERS) {
    if (!source.startsWith(delimiter.open, index)) {
      continue;
    }
    // A backslash-escaped dollar is literal text, not a math opener.
    if (delimiter.open.startsWith("$") && isEscaped(source, index)) {
      return null;
    }
    return delimiter;
  }
  return null;
}

function findClose(source: string, from: number, close: string): number {
  let at = source.indexOf(close, from);
  while (at !== -1 && close.startsWith("$") && isEscaped(source, at)) {
    at = source.indexOf(close, at + 1);
  }
  return at;
}

/**
 * Split raw LaTeX prose into text and math segments.
 *
 * Recognizes $...$, $$...$$, \(...\), and \[...\] spans. Escaped
 * dollars (\$) stay in text. An opener with no matching closer is
 * kept verbatim as text so nothing is silently dropped.
 */
export function splitMathSegments(source: string): MathSegment[] {
  const segments: MathSegment[] = [];
  let text = "";
  let i = 0;
  while (i < source.length) {
    const delimiter = delimiterAt(source, i);
    if (delimiter === null) {
      text += source[i];
      i++;
      continue;
    }
    const start = i + delimiter.open.length;
    const end = findClose(source, start, delimiter.close);
    const content = end === -1 ? "" : source.slice(start, end).trim();
    if (end === -1 || content === "") {
      // Unclosed or empty span: not math, keep the opener as text.
      text += delimiter.open;
      i = start;
      continue;
    }
    if (text) {
      segments.push({ kind: "text", content: text });
      text = "";
    }
    segments.push({ kind: delimiter.kind, content });
    i = end + delimiter.close.length;
  }
  if (text) {
    segments.push({ kind: "text", content: text });
  }
  return segments;
}

export type RenderOutcome = {
  /** Math segments attempted. */
  math: number;
  /** Math segments that failed to typeset and fell back to raw source. */
  failures: number;
};

/**
 * Typeset one block of LaTeX prose into ``target``.
 *
 * Each math segment is rendered independently; a segment the
 * typesetter rejects falls back to its raw source in a <code> element
 * so the reviewer can still read it, without disturbing neighbours.
 */
export function renderMathInto(target: HTMLElement, source: string): RenderOutcome {
  target.textContent = "";
  const outcome: RenderOutcome = { math: 0, failures: 0 };
  for (const segment of splitMathSegments(source)) {
    if (segment.kind === "text") {
      target.appendChild(document.createTextNode(segment.content));
      continue;
    }
    outcome.math++;
    const span = document.createElement("span");
    span.className = segment.kind === "display" ? "math math-display" : "math math-inline";
    try {
      katex.render(segment.content, span, {
        displayMode: segment.kind === "display",
        throwOnError: true,
      });
    } catch (error) {
      outcome.failures++;
      span.textContent = "";
      const raw = document.createElement("code");
      raw.className = "math-fallback";
      raw.textContent =
        segment.kind === "display" ? `$$${segment.content}$$` : `$${segment.content}$`;
      raw.title = error instanceof Error ? error.message : String(error);
      span.appendChild(raw);
    }
    target.appendChild(span);
  }
  return outcome;
}
