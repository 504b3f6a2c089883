// Minimal virtual node layer: components build plain trees, tests assert on
// the serialized HTML, and the browser mounts via innerHTML.

export interface VNode {
  tag: string;
  props: Record<string, string>;
  children: Child[];
}

export type Child = VNode | string;

export function h(
  tag: string,
  props: Record<string, string> = {},
  ...children: (Child | Child[] | null | undefined)[]
): VNode {
  const flat: Child[] = [];
  for (const child of children) {
    if (child === null || child === undefined) continue;
    if (Array.isArray(child)) {
      for (const c of child) if (c !== null && c !== undefined) flat.push(c);
    } else {
      flat.push(child);
    }
  }
  return { tag, props, children: flat };
}

const VOID_TAGS = new Set(["br", "hr", "img", "input", "meta", "link"]);

// presence alone activates these; an empty value means "omit"
const BOOLEAN_ATTRS = new Set(["disabled", "checked", "selected", "required"]);

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function renderToString(node: Child): string {
  if (typeof node === "string") return escapeHtml(node);
  const attrs = Object.entries(node.props)
    .filter(([k, v]) => !(BOOLEAN_ATTRS.has(k) && v === ""))
    .map(([k, v]) => ` ${k}="${escapeHtml(v)}"`)
    .join("");
  if (VOID_TAGS.has(node.tag)) return `<${node.tag}${attrs}/>`;
  const inner = node.children.map(renderToString).join("");
  return `<${node.tag}${attrs}>${inner}</${node.tag}>`;
}

/** Depth-first search over a tree, for tests and event wiring. */
export function findAll(node: Child, predicate: (n: VNode) => boolean): VNode[] {
  if (typeof node === "string") return [];
  const hits: VNode[] = [];
  if (predicate(node)) hits.push(node);
  for (const child of node.children) hits.push(...findAll(child, predicate));
  return hits;
}

export function byClass(node: Child, cls: string): VNode[] {
  return findAll(node, (n) =>
    (n.props["class"] ?? "").split(" ").includes(cls)
  );
}

export function textOf(node: Child): string {
  if (typeof node === "string") return node;
  return node.children.map(textOf).join("");
}
