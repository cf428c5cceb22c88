import init, { chunkText, exploreQuery, needleSweep } from "./pkg/rag_demo_wasm.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);
const list = (id) => $(id).value.split(/[\s,]+/).filter(Boolean).map(Number);

function el(tag, attrs = {}, ...children) {
  const e = document.createElement(tag);
  Object.assign(e, attrs);
  e.append(...children);
  return e;
}

function fail(target, err) {
  target.replaceChildren(el("div", { className: "error", textContent: String(err.message ?? err) }));
}

function renderChunks() {
  const out = $("chunk-out");
  try {
    const overlap = num("chunk-overlap");
    const r = JSON.parse(chunkText($("chunk-text").value, num("chunk-size"), overlap));
    $("chunk-summary").textContent =
      `${r.token_count} tokens, stride ${r.stride}, ${r.chunks.length} chunk(s)`;
    out.replaceChildren(...r.chunks.map((c) => {
      const words = c.text.split(" ");
      const lead = c.index > 0 ? Math.min(overlap, words.length) : 0;
      return el("div", { className: "chunk" },
        el("span", { className: "tag", textContent: `#${c.index} [${c.token_start}, ${c.token_end})` }),
        el("span", { className: "ov", textContent: words.slice(0, lead).join(" ") }),
        (lead ? " " : "") + words.slice(lead).join(" "));
    }));
  } catch (e) {
    $("chunk-summary").textContent = "";
    fail(out, e);
  }
}

function parseDocs(text) {
  return text.split(/\n\s*\n/).map((b) => b.trim()).filter(Boolean).map((b, i) => {
    const [first, ...rest] = b.split("\n");
    return rest.length ? { id: first.trim(), text: rest.join("\n") } : { id: `doc${i}`, text: first };
  });
}

function renderQuery() {
  const hitsOut = $("q-hits");
  try {
    const r = JSON.parse(exploreQuery(JSON.stringify({
      documents: parseDocs($("docs").value),
      query: $("query").value,
      chunk_size: num("q-chunk"),
      overlap: num("q-overlap"),
      top_n: num("q-top"),
      context_window: num("q-window"),
      answer_reserve: num("q-reserve"),
    })));
    const b = r.budget;
    const pct = (x) => `${(100 * x / b.context_window).toFixed(2)}%`;
    $("q-bar").replaceChildren(
      el("span", { style: `left:0;width:${pct(r.total_tokens)};background:#5b8def`, title: "prompt" }),
      el("span", { style: `right:0;width:${pct(b.answer_reserve)};background:#f0a35e`, title: "answer reserve" }));
    $("q-summary").textContent =
      `${r.chunk_count} chunks indexed. Prompt uses ${r.total_tokens} of ${b.prompt_limit} tokens ` +
      `(template ${b.template_cost}, window ${b.context_window}, reserve ${b.answer_reserve}).`;
    const rows = r.hits.map((h) => el("tr", { className: h.included ? "" : "out" },
      el("td", { textContent: h.rank }),
      el("td", { className: "l", textContent: h.label }),
      el("td", { textContent: h.score.toFixed(4) }),
      el("td", { textContent: h.cost }),
      el("td", { textContent: h.included ? "yes" : "skipped" }),
      el("td", { className: "l", textContent: h.text.length > 90 ? h.text.slice(0, 90) + "..." : h.text })));
    hitsOut.replaceChildren(el("table", {},
      el("tr", {}, ...["rank", "passage", "score", "cost", "in prompt", "text"].map((t) => el("th", { textContent: t }))),
      ...rows));
    $("q-prompt").textContent = r.prompt;
    $("q-answer").textContent = r.answer;
  } catch (e) {
    $("q-summary").textContent = "";
    $("q-bar").replaceChildren();
    fail(hitsOut, e);
  }
}

function runSweep() {
  const out = $("s-out");
  $("s-summary").textContent = "running...";
  // Let the status paint before the synchronous sweep blocks the thread.
  setTimeout(() => {
    try {
      const started = performance.now();
      const r = JSON.parse(needleSweep(JSON.stringify({
        n_docs: num("s-docs"),
        doc_tokens: num("s-tokens"),
        n_needles: num("s-needles"),
        seed: num("s-seed"),
        chunk_sizes: list("s-sizes"),
        overlaps: list("s-overlaps"),
        top_ns: list("s-tops"),
        context_windows: list("s-windows"),
      })));
      const cols = ["chunk_size", "overlap", "top_n", "context_window", "recall_at_1", "recall_at_n",
        "recall_in_prompt", "mean_hit_rank", "mean_included_hits", "budget_violations"];
      const fmt = (v) => Number.isInteger(v) ? v : v.toFixed(3);
      out.replaceChildren(el("table", {},
        el("tr", {}, ...cols.map((c) => el("th", { textContent: c.replaceAll("_", " ") }))),
        ...r.rows.map((row) => el("tr", {}, ...cols.map((c) => el("td", { textContent: fmt(row[c]) }))))));
      const csv = URL.createObjectURL(new Blob([r.csv], { type: "text/csv" }));
      $("s-summary").replaceChildren(
        `${r.rows.length} configurations in ${((performance.now() - started) / 1000).toFixed(2)} s. `,
        el("a", { href: csv, download: "sweep.csv", textContent: "Download CSV" }));
    } catch (e) {
      $("s-summary").textContent = "";
      fail(out, e);
    }
  }, 20);
}

await init();
for (const id of ["chunk-text", "chunk-size", "chunk-overlap"]) $(id).addEventListener("input", renderChunks);
for (const id of ["docs", "query", "q-chunk", "q-overlap", "q-top", "q-window", "q-reserve"]) {
  $(id).addEventListener("input", renderQuery);
}
$("s-run").addEventListener("click", runSweep);
renderChunks();
renderQuery();
