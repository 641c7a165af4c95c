import init, { oracle_eigenvalues, oracle_expansion, cutoff_constants } from "./pkg/sgweyl_wasm.js";

const num = (id) => Number(document.getElementById(id).value);

function wire(button, out, f) {
  document.getElementById(button).addEventListener("click", () => {
    const el = document.getElementById(out);
    try {
      el.textContent = JSON.stringify(JSON.parse(f()), null, 2);
    } catch (e) {
      el.textContent = "error: " + e;
    }
  });
}

await init();
wire("ev-go", "ev-out", () => oracle_eigenvalues(num("ev-n"), num("ev-k")));
wire("sp-go", "sp-out", () => oracle_expansion(num("sp-l"), num("sp-j")));
wire("cf-go", "cf-out", () => cutoff_constants(num("cf-a"), num("cf-c"), num("cf-t")));
