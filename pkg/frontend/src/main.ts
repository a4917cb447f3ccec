import { SearchClient } from "./client.js";
import { CanvasApp } from "./ui.js";

function requireElement<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing #${id}`);
  return el as T;
}

const params = new URLSearchParams(window.location.search);
const endpoint = params.get("endpoint") ?? "http://127.0.0.1:8080";

const app = new CanvasApp(
  new SearchClient(endpoint),
  requireElement<HTMLCanvasElement>("composition"),
  requireElement("class-list"),
  requireElement("results"),
  requireElement("status-line"),
  requireElement("errors"),
  requireElement<HTMLButtonElement>("query-button"),
  requireElement<HTMLSelectElement>("k-select"),
);

void app.start();
