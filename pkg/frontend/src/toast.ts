// Non-blocking notifications, bottom-right stack, auto-dismissed.

const TOAST_MS = 3500;

export function toast(message: string): void {
  let host = document.getElementById("toasts");
  if (!host) {
    host = document.createElement("div");
    host.id = "toasts";
    document.body.appendChild(host);
  }
  const item = document.createElement("div");
  item.className = "toast";
  item.textContent = message;
  host.appendChild(item);
  setTimeout(() => item.remove(), TOAST_MS);
}
