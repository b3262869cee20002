import { afterEach, expect, test, vi } from "vitest";

import { Api, ApiError } from "../src/api";

function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}

afterEach(() => {
  vi.unstubAllGlobals();
});

test("requests carry the base url, method and json body", async () => {
  const calls: { url: string; init?: RequestInit }[] = [];
  vi.stubGlobal("fetch", async (url: string, init?: RequestInit) => {
    calls.push({ url, init });
    return jsonResponse(200, { session_id: "abc" });
  });

  const api = new Api("http://host:1");
  await api.createSession({ volume: { kind: "synthetic", name: "ramp", dims: [8, 8, 8] } });
  expect(calls[0].url).toBe("http://host:1/sessions");
  expect(calls[0].init?.method).toBe("POST");
  expect(JSON.parse(calls[0].init?.body as string)).toEqual({
    volume: { kind: "synthetic", name: "ramp", dims: [8, 8, 8] },
  });

  await api.refine("s1", 2, "softer");
  expect(calls[1].url).toBe("http://host:1/sessions/s1/refine");
  expect(JSON.parse(calls[1].init?.body as string)).toEqual({
    gene_index: 2,
    directive: "softer",
  });

  await api.gallery("s1", 5);
  expect(calls[2].url).toBe("http://host:1/sessions/s1/gallery?k=5");
  expect(calls[2].init?.method).toBe("GET");
});

test("render urls encode the camera pose and size", () => {
  const api = new Api();
  const url = api.renderUrl("s1", "g9", { yaw: 12.345, pitch: -4, dist: 1.5 }, 128);
  expect(url).toBe(
    "/sessions/s1/render?genome=g9&yaw=12.35&pitch=-4.00&dist=1.500&size=128",
  );
});

test("error payloads become typed ApiError values", async () => {
  vi.stubGlobal("fetch", async () =>
    jsonResponse(404, { code: "not_found", message: "no_feature" }),
  );
  const api = new Api();
  const err = await api.pick("s1", 0, 0).catch((e) => e);
  expect(err).toBeInstanceOf(ApiError);
  expect(err.status).toBe(404);
  expect(err.code).toBe("not_found");
  expect(err.message).toBe("no_feature");
});

test("non-json error bodies fall back to a generic message", async () => {
  vi.stubGlobal(
    "fetch",
    async () => new Response("<html>boom</html>", { status: 502 }),
  );
  const api = new Api();
  const err = await api.summary("s1").catch((e) => e);
  expect(err).toBeInstanceOf(ApiError);
  expect(err.code).toBe("internal");
  expect(err.message).toBe("HTTP 502");
});
