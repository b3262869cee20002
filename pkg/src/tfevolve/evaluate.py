"""Pairwise image judging: which of two renderings is better, per aspect.

Two interchangeable backends. The heuristic judge scores each image with
deterministic rubrics (entropy, hue peaks, palette coherence, histogram
intersection) so the optimizer runs offline and tests are exact. The MLLM
judge asks an OpenAI-compatible multimodal chat endpoint and demands a
strict JSON verdict. Per-aspect winners aggregate into an overall winner by
weighted vote; a tie splits the aspect's weight between both sides.
"""

from __future__ import annotations

import base64
import hashlib
import json
import threading
import time
from dataclasses import dataclass
from importlib import resources

import httpx
import numpy as np

from .render import RenderedImage

INFORMATION_RICHNESS = "information_richness"
FEATURE_DISCRIMINATION = "feature_discrimination"
COLOR_HARMONY = "color_harmony"
TEXT_INTENT = "text_intent"
VISUAL_INTENT = "visual_intent"
ASPECT_IDS = (
    INFORMATION_RICHNESS,
    FEATURE_DISCRIMINATION,
    COLOR_HARMONY,
    TEXT_INTENT,
    VISUAL_INTENT,
)
FORMAL_ASPECT_IDS = (INFORMATION_RICHNESS, FEATURE_DISCRIMINATION, COLOR_HARMONY)

TIE_THRESHOLD = 0.01
INTENT_ASPECT_WEIGHT = 3.0

ASPECT_PROMPTS = {
    INFORMATION_RICHNESS: (
        "Which image conveys more structural information: more distinct "
        "visible structures, less empty or washed-out area?"
    ),
    FEATURE_DISCRIMINATION: (
        "Which image separates distinct features more clearly, with "
        "boundaries and materials distinguishable by color and opacity?"
    ),
    COLOR_HARMONY: (
        "Which image has the more harmonious, aesthetically balanced "
        "color palette?"
    ),
    TEXT_INTENT: "Which image better matches the user's stated intent?",
    VISUAL_INTENT: "Which image better matches the user's reference image?",
}

PROMPT_VERSION = "v1"


class EvaluatorError(Exception):
    pass


class MLLMConfigError(EvaluatorError):
    """Endpoint rejected the credentials or the judge is misconfigured."""


@dataclass(frozen=True)
class Aspect:
    id: str
    weight: float = 1.0
    prompt_text: str = ""

    def __post_init__(self):
        if self.id not in ASPECT_IDS:
            raise EvaluatorError(f"unknown aspect id {self.id!r}")
        if self.weight <= 0:
            raise EvaluatorError("aspect weight must be positive")
        if not self.prompt_text:
            object.__setattr__(self, "prompt_text", ASPECT_PROMPTS[self.id])


@dataclass(frozen=True)
class Intent:
    kind: str = "none"
    text: str | None = None
    reference: RenderedImage | None = None

    def __post_init__(self):
        if self.kind not in ("none", "text", "image"):
            raise EvaluatorError(f"unknown intent kind {self.kind!r}")
        if self.kind == "text" and not self.text:
            raise EvaluatorError("text intent requires nonempty text")
        if self.kind == "image" and self.reference is None:
            raise EvaluatorError("image intent requires a reference image")

    @classmethod
    def none(cls) -> "Intent":
        return cls(kind="none")

    @classmethod
    def from_text(cls, text: str) -> "Intent":
        return cls(kind="text", text=text)

    @classmethod
    def from_image(cls, reference: RenderedImage) -> "Intent":
        return cls(kind="image", reference=reference)

    def cache_key(self) -> str:
        if self.kind == "text":
            return "text:" + hashlib.sha1(self.text.encode()).hexdigest()
        if self.kind == "image":
            return "image:" + hashlib.sha1(self.reference.pixels.tobytes()).hexdigest()
        return "none"


@dataclass(frozen=True)
class ComparisonResult:
    per_aspect: dict[str, str]
    overall: str
    rationale: str | None = None
    degraded: bool = False

    def __post_init__(self):
        for aspect_id, winner in self.per_aspect.items():
            if winner not in ("A", "B", "Tie"):
                raise EvaluatorError(f"bad winner {winner!r} for {aspect_id}")
        if self.overall not in ("A", "B", "Tie"):
            raise EvaluatorError(f"bad overall winner {self.overall!r}")


def formal_aspects() -> list[Aspect]:
    return [Aspect(id=a, weight=1.0) for a in FORMAL_ASPECT_IDS]


def default_aspects(intent: Intent) -> list[Aspect]:
    """Three formal aspects; an active intent adds its aspect at weight 3."""
    aspects = formal_aspects()
    if intent.kind == "text":
        aspects.append(Aspect(id=TEXT_INTENT, weight=INTENT_ASPECT_WEIGHT))
    elif intent.kind == "image":
        aspects.append(Aspect(id=VISUAL_INTENT, weight=INTENT_ASPECT_WEIGHT))
    return aspects


def aggregate_overall(per_aspect: dict[str, str], aspects: list[Aspect]) -> str:
    score_a = score_b = 0.0
    for aspect in aspects:
        winner = per_aspect[aspect.id]
        if winner == "A":
            score_a += aspect.weight
        elif winner == "B":
            score_b += aspect.weight
        else:
            score_a += aspect.weight / 2.0
            score_b += aspect.weight / 2.0
    if score_a > score_b:
        return "A"
    if score_b > score_a:
        return "B"
    return "Tie"


def _check_compare_inputs(image_a, image_b, aspects):
    if not aspects:
        raise EvaluatorError("aspect list must be nonempty")
    ids = [a.id for a in aspects]
    if len(set(ids)) != len(ids):
        raise EvaluatorError("duplicate aspect ids")
    if (image_a.width, image_a.height) != (image_b.width, image_b.height):
        raise EvaluatorError("images must have identical dimensions")


def compare(judge, image_a, image_b, aspects: list[Aspect], intent: Intent) -> ComparisonResult:
    """Judge both images per aspect, then weighted-vote an overall winner."""
    _check_compare_inputs(image_a, image_b, aspects)
    per_aspect, rationale, degraded = judge.decide(image_a, image_b, aspects, intent)
    return ComparisonResult(
        per_aspect=per_aspect,
        overall=aggregate_overall(per_aspect, aspects),
        rationale=rationale,
        degraded=degraded,
    )


# --- heuristic rubrics -----------------------------------------------------

LUMA_BINS = 64
HUE_BINS = 36
MAX_HUE_PEAKS = 6
HSV_HIST_SHAPE = (8, 8, 4)
SATURATION_GATE = 0.2
VALUE_GATE = 0.1


def _rgb_unit(pixels: np.ndarray) -> np.ndarray:
    return pixels[..., :3].reshape(-1, 3).astype(np.float64) / 255.0


def _hsv(rgb: np.ndarray):
    maxc = rgb.max(axis=1)
    minc = rgb.min(axis=1)
    value = maxc
    delta = maxc - minc
    sat = np.where(maxc > 0, delta / np.where(maxc > 0, maxc, 1.0), 0.0)

    r, g, b = rgb[:, 0], rgb[:, 1], rgb[:, 2]
    hue = np.zeros(len(rgb))
    chromatic = delta > 0
    dd = np.where(chromatic, delta, 1.0)
    is_r = chromatic & (maxc == r)
    is_g = chromatic & (maxc == g) & ~is_r
    is_b = chromatic & ~is_r & ~is_g
    hue[is_r] = ((g - b)[is_r] / dd[is_r]) % 6.0
    hue[is_g] = (b - r)[is_g] / dd[is_g] + 2.0
    hue[is_b] = (r - g)[is_b] / dd[is_b] + 4.0
    hue = (hue / 6.0) % 1.0
    return hue, sat, value


def _non_background_mask(pixels: np.ndarray) -> np.ndarray:
    """Background = the most frequent exact RGB triple in the image."""
    rgb = pixels[..., :3].reshape(-1, 3).astype(np.uint32)
    packed = (rgb[:, 0] << 16) | (rgb[:, 1] << 8) | rgb[:, 2]
    values, counts = np.unique(packed, return_counts=True)
    return packed != values[np.argmax(counts)]


def _gated_hues(pixels: np.ndarray) -> np.ndarray:
    hue, sat, value = _hsv(_rgb_unit(pixels))
    return hue[(sat > SATURATION_GATE) & (value > VALUE_GATE)]


def _score_information_richness(pixels: np.ndarray) -> float:
    mask = _non_background_mask(pixels)
    if not mask.any():
        return 0.0
    rgb = _rgb_unit(pixels)[mask]
    luma = rgb @ np.array([0.2126, 0.7152, 0.0722])
    bins = np.minimum((luma * LUMA_BINS).astype(np.int64), LUMA_BINS - 1)
    counts = np.bincount(bins, minlength=LUMA_BINS)
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum() / np.log(LUMA_BINS))


def _hue_histogram(hues: np.ndarray) -> np.ndarray:
    bins = np.minimum((hues * HUE_BINS).astype(np.int64), HUE_BINS - 1)
    return np.bincount(bins, minlength=HUE_BINS)


def _score_feature_discrimination(pixels: np.ndarray) -> float:
    hues = _gated_hues(pixels)
    if len(hues) == 0:
        return 0.0
    counts = _hue_histogram(hues).astype(np.float64)
    threshold = counts.mean() + counts.std()
    left = np.roll(counts, 1)
    right = np.roll(counts, -1)
    peaks = int(((counts > left) & (counts > right) & (counts > threshold)).sum())
    return min(peaks, MAX_HUE_PEAKS) / MAX_HUE_PEAKS


def _score_color_harmony(pixels: np.ndarray) -> float:
    hues = _gated_hues(pixels)
    if len(hues) == 0:
        return 0.5  # achromatic image: nothing clashes, nothing harmonizes
    counts = _hue_histogram(hues)
    dominant = (np.argmax(counts) + 0.5) / HUE_BINS * 360.0
    degrees = hues * 360.0
    dist_hub = np.abs((degrees - dominant + 180.0) % 360.0 - 180.0)
    dist_opposite = np.abs((degrees - dominant) % 360.0 - 180.0)
    mean_dist = float(np.minimum(dist_hub, dist_opposite).mean())
    return float(np.clip(1.0 - mean_dist / 90.0, 0.0, 1.0))


def _hsv_joint_histogram(pixels: np.ndarray) -> np.ndarray:
    hue, sat, value = _hsv(_rgb_unit(pixels))
    hb, sb, vb = HSV_HIST_SHAPE
    idx_h = np.minimum((hue * hb).astype(np.int64), hb - 1)
    idx_s = np.minimum((sat * sb).astype(np.int64), sb - 1)
    idx_v = np.minimum((value * vb).astype(np.int64), vb - 1)
    flat = (idx_h * sb + idx_s) * vb + idx_v
    counts = np.bincount(flat, minlength=hb * sb * vb).astype(np.float64)
    return counts / counts.sum()


def _score_visual_intent(pixels: np.ndarray, intent: Intent) -> float:
    if intent.reference is None:
        raise EvaluatorError("visual_intent requires a reference image")
    return float(
        np.minimum(
            _hsv_joint_histogram(pixels), _hsv_joint_histogram(intent.reference.pixels)
        ).sum()
    )


def heuristic_score(image: RenderedImage, aspect_id: str, intent: Intent) -> float:
    """Deterministic [0,1] rubric score for one aspect of one image."""
    if aspect_id == INFORMATION_RICHNESS:
        return _score_information_richness(image.pixels)
    if aspect_id == FEATURE_DISCRIMINATION:
        return _score_feature_discrimination(image.pixels)
    if aspect_id == COLOR_HARMONY:
        return _score_color_harmony(image.pixels)
    if aspect_id == VISUAL_INTENT:
        return _score_visual_intent(image.pixels, intent)
    if aspect_id == TEXT_INTENT:
        return 0.5  # cannot read text offline; declared neutral
    raise EvaluatorError(f"unknown aspect id {aspect_id!r}")


class HeuristicJudge:
    """Pure-function judge; memoizes per-image aspect scores by pixel digest."""

    name = "heuristic"

    def __init__(self):
        self._cache: dict[tuple[str, str, str], float] = {}
        self._lock = threading.Lock()

    def _score(self, image: RenderedImage, aspect_id: str, intent: Intent) -> float:
        key = (
            hashlib.sha1(image.pixels.tobytes()).hexdigest(),
            aspect_id,
            intent.cache_key() if aspect_id == VISUAL_INTENT else "",
        )
        with self._lock:
            if key in self._cache:
                return self._cache[key]
        score = heuristic_score(image, aspect_id, intent)
        with self._lock:
            self._cache[key] = score
        return score

    def decide(self, image_a, image_b, aspects, intent):
        winners = {}
        for aspect in aspects:
            diff = self._score(image_a, aspect.id, intent) - self._score(
                image_b, aspect.id, intent
            )
            if abs(diff) < TIE_THRESHOLD:
                winners[aspect.id] = "Tie"
            else:
                winners[aspect.id] = "A" if diff > 0 else "B"
        return winners, None, False


# --- MLLM backend ----------------------------------------------------------


def _load_prompt(name: str) -> str:
    return (
        resources.files("tfevolve").joinpath(f"prompts/{name}_{PROMPT_VERSION}.txt")
    ).read_text()


@dataclass(frozen=True)
class MLLMConfig:
    url: str
    model: str
    api_key: str
    timeout: float = 30.0
    max_in_flight: int = 4
    max_attempts: int = 3
    backoff_base: float = 0.5

    def __post_init__(self):
        if not self.url or not self.model:
            raise MLLMConfigError("MLLM endpoint url and model are required")
        if self.max_attempts < 1 or self.max_in_flight < 1:
            raise MLLMConfigError("max_attempts and max_in_flight must be >= 1")


def _image_part(image: RenderedImage) -> dict:
    encoded = base64.b64encode(image.to_png_bytes()).decode("ascii")
    return {
        "type": "image_url",
        "image_url": {"url": f"data:image/png;base64,{encoded}"},
    }


def build_request_body(
    config: MLLMConfig, image_a, image_b, aspects: list[Aspect], intent: Intent
) -> dict:
    """The exact chat-completion payload sent to the endpoint."""
    aspect_lines = "\n".join(
        f"- {a.id} (weight {a.weight:g}): {a.prompt_text}" for a in aspects
    )
    system = _load_prompt("system_rubric").format(aspects=aspect_lines)

    if intent.kind == "text":
        clause = _load_prompt("intent_text").format(text=intent.text)
    elif intent.kind == "image":
        clause = _load_prompt("intent_image")
    else:
        clause = ""
    user_text = _load_prompt("user_preamble").format(intent_clause=clause)

    content = [
        {"type": "text", "text": user_text},
        _image_part(image_a),
        _image_part(image_b),
    ]
    if intent.kind == "image":
        content.append(_image_part(intent.reference))

    return {
        "model": config.model,
        "temperature": 0,
        "response_format": {"type": "json_object"},
        "messages": [
            {"role": "system", "content": system},
            {"role": "user", "content": content},
        ],
    }


def _parse_reply(payload: dict, aspects: list[Aspect]) -> dict[str, str] | None:
    try:
        content = payload["choices"][0]["message"]["content"]
        verdict = json.loads(content)
    except (KeyError, IndexError, TypeError, json.JSONDecodeError):
        return None
    if not isinstance(verdict, dict):
        return None
    winners = {}
    for aspect in aspects:
        value = verdict.get(aspect.id)
        if value not in ("A", "B", "Tie"):
            return None
        winners[aspect.id] = value
    return winners


class MLLMJudge:
    """Chat-endpoint judge: strict JSON verdicts, retries, degraded fallback.

    Transport failures and rate limits retry with exponential backoff; an
    unparseable reply retries with a repair prompt appended. After
    ``max_attempts`` total attempts the judge degrades to an all-Tie result
    rather than stalling the optimizer. 401/403 raise immediately: retrying
    bad credentials cannot help.
    """

    name = "mllm"

    def __init__(self, config: MLLMConfig, transport: httpx.BaseTransport | None = None):
        self.config = config
        self._semaphore = threading.Semaphore(config.max_in_flight)
        self._client = httpx.Client(
            transport=transport, timeout=config.timeout, follow_redirects=True
        )
        self.last_attempts = 0

    def close(self):
        self._client.close()

    def _post(self, body: dict) -> httpx.Response:
        return self._client.post(
            self.config.url,
            json=body,
            headers={"Authorization": f"Bearer {self.config.api_key}"},
        )

    def decide(self, image_a, image_b, aspects, intent):
        body = build_request_body(self.config, image_a, image_b, aspects, intent)
        repair = _load_prompt("repair")
        attempts = 0
        with self._semaphore:
            while attempts < self.config.max_attempts:
                attempts += 1
                self.last_attempts = attempts
                try:
                    response = self._post(body)
                except httpx.HTTPError:
                    self._backoff(attempts)
                    continue
                if response.status_code in (401, 403):
                    raise MLLMConfigError(
                        f"endpoint rejected credentials (HTTP {response.status_code})"
                    )
                if response.status_code >= 400:
                    self._backoff(attempts, response)
                    continue
                try:
                    payload = response.json()
                except json.JSONDecodeError:
                    payload = {}
                winners = _parse_reply(payload, aspects)
                if winners is not None:
                    rationale = _extract_rationale(payload)
                    return winners, rationale, False
                body = _with_repair_turn(body, payload, repair)
        return {a.id: "Tie" for a in aspects}, None, True

    def _backoff(self, attempt: int, response: httpx.Response | None = None):
        delay = self.config.backoff_base * (2.0 ** (attempt - 1))
        if response is not None:
            retry_after = response.headers.get("Retry-After")
            if retry_after is not None:
                try:
                    delay = max(delay, float(retry_after))
                except ValueError:
                    pass
        if delay > 0:
            time.sleep(delay)


def _extract_rationale(payload: dict) -> str | None:
    try:
        content = payload["choices"][0]["message"]["content"]
        verdict = json.loads(content)
    except (KeyError, IndexError, TypeError, json.JSONDecodeError):
        return None
    rationale = verdict.get("rationale") if isinstance(verdict, dict) else None
    return rationale if isinstance(rationale, str) else None


def _with_repair_turn(body: dict, payload: dict, repair: str) -> dict:
    """Append the bad reply plus a repair instruction for the next attempt."""
    try:
        previous = payload["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError):
        previous = ""
    messages = list(body["messages"])
    messages.append({"role": "assistant", "content": previous or ""})
    messages.append({"role": "user", "content": repair})
    return {**body, "messages": messages}
