"""Dispatch of rendered prompts to model endpoints.

Two backends exist: an OpenAI-style chat-completions client over HTTP, and a
deterministic mock selected by the ``mock:<seed>`` endpoint scheme. The mock
draws correlated verdicts: every package has one shared latent verdict, and
each model copies it with probability ``sqrt(rho)`` or otherwise draws its own,
which gives a pairwise verdict correlation of ``rho``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping

import requests

from .errors import ConfigError
from .parser import ParsedResponse, repair_and_parse
from .promptgen import RenderedPrompt

log = logging.getLogger(__name__)

MAX_TEMPERATURE = 2.0
DEFAULT_MAX_IN_FLIGHT = 4
ENDPOINT_ENV_PREFIX = "CRYPTOVOTE_ENDPOINT_"

MALFORMATIONS = ("missing-brace", "unquoted-key", "prose-preamble", "missing-field")


@dataclass(frozen=True)
class ModelConfig:
    model_id: str
    endpoint: str
    temperature: float = 0.0
    top_p: float = 0.95
    max_tokens: int = 512
    template_id: str = "default"
    max_attempts: int = 3
    temperature_step: float = 0.2
    request_timeout: float = 120.0
    model_name: str | None = None  # name sent on the wire, defaults to model_id
    api_key_env: str | None = None

    def __post_init__(self):
        if not self.model_id:
            raise ConfigError("model_id must be non-empty")
        if self.temperature < 0 or self.temperature_step < 0:
            raise ConfigError(f"{self.model_id}: temperature and temperature_step must be >= 0")
        if not 0 < self.top_p <= 1:
            raise ConfigError(f"{self.model_id}: top_p must be in (0, 1]")
        if self.max_tokens < 1 or self.max_attempts < 1:
            raise ConfigError(f"{self.model_id}: max_tokens and max_attempts must be positive")
        top = self.temperature + (self.max_attempts - 1) * self.temperature_step
        if top > MAX_TEMPERATURE + 1e-12:
            raise ConfigError(
                f"{self.model_id}: retries would reach temperature {top:g} > {MAX_TEMPERATURE}"
            )

    def attempt_temperature(self, attempt: int) -> float:
        return self.temperature + (attempt - 1) * self.temperature_step


@dataclass(frozen=True)
class QueryOutcome:
    model_id: str
    package_name: str
    raw_text: str
    attempts_used: int
    final_temperature: float
    transport_error: str | None = None
    latency_s: float = field(default=0.0, compare=False)

    def to_json(self) -> dict:
        return {
            "model_id": self.model_id,
            "package_name": self.package_name,
            "raw_text": self.raw_text,
            "attempts_used": self.attempts_used,
            "final_temperature": round(self.final_temperature, 10),
            "transport_error": self.transport_error,
        }


@dataclass(frozen=True)
class MockProfile:
    seed: int = 0
    base_true_rate: float = 0.3
    rho: float = 0.5
    malformed_rate: float = 0.0
    per_model_bias: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not 0 <= self.base_true_rate <= 1:
            raise ConfigError("base_true_rate must be in [0, 1]")
        if not 0 <= self.rho <= 1:
            raise ConfigError("rho must be in [0, 1]")
        if not 0 <= self.malformed_rate < 1:
            raise ConfigError("malformed_rate must be in [0, 1)")


class TransportError(Exception):
    pass


def _unit(*parts) -> float:
    digest = hashlib.sha256("\x1f".join(map(str, parts)).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / 2.0**64


def mock_truth(profile: MockProfile, package_name: str) -> bool:
    """The shared latent verdict for a package; doubles as synthetic ground truth."""
    return _unit(profile.seed, "latent", package_name) < profile.base_true_rate


def mock_verdict(profile: MockProfile, model_id: str, package_name: str) -> bool:
    if _unit(profile.seed, "mix", model_id, package_name) < math.sqrt(profile.rho):
        return mock_truth(profile, package_name)
    p_own = min(1.0, max(0.0, profile.base_true_rate + profile.per_model_bias.get(model_id, 0.0)))
    return _unit(profile.seed, "own", model_id, package_name) < p_own


def mock_respond(profile: MockProfile, model_id: str, package_name: str, attempt: int = 1) -> str:
    verdict = mock_verdict(profile, model_id, package_name)
    answer = {
        "package": package_name,
        "cryptographic_relevance": "True" if verdict else "False",
        "justification": f"{model_id} judged {package_name} from its description",
    }
    if _unit(profile.seed, "malformed", model_id, package_name, attempt) >= profile.malformed_rate:
        return json.dumps(answer)

    kind = MALFORMATIONS[
        int(_unit(profile.seed, "kind", model_id, package_name, attempt) * len(MALFORMATIONS))
    ]
    if kind == "missing-brace":
        return json.dumps(answer)[:-1]
    if kind == "unquoted-key":
        return re.sub(r'"(\w+)":', r"\1:", json.dumps(answer))
    if kind == "prose-preamble":
        return "Sure! Here is my assessment in JSON:\n" + json.dumps(answer)
    del answer["cryptographic_relevance"]
    return json.dumps(answer)


def resolve_endpoint(model: ModelConfig, environ: Mapping[str, str] | None = None) -> str:
    env = os.environ if environ is None else environ
    key = ENDPOINT_ENV_PREFIX + re.sub(r"\W", "_", model.model_id).upper()
    return env.get(key, model.endpoint)


class MockBackend:
    def __init__(self, profile: MockProfile):
        self.profile = profile

    def complete(self, model: ModelConfig, prompt: RenderedPrompt, temperature: float, attempt: int) -> str:
        return mock_respond(self.profile, model.model_id, prompt.package_name, attempt)


class HttpBackend:
    """Chat-completions client; one pooled session shared across threads."""

    def __init__(self, session: requests.Session | None = None):
        self.session = session or requests.Session()

    def complete(self, model: ModelConfig, prompt: RenderedPrompt, temperature: float, attempt: int) -> str:
        url = resolve_endpoint(model).rstrip("/")
        if not url.endswith("/chat/completions"):
            url += "/chat/completions"
        headers = {"Content-Type": "application/json"}
        if model.api_key_env and os.environ.get(model.api_key_env):
            headers["Authorization"] = f"Bearer {os.environ[model.api_key_env]}"
        payload = {
            "model": model.model_name or model.model_id,
            "messages": [{"role": "user", "content": prompt.text}],
            "temperature": temperature,
            "top_p": model.top_p,
            "max_tokens": model.max_tokens,
        }
        try:
            resp = self.session.post(url, json=payload, headers=headers, timeout=model.request_timeout)
        except requests.RequestException as exc:
            raise TransportError(f"{type(exc).__name__}: {exc}") from None
        if resp.status_code != 200:
            raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"unexpected response body: {exc!r}") from None
        return content or ""


def backend_for(model: ModelConfig, profile: MockProfile | None = None):
    endpoint = resolve_endpoint(model)
    if endpoint.startswith("mock:"):
        seed_text = endpoint[len("mock:") :] or "0"
        try:
            seed = int(seed_text)
        except ValueError:
            raise ConfigError(f"{model.model_id}: bad mock seed {seed_text!r}") from None
        base = profile or MockProfile()
        return MockBackend(replace(base, seed=seed))
    if endpoint.startswith(("http://", "https://")):
        return HttpBackend()
    raise ConfigError(f"{model.model_id}: unsupported endpoint {endpoint!r}")


def query(model: ModelConfig, prompt: RenderedPrompt, backend=None, attempt: int = 1) -> QueryOutcome:
    """Send one prompt. Transport problems are captured, never raised."""
    backend = backend or backend_for(model)
    temperature = model.attempt_temperature(attempt)
    t0 = time.monotonic()
    try:
        text = backend.complete(model, prompt, temperature, attempt)
        error = None
    except TransportError as exc:
        text, error = "", str(exc)
    return QueryOutcome(
        model.model_id,
        prompt.package_name,
        text,
        attempt,
        temperature,
        error,
        time.monotonic() - t0,
    )


def query_with_retry(
    model: ModelConfig,
    prompt: RenderedPrompt,
    parse: Callable = repair_and_parse,
    backend=None,
):
    """Query until the answer parses, raising the temperature on each retry.

    Returns ``(outcome, result)`` where ``result`` is a ParsedResponse, or the
    last ParseFailure (None after a transport error) once attempts run out.
    """
    backend = backend or backend_for(model)
    outcome = result = None
    for attempt in range(1, model.max_attempts + 1):
        outcome = query(model, prompt, backend, attempt)
        if outcome.transport_error:
            result = None
            continue
        result = parse(outcome.raw_text, prompt.package_name)
        if isinstance(result, ParsedResponse):
            break
    return outcome, result


def run_queries(
    jobs: Iterable[tuple[ModelConfig, RenderedPrompt]],
    backends: Mapping[str, object],
    parse: Callable = repair_and_parse,
    max_in_flight: int = DEFAULT_MAX_IN_FLIGHT,
) -> list[QueryOutcome]:
    """Run (model, prompt) jobs; models in parallel, at most ``max_in_flight`` each.

    Outcomes come back in job order regardless of completion order.
    """
    jobs = list(jobs)
    results: list[QueryOutcome | None] = [None] * len(jobs)
    by_model: dict[str, list[int]] = {}
    for idx, (model, _) in enumerate(jobs):
        by_model.setdefault(model.model_id, []).append(idx)
    lock = threading.Lock()

    def work(idx: int):
        model, prompt = jobs[idx]
        outcome, _ = query_with_retry(model, prompt, parse, backends[model.model_id])
        with lock:
            results[idx] = outcome

    pools = [ThreadPoolExecutor(max_workers=max_in_flight) for _ in by_model]
    try:
        futures = [
            pool.submit(work, idx) for pool, idxs in zip(pools, by_model.values()) for idx in idxs
        ]
        for f in futures:
            f.result()
    finally:
        for pool in pools:
            pool.shutdown(wait=True)
    return results
