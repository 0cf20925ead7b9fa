"""Chat-completion gateway: live HTTP, deterministic mock rules, and a replay cache.

Mock rule table (the ``checking-threshold`` good set is {A13, A14}):

    rule                 completion
    always-good          "1"
    always-bad           "0"
    coin / coin(<seed>)  "1" or "0", a fair coin keyed on (seed, request digest)
    checking-threshold   "1" if the applicant's Checking-account is
                         "... >= 200 DM / salary assignments for at least 1 year" (A13)
                         or "no checking account" (A14), otherwise "0"
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Sequence

import httpx
import numpy as np

from .data import Instance, load_schema
from .prompts import DEFAULT_TOKEN_BUDGET, ChatMessage, PromptParts, build_prompt

log = logging.getLogger(__name__)

MODES = ("http", "mock", "replay")
UNPARSEABLE = "Unparseable"
DEFAULT_ENDPOINT = "https://api.openai.com/v1"
ENDPOINT_ENV = "CREDFAIR_API_BASE"
KEY_ENV = "CREDFAIR_API_KEY"
CHECKING_GOOD_CODES = ("A13", "A14")


class GatewayError(RuntimeError):
    pass


class CredentialError(GatewayError):
    pass


class CacheMiss(GatewayError):
    def __init__(self, digest: str):
        self.digest = digest
        super().__init__(f"no cached completion for request digest {digest}")


class BackendError(GatewayError):
    pass


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[ChatMessage, ...]
    model_id: str = "gpt-3.5-turbo"
    temperature: float = 0.0
    max_tokens: int = 16

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")

    def payload(self) -> dict:
        return {"model": self.model_id, "messages": [m.to_json() for m in self.messages],
                "temperature": self.temperature, "max_tokens": self.max_tokens}

    def digest(self) -> str:
        blob = json.dumps(self.payload(), sort_keys=True, separators=(",", ":"), ensure_ascii=False)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class BackendConfig:
    mode: str = "mock"
    endpoint: str | None = None
    credential_env: str = KEY_ENV
    mock_rule: str = "always-good"
    mock_seed: int = 0
    cache_path: str | None = None
    fallthrough: bool = False
    max_attempts: int = 5
    backoff_base: float = 0.5
    max_in_flight: int = 4
    timeout: float = 60.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown backend mode {self.mode!r}; expected one of {MODES}")
        if self.mode == "replay" and not self.cache_path:
            raise ValueError("replay mode needs a cache_path")
        if self.max_in_flight < 1 or self.max_attempts < 1:
            raise ValueError("max_in_flight and max_attempts must be positive")

    def to_json(self) -> dict:
        return asdict(self)


class ReplayCache:
    """Append-only JSONL of ``{digest, request, response, timestamp, attempts}`` records."""

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._entries: dict[str, dict] = {}
        if self.path.exists():
            with open(self.path) as fh:
                for line in fh:
                    if line.strip():
                        entry = json.loads(line)
                        self._entries[entry["digest"]] = entry

    def __contains__(self, digest: str) -> bool:
        return digest in self._entries

    def __len__(self):
        return len(self._entries)

    def get(self, digest: str) -> dict:
        return self._entries[digest]

    def append(self, req: ChatRequest, response: str, attempts: int) -> None:
        entry = {"digest": req.digest(), "request": req.payload(), "response": response,
                 "timestamp": datetime.now(timezone.utc).isoformat(), "attempts": attempts}
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a") as fh:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
            self._entries[entry["digest"]] = entry


class HttpBackend:
    """Chat-completions client; ``network_calls`` counts every attempted request process-wide."""

    network_calls = 0
    _counter_lock = threading.Lock()

    def __init__(self, cfg: BackendConfig, transport: httpx.BaseTransport | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        self.cfg = cfg
        self.endpoint = (cfg.endpoint or os.environ.get(ENDPOINT_ENV) or DEFAULT_ENDPOINT).rstrip("/")
        self.sleep = sleep
        self._client = httpx.Client(transport=transport, timeout=cfg.timeout)

    def _key(self) -> str:
        key = os.environ.get(self.cfg.credential_env)
        if not key:
            raise CredentialError(f"environment variable {self.cfg.credential_env} is not set")
        return key

    def send(self, req: ChatRequest) -> tuple[str, int]:
        headers = {"Authorization": f"Bearer {self._key()}"}
        url = f"{self.endpoint}/chat/completions"
        last = "no attempt made"
        for attempt in range(1, self.cfg.max_attempts + 1):
            with HttpBackend._counter_lock:
                HttpBackend.network_calls += 1
            try:
                resp = self._client.post(url, json=req.payload(), headers=headers)
            except httpx.TransportError as exc:
                last = f"transport error: {exc}"
            else:
                if resp.status_code == 401:
                    raise CredentialError("endpoint rejected the credential (HTTP 401)")
                if resp.status_code == 429 or resp.status_code >= 500:
                    last = f"HTTP {resp.status_code}"
                elif resp.status_code >= 400:
                    raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                else:
                    try:
                        return resp.json()["choices"][0]["message"]["content"], attempt
                    except (KeyError, IndexError, TypeError, ValueError) as exc:
                        raise BackendError(f"malformed chat-completions response: {exc}") from None
            if attempt < self.cfg.max_attempts:
                delay = self.cfg.backoff_base * 2 ** (attempt - 1)
                log.warning("attempt %d failed (%s); retrying in %.2fs", attempt, last, delay)
                self.sleep(delay)
        raise BackendError(f"giving up after {self.cfg.max_attempts} attempts: {last}")

    def close(self):
        self._client.close()


_QUERY_LINE = re.compile(r"^- ([\w-]+): (.*)$")


def query_features(req: ChatRequest) -> dict[str, str]:
    """Attribute lines of the applicant block in the last user message."""
    from .knowledge import load_templates

    header = load_templates()["query_header"]
    content = req.messages[-1].content
    if header not in content:
        return {}
    block = content.split(header, 1)[1]
    out = {}
    for line in block.splitlines():
        m = _QUERY_LINE.match(line.strip())
        if m:
            out[m.group(1)] = m.group(2)
    return out


def _checking_threshold(req: ChatRequest, seed: int) -> str:
    attr = load_schema()["Checking-account"]
    good = {attr.describe(code) for code in CHECKING_GOOD_CODES}
    status = query_features(req).get("Checking-account")
    if status is None:
        return "Cannot determine."
    return "1" if status in good else "0"


def _coin(req: ChatRequest, seed: int) -> str:
    draw = np.random.default_rng([seed, int(req.digest()[:8], 16)]).random()
    return "1" if draw >= 0.5 else "0"


MOCK_RULES: dict[str, Callable[[ChatRequest, int], str]] = {
    "always-good": lambda req, seed: "1",
    "always-bad": lambda req, seed: "0",
    "coin": _coin,
    "checking-threshold": _checking_threshold,
}


def mock_complete(req: ChatRequest, rule: str, seed: int = 0) -> str:
    m = re.fullmatch(r"coin\((\d+)\)", rule)
    if m:
        rule, seed = "coin", int(m.group(1))
    if rule not in MOCK_RULES:
        raise ValueError(f"unknown mock rule {rule!r}; expected one of {sorted(MOCK_RULES)}")
    return MOCK_RULES[rule](req, seed)


@dataclass(frozen=True)
class Completion:
    text: str
    source: str  # http | mock | cache
    attempts: int
    latency: float


class Gateway:
    def __init__(self, cfg: BackendConfig, transport: httpx.BaseTransport | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        self.cfg = cfg
        self.cache = ReplayCache(cfg.cache_path) if cfg.cache_path else None
        needs_http = cfg.mode == "http" or (cfg.mode == "replay" and cfg.fallthrough)
        self.http = HttpBackend(cfg, transport=transport, sleep=sleep) if needs_http else None

    def complete(self, req: ChatRequest) -> Completion:
        start = time.perf_counter()
        digest = req.digest()
        if self.cache is not None and digest in self.cache:
            entry = self.cache.get(digest)
            return Completion(entry["response"], "cache", int(entry.get("attempts", 1)),
                              time.perf_counter() - start)
        if self.cfg.mode == "replay" and self.http is None:
            raise CacheMiss(digest)
        if self.cfg.mode == "mock":
            text, attempts, source = mock_complete(req, self.cfg.mock_rule, self.cfg.mock_seed), 1, "mock"
        else:
            text, attempts = self.http.send(req)
            source = "http"
        if self.cache is not None:
            self.cache.append(req, text, attempts)
        return Completion(text, source, attempts, time.perf_counter() - start)

    def close(self):
        if self.http is not None:
            self.http.close()


def complete(req: ChatRequest, cfg: BackendConfig) -> str:
    gateway = Gateway(cfg)
    try:
        return gateway.complete(req).text
    finally:
        gateway.close()


_STANDALONE_BIT = re.compile(r"(?<![\w.])([01])(?!\w|\.\d)")
_WORDS = re.compile(r"\b(good|yes|bad|no)\b", re.IGNORECASE)


def parse_label(text) -> int | str:
    """Map a completion to 1, 0, or UNPARSEABLE; never raises."""
    if not isinstance(text, str):
        return UNPARSEABLE
    stripped = text.strip()
    if stripped in ("1", "0"):
        return int(stripped)
    m = _STANDALONE_BIT.search(text)
    if m:
        return int(m.group(1))
    m = _WORDS.search(text)
    if m:
        return 1 if m.group(1).lower() in ("good", "yes") else 0
    return UNPARSEABLE


@dataclass(frozen=True)
class PredictionRecord:
    instance_id: int
    prompt_digest: str
    raw_completion: str
    parsed_label: int | str
    backend_mode: str
    source: str
    latency: float
    attempt_count: int
    error: str | None = None

    @property
    def unparseable(self) -> bool:
        return self.parsed_label == UNPARSEABLE

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj) -> "PredictionRecord":
        return cls(**obj)


def make_request(parts: PromptParts, model_id: str = "gpt-3.5-turbo", temperature: float = 0.0,
                 max_tokens: int = 16, token_budget: int = DEFAULT_TOKEN_BUDGET) -> ChatRequest:
    return ChatRequest(build_prompt(parts, token_budget), model_id, temperature, max_tokens)


def classify_batch(instances: Sequence[Instance], builder: Callable[[Instance], PromptParts],
                   cfg: BackendConfig, *, gateway: Gateway | None = None, model_id: str = "gpt-3.5-turbo",
                   temperature: float = 0.0, max_tokens: int = 16,
                   token_budget: int = DEFAULT_TOKEN_BUDGET) -> list[PredictionRecord]:
    """One record per instance in input order; see ``complete_batch`` for failure handling."""
    instances = list(instances)
    if not instances:
        raise ValueError("classify_batch needs at least one instance")
    requests = [make_request(builder(inst), model_id, temperature, max_tokens, token_budget)
                for inst in instances]
    return complete_batch([inst.uid for inst in instances], requests, cfg, gateway=gateway)


def complete_batch(instance_ids: Sequence[int], requests: Sequence[ChatRequest], cfg: BackendConfig, *,
                   gateway: Gateway | None = None) -> list[PredictionRecord]:
    """Send prepared requests with at most ``cfg.max_in_flight`` outstanding; output keeps input order.

    Per-instance failures become UNPARSEABLE records carrying the error; a
    credential error aborts the whole batch.
    """
    own = gateway is None
    gateway = gateway or Gateway(cfg)

    def run(i: int) -> PredictionRecord:
        req = requests[i]
        try:
            c = gateway.complete(req)
        except CredentialError:
            raise
        except (GatewayError, ValueError) as exc:
            return PredictionRecord(instance_ids[i], req.digest(), "", UNPARSEABLE, cfg.mode, "error",
                                    0.0, 0, error=str(exc))
        return PredictionRecord(instance_ids[i], req.digest(), c.text, parse_label(c.text), cfg.mode,
                                c.source, c.latency, c.attempts)

    try:
        with ThreadPoolExecutor(max_workers=cfg.max_in_flight) as pool:
            # map preserves input order whatever the completion order
            return list(pool.map(run, range(len(requests))))
    finally:
        if own:
            gateway.close()


def labels_for_metrics(records: Sequence[PredictionRecord], policy: str = "strict",
                       max_unparseable: float = 0.01) -> tuple[list[int], list[int]]:
    """Apply the unparseable policy; returns (kept positions, labels).

    ``strict`` drops unparseable records and fails if they exceed ``max_unparseable``
    of the batch; ``lenient`` maps them to 0 (deny credit).
    """
    if policy not in ("strict", "lenient"):
        raise ValueError(f"unknown unparseable policy {policy!r}")
    bad = [i for i, r in enumerate(records) if r.unparseable]
    if policy == "lenient":
        return list(range(len(records))), [0 if r.unparseable else int(r.parsed_label) for r in records]
    if len(bad) > max_unparseable * len(records):
        raise GatewayError(f"{len(bad)} of {len(records)} completions unparseable (strict policy)")
    kept = [i for i, r in enumerate(records) if not r.unparseable]
    return kept, [int(records[i].parsed_label) for i in kept]
