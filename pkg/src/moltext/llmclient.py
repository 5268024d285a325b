"""Text-only LLM access: providers, retry, record/replay, response parsing.

The pipeline talks to any completion endpoint through a single
text-in/text-out call, deliberately ignoring logits, token streams, and
function calls.  Every request/response can be appended to a replay log
keyed by the SHA-256 of the rendered prompt, and the replay provider
serves those logs back byte-identically so test runs never touch the
network.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

__all__ = [
    "LlmPrediction",
    "ProviderConfig",
    "ProviderError",
    "TransientProviderError",
    "TransportError",
    "CredentialError",
    "ParseEmptyError",
    "TextProvider",
    "CannedProvider",
    "MappingProvider",
    "FlakyProvider",
    "ReplayProvider",
    "RecordingProvider",
    "NetworkRefusingProvider",
    "HttpTextProvider",
    "query",
    "parse_response",
    "render_response",
    "prompt_sha256",
]


class ProviderError(RuntimeError):
    """Base class for provider-side failures."""


class TransientProviderError(ProviderError):
    """Retryable failure (timeouts, 5xx); raise this from providers."""


class TransportError(ProviderError):
    """All retries exhausted."""


class CredentialError(ProviderError):
    """Authentication failure; never retried."""


class ParseEmptyError(ProviderError):
    """Response yielded zero candidates; carries the raw text."""

    def __init__(self, raw: str):
        super().__init__(f"no candidates found in response ({len(raw)} chars)")
        self.raw = raw


@dataclass(frozen=True)
class LlmPrediction:
    ranked_smiles: tuple[str, ...]
    explanation: str
    raw: str
    provider_id: str


@dataclass(frozen=True)
class ProviderConfig:
    """Connection settings; holds the credential's env var NAME only.

    The secret itself is read from the environment at request time and
    never stored on this object, so configs are safe to log and echo.
    """

    endpoint: str = ""
    model: str = "stub"
    timeout: float = 30.0
    max_retries: int = 3
    temperature: float = 0.0
    credential_env: str | None = None


class TextProvider(Protocol):
    provider_id: str

    def complete(self, prompt: str) -> str: ...


def prompt_sha256(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


# ------------------------------------------------------------- providers


class CannedProvider:
    """Returns a fixed response regardless of prompt (tests, smoke runs)."""

    def __init__(self, response: str, provider_id: str = "canned"):
        self._response = response
        self.provider_id = provider_id

    def complete(self, prompt: str) -> str:
        return self._response


class MappingProvider:
    """Looks the query up in a reference table and answers in the expected
    response shape.

    The query is taken as the text after the LAST occurrence of
    ``query_marker`` in the prompt (the final block is the query by
    construction).  Unknown queries get the fallback response.
    """

    def __init__(
        self,
        mapping: Mapping[str, Sequence[str]],
        query_marker: str = "Description:",
        provider_id: str = "stub-llm",
        fallback: str = "1. C\nExplanation: query not in reference table.",
    ):
        self._mapping = dict(mapping)
        self._marker = query_marker
        self._fallback = fallback
        self.provider_id = provider_id

    def complete(self, prompt: str) -> str:
        at = prompt.rfind(self._marker)
        if at < 0:
            return self._fallback
        tail = prompt[at + len(self._marker):]
        # the query block ends at the answer label or end of prompt
        query = tail.split("\n", 1)[0].strip()
        candidates = self._mapping.get(query)
        if not candidates:
            return self._fallback
        lines = [f"{i}. {c}" for i, c in enumerate(candidates, start=1)]
        lines.append("Explanation: retrieved from the reference table.")
        return "\n".join(lines)


class FlakyProvider:
    """Fails the first n calls with a transient error, then delegates."""

    def __init__(self, inner: TextProvider, fail_times: int):
        self._inner = inner
        self._remaining = fail_times
        self.calls = 0
        self.provider_id = inner.provider_id

    def complete(self, prompt: str) -> str:
        self.calls += 1
        if self._remaining > 0:
            self._remaining -= 1
            raise TransientProviderError("synthetic transient failure")
        return self._inner.complete(prompt)


class ReplayProvider:
    """Serves recorded responses by prompt hash; zero network use."""

    def __init__(self, log_path: str | Path, provider_id: str = "replay"):
        self.provider_id = provider_id
        self._responses: dict[str, str] = {}
        path = Path(log_path)
        if not path.exists():
            raise ProviderError(f"replay log not found: {path}")
        for line in path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec.get("raw_response") is None:
                continue  # logged failed attempt
            self._responses.setdefault(rec["prompt_sha256"], rec["raw_response"])

    def complete(self, prompt: str) -> str:
        key = prompt_sha256(prompt)
        if key not in self._responses:
            raise ProviderError(f"replay miss for prompt hash {key}")
        return self._responses[key]


class RecordingProvider:
    """Wraps a provider and appends every response to a replay log."""

    def __init__(self, inner: TextProvider, log_path: str | Path):
        self._inner = inner
        self._log_path = Path(log_path)
        self.provider_id = inner.provider_id

    def complete(self, prompt: str) -> str:
        raw = self._inner.complete(prompt)
        _append_log(self._log_path, prompt, raw, self.provider_id)
        return raw


class NetworkRefusingProvider:
    """Installed wherever a live provider would go; any call is a bug."""

    provider_id = "network-refused"

    def complete(self, prompt: str) -> str:
        raise AssertionError(
            "network use refused: a test or offline run reached the live provider"
        )


class HttpTextProvider:
    """Minimal JSON-over-HTTP adapter for hosted completion endpoints.

    Request body: {"model", "prompt", "temperature"}; response body must
    carry the completion under "text".  The bearer token is read from the
    env var named in the config at call time and never stored.
    """

    def __init__(self, cfg: ProviderConfig, getenv: Callable[[str], str | None]):
        if not cfg.endpoint:
            raise ValueError("live provider needs an endpoint")
        if not cfg.credential_env:
            raise CredentialError("live provider needs a credential env var name")
        self._cfg = cfg
        self._getenv = getenv
        self.provider_id = f"http:{cfg.model}"

    def complete(self, prompt: str) -> str:
        secret = self._getenv(self._cfg.credential_env)
        if not secret:
            raise CredentialError(
                f"credential env var {self._cfg.credential_env} is not set"
            )
        body = json.dumps(
            {
                "model": self._cfg.model,
                "prompt": prompt,
                "temperature": self._cfg.temperature,
            }
        ).encode("utf-8")
        req = urllib.request.Request(
            self._cfg.endpoint,
            data=body,
            headers={
                "Content-Type": "application/json",
                "Authorization": f"Bearer {secret}",
            },
        )
        try:
            with urllib.request.urlopen(req, timeout=self._cfg.timeout) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
        except urllib.error.HTTPError as err:  # pragma: no cover - live only
            if err.code in (401, 403):
                raise CredentialError(f"authentication failed ({err.code})") from err
            raise TransientProviderError(f"HTTP {err.code}") from err
        except OSError as err:  # pragma: no cover - live only
            raise TransientProviderError(str(err)) from err
        if "text" not in payload:
            raise ProviderError("response body missing 'text' field")
        return str(payload["text"])


# ----------------------------------------------------------------- query


def _append_log(path: Path, prompt: str, raw: str | None, provider_id: str,
                error: str | None = None) -> None:
    rec = {
        "prompt_sha256": prompt_sha256(prompt),
        "raw_response": raw,
        "provider_id": provider_id,
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    if error is not None:
        rec["error"] = error
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", encoding="utf-8") as fh:
        fh.write(json.dumps(rec, sort_keys=True) + "\n")


def query(
    prompt: str,
    provider: TextProvider,
    cfg: ProviderConfig,
    log_path: str | Path | None = None,
    sleep_fn: Callable[[float], None] = time.sleep,
    jitter_rng: random.Random | None = None,
) -> str:
    """Send one prompt, retrying transient failures with backoff.

    Backoff before retry k is ``2**k + jitter`` seconds (base 1s, factor
    2, jitter uniform in [0, 1)).  Credential failures are never retried.
    Total attempts are capped at max(1, cfg.max_retries); exhaustion
    raises :class:`TransportError`.  Every attempt is appended to the
    replay log when one is given.
    """
    rendered = getattr(prompt, "rendered", prompt)
    jitter_rng = jitter_rng or random.Random()
    attempts = max(1, cfg.max_retries)
    last_error: Exception | None = None
    log = Path(log_path) if log_path is not None else None
    for attempt in range(attempts):
        try:
            raw = provider.complete(rendered)
        except CredentialError:
            raise
        except TransientProviderError as err:
            last_error = err
            if log is not None:
                _append_log(log, rendered, None, provider.provider_id, error=str(err))
            if attempt + 1 < attempts:
                sleep_fn(2.0 ** attempt + jitter_rng.random())
            continue
        if log is not None:
            _append_log(log, rendered, raw, provider.provider_id)
        return raw
    raise TransportError(
        f"provider {provider.provider_id} failed after {attempts} attempts: {last_error}"
    )


# ----------------------------------------------------------------- parse


_NUMBERED = re.compile(r"^\s*\d+[.)]\s*(.+?)\s*$")
_LABELLED = re.compile(r"^\s*SMILES\s*[:\-]\s*(.+?)\s*$", re.IGNORECASE)
_EXPLANATION = re.compile(r"^\s*explanation\b\s*[:\-]?\s*(.*)$", re.IGNORECASE)


def _clean_candidate(text: str) -> str:
    return text.strip().strip("`").strip()


def parse_response(raw: str, r_max: int, provider_id: str = "") -> LlmPrediction:
    """Extract up to r_max ranked candidates plus the explanation section.

    Candidates come from ``<rank>. <candidate>`` lines, ``SMILES: …``
    labels, or lines inside a code fence, in order of appearance with
    first-occurrence dedup.  Candidates are NOT validity-filtered here;
    validity is a metric, not a parser concern.
    """
    lines = raw.splitlines()
    candidates: list[str] = []
    explanation_parts: list[str] = []
    in_explanation = False
    in_fence = False
    for line in lines:
        if in_explanation:
            explanation_parts.append(line)
            continue
        m = _EXPLANATION.match(line)
        if m:
            in_explanation = True
            if m.group(1).strip():
                explanation_parts.append(m.group(1).strip())
            continue
        if line.strip().startswith("```"):
            in_fence = not in_fence
            continue
        if in_fence:
            cand = _clean_candidate(line)
            if cand:
                candidates.append(cand)
            continue
        m = _NUMBERED.match(line) or _LABELLED.match(line)
        if m:
            cand = _clean_candidate(m.group(1))
            if cand:
                candidates.append(cand)

    deduped: list[str] = []
    for cand in candidates:
        if cand not in deduped:
            deduped.append(cand)
        if len(deduped) == r_max:
            break
    if not deduped:
        raise ParseEmptyError(raw)
    return LlmPrediction(
        ranked_smiles=tuple(deduped),
        explanation="\n".join(explanation_parts).strip(),
        raw=raw,
        provider_id=provider_id,
    )


def render_response(prediction: LlmPrediction) -> str:
    """Render a prediction in the response shape parse_response expects."""
    lines = [f"{i}. {c}" for i, c in enumerate(prediction.ranked_smiles, start=1)]
    if prediction.explanation:
        lines.append(f"Explanation: {prediction.explanation}")
    return "\n".join(lines)
