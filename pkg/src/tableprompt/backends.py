"""Model backends and parsers for model output.

A backend answers two kinds of request: ``complete`` (prompt in, text out)
and ``rank`` (items in, a permutation of them out). Mocks answer from gold
data; :class:`HttpBackend` talks to a completion server and turns ``rank``
into ``complete`` plus :func:`parse_ranked_list`.
"""
from __future__ import annotations

import logging
import os
import re
import threading
import time
from dataclasses import dataclass
from typing import Callable, Mapping, Protocol, Sequence

import httpx

from .rng import SplitMix64, derive_seed
from .tally import WarningTally, note

log = logging.getLogger(__name__)

NOTA = "none of the above"


class BackendError(RuntimeError):
    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class OracleBackend(Protocol):
    def complete(
        self,
        prompt: str,
        max_tokens: int,
        *,
        instance_id: str | None = None,
        options: Sequence[str] | None = None,
    ) -> str: ...

    def rank(self, items: Sequence[str], context: str = "", *, instance_id: str | None = None) -> list[str]: ...


def format_choice(labels: Sequence[str]) -> str:
    """Comma-joined labels with a trailing period, as the training responses are written."""
    return ", ".join(labels) + "."


def format_ranking(items: Sequence[str]) -> str:
    return ", ".join(f"<{item}>" for item in items)


def _norm(text: str) -> str:
    text = text.strip()
    if text.endswith("."):
        text = text[:-1].rstrip()
    if text.startswith("<") and text.endswith(">"):
        text = text[1:-1]
    return " ".join(text.split()).casefold()


def parse_multilabel(response: str, options: Sequence[str], tally: WarningTally | None = None) -> set[str]:
    """Options named in a comma-separated model answer.

    Matching is case-insensitive after trimming whitespace, one trailing
    period and enclosing ``<>``. Options that themselves contain commas are
    recovered by trying the longest run of fragments first. Fragments that
    match nothing are dropped and counted in ``tally``.
    """
    lookup: dict[str, str] = {}
    for option in options:
        lookup.setdefault(_norm(option), option)
    if not response.strip():
        return set()
    whole = _norm(response)
    if whole in lookup:
        return {lookup[whole]}

    frags = response.split(",")
    found: set[str] = set()
    unmatched: list[str] = []
    i = 0
    while i < len(frags):
        for j in range(len(frags), i, -1):
            key = _norm(",".join(frags[i:j]))
            if key in lookup:
                found.add(lookup[key])
                i = j
                break
        else:
            if _norm(frags[i]):
                unmatched.append(frags[i].strip())
            i += 1
    if unmatched:
        note(tally, "unmatched-label", f"dropped {len(unmatched)} unmatched fragment(s): {unmatched[:3]}", len(unmatched))
    return found


_ANGLED = re.compile(r"<([^<>]*)>")


def parse_ranked_list(response: str, candidates: Sequence[str], tally: WarningTally | None = None) -> list[str]:
    """A full permutation of ``candidates`` ordered as the ``<...>`` items in
    ``response``; unmentioned candidates follow in their original order."""
    lookup: dict[str, str] = {}
    for cand in candidates:
        lookup.setdefault(" ".join(cand.split()).casefold(), cand)
    seen: set[str] = set()
    out: list[str] = []
    unmatched = 0
    for raw in _ANGLED.findall(response):
        cand = lookup.get(" ".join(raw.split()).casefold())
        if cand is None:
            unmatched += 1
        elif cand not in seen:
            seen.add(cand)
            out.append(cand)
    if unmatched:
        note(tally, "unmatched-rank-item", f"dropped {unmatched} unknown ranked item(s)", unmatched)
    out.extend(c for c in candidates if c not in seen and not seen.add(c))
    return out


def mock_rank(items: Sequence[str], relevance: Mapping[str, float], noise: float = 0.0, seed: int = 0) -> list[str]:
    """Sort by descending score (stable), then swap each disjoint adjacent
    pair (0,1), (2,3), ... with probability ``noise``."""
    missing = [item for item in items if item not in relevance]
    if missing:
        raise ValueError(f"no relevance score for {missing[:3]}")
    ranked = sorted(items, key=lambda item: -relevance[item])
    if noise > 0:
        rng = SplitMix64(seed)
        for i in range(0, len(ranked) - 1, 2):
            if rng.random() < noise:
                ranked[i], ranked[i + 1] = ranked[i + 1], ranked[i]
    return ranked


class MockOracle:
    """Answers from known gold data.

    ``complete`` with ``options`` echoes the instance's gold labels present
    among them (or the none-of-the-above token); without options it returns
    the first gold answer. ``rank`` scores items by ``relevance``, or by
    position in the instance's gold list when that is known. With
    ``noise`` > 0 each ranking gets seeded adjacent swaps; the noise stream
    is derived from ``seed`` and the items, so results do not depend on
    call order.
    """

    def __init__(
        self,
        gold: Mapping[str, Sequence[str]] | None = None,
        relevance: Mapping[str, float] | None = None,
        noise: float = 0.0,
        seed: int = 0,
        nota: str = NOTA,
    ):
        if not 0.0 <= noise <= 1.0:
            raise ValueError("noise must lie in [0, 1]")
        self.gold = dict(gold or {})
        self.relevance = dict(relevance or {})
        self.noise = noise
        self.seed = seed
        self.nota = nota
        self.calls = 0
        self._lock = threading.Lock()

    def _count(self) -> None:
        with self._lock:
            self.calls += 1

    def complete(self, prompt, max_tokens, *, instance_id=None, options=None) -> str:
        self._count()
        gold = self.gold.get(instance_id, ())
        if options is None:
            return gold[0] if gold else ""
        wanted = set(gold)
        picks = [o for o in options if o in wanted and o != self.nota]
        return format_choice(picks or [self.nota])

    def scores(self, items: Sequence[str], instance_id: str | None = None) -> Mapping[str, float]:
        gold = self.gold.get(instance_id)
        if gold is None:
            return self.relevance
        n = len(gold)
        graded = {g: float(n - i) for i, g in enumerate(gold)}
        return {item: graded.get(item, self.relevance.get(item, 0.0)) for item in items}

    def rank(self, items, context="", *, instance_id=None) -> list[str]:
        self._count()
        seed = derive_seed(self.seed, *items) if self.noise else 0
        return mock_rank(list(items), self.scores(items, instance_id), self.noise, seed)


@dataclass(frozen=True)
class EndpointConfig:
    url: str
    token: str | None = None
    timeout: float = 60.0
    attempts: int = 3
    backoff: float = 0.5
    max_in_flight: int = 8
    openai: bool = False
    model: str | None = None

    @classmethod
    def from_env(cls, env: Mapping[str, str] | None = None, **overrides) -> "EndpointConfig":
        """Read ``TABLEPROMPT_ENDPOINT``, ``TABLEPROMPT_TOKEN`` and
        ``TABLEPROMPT_TIMEOUT``; keyword overrides win."""
        env = os.environ if env is None else env
        values = {}
        if env.get("TABLEPROMPT_ENDPOINT"):
            values["url"] = env["TABLEPROMPT_ENDPOINT"]
        if env.get("TABLEPROMPT_TOKEN"):
            values["token"] = env["TABLEPROMPT_TOKEN"]
        if env.get("TABLEPROMPT_TIMEOUT"):
            values["timeout"] = float(env["TABLEPROMPT_TIMEOUT"])
        values.update({k: v for k, v in overrides.items() if v is not None})
        if "url" not in values:
            raise BackendError("no endpoint configured (set TABLEPROMPT_ENDPOINT)")
        return cls(**values)


def _request_body(config: EndpointConfig, prompt: str, max_tokens: int) -> dict:
    body = {"prompt": prompt, "max_tokens": max_tokens}
    if config.openai and config.model:
        body["model"] = config.model
    return body


def _response_text(config: EndpointConfig, payload) -> str:
    try:
        text = payload["choices"][0]["text"] if config.openai else payload["text"]
    except (KeyError, IndexError, TypeError):
        text = None
    if not isinstance(text, str):
        raise BackendError("malformed response body: no text field")
    return text


def http_complete(
    config: EndpointConfig,
    prompt: str,
    max_tokens: int,
    *,
    client: httpx.Client | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> str:
    """POST one completion request, retrying transport errors, 429 and 5xx
    with exponential backoff up to ``config.attempts`` tries."""
    own = client is None
    if own:
        client = httpx.Client(timeout=config.timeout)
    headers = {"Authorization": f"Bearer {config.token}"} if config.token else {}
    try:
        last_status: int | None = None
        for attempt in range(config.attempts):
            if attempt:
                sleep(config.backoff * 2 ** (attempt - 1))
            try:
                resp = client.post(config.url, json=_request_body(config, prompt, max_tokens), headers=headers)
            except httpx.TransportError as exc:
                log.warning("attempt %d/%d failed: %s", attempt + 1, config.attempts, exc)
                last_status = None
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                log.warning("attempt %d/%d got HTTP %d", attempt + 1, config.attempts, resp.status_code)
                last_status = resp.status_code
                continue
            if not resp.is_success:
                raise BackendError(f"HTTP {resp.status_code} from {config.url}", resp.status_code)
            try:
                payload = resp.json()
            except ValueError:
                raise BackendError("malformed response body: not JSON", resp.status_code) from None
            return _response_text(config, payload)
        raise BackendError(
            f"request failed after {config.attempts} attempts (last status {last_status})", last_status
        )
    finally:
        if own:
            client.close()


class HttpBackend:
    """Completion-server backend with a bound on concurrent requests."""

    def __init__(
        self,
        config: EndpointConfig,
        *,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
        rank_max_tokens: int = 512,
    ):
        self.config = config
        self.client = httpx.Client(timeout=config.timeout, transport=transport)
        self.sleep = sleep
        self.rank_max_tokens = rank_max_tokens
        self._slots = threading.BoundedSemaphore(config.max_in_flight)
        self.tally = WarningTally()

    def complete(self, prompt, max_tokens, *, instance_id=None, options=None) -> str:
        with self._slots:
            return http_complete(self.config, prompt, max_tokens, client=self.client, sleep=self.sleep)

    def rank(self, items, context="", *, instance_id=None) -> list[str]:
        """``context`` is the full prompt listing ``items`` as candidates."""
        return parse_ranked_list(self.complete(context, self.rank_max_tokens), items, self.tally)

    def close(self) -> None:
        self.client.close()
