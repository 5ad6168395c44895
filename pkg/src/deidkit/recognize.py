"""Span prediction backends.

Two kinds: a built-in regex/lexicon baseline, and a wire adapter for
external recognizers (model servers, cloud de-identification APIs, LLM
shims). The wire protocol is line-delimited JSON over HTTP POST or a
subprocess's standard streams:

    request   {"id": ..., "text": ..., "schema": [tags]}
    response  {"id": ..., "spans": [{"start", "end", "tag"}, ...]}
           or {"id": ..., "tokens": [{"surface", "start", "end", "label"}, ...]}
           or {"id": ..., "error": "..."}

Backend output never bypasses validation: a document whose response fails
any check is excluded with a recorded reason and the run continues.
"""

from __future__ import annotations

import json
import re
import shlex
import subprocess
import threading
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Optional, Sequence, Union

from .core import (
    CANONICAL_SCHEMA,
    Corpus,
    DeidError,
    Document,
    EntitySpan,
    InvalidBioSequence,
    TagSchema,
    Token,
    TokenSeq,
    bio_to_spans,
)

BUILTIN_RULES = "builtin_rules"
EXTERNAL = "external"


class InvalidPattern(DeidError):
    """A rulebook regex that does not compile."""


class ProtocolViolation(DeidError):
    """A backend response outside the wire protocol."""


class SpanOutOfRange(DeidError):
    """A predicted span that does not fit the request text."""


class BackendTimeout(DeidError):
    """No response within the configured timeout (after retries)."""


# --- builtin rule baseline -------------------------------------------------

@dataclass(frozen=True)
class Rule:
    tag: str
    pattern: re.Pattern

    def matches(self, text: str) -> Iterable[tuple[int, int]]:
        for m in self.pattern.finditer(text):
            group = 1 if self.pattern.groups else 0
            if m.group(group):
                yield m.start(group), m.end(group)


@dataclass(frozen=True)
class Rulebook:
    name: str
    rules: tuple  # of Rule, in declaration order
    priority: tuple  # tag order for tie-breaking
    lexicon_rules: tuple = ()  # of Rule built from lexicon alternations

    def all_rules(self) -> tuple:
        return self.rules + self.lexicon_rules


_FLAG_MAP = {"i": re.IGNORECASE, "m": re.MULTILINE, "s": re.DOTALL}


def _compile(tag: str, pattern: str, flags: str = "") -> Rule:
    value = 0
    for ch in flags:
        if ch not in _FLAG_MAP:
            raise InvalidPattern(f"unknown flag {ch!r} on {tag} pattern")
        value |= _FLAG_MAP[ch]
    try:
        return Rule(tag=tag, pattern=re.compile(pattern, value))
    except re.error as exc:
        raise InvalidPattern(f"{tag} pattern {pattern!r}: {exc}") from exc


def load_rulebook(path=None) -> Rulebook:
    """Load a rulebook JSON; default is the packaged baseline. Lexicon
    entries become case-insensitive whole-phrase alternation patterns."""
    if path is None:
        raw = (
            resources.files("deidkit.data").joinpath("rulebook.json")
            .read_text(encoding="utf-8")
        )
    else:
        from pathlib import Path

        raw = Path(path).read_text(encoding="utf-8")
    data = json.loads(raw)
    rules = tuple(
        _compile(p["tag"], p["pattern"], p.get("flags", "")) for p in data["patterns"]
    )
    from .surrogate import load_lexicon

    lexicon_rules = []
    for tag, source in data.get("lexicons", {}).items():
        entries = load_lexicon(source)
        alternation = "|".join(re.escape(e) for e in sorted(entries, key=len, reverse=True))
        lexicon_rules.append(_compile(tag, rf"\b(?:{alternation})\b", "i"))
    return Rulebook(
        name=data.get("name", "rulebook"),
        rules=rules,
        priority=tuple(data.get("priority", ())),
        lexicon_rules=tuple(lexicon_rules),
    )


_default_rulebook: Optional[Rulebook] = None


def default_rulebook() -> Rulebook:
    global _default_rulebook
    if _default_rulebook is None:
        _default_rulebook = load_rulebook()
    return _default_rulebook


def recognize_rules(text: str, rulebook: Optional[Rulebook] = None) -> list[EntitySpan]:
    """Run every rule and resolve overlaps: longest match wins, ties go to
    the earlier start, then to the rulebook's tag priority order."""
    book = rulebook if rulebook is not None else default_rulebook()
    prio = {tag: i for i, tag in enumerate(book.priority)}
    candidates = []
    for rule in book.all_rules():
        for start, end in rule.matches(text):
            candidates.append((end - start, start, end, rule.tag))
    candidates.sort(key=lambda c: (-c[0], c[1], prio.get(c[3], len(prio))))
    kept: list[EntitySpan] = []
    for _, start, end, tag in candidates:
        if any(k.start < end and start < k.end for k in kept):
            continue
        kept.append(EntitySpan(start=start, end=end, tag=tag, surface=text[start:end]))
    kept.sort(key=lambda s: s.start)
    return kept


# --- external backends -----------------------------------------------------

@dataclass(frozen=True)
class RecognizerBackend:
    kind: str = BUILTIN_RULES
    endpoint: str = ""  # http(s) URL or subprocess command line
    timeout_ms: int = 10_000
    retry: int = 0
    schema: TagSchema = CANONICAL_SCHEMA
    name: str = ""
    max_in_flight: int = 4

    def __post_init__(self) -> None:
        if self.kind not in (BUILTIN_RULES, EXTERNAL):
            raise ValueError(f"bad backend kind {self.kind!r}")
        if self.kind == EXTERNAL and not self.endpoint:
            raise ValueError("external backend needs an endpoint")
        if self.timeout_ms <= 0 or self.retry < 0 or self.max_in_flight < 1:
            raise ValueError("bad backend limits")

    @property
    def label(self) -> str:
        return self.name or (self.kind if self.kind == BUILTIN_RULES else self.endpoint)


@dataclass(frozen=True)
class Prediction:
    doc_id: str
    spans: tuple
    latency_ms: float = 0.0
    backend_name: str = ""


@dataclass
class ExternalRunResult:
    predictions: list = field(default_factory=list)
    excluded: list = field(default_factory=list)  # (doc_id, reason)
    retries: int = 0

    def as_pred_map(self) -> dict:
        return {p.doc_id: list(p.spans) for p in self.predictions}


class _HttpWire:
    def __init__(self, endpoint: str, timeout_ms: int) -> None:
        self.endpoint = endpoint
        self.timeout_s = timeout_ms / 1000.0

    def request(self, payload: dict) -> dict:
        body = json.dumps(payload, ensure_ascii=False).encode("utf-8")
        req = urllib.request.Request(
            self.endpoint, data=body, headers={"Content-Type": "application/json"}
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout_s) as resp:
                return json.loads(resp.read().decode("utf-8"))
        except TimeoutError as exc:
            raise BackendTimeout(str(exc)) from exc
        except urllib.error.URLError as exc:
            if isinstance(exc.reason, TimeoutError):
                raise BackendTimeout(str(exc)) from exc
            raise ProtocolViolation(f"http error: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ProtocolViolation(f"undecodable response: {exc}") from exc

    def close(self) -> None:
        pass


class _SubprocessWire:
    """One long-lived child process; requests go down stdin, responses come
    back on stdout in any order and are joined by id."""

    def __init__(self, command: str, timeout_ms: int) -> None:
        self.timeout_s = timeout_ms / 1000.0
        self.proc = subprocess.Popen(
            shlex.split(command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self._responses: dict = {}
        self._cond = threading.Condition()
        self._write_lock = threading.Lock()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_loop(self) -> None:
        assert self.proc.stdout is not None
        for line in self.proc.stdout:
            line = line.strip()
            if not line:
                continue
            try:
                resp = json.loads(line)
            except json.JSONDecodeError:
                resp = {"id": None, "error": f"undecodable line: {line[:80]}"}
            with self._cond:
                self._responses[resp.get("id")] = resp
                self._cond.notify_all()

    def request(self, payload: dict) -> dict:
        if self.proc.poll() is not None:
            raise ProtocolViolation("backend process exited")
        line = json.dumps(payload, ensure_ascii=False)
        with self._write_lock:
            assert self.proc.stdin is not None
            self.proc.stdin.write(line + "\n")
            self.proc.stdin.flush()
        deadline = time.monotonic() + self.timeout_s
        with self._cond:
            while payload["id"] not in self._responses:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise BackendTimeout(f"no response for {payload['id']!r}")
                self._cond.wait(remaining)
            return self._responses.pop(payload["id"])

    def close(self) -> None:
        try:
            if self.proc.stdin:
                self.proc.stdin.close()
            self.proc.terminate()
            self.proc.wait(timeout=5)
        except Exception:
            self.proc.kill()


def open_wire(backend: RecognizerBackend):
    if backend.endpoint.startswith(("http://", "https://")):
        return _HttpWire(backend.endpoint, backend.timeout_ms)
    return _SubprocessWire(backend.endpoint, backend.timeout_ms)


def align_token_predictions(token_records: Sequence[dict], text: str,
                            strict: bool = False) -> list[EntitySpan]:
    """Convert a token-labeled response into spans. Offsets are validated
    against the request text; BIO errors repair leniently unless strict."""
    toks = []
    labels = []
    for rec in token_records:
        surface, start, end = rec["surface"], rec["start"], rec["end"]
        if not (0 <= start < end <= len(text)) or text[start:end] != surface:
            raise SpanOutOfRange(f"token {surface!r} does not match text at {start}:{end}")
        toks.append(Token(surface, start, end))
        labels.append(rec["label"])
    seq = TokenSeq(tokens=tuple(toks), labels=tuple(labels))
    return bio_to_spans(seq, text, strict=strict)


def _validate_spans(doc: Document, raw_spans: Sequence[dict],
                    schema: TagSchema) -> tuple:
    spans = []
    for rec in raw_spans:
        start, end, tag = rec["start"], rec["end"], rec["tag"]
        if not (isinstance(start, int) and isinstance(end, int)):
            raise ProtocolViolation(f"non-integer offsets in {rec}")
        if not (0 <= start < end <= len(doc.text)):
            raise SpanOutOfRange(f"span {start}:{end} outside text of {len(doc.text)}")
        if tag not in schema:
            raise ProtocolViolation(f"tag {tag!r} outside backend schema {schema.name!r}")
        spans.append(EntitySpan(start=start, end=end, tag=tag, surface=doc.text[start:end]))
    spans.sort(key=lambda s: (s.start, s.end))
    for prev, cur in zip(spans, spans[1:]):
        if cur.start < prev.end:
            raise ProtocolViolation(f"overlapping spans {prev} / {cur}")
    return tuple(spans)


def _parse_response(doc: Document, resp: dict, schema: TagSchema) -> tuple:
    if not isinstance(resp, dict) or resp.get("id") != doc.id:
        raise ProtocolViolation(f"response id mismatch for {doc.id!r}")
    if "error" in resp:
        raise ProtocolViolation(f"backend_error: {resp['error']}")
    if "spans" in resp:
        return _validate_spans(doc, resp["spans"], schema)
    if "tokens" in resp:
        try:
            spans = align_token_predictions(resp["tokens"], doc.text)
        except (KeyError, TypeError, InvalidBioSequence) as exc:
            raise ProtocolViolation(f"bad token response: {exc}") from exc
        for span in spans:
            if span.tag not in schema:
                raise ProtocolViolation(f"tag {span.tag!r} outside backend schema")
        return tuple(spans)
    raise ProtocolViolation("response carries neither spans nor tokens")


def recognize_external(docs: Union[Corpus, Sequence[Document]],
                       backend: RecognizerBackend) -> ExternalRunResult:
    """One request per document with bounded concurrency; output order is
    input order regardless of completion order. #docs = #predictions +
    #excluded always holds."""
    doc_list = list(docs)
    result = ExternalRunResult()
    wire = open_wire(backend)
    lock = threading.Lock()

    def run_one(doc: Document):
        payload = {"id": doc.id, "text": doc.text, "schema": list(backend.schema.tags)}
        attempts = backend.retry + 1
        t0 = time.monotonic()
        last_exc: Optional[Exception] = None
        for attempt in range(attempts):
            if attempt:
                with lock:
                    result.retries += 1
            try:
                resp = wire.request(payload)
                spans = _parse_response(doc, resp, backend.schema)
                latency = (time.monotonic() - t0) * 1000.0
                return Prediction(doc_id=doc.id, spans=spans,
                                  latency_ms=latency, backend_name=backend.label), None
            except BackendTimeout as exc:
                last_exc = exc
                continue
            except (SpanOutOfRange, ProtocolViolation) as exc:
                return None, f"{type(exc).__name__}: {exc}"
        return None, f"BackendTimeout: {last_exc}"

    try:
        with ThreadPoolExecutor(max_workers=backend.max_in_flight) as pool:
            outcomes = list(pool.map(run_one, doc_list))
    finally:
        wire.close()
    for doc, (pred, reason) in zip(doc_list, outcomes):
        if pred is not None:
            result.predictions.append(pred)
        else:
            result.excluded.append((doc.id, reason))
    return result


def recognize_repeated(docs: Union[Corpus, Sequence[Document]],
                       backend: RecognizerBackend, repeats: int) -> list[ExternalRunResult]:
    """Fixed-repeat mode for nondeterministic backends: the same documents
    are submitted `repeats` times and per-repeat results are kept separate
    so variance can be reported."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    return [recognize_external(docs, backend) for _ in range(repeats)]


def recognize_corpus(corpus: Corpus, backend: RecognizerBackend,
                     rulebook: Optional[Rulebook] = None) -> ExternalRunResult:
    """Dispatch on backend kind; the builtin path never excludes a doc."""
    if backend.kind == BUILTIN_RULES:
        result = ExternalRunResult()
        for doc in corpus:
            t0 = time.monotonic()
            spans = recognize_rules(doc.text, rulebook)
            result.predictions.append(
                Prediction(doc_id=doc.id, spans=tuple(spans),
                           latency_ms=(time.monotonic() - t0) * 1000.0,
                           backend_name=backend.label)
            )
        return result
    return recognize_external(corpus, backend)
