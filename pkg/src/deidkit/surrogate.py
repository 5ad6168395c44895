"""Replacement of PHI spans with realistic fake values.

Replacements are a pure function of (document, seed, lexicons): the random
stream is keyed by sha256 over (seed, doc id, tag, normalized surface), so
runs are reproducible across processes and parallel schedules, and repeated
occurrences of an entity within a document always co-replace.

Dates are shifted on the calendar with the original textual format kept
(separator, digit padding, month spelling). ID and CONTACT values keep their
character classes: digits become digits, letters become letters of the same
case, punctuation stays. Names, cities and hospitals are drawn from packaged
lexicons. Minute offsets only apply to surfaces that carry a clock time.
"""

from __future__ import annotations

import hashlib
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from importlib import resources
from pathlib import Path
from typing import Optional

from .core import Corpus, DeidError, Document, EntitySpan

AGE_PRESERVE = "preserve"
AGE_JITTER = "jitter"

# tags whose replacement comes from a lexicon (surface must contain letters)
_LEXICON_TAGS = {
    "PATIENT": "person_names.txt",
    "DOCTOR": "person_names.txt",
    "LOCATION": "cities.txt",
    "HOSPITAL": "hospitals.txt",
}

_TITLE_RE = re.compile(r"^((?:Dr|Prof|Mr|Mrs|Ms)\.?\s+)", re.IGNORECASE)


class UnparseableDate(DeidError):
    """A DATE surface outside the supported formats."""


class MissingLexicon(DeidError):
    """A lexicon path that does not exist or holds no entries."""


class PlanIncomplete(DeidError):
    """apply_surrogates found a non-OTHERS entity the plan does not cover."""


@dataclass(frozen=True)
class SurrogateConfig:
    seed: int = 0
    date_offset_days: int = 0
    time_offset_minutes: int = 0
    locale_lexicons: dict = field(default_factory=dict)  # tag -> file path
    age_policy: str = AGE_PRESERVE  # preserve | jitter
    age_jitter_years: int = 0

    def __post_init__(self) -> None:
        if not -(2**63) <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")
        if self.age_policy not in (AGE_PRESERVE, AGE_JITTER):
            raise ValueError(f"bad age_policy {self.age_policy!r}")
        if self.age_jitter_years < 0:
            raise ValueError("age_jitter_years must be >= 0")


def normalize_surface(surface: str) -> str:
    """Consistency key: whitespace collapsed, case folded. "RAHUL  KUMAR"
    and "Rahul Kumar" in one note must co-replace."""
    return " ".join(surface.split()).casefold()


@dataclass(frozen=True)
class SurrogatePlan:
    """Per-document replacement table.

    `bindings` maps (normalized surface, tag) to the replacement string;
    `passthrough` lists keys deliberately kept verbatim (preserved ages,
    surfaces with no replaceable characters). `audit` records fallbacks."""

    doc_id: str
    bindings: dict
    passthrough: frozenset = frozenset()
    audit: tuple = ()

    def __post_init__(self) -> None:
        for (nsurface, tag), rep in self.bindings.items():
            if normalize_surface(rep) == nsurface:
                raise ValueError(
                    f"plan for {self.doc_id!r} maps ({nsurface!r}, {tag}) to itself"
                )

    def covers(self, ent: EntitySpan) -> bool:
        key = (normalize_surface(ent.surface), ent.tag)
        return key in self.bindings or key in self.passthrough


# --- deterministic keyed byte stream -------------------------------------

class _KeyedStream:
    """Unbounded deterministic byte stream from a sha256-chained key."""

    def __init__(self, *parts) -> None:
        self._block = hashlib.sha256("|".join(str(p) for p in parts).encode()).digest()
        self._pos = 0

    def byte(self) -> int:
        if self._pos >= len(self._block):
            self._block = hashlib.sha256(self._block).digest()
            self._pos = 0
        b = self._block[self._pos]
        self._pos += 1
        return b

    def index(self, n: int) -> int:
        # 8 bytes give a negligible modulo bias for lexicon-sized n
        value = int.from_bytes(bytes(self.byte() for _ in range(8)), "big")
        return value % n


_LOWER = "abcdefghijklmnopqrstuvwxyz"
_UPPER = _LOWER.upper()
_DIGITS = "0123456789"


def _class_preserving(surface: str, stream: _KeyedStream) -> str:
    out = []
    for ch in surface:
        if ch.isdigit():
            out.append(_DIGITS[stream.byte() % 10])
        elif ch.isalpha():
            pool = _UPPER if ch.isupper() else _LOWER
            out.append(pool[stream.byte() % 26])
        else:
            out.append(ch)
    return "".join(out)


def _has_replaceable(surface: str) -> bool:
    return any(ch.isdigit() or ch.isalpha() for ch in surface)


# --- date parsing with format memory -------------------------------------

_MONTH_FULL = (
    "January", "February", "March", "April", "May", "June",
    "July", "August", "September", "October", "November", "December",
)
_MONTH_INDEX = {name.lower(): i + 1 for i, name in enumerate(_MONTH_FULL)}
_MONTH_INDEX.update({name[:3].lower(): i + 1 for i, name in enumerate(_MONTH_FULL)})

_TIME_TAIL = r"(?:(?P<tsep>[ T])(?P<hh>\d{1,2}):(?P<mm>\d{2})(?::(?P<ss>\d{2}))?)?"
_DMY_NUM_RE = re.compile(r"^(?P<d>\d{1,2})(?P<sep>[-/.])(?P<m>\d{1,2})(?P=sep)(?P<y>\d{4})" + _TIME_TAIL + "$")
_YMD_NUM_RE = re.compile(r"^(?P<y>\d{4})-(?P<m>\d{1,2})-(?P<d>\d{1,2})" + _TIME_TAIL + "$")
_DMY_TEXT_RE = re.compile(r"^(?P<d>\d{1,2})\s+(?P<mon>[A-Za-z]{3,9})\s+(?P<y>\d{4})" + _TIME_TAIL + "$")


@dataclass(frozen=True)
class _DateShape:
    order: str  # dmy_num | ymd_num | dmy_text
    sep: str = "-"
    day_pad: bool = True
    month_pad: bool = True
    month_full: bool = False  # textual month: full name vs 3-letter
    month_case: str = "title"  # title | upper | lower
    time_sep: str = ""
    hour_pad: bool = True
    has_seconds: bool = False
    has_time: bool = False


def _month_style(token: str) -> tuple[bool, str]:
    case = "upper" if token.isupper() else "lower" if token.islower() else "title"
    return len(token) > 3, case


def parse_date_text(text: str) -> tuple[datetime, _DateShape]:
    """Parse day-first numeric, ISO, or day-month-name forms, remembering
    enough of the layout to re-render a shifted date identically styled."""
    s = text.strip()
    for order, pat in (("dmy_num", _DMY_NUM_RE), ("ymd_num", _YMD_NUM_RE), ("dmy_text", _DMY_TEXT_RE)):
        m = pat.match(s)
        if m is None:
            continue
        g = m.groupdict()
        if order == "dmy_text":
            month = _MONTH_INDEX.get(g["mon"].lower())
            if month is None:
                raise UnparseableDate(f"unknown month {g['mon']!r} in {text!r}")
            month_full, month_case = _month_style(g["mon"])
            sep, month_pad = " ", False
        else:
            month = int(g["m"])
            month_full, month_case = False, "title"
            sep = g.get("sep") or "-"
            month_pad = len(g["m"]) == 2
        try:
            dt = datetime(
                int(g["y"]), month, int(g["d"]),
                int(g["hh"]) if g.get("hh") else 0,
                int(g["mm"]) if g.get("mm") else 0,
                int(g["ss"]) if g.get("ss") else 0,
            )
        except ValueError as exc:
            raise UnparseableDate(f"{text!r}: {exc}") from exc
        shape = _DateShape(
            order=order,
            sep=sep,
            day_pad=len(g["d"]) == 2,
            month_pad=month_pad,
            month_full=month_full,
            month_case=month_case,
            time_sep=g.get("tsep") or "",
            hour_pad=len(g["hh"]) == 2 if g.get("hh") else True,
            has_seconds=bool(g.get("ss")),
            has_time=bool(g.get("hh")),
        )
        return dt, shape
    raise UnparseableDate(f"unsupported date format: {text!r}")


def _render_month_name(month: int, shape: _DateShape) -> str:
    name = _MONTH_FULL[month - 1]
    if not shape.month_full:
        name = name[:3]
    if shape.month_case == "upper":
        return name.upper()
    if shape.month_case == "lower":
        return name.lower()
    return name


def render_date(dt: datetime, shape: _DateShape) -> str:
    day = f"{dt.day:02d}" if shape.day_pad else str(dt.day)
    year = f"{dt.year:04d}"
    if shape.order == "dmy_text":
        body = f"{day} {_render_month_name(dt.month, shape)} {year}"
    else:
        month = f"{dt.month:02d}" if shape.month_pad else str(dt.month)
        if shape.order == "ymd_num":
            body = f"{year}-{month}-{day}"
        else:
            body = f"{day}{shape.sep}{month}{shape.sep}{year}"
    if shape.has_time:
        hour = f"{dt.hour:02d}" if shape.hour_pad else str(dt.hour)
        body += f"{shape.time_sep}{hour}:{dt.minute:02d}"
        if shape.has_seconds:
            body += f":{dt.second:02d}"
    return body


def shift_date_text(text: str, days: int = 0, minutes: int = 0) -> str:
    """Shift a date surface on the calendar, keeping its textual layout.
    Minute offsets apply only when the surface carries a time of day."""
    dt, shape = parse_date_text(text)
    dt = dt + timedelta(days=days, minutes=minutes if shape.has_time else 0)
    return render_date(dt, shape)


# --- lexicons -------------------------------------------------------------

_lexicon_cache: dict = {}


def load_lexicon(source: str) -> tuple[str, ...]:
    """`source` is either a packaged lexicon filename or a filesystem path."""
    if source in _lexicon_cache:
        return _lexicon_cache[source]
    packaged = resources.files("deidkit.data.lexicons").joinpath(source)
    if "/" not in source and packaged.is_file():
        raw = packaged.read_text(encoding="utf-8")
    else:
        p = Path(source)
        if not p.is_file():
            raise MissingLexicon(f"lexicon not found: {source}")
        raw = p.read_text(encoding="utf-8")
    entries = tuple(
        line.strip() for line in raw.splitlines()
        if line.strip() and not line.lstrip().startswith("#")
    )
    if not entries:
        raise MissingLexicon(f"lexicon is empty: {source}")
    _lexicon_cache[source] = entries
    return entries


def _lexicon_for(tag: str, cfg: SurrogateConfig) -> tuple[str, ...]:
    source = cfg.locale_lexicons.get(tag, _LEXICON_TAGS.get(tag))
    if source is None:
        raise MissingLexicon(f"no lexicon configured for tag {tag}")
    return load_lexicon(source)


# --- planning and application ---------------------------------------------

_AGE_RE = re.compile(r"^\d{1,3}$")


def _replace_age(surface: str, cfg: SurrogateConfig, stream: _KeyedStream) -> Optional[str]:
    """None means keep the age as is (the preserve policy, or jitter that
    cannot produce a different non-negative age)."""
    if cfg.age_policy == AGE_PRESERVE or cfg.age_jitter_years == 0:
        return None
    if not _AGE_RE.match(surface.strip()):
        return _class_preserving(surface, stream)
    age = int(surface)
    k = cfg.age_jitter_years
    candidates = [a for a in range(max(age - k, 0), age + k + 1) if a != age]
    if not candidates:
        return None
    return str(candidates[stream.index(len(candidates))])


def _draw_distinct(surface: str, pool: tuple[str, ...], stream: _KeyedStream) -> Optional[str]:
    """Pick a pool entry different from `surface` (normalized comparison);
    None when the pool cannot supply one."""
    target = normalize_surface(surface)
    start = stream.index(len(pool))
    for step in range(len(pool)):
        candidate = pool[(start + step) % len(pool)]
        if normalize_surface(candidate) != target:
            return candidate
    return None


def _replace_name_like(surface: str, tag: str, cfg: SurrogateConfig,
                       stream: _KeyedStream) -> Optional[str]:
    if not any(ch.isalpha() for ch in surface):
        # pin codes and similar digit-only spans under LOCATION
        return _class_preserving(surface, stream)
    pool = _lexicon_for(tag, cfg)
    title = _TITLE_RE.match(surface)
    prefix = title.group(1) if title and tag in ("DOCTOR", "PATIENT") else ""
    drawn = _draw_distinct(surface, pool, stream)
    if drawn is None:
        return None
    candidate = prefix + drawn
    if normalize_surface(candidate) == normalize_surface(surface):
        return None
    return candidate


def plan_surrogates(doc: Document, cfg: SurrogateConfig) -> SurrogatePlan:
    """One replacement decision per distinct (normalized surface, tag) pair
    among the document's non-OTHERS entities."""
    bindings: dict = {}
    passthrough: set = set()
    audit: list[str] = []
    for ent in doc.entities:
        if ent.tag == "OTHERS":
            continue
        nsurface = normalize_surface(ent.surface)
        key = (nsurface, ent.tag)
        if key in bindings or key in passthrough:
            continue
        if not _has_replaceable(ent.surface):
            passthrough.add(key)
            audit.append(f"no_replaceable_chars:{ent.tag}:{nsurface}")
            continue

        replacement: Optional[str] = None
        salt = 0
        while True:
            stream = _KeyedStream(cfg.seed, doc.id, ent.tag, nsurface, salt)
            if ent.tag == "DATE":
                try:
                    replacement = shift_date_text(
                        ent.surface, cfg.date_offset_days, cfg.time_offset_minutes
                    )
                    if normalize_surface(replacement) == nsurface:
                        # zero offset; fall through to class replacement
                        if salt == 0:
                            audit.append(f"date_zero_shift:{nsurface}")
                        replacement = _class_preserving(ent.surface, stream)
                except (UnparseableDate, OverflowError):
                    if salt == 0:
                        audit.append(f"unparseable_date:{nsurface}")
                    replacement = _class_preserving(ent.surface, stream)
            elif ent.tag == "AGE":
                replacement = _replace_age(ent.surface, cfg, stream)
                if replacement is None:
                    passthrough.add(key)
                    break
            elif ent.tag in _LEXICON_TAGS:
                replacement = _replace_name_like(ent.surface, ent.tag, cfg, stream)
                if replacement is None:
                    passthrough.add(key)
                    audit.append(f"lexicon_exhausted:{ent.tag}:{nsurface}")
                    break
            else:
                # ID, CONTACT, and any unexpected tag: keep character classes
                replacement = _class_preserving(ent.surface, stream)
            if normalize_surface(replacement) != nsurface:
                bindings[key] = replacement
                break
            salt += 1  # rare: re-key until the surfaces differ

    return SurrogatePlan(
        doc_id=doc.id,
        bindings=bindings,
        passthrough=frozenset(passthrough),
        audit=tuple(audit),
    )


def apply_surrogates(doc: Document, plan: SurrogatePlan) -> Document:
    """Rewrite the text with the planned replacements; entity offsets are
    recomputed and non-entity text is untouched."""
    for ent in doc.entities:
        if ent.tag != "OTHERS" and not plan.covers(ent):
            raise PlanIncomplete(
                f"doc {doc.id!r}: no plan entry for ({ent.surface!r}, {ent.tag})"
            )
    parts: list[str] = []
    out_len = 0
    cursor = 0
    new_entities: list[EntitySpan] = []
    for ent in doc.entities:
        gap = doc.text[cursor : ent.start]
        parts.append(gap)
        out_len += len(gap)
        key = (normalize_surface(ent.surface), ent.tag)
        if ent.tag == "OTHERS" or key in plan.passthrough:
            rep = ent.surface
        else:
            rep = plan.bindings[key]
        parts.append(rep)
        new_entities.append(EntitySpan(start=out_len, end=out_len + len(rep),
                                       tag=ent.tag, surface=rep))
        out_len += len(rep)
        cursor = ent.end
    parts.append(doc.text[cursor:])
    return replace(doc, text="".join(parts), entities=tuple(new_entities))


REDACT = "redact"
SURROGATE = "surrogate"


def scrub(doc: Document, mode: str = SURROGATE,
          cfg: Optional[SurrogateConfig] = None) -> Document:
    """redact: replace non-OTHERS spans with "[TAG]" literals.
    surrogate: plan_surrogates + apply_surrogates under `cfg`."""
    if mode == REDACT:
        parts: list[str] = []
        out_len = 0
        cursor = 0
        new_entities: list[EntitySpan] = []
        for ent in doc.entities:
            gap = doc.text[cursor : ent.start]
            parts.append(gap)
            out_len += len(gap)
            rep = ent.surface if ent.tag == "OTHERS" else f"[{ent.tag}]"
            parts.append(rep)
            new_entities.append(EntitySpan(start=out_len, end=out_len + len(rep),
                                           tag=ent.tag, surface=rep))
            out_len += len(rep)
            cursor = ent.end
        parts.append(doc.text[cursor:])
        return replace(doc, text="".join(parts), entities=tuple(new_entities))
    if mode == SURROGATE:
        if cfg is None:
            cfg = SurrogateConfig()
        return apply_surrogates(doc, plan_surrogates(doc, cfg))
    raise ValueError(f"bad scrub mode {mode!r}")


def scrub_corpus(corpus: Corpus, mode: str = SURROGATE,
                 cfg: Optional[SurrogateConfig] = None,
                 max_workers: int = 1) -> Corpus:
    """Per-document scrub; parallel schedules cannot change the output
    because every replacement is keyed by (seed, doc id, tag, surface)."""
    if max_workers <= 1:
        docs = [scrub(doc, mode, cfg) for doc in corpus]
    else:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            docs = list(pool.map(lambda d: scrub(d, mode, cfg), corpus))
    return Corpus(documents=tuple(docs), schema=corpus.schema)
