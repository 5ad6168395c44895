import json
import socket
import subprocess
import sys
import threading
import time

import pytest

from deidkit.annot_io import write_jsonl
from deidkit.core import CANONICAL_SCHEMA, Corpus, Document, EntitySpan
from deidkit.recognize import (
    BUILTIN_RULES,
    EXTERNAL,
    BackendTimeout,
    InvalidPattern,
    RecognizerBackend,
    Rulebook,
    align_token_predictions,
    default_rulebook,
    load_rulebook,
    recognize_corpus,
    recognize_external,
    recognize_repeated,
    recognize_rules,
)


NOTE = ("Patient Asha Rao, CRNO: 483920, aged 42 years, phone 9876543210, "
        "email asha.rao@example.com, seen 25-08-2023 at 560001 Bengaluru.")


# --- rules -----------------------------------------------------------------

def test_rules_find_expected_classes():
    by_tag = {}
    for span in recognize_rules(NOTE):
        by_tag.setdefault(span.tag, []).append(span.surface)
    assert "483920" in by_tag["ID"]
    assert "42" in by_tag["AGE"]
    assert "9876543210" in by_tag["CONTACT"]
    assert "asha.rao@example.com" in by_tag["CONTACT"]
    assert "25-08-2023" in by_tag["DATE"]
    assert "560001" in by_tag["CONTACT"] or "560001" in by_tag.get("LOCATION", [])


def test_rules_doctor_pattern():
    spans = recognize_rules("Reviewed by Dr. Anil Kumar on rounds.")
    assert any(s.tag == "DOCTOR" and "Anil" in s.surface for s in spans)


def test_rules_output_sorted_and_disjoint():
    spans = recognize_rules(NOTE)
    for prev, cur in zip(spans, spans[1:]):
        assert prev.start <= cur.start
        assert prev.end <= cur.start


def test_rules_longest_match_wins():
    # the full date must not be carved into a bare number + fragments
    spans = recognize_rules("On 25-08-2023 exactly.")
    dates = [s for s in spans if s.tag == "DATE"]
    assert [d.surface for d in dates] == ["25-08-2023"]


def test_rules_empty_text():
    assert recognize_rules("") == []


def test_default_rulebook_cached():
    assert default_rulebook() is default_rulebook()


def test_load_rulebook_rejects_bad_pattern(tmp_path):
    path = tmp_path / "rules.json"
    path.write_text(json.dumps({
        "name": "broken", "priority": ["ID"],
        "patterns": [{"tag": "ID", "pattern": "(unclosed"}],
    }))
    with pytest.raises(InvalidPattern):
        load_rulebook(path)


def test_custom_rulebook(tmp_path):
    path = tmp_path / "rules.json"
    path.write_text(json.dumps({
        "name": "tiny", "priority": ["ID"],
        "patterns": [{"tag": "ID", "pattern": r"\\bX\\d{3}\\b"}],
    }).replace("\\\\", "\\"))
    rb = load_rulebook(path)
    spans = recognize_rules("codes X123 and X999", rb)
    assert [s.surface for s in spans] == ["X123", "X999"]


# --- token alignment -------------------------------------------------------

def test_align_token_predictions():
    text = "Asha Rao left"
    records = [
        {"surface": "Asha", "start": 0, "end": 4, "label": "B-PATIENT"},
        {"surface": "Rao", "start": 5, "end": 8, "label": "I-PATIENT"},
        {"surface": "left", "start": 9, "end": 13, "label": "O"},
    ]
    spans = align_token_predictions(records, text)
    assert [(s.start, s.end, s.tag) for s in spans] == [(0, 8, "PATIENT")]


def test_align_token_predictions_surface_mismatch():
    from deidkit.core import DeidError

    records = [{"surface": "XXXX", "start": 0, "end": 4, "label": "O"}]
    with pytest.raises(DeidError):
        align_token_predictions(records, "Asha Rao")


# --- external backends -----------------------------------------------------

@pytest.fixture()
def note_corpus():
    docs = tuple(
        Document(id=f"doc-{i}", text=NOTE, entities=()) for i in range(6)
    )
    return Corpus(documents=docs, schema=CANONICAL_SCHEMA)


def subprocess_backend(mock_cmd, tmp_path, script=None, gold=None, **kw):
    cmd = mock_cmd
    if script is not None:
        path = tmp_path / "script.json"
        path.write_text(json.dumps(script))
        cmd += f" --script {path}"
    if gold is not None:
        path = tmp_path / "gold.jsonl"
        path.write_text(write_jsonl(gold))
        cmd += f" --gold {path}"
    kw.setdefault("timeout_ms", 10_000)
    return RecognizerBackend(kind=EXTERNAL, endpoint=cmd, **kw)


def test_subprocess_round_trip(mock_cmd, tmp_path, note_corpus):
    backend = subprocess_backend(mock_cmd, tmp_path, gold=note_corpus)
    result = recognize_external(note_corpus, backend)
    assert len(result.predictions) == 6
    assert result.excluded == []
    assert [p.doc_id for p in result.predictions] == [d.id for d in note_corpus]


def test_subprocess_echoes_gold(mock_cmd, tmp_path):
    doc = Document(id="g1", text="Asha Rao visited.",
                   entities=(EntitySpan(0, 8, "PATIENT", "Asha Rao"),))
    corpus = Corpus(documents=(doc,), schema=CANONICAL_SCHEMA)
    backend = subprocess_backend(mock_cmd, tmp_path, gold=corpus)
    result = recognize_external(corpus, backend)
    assert result.predictions[0].spans == doc.entities


def test_conservation_docs_equals_preds_plus_excluded(mock_cmd, tmp_path, note_corpus):
    script = {"doc-1": "error", "doc-3": "oversize", "doc-4": "overlap"}
    backend = subprocess_backend(mock_cmd, tmp_path, script=script, gold=note_corpus)
    result = recognize_external(note_corpus, backend)
    assert len(result.predictions) + len(result.excluded) == len(note_corpus)
    reasons = dict(result.excluded)
    assert "backend_error" in reasons["doc-1"]
    assert reasons["doc-3"].startswith("SpanOutOfRange")
    assert "overlap" in reasons["doc-4"].lower()


def test_timeout_then_retry_succeeds(mock_cmd, tmp_path, note_corpus):
    # the first request for doc-2 is swallowed; the retry is answered
    script = {"doc-2": "drop_once"}
    backend = subprocess_backend(mock_cmd, tmp_path, script=script, gold=note_corpus,
                                 timeout_ms=700, retry=1)
    result = recognize_external(note_corpus, backend)
    assert result.excluded == []
    assert result.retries >= 1


def test_timeout_without_retry_excludes(mock_cmd, tmp_path, note_corpus):
    script = {"doc-2": "drop"}
    backend = subprocess_backend(mock_cmd, tmp_path, script=script, gold=note_corpus,
                                 timeout_ms=400, retry=0)
    result = recognize_external(note_corpus, backend)
    excluded_ids = [doc_id for doc_id, _ in result.excluded]
    assert excluded_ids == ["doc-2"]
    assert "BackendTimeout" in dict(result.excluded)["doc-2"]


def test_token_form_responses_align(mock_cmd, tmp_path):
    doc = Document(id="t1", text="Asha Rao visited Pune",
                   entities=(EntitySpan(0, 8, "PATIENT", "Asha Rao"),
                             EntitySpan(17, 21, "LOCATION", "Pune")))
    corpus = Corpus(documents=(doc,), schema=CANONICAL_SCHEMA)
    backend = subprocess_backend(mock_cmd, tmp_path, script={"t1": "token_form"},
                                 gold=corpus)
    result = recognize_external(corpus, backend)
    assert result.predictions[0].spans == doc.entities


def test_recognize_repeated_runs_isolated(mock_cmd, tmp_path, note_corpus):
    backend = subprocess_backend(mock_cmd, tmp_path, gold=note_corpus)
    runs = recognize_repeated(note_corpus, backend, repeats=3)
    assert len(runs) == 3
    texts = [[tuple(p.spans) for p in r.predictions] for r in runs]
    assert texts[0] == texts[1] == texts[2]


def test_http_round_trip(mock_cmd, tmp_path, note_corpus):
    gold_path = tmp_path / "gold.jsonl"
    gold_path.write_text(write_jsonl(note_corpus))
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    proc = subprocess.Popen(
        [sys.executable, "-m", "deidkit.mock_backend",
         "--gold", str(gold_path), "--http", str(port)],
        stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL,
    )
    try:
        deadline = time.monotonic() + 10
        while time.monotonic() < deadline:
            try:
                with socket.create_connection(("127.0.0.1", port), timeout=0.2):
                    break
            except OSError:
                time.sleep(0.05)
        backend = RecognizerBackend(kind=EXTERNAL,
                                    endpoint=f"http://127.0.0.1:{port}/",
                                    timeout_ms=5000, retry=2)
        result = recognize_external(note_corpus, backend)
        assert len(result.predictions) + len(result.excluded) == len(note_corpus)
        assert result.excluded == []
    finally:
        proc.terminate()
        proc.wait(timeout=5)


def test_recognize_corpus_builtin_never_excludes(note_corpus):
    backend = RecognizerBackend(kind=BUILTIN_RULES, name="rules")
    result = recognize_corpus(note_corpus, backend)
    assert result.excluded == []
    assert len(result.predictions) == len(note_corpus)
    assert result.predictions[0].backend_name == "rules"


def test_backend_label():
    assert RecognizerBackend(kind=BUILTIN_RULES).label == BUILTIN_RULES
    assert RecognizerBackend(kind=BUILTIN_RULES, name="rules").label == "rules"
    b = RecognizerBackend(kind=EXTERNAL, endpoint="http://x/")
    assert b.label == "http://x/"
