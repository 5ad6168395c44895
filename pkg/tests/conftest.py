import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "suite",
    deadline=None,
    max_examples=50,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")

from deidkit.core import CANONICAL_SCHEMA, Corpus, Document, EntitySpan


@pytest.fixture(scope="session")
def mock_cmd() -> str:
    return f"{sys.executable} -m deidkit.mock_backend"


@pytest.fixture()
def sample_doc() -> Document:
    text = ("Patient Asha Rao, aged 42, seen on 25-08-2023 at KIMS Hospital. "
            "CRNO: 483920. Phone: 9876543210. Reviewed by Dr. Verma.")
    ents = (
        EntitySpan(8, 16, "PATIENT", "Asha Rao"),
        EntitySpan(23, 25, "AGE", "42"),
        EntitySpan(35, 45, "DATE", "25-08-2023"),
        EntitySpan(49, 62, "HOSPITAL", "KIMS Hospital"),
        EntitySpan(70, 76, "ID", "483920"),
        EntitySpan(85, 95, "CONTACT", "9876543210"),
        EntitySpan(109, 118, "DOCTOR", "Dr. Verma"),
    )
    return Document(id="d1", text=text, entities=ents)


@pytest.fixture()
def sample_corpus(sample_doc) -> Corpus:
    second = Document(
        id="d2",
        text="Transferred to Pune on 01-01-2024. Contact: dr.k@example.com.",
        entities=(
            EntitySpan(15, 19, "LOCATION", "Pune"),
            EntitySpan(23, 33, "DATE", "01-01-2024"),
            EntitySpan(44, 60, "CONTACT", "dr.k@example.com"),
        ),
    )
    return Corpus(documents=(sample_doc, second), schema=CANONICAL_SCHEMA)
