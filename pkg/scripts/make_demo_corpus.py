"""Build a small seeded discharge-summary corpus with gold entity spans.

Writes the same corpus as JSONL, CoNLL, and an inline-XML directory so the
other demo scripts (and quick CLI experiments) have fixture data to chew on.
"""

import argparse
import random
from pathlib import Path

from deidkit import CANONICAL_SCHEMA, Corpus, Document, EntitySpan, write_corpus

NAMES = ["Asha Rao", "Vikram Iyer", "Meera Joshi", "Rohan Gupta", "Divya Nair",
         "Arjun Menon", "Kavita Shah", "Sanjay Kulkarni"]
DOCTORS = ["Verma", "Krishnan", "Bhat", "Deshpande", "Pillai"]
HOSPITALS = ["KIMS Hospital", "City Care Centre", "Sunrise Clinic",
             "General Hospital Pune"]
CITIES = ["Pune", "Kochi", "Nagpur", "Mysore"]

TEMPLATE = ("Patient {name}, aged {age}, was admitted to {hospital} on "
            "{date}. CRNO: {crno}. Contact: {phone}. Transferred from "
            "{city}. Discharged after review by Dr. {doctor}.")


def synth_doc(rng: random.Random, doc_id: str) -> Document:
    fills = {
        "name": rng.choice(NAMES),
        "age": str(rng.randint(18, 90)),
        "hospital": rng.choice(HOSPITALS),
        "date": f"{rng.randint(1, 28):02d}-{rng.randint(1, 12):02d}-2023",
        "crno": str(rng.randint(100000, 999999)),
        "phone": str(rng.randint(6_000_000_000, 9_999_999_999)),
        "city": rng.choice(CITIES),
        "doctor": rng.choice(DOCTORS),
    }
    text = TEMPLATE.format(**fills)
    # fields in template order; a moving cursor keeps substring hits from
    # landing inside an earlier slot (e.g. a city named in a hospital)
    tags = {"name": "PATIENT", "age": "AGE", "hospital": "HOSPITAL",
            "date": "DATE", "crno": "ID", "phone": "CONTACT",
            "city": "LOCATION", "doctor": "DOCTOR"}
    spans, cursor = [], 0
    for field, tag in tags.items():
        start = text.index(fills[field], cursor)
        cursor = start + len(fills[field])
        spans.append(EntitySpan(start, cursor, tag, fills[field]))
    return Document(id=doc_id, text=text, entities=tuple(spans))


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=12)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--out-dir", type=Path, default=Path("demo_corpus"))
    args = ap.parse_args()

    rng = random.Random(args.seed)
    docs = tuple(synth_doc(rng, f"demo-{i:03d}") for i in range(args.n))
    corpus = Corpus(documents=docs, schema=CANONICAL_SCHEMA)

    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_corpus(corpus, args.out_dir / "gold.jsonl")
    write_corpus(corpus, args.out_dir / "gold.conll")
    write_corpus(corpus, args.out_dir / "xml")
    n_ents = sum(len(d.entities) for d in corpus)
    print(f"wrote {len(corpus)} docs / {n_ents} entities to {args.out_dir}/")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
