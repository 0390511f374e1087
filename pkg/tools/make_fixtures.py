#!/usr/bin/env python3
"""Generate the bundled test corpus fixtures.

Run once; the outputs under tests/data/ are committed and treated as frozen
golden inputs. Regenerating with the same seed reproduces them byte for byte.
"""

from __future__ import annotations

import json
import random
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "tests" / "data"

AUTHORS = [
    "Johannes Vermeer",
    "Rembrandt van Rijn",
    "Claude Monet",
    "Pieter de Hooch",
    "Diego Velazquez",
    "Jan Steen",
    "Caspar Netscher",
    "Frans Hals",
    "El Greco",
    "Artemisia Gentileschi",
    "Georges de La Tour",
    "Judith Leyster",
]

TITLE_PATTERNS = [
    "The Virgin and Child",
    "Virgin and Child with Saints",
    "Portrait of a Lady",
    "Portrait of a Young Man",
    "Still Life with Flowers",
    "Still Life with Fruit and Lobster",
    "View of Delft",
    "View of the River",
    "The Music Lesson",
    "The Milkmaid",
    "Woman Reading a Letter",
    "Landscape with Windmill",
    "Winter Landscape with Skaters",
    "The Adoration of the Shepherds",
    "Allegory of Painting",
    "The Night Watch",
    "Girl with a Pearl Earring",
    "Christ in the House of Martha",
    "The Card Players",
    "Saint Jerome in his Study",
]

TECHNIQUES = [
    "Oil on canvas, 167 x 124 cm",
    "Oil on canvas, 98 x 105 cm",
    "Oil on oak panel, 41,5 x 32 cm",
    "Oil on copper, 20 x 30 cm",
    "Fresco",
    "Marble, height 85 cm",
    "Tempera on wood, 45x60cm",
    "Bronze, diameter 30 cm",
    "Etching and drypoint",
    "Oil on canvas",
    "Watercolour on paper, 24 x 18 cm",
    "",
]

TYPES = ["portrait", "landscape", "still-life", "religious", "genre", "mythological", ""]
SCHOOLS = ["Dutch", "French", "Italian", "Flemish", "Spanish", "German", ""]
TIMEFRAMES = ["1600-1650", "1650-1700", "1550-1600", "1700-1750", ""]

CAPTION_SUBJECTS = [
    "a young woman",
    "the artist",
    "a group of peasants",
    "two children",
    "an old scholar",
    "a servant girl",
    "the holy family",
    "a merchant",
]
CAPTION_ACTIONS = [
    "reads a letter by the window",
    "pours milk into a bowl",
    "sits at a cluttered table",
    "plays the virginal",
    "gazes at the viewer",
    "prepares a simple meal",
    "rests beneath a tree",
    "studies an open book",
]
CAPTION_SETTINGS = [
    "in a sunlit interior",
    "against a dark background",
    "in a quiet courtyard",
    "near the harbour",
    "inside a tavern",
    "in a village square",
]
CATEGORIES = ["visual", "contextual", "form", "content", "context", "unlabeled"]


def make_caption(rng: random.Random) -> dict:
    text = (
        f"{rng.choice(CAPTION_SUBJECTS)} {rng.choice(CAPTION_ACTIONS)} "
        f"{rng.choice(CAPTION_SETTINGS)}"
    )
    return {"text": text.capitalize() + ".", "category": rng.choice(CATEGORIES)}


def make_record(rng: random.Random, rid: str) -> dict:
    return {
        "id": rid,
        "image": f"synthetic://{rid}",
        "author": rng.choice(AUTHORS + [""]),
        "title": rng.choice(TITLE_PATTERNS),
        "technique": rng.choice(TECHNIQUES),
        "type": rng.choice(TYPES),
        "school": rng.choice(SCHOOLS),
        "timeframe": rng.choice(TIMEFRAMES),
        "date": str(rng.randint(1550, 1750)),
        "captions": [make_caption(rng) for _ in range(rng.randint(1, 3))],
    }


def write_jsonl(path: Path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    rng = random.Random(20240917)

    train = [make_record(rng, f"p{i:03d}") for i in range(1, 51)]
    val = [make_record(rng, f"v{i:03d}") for i in range(1, 11)]
    test = [make_record(rng, f"t{i:03d}") for i in range(1, 11)]

    # Plant exactly four duplicate captions in train: two match val captions
    # (one verbatim, one differing only in case/trailing period), two match
    # test captions the same way.
    planted = []
    train[3]["captions"].append({"text": val[0]["captions"][0]["text"], "category": "visual"})
    planted.append(["p004", val[0]["captions"][0]["text"], "val"])
    mangled = val[1]["captions"][0]["text"].rstrip(".").upper()
    train[7]["captions"].append({"text": mangled, "category": "unlabeled"})
    planted.append(["p008", mangled, "val"])
    train[12]["captions"].append({"text": test[2]["captions"][0]["text"], "category": "content"})
    planted.append(["p013", test[2]["captions"][0]["text"], "test"])
    mangled2 = test[4]["captions"][0]["text"].lower()
    train[21]["captions"].append({"text": mangled2, "category": "form"})
    planted.append(["p022", mangled2, "test"])

    write_jsonl(OUT / "mini_corpus.jsonl", train)
    write_jsonl(OUT / "mini_val.jsonl", val)
    write_jsonl(OUT / "mini_test.jsonl", test)
    with open(OUT / "golden_parse.json", "w", encoding="utf-8") as fh:
        json.dump(train, fh, ensure_ascii=False, indent=1)
    with open(OUT / "golden_dedup.json", "w", encoding="utf-8") as fh:
        json.dump(planted, fh, ensure_ascii=False, indent=1)

    # CSV twin of the first five records (captions pipe-delimited, text only).
    import csv

    with open(OUT / "mini_corpus_head.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(
            fh,
            fieldnames=[
                "id",
                "image",
                "author",
                "title",
                "technique",
                "type",
                "school",
                "timeframe",
                "date",
                "captions",
            ],
        )
        writer.writeheader()
        for row in train[:5]:
            flat = {k: row[k] for k in writer.fieldnames if k != "captions"}
            flat["captions"] = "|".join(c["text"] for c in row["captions"])
            writer.writerow(flat)

    print(f"wrote fixtures under {OUT}")


if __name__ == "__main__":
    main()
