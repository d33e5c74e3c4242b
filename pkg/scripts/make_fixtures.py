"""Build the toy corpus fixtures plus their golden pipeline outputs.

Run from the repository root:

    python scripts/make_fixtures.py

Inputs land in tests/fixtures/{cdr_toy,ctd_toy}; golden outputs of the
preprocessing commands land in tests/fixtures/golden. The acceptance
suite rebuilds everything and compares byte-for-byte.
"""

from __future__ import annotations

import pathlib
import sys

ROOT = pathlib.Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from relex.cli import main  # noqa: E402

FIXTURES = ROOT / "tests" / "fixtures"


def doc_block(doc_id: str, title: str, abstract: str, mentions, relations) -> str:
    """Render one PubTator block; mentions are (surface, occurrence_index,
    entity_type, entity_id) resolved to char offsets in title + ' ' + abstract."""
    text = f"{title} {abstract}"
    lines = [f"{doc_id}|t|{title}", f"{doc_id}|a|{abstract}"]
    for surface, occurrence, etype, eid in mentions:
        start = -1
        for _ in range(occurrence + 1):
            start = text.index(surface, start + 1)
        lines.append(f"{doc_id}\t{start}\t{start + len(surface)}\t{surface}\t{etype}\t{eid}")
    for rtype, id1, id2 in relations:
        lines.append(f"{doc_id}\t{rtype}\t{id1}\t{id2}")
    return "\n".join(lines) + "\n"


def write(path: pathlib.Path, content: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(content, encoding="utf-8")
    print(f"wrote {path.relative_to(ROOT)}")


def make_cdr_toy() -> None:
    d = FIXTURES / "cdr_toy"
    train = [
        doc_block(
            "1001", "Tobramycin and renal failure.",
            "High dose tobramycin caused renal failure and acute kidney injury "
            "in two patients. Kidney injury resolved after withdrawal.",
            [("tobramycin", 0, "Chemical", "D014031"),
             ("Tobramycin", 0, "Chemical", "D014031"),
             ("renal failure", 1, "Disease", "D051437"),
             ("acute kidney injury", 0, "Disease", "D058186")],
            [("CID", "D014031", "D058186")]),
        doc_block(
            "1002", "Haloperidol induced dystonia.",
            "A young patient developed severe dystonia after haloperidol. "
            "Lorazepam did not worsen the movement disorder.",
            [("haloperidol", 0, "Chemical", "D006220"),
             ("Haloperidol", 0, "Chemical", "D006220"),
             ("dystonia", 1, "Disease", "D004421"),
             ("Lorazepam", 0, "Chemical", "D008140"),
             ("movement disorder", 0, "Disease", "D009069")],
            [("CID", "D006220", "D004421")]),
        doc_block(
            "1003", "Caffeine in headache management.",
            "Caffeine withdrawal headache improved while tremor appeared in "
            "patients given theophylline.",
            [("Caffeine", 1, "Chemical", "D002110"),
             ("headache", 1, "Disease", "D006261"),
             ("tremor", 0, "Disease", "D014202"),
             ("theophylline", 0, "Chemical", "D013806")],
            [("CID", "D013806", "D014202")]),
        doc_block(
            "1004", "Phenytoin hepatotoxicity case.",
            "Phenytoin produced marked hepatotoxicity with elevated enzymes. "
            "The liver injury reversed on drug discontinuation.",
            [("Phenytoin", 0, "Chemical", "D010672"),
             ("Phenytoin", 1, "Chemical", "D010672"),
             ("hepatotoxicity", 0, "Disease", "D056486"),
             ("liver injury", 0, "Disease", "D056486")],
            [("CID", "D010672", "D056486")]),
    ]
    dev = [
        doc_block(
            "2001", "Ampicillin rash report.",
            "Ampicillin treatment led to a generalized rash. The rash faded "
            "within a week of stopping ampicillin.",
            [("Ampicillin", 0, "Chemical", "D000667"),
             ("ampicillin", 0, "Chemical", "D000667"),
             ("rash", 0, "Disease", "D005076"),
             ("rash", 1, "Disease", "D005076")],
            [("CID", "D000667", "D005076")]),
        doc_block(
            "2002", "Digoxin arrhythmia study.",
            "Digoxin overdose produced arrhythmia and nausea in elderly "
            "subjects. Nausea often preceded the cardiac signs.",
            [("Digoxin", 1, "Chemical", "D004077"),
             ("arrhythmia", 0, "Disease", "D001145"),
             ("nausea", 0, "Disease", "D009325"),
             ("Nausea", 0, "Disease", "D009325")],
            [("CID", "D004077", "D001145")]),
    ]
    test = [
        # hypernym case: cancer is an ancestor of lung cancer in the toy
        # tree, so the NULL candidate (cisplatin, cancer) must be filtered
        doc_block(
            "3001", "Cisplatin and lung cancer therapy.",
            "Patients with cancer received cisplatin. Those with lung cancer "
            "developed hearing loss during the trial.",
            [("cisplatin", 0, "Chemical", "D002945"),
             ("cancer", 1, "Disease", "D009369"),
             ("lung cancer", 1, "Disease", "D008175"),
             ("hearing loss", 0, "Disease", "D034381")],
            [("CID", "D002945", "D034381")]),
        doc_block(
            "3002", "Warfarin bleeding risk.",
            "Warfarin was associated with bleeding events. No hepatic "
            "necrosis was observed in the cohort.",
            [("Warfarin", 0, "Chemical", "D014859"),
             ("bleeding", 0, "Disease", "D006470"),
             ("hepatic necrosis", 0, "Disease", "D047508")],
            [("CID", "D014859", "D006470")]),
    ]
    write(d / "train.pubtator", "\n".join(train))
    write(d / "dev.pubtator", "\n".join(dev))
    write(d / "test.pubtator", "\n".join(test))
    write(d / "mesh.tsv",
          "D008175\tD009369\n"        # lung cancer -> cancer
          "D058186\tD051437\n"        # acute kidney injury -> renal failure
          "D009369\tD009370\n")       # cancer -> neoplasms (unused root)
    write(d / "schema.json", """{
  "hierarchy": {},
  "relations": [
    {"head_type": "Chemical", "name": "CID", "tail_type": "Disease"}
  ]
}
""")


def make_ctd_toy() -> None:
    d = FIXTURES / "ctd_toy"
    long_filler = "filler " * 520
    abstracts = [
        doc_block(
            "9001", "Mevastatin and srebf1 expression.",
            "Treatment with mevastatin raised srebf1 levels while abcb1 "
            "stayed flat. Cholestasis was not seen.",
            [("mevastatin", 0, "Chemical", "C01"),
             ("srebf1", 0, "Gene", "G01"),
             ("abcb1", 0, "Gene", "G02"),
             ("Cholestasis", 0, "Disease", "DI1")],
            []),
        doc_block(
            "9002", "Tamoxifen modulates esr1.",
            "Tamoxifen exposure altered esr1 activity. The same samples "
            "showed changes in cyp2d6 transport and edema.",
            [("Tamoxifen", 0, "Chemical", "C02"),
             ("esr1", 0, "Gene", "G03"),
             ("cyp2d6", 0, "Gene", "G04"),
             ("edema", 0, "Disease", "DI2")],
            []),
        doc_block(
            "9003", "Valproate reaction profile.",
            "Valproate shifted metabolic reaction rates for ugt1a6 and "
            "altered scn1a expression in the assay.",
            [("Valproate", 0, "Chemical", "C03"),
             ("ugt1a6", 0, "Gene", "G05"),
             ("scn1a", 0, "Gene", "G06")],
            []),
        doc_block(
            "9004", "A very long abstract.",
            long_filler.strip() + " aspirin touched ptgs2 here.",
            [("aspirin", 0, "Chemical", "C04"),
             ("ptgs2", 0, "Gene", "G07")],
            []),
        doc_block(
            "9005", "Irrelevant mentions only.",
            "Nothing curated appears here, only caffeine alone.",
            [("caffeine", 0, "Chemical", "C05")],
            []),
        doc_block(
            "9006", "Metformin and diabetes markers.",
            "Metformin improved fasting markers of diabetes. Records noted "
            "gck involvement in the same patients.",
            [("Metformin", 0, "Chemical", "C06"),
             ("diabetes", 0, "Disease", "DI3"),
             ("gck", 0, "Gene", "G08")],
            []),
    ]
    write(d / "abstracts.pubtator", "\n".join(abstracts))
    # raw curated rows: pmid, raw relation type, head id, tail id
    curated = [
        # expression group: affects wins (3 > 2 and 3 > 1)
        ("9001", "affects_expression_raw", "C01", "G01"),
        ("9001", "affects_expression_raw", "C01", "G02"),
        ("9003", "affects_expression_raw", "C03", "G06"),
        ("9001", "increase_expression_phospho", "C01", "G01"),
        ("9003", "increase_expression_phospho", "C03", "G06"),
        ("9001", "decrease_expression_phospho", "C01", "G02"),
        # activity group: affects loses (1 < 2 increase), affects rows dropped
        ("9002", "affects_activity_raw", "C02", "G03"),
        ("9002", "increase_activity_kinase", "C02", "G03"),
        ("9003", "increase_activity_kinase", "C03", "G05"),
        ("9003", "decrease_activity_kinase", "C03", "G05"),
        # transport: affects only, no directional variants
        ("9002", "affects_transport_raw", "C02", "G04"),
        # reaction: directional only, no affects variant
        ("9003", "increase_reaction_rate", "C03", "G05"),
        # chemical-disease and gene-disease rows
        ("9001", "cd_marker_mechanism", "C01", "DI1"),
        ("9002", "cd_therapeutic", "C02", "DI2"),
        ("9006", "cd_therapeutic", "C06", "DI3"),
        ("9006", "gd_marker_mechanism", "G08", "DI3"),
        # dropped: no abstract for this pmid
        ("9999", "cd_therapeutic", "C01", "DI1"),
        # dropped: tail entity not tagged in 9001
        ("9001", "cd_marker_mechanism", "C01", "DI9"),
        # discarded later: abstract 9004 is over the token limit
        ("9004", "increase_reaction_rate", "C04", "G07"),
    ]
    write(d / "curated.tsv",
          "".join("\t".join(row) + "\n" for row in curated))
    write(d / "hierarchy.tsv",
          "affects_expression_raw\taffects_expression\n"
          "increase_expression_phospho\tincrease_expression\n"
          "decrease_expression_phospho\tdecrease_expression\n"
          "affects_activity_raw\taffects_activity\n"
          "increase_activity_kinase\tincrease_activity\n"
          "decrease_activity_kinase\tdecrease_activity\n"
          "affects_transport_raw\taffects_transport\n"
          "increase_reaction_rate\tincrease_reaction\n")


def make_golden() -> None:
    golden = FIXTURES / "golden"
    golden.mkdir(parents=True, exist_ok=True)
    cdr = FIXTURES / "cdr_toy"
    ctd = FIXTURES / "ctd_toy"

    corpus_paths = [str(cdr / s) for s in ("train.pubtator", "dev.pubtator",
                                           "test.pubtator")]
    rc = main(["bpe-train", "--budget", "90", "--out", str(golden / "cdr_vocab.txt")]
              + [arg for p in corpus_paths for arg in ("--input", p)])
    assert rc == 0, "bpe-train failed"
    rc = main(["preprocess-cdr",
               "--train", str(cdr / "train.pubtator"),
               "--dev", str(cdr / "dev.pubtator"),
               "--test", str(cdr / "test.pubtator"),
               "--mesh", str(cdr / "mesh.tsv"),
               "--schema", str(cdr / "schema.json"),
               "--vocab", str(golden / "cdr_vocab.txt"),
               "--out", str(golden / "cdr_dataset.jsonl"),
               "--stats", str(golden / "cdr_stats.txt")])
    assert rc == 0, "preprocess-cdr failed"

    rc = main(["bpe-train", "--budget", "70",
               "--input", str(ctd / "abstracts.pubtator"),
               "--out", str(golden / "ctd_vocab.txt")])
    assert rc == 0
    rc = main(["build-ctd",
               "--abstracts", str(ctd / "abstracts.pubtator"),
               "--relations", str(ctd / "curated.tsv"),
               "--hierarchy", str(ctd / "hierarchy.tsv"),
               "--vocab", str(golden / "ctd_vocab.txt"),
               "--out", str(golden / "ctd_dataset.jsonl"),
               "--schema-out", str(golden / "ctd_schema.json"),
               "--stats", str(golden / "ctd_stats.txt")])
    assert rc == 0, "build-ctd failed"
    for stray in golden.glob("*.manifest.json"):
        stray.unlink()  # goldens are content files; manifests carry paths
    print("golden outputs refreshed")


if __name__ == "__main__":
    make_cdr_toy()
    make_ctd_toy()
    make_golden()
