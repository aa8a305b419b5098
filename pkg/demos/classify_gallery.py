"""Classify a few gallery systems and compare with their expected signatures.

Each gallery entry records which classes of the hierarchy it is known to
satisfy or violate.  The probe suite only ever gives evidence at the grid
resolutions it was run at, so the interesting column is where the two agree
and how the certificate backs the verdict.

Run with ``python3 demos/classify_gallery.py`` (about half a minute).
"""

from transferlab import gallery
from transferlab.classify import ClassifyConfig, classify

IDS = ["deterministic_doubling", "expanding_ifs_23", "additive_pinned_zero", "rotations_rational"]


def main():
    cfg = ClassifyConfig(ladder=(64, 128))
    for eid in IDS:
        entry = gallery.get(eid)
        rep = classify(entry.system(), cfg)
        print(f"{eid}  (hierarchy consistent: {rep.hierarchy_ok})")
        for tag, want in entry.expected.items():
            got = rep.verdicts[tag]
            probe = rep.get(tag)
            print(f"    {tag:6s} expected {want:8s} got {got:18s} via {probe.provenance}")
        print()


if __name__ == "__main__":
    main()
