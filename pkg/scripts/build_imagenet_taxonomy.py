"""Regenerate the bundled ImageNet-1000 taxonomy and hypernym files.

Usage:
    python scripts/build_imagenet_taxonomy.py WORDNET_DATA_NOUN SYNSET_LIST OUT_DIR

WORDNET_DATA_NOUN is the ``data.noun`` file of WordNet 3.0 and SYNSET_LIST holds
the 1000 ImageNet wnids, one per line, in class-index order.
"""

import csv
import sys
from pathlib import Path

from torchvision.models import ResNet18_Weights

# (class name, root synsets); earlier groups win when a label has several roots
GROUPS = [
    ("dogs", ["n02083346"]),
    ("other mammals", ["n01861778"]),
    ("birds", ["n01503061"]),
    ("reptiles, fish, amphibians", ["n01661091", "n02512053", "n01627424"]),
    ("invertebrates", ["n01905661"]),
    ("food, plants, fungi", ["n00021265", "n07555863", "n00017222", "n12992868", "n13086908", "n00019128"]),
    ("clothes, covering", ["n03122748"]),
    ("structures, furnishing", ["n04341686", "n03405265", "n09287968"]),
    ("devices", ["n03183080", "n03294048"]),
    ("vehicles", ["n03100490"]),
    ("implements, containers, misc. objects", []),
]
# labels reachable from several roots (or none) whose class is pinned by hand
OVERRIDES = {
    "n07565083": 10,  # menu
    "n03207941": 8,  # dishwasher
    "n03761084": 8,  # microwave
    "n04070727": 8,  # refrigerator
    "n04442312": 8,  # toaster
    "n04517823": 8,  # vacuum
    "n04554684": 8,  # washer
    "n04041544": 8,  # radio
    "n04404412": 8,  # television
    "n04525038": 6,  # velvet
    "n04599235": 6,  # wool
    "n04296562": 7,  # stage
}
ORDER = [0, 1, 2, 3, 4, 5, 8, 7, 6, 10, 9]  # output class_index -> GROUPS index
ROOT = "n00001740"


def read_hypernyms(path):
    parents = {}
    with open(path, encoding="latin-1") as fh:
        for line in fh:
            if line.startswith("  "):
                continue
            fields = line.split(" | ")[0].split()
            nwords = int(fields[3], 16)
            i = 4 + 2 * nwords
            nptrs = int(fields[i])
            i += 1
            ps = []
            for _ in range(nptrs):
                sym, off, pos, _src = fields[i : i + 4]
                i += 4
                if sym in ("@", "@i") and pos == "n":
                    ps.append("n" + off)
            parents["n" + fields[0]] = ps
    return parents


def main(data_noun, synset_list, out_dir):
    parents = read_hypernyms(data_noun)
    wnids = [ln.strip() for ln in open(synset_list) if ln.strip()]
    names = ResNet18_Weights.DEFAULT.meta["categories"]
    assert len(wnids) == len(names) == 1000

    def ancestors(w):
        seen, stack = {w}, [w]
        while stack:
            for p in parents[stack.pop()]:
                if p not in seen:
                    seen.add(p)
                    stack.append(p)
        return seen

    anc = {w: ancestors(w) for w in wnids}
    group_of = {}
    for w in wnids:
        if w in OVERRIDES:
            group_of[w] = OVERRIDES[w]
            continue
        for gi, (_, roots) in enumerate(GROUPS):
            if not roots or any(r in anc[w] for r in roots):
                group_of[w] = gi
                break
    class_index = {g: i for i, g in enumerate(ORDER)}

    out = Path(out_dir)
    with open(out / "imagenet_taxonomy.csv", "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["label_index", "label_name", "wnid", "class_index", "class_name"])
        for i, (w, name) in enumerate(zip(wnids, names)):
            g = group_of[w]
            wr.writerow([i, name, w, class_index[g], GROUPS[g][0]])

    edges = set()
    for w in wnids:
        for node in anc[w]:
            for p in parents[node]:
                edges.add((node, p))
    with open(out / "imagenet_hypernyms.csv", "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["child_wnid", "parent_wnid"])
        wr.writerows(sorted(edges))

    sizes = [sum(1 for w in wnids if group_of[w] == g) for g in ORDER]
    print("class sizes:", sizes)


if __name__ == "__main__":
    main(*sys.argv[1:4])
