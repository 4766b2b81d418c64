"""Success-rate metrics over evaluation records, and their persistence.

Success is always measured against the prediction on the clean image
(``original_label``), never against ground truth. Rates average over every
attacked image, so failed attacks count as 0.
"""

import csv
import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .taxonomy import wu_palmer

NO_DEFENSE = "none"


@dataclass
class EvalRecord:
    image_id: str
    attack_name: str
    source_model: str
    eval_model: str
    original_label: int
    original_class: int
    adversarial_label: int
    adversarial_class: int
    topk_labels: list = field(default_factory=list)
    wu_similarity: float = None
    defense: str = None
    true_label: int = None

    def __post_init__(self):
        for name in ("original_label", "original_class", "adversarial_label", "adversarial_class"):
            v = getattr(self, name)
            if v is None or int(v) < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {v!r}")
            setattr(self, name, int(v))
        self.topk_labels = [int(v) for v in self.topk_labels]
        if not self.topk_labels:
            self.topk_labels = [self.adversarial_label]
        if self.topk_labels[0] != self.adversarial_label:
            raise ValueError("topk_labels must start with the adversarial label")
        if self.wu_similarity is not None:
            self.wu_similarity = float(self.wu_similarity)
            if not 0.0 < self.wu_similarity <= 1.0:
                raise ValueError(f"wu_similarity must lie in (0, 1], got {self.wu_similarity}")
        if self.true_label is not None:
            self.true_label = int(self.true_label)

    @property
    def defense_name(self):
        return self.defense or NO_DEFENSE

    @property
    def label_changed(self):
        return self.adversarial_label != self.original_label

    @property
    def class_changed(self):
        return self.adversarial_class != self.original_class


def _nonempty(records):
    records = list(records)
    if not records:
        raise ValueError("metric over an empty record set")
    return records


def _check_k(records, k, D=None):
    if k < 1 or (D is not None and k > D):
        raise ValueError(f"k out of range: {k}")
    short = [r.image_id for r in records if len(r.topk_labels) < k]
    if short:
        raise ValueError(f"records carry fewer than {k} ranked labels: {short[:3]}")


def categorical_sr(records):
    records = _nonempty(records)
    return sum(r.label_changed for r in records) / len(records)


def semantic_sr(records, tax=None):
    """Fraction of records whose adversarial class differs from the original.

    With ``tax`` the classes are recomputed from the labels; otherwise the
    stored class indices are used.
    """
    records = _nonempty(records)
    if tax is None:
        return sum(r.class_changed for r in records) / len(records)
    return sum(tax.class_of[r.adversarial_label] != tax.class_of[r.original_label] for r in records) / len(records)


def topk_categorical_sr(records, k, D=None):
    """Fraction where the original label is absent from the top-``k`` labels."""
    records = _nonempty(records)
    _check_k(records, k, D)
    return sum(r.original_label not in r.topk_labels[:k] for r in records) / len(records)


def topk_semantic_sr(records, k, tax, strict=True):
    """Fraction where no top-``k`` label belongs to the original class.

    ``strict=False`` only looks at the class of the top-1 label.
    """
    records = _nonempty(records)
    _check_k(records, k, tax.D)
    cls = tax.class_of
    if not strict:
        return sum(cls[r.topk_labels[0]] != cls[r.original_label] for r in records) / len(records)
    hits = sum(all(cls[j] != cls[r.original_label] for j in r.topk_labels[:k]) for r in records)
    return hits / len(records)


def record_similarity(r, g, tax=None):
    if r.wu_similarity is not None:
        return r.wu_similarity
    if tax is None or not tax.wnid:
        raise ValueError(f"record {r.image_id} has no similarity and no wnids to compute one")
    return wu_palmer(g, tax.wnid[r.original_label], tax.wnid[r.adversarial_label])


def semantic_damage(records, g, T_s, tax=None):
    """Mean of 1[Wu(original, adversarial) < T_s]."""
    records = _nonempty(records)
    if not 0.0 <= T_s:
        raise ValueError("T_s must be non-negative")
    return sum(record_similarity(r, g, tax) < T_s for r in records) / len(records)


def semantic_confusion(records, tax):
    """(S, S) counts: row = original class, column = adversarial class."""
    m = np.zeros((tax.S, tax.S), dtype=np.int64)
    for r in records:
        m[tax.class_of[r.original_label], tax.class_of[r.adversarial_label]] += 1
    return m


def transfer_matrix(results, metric, sources=None, evals=None):
    """Table of ``metric(records)`` for each (source, eval) model pair.

    ``results`` maps (source_model, eval_model) to a record list. Returns
    (sources, evals, matrix).
    """
    sources = sources or sorted({s for s, _ in results})
    evals = evals or sorted({e for _, e in results})
    table = np.empty((len(sources), len(evals)))
    for i, s in enumerate(sources):
        for j, e in enumerate(evals):
            if (s, e) not in results:
                raise KeyError(f"missing transfer cell ({s}, {e})")
            table[i, j] = metric(results[(s, e)])
    return list(sources), list(evals), table


def top1_top5_accuracy(records):
    records = [r for r in records if r.true_label is not None]
    if not records:
        raise ValueError("no records carry ground-truth labels")
    top1 = sum(r.topk_labels[0] == r.true_label for r in records) / len(records)
    top5 = sum(r.true_label in r.topk_labels[:5] for r in records) / len(records)
    return top1, top5


def group_records(records, *keys):
    """Dict from a tuple of field values to the records sharing them."""
    out = {}
    for r in records:
        out.setdefault(tuple(getattr(r, k) for k in keys), []).append(r)
    return out


# persistence

FIELDS = [f.name for f in fields(EvalRecord)]


def _encode(name, value):
    if value is None:
        return ""
    if name == "topk_labels":
        return " ".join(str(v) for v in value)
    if name == "wu_similarity":
        return repr(float(value))
    return str(value)


def _decode(name, text):
    if name == "topk_labels":
        return [int(v) for v in text.split()]
    if text == "":
        return None
    if name == "wu_similarity":
        return float(text)
    if name in ("image_id", "attack_name", "source_model", "eval_model", "defense"):
        return text
    return int(text)


def write_records_csv(records, path, config_hash=None):
    with open(path, "w", newline="") as fh:
        if config_hash:
            fh.write(f"# config_hash={config_hash}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIELDS)
        for r in records:
            w.writerow([_encode(n, getattr(r, n)) for n in FIELDS])


def read_records_csv(path):
    with open(path, newline="") as fh:
        rows = [line for line in fh if not line.startswith("#")]
    reader = csv.DictReader(rows)
    missing = set(FIELDS) - set(reader.fieldnames or [])
    if missing:
        raise ValueError(f"{path}: missing columns {sorted(missing)}")
    return [EvalRecord(**{n: _decode(n, row[n]) for n in FIELDS}) for row in reader]


def write_records_jsonl(records, path, config_hash=None):
    with open(path, "w") as fh:
        for r in records:
            d = asdict(r)
            if config_hash:
                d["config_hash"] = config_hash
            fh.write(json.dumps(d, sort_keys=True) + "\n")


def read_records_jsonl(path):
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                d.pop("config_hash", None)
                out.append(EvalRecord(**d))
    return out


def read_records(path):
    return read_records_jsonl(path) if str(path).endswith(".jsonl") else read_records_csv(path)
