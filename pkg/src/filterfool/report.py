"""CSV tables and plots computed from persisted evaluation records.

Every number comes from the metric functions in :mod:`filterfool.eval`, so a
table cell equals the direct metric call on the same records. Floats are
written with ``repr`` and rows are sorted, which keeps the files
byte-identical across runs.
"""

import csv
from pathlib import Path

from .eval import (
    NO_DEFENSE,
    categorical_sr,
    group_records,
    semantic_confusion,
    semantic_damage,
    semantic_sr,
    topk_categorical_sr,
    topk_semantic_sr,
    transfer_matrix,
)

T_GRID = tuple(round(0.05 * i, 2) for i in range(21))


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def _write(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _success(r, semantic):
    return r.class_changed if semantic else r.label_changed


def retention(defended, undefended, semantic=False):
    """Fraction of undefended successes still successful after the defense.

    Records are paired by image id; ``None`` when nothing succeeded undefended.
    """
    before = {r.image_id for r in undefended if _success(r, semantic)}
    if not before:
        return None
    after = {r.image_id for r in defended if r.image_id in before and _success(r, semantic)}
    return len(after) / len(before)


def success_table(records):
    rows = []
    for (a, s, e, d), rs in sorted(group_records(records, "attack_name", "source_model", "eval_model", "defense_name").items()):
        rows.append((a, s, e, d, len(rs), categorical_sr(rs), semantic_sr(rs)))
    return ["attack", "source_model", "eval_model", "defense", "n", "categorical_sr", "semantic_sr"], rows


def robustness_table(records):
    groups = group_records(records, "attack_name", "source_model", "eval_model", "defense_name")
    rows = []
    for (a, s, e, d), rs in sorted(groups.items()):
        if d == NO_DEFENSE or (a, s, e, NO_DEFENSE) not in groups:
            continue
        base = groups[(a, s, e, NO_DEFENSE)]
        rows.append((a, s, e, d, len(rs), retention(rs, base), retention(rs, base, semantic=True)))
    header = ["attack", "source_model", "eval_model", "defense", "n", "categorical_retention", "semantic_retention"]
    return header, rows


def topk_table(records, taxonomies, kmax=5):
    rows = []
    undefended = [r for r in records if r.defense is None]
    for (a, s, e), rs in sorted(group_records(undefended, "attack_name", "source_model", "eval_model").items()):
        tax = taxonomies(e)
        for k in range(1, min(kmax, min(len(r.topk_labels) for r in rs)) + 1):
            rows.append((a, s, e, k, topk_categorical_sr(rs, k), topk_semantic_sr(rs, k, tax)))
    return ["attack", "source_model", "eval_model", "k", "topk_categorical_sr", "topk_semantic_sr"], rows


def damage_table(records, grid=T_GRID):
    rows = []
    undefended = [r for r in records if r.defense is None and r.wu_similarity is not None]
    for (a, s, e), rs in sorted(group_records(undefended, "attack_name", "source_model", "eval_model").items()):
        for t in grid:
            # stored similarities: no hypernym graph needed
            rows.append((a, s, e, t, semantic_damage(rs, None, t)))
    return ["attack", "source_model", "eval_model", "T_s", "semantic_damage"], rows


def transfer_tables(records, semantic=False):
    """One block per attack: rows are source models, columns eval models."""
    undefended = [r for r in records if r.defense is None]
    metric = semantic_sr if semantic else categorical_sr
    blocks = []
    for (a,), rs in sorted(group_records(undefended, "attack_name").items()):
        cells = group_records(rs, "source_model", "eval_model")
        sources, evals, table = transfer_matrix(cells, metric)
        blocks.append((a, sources, evals, table))
    return blocks


def _plot(path, title, xlabel, ylabel, series):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5), dpi=100)
    for label, (xs, ys) in sorted(series.items()):
        ax.plot(xs, ys, marker="o", label=label)
    ax.set(title=title, xlabel=xlabel, ylabel=ylabel, ylim=(-0.02, 1.02))
    if series:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def write_report(records, out_dir, taxonomies, plots=True, config_hash=None):
    """Write every table (and, optionally, plot) into ``out_dir``; returns the paths.

    ``taxonomies`` maps an eval-model name to its label taxonomy.
    """
    records = list(records)
    if not records:
        raise ValueError("no records to report on")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def emit(name, header, rows):
        p = out / name
        if config_hash:
            header = header + ["config_hash"]
            rows = [tuple(row) + (config_hash,) for row in rows]
        _write(p, header, rows)
        written.append(p)

    emit("success_rates.csv", *success_table(records))
    emit("robustness.csv", *robustness_table(records))
    topk = topk_table(records, taxonomies)
    emit("topk.csv", *topk)
    damage = damage_table(records)
    if damage[1]:
        emit("semantic_damage.csv", *damage)
    for semantic, name in ((False, "transfer_categorical.csv"), (True, "transfer_semantic.csv")):
        rows = []
        for a, sources, evals, table in transfer_tables(records, semantic):
            for s, row in zip(sources, table):
                rows += [(a, s, e, float(v)) for e, v in zip(evals, row)]
        emit(name, ["attack", "source_model", "eval_model", "success_rate"], rows)
    undefended = [r for r in records if r.defense is None]
    for (a, s, e), rs in sorted(group_records(undefended, "attack_name", "source_model", "eval_model").items()):
        tax = taxonomies(e)
        m = semantic_confusion(rs, tax)
        rows = [(tax.class_names[i], *map(int, m[i])) for i in range(tax.S)]
        emit(f"confusion_{a}_{s}_{e}.csv", ["original_class", *tax.class_names], rows)

    if plots:
        series = {}
        for a, s, e, k, _, sem in topk[1]:
            xs, ys = series.setdefault(f"{a} {s}->{e}", ([], []))
            xs.append(k)
            ys.append(sem)
        _plot(out / "topk_semantic.png", "Top-k semantic success", "k", "success rate", series)
        written.append(out / "topk_semantic.png")
        if damage[1]:
            series = {}
            for a, s, e, t, v in damage[1]:
                xs, ys = series.setdefault(f"{a} {s}->{e}", ([], []))
                xs.append(t)
                ys.append(v)
            _plot(out / "semantic_damage.png", "Semantic damage", "T_s", "damage", series)
            written.append(out / "semantic_damage.png")
    return written

