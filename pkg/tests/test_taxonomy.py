import numpy as np
import pytest

import oracles
from filterfool.taxonomy import (
    HypernymGraph,
    LabelTaxonomy,
    TaxonomyError,
    complement_mask,
    imagenet_hypernyms,
    imagenet_taxonomy,
    load_hypernyms,
    load_taxonomy,
    membership_mask,
    save_taxonomy,
    wu_palmer,
)
from filterfool.toy import toy_hypernyms, toy_taxonomy

HEADER = "label_index,label_name,wnid,class_index,class_name\n"


def test_masks_partition_labels():
    tax = LabelTaxonomy.from_groups([[0, 3], [1], [2, 4]])
    total = sum(membership_mask(tax, s) for s in range(tax.S))
    assert np.array_equal(total, np.ones(5))
    assert np.array_equal(membership_mask(tax, 0) + complement_mask(tax, 0), np.ones(5))
    assert tax.matrix.sum(axis=1).tolist() == [1] * 5
    with pytest.raises(IndexError):
        tax.membership_mask(3)


def test_from_groups_rejects_overlap():
    with pytest.raises(TaxonomyError):
        LabelTaxonomy.from_groups([[0, 1], [1]])


def test_categorical_taxonomy():
    tax = LabelTaxonomy.categorical(4)
    assert tax.S == tax.D == 4
    assert tax.class_sizes().tolist() == [1, 1, 1, 1]


def test_csv_roundtrip(tmp_path):
    tax = toy_taxonomy()
    save_taxonomy(tax, tmp_path / "t.csv")
    back = load_taxonomy(tmp_path / "t.csv")
    assert np.array_equal(back.class_of, tax.class_of)
    assert back.class_names == tax.class_names and back.wnid == tax.wnid


@pytest.mark.parametrize(
    "body",
    [
        "",
        HEADER + "0,a,x,0,A\n0,a,x,1,B\n",
        HEADER + "0,a,x,0,A\n1,b,y,0,B\n",
        HEADER + "0,a,x,0,A\n2,b,y,0,A\n",
        HEADER + "0,a,x,zero,A\n",
        "bad,header\n0,a\n",
    ],
)
def test_load_taxonomy_rejects_malformed(tmp_path, body):
    p = tmp_path / "t.csv"
    p.write_text(body)
    with pytest.raises(TaxonomyError):
        load_taxonomy(p)


def test_error_reports_line_number(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text(HEADER + "0,a,x,0,A\n1,b,y\n")
    with pytest.raises(TaxonomyError, match=":3:"):
        load_taxonomy(p)


def test_hypernym_cycle_and_roots_rejected(tmp_path):
    with pytest.raises(TaxonomyError):
        HypernymGraph({"a": {"r"}, "b": {"a", "c"}, "c": {"b"}})
    with pytest.raises(TaxonomyError):
        HypernymGraph({"a": {"r1"}, "b": {"r2"}})
    p = tmp_path / "h.csv"
    p.write_text("child_wnid,parent_wnid\n")
    with pytest.raises(TaxonomyError):
        load_hypernyms(p)


def test_wu_palmer_chain_and_identity():
    g = HypernymGraph({"A": {"root"}, "B": {"A"}})
    assert wu_palmer(g, "A", "B") == pytest.approx(0.8)
    assert wu_palmer(g, "B", "B") == 1.0
    with pytest.raises(KeyError):
        wu_palmer(g, "A", "Z")


def test_wu_palmer_symmetric_and_bounded(rng):
    parents = oracles.random_dag(30, rng)
    g = HypernymGraph(parents)
    for _ in range(100):
        a, b = (int(v) for v in rng.integers(0, 30, size=2))
        w = wu_palmer(g, a, b)
        assert 0 < w <= 1 and w == wu_palmer(g, b, a)


def test_toy_hypernyms():
    tax, g = toy_taxonomy(), toy_hypernyms()
    same = wu_palmer(g, tax.wnid[0], tax.wnid[1])
    cross = wu_palmer(g, tax.wnid[0], tax.wnid[4])
    assert same == pytest.approx(2 / 3) and cross == pytest.approx(1 / 3)


def test_bundled_imagenet_files_are_consistent():
    tax, g = imagenet_taxonomy(), imagenet_hypernyms()
    assert len(set(tax.wnid)) == 1000
    assert all(w in g.parents for w in tax.wnid)
    assert tax.label_names[0] == "tench"
