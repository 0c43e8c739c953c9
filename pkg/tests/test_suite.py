"""Suite variant assembly and second-layer topic tests."""

import numpy as np
import pytest

from mftsuite.embedding import EmbeddingMatrix
from mftsuite.mft_gen import MftCase, MftSuite, dedup
from mftsuite.suite import (
    assemble_variants, build_original, cluster_mft_topics, manual_grouping,
    save_size_table, variant_slug,
)


def case_of(case_id, text, label=1, seed=1, paraphrase_of=None):
    return MftCase(id=case_id, text=text, summary="s", inherited_label=label,
                   source_doc_id="d", cluster=0, seed=seed,
                   paraphrase_of=paraphrase_of)


def seed_suite(i, texts):
    return MftSuite(name=f"MFT {i}",
                    cases=[case_of(f"s{i}-c{j}", t, seed=i)
                           for j, t in enumerate(texts)],
                    provenance={"split": "train", "seed": i})


class TestAssemble:
    def test_original_is_dedup_union(self):
        suites = [seed_suite(1, ["alpha one", "beta two"]),
                  seed_suite(2, ["ALPHA ONE!", "gamma three"])]
        variant_set = assemble_variants(suites, [], "train")
        texts = [c.text for c in variant_set.original.cases]
        assert texts == ["alpha one", "beta two", "gamma three"]
        assert dedup(variant_set.original.cases) == variant_set.original.cases

    def test_extended_bounds_and_collisions(self):
        suites = [seed_suite(1, ["alpha one", "beta two"])]
        original = build_original(suites, "train")
        paraphrases = []
        for case in original.cases:
            for j in range(1, 6):
                text = case.text if j == 5 else f"{case.text} variant {j}"
                paraphrases.append(case_of(f"{case.id}-p{j}", text,
                                           label=case.inherited_label,
                                           paraphrase_of=case.id))
        variant_set = assemble_variants(suites, paraphrases, "train")
        # One of five paraphrases collides with its original.
        assert len(variant_set.extended) == len(original) * 5
        assert len(variant_set.extended) <= 6 * len(original)

    def test_single_suite_no_paraphrases_degenerate(self):
        suites = [seed_suite(1, ["only text"])]
        variant_set = assemble_variants(suites, [], "train")
        assert [c.text for c in variant_set.original.cases] == ["only text"]
        assert [c.text for c in variant_set.extended.cases] == ["only text"]

    def test_orphan_paraphrase_rejected(self):
        suites = [seed_suite(1, ["alpha one"])]
        orphan = case_of("ghost-p1", "orphan text", paraphrase_of="ghost")
        with pytest.raises(ValueError, match="absent"):
            assemble_variants(suites, [orphan], "train")

    def test_size_table_shape(self, tmp_path):
        suites = [seed_suite(1, ["a1", "b1"]), seed_suite(2, ["a2"]),
                  seed_suite(3, ["a3"])]
        variant_set = assemble_variants(suites, [], "train")
        rows = variant_set.size_table()
        assert [name for name, _ in rows] == \
            ["MFT 1", "MFT 2", "MFT 3", "MFT (Original)", "MFT (Extended)"]
        path = tmp_path / "sizes.csv"
        save_size_table(variant_set, path, pre_qc_sizes={"MFT 1": 3})
        lines = path.read_text().splitlines()
        assert lines[0] == "dataset,size_pre_qc,size"
        assert lines[1] == "MFT 1,3,2"

    def test_variant_slugs(self):
        assert variant_slug("MFT 1") == "mft1"
        assert variant_slug("MFT (Original)") == "mftoriginal"


class TestClusterMftTopics:
    def _suite_and_embeddings(self):
        rng = np.random.default_rng(51)
        cases, rows = [], []
        for i in range(12):
            blob = i % 2
            word = "plot" if blob == 0 else "melody"
            cases.append(case_of(f"c{i}", f"{word} case {i}", label=i % 2))
            center = np.array([8.0, 0.0, 0.0]) if blob == 0 \
                else np.array([0.0, 8.0, 0.0])
            rows.append(center + rng.standard_normal(3) * 0.3)
        suite = MftSuite(name="MFT (Original)", cases=cases)
        matrix = EmbeddingMatrix(ids=[c.id for c in cases],
                                 vectors=np.vstack(rows))
        return suite, matrix

    def test_two_blob_assignments_match(self):
        suite, matrix = self._suite_and_embeddings()
        model = cluster_mft_topics(suite, matrix, k=2, seed=0)
        groups = {}
        for i, case in enumerate(suite.cases):
            groups.setdefault(i % 2, set()).add(model.assignments[case.id])
        assert groups[0] != groups[1]
        assert all(len(g) == 1 for g in groups.values())
        assert all(c.mft_topic is not None for c in suite.cases)

    def test_topic_names_from_case_texts(self):
        suite, matrix = self._suite_and_embeddings()
        model = cluster_mft_topics(suite, matrix, k=2, seed=0)
        joined = " ".join(model.topic_names)
        assert "plot" in joined and "melody" in joined

    def test_k_one_single_topic(self):
        suite, matrix = self._suite_and_embeddings()
        model = cluster_mft_topics(suite, matrix, k=1, seed=0)
        assert set(model.assignments.values()) == {0}

    def test_k_exceeding_suite_rejected(self):
        suite, matrix = self._suite_and_embeddings()
        with pytest.raises(ValueError):
            cluster_mft_topics(suite, matrix, k=13, seed=0)

    def test_deterministic(self):
        suite, matrix = self._suite_and_embeddings()
        a = cluster_mft_topics(suite, matrix, k=2, seed=7).assignments
        b = cluster_mft_topics(suite, matrix, k=2, seed=7).assignments
        assert a == b

    def test_missing_embeddings_rejected(self):
        suite, matrix = self._suite_and_embeddings()
        matrix.ids[0] = "someone-else"
        with pytest.raises(ValueError, match="missing"):
            cluster_mft_topics(suite, matrix, k=2, seed=0)


class TestManualGrouping:
    def _rules(self, tmp_path, rows):
        path = tmp_path / "rules.csv"
        path.write_text("keyword,group\n" + "".join(rows))
        return path

    def test_keyword_match(self, tmp_path):
        suite = MftSuite(name="s", cases=[
            case_of("c1", "Arrived two weeks late"),
            case_of("c2", "The plot was thin")])
        rules = self._rules(tmp_path, ["late,Shipping Speed\n",
                                       "plot,Content\n"])
        model = manual_grouping(suite, rules)
        names = model.topic_names
        assert names == ["Shipping Speed", "Content", "other"]
        assert model.assignments["c1"] == 0
        assert model.assignments["c2"] == 1

    def test_unmatched_goes_to_other(self, tmp_path):
        suite = MftSuite(name="s", cases=[case_of("c1", "nothing relevant")])
        rules = self._rules(tmp_path, ["late,Shipping Speed\n"])
        model = manual_grouping(suite, rules)
        assert model.topic_names[model.assignments["c1"]] == "other"

    def test_first_rule_wins(self, tmp_path):
        suite = MftSuite(name="s", cases=[
            case_of("c1", "late delivery and thin plot")])
        rules = self._rules(tmp_path, ["late,Shipping Speed\n", "plot,Content\n"])
        model = manual_grouping(suite, rules)
        assert model.topic_names[model.assignments["c1"]] == "Shipping Speed"

    def test_case_insensitive(self, tmp_path):
        suite = MftSuite(name="s", cases=[case_of("c1", "LATE again")])
        rules = self._rules(tmp_path, ["late,Shipping Speed\n"])
        model = manual_grouping(suite, rules)
        assert model.assignments["c1"] == 0

    def test_empty_rules_rejected(self, tmp_path):
        suite = MftSuite(name="s", cases=[case_of("c1", "x")])
        path = tmp_path / "rules.csv"
        path.write_text("keyword,group\n")
        with pytest.raises(ValueError, match="empty rules"):
            manual_grouping(suite, path)
