import numpy as np
import pytest

from lerp import autodiff as ad
from lerp.embedding import (
    PAD_ID,
    UNK_ID,
    EmbeddingTable,
    Vocab,
    embed_entities,
    embed_note,
    load_pretrained,
    save_text,
)
from lerp.exceptions import DataError, ParseError

from oracles import entity_mean_loop


@pytest.fixture
def table():
    return ad.constant(EmbeddingTable(np.random.default_rng(0).normal(size=(10, 4))).matrix)


def test_vocab_reserved_ids_and_unknown():
    v = Vocab(["a", "b", "a"])
    assert len(v) == 4
    assert v.id("a") == 2 and v.id("b") == 3
    assert v.id("zzz") == UNK_ID
    assert v.token(PAD_ID) == "<pad>"
    assert Vocab.from_tokens(v.tokens) == v


def test_padding_row_forced_to_zero():
    t = EmbeddingTable(np.ones((3, 2)))
    assert np.all(t.matrix[PAD_ID] == 0)


def test_embed_note_padding_gives_zero_columns(table):
    np.testing.assert_array_equal(embed_note(table, [0, 0]).value, np.zeros((4, 2)))


def test_embed_note_single_token(table):
    np.testing.assert_array_equal(embed_note(table, [7]).value[:, 0], table.value[7])


def test_embed_note_columns_are_rows(table):
    ids = np.random.default_rng(1).integers(0, 10, size=5)
    E = embed_note(table, ids).value
    for n, t in enumerate(ids):
        assert E[:, n].tobytes() == table.value[t].tobytes()


def test_embed_note_out_of_range_names_record(table):
    with pytest.raises(DataError, match="rec-9"):
        embed_note(table, [3, 10], record_id="rec-9")


def test_entity_single_token_unchanged(table):
    np.testing.assert_array_equal(embed_entities(table, [[5]]).value[:, 0], table.value[5])


def test_entity_two_tokens_average(table):
    out = embed_entities(table, [[2, 3]]).value[:, 0]
    np.testing.assert_allclose(out, (table.value[2] + table.value[3]) / 2, atol=1e-15)


def test_entities_match_loop(table):
    ents = [[2], [3, 4, 0], [1, 9, 9, 6]]
    np.testing.assert_allclose(embed_entities(table, ents).value, entity_mean_loop(table.value, ents), atol=1e-14)


def test_empty_entity_rejected(table):
    with pytest.raises(DataError):
        embed_entities(table, [[2], [0, 0]])


def test_single_token_entities_equal_note_embedding(table):
    ids = [4, 2, 8]
    np.testing.assert_array_equal(embed_entities(table, [[t] for t in ids]).value, embed_note(table, ids).value)


def test_load_pretrained_round_trip(tmp_path):
    path = tmp_path / "vec.txt"
    path.write_text("2 4\nalpha 0.1 0.2 0.3 0.4\nbeta -1 2 -3 4.5\n")
    vocab, table = load_pretrained(path)
    assert len(vocab) == 4
    assert not table.trainable
    np.testing.assert_array_equal(table.matrix[vocab.id("alpha")], [0.1, 0.2, 0.3, 0.4])
    np.testing.assert_array_equal(table.matrix[vocab.id("beta")], [-1, 2, -3, 4.5])
    out = tmp_path / "again.txt"
    save_text(out, vocab, table)
    vocab2, table2 = load_pretrained(out)
    assert vocab2 == vocab
    assert table2.matrix.tobytes() == table.matrix.tobytes()


def test_load_pretrained_random_table_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    vocab = Vocab([f"t{i}" for i in range(20)])
    table = EmbeddingTable(rng.normal(size=(len(vocab), 6)))
    save_text(tmp_path / "v.txt", vocab, table)
    _, loaded = load_pretrained(tmp_path / "v.txt")
    assert loaded.matrix[2:].tobytes() == table.matrix[2:].tobytes()


def test_load_pretrained_empty_file(tmp_path):
    (tmp_path / "e.txt").write_text("")
    with pytest.raises(ParseError):
        load_pretrained(tmp_path / "e.txt")


def test_load_pretrained_duplicate_token(tmp_path):
    (tmp_path / "d.txt").write_text("2 2\nfoo 1 2\nfoo 3 4\n")
    with pytest.raises(ParseError, match="foo"):
        load_pretrained(tmp_path / "d.txt")


def test_load_pretrained_inconsistent_dim_reports_line(tmp_path):
    (tmp_path / "d.txt").write_text("2 2\nfoo 1 2\nbar 3\n")
    with pytest.raises(ParseError, match=":3:"):
        load_pretrained(tmp_path / "d.txt")


def test_load_pretrained_bad_number(tmp_path):
    (tmp_path / "d.txt").write_text("1 2\nfoo 1 x\n")
    with pytest.raises(ParseError, match=":2:"):
        load_pretrained(tmp_path / "d.txt")
