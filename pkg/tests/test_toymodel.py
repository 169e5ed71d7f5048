import math

import numpy as np
import pytest

from mgtdetect import TokenSequence, ToyScoringModel, load_model, save_model, toy_logprob_matrix, validate


class TestToyLogprobMatrix:
    def test_order0_zero_logits_uniform(self):
        model = ToyScoringModel.zeros(0, 4)
        m = toy_logprob_matrix(model, TokenSequence((0, 1, 2)))
        assert np.allclose(m.as_dense_array(), math.log(0.25))
        assert validate(m) == []

    def test_order0_prenormalized_logits(self):
        model = ToyScoringModel(0, 2, np.array([[math.log(9.0), 0.0]]))
        m = toy_logprob_matrix(model, TokenSequence((0,)))
        probs = np.exp(m.as_dense_array()[0])
        assert probs == pytest.approx([0.9, 0.1], abs=1e-12)

    def test_order1_rows_depend_on_previous_token_only(self):
        model = ToyScoringModel.random(1, 5, scale=1.0, seed=3)
        a = toy_logprob_matrix(model, TokenSequence((2, 4, 1, 3)))
        b = toy_logprob_matrix(model, TokenSequence((2, 4, 1, 0)))
        # shared prefix (2, 4, 1) conditions rows 0..3 identically
        for i in range(4):
            assert np.array_equal(a.rows[i].logprobs, b.rows[i].logprobs)

    def test_start_padding_context(self):
        model = ToyScoringModel.random(2, 3, scale=1.0, seed=4)
        # row 0 uses (pad, pad); any two sequences share it
        a = toy_logprob_matrix(model, TokenSequence((0, 1)))
        b = toy_logprob_matrix(model, TokenSequence((2, 2)))
        assert np.array_equal(a.rows[0].logprobs, b.rows[0].logprobs)
        assert not np.array_equal(a.rows[1].logprobs, b.rows[1].logprobs)

    def test_rows_validate(self):
        model = ToyScoringModel.random(1, 6, scale=2.0, seed=5)
        seq = TokenSequence((0, 5, 3, 3, 1))
        assert validate(toy_logprob_matrix(model, seq)) == []

    def test_token_out_of_vocab(self):
        model = ToyScoringModel.zeros(1, 3)
        with pytest.raises(ValueError):
            toy_logprob_matrix(model, TokenSequence((3,)))


class TestSerialization:
    def test_round_trip(self, tmp_path):
        model = ToyScoringModel.random(1, 7, scale=0.8, seed=9)
        path = tmp_path / "model.tsm"
        save_model(model, path)
        loaded = load_model(path)
        assert loaded.order == model.order
        assert loaded.vocab == model.vocab
        assert np.array_equal(loaded.logits, model.logits)

    def test_magic_and_layout(self, tmp_path):
        model = ToyScoringModel.zeros(0, 2)
        path = tmp_path / "model.tsm"
        save_model(model, path)
        blob = path.read_bytes()
        assert blob[:4] == b"TSM1"
        # order u16 + vocab u32 + 1x2 float64 table
        assert len(blob) == 4 + 2 + 4 + 2 * 8

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.tsm"
        path.write_bytes(b"XXXX" + bytes(16))
        with pytest.raises(ValueError):
            load_model(path)
