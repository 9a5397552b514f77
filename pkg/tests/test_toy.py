from math import comb

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bihalf import toy
from bihalf.toy import (SolutionSpace, ToyNet, binomial_counts, emit_solution_space_csv,
                        fingerprints, make_grid, popcount, solution_keys, solution_space_rows,
                        write_pgm)


@pytest.fixture(scope="module")
def space():
    return SolutionSpace(32)


class TestPacking:
    @given(st.integers(0, 4095))
    def test_round_trip(self, bits):
        assert ToyNet.from_bits(bits).to_bits() == bits

    def test_bit_order(self):
        net = ToyNet.from_bits(1 << 9)
        assert net.w2[0] == -1 and (net.w1 == 1).all() and (net.b1 == 1).all()
        net = ToyNet.from_bits(1 << 1)
        assert net.w1[0, 1] == -1

    def test_popcount_is_negative_count(self):
        bits = np.arange(4096)
        neg = (toy.unpack(bits) < 0).sum(axis=1)
        np.testing.assert_array_equal(popcount(bits), neg)


class TestCombinations:
    def test_binomials(self):
        assert binomial_counts()[6] == 924 == comb(12, 6)
        assert sum(binomial_counts()) == 4096

    def test_slices_partition_everything(self, space):
        assert space.all().combinations == 4096
        assert [r.combinations for r in space.table()] == binomial_counts()

    def test_bad_ratio(self, space):
        with pytest.raises(ValueError):
            space.ratio(13)


class TestFingerprints:
    def test_vectorised_matches_scalar_network(self):
        grid = make_grid(9)
        rng = np.random.default_rng(0)
        bits = rng.choice(4096, 64, replace=False)
        fast = fingerprints(grid, bits, chunk=7)
        for b, f in zip(bits, fast):
            np.testing.assert_array_equal(f, ToyNet.from_bits(int(b)).decide(grid))

    def test_grid_bounds(self):
        g = make_grid(5, 1.0)
        assert g.shape == (25, 2)
        assert g.min() == -1.0 and g.max() == 1.0
        np.testing.assert_array_equal(g[:5, 1], -1.0)

    def test_negating_output_weights_complements_labeling(self):
        # sigmoid(-a) = 1 - sigmoid(a), so flipping w2 swaps the classes
        grid = make_grid(16)
        bits = np.arange(4096)
        fps = fingerprints(grid, bits)
        flipped = fingerprints(grid, bits ^ (0b111 << 9))
        np.testing.assert_array_equal(flipped, ~fps)

    def test_negating_all_bits_is_not_a_complement(self):
        grid = make_grid(16)
        bits = np.arange(4096)
        same = (fingerprints(grid, bits ^ 0xFFF) == ~fingerprints(grid, bits)).all(axis=1)
        assert 0 < same.mean() < 1

    def test_all_positive_net_is_constant(self):
        f = ToyNet.from_bits(0).decide(make_grid(8))
        assert f.all()


class TestCriteria:
    def test_boundary_merges_complements(self):
        f = np.array([[True, False, False], [False, True, True], [True, True, True]])
        keys = solution_keys(f, "boundary")
        assert keys[0] == keys[1] and keys[2] is None
        raw = solution_keys(f, "labeling")
        assert len(set(raw)) == 3

    def test_unknown(self):
        with pytest.raises(ValueError):
            solution_keys(np.zeros((1, 4), dtype=bool), "area")

    def test_single_net_counts_under_labeling(self):
        assert SolutionSpace(16, criterion="labeling").ratio(0).unique == 1
        assert SolutionSpace(16).ratio(0).unique == 0


class TestSolutionSpace:
    @pytest.mark.parametrize("res", [32, 64])
    def test_peak_at_equal_ratio(self, res):
        table = SolutionSpace(res).table()
        uniq = [r.unique for r in table]
        assert int(np.argmax(uniq)) == 6
        assert all(uniq[6] > uniq[k] for k in range(13) if k != 6)

    def test_bihalf_keeps_most_solutions(self, space):
        assert space.ratio(6).unique / space.all().unique >= 0.8

    def test_published_counts_at_reference_grid(self):
        s = SolutionSpace(64, bound=2.0)
        assert (s.all().unique, s.ratio(6).unique) == (76, 66)

    def test_monotone_in_resolution(self):
        totals = [SolutionSpace(r).all().unique for r in (16, 32, 64)]
        assert totals == sorted(totals)

    def test_uniform_sign_nets_draw_no_boundary(self, space):
        # with every w2 of one sign and positive hidden units the output never changes class
        uniq = [r.unique for r in space.table()]
        assert uniq[0] == uniq[12] == 0


class TestOutput:
    def test_csv(self, tmp_path):
        rows = solution_space_rows((16,))
        path = emit_solution_space_csv(rows, tmp_path / "toy.csv")
        lines = path.read_text().splitlines()
        assert lines[0].split(",") == list(toy.TOY_COLUMNS)
        assert len(lines) == 14
        assert sum(int(l.split(",")[4]) for l in lines[1:]) == 4096

    def test_pgm(self, tmp_path):
        fp = ToyNet.from_bits(0b100000000001).decide(make_grid(8))
        data = write_pgm(fp, 8, tmp_path / "f.pgm").read_bytes()
        assert data.startswith(b"P5\n8 8\n255\n")
        assert len(data) == len(b"P5\n8 8\n255\n") + 64
