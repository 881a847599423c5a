import numpy as np
import numpy.testing as npt
import pytest

from canonface import frontality, linalg
from canonface.errors import DataError
from canonface.frontality import (
    COMBINED,
    LITERAL,
    MIRRORED,
    RANK,
    SYMMETRY,
    FrontalityConfig,
    flip_h,
    frontality_measure,
    rank_images,
    score_images,
    select_canonical,
    symmetry_term,
)

from oracles import frobenius_sq_loops, mirror_asym_loops


def face(rng):
    return rng.random((64, 64))


def symmetric_face(rng):
    left = rng.random((64, 32))
    return np.hstack([left, left[:, ::-1]])


class TestSymmetryTerm:
    def test_mirror_symmetric_is_zero(self):
        img = symmetric_face(np.random.default_rng(0))
        assert symmetry_term(img, MIRRORED) == 0.0

    def test_identity_matrix_image(self):
        assert symmetry_term(np.eye(64), MIRRORED) == pytest.approx(64.0)

    def test_matches_loop_oracle(self):
        img = face(np.random.default_rng(5))
        npt.assert_allclose(symmetry_term(img, MIRRORED),
                            mirror_asym_loops(img), rtol=1e-12)

    def test_literal_mode_equals_whole_image_energy(self):
        img = face(np.random.default_rng(6))
        npt.assert_allclose(symmetry_term(img, LITERAL),
                            frobenius_sq_loops(img), rtol=1e-12)

    def test_flip_invariance(self):
        img = face(np.random.default_rng(7))
        npt.assert_allclose(symmetry_term(flip_h(img), MIRRORED),
                            symmetry_term(img, MIRRORED), rtol=1e-12)

    def test_zero_iff_mirror_symmetric(self):
        rng = np.random.default_rng(8)
        sym = symmetric_face(rng)
        assert symmetry_term(sym) < 1e-12
        broken = sym.copy()
        broken[10, 3] = (broken[10, 3] + 0.5) % 1.0
        assert symmetry_term(broken) > 1e-6

    def test_wrong_size_rejected(self):
        with pytest.raises(DataError, match="64x64"):
            symmetry_term(np.zeros((32, 64)))

    def test_unknown_mode_rejected(self):
        with pytest.raises(DataError, match="mode"):
            symmetry_term(np.zeros((64, 64)), "diagonal")


class TestFrontalityMeasure:
    def test_all_ones_lambda_one(self):
        s = frontality_measure(np.ones((64, 64)), FrontalityConfig(lam=1.0))
        assert s.symmetry_term == pytest.approx(0.0, abs=1e-10)
        assert s.nuclear_term == pytest.approx(64.0, abs=1e-8)
        assert s.score == pytest.approx(-64.0, abs=1e-8)

    def test_zero_image_scores_zero(self):
        for lam in (0.0, 0.02, 3.0):
            s = frontality_measure(np.zeros((64, 64)), FrontalityConfig(lam=lam))
            assert s.score == 0.0

    def test_matches_term_composition(self):
        img = face(np.random.default_rng(1))
        cfg = FrontalityConfig(lam=0.7)
        s = frontality_measure(img, cfg, image_id="x")
        npt.assert_allclose(s.symmetry_term, mirror_asym_loops(img), rtol=1e-12)
        npt.assert_allclose(s.nuclear_term, linalg.nuclear_norm(img), rtol=1e-12)
        assert s.score == s.symmetry_term - 0.7 * s.nuclear_term
        assert s.image_id == "x"

    def test_batch_matches_single(self):
        rng = np.random.default_rng(2)
        imgs = [(f"i{k}", face(rng)) for k in range(4)]
        cfg = FrontalityConfig()
        batch = score_images(imgs, cfg)
        for (iid, img), got in zip(imgs, batch):
            want = frontality_measure(img, cfg, iid)
            assert got.image_id == want.image_id
            npt.assert_allclose(got.score, want.score, atol=1e-10)


class TestConfig:
    def test_negative_lambda_rejected(self):
        with pytest.raises(DataError):
            FrontalityConfig(lam=-0.1)

    def test_nan_lambda_rejected(self):
        with pytest.raises(DataError):
            FrontalityConfig(lam=float("nan"))

    def test_bad_mode_rejected(self):
        with pytest.raises(DataError):
            FrontalityConfig(symmetry_mode="vertical")


class TestSelectCanonical:
    def test_single_image(self):
        img = face(np.random.default_rng(3))
        assert select_canonical([("only", img)], FrontalityConfig()) == "only"

    def test_symmetric_rank_one_beats_noisy(self):
        rng = np.random.default_rng(4)
        clean = np.clip(np.outer(np.linspace(0.2, 0.9, 64),
                                 np.ones(64)), 0, 1)
        noisy = face(rng)
        cfg = FrontalityConfig(lam=1.0)
        got = select_canonical([("noisy", noisy), ("clean", clean)], cfg)
        assert got == "clean"

    def test_tie_breaks_to_smaller_id(self):
        img = face(np.random.default_rng(9))
        assert select_canonical([("b", img), ("a", img)], FrontalityConfig()) == "a"

    def test_permutation_invariant(self):
        rng = np.random.default_rng(10)
        imgs = [(f"i{k}", face(rng)) for k in range(6)]
        cfg = FrontalityConfig()
        want = select_canonical(imgs, cfg)
        for _ in range(5):
            rng.shuffle(imgs)
            assert select_canonical(imgs, cfg) == want

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            select_canonical([], FrontalityConfig())


class TestRankImages:
    def build(self, rng, n=5):
        return [(f"i{k}", face(rng)) for k in range(n)]

    def test_symmetry_order_ascending(self):
        scored = rank_images(self.build(np.random.default_rng(11)),
                             FrontalityConfig(), SYMMETRY)
        terms = [s.symmetry_term for s in scored]
        assert terms == sorted(terms)

    def test_rank_order_descending_nuclear(self):
        scored = rank_images(self.build(np.random.default_rng(12)),
                             FrontalityConfig(), RANK)
        terms = [s.nuclear_term for s in scored]
        assert terms == sorted(terms, reverse=True)

    def test_combined_first_matches_select(self):
        imgs = self.build(np.random.default_rng(13))
        cfg = FrontalityConfig()
        scored = rank_images(imgs, cfg, COMBINED)
        assert scored[0].image_id == select_canonical(imgs, cfg)

    def test_lambda_does_not_change_symmetry_or_rank_order(self):
        imgs = self.build(np.random.default_rng(14))
        for criterion in (SYMMETRY, RANK):
            orders = set()
            for lam in (0.0, 0.02, 1.0, 50.0):
                scored = rank_images(imgs, FrontalityConfig(lam=lam), criterion)
                orders.add(tuple(s.image_id for s in scored))
            assert len(orders) == 1

    def test_combined_winner_moves_to_high_nuclear_as_lambda_grows(self):
        # flat: symmetric (asym 0), nuclear 32; eye: asym 64, nuclear 64.
        # scores cross at lam = 2, so the sharper image wins for lam > 2.
        flat = np.full((64, 64), 0.5)
        eye = np.eye(64)
        winners = [
            select_canonical([("flat", flat), ("eye", eye)],
                             FrontalityConfig(lam=lam))
            for lam in (0.0, 1.0, 1.9, 2.1, 5.0)
        ]
        assert winners == ["flat", "flat", "flat", "eye", "eye"]
        # once the high-nuclear image wins it keeps winning: monotone switch
        assert winners == sorted(winners, key=lambda w: w == "eye")

    def test_unknown_criterion(self):
        with pytest.raises(DataError):
            rank_images(self.build(np.random.default_rng(15)),
                        FrontalityConfig(), "zigzag")
