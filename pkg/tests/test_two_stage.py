"""Two-stage block code: symbol matrix, decoding, recursive resolution,
and parity with the three-stage scheme at small T."""

from itertools import product

import numpy as np
import pytest

from hetcount.core import PopulationSpec, RngBank, SlotOutcome, derive_config
from hetcount.three_stage import ABSENT, AMBIGUOUS, PRESENT, run_3ss_trial, sym3_matrix
from hetcount.two_stage import (
    build_sym2_matrix,
    class_codes,
    decode_block_2ss,
    eta,
    plan_resolution,
    resolve_block_2ss,
    resolver_lut,
    run_2ss_bb,
    run_2ss_trial,
    sigma_slots,
)

E = SlotOutcome.EMPTY.value
SA = SlotOutcome.SINGLE_ALPHA.value
SB = SlotOutcome.SINGLE_BETA.value
C = SlotOutcome.COLLISION.value


class TestMatrix:
    def test_t4(self):
        m = build_sym2_matrix(4)
        assert m.rows == (("alpha", None), ("alpha", "alpha"),
                          (None, "beta"), ("beta", "beta"))

    def test_t5(self):
        m = build_sym2_matrix(5)
        assert m.slots == 2
        assert m.rows[4] == ("beta", "alpha")
        assert len(set(m.rows)) == 5

    def test_small_t_degenerates(self):
        assert build_sym2_matrix(2).rows == sym3_matrix(2)
        assert build_sym2_matrix(3).rows == sym3_matrix(3)

    def test_rows_distinct_all_t(self):
        for T in range(2, 17):
            m = build_sym2_matrix(T)
            assert len(set(m.rows)) == T
            assert m.slots == sigma_slots(T)

    def test_slot_counts(self):
        assert [sigma_slots(T) for T in range(2, 9)] == [1, 2, 2, 2, 3, 3, 4]
        assert eta(6) == 3 and eta(7) == 3

    def test_invalid_t(self):
        with pytest.raises(ValueError):
            build_sym2_matrix(1)


class TestDecode:
    def test_all_empty(self):
        m = build_sym2_matrix(4)
        assert decode_block_2ss((E, E), m) == (ABSENT,) * 4

    def test_single_beta_collision(self):
        # Slot 1 has one beta (type 4's first symbol); slot 2 collides, so
        # type 3 must also be there: type 3 present, exactly one type 4.
        m = build_sym2_matrix(4)
        assert decode_block_2ss((SB, C), m) == (ABSENT, ABSENT, PRESENT, PRESENT)

    def test_single_alpha_collision(self):
        # Exactly one of type 1 / type 2 is active but stage 1 cannot say
        # which; type 3 present, type 4 absent.
        m = build_sym2_matrix(4)
        assert decode_block_2ss((SA, C), m) == (AMBIGUOUS, AMBIGUOUS,
                                                PRESENT, ABSENT)


class TestResolution:
    def test_no_ambiguity_no_extra(self):
        res = resolve_block_2ss((1, 0, 2, 0), 4)
        # outcome (SingleAlpha, Collision) is ambiguous, pick a clean one
        res = resolve_block_2ss((0, 0, 1, 0), 4)
        assert res.extra_slots == 0 and res.steps == ()
        assert res.presence == (False, False, True, False)

    def test_partial_ambiguity_single_probe(self):
        # (SingleAlpha, Collision): one probe slot separates type 1 from 2.
        res = resolve_block_2ss((1, 0, 2, 0), 4)
        assert res.extra_slots == 1
        assert len(res.steps) == 1 and res.steps[0].kind == "probe"
        assert res.steps[0].types == (1,)
        assert res.presence == (True, False, True, False)

    def test_all_collision_t5_groups(self):
        res = resolve_block_2ss((2, 2, 2, 2, 2), 5)
        groups = [s.types for s in res.steps if s.kind == "subblock"]
        assert groups == [(1, 2, 3), (4, 5)]
        assert res.presence == (True,) * 5

    def test_all_collision_small_t_follows_three_stage(self):
        res = resolve_block_2ss((2, 2, 0), 3)
        kinds = [s.kind for s in res.steps]
        assert kinds == ["stage2", "stage3"]
        assert res.extra_slots == 3  # 1 stage-2 slot + 2 dedicated slots
        assert res.presence == (True, True, False)
        res = resolve_block_2ss((1, 2, 2), 3)
        assert res.extra_slots == 1
        assert res.presence == (True, True, True)

    def test_plan_resolution(self):
        plan = plan_resolution([(0, 0, 0, 0), (1, 0, 2, 0)], 4)
        assert plan[0] is None
        assert plan[1] is not None

    def test_exhaustive_soundness_small_t(self):
        for T in range(2, 7):
            for classes in product((0, 1, 2), repeat=T):
                res = resolve_block_2ss(classes, T)
                assert res.presence == tuple(c > 0 for c in classes)
                assert res.extra_slots >= 0

    def test_random_soundness_large_t(self):
        rng = np.random.default_rng(0)
        for T in (7, 8):
            for _ in range(300):
                classes = tuple(int(x) for x in rng.integers(0, 3, T))
                res = resolve_block_2ss(classes, T)
                assert res.presence == tuple(c > 0 for c in classes)

    def test_recursion_terminates_at_larger_t(self):
        res = resolve_block_2ss((2,) * 8, 8)
        assert res.presence == (True,) * 8
        assert res.extra_slots > 0

    def test_lut_matches_resolver(self):
        T = 4
        lut = resolver_lut(T)
        counts = np.array([[0, 0, 1, 0], [1, 0, 2, 0], [2, 2, 2, 2]])
        codes = class_codes(counts)
        lut.ensure(np.unique(codes))
        for row, code in zip(counts, codes):
            res = resolve_block_2ss(tuple(np.minimum(row, 2)), T)
            assert lut.extra[code] == res.extra_slots
            assert (lut.presence[code] == np.array(res.presence)).all()


class TestRunners:
    def test_delegates_to_three_stage_for_small_t(self):
        pop = PopulationSpec.fixed((40, 30, 20), n_all=(64,) * 3)
        cfg = derive_config(0.03, 0.2, pop.n_all)
        res2 = run_2ss_trial(pop, cfg, RngBank(5))
        res3 = run_3ss_trial(pop, cfg, RngBank(5))
        assert res2.j == res3.j
        assert res2.ledger == res3.ledger

    def test_trial_soundness_and_ledger(self):
        pop = PopulationSpec.fixed((30, 20, 25, 40, 10), n_all=(64,) * 5)
        cfg = derive_config(0.03, 0.2, pop.n_all)
        for seed in range(10):
            res = run_2ss_trial(pop, cfg, RngBank(seed))
            counts = np.zeros((cfg.t_T, 5), dtype=np.int64)
            for b in range(1, 6):
                blocks = res.frame.chosen[b]
                counts[:, b - 1] = np.bincount(blocks,
                                               minlength=cfg.t_T + 1)[1:]
            assert (res.frame.presence == (counts > 0)).all()
            assert res.ledger.stage1 == sigma_slots(5) * cfg.t_T
            assert res.ledger.stage2 == int(res.frame.extra_per_block.sum())
            for b in range(1, 6):
                assert (res.energy.idle(b) >= 0).all()
                assert np.allclose(res.energy.energy(b, cfg),
                                   res.ledger.total)

    def test_bb_zero_participation(self):
        pop = PopulationSpec.fixed((100,) * 4, n_all=(100,) * 4)
        cfg = derive_config(0.03, 0.2, pop.n_all)
        rough = {b: 10 ** 9 for b in range(1, 5)}
        res = run_2ss_bb(pop, rough, cfg, RngBank(0))
        assert all(res.z[b] >= cfg.ell - 1 for b in range(1, 5))
        assert res.ledger.stage1 == sigma_slots(4) * cfg.ell

    def test_bb_total_increases_in_n2(self):
        cfg = derive_config(0.03, 0.2, (3000,) * 4)
        means = []
        for n2 in (500, 1500, 3000):
            n = (500, n2, 500, 500)
            pop = PopulationSpec.fixed(n, n_all=(3000,) * 4)
            totals = [run_2ss_bb(pop, dict(enumerate(n, 1)), cfg,
                                 RngBank(seed)).ledger.total
                      for seed in range(30)]
            means.append(np.mean(totals))
        assert means[0] < means[1] < means[2]
