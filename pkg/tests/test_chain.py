from collections import defaultdict

import numpy as np
import pytest

from loopsim.chain import (
    BudgetError,
    CutoffError,
    ImpossibleHistoryError,
    TrajectoryRecord,
    build_transition,
    count_trajectories,
    enumerate_trajectories,
    evolve_distribution,
    filter_posterior,
    joint_two_step,
    occupancy_history,
    stationary,
    two_step_joint,
)
from loopsim.fock_core import output_distribution

from conftest import swap_unitary


def brute_force_paths(U, t):
    """All nonzero-probability PNRD histories by plain recursion."""
    out = {}

    def rec(m, hist, prob):
        if len(hist) == t:
            out[tuple(hist)] = prob
            return
        dist = output_distribution(m, U)
        for x, p in enumerate(dist):
            if p >= 1e-12:
                rec(m + 1 - x, hist + [x], prob * p)

    rec(0, [], 1.0)
    return out


class TestTransition:
    def test_column_m0_5050(self, bs5050):
        with pytest.warns(RuntimeWarning):
            model = build_transition(bs5050, "pnrd", cutoff=2)
        assert model.transition[:, 0] == pytest.approx([0.5, 0.5, 0.0])
        assert model.leak[2] > 1e-9
        assert model.warning is not None

    def test_identity_is_diagonal(self, identity):
        model = build_transition(identity, "pnrd", cutoff=6)
        assert np.allclose(model.transition[:6, :6], np.eye(6))

    def test_threshold_observation_5050(self, bs5050):
        model = build_transition(bs5050, "threshold", cutoff=40)
        assert model.observation[:, 1] == pytest.approx([0.5, 0.5])

    def test_column_stochastic(self, haar_set):
        for U in haar_set[:10]:
            for det in ("pnrd", "threshold"):
                model = build_transition(U, det, cutoff=40)
                cols = model.transition.sum(axis=0) + model.leak
                assert np.allclose(cols, 1, atol=1e-10)
                assert np.allclose(model.observation.sum(axis=0), 1, atol=1e-10)
                assert np.allclose(model.kernels.sum(axis=(0, 1)) + model.leak, 1, atol=1e-10)

    def test_at_most_one_photon_enters(self, haar_set):
        Pi = build_transition(haar_set[0], cutoff=30).transition
        assert np.all(np.tril(Pi, -2) == 0)

    def test_cutoff_validation(self, bs5050):
        with pytest.raises(ValueError):
            build_transition(bs5050, cutoff=0)


class TestEvolve:
    def test_initial_vacuum(self, bs5050):
        model = build_transition(bs5050, cutoff=20)
        assert evolve_distribution(model, 1).probs == pytest.approx([1.0])

    @pytest.mark.parametrize("t, expected", [(2, [0.5, 0.5]), (3, [0.5, 0.25, 0.25])])
    def test_hand_propagation(self, bs5050, t, expected):
        model = build_transition(bs5050, cutoff=20)
        assert evolve_distribution(model, t).probs == pytest.approx(expected)

    def test_beyond_cutoff_rejected(self, bs5050):
        model = build_transition(bs5050, cutoff=20)
        evolve_distribution(model, 21)
        with pytest.raises(CutoffError):
            evolve_distribution(model, 22)

    @pytest.mark.parametrize("t", range(1, 9))
    def test_matches_enumeration_marginal(self, bs5050, haar_set, t):
        for U in (bs5050, haar_set[1]):
            model = build_transition(U, cutoff=20)
            dp = evolve_distribution(model, t + 1).probs
            marginal = np.zeros(t + 1)
            for rec in enumerate_trajectories(U, t):
                marginal[t - sum(rec.outcomes)] += rec.probability
            assert np.abs(dp - marginal).max() < 1e-10


class TestStationary:
    def test_5050_tau_sat(self, bs5050):
        res = stationary(build_transition(bs5050, cutoff=60))
        assert res.tau_sat == pytest.approx(1.4, abs=0.05)
        assert res.lambda_max == pytest.approx(0.5, abs=1e-10)
        assert res.tau_sat_log2 == pytest.approx(1.0)

    def test_fixed_point(self, bs5050, haar_set):
        for U in (bs5050, *haar_set[:5]):
            model = build_transition(U, cutoff=60)
            try:
                res = stationary(model)
            except CutoffError:
                continue  # slowly-draining unitary; needs a larger cutoff
            pi = res.pi
            assert np.abs(model.transition @ pi - pi).sum() < 1e-12

    def test_matches_dense_eigensolver(self, bs5050, haar_set):
        for U in (bs5050, haar_set[2], haar_set[4]):
            model = build_transition(U, cutoff=60)
            try:
                res = stationary(model)
            except CutoffError:
                continue
            vals, vecs = np.linalg.eig(model.transition)
            order = np.argsort(-np.abs(vals))
            top = np.real(vecs[:, order[0]])
            top /= top.sum()
            assert np.abs(top - res.pi).sum() < 1e-9
            assert res.lambda_max == pytest.approx(abs(vals[order[1]]), abs=1e-8)

    def test_identity_degenerate(self, identity):
        res = stationary(build_transition(identity, cutoff=40))
        assert res.degenerate
        assert res.tau_sat is None
        assert res.pi[0] == 1.0

    def test_tail_violation(self):
        # a loop that almost never releases photons piles them up at the cutoff
        theta = 0.05
        U = np.array([[np.cos(theta), np.sin(theta)], [np.sin(theta), -np.cos(theta)]])
        with pytest.warns(RuntimeWarning):
            model = build_transition(U, cutoff=8)
        with pytest.raises(CutoffError):
            stationary(model)


class TestCounting:
    def test_small_counts(self, bs5050):
        assert count_trajectories(bs5050, 2) == [2, 4]

    def test_t12(self, bs5050):
        assert count_trajectories(bs5050, 12)[-1] == 218990

    def test_identity_single(self, identity):
        assert count_trajectories(identity, 7) == [1] * 7

    @pytest.mark.parametrize("t", range(1, 8))
    def test_against_recursion(self, bs5050, haar_set, t):
        for U in (bs5050, haar_set[0]):
            assert count_trajectories(U, t)[-1] == len(brute_force_paths(U, t))

    @pytest.mark.parametrize("t", range(1, 8))
    def test_threshold_against_click_strings(self, bs5050, t):
        strings = {tuple(int(x > 0) for x in h) for h in brute_force_paths(bs5050, t)}
        assert count_trajectories(bs5050, t, "threshold")[-1] == len(strings)


class TestEnumerate:
    def test_t2_table(self, bs5050):
        probs = {r.outcomes: r.probability for r in enumerate_trajectories(bs5050, 2)}
        assert probs == pytest.approx({(0, 0): 0.25, (0, 2): 0.25, (1, 0): 0.25, (1, 1): 0.25})

    def test_prefix_102_continuations(self, bs5050):
        cont = {r.outcomes[3] for r in enumerate_trajectories(bs5050, 4) if r.outcomes[:3] == (1, 0, 2)}
        assert cont == {0, 1}

    def test_identity(self, identity):
        recs = list(enumerate_trajectories(identity, 5))
        assert len(recs) == 1
        assert recs[0].outcomes == (1,) * 5
        assert recs[0].probability == pytest.approx(1.0)

    @pytest.mark.parametrize("t", range(1, 9))
    def test_bijection_and_normalisation(self, bs5050, t):
        recs = enumerate_trajectories(bs5050, t)
        assert len(recs) == count_trajectories(bs5050, t)[-1]
        assert sum(r.probability for r in recs) == pytest.approx(1.0, abs=1e-9)
        assert recs.pruned_mass == 0.0

    def test_probability_is_product_of_conditionals(self, haar_set):
        U = haar_set[5]
        oracle = brute_force_paths(U, 5)
        for rec in enumerate_trajectories(U, 5):
            assert rec.probability == pytest.approx(oracle[rec.outcomes], rel=1e-10)

    def test_prob_floor_reports_pruned_mass(self, bs5050):
        full = enumerate_trajectories(bs5050, 6)
        floor = 1e-3
        pruned = enumerate_trajectories(bs5050, 6, prob_floor=floor)
        assert len(pruned) < len(full)
        assert all(r.probability > floor for r in pruned)
        assert sum(r.probability for r in pruned) + pruned.pruned_mass == pytest.approx(1.0, abs=1e-12)

    def test_budget(self, bs5050):
        with pytest.raises(BudgetError, match="218990"):
            enumerate_trajectories(bs5050, 12, budget=1000)

    def test_threshold_probabilities_aggregate_pnrd(self, bs5050):
        agg = defaultdict(float)
        for h, p in brute_force_paths(bs5050, 6).items():
            agg[tuple(int(x > 0) for x in h)] += p
        recs = {r.outcomes: r.probability for r in enumerate_trajectories(bs5050, 6, "threshold")}
        assert recs == pytest.approx(dict(agg), abs=1e-12)


class TestFilter:
    def test_pnrd_history_102(self, bs5050):
        post = filter_posterior(build_transition(bs5050, cutoff=40), (1, 0, 2))
        assert post.t == 4
        assert post.probs == pytest.approx([1.0, 0, 0, 0])

    def test_empty_history(self, bs5050):
        assert filter_posterior(build_transition(bs5050, cutoff=40), ()).probs == pytest.approx([1.0])

    def test_threshold_click_from_vacuum(self, bs5050):
        post = filter_posterior(build_transition(bs5050, "threshold", cutoff=40), [1])
        assert set(post.support) <= {0, 1}
        assert post.probs.sum() == pytest.approx(1.0)

    def test_threshold_posterior_spreads(self, bs5050):
        # two dark counts leave m=2; a click then leaves 0, 1 or 2 photons... minus HOM-forbidden ones
        post = filter_posterior(build_transition(bs5050, "threshold", cutoff=40), [0, 0, 1])
        assert len(post.support) > 1
        assert post.probs.sum() == pytest.approx(1.0, abs=1e-10)

    def test_pnrd_posterior_is_point_mass(self, haar_set):
        U = haar_set[7]
        model = build_transition(U, cutoff=12)
        for rec in enumerate_trajectories(U, 5):
            post = filter_posterior(model, rec)
            assert post.probs[5 - sum(rec.outcomes)] == pytest.approx(1.0)

    def test_impossible_history(self, bs5050):
        with pytest.raises(ImpossibleHistoryError) as err:
            filter_posterior(build_transition(bs5050, cutoff=40), (0, 1, 0))
        assert err.value.index == 1

    def test_record_input(self, bs5050):
        model = build_transition(bs5050, cutoff=40)
        rec = TrajectoryRecord((0, 2), 0.25)
        assert filter_posterior(model, rec).probs == pytest.approx([1.0, 0, 0])


class TestJointTwoStep:
    def test_marginals(self, bs5050):
        model = build_transition(bs5050, cutoff=60)
        res = stationary(model)
        joint = joint_two_step(model, res)
        p_st = model.observation @ res.pi
        assert np.abs(joint.sum(axis=1) - p_st).max() < 1e-10
        assert np.abs(joint.sum(axis=0) - p_st).max() < 1e-10

    def test_formula(self, bs5050):
        model = build_transition(bs5050, cutoff=60)
        pi = stationary(model).pi
        P = model.emission
        direct = np.zeros((6, 6))
        for m in range(30):
            for a in range(min(m + 2, 6)):
                nxt = m - a + 1
                for b in range(min(nxt + 2, 6)):
                    direct[a, b] += pi[m] * P[a, m] * P[b, nxt]
        assert np.abs(joint_two_step(model)[:6, :6] - direct).max() < 1e-14

    def test_identity_degenerate(self, identity):
        joint = joint_two_step(build_transition(identity, cutoff=40))
        assert joint[1, 1] == pytest.approx(1.0)
        assert joint.sum() == pytest.approx(1.0)

    def test_swap_unitary_alternates(self):
        # swap: loop photons all leave, fresh photon always enters the loop
        U = swap_unitary()
        model = build_transition(U, cutoff=40)
        pis = occupancy_history(model, 4)
        assert pis[3] == pytest.approx(np.eye(41)[1])
        res = stationary(model)
        assert res.degenerate
