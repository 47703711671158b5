import itertools

import numpy as np
import pytest

from fieldpose.core import Keypoint, Pose, Scene, Visibility
from fieldpose.decoder import DecoderConfig, Seed, decode
from fieldpose.encoder import encode
from fieldpose.oracle import (AssociationProblem, OracleLimitError, OracleLimits, brute_force_decode,
                              build_problem, solve, tiny_scene)
from fieldpose.synth import SceneParams, generate_scene

UNL = Keypoint(0.0, 0.0, Visibility.UNLABELED)


def _pose(points, area=6400.0, instance_id=0):
    kps = [UNL] * 17
    for k, (x, y) in points.items():
        kps[k] = Keypoint(float(x), float(y))
    return Pose(tuple(kps), area, instance_id)


def naive_optimum(problem):
    """Enumerate every labeling (restricted growth strings) and keep the best feasible one."""
    n = len(problem.candidates)
    types = [c.keypoint_type for c in problem.candidates]
    best = -1.0

    def rgs(prefix, top):
        if len(prefix) == n:
            yield prefix
            return
        for label in range(top + 2):
            yield from rgs(prefix + [label], max(top, label))

    for labels in rgs([], -1):
        groups = {}
        for idx, lab in enumerate(labels):
            groups.setdefault(lab, []).append(idx)
        if any(len({types[i] for i in g}) != len(g) for g in groups.values()):
            continue
        score = sum(problem.weight(u, v) for g in groups.values() for u, v in itertools.combinations(g, 2))
        best = max(best, score)
    return best


def random_problem(rng, n_types=3, per_type=2):
    cands = [Seed(k, float(rng.uniform(0, 100)), float(rng.uniform(0, 100)), 1.0)
             for k in range(n_types) for _ in range(per_type)]
    p = AssociationProblem(cands, [1.0] * len(cands), [3.0] * len(cands))
    for u, v in itertools.combinations(range(len(cands)), 2):
        if cands[u].keypoint_type != cands[v].keypoint_type and rng.random() < 0.6:
            p.weights[(u, v)] = float(rng.random())
    return p


class TestSolver:
    @pytest.mark.parametrize("seed", range(25))
    def test_branch_and_bound_is_optimal(self, seed):
        rng = np.random.default_rng(seed)
        problem = random_problem(rng, n_types=int(rng.integers(2, 4)), per_type=int(rng.integers(1, 4)))
        groups, total = solve(problem)
        np.testing.assert_allclose(total, naive_optimum(problem), rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(problem.total(groups), total, rtol=1e-12, atol=1e-12)
        # valid partition: every candidate once, one per type per group
        seen = sorted(i for g in groups for i in g)
        assert seen == list(range(len(problem.candidates)))
        for g in groups:
            ts = [problem.candidates[i].keypoint_type for i in g]
            assert len(ts) == len(set(ts))

    def test_canonical_splits_unweighted_merges(self):
        cands = [Seed(k, 0.0, 0.0, 1.0) for k in range(4)]
        p = AssociationProblem(cands, [1.0] * 4, [3.0] * 4, {(0, 1): 0.5, (2, 3): 0.25})
        assert p.canonical([frozenset({0, 1, 2, 3})]) == {frozenset({0, 1}), frozenset({2, 3})}
        assert p.total([frozenset({0, 1, 2, 3})]) == p.total([frozenset({0, 1}), frozenset({2, 3})])

    def test_empty(self):
        assert solve(AssociationProblem([], [], [])) == ([], 0.0)


class TestBruteForceDecode:
    def test_single_pose_matches_decode(self, skeleton):
        p = _pose({5: (60.0, 40.0), 7: (70.0, 90.0), 9: (75.0, 140.0)})
        pif, paf = encode(Scene(160, 180, (p,)), skeleton)
        greedy = decode(pif, paf, skeleton)
        oracle = brute_force_decode(pif, paf, skeleton)
        assert len(greedy) == len(oracle) == 1
        np.testing.assert_array_equal(oracle[0].present, greedy[0].present)
        np.testing.assert_allclose(oracle[0].joints, greedy[0].joints, atol=1e-6)

    def test_two_separated_poses_match(self, skeleton):
        a = _pose({5: (40.0, 40.0), 7: (40.0, 90.0), 9: (45.0, 140.0)}, instance_id=0)
        b = _pose({5: (200.0, 40.0), 7: (205.0, 90.0), 9: (200.0, 140.0)}, instance_id=1)
        pif, paf = encode(Scene(260, 180, (a, b)), skeleton)
        problem = build_problem(pif, paf, skeleton)
        groups, total = solve(problem)
        snapped = problem.snap(decode(pif, paf, skeleton))
        assert problem.canonical(snapped) == problem.canonical(groups)
        assert len(groups) == 2 and all(len(g) == 3 for g in groups)

    def test_crossing_limbs(self, skeleton):
        # two left arms whose upper arms cross
        a = _pose({5: (40.0, 40.0), 7: (100.0, 100.0), 9: (100.0, 150.0)}, instance_id=0)
        b = _pose({5: (100.0, 40.0), 7: (40.0, 100.0), 9: (40.0, 150.0)}, instance_id=1)
        pif, paf = encode(Scene(160, 180, (a, b)), skeleton)
        problem = build_problem(pif, paf, skeleton)
        _, total = solve(problem)
        greedy_total = problem.total(problem.snap(decode(pif, paf, skeleton)))
        assert total >= greedy_total - 1e-12

    def test_limits(self, skeleton):
        scene = generate_scene(0, 0, SceneParams(poses_per_scene=(4, 4)), skeleton)
        pif, paf = encode(scene, skeleton)
        with pytest.raises(OracleLimitError):
            brute_force_decode(pif, paf, skeleton)
        with pytest.raises(OracleLimitError):
            brute_force_decode(pif, paf, skeleton, limits=OracleLimits(max_seeds_per_type=10, max_active_types=5))

    @pytest.mark.parametrize("index", range(12))
    def test_greedy_never_beats_oracle(self, skeleton, index):
        scene = tiny_scene(3, index, skeleton)
        pif, paf = encode(scene, skeleton)
        for config in (DecoderConfig(), DecoderConfig(use_b_in_decoder=False)):
            problem = build_problem(pif, paf, skeleton, config)
            _, total = solve(problem)
            assert problem.total(problem.snap(decode(pif, paf, skeleton, config))) <= total + 1e-9

    def test_snap_is_a_valid_assignment(self, skeleton):
        scene = tiny_scene(3, 5, skeleton)
        pif, paf = encode(scene, skeleton)
        problem = build_problem(pif, paf, skeleton)
        groups = problem.snap(decode(pif, paf, skeleton))
        flat = [i for g in groups for i in g]
        assert len(flat) == len(set(flat))
