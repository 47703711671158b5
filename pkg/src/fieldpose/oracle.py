"""Exhaustive association oracle for tiny decoding instances.

Joint candidates are the seeds of the fused maps. Two candidates p, q of the
types joined by a connection are linked with weight

    w(p, q) = max(link(p -> q), link(q -> p))
    link(p -> q) = max association score over PAF cells near p, either vector
                   orientation, whose target lands within ``link_radius`` of q

An assignment partitions the candidates into poses holding at most one
candidate per type; its score is the sum of w over all connected pairs that
share a pose. The oracle returns a maximum-score assignment, found by branch
and bound inside each connected component of the positive-weight graph.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import SkeletonSpec
from .decoder import (DecodedPose, DecoderConfig, Seed, check_geometry, joint_confidence, score_association,
                      seed_candidates, suppression_radius)
from .fields import PafField, PifField
from .fusion import HighResMap, fuse


class OracleLimitError(ValueError):
    """The instance is too large for exhaustive search."""


@dataclass(frozen=True)
class OracleLimits:
    max_seeds_per_type: int = 3
    max_active_types: int = 5
    link_radius: float | None = None  # px; defaults to the NMS minimum radius


@dataclass
class AssociationProblem:
    candidates: list[Seed]
    confidence: list[float]
    snap_radius: list[float]
    weights: dict[tuple[int, int], float] = field(default_factory=dict)

    def weight(self, u: int, v: int) -> float:
        return self.weights.get((u, v) if u < v else (v, u), 0.0)

    def total(self, groups: Sequence[frozenset]) -> float:
        s = 0.0
        for g in groups:
            members = sorted(g)
            for x in range(len(members)):
                for y in range(x + 1, len(members)):
                    s += self.weight(members[x], members[y])
        return s

    def canonical(self, groups: Sequence[frozenset]) -> set[frozenset]:
        """Split every group into the connected parts of its positive-weight subgraph.

        Merging parts that share no weighted edge leaves the score unchanged,
        so two assignments are equivalent when their canonical forms agree.
        Singletons are omitted.
        """
        out = set()
        for g in groups:
            members = sorted(g)
            edges = [(x, y) for x in range(len(members)) for y in range(x + 1, len(members))
                     if self.weight(members[x], members[y]) > 0]
            for comp in _components(len(members), edges):
                if len(comp) > 1:
                    out.add(frozenset(members[c] for c in comp))
        return out

    def snap(self, poses: Sequence[DecodedPose]) -> list[frozenset]:
        """Map decoded joints onto candidate indices.

        Each joint takes the nearest free candidate of its type within that
        candidate's suppression radius; poses are visited by descending score
        and a candidate is never used twice, so the result is a valid
        assignment. Unmatched joints are dropped.
        """
        groups = []
        taken = set()
        for pose in sorted(poses, key=lambda p: -p.score):
            members = set()
            for k in np.nonzero(pose.present)[0]:
                x, y = pose.joints[k, 0], pose.joints[k, 1]
                best, best_d = None, math.inf
                for idx, c in enumerate(self.candidates):
                    if c.keypoint_type != k or idx in taken:
                        continue
                    d = math.hypot(c.x - x, c.y - y)
                    if d <= self.snap_radius[idx] and d < best_d:
                        best, best_d = idx, d
                if best is not None:
                    members.add(best)
                    taken.add(best)
            if members:
                groups.append(frozenset(members))
        return groups


def _link(paf: PafField, ci: int, src: Seed, dst: Seed, highres: HighResMap, config: DecoderConfig,
          radius: float) -> float:
    g = paf.geometry
    half = config.w_assoc // 2
    ic, jc = int(round(src.x / g.stride)), int(round(src.y / g.stride))
    best = 0.0
    for j in range(max(0, jc - half), min(g.grid_h, jc - half + config.w_assoc)):
        for i in range(max(0, ic - half), min(g.grid_w, ic - half + config.w_assoc)):
            cell = paf.data[ci, :, j, i].astype(np.float64)
            if cell[0] <= 0:
                continue
            for assoc in (cell, cell[[0, 4, 5, 6, 1, 2, 3]]):
                tx = (i + assoc[4]) * g.stride
                ty = (j + assoc[5]) * g.stride
                if math.hypot(tx - dst.x, ty - dst.y) > radius:
                    continue
                s = score_association(assoc, (i, j), (src.x, src.y), highres, dst.keypoint_type,
                                      g.stride, config.use_b_in_decoder)
                best = max(best, s)
    return best


def build_problem(pif: PifField, paf: PafField, skeleton: SkeletonSpec,
                  config: DecoderConfig = DecoderConfig(), limits: OracleLimits = OracleLimits(),
                  highres: HighResMap | None = None) -> AssociationProblem:
    check_geometry(pif, paf, skeleton)
    if highres is None:
        highres = fuse(pif, config.fusion_config())
    seeds = seed_candidates(highres, config.seed_threshold)
    per_type: dict[int, list[int]] = {}
    for idx, s in enumerate(seeds):
        per_type.setdefault(s.keypoint_type, []).append(idx)
    if len(per_type) > limits.max_active_types:
        raise OracleLimitError(f"{len(per_type)} active keypoint types > {limits.max_active_types}")
    for k, members in per_type.items():
        if len(members) > limits.max_seeds_per_type:
            raise OracleLimitError(f"type {k} has {len(members)} seeds > {limits.max_seeds_per_type}")
    radius = config.nms_min_radius if limits.link_radius is None else limits.link_radius
    problem = AssociationProblem(
        candidates=seeds,
        confidence=[joint_confidence(highres, s.keypoint_type, s.x, s.y) for s in seeds],
        snap_radius=[suppression_radius(highres, s.keypoint_type, s.x, s.y, config) for s in seeds],
    )
    for ci, (a, b) in enumerate(skeleton.connections):
        for u in per_type.get(a, ()):
            for v in per_type.get(b, ()):
                w = max(_link(paf, ci, seeds[u], seeds[v], highres, config, radius),
                        _link(paf, ci, seeds[v], seeds[u], highres, config, radius))
                if w > 0:
                    key = (u, v) if u < v else (v, u)
                    problem.weights[key] = problem.weights.get(key, 0.0) + w
    return problem


def _components(n: int, edges) -> list[list[int]]:
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for u, v in edges:
        parent[find(u)] = find(v)
    comps: dict[int, list[int]] = {}
    for x in range(n):
        comps.setdefault(find(x), []).append(x)
    return list(comps.values())


def _solve_component(items: list[int], problem: AssociationProblem) -> tuple[float, list[frozenset]]:
    types = [problem.candidates[i].keypoint_type for i in items]
    order = sorted(range(len(items)), key=lambda t: (types[t], items[t]))
    items = [items[t] for t in order]
    types = [types[t] for t in order]
    n = len(items)
    # optimistic gain of every item: best partner per neighbouring type
    bound = []
    for t in range(n):
        best_per_type: dict[int, float] = {}
        for o in range(n):
            if types[o] == types[t]:
                continue
            w = problem.weight(items[t], items[o])
            if w > best_per_type.get(types[o], 0.0):
                best_per_type[types[o]] = w
        bound.append(sum(best_per_type.values()))
    suffix = np.concatenate((np.cumsum(bound[::-1])[::-1], [0.0]))

    best_score = -1.0
    best_groups: list[list[int]] = []
    groups: list[list[int]] = []
    group_types: list[set] = []

    def search(t: int, score: float):
        nonlocal best_score, best_groups
        if t == n:
            if score > best_score:
                best_score = score
                best_groups = [list(g) for g in groups]
            return
        if score + suffix[t] <= best_score:
            return
        item, k = items[t], types[t]
        options = []
        for gi, g in enumerate(groups):
            if k in group_types[gi]:
                continue
            options.append((sum(problem.weight(item, m) for m in g), gi))
        options.sort(key=lambda o: -o[0])
        for gain, gi in options:
            groups[gi].append(item)
            group_types[gi].add(k)
            search(t + 1, score + gain)
            groups[gi].pop()
            group_types[gi].discard(k)
        groups.append([item])
        group_types.append({k})
        search(t + 1, score)
        groups.pop()
        group_types.pop()

    search(0, 0.0)
    return best_score, [frozenset(g) for g in best_groups]


def solve(problem: AssociationProblem) -> tuple[list[frozenset], float]:
    """Maximum-score assignment and its score."""
    groups: list[frozenset] = []
    total = 0.0
    for comp in _components(len(problem.candidates), problem.weights.keys()):
        score, comp_groups = _solve_component(comp, problem)
        total += score
        groups.extend(comp_groups)
    return groups, total


def groups_to_poses(groups: Sequence[frozenset], problem: AssociationProblem, n_keypoints: int) -> list[DecodedPose]:
    poses = []
    for g in groups:
        joints = np.zeros((n_keypoints, 3))
        present = np.zeros(n_keypoints, dtype=bool)
        for idx in g:
            c = problem.candidates[idx]
            joints[c.keypoint_type] = (c.x, c.y, problem.confidence[idx])
            present[c.keypoint_type] = True
        poses.append(DecodedPose.build(joints, present))
    poses.sort(key=lambda p: -p.score)
    return poses


def brute_force_decode(pif: PifField, paf: PafField, skeleton: SkeletonSpec,
                       config: DecoderConfig = DecoderConfig(),
                       limits: OracleLimits = OracleLimits()) -> list[DecodedPose]:
    problem = build_problem(pif, paf, skeleton, config, limits)
    groups, _ = solve(problem)
    return groups_to_poses(groups, problem, skeleton.n_keypoints)


# five connected keypoint types each: arms, legs, face, torso, shoulder-arm-ear
TINY_PATTERNS = ((5, 7, 9, 6, 8), (11, 13, 15, 12, 14), (0, 1, 2, 3, 4), (5, 6, 11, 12, 7), (3, 5, 7, 9, 1))


def tiny_scene(seed: int, index: int, skeleton: SkeletonSpec, max_iou: float = 0.3):
    """A small oracle-sized scene: 1-3 poses labeling one of ``TINY_PATTERNS``."""
    from .synth import SceneParams, generate_scene, rng_for

    pattern = TINY_PATTERNS[int(rng_for(seed, index).integers(len(TINY_PATTERNS)))]
    params = SceneParams(poses_per_scene=(1, 3), height_range=(60.0, 160.0), max_iou=max_iou,
                         image_size=(320, 240), active_types=pattern)
    return generate_scene(seed, index, params, skeleton)
