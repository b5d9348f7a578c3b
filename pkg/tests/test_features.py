import numpy as np
import pytest

from conftest import textured_rgb
from refill.features import (Keypoint, MatchSet, detect_keypoints,
                             match_descriptors)


def white_square(size=96, half=16):
    img = np.zeros((size, size, 3))
    c = size // 2
    img[c - half:c + half, c - half:c + half] = 1.0
    return img


class TestDetect:
    def test_constant_image_empty(self):
        assert detect_keypoints(np.full((64, 64, 3), 0.5)) == []

    def test_square_corners_found(self):
        img = white_square()
        kps = detect_keypoints(img)
        assert len(kps) >= 4
        c, half = 48, 16
        corners = [(c - half, c - half), (c + half, c - half),
                   (c - half, c + half), (c + half, c + half)]
        hit = 0
        for cx, cy in corners:
            d = min(np.hypot(k.x - cx, k.y - cy) for k in kps)
            hit += d <= 6.0
        assert hit == 4

    def test_exclusion_covering_square_empty(self):
        img = white_square()
        excl = np.zeros((96, 96))
        excl[16:80, 16:80] = 1.0
        assert detect_keypoints(img, exclusion=excl) == []

    def test_coords_in_bounds_and_unit_descriptors(self):
        img = textured_rgb(80, 100, seed=5)
        kps = detect_keypoints(img)
        assert len(kps) > 10
        for k in kps:
            assert 0 <= k.x < 100 and 0 <= k.y < 80
            assert np.linalg.norm(k.descriptor) == pytest.approx(1.0, abs=1e-6)

    def test_max_keypoints_cap(self):
        img = textured_rgb(128, 128, seed=9)
        kps = detect_keypoints(img, max_keypoints=20)
        assert len(kps) <= 20

    def test_deterministic(self):
        img = textured_rgb(64, 64, seed=3)
        a = detect_keypoints(img)
        b = detect_keypoints(img)
        assert len(a) == len(b)
        for ka, kb in zip(a, b):
            assert ka.x == kb.x and ka.y == kb.y
            assert np.array_equal(ka.descriptor, kb.descriptor)


def _kp(x, desc):
    d = np.asarray(desc, dtype=np.float64)
    d = d / np.linalg.norm(d)
    return Keypoint(x=float(x), y=0.0, scale=1.0, orientation=0.0,
                    response=1.0, descriptor=d)


class TestMatch:
    def test_identity_matching(self, rng):
        kps_a = [_kp(i, rng.uniform(size=8) + 3 * np.eye(8)[i % 8]) for i in range(6)]
        kps_b = [Keypoint(k.x, k.y, k.scale, k.orientation, k.response,
                          k.descriptor.copy()) for k in kps_a]
        m = match_descriptors(kps_a, kps_b)
        assert len(m) == len(kps_a)
        got = {(int(i), int(j)) for i, j, _ in m.pairs}
        assert got == {(i, i) for i in range(6)}

    def test_tied_distances_rejected(self):
        # two identical candidates in b: d1 == d2, ratio test must reject
        a = [_kp(0, [1, 0, 0, 0])]
        b = [_kp(0, [0, 1, 0, 0]), _kp(5, [0, 1, 0, 0])]
        assert len(match_descriptors(a, b)) == 0

    def test_planted_pairs_exact(self, rng):
        dim = 16
        planted = [rng.uniform(size=dim) + 5 * np.eye(dim)[i] for i in range(10)]
        a = [_kp(i, planted[i]) for i in range(10)]
        b = [_kp(i, planted[i]) for i in range(10)]
        b += [_kp(100 + i, rng.uniform(size=dim) + 5 * np.eye(dim)[10 + i])
              for i in range(5)]
        m = match_descriptors(a, b)
        assert {(int(i), int(j)) for i, j, _ in m.pairs} == {(i, i) for i in range(10)}

    def test_mutual_symmetry(self):
        img_a = textured_rgb(72, 72, seed=11)
        img_b = textured_rgb(72, 72, seed=11)
        ka = detect_keypoints(img_a)
        kb = detect_keypoints(img_b)
        m_ab = match_descriptors(ka, kb)
        m_ba = match_descriptors(kb, ka)
        ab = {(int(i), int(j)) for i, j, _ in m_ab.pairs}
        ba = {(int(j), int(i)) for i, j, _ in m_ba.pairs}
        assert ab == ba

    def test_empty_inputs(self):
        assert len(match_descriptors([], [])) == 0
        m = MatchSet.empty()
        assert len(m) == 0 and m.points_t.shape == (0, 2)


class TestExclusionContract:
    def test_matched_points_outside_hole(self):
        img = textured_rgb(96, 96, seed=21)
        hole = np.zeros((96, 96))
        hole[30:66, 30:66] = 1.0
        masked = img * (1 - hole[..., None])
        kps_t = detect_keypoints(masked, exclusion=hole)
        kps_s = detect_keypoints(img)
        m = match_descriptors(kps_t, kps_s)
        assert len(m) > 0
        for x, y in m.points_t:
            assert hole[int(round(y)), int(round(x))] == 0.0
