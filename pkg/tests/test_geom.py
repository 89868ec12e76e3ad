import numpy as np
import pytest

from refrec import geom
from refrec.geom import (BehindCamera, Camera, Mask, MonitorPlane,
                         TotalInternalReflection, look_at_camera, normalize,
                         pixel_grid, project, project_batch,
                         projection_jacobian_batch, ray_through_pixel,
                         rays_through_pixels, refract, refract_batch,
                         intersect_monitor, intersect_monitor_batch)


def snell_oracle(d, n, eta):
    """Independent scalar Snell construction: rotate d in the plane of
    incidence so the sine relation holds exactly."""
    cos_i = -np.dot(d, n)
    sin_i = np.sqrt(max(0.0, 1.0 - cos_i ** 2))
    sin_t = eta * sin_i
    if sin_t > 1.0:
        return None
    cos_t = np.sqrt(1.0 - sin_t ** 2)
    if sin_i < 1e-300:
        return -n if np.dot(d, n) < 0 else n
    tangent = normalize(d + cos_i * n)
    return sin_t * tangent - cos_t * n


def random_incidence(rng):
    n = normalize(rng.normal(size=3))
    d = normalize(rng.normal(size=3))
    if np.dot(d, n) > 0:
        n = -n
    if abs(np.dot(d, n)) < 1e-6:
        d = -n
    return d, n


class TestRefract:
    def test_normal_incidence_passes_straight(self):
        d = np.array([0.0, 0.0, -1.0])
        n = np.array([0.0, 0.0, 1.0])
        t = refract(d, n, 1.0 / 1.5)
        assert np.allclose(t, d, atol=1e-15)

    def test_matches_scalar_oracle(self, rng):
        for _ in range(500):
            d, n = random_incidence(rng)
            eta = rng.uniform(0.5, 1.6)
            want = snell_oracle(d, n, eta)
            if want is None:
                with pytest.raises(TotalInternalReflection):
                    refract(d, n, eta)
            else:
                got = refract(d, n, eta)
                assert np.allclose(got, want, atol=1e-12)

    def test_sine_relation_and_coplanarity(self, rng):
        for _ in range(500):
            d, n = random_incidence(rng)
            eta = rng.uniform(0.6, 0.95)
            t = refract(d, n, eta)
            sin_i = np.linalg.norm(np.cross(d, n))
            sin_t = np.linalg.norm(np.cross(t, n))
            assert abs(eta * sin_i - sin_t) < 1e-12
            assert abs(np.dot(np.cross(d, n), t)) < 1e-12
            assert abs(np.linalg.norm(t) - 1.0) < 1e-12

    def test_reversibility(self, rng):
        for _ in range(200):
            d, n = random_incidence(rng)
            eta = 1.0 / 1.5
            t = refract(d, n, eta)
            back = refract(-t, -n, 1.0 / eta)
            assert np.allclose(back, -d, atol=1e-10)

    def test_tir_onset_at_critical_angle(self):
        eta_obj = 1.5
        crit = np.arcsin(1.0 / eta_obj)
        n = np.array([0.0, 0.0, 1.0])
        for delta, expect_tir in ((-1e-9, False), (1e-9, True)):
            ang = crit + delta
            d = np.array([np.sin(ang), 0.0, -np.cos(ang)])
            if expect_tir:
                with pytest.raises(TotalInternalReflection):
                    refract(d, n, eta_obj)
            else:
                refract(d, n, eta_obj)

    def test_batch_matches_scalar(self, rng):
        ds, ns = zip(*(random_incidence(rng) for _ in range(100)))
        d = np.array(ds)
        n = np.array(ns)
        eta = 1.5
        t, ok = refract_batch(d, n, eta)
        for i in range(100):
            try:
                want = refract(d[i], n[i], eta)
            except TotalInternalReflection:
                assert not ok[i]
                assert np.isnan(t[i]).all()
            else:
                assert ok[i]
                assert np.allclose(t[i], want, atol=1e-15)


class TestCamera:
    def make_cam(self):
        return look_at_camera([0, 0, 3.0], [0, 0, 0], [0, 1, 0],
                              60.0, 60.0, 31.5, 31.5, 64, 64)

    def test_orthonormality_enforced(self):
        with pytest.raises(ValueError):
            Camera(60, 60, 31.5, 31.5, np.eye(3) * 1.01, np.zeros(3), 64, 64)

    def test_look_at_conventions(self):
        cam = self.make_cam()
        assert np.allclose(cam.center, [0, 0, 3])
        fwd = cam.rotation[2]
        assert np.allclose(fwd, [0, 0, -1])
        down = cam.rotation[1]
        assert np.allclose(down, [0, -1, 0])

    def test_project_matches_homogeneous_matrix(self, rng):
        cam = self.make_cam()
        k = np.array([[cam.fx, 0, cam.cx],
                      [0, cam.fy, cam.cy],
                      [0, 0, 1.0]])
        p34 = k @ np.hstack([cam.rotation, cam.translation[:, None]])
        for _ in range(100):
            p = rng.normal(size=3)
            hom = p34 @ np.append(p, 1.0)
            if hom[2] <= 0:
                with pytest.raises(BehindCamera):
                    project(cam, p)
                continue
            want = hom[:2] / hom[2]
            assert np.allclose(project(cam, p), want, atol=1e-10)

    def test_project_batch_matches_scalar(self, rng):
        cam = self.make_cam()
        pts = rng.normal(size=(50, 3))
        px, z = project_batch(cam, pts)
        for i in range(50):
            if z[i] <= 0:
                assert np.isnan(px[i]).all()
            else:
                assert np.allclose(px[i], project(cam, pts[i]), atol=1e-12)

    def test_projection_jacobian_vs_fd(self, rng):
        cam = self.make_cam()
        pts = rng.normal(size=(20, 3)) * 0.5
        jac = projection_jacobian_batch(cam, pts)
        h = 1e-6
        for i in range(20):
            for j in range(3):
                pp = pts[i].copy()
                pm = pts[i].copy()
                pp[j] += h
                pm[j] -= h
                fd = (np.array(project(cam, pp)) - project(cam, pm)) / (2 * h)
                assert np.allclose(jac[i, :, j], fd, atol=1e-5)

    def test_ray_through_pixel_roundtrip(self, rng):
        cam = self.make_cam()
        for _ in range(20):
            px = rng.uniform(0, 64, size=2)
            o, d = ray_through_pixel(cam, px)
            assert np.allclose(o, cam.center)
            assert np.allclose(project(cam, o + 2.5 * d), px, atol=1e-9)

    def test_dict_roundtrip(self):
        cam = self.make_cam()
        back = Camera.from_dict(cam.to_dict())
        assert np.allclose(back.rotation, cam.rotation)
        assert np.allclose(back.translation, cam.translation)
        assert back.width == cam.width

    def test_pixel_grid_row_major(self):
        g = pixel_grid(3, 2)
        want = [[0, 0], [1, 0], [2, 0], [0, 1], [1, 1], [2, 1]]
        assert np.array_equal(g, np.array(want, dtype=float))


class TestMonitor:
    def make_plane(self):
        return MonitorPlane([-1.0, -1.0, -2.0], [0.01, 0, 0], [0, 0.01, 0],
                            200, 200)

    def test_point_at(self):
        m = self.make_plane()
        assert np.allclose(m.point_at(100, 50), [0.0, -0.5, -2.0])

    def test_axes_must_be_orthogonal(self):
        with pytest.raises(ValueError):
            MonitorPlane([0, 0, 0], [1, 0, 0], [0.1, 1, 0], 10, 10)

    def test_intersection_matches_linear_solve(self, rng):
        m = self.make_plane()
        for _ in range(100):
            o = rng.normal(size=3) * 0.3
            d = normalize(np.array([0, 0, -1.0]) + 0.3 * rng.normal(size=3))
            # Oracle: solve [u_axis | v_axis | -d] x = o - origin directly.
            a = np.column_stack([m.u_axis, m.v_axis, -d])
            u, v, t = np.linalg.solve(a, o - m.origin)
            got = intersect_monitor(m, o, d)
            if t > 0 and 0 <= u < 200 and 0 <= v < 200:
                assert got is not None
                assert np.allclose(got, (u, v), atol=1e-9)
            else:
                assert got is None

    def test_parallel_and_behind_miss(self):
        m = self.make_plane()
        o = np.zeros(3)
        assert intersect_monitor(m, o, np.array([1.0, 0, 0])) is None
        assert intersect_monitor(m, o, np.array([0.0, 0, 1.0])) is None

    def test_batch_matches_scalar(self, rng):
        m = self.make_plane()
        o = rng.normal(size=(50, 3)) * 0.3
        d = normalize(np.tile([0, 0, -1.0], (50, 1)) + rng.normal(size=(50, 3)))
        uv, ok = intersect_monitor_batch(m, o, d)
        for i in range(50):
            got = intersect_monitor(m, o[i], d[i])
            if ok[i]:
                assert np.allclose(uv[i], got)
            else:
                assert got is None


class TestMask:
    def test_from_binary_marks_boundary_both_sides(self):
        inside = np.zeros((9, 9), dtype=bool)
        inside[2:7, 2:7] = True
        m = Mask.from_binary(inside)
        assert m.values[4, 4] == geom.MASK_INSIDE
        assert m.values[0, 0] == geom.MASK_OUTSIDE
        # The band straddles the contour: the outermost inside ring and the
        # innermost outside ring are both Boundary.
        assert m.values[2, 4] == geom.MASK_BOUNDARY
        assert m.values[1, 4] == geom.MASK_BOUNDARY
        assert m.values[1, 1] == geom.MASK_BOUNDARY  # diagonal adjacency
        assert m.values[3, 4] == geom.MASK_INSIDE
        assert m.values[0, 4] == geom.MASK_OUTSIDE

    def test_chi_rounds_to_nearest_pixel(self):
        inside = np.zeros((9, 9), dtype=bool)
        inside[2:7, 2:7] = True
        m = Mask.from_binary(inside)
        assert m.chi(4.4, 4.4) == geom.MASK_INSIDE
        assert m.chi(0.4, 0.4) == geom.MASK_OUTSIDE
        assert m.chi(-3.0, 2.0) == geom.MASK_OUTSIDE
        assert m.chi(2.0, 99.0) == geom.MASK_OUTSIDE

    def test_chi_batch_matches_scalar(self, rng):
        inside = rng.random((16, 16)) > 0.5
        m = Mask.from_binary(inside)
        pts = rng.uniform(-2, 18, size=(200, 2))
        got = m.chi_batch(pts)
        want = [m.chi(x, y) for x, y in pts]
        assert np.array_equal(got, want)
