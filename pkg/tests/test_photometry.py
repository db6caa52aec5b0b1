import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nirshape import photometry as P
from nirshape.geometry import normals_from_heights
from nirshape.tensor import ShapeError


def flat_map(h=4, w=4):
    n = np.zeros((3, h, w), np.float32)
    n[2] = 1.0
    return P.NormalMap(n)


class TestLightDirection:
    def test_from_angles_is_unit(self):
        l = P.LightDirection.from_angles(30, 120)
        assert np.linalg.norm(l.l) == pytest.approx(1.0, abs=1e-9)
        assert l.l[2] == pytest.approx(np.cos(np.radians(30)))

    def test_rejects_below_horizon(self):
        with pytest.raises(ValueError):
            P.LightDirection([0.0, 1.0, 0.0])

    def test_rejects_non_unit(self):
        with pytest.raises(ValueError):
            P.LightDirection([0.0, 0.0, 2.0])

    def test_ring_has_12_well_spread_directions(self):
        rig = P.light_ring_12()
        assert len(rig) == 12
        lmat = np.stack([l.l for l in rig])
        assert np.linalg.matrix_rank(lmat) == 3
        assert np.all(lmat[:, 2] > 0)


class TestRender:
    def test_frontal_light_gives_full_radiance(self):
        img = P.render_lambertian(flat_map(), 1.0, P.LightDirection([0, 0, 1.0]))
        assert img.normalized
        assert img.values == pytest.approx(1.0)

    def test_sixty_degree_light_gives_half_radiance(self):
        l = P.LightDirection.from_angles(60, 0)
        img = P.render_lambertian(flat_map(), 1.0, l)
        assert img.values == pytest.approx(0.0, abs=1e-6)  # raw 0.5 -> encoded 0

    def test_backfacing_clamps_to_shadow(self):
        n = np.zeros((3, 2, 2), np.float32)
        n[0] = -1.0
        n[2] = 0.0
        nmap = P.NormalMap(n)
        l = P.LightDirection.from_angles(80, 0)  # mostly +x
        img = P.render_lambertian(nmap, 1.0, l)
        assert img.values == pytest.approx(-1.0)

    def test_albedo_extent_checked(self):
        with pytest.raises(ShapeError):
            P.render_lambertian(flat_map(4, 4), np.ones((2, 2)), P.LightDirection([0, 0, 1.0]))

    def test_rotation_invariance_90deg(self, rng):
        # rotating scene and light about the optical axis rotates the image
        z = rng.normal(size=(16, 16))
        n = normals_from_heights(z * 2).astype(np.float32)
        nmap = P.NormalMap(n)
        l = P.LightDirection.from_angles(40, 25)
        img = P.render_lambertian(nmap, 1.0, l).values
        # 90 deg ccw: (x,y) -> (-y,x) for vectors; grid rotates with rot90
        nr = np.empty_like(n)
        nr[0] = -np.rot90(n[1])
        nr[1] = np.rot90(n[0])
        nr[2] = np.rot90(n[2])
        lr = P.LightDirection([-l.l[1], l.l[0], l.l[2]])
        img_r = P.render_lambertian(P.NormalMap(nr), 1.0, lr).values
        np.testing.assert_allclose(img_r, np.rot90(img), atol=1e-6)


class TestPhotometricStereo:
    def test_identity_style_system_recovers_scaled_normal(self):
        # near-identity light matrix; the grazing zero-intensity row is
        # dropped by policy, three informative rows remain
        lights_raw = np.array([[1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0],
                               [0.8, 0, 0.6]])
        from nirshape import kernels
        truth = np.array([0.0, 0.6, 0.8])
        intensities = np.maximum(0.0, lights_raw @ truth)  # (0, .6, .8, .48)
        imgs = np.tile(intensities[:, None, None], (1, 2, 2))
        normals, rho, valid = kernels.photometric_solve(imgs, lights_raw)
        assert valid.all()
        np.testing.assert_allclose(normals[:, 0, 0], truth, atol=1e-6)
        np.testing.assert_allclose(rho, 1.0, atol=1e-6)

    def test_round_trip_beats_point_one_degree(self, rng):
        z = np.zeros((24, 24))
        yy, xx = np.mgrid[0:24, 0:24].astype(float)
        for _ in range(4):
            cy, cx = rng.uniform(0, 24, 2)
            s = rng.uniform(3, 7)
            z += rng.uniform(0.2, 1.0) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
        n = normals_from_heights(z * 6).astype(np.float32)
        nmap = P.NormalMap(n)
        lights = P.light_ring_12()
        imgs = [P.render_lambertian(nmap, 0.75, l).to_raw() for l in lights]
        rec, rho = P.photometric_stereo(imgs, lights)
        dots = np.clip(np.einsum("chw,chw->hw", rec.normals.astype(np.float64),
                                 n.astype(np.float64)), -1, 1)
        err = np.degrees(np.arccos(dots))[rec.valid]
        assert err.mean() < 0.1
        assert np.abs(rho[rec.valid] - 0.75).max() < 1e-3

    def test_all_dark_pixel_flagged_invalid(self):
        lights = P.light_ring_12()[:4]
        imgs = [P.NirImage(np.zeros((3, 3), np.float32), normalized=False)
                for _ in lights]
        rec, rho = P.photometric_stereo(imgs, lights)
        assert not rec.valid.any()
        np.testing.assert_array_equal(rec.normals[2], 1.0)
        np.testing.assert_array_equal(rho, 0.0)

    def test_rank_deficient_lights_rejected(self):
        l = P.LightDirection.from_angles(30, 0)
        imgs = [P.NirImage(np.ones((2, 2), np.float32), normalized=False)] * 3
        with pytest.raises(ValueError, match="rank"):
            P.photometric_stereo(imgs, [l, l, l])

    def test_needs_three_images(self):
        lights = P.light_ring_12()[:2]
        imgs = [P.NirImage(np.ones((2, 2), np.float32), normalized=False)] * 2
        with pytest.raises(ValueError):
            P.photometric_stereo(imgs, lights)

    def test_normalized_images_rejected(self):
        lights = P.light_ring_12()[:3]
        imgs = [P.NirImage(np.zeros((2, 2), np.float32), normalized=True)] * 3
        with pytest.raises(ValueError, match="raw"):
            P.photometric_stereo(imgs, lights)

    def test_noise_degrades_monotonically(self, rng):
        z = rng.normal(size=(16, 16))
        n = normals_from_heights(z * 4).astype(np.float32)
        nmap = P.NormalMap(n)
        lights = P.light_ring_12()
        clean = [P.render_lambertian(nmap, 1.0, l).to_raw().values for l in lights]
        errs = []
        for sigma in (0.0, 0.01, 0.02, 0.05):
            noisy = [P.NirImage(np.clip(c + rng.normal(0, sigma, c.shape), 0, None)
                                .astype(np.float32), normalized=False)
                     for c in clean]
            rec, _ = P.photometric_stereo(noisy, lights)
            dots = np.clip(np.einsum("chw,chw->hw",
                                     rec.normals.astype(np.float64),
                                     n.astype(np.float64)), -1, 1)
            errs.append(np.degrees(np.arccos(dots))[rec.valid].mean())
        assert errs == sorted(errs)


class TestCodec:
    def test_encode_decode_round_trip(self, rng):
        z = rng.normal(size=(8, 8))
        n = normals_from_heights(z).astype(np.float32)
        out = P.decode_normals(P.encode_normals(P.NormalMap(n)))
        np.testing.assert_allclose(out.normals, n, atol=1e-6)
        assert out.degenerate_pixels == 0

    def test_decode_renormalizes(self):
        arr = np.full((3, 1, 1), 0.2, np.float32)
        out = P.decode_normals(arr)
        np.testing.assert_allclose(out.normals[:, 0, 0], 1 / np.sqrt(3), rtol=1e-6)

    def test_decode_zero_vector_placeholder_counted(self):
        arr = np.zeros((3, 2, 2), np.float32)
        arr[:, 0, 0] = [0.5, 0, 0.6]
        out = P.decode_normals(arr)
        assert out.degenerate_pixels == 3
        np.testing.assert_array_equal(out.normals[:, 1, 1], [0, 0, 1])

    def test_decode_clamps_to_hemisphere(self):
        arr = np.zeros((3, 1, 1), np.float32)
        arr[:, 0, 0] = [0.6, 0.0, -0.8]
        out = P.decode_normals(arr)
        assert out.normals[2, 0, 0] >= 0
        np.testing.assert_allclose(out.normals[:, 0, 0], [1, 0, 0], atol=1e-6)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1))
    def test_decode_always_satisfies_invariants(self, seed):
        r = np.random.default_rng(seed)
        arr = r.uniform(-1, 1, (3, 5, 5)).astype(np.float32)
        out = P.decode_normals(arr)
        out.check_invariants()


class TestNirImage:
    def test_raw_normalized_round_trip(self, rng):
        raw = P.NirImage(rng.uniform(0, 1, (4, 4)).astype(np.float32),
                         normalized=False)
        back = raw.to_normalized().to_raw()
        np.testing.assert_allclose(back.values, raw.values, atol=1e-6)

    def test_range_validation(self):
        with pytest.raises(ValueError):
            P.NirImage(np.array([[-0.5, 2.0]], np.float32), normalized=True)
        with pytest.raises(ValueError):
            P.NirImage(np.array([[-0.5, 0.2]], np.float32), normalized=False)


class TestNormalMapInvariants:
    def test_non_unit_rejected(self):
        n = np.zeros((3, 2, 2), np.float32)
        n[2] = 1.01
        with pytest.raises(ValueError, match="norm"):
            P.NormalMap(n)

    def test_backfacing_rejected(self):
        n = np.zeros((3, 2, 2), np.float32)
        n[2] = -1.0
        with pytest.raises(ValueError):
            P.NormalMap(n)
