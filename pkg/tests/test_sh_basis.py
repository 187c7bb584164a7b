import math
import os
import tempfile
import unittest

import numpy as np

from sh_basis import (
    FOUR_PI,
    Direction,
    OrderIndex,
    SphereKind,
    assoc_legendre,
    build_dictionary,
    fibonacci_grid,
    gauss_product_grid,
    i_power,
    load_dictionary,
    mdp,
    mdp_matrix,
    mode_strength,
    mode_strength_matrix,
    n_coeffs,
    order_of_flat,
    sh_matrix,
    sph_harm,
    spherical_bessel_j,
    spherical_hankel_h1,
)
from shd_config import ShdConfigError, ShdIOError, ShdNumericError


def random_directions(count, seed=0):
    rng = np.random.default_rng(seed)
    theta = np.arccos(1.0 - 2.0 * rng.uniform(size=count))
    phi = 2.0 * np.pi * rng.uniform(size=count)
    return theta, phi


class IndexingTests(unittest.TestCase):
    def test_flat_index_round_trip_and_order_of_flat(self):
        for p in range(n_coeffs(4)):
            idx = OrderIndex.from_flat(p)
            self.assertEqual(idx.flat, p)
            self.assertEqual(order_of_flat(4)[p], idx.n)

    def test_invalid_index_rejected(self):
        with self.assertRaises(ShdConfigError):
            OrderIndex(1, 2)

    def test_i_power_is_exact(self):
        self.assertEqual(i_power(0), 1.0)
        self.assertEqual(i_power(1), 1j)
        self.assertEqual(i_power(2), -1.0)
        self.assertEqual(i_power(7), -1j)


class DirectionTests(unittest.TestCase):
    def test_azimuth_wraps_and_elevation_validated(self):
        self.assertAlmostEqual(Direction(1.0, -np.pi / 2).phi, 3 * np.pi / 2)
        with self.assertRaises(ShdConfigError):
            Direction(4.0, 0.0)

    def test_from_vector(self):
        direction = Direction.from_vector(np.array([0.0, 2.0, 0.0]))
        self.assertAlmostEqual(direction.theta_deg, 90.0)
        self.assertAlmostEqual(direction.phi_deg, 90.0)
        np.testing.assert_allclose(direction.unit_vector, [0.0, 1.0, 0.0], atol=1e-15)


class LegendreTests(unittest.TestCase):
    def test_known_values_without_condon_shortley(self):
        x = 0.3
        self.assertAlmostEqual(assoc_legendre(1, 1, x), math.sqrt(1 - x * x), places=14)
        self.assertAlmostEqual(assoc_legendre(1, 1, x, condon_shortley=True), -math.sqrt(1 - x * x), places=14)
        self.assertAlmostEqual(assoc_legendre(2, 0, 0.5), -0.125, places=14)
        self.assertAlmostEqual(assoc_legendre(2, 2, x), 3.0 * (1 - x * x), places=13)

    def test_domain_errors(self):
        with self.assertRaises(ShdNumericError):
            assoc_legendre(2, 1, 1.5)
        with self.assertRaises(ShdConfigError):
            assoc_legendre(1, 2, 0.0)


class SphericalHarmonicTests(unittest.TestCase):
    def test_low_order_closed_forms(self):
        north = Direction(0.0, 0.0)
        self.assertAlmostEqual(sph_harm(OrderIndex(0, 0), north), 1.0 / math.sqrt(FOUR_PI))
        self.assertAlmostEqual(sph_harm(OrderIndex(1, 0), north), math.sqrt(3.0 / FOUR_PI))
        equator = Direction(np.pi / 2, np.pi / 2)
        expected = math.sqrt(3.0 / (8.0 * np.pi)) * 1j
        self.assertAlmostEqual(sph_harm(OrderIndex(1, 1), equator), expected)

    def test_negative_m_is_conjugate(self):
        direction = Direction(0.7, 2.2)
        for n in range(1, 4):
            for m in range(1, n + 1):
                self.assertAlmostEqual(
                    sph_harm(OrderIndex(n, -m), direction), np.conj(sph_harm(OrderIndex(n, m), direction))
                )

    def test_matrix_matches_scalar_evaluation(self):
        theta, phi = random_directions(5, seed=3)
        matrix = sh_matrix(3, theta, phi)
        for q in range(5):
            for p in range(n_coeffs(3)):
                value = sph_harm(OrderIndex.from_flat(p), Direction(theta[q], phi[q]))
                self.assertAlmostEqual(matrix[q, p], value, places=12)

    def test_orthonormality_on_product_quadrature(self):
        theta, phi, weights = gauss_product_grid(8, 16)
        self.assertAlmostEqual(float(np.sum(weights)), FOUR_PI, places=12)
        basis = sh_matrix(3, theta, phi)
        gram = basis.conj().T @ (weights[:, np.newaxis] * basis)
        np.testing.assert_allclose(gram, np.eye(n_coeffs(3)), atol=1e-3)

    def test_addition_theorem(self):
        a = Direction(0.4, 1.1)
        b = Direction(2.0, 4.0)
        cos_gamma = float(np.dot(a.unit_vector, b.unit_vector))
        ya = sh_matrix(4, a.theta, a.phi)[0]
        yb = sh_matrix(4, b.theta, b.phi)[0]
        for n in range(5):
            block = slice(n * n, (n + 1) * (n + 1))
            total = np.sum(ya[block] * np.conj(yb[block]))
            expected = (2 * n + 1) / FOUR_PI * assoc_legendre(n, 0, cos_gamma)
            self.assertAlmostEqual(total.real, expected, places=12)
            self.assertAlmostEqual(total.imag, 0.0, places=12)


class BesselAndModeStrengthTests(unittest.TestCase):
    def test_j0_closed_form(self):
        xi = np.array([0.5, 1.0, 3.0])
        np.testing.assert_allclose(spherical_bessel_j(0, xi), np.sin(xi) / xi, rtol=1e-14)

    def test_hankel_singular_at_zero(self):
        with self.assertRaises(ShdNumericError):
            spherical_hankel_h1(1, 0.0)

    def test_rigid_mode_strength_wronskian_identity(self):
        xi = np.linspace(0.3, 5.0, 25)
        for n in range(5):
            expected = 1j / (xi**2 * spherical_hankel_h1(n, xi, derivative=True))
            np.testing.assert_allclose(mode_strength(n, xi, SphereKind.RIGID), expected, rtol=1e-8)

    def test_open_mode_strength_is_bessel(self):
        xi = np.array([0.2, 1.7])
        np.testing.assert_allclose(mode_strength(2, xi, "open"), spherical_bessel_j(2, xi))

    def test_rigid_mode_strength_singular_at_zero(self):
        with self.assertRaises(ShdNumericError):
            mode_strength(0, 0.0, SphereKind.RIGID)

    def test_matrix_uses_dc_limit(self):
        values = mode_strength_matrix(2, np.array([0.0, 1.0]), SphereKind.RIGID)
        np.testing.assert_allclose(values[0], [1.0, 0.0, 0.0])
        self.assertAlmostEqual(values[1, 1], mode_strength(1, 1.0, SphereKind.RIGID))

    def test_unknown_kind(self):
        with self.assertRaises(ShdConfigError):
            SphereKind.parse("hemisphere")


class ModalDirectionalPatternTests(unittest.TestCase):
    def test_norm_is_direction_independent(self):
        theta, phi = random_directions(1000, seed=11)
        for order in range(5):
            norms = np.linalg.norm(mdp_matrix(order, theta, phi), axis=1)
            np.testing.assert_allclose(norms, math.sqrt(FOUR_PI) * (order + 1), rtol=1e-9)

    def test_block_norms_follow_order(self):
        pattern = mdp(Direction(1.2, 0.3), 3)
        for n in range(4):
            self.assertAlmostEqual(np.linalg.norm(pattern.block(n)), math.sqrt(FOUR_PI * (2 * n + 1)), places=10)
        self.assertAlmostEqual(pattern.coeffs[0], math.sqrt(FOUR_PI))


class DictionaryTests(unittest.TestCase):
    def test_evaluation_grid_entry_count(self):
        dictionary = build_dictionary(3.0, 2.0, 3)
        self.assertEqual(len(dictionary), 10622)
        self.assertEqual(dictionary.patterns.shape, (10622, 16))
        self.assertFalse(dictionary.patterns.flags.writeable)
        self.assertEqual(dictionary.direction(0).theta, 0.0)
        self.assertEqual(dictionary.direction(len(dictionary) - 1).theta, np.pi)

    def test_coarse_grid_entry_count(self):
        self.assertEqual(len(build_dictionary(90.0, 90.0, 1)), 6)

    def test_invalid_grid_and_order(self):
        with self.assertRaises(ShdConfigError):
            build_dictionary(7.0, 2.0, 3)
        with self.assertRaises(ShdConfigError):
            build_dictionary(3.0, 0.0, 3)
        with self.assertRaises(ShdConfigError):
            build_dictionary(3.0, 2.0, 9)

    def test_checksum_is_reproducible(self):
        self.assertEqual(build_dictionary(10.0, 10.0, 2).checksum(), build_dictionary(10.0, 10.0, 2).checksum())
        self.assertNotEqual(
            build_dictionary(10.0, 10.0, 2).checksum(),
            build_dictionary(10.0, 10.0, 2, condon_shortley=True).checksum(),
        )

    def test_cache_round_trip(self):
        dictionary = build_dictionary(10.0, 10.0, 2)
        with tempfile.TemporaryDirectory() as tmp_dir:
            path = os.path.join(tmp_dir, "dict.npz")
            dictionary.save(path)
            loaded = load_dictionary(path, expected_order=2)
        self.assertEqual(loaded.checksum(), dictionary.checksum())
        np.testing.assert_array_equal(loaded.patterns, dictionary.patterns)

    def test_cache_rejects_mismatches(self):
        dictionary = build_dictionary(10.0, 10.0, 2, condon_shortley=True)
        with tempfile.TemporaryDirectory() as tmp_dir:
            path = os.path.join(tmp_dir, "dict.npz")
            dictionary.save(path)
            with self.assertRaises(ShdIOError):
                load_dictionary(path)
            with self.assertRaises(ShdConfigError):
                load_dictionary(path, expected_order=3, expected_convention="acn-cs")

            corrupt = os.path.join(tmp_dir, "corrupt.npz")
            with np.load(path) as data:
                fields = {key: data[key] for key in data.files}
            fields["patterns"] = fields["patterns"] * 2.0
            with open(corrupt, "wb") as file:
                np.savez(file, **fields)
            with self.assertRaises(ShdIOError):
                load_dictionary(corrupt, expected_convention="acn-cs")

            with self.assertRaises(ShdIOError):
                load_dictionary(os.path.join(tmp_dir, "missing.npz"))


class GridTests(unittest.TestCase):
    def test_fibonacci_grid(self):
        theta, phi, weights = fibonacci_grid(32)
        self.assertEqual(theta.size, 32)
        self.assertAlmostEqual(float(np.sum(weights)), FOUR_PI)
        self.assertTrue(np.all((theta > 0) & (theta < np.pi)))


if __name__ == "__main__":
    unittest.main()
