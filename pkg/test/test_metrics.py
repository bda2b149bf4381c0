import unittest
import math
import numpy as np
from pyvpip.metrics import gaussian_window, mae, psnr, ssim


def brute_psnr(a, b):
    total = 0.
    count = 0
    for v, w in zip(a.ravel(), b.ravel()):
        total += (v - w) ** 2
        count += 1
    return 10 * math.log10(1. / (total / count))


def brute_ssim(a, b):
    ya = 0.299 * a[:, :, 0] + 0.587 * a[:, :, 1] + 0.114 * a[:, :, 2]
    yb = 0.299 * b[:, :, 0] + 0.587 * b[:, :, 1] + 0.114 * b[:, :, 2]
    win = gaussian_window(11, 1.5)
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    values = []
    for i in range(ya.shape[0] - 10):
        for j in range(ya.shape[1] - 10):
            pa, pb = ya[i:i + 11, j:j + 11], yb[i:i + 11, j:j + 11]
            mu_a, mu_b = np.sum(win * pa), np.sum(win * pb)
            var_a = np.sum(win * (pa - mu_a) ** 2)
            var_b = np.sum(win * (pb - mu_b) ** 2)
            cov = np.sum(win * (pa - mu_a) * (pb - mu_b))
            values.append((2 * mu_a * mu_b + c1) * (2 * cov + c2) / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)))
    return np.mean(values)


class TestMetrics(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(0)

    def pair(self):
        a = self.rng.uniform(0, 1, (16, 18, 3))
        b = np.clip(a + self.rng.normal(0, 0.1, a.shape), 0, 1)
        return a, b

    def test_window(self):
        win = gaussian_window()
        self.assertEqual(win.shape, (11, 11))
        self.assertAlmostEqual(win.sum(), 1., places=12)

    def test_brute_force(self):
        for _ in range(50):
            a, b = self.pair()
            self.assertLess(abs(psnr(a, b) - brute_psnr(a, b)), 1e-6)
            self.assertLess(abs(ssim(a, b) - brute_ssim(a, b)), 1e-6)
            self.assertLess(abs(mae(a, b) - 255. * np.abs(a - b).sum() / a.size), 1e-9)

    def test_identical(self):
        a, _ = self.pair()
        self.assertEqual(psnr(a, a), np.inf)
        self.assertLess(abs(ssim(a, a) - 1.), 1e-9)
        self.assertEqual(mae(a, a), 0.)

    def test_symmetric(self):
        a, b = self.pair()
        self.assertEqual(psnr(a, b), psnr(b, a))
        self.assertAlmostEqual(ssim(a, b), ssim(b, a), places=12)

    def test_constant(self):
        a = np.full((16, 16, 3), 0.2)
        b = np.full((16, 16, 3), 0.4)
        self.assertLess(abs(ssim(a, b) - (2 * 0.08 + 1e-4) / (0.04 + 0.16 + 1e-4)), 1e-6)
        self.assertAlmostEqual(psnr(a, b), 10 * math.log10(1 / 0.04), places=9)
        self.assertAlmostEqual(mae(a, b), 51., places=9)

    def test_errors(self):
        with self.assertRaises(ValueError):
            psnr(np.zeros((8, 8, 3)), np.zeros((8, 9, 3)))
        with self.assertRaises(ValueError):
            ssim(np.zeros((10, 10, 3)), np.zeros((10, 10, 3)))


if __name__ == '__main__':
    unittest.main()
