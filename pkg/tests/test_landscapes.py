import numpy as np
import pytest

from tsam import oracles
from tsam.datasets import (
    inject_label_noise,
    make_synthetic_classification,
    read_split_csv,
    write_split_csv,
)
from tsam.landscapes import (
    Constant,
    GlmLandscape,
    Linear,
    LogisticRegression,
    MlpLandscape,
    Quadratic,
    ToyPiecewise1D,
    ToySine1D,
    fd_grad,
)
from tsam.measures import PerturbationMeasure, quadrature_nodes
from tsam.tilt import log_mean_exp


def _rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


def random_points(landscape, n=100, scale=1.0, seed=0):
    return np.random.default_rng(seed).normal(scale=scale, size=(n, landscape.dim))


class TestToyLandscapes:
    def test_sine_values(self):
        ref = oracles.compute("toy_sine")
        L = ToySine1D()
        assert L.value([0.5]) == pytest.approx(ref["value_at_0.5"], abs=1e-15)
        assert L.grad([0.5])[0] == pytest.approx(ref["grad_at_0.5"], rel=1e-12)
        assert L.grad([0.5])[0] == pytest.approx(8 * np.pi, rel=1e-3)

    def test_sine_formula(self):
        x = np.linspace(0.2, 2.5, 50)
        expected = 2 * np.sin(4 * np.pi * x) / (2 * x) + 0.005 * (x - 1) ** 2
        np.testing.assert_array_equal(ToySine1D().values(x), expected)

    def test_sine_grad_matches_fd_on_domain(self):
        L = ToySine1D()
        for x in np.random.default_rng(0).uniform(0.2, 2.5, size=100):
            assert _rel_err(L.grad([x]), fd_grad(L, [x], h=1e-6)) <= 1e-5

    def test_sine_hessian(self):
        L = ToySine1D()
        for x in (0.3, 0.9, 2.2):
            fd = (L.grad([x + 1e-6]) - L.grad([x - 1e-6])) / 2e-6
            assert L.hessian([x])[0, 0] == pytest.approx(fd[0], rel=1e-5)

    def test_piecewise_values(self):
        ref = oracles.compute("toy_piecewise")
        L = ToyPiecewise1D()
        assert L.value([3.0]) == ref["value_at_3"]
        assert L.value([1.0]) == pytest.approx(ref["value_at_1"])

    def test_piecewise_subgradients(self):
        L = ToyPiecewise1D()
        assert L.grad([1.0])[0] == 0.0
        assert L.grad([2.0])[0] == 1.0
        assert L.grad([2.5])[0] == pytest.approx(-1.0)

    def test_piecewise_grad_matches_fd_away_from_kinks(self):
        L = ToyPiecewise1D()
        xs = np.random.default_rng(1).uniform(-1, 5, size=100)
        xs = xs[(np.abs(xs - 1) > 1e-3) & (np.abs(xs - 2) > 1e-3)]
        for x in xs:
            assert _rel_err(L.grad([x]), fd_grad(L, [x])) <= 1e-5

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            ToySine1D().value([0.5, 0.6])
        with pytest.raises(ValueError):
            Quadratic(np.eye(2)).grad([1.0])


class TestFdGrad:
    def test_quadratic(self):
        L = Quadratic([[1.0]])
        assert fd_grad(L, [2.0], h=1e-5)[0] == pytest.approx(2.0, abs=1e-8)

    def test_rejects_bad_step(self):
        with pytest.raises(ValueError):
            fd_grad(Quadratic([[1.0]]), [1.0], h=0.0)


@pytest.mark.parametrize("landscape", [
    Quadratic(np.array([[2.0, 0.3], [0.3, 0.5]]), center=[1.0, -1.0], offset=0.2),
    Linear([1.5, -2.0], offset=0.3),
    GlmLandscape("logistic", [0.3, 0.8]),
    GlmLandscape("quadratic", [0.1, -0.4, 0.2]),
], ids=["quadratic", "linear", "glm-logistic", "glm-quadratic"])
def test_grad_matches_fd(landscape):
    for th in random_points(landscape):
        assert _rel_err(landscape.grad(th), fd_grad(landscape, th)) <= 1e-5


class TestGlm:
    def test_value_definition(self):
        L = GlmLandscape("logistic", [0.2, 0.7])
        th = np.array([0.5, -1.0])
        assert L.value(th) == pytest.approx(np.sum(np.log1p(np.exp(th))) - th @ [0.2, 0.7])

    def test_from_statistics(self):
        stats = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        np.testing.assert_allclose(GlmLandscape.from_statistics("quadratic", stats).t_bar, [2 / 3, 2 / 3])

    def test_link_hessian_psd(self):
        L = GlmLandscape("logistic", [0.1, 0.2])
        for th in random_points(L, scale=5):
            assert np.linalg.eigvalsh(L.hessian(th)).min() >= 0

    def test_tilted_quadratic_glm_strongly_convex(self):
        L = GlmLandscape("quadratic", [0.3, -0.2])
        nodes, w = quadrature_nodes(PerturbationMeasure("uniform_ball", 0.5), 2, 101)
        rng = np.random.default_rng(3)
        h = 1e-3
        for t in (0.0, 1.0, 10.0):
            for _ in range(10):
                th, u = rng.normal(size=2), rng.normal(size=2)
                u /= np.linalg.norm(u)
                f = lambda s: log_mean_exp(L.values(th + s * u + nodes), t, w)  # noqa: E731
                second = (f(h) - 2 * f(0.0) + f(-h)) / h**2
                assert second >= 1 - 1e-3

    def test_tilted_piecewise_keeps_lipschitz_constant(self):
        L = ToyPiecewise1D()
        eps = np.linspace(-0.2, 0.2, 41)
        grid = np.linspace(-0.5, 1.75, 4001)
        for t in (0.0, 1.0, 10.0, 100.0):
            vals = np.array([log_mean_exp(L.values(x + eps), t) for x in grid])
            assert np.max(np.abs(np.diff(vals)) / np.diff(grid)) <= 1 + 1e-6


class TestLogisticRegression:
    def setup_method(self):
        rng = np.random.default_rng(0)
        self.X = rng.normal(size=(40, 3))
        self.y = (rng.uniform(size=40) < 0.5).astype(int)

    def test_grad_matches_fd(self):
        L = LogisticRegression(self.X, self.y)
        for th in random_points(L):
            assert _rel_err(L.grad(th), fd_grad(L, th)) <= 1e-5

    def test_batch_selects_rows(self):
        L = LogisticRegression(self.X, self.y)
        sub = LogisticRegression(self.X[:10], self.y[:10])
        th = np.array([0.3, -0.2, 0.1])
        assert L.value(th, batch=np.arange(10)) == pytest.approx(sub.value(th))
        np.testing.assert_allclose(L.grad(th, batch=np.arange(10)), sub.grad(th))

    def test_clip_bounds_losses(self):
        L = LogisticRegression(self.X, self.y, clip=0.5)
        th = np.array([5.0, -5.0, 5.0])
        assert L.value(th) <= 0.5
        assert 0 < L.clamp_fraction(th) <= 1
        assert _rel_err(L.grad(th + 0.01), fd_grad(L, th + 0.01, h=1e-7)) <= 1e-4

    def test_vectorised_values(self):
        L = LogisticRegression(self.X, self.y)
        ths = random_points(L, 5)
        np.testing.assert_allclose(L.values(ths), [L.value(t) for t in ths])

    def test_hessian(self):
        L = LogisticRegression(self.X, self.y)
        th = np.array([0.2, 0.1, -0.3])
        fd = np.stack([(L.grad(th + 1e-6 * e) - L.grad(th - 1e-6 * e)) / 2e-6 for e in np.eye(3)], axis=1)
        np.testing.assert_allclose(L.hessian(th), fd, rtol=1e-5, atol=1e-8)


class TestMlp:
    def setup_method(self):
        ds = make_synthetic_classification(n=60, seed=3)
        self.L = MlpLandscape(ds.X_train, ds.y_train, 4, hidden=(8, 6))

    def test_dimension(self):
        assert self.L.dim == (2 * 8 + 8) + (8 * 6 + 6) + (6 * 4 + 4)
        assert MlpLandscape(np.zeros((3, 2)), [0, 1, 2], 4).dim == 2 * 32 + 32 + 32 * 32 + 32 + 32 * 4 + 4

    def test_grad_matches_fd(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            th = self.L.init(rng) + 0.1 * rng.normal(size=self.L.dim)
            assert _rel_err(self.L.grad(th), fd_grad(self.L, th, h=1e-6)) <= 1e-4

    def test_loss_nonnegative(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            assert self.L.value(3 * rng.normal(size=self.L.dim)) >= 0

    def test_batched_values(self):
        rng = np.random.default_rng(2)
        ths = rng.normal(size=(70, self.L.dim))
        np.testing.assert_allclose(self.L.values(ths), [self.L.value(t) for t in ths], rtol=1e-12)
        batch = np.array([0, 5, 7])
        np.testing.assert_allclose(self.L.values(ths[:3], batch), [self.L.value(t, batch) for t in ths[:3]])

    def test_label_smoothing_floor(self):
        # smoothed targets keep the loss above the target entropy
        X, y = np.array([[0.0, 0.0]]), np.array([1])
        L = MlpLandscape(X, y, 2, hidden=(2,), label_smoothing=0.1)
        T = np.array([0.05, 0.95])
        assert L.value(np.zeros(L.dim)) >= -(T * np.log(T)).sum()


class TestDatasets:
    def test_shapes_and_labels(self):
        ds = make_synthetic_classification(n=1000, d=2, classes=4, seed=0)
        assert ds.X_train.shape == (1000, 2)
        assert ds.X_test.shape == (500, 2)
        assert set(np.unique(ds.y_train)) <= set(range(4))

    def test_deterministic(self):
        a = inject_label_noise(make_synthetic_classification(seed=5), 0.2, seed=1)
        b = inject_label_noise(make_synthetic_classification(seed=5), 0.2, seed=1)
        assert a.equals(b)

    def test_noise_exact_count(self):
        ds = make_synthetic_classification(n=1000, seed=0)
        noisy = inject_label_noise(ds, 0.2, seed=0)
        flipped = noisy.y_train != ds.y_train
        assert flipped.sum() == 200
        np.testing.assert_array_equal(noisy.y_test, ds.y_test)
        np.testing.assert_array_equal(noisy.y_val, ds.y_val)
        np.testing.assert_array_equal(noisy.clean_y_train, ds.y_train)

    @pytest.mark.parametrize("fraction, n", [(0.37, 333), (0.05, 99), (0.999, 1000)])
    def test_noise_floor_count(self, fraction, n):
        ds = make_synthetic_classification(n=n, seed=1)
        noisy = inject_label_noise(ds, fraction, seed=2)
        assert (noisy.y_train != ds.y_train).sum() == int(np.floor(fraction * n))

    def test_zero_noise_unchanged(self):
        ds = make_synthetic_classification(seed=0)
        assert inject_label_noise(ds, 0.0).equals(ds)

    def test_fraction_one_rejected(self):
        with pytest.raises(ValueError):
            inject_label_noise(make_synthetic_classification(seed=0), 1.0)

    def test_csv_round_trip(self, tmp_path):
        ds = make_synthetic_classification(n=20, seed=0)
        path = write_split_csv(ds, "train", tmp_path / "train.csv")
        assert path.read_text().splitlines()[0] == "x0,x1,label"
        X, y = read_split_csv(path)
        np.testing.assert_array_equal(X, ds.X_train)
        np.testing.assert_array_equal(y, ds.y_train)

    def test_unknown_split(self):
        with pytest.raises(ValueError):
            make_synthetic_classification(n=5, seed=0).split("dev")

    def test_constant_landscape(self):
        L = Constant(1.5, dim=3)
        assert L.value(np.ones(3)) == 1.5
        np.testing.assert_array_equal(L.grad(np.ones(3)), 0.0)
