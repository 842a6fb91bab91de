import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from symmetry_eb import simgen, spatial
from symmetry_eb.errors import ConfigError, ShapeMismatch, UnknownGenerator


def test_linear_generator_at_origin():
    assert simgen.EBMR_GENERATORS["linear"](0.0, 0.0, 0.0) == 0.0


@pytest.mark.parametrize("t0", sorted(simgen.EBMR_GENERATORS))
def test_ebmr_ranges_and_determinism(t0):
    spec = simgen.SimSpec("ebmr", t0, 30, 25, 2.0, 4)
    a, b = simgen.gen_ebmr(spec), simgen.gen_ebmr(spec)
    assert a.x.shape == (30, 25) and np.all(a.tau == 2.0)
    assert a.x.tobytes() == b.x.tobytes() and a.z_star.tobytes() == b.z_star.tobytes()
    if t0 == "tanh":
        assert np.all(np.abs(a.z_star) < 1)
    if t0 == "reciprocal":
        assert np.all((a.z_star > 0) & (a.z_star <= 1))
    u, v, w = a.extras["u"], a.extras["v"], a.extras["w"]
    np.testing.assert_allclose(a.z_star, simgen.EBMR_GENERATORS[t0](u[:, None], v[None, :], w), atol=0)


def test_ebmr_seeds_differ():
    a = simgen.gen_ebmr(simgen.SimSpec("ebmr", "linear", 5, 5, 1.0, 0))
    b = simgen.gen_ebmr(simgen.SimSpec("ebmr", "linear", 5, 5, 1.0, 1))
    assert not np.array_equal(a.x, b.x)


def test_ebmr_uniform_marginal():
    d = simgen.gen_ebmr(simgen.SimSpec("ebmr", "linear", 10_000, 1, 1.0, 0))
    assert abs(d.extras["u"].mean() - 0.5) < 0.02


def test_unknown_generator():
    with pytest.raises(UnknownGenerator):
        simgen.SimSpec("ebmr", "quadratic")
    with pytest.raises(ConfigError):
        simgen.SimSpec("graphon")


@pytest.mark.parametrize("t0", sorted(simgen.CAEB_GENERATORS))
def test_caeb_structure(t0):
    d = simgen.gen_caeb(simgen.SimSpec("caeb", t0, 12, 9, 1.0, 2))
    assert d.row_cov.shape == (12, simgen.CAEB_ROW_DIM) and d.col_cov.shape == (9, simgen.CAEB_COL_DIM)
    assert np.all((d.col_cov > 0) & (d.col_cov < 1))
    u, v, w = d.extras["u"], d.extras["v"], d.extras["w"]
    core = simgen.CAEB_GENERATORS[t0](u[:, None], v[None, :], w)
    np.testing.assert_allclose(d.z_star, d.row_cov.sum(1)[:, None] + d.col_cov.sum(1)[None, :] + core, atol=1e-12)
    again = simgen.gen_caeb(simgen.SimSpec("caeb", t0, 12, 9, 1.0, 2))
    assert d.x.tobytes() == again.x.tobytes()


def test_caeb_zero_covariates_hook():
    d = simgen.gen_caeb(simgen.SimSpec("caeb", "linear", 6, 7, 1.0, 0), zero_covariates=True)
    u, v, w = d.extras["u"], d.extras["v"], d.extras["w"]
    np.testing.assert_array_equal(d.z_star, u[:, None] * v[None, :] + w)


def test_logistic_term_in_unit_interval():
    t = np.linspace(-30, 30, 101)
    s = simgen._sigmoid(t)
    assert np.all((s > 0) & (s < 1))


def test_caeb_covariate_marginals():
    d = simgen.gen_caeb(simgen.SimSpec("caeb", "linear", 4000, 4000, 1.0, 0))
    # t5 has variance 5/3; Beta(2, 5) has mean 2/7.
    assert abs(d.row_cov.var() - 5 / 3) < 0.15
    assert abs(d.col_cov.mean() - 2 / 7) < 0.01


def test_spatial_generator():
    d = simgen.gen_spatial(simgen.SimSpec("spatial", n=41, seed=3))
    np.testing.assert_allclose(np.diff(d.sites[:, 0]), 20 / 40, atol=1e-14)
    assert d.sites[0, 0] == -10 and d.sites[-1, 0] == 10
    assert d.beta_star.tolist() == [0.5, -1.2, 0.3]
    assert np.all(d.covariates[:, 0] == 1)
    assert spatial.kernel_eval(simgen.spatial_truth(), [0.0]) == pytest.approx(1.0, abs=1e-15)
    again = simgen.gen_spatial(simgen.SimSpec("spatial", n=41, seed=3))
    assert d.x.tobytes() == again.x.tobytes()


def test_spatial_field_variance():
    zs = np.concatenate([simgen.gen_spatial(simgen.SimSpec("spatial", n=50, seed=s)).z_star for s in range(200)])
    assert abs(zs.var() - 1.0) < 0.1


def test_spatial_needs_two_sites():
    with pytest.raises(ConfigError):
        simgen.gen_spatial(simgen.SimSpec("spatial", n=1))


def test_r_mse_examples():
    z = np.arange(6.0).reshape(2, 3)
    assert simgen.r_mse(z, z, 1.0) == 0.0
    assert simgen.r_mse(z + 1, z, 4.0) == pytest.approx(400.0)
    with pytest.raises(ShapeMismatch):
        simgen.r_mse(z.ravel(), z, 1.0)
    with pytest.raises(ShapeMismatch):
        simgen.r_mse(z, z, np.ones(4))


def test_r_mse_per_entry_tau():
    z = np.zeros(4)
    assert simgen.r_mse(np.ones(4), z, np.array([1.0, 1.0, 3.0, 3.0])) == pytest.approx(200.0)


def test_mle_r_mse_near_100_for_large_array():
    d = simgen.gen_ebmr(simgen.SimSpec("ebmr", "linear", 1000, 1000, 1.0, 0))
    assert abs(simgen.r_mse(d.x, d.z_star, d.tau) - 100) < 1


@settings(max_examples=20, deadline=None)
@given(t0=st.sampled_from(sorted(simgen.EBMR_GENERATORS)), seed=st.integers(0, 2**31), tau=st.floats(0.1, 10))
def test_generators_are_pure_functions_of_spec(t0, seed, tau):
    spec = simgen.SimSpec("ebmr", t0, 4, 3, tau, seed)
    assert simgen.generate(spec).x.tobytes() == simgen.generate(spec).x.tobytes()
