import numpy as np
import pytest

from pathpde.paths import Grid, Path
from pathpde.sde import (
    DivergenceError,
    NoiseBundle,
    SdeSpec,
    bridge_refine,
    coupled_sup_error,
    euler_markov,
    euler_path_dependent,
    moment_check,
    trajectories_from_binary,
    trajectories_to_binary,
    trajectories_to_csv,
)
from pathpde.smoothing import CylindricalFunctional, Integrand, mollify

# frozen oracle: 1e7-path run of E[sup_{[0,1]} |W|^2] on the same 256-step grid
SUP_W_SQUARED_256 = 1.7430748122161719

ZERO = lambda t, x: np.zeros_like(x)
ONE = lambda t, x: np.ones_like(x)


def test_noise_block_regeneration_bit_identical():
    nb = NoiseBundle(seed=42, n_paths=1000, n_steps=37, d=2)
    full = nb.normals()
    parts = np.concatenate([nb.normals(0, 1), nb.normals(1, 450), nb.normals(450, 1000)])
    np.testing.assert_array_equal(full, parts)


def test_noise_mean_within_bound():
    nb = NoiseBundle(seed=7, n_paths=2000, n_steps=50)
    z = nb.increments(1.0 / 50)
    bound = 4.0 / np.sqrt(z.size) * np.sqrt(1.0 / 50)
    assert abs(z.mean()) <= bound


def test_noise_child_streams_differ():
    nb = NoiseBundle(seed=7, n_paths=10, n_steps=8)
    child = nb.child(1)
    assert not np.allclose(nb.normals(), child.normals())
    with pytest.raises(ValueError):
        nb.child(0)


def test_euler_zero_coefficients_constant():
    g = Grid(0.0, 1.0, 50)
    nb = NoiseBundle(1, 200, 50)
    traj = euler_markov(SdeSpec(0.0, 0.0), 0.0, 1.5, g, nb)
    assert np.all(traj.values == 1.5)


def test_euler_brownian_terminal_variance():
    g = Grid(0.0, 1.0, 100)
    n_paths = 100_000
    nb = NoiseBundle(3, n_paths, 100)
    traj = euler_markov(SdeSpec(0.0, 1.0), 0.0, 0.0, g, nb)
    xT = traj.terminal()
    var = xT.var(ddof=1)
    # chi-square spread of the sample variance: se = var * sqrt(2/(n-1))
    assert abs(var - 1.0) <= 3.0 * np.sqrt(2.0 / (n_paths - 1))
    assert abs(xT.mean()) <= 3.0 / np.sqrt(n_paths)
    assert abs((xT**2).mean() - 1.0) <= 3.0 * (xT**2).std(ddof=1) / np.sqrt(n_paths)


def test_euler_constant_drift_exact():
    g = Grid(0.5, 1.5, 64)
    nb = NoiseBundle(5, 100, 64)
    traj = euler_markov(SdeSpec(1.0, 0.0), 0.5, 2.0, g, nb)
    np.testing.assert_allclose(traj.terminal(), 3.0, atol=1e-12)


def test_euler_vector_state_martingale():
    g = Grid(0.0, 1.0, 50)
    nb = NoiseBundle(11, 20_000, 50, d=2)
    traj = euler_markov(SdeSpec(lambda t, x: np.zeros_like(x), lambda t, x: np.ones_like(x)),
                        0.0, np.array([1.0, -1.0]), g, nb)
    means = traj.terminal().mean(axis=0)
    assert np.all(np.abs(means - [1.0, -1.0]) <= 3.0 / np.sqrt(20_000))


def test_euler_divergence_guard():
    g = Grid(0.0, 1.0, 20)
    nb = NoiseBundle(5, 10, 20)
    with pytest.raises(DivergenceError, match="path"):
        euler_markov(SdeSpec(lambda t, x: x * 1e13, 0.0), 0.0, 1.0, g, nb)


def test_euler_determinism_across_workers():
    g = Grid(0.0, 1.0, 60)
    nb = NoiseBundle(9, 5000, 60)
    spec = SdeSpec(lambda t, x: -0.5 * x, 1.0)
    a = euler_markov(spec, 0.0, 0.3, g, nb, workers=1)
    b = euler_markov(spec, 0.0, 0.3, g, nb, workers=4)
    c = euler_markov(spec, 0.0, 0.3, g, nb, workers=8)
    np.testing.assert_array_equal(a.values, b.values)
    np.testing.assert_array_equal(a.values, c.values)


def test_path_dependent_zero_coefficients_extend_history():
    eta = Path.from_function(lambda x: np.cos(x), 1.0, 101)
    g = Grid(0.0, 1.0, 100)
    nb = NoiseBundle(4, 50, 100)
    traj = euler_path_dependent(SdeSpec(0.0, 0.0, path_dependent=True), 0.0, eta, g, nb)
    assert np.all(traj.values == eta.values[-1])


def test_path_dependent_degenerate_matches_markov_bitwise():
    eta = Path.constant(0.0, 1.0, 101)
    g = Grid(0.0, 1.0, 100)
    nb = NoiseBundle(21, 500, 100)
    pd = euler_path_dependent(SdeSpec(0.0, 1.0, path_dependent=True), 0.0, eta, g, nb)
    mk = euler_markov(SdeSpec(0.0, 1.0), 0.0, 0.0, g, nb)
    np.testing.assert_array_equal(pd.values, mk.values)


def test_path_dependent_exponential_growth_via_pathwise_integral():
    # drift = present value (unit integrand against the window increments)
    one = Integrand(phi=lambda u: np.ones_like(np.asarray(u, dtype=float)),
                    dphi=lambda u: np.zeros_like(np.asarray(u, dtype=float)))
    b = CylindricalFunctional(base=lambda t, F: F[:, 0], integrands=(one,))
    eta = Path.constant(1.0, 1.0, 1001)
    g = Grid(0.0, 1.0, 1000)
    nb = NoiseBundle(6, 8, 1000)
    traj = euler_path_dependent(SdeSpec(b, 0.0, path_dependent=True), 0.0, eta, g, nb)
    assert abs(traj.terminal()[0] - np.e) <= 5e-3


def test_path_dependent_window_callable_sees_rolling_slice():
    # drift = supremum of the look-back window: reachable only through the buffer
    b = lambda t, wb: wb.sup_norm()
    eta = Path.constant(1.0, 0.5, 51)
    g = Grid(0.0, 0.5, 50)
    nb = NoiseBundle(6, 4, 50)
    traj = euler_path_dependent(SdeSpec(b, 0.0, path_dependent=True), 0.0, eta, g, nb)
    # deterministic: dX = sup dt with sup starting at 1 -> X grows like exp
    assert np.all(np.diff(traj.values, axis=1) > 0)
    assert traj.terminal()[0] == pytest.approx(np.exp(0.5), abs=5e-3)


def test_coupled_identical_specs_exactly_zero():
    g = Grid(0.0, 1.0, 50)
    nb = NoiseBundle(12, 2000, 50)
    spec = SdeSpec(lambda t, x: np.sin(x), 1.0)
    est, se = coupled_sup_error(spec, spec, 0.0, 0.2, g, nb)
    assert est == 0.0


def test_coupled_drift_gap_closed_form():
    # b_n = 1/n, b = 0, sigma common: gap is deterministic (T-t)/n, sup at T
    g = Grid(0.0, 1.0, 100)
    nb = NoiseBundle(13, 20_000, 100)
    n = 5.0
    est, se = coupled_sup_error(SdeSpec(1.0 / n, 1.0), SdeSpec(0.0, 1.0), 0.0, 0.0, g, nb, p=2.0)
    assert est == pytest.approx((1.0 / n) ** 2, abs=max(3.0 * se, 1e-12))


def test_coupled_mollified_sequence_decreasing():
    g = Grid(0.0, 1.0, 100)
    nb = NoiseBundle(14, 20_000, 100)
    kinked = lambda x: -np.abs(x)
    base = SdeSpec(lambda t, x: kinked(x), 1.0)
    errs = []
    for n in (2, 8, 32):
        b_n = mollify(kinked, 1, n)
        est, _ = coupled_sup_error(SdeSpec(lambda t, x, f=b_n: f(x), 1.0), base, 0.0, 0.0, g, nb)
        errs.append(est)
    assert errs[0] > errs[1] > errs[2] > 0.0


def test_moment_check_constant_history():
    eta = Path.constant(-2.0, 1.0, 51)
    g = Grid(0.0, 1.0, 50)
    nb = NoiseBundle(15, 100, 50)
    traj = euler_path_dependent(SdeSpec(0.0, 0.0, path_dependent=True), 0.0, eta, g, nb)
    for p in (1.0, 2.0, 3.0):
        est, se = moment_check(traj, p)
        assert est == pytest.approx(2.0**p, abs=1e-12)
        assert se == 0.0


def test_moment_check_scaling_in_history_norm():
    g = Grid(0.0, 1.0, 50)
    nb = NoiseBundle(15, 64, 50)
    p = 2.0
    vals = []
    for c in (1.0, 2.0, 4.0):
        eta = Path.constant(c, 1.0, 51)
        traj = euler_path_dependent(SdeSpec(0.0, 0.0, path_dependent=True), 0.0, eta, g, nb)
        vals.append(moment_check(traj, p)[0])
    assert vals[1] / vals[0] == pytest.approx(2.0**p, rel=1e-12)
    assert vals[2] / vals[0] == pytest.approx(4.0**p, rel=1e-12)


def test_moment_check_brownian_sup_against_frozen_oracle():
    g = Grid(0.0, 1.0, 256)
    n_paths = 100_000
    nb = NoiseBundle(16, n_paths, 256)
    traj = euler_markov(SdeSpec(0.0, 1.0), 0.0, 0.0, g, nb)
    est, se = moment_check(traj, 2.0)
    assert abs(est - SUP_W_SQUARED_256) <= 4.0 * se
    # hard cap from the maximal inequality: E sup |W|^2 <= 4 E W_1^2
    assert est <= 4.0 * 1.02


def test_moment_growth_in_history_is_polynomial():
    # E sup |X|^p across growing history norms: log-log slope close to p
    g = Grid(0.0, 1.0, 50)
    nb = NoiseBundle(17, 20_000, 50)
    p = 2.0
    norms = np.array([1.0, 2.0, 4.0, 8.0])
    ests = []
    for c in norms:
        eta = Path.constant(c, 1.0, 51)
        traj = euler_path_dependent(SdeSpec(0.0, 1.0, path_dependent=True), 0.0, eta, g, nb)
        ests.append(moment_check(traj, p)[0])
    slope = np.polyfit(np.log(norms), np.log(ests), 1)[0]
    assert slope <= p + 0.1


def test_strong_order_under_bridge_refinement():
    rate = 0.5  # theoretical strong order for these coefficients is 1/2
    spec = SdeSpec(lambda t, x: -x, lambda t, x: 0.4 * np.sin(x) + 1.0)
    n_paths = 5000
    errs = []
    for n_steps in (32, 64, 128):
        g = Grid(0.0, 1.0, n_steps)
        g2 = Grid(0.0, 1.0, 2 * n_steps)
        nb = NoiseBundle(18, n_paths, n_steps)
        dW = nb.increments(g.dt)
        mid = nb.child(1).normals()
        dW2 = bridge_refine(dW, g.dt, mid)
        coarse = euler_markov(spec, 0.0, 1.0, g, nb, increments=dW)
        fine = euler_markov(spec, 0.0, 1.0, g2, NoiseBundle(18, n_paths, 2 * n_steps), increments=dW2)
        gap = np.abs(coarse.values - fine.values[:, ::2]).max(axis=1)
        errs.append(np.sqrt((gap**2).mean()))
    order = np.polyfit(np.log([1 / 32, 1 / 64, 1 / 128]), np.log(errs), 1)[0]
    assert order >= 0.4


def test_bridge_refine_halves_sum_to_parent():
    nb = NoiseBundle(19, 100, 16)
    dW = nb.increments(0.25)
    mid = nb.child(1).normals()
    fine = bridge_refine(dW, 0.25, mid)
    np.testing.assert_allclose(fine[:, 0::2] + fine[:, 1::2], dW, atol=1e-14)


def test_trajectory_dumps_roundtrip(tmp_path):
    g = Grid(0.0, 1.0, 4)
    nb = NoiseBundle(20, 3, 4)
    traj = euler_markov(SdeSpec(0.0, 1.0), 0.0, 0.0, g, nb)
    csv_file = tmp_path / "traj.csv"
    trajectories_to_csv(traj, csv_file)
    lines = csv_file.read_text().splitlines()
    assert lines[0] == "path_id,step,time,value"
    assert len(lines) == 1 + 3 * 5
    bin_file = tmp_path / "traj.bin"
    trajectories_to_binary(traj, bin_file)
    back = trajectories_from_binary(bin_file)
    np.testing.assert_array_equal(back, traj.values)
