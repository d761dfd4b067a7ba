import numpy as np
import pytest
from fractions import Fraction
from hypothesis import given, settings
from hypothesis import strategies as st

from clbm.lattice import AllFluid, GridSpec, Q, SphereSolid, l1_inverse, l2_inverse, l3_inverse
from clbm.lbm import PopulationField, SimConfig, collide, equilibrium, step, stream
from clbm import carleman as cm

TAU = 0.6
RNG = np.random.default_rng(7)


def random_state(scale=0.1, rng=RNG, nodes=1):
    parts = []
    for _ in range(nodes):
        u = rng.uniform(-0.05, 0.05, size=3)
        f = equilibrium(1.0, u) * (1.0 + scale * rng.uniform(-1, 1, size=Q))
        parts.append(f)
    return np.concatenate(parts)


class TestEntryFunctions:
    def test_s_diagonal_minus_one(self):
        grid = GridSpec(4, 4, 4)
        oracle = AllFluid()
        m = ((1, 1, 1), 3)
        assert cm.s_entry(grid, oracle, m, m) == -1.0

    def test_s_zero_velocity_row_and_column(self):
        grid = GridSpec(4, 4, 4)
        oracle = SphereSolid((2, 2, 2), 1.1)
        x, y = (0, 0, 0), (1, 0, 0)
        for j in range(Q):
            assert cm.s_entry(grid, oracle, (x, 26), (y, j)) == 0.0
            assert cm.s_entry(grid, oracle, (y, j), (x, 26)) == 0.0

    def test_s_single_node_grid_cancels(self):
        grid = GridSpec(1, 1, 1)
        x = (0, 0, 0)
        for i in range(Q):
            assert cm.s_entry(grid, AllFluid(), (x, i), (x, i)) == 0.0

    def test_f1_rest_diagonal_value(self):
        x = (0, 0, 0)
        got = cm.f1_entry((x, 26), (x, 26), TAU)
        assert got == pytest.approx((-1 + 8 / 27) / TAU)
        assert round(got, 5) == -1.17284
        exact = cm.f1_entry((x, 26), (x, 26), Fraction(3, 5), exact=True)
        assert exact == Fraction(-19, 27) / Fraction(3, 5)

    def test_locality_returns_zero_not_error(self):
        a, b = (0, 0, 0), (1, 0, 0)
        assert cm.f1_entry((a, 0), (b, 0), TAU) == 0.0
        assert cm.f2_entry_dense((a, 0), ((a, 1), (b, 2)), TAU) == 0.0
        assert cm.f3_entry_dense((a, 0), ((a, 1), (a, 2), (b, 3)), TAU) == 0.0

    def test_exact_matches_float(self):
        x = (0, 0, 0)
        rng = np.random.default_rng(5)
        for _ in range(200):
            i, j, k, l = rng.integers(0, Q, size=4)
            pairs = [
                (cm.f2_entry_dense((x, i), ((x, j), (x, k)), TAU),
                 cm.f2_entry_dense((x, i), ((x, j), (x, k)), Fraction(3, 5), exact=True)),
                (cm.f2_entry_sparse((x, i), ((x, j), (x, k)), TAU),
                 cm.f2_entry_sparse((x, i), ((x, j), (x, k)), Fraction(3, 5), exact=True)),
                (cm.f3_entry_dense((x, i), ((x, j), (x, k), (x, l)), TAU),
                 cm.f3_entry_dense((x, i), ((x, j), (x, k), (x, l)), Fraction(3, 5), exact=True)),
                (cm.f3_entry_sparse((x, i), ((x, j), (x, k), (x, l)), TAU),
                 cm.f3_entry_sparse((x, i), ((x, j), (x, k), (x, l)), Fraction(3, 5), exact=True)),
            ]
            for flt, exact in pairs:
                assert flt == pytest.approx(float(exact), abs=1e-14)

    def test_dense_and_sparse_agree_on_symmetric_vectors(self):
        f = random_state()
        q2 = np.kron(f, f)
        q3 = np.kron(q2, f)
        np.testing.assert_allclose(
            cm.f2_block(TAU, "dense") @ q2, cm.f2_block(TAU, "sparse") @ q2, rtol=1e-12
        )
        np.testing.assert_allclose(
            cm.f3_block(TAU, "dense") @ q3, cm.f3_block(TAU, "sparse") @ q3, rtol=1e-12
        )

    def test_sparse_support_within_dense_support(self):
        # the quadratic sparse variant rescales the dense coefficient in
        # place, so containment holds column by column
        dense = cm.f2_block(TAU, "dense")
        sparse = cm.f2_block(TAU, "sparse")
        assert np.all(dense[sparse != 0] != 0)

    def test_f3_sparse_support_within_dense_monomials(self):
        # the cubic sparse value sums dense coefficients over the factor
        # permutations, so a canonical column can be nonzero while its own
        # dense entry vanishes; containment holds at the monomial level
        dense = cm.f3_block(TAU, "dense").reshape(Q, Q, Q, Q)
        sparse = cm.f3_block(TAU, "sparse").reshape(Q, Q, Q, Q)
        rows, js, ks, ls = np.nonzero(sparse)
        from itertools import permutations

        for i, j, k, l in zip(rows[::97], js[::97], ks[::97], ls[::97]):
            assert any(dense[i, a, b, c] != 0 for a, b, c in permutations((j, k, l)))
        # and the strict column-level containment genuinely fails
        assert np.any(dense[sparse != 0] == 0)

    def test_f3_block_tiles_the_core(self):
        b3 = cm.f3_block(TAU, "dense").reshape(Q, Q, Q * Q)
        core = cm.f3_core(TAU)
        for j in range(Q):
            np.testing.assert_array_equal(b3[:, j, :], core)


class TestCensus:
    def test_nonzero_counts(self):
        assert cm.block_census("f1").nonzeros == 729
        assert cm.block_census("f2").nonzeros == 15_180
        assert cm.block_census("f3").nonzeros == 409_860

    def test_unique_value_counts(self):
        # the linear block has 14 distinct rational values; the nominal 15
        # counts the two diagonal weight classes sharing -19/27 separately
        f1 = cm.block_census("f1")
        assert f1.unique_values == 14
        assert f1.structural_classes == 15
        assert cm.block_census("f2").unique_values == 42
        assert cm.block_census("f3").unique_values == 42

    def test_sparse_variant_changes_census(self):
        dense = cm.block_census("f2", variant="dense")
        sparse = cm.block_census("f2", variant="sparse")
        assert sparse.nonzeros < dense.nonzeros

    def test_census_tau_independent_counts(self):
        a = cm.block_census("f2", tau=Fraction(3, 5))
        b = cm.block_census("f2", tau=Fraction(7, 10))
        assert (a.nonzeros, a.unique_values) == (b.nonzeros, b.unique_values)


class TestAssembly:
    def test_shapes_at_single_node(self):
        grid = GridSpec(1, 1, 1)
        blocks = cm.assemble_first_order(grid, AllFluid(), TAU)
        assert blocks.f2.shape == (27, 729)
        assert blocks.f3.shape == (27, 19683)
        assert blocks.s_plus_f1.shape == (27, 27)

    def test_two_node_blocks_repeat(self):
        grid = GridSpec(2, 1, 1)
        blocks = cm.assemble_first_order(grid, AllFluid(), TAU)
        m = blocks.s_plus_f1.to_scipy().toarray()
        f1b = cm.f1_block(TAU)
        s = cm.assemble_streaming(grid, AllFluid()).to_scipy().toarray()
        np.testing.assert_allclose(m - s, np.kron(np.eye(2), f1b), atol=1e-14)

    def test_capacity_refusal(self):
        grid = GridSpec(4, 4, 4)   # nQ = 1728
        with pytest.raises(cm.CapacityError):
            cm.assemble_first_order(grid, AllFluid(), TAU, cap=1000)

    def test_triples_validate(self):
        grid = GridSpec(2, 2, 1)
        blocks = cm.assemble_first_order(grid, SphereSolid((0, 0, 0), 0.5), TAU)
        for t in (blocks.s_plus_f1, blocks.f2, blocks.f3):
            t.validate()

    def test_entry_function_agreement(self):
        grid = GridSpec(2, 2, 1)
        oracle = SphereSolid((0, 0, 0), 0.5)
        blocks = cm.assemble_first_order(grid, oracle, TAU)
        s = cm.assemble_streaming(grid, oracle)
        for r, c, v in zip(s.rows, s.cols, s.values):
            mr, mc = l1_inverse(grid, int(r)), l1_inverse(grid, int(c))
            assert cm.s_entry(grid, oracle, mr, mc) == v
        for r, c, v in zip(blocks.f2.rows, blocks.f2.cols, blocks.f2.values):
            mr = l1_inverse(grid, int(r))
            mc = l2_inverse(grid, int(c))
            assert cm.f2_entry_dense(mr, mc, TAU) == pytest.approx(v, rel=1e-13)
        idx3 = RNG.choice(len(blocks.f3.values), size=500, replace=False)
        for k in idx3:
            mr = l1_inverse(grid, int(blocks.f3.rows[k]))
            mc = l3_inverse(grid, int(blocks.f3.cols[k]))
            assert cm.f3_entry_dense(mr, mc, TAU) == pytest.approx(blocks.f3.values[k], rel=1e-13)

    def test_absent_coordinates_are_zero(self):
        grid = GridSpec(2, 2, 1)
        oracle = SphereSolid((0, 0, 0), 0.5)
        blocks = cm.assemble_first_order(grid, oracle, TAU)
        f2_present = set(zip(blocks.f2.rows.tolist(), blocks.f2.cols.tolist()))
        rng = np.random.default_rng(11)
        checked = 0
        while checked < 100_000:
            r = int(rng.integers(0, grid.nq))
            c = int(rng.integers(0, grid.nq**2))
            if (r, c) in f2_present:
                continue
            assert cm.f2_entry_dense(l1_inverse(grid, r), l2_inverse(grid, c), TAU) == 0.0
            checked += 1

    def test_streaming_row_structure(self):
        # every nonzero row of S carries exactly one -1 and one +1
        grid = GridSpec(3, 3, 3)
        oracle = SphereSolid((1, 1, 1), 1.1)
        s = cm.assemble_streaming(grid, oracle).to_scipy()
        arr = s.toarray()
        for row in arr:
            nz = row[row != 0]
            if nz.size:
                assert sorted(nz.tolist()) == [-1.0, 1.0]


class TestStreamingEquivalence:
    @pytest.mark.parametrize("seed", range(4))
    def test_one_hot_equivalence(self, seed):
        rng = np.random.default_rng(seed)
        grid = GridSpec(int(rng.integers(2, 5)), int(rng.integers(2, 5)), int(rng.integers(2, 5)))
        oracle = SphereSolid(tuple(rng.integers(0, 3, size=3)), float(rng.uniform(0.3, 1.6)))
        s = cm.assemble_streaming(grid, oracle).to_scipy()
        solid = oracle.solid_mask(grid).reshape(-1)
        for mu in range(grid.nq):
            if solid[mu // Q]:
                continue
            e = np.zeros(grid.nq)
            e[mu] = 1.0
            lhs = s @ e + e
            pf = PopulationField(e.reshape(*grid.shape(), Q).copy(), grid)
            rhs = stream(pf, oracle).values.reshape(-1)
            assert np.array_equal(lhs, rhs)


class TestCarlemanSystem:
    def test_sector1_equals_rhs_single_node(self):
        grid = GridSpec(1, 1, 1)
        sys1 = cm.CarlemanSystem(grid, AllFluid(), TAU)
        for _ in range(50):
            f = random_state()
            phi = sys1.embed(f)
            out = sys1.apply(phi)[:Q]
            np.testing.assert_allclose(out, cm.nonlinear_rhs(f, grid, AllFluid(), TAU), atol=1e-13)

    def test_rhs_matches_physics_route(self):
        grid = GridSpec(3, 3, 3)
        oracle = SphereSolid((1, 1, 1), 1.2)
        for _ in range(20):
            f = random_state(nodes=grid.n)
            f = f.reshape(*grid.shape(), Q)
            f[oracle.solid_mask(grid)] = 0.0
            f = f.reshape(-1)
            a = cm.nonlinear_rhs(f, grid, oracle, TAU)
            b = cm.nonlinear_rhs_physics(f, grid, oracle, TAU)
            np.testing.assert_allclose(a, b, atol=1e-13)

    def test_equilibrium_is_fixed_point(self):
        grid = GridSpec(2, 2, 2)
        f = np.tile(equilibrium(1.0, np.zeros(3)), grid.n)
        np.testing.assert_allclose(cm.nonlinear_rhs(f, grid, AllFluid(), TAU), 0.0, atol=1e-14)

    def test_unit_euler_step_reproduces_lbm_step(self):
        # exact on a single periodic node, where streaming is the identity
        grid = GridSpec(1, 1, 1)
        oracle = AllFluid()
        cfg = SimConfig(tau=TAU)
        for _ in range(20):
            f = random_state()
            euler = f + cm.nonlinear_rhs_physics(f, grid, oracle, TAU, exact_equilibrium=True)
            pf = PopulationField(f.reshape(1, 1, 1, Q).copy(), grid)
            np.testing.assert_allclose(
                step(pf, cfg, oracle).values.reshape(-1), euler, rtol=0, atol=1e-15
            )

    def test_unit_euler_step_uniform_field_any_grid(self):
        grid = GridSpec(3, 3, 3)
        oracle = AllFluid()
        cfg = SimConfig(tau=TAU)
        f_loc = random_state()
        f = np.tile(f_loc, grid.n)
        euler = f + cm.nonlinear_rhs_physics(f, grid, oracle, TAU, exact_equilibrium=True)
        pf = PopulationField(f.reshape(*grid.shape(), Q).copy(), grid)
        np.testing.assert_allclose(step(pf, cfg, oracle).values.reshape(-1), euler, atol=1e-15)

    def test_sector2_is_product_rule_derivative(self):
        grid = GridSpec(1, 1, 1)
        sys1 = cm.CarlemanSystem(grid, AllFluid(), TAU)
        f = random_state()
        out2 = sys1.apply(sys1.embed(f))[Q : Q + Q * Q]
        df = sys1.s_plus_f1() @ f + sys1._full_f2() @ np.kron(f, f)   # truncated df/dt
        np.testing.assert_allclose(out2, np.kron(df, f) + np.kron(f, df), atol=1e-13)

    def test_sector2_finite_difference(self):
        # central difference of f(t) (x) f(t) along the flow of the
        # truncated first-order rate (cubic feed dropped)
        grid = GridSpec(1, 1, 1)
        sys1 = cm.CarlemanSystem(grid, AllFluid(), TAU)

        def rhs(f):
            return sys1.s_plus_f1() @ f + sys1._full_f2() @ np.kron(f, f)

        def rk4(f, h):
            k1 = rhs(f)
            k2 = rhs(f + 0.5 * h * k1)
            k3 = rhs(f + 0.5 * h * k2)
            k4 = rhs(f + h * k3)
            return f + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)

        f = random_state()
        dt = 1e-5
        fwd, bwd = rk4(f, dt), rk4(f, -dt)
        fd = (np.kron(fwd, fwd) - np.kron(bwd, bwd)) / (2 * dt)
        out2 = sys1.apply(sys1.embed(f))[Q : Q + Q * Q]
        np.testing.assert_allclose(out2, fd, atol=1e-8)

    @given(st.integers(0, 1000))
    @settings(max_examples=20, deadline=None)
    def test_kron_lift_infinity_norm_identity(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 7))
        b = rng.normal(size=(n, n))
        lifted = np.kron(np.eye(n), b) + np.kron(b, np.eye(n))
        assert np.abs(lifted).sum(axis=1).max() == pytest.approx(
            2 * np.abs(b).sum(axis=1).max(), rel=1e-12
        )

    def test_full_phi_cap(self):
        grid = GridSpec(3, 1, 1)   # nQ = 81 > 54
        sys3 = cm.CarlemanSystem(grid, AllFluid(), TAU)
        with pytest.raises(cm.CapacityError):
            sys3.embed(np.zeros(grid.nq))

    def test_sector1_matrix_free_on_3cube(self):
        grid = GridSpec(3, 3, 3)
        oracle = SphereSolid((1, 1, 1), 1.0)
        sys3 = cm.CarlemanSystem(grid, oracle, TAU)
        f = random_state(nodes=grid.n)
        f = f.reshape(*grid.shape(), Q)
        f[oracle.solid_mask(grid)] = 0.0
        f = f.reshape(-1)
        np.testing.assert_allclose(
            sys3.sector1_of_embedded(f),
            cm.nonlinear_rhs_physics(f, grid, oracle, TAU),
            atol=1e-13,
        )


class TestNorms:
    def test_enumerated_norms_at_tau_06(self):
        rep = cm.norm_report(0.6)
        assert rep.f1_inf == pytest.approx(14.012, abs=1e-3)
        assert rep.f2_inf == pytest.approx(942.222, abs=1e-3)
        assert rep.f3_inf == pytest.approx(12720.0, abs=1e-3)

    def test_per_matrix_constants(self):
        # norms scale exactly as 1/tau; the tau-independent constants
        rep = cm.norm_report(1.0)
        assert rep.f1_inf == pytest.approx(8.407, abs=1e-3)
        assert rep.f1_one == pytest.approx(3.481, abs=1e-3)
        assert rep.f2_inf == pytest.approx(565.333, abs=1e-3)
        assert rep.f2_one == pytest.approx(7.333, abs=1e-3)
        assert rep.f3_inf == pytest.approx(7632.0, abs=1e-3)
        assert rep.f3_one == pytest.approx(3.667, abs=1e-3)

    def test_norms_scale_with_inverse_tau(self):
        r1, r2 = cm.norm_report(0.6), cm.norm_report(0.9)
        assert r1.f2_inf * 0.6 == pytest.approx(r2.f2_inf * 0.9, rel=1e-12)

    def test_spectral_bound_values(self):
        assert round(cm.norm_report(0.6).spectral_bound) == 901
        assert abs(cm.norm_report(1.0).spectral_bound - 559) <= 1.0
        assert abs(cm.norm_report(0.5 + 1e-12).spectral_bound - 1072) <= 1.0

    def test_bound_formulas(self):
        rep = cm.norm_report(0.8)
        assert rep.a_one_bound == pytest.approx(6 + 32 / 0.8)
        assert rep.a_inf_bound == pytest.approx(2 + 8208 / 0.8)

    def test_tau_domain(self):
        with pytest.raises(ValueError):
            cm.norm_report(0.5)

    def test_f2_tilde_norm_equality(self):
        # row block [F2^[2]  F3^[2]] attains exactly 2(|F2| + |F3|): the
        # overlap corrections vanish at the shared argmax row
        b2 = cm.f2_block(0.6, "dense")
        b3 = cm.f3_block(0.6, "dense")
        target = 2 * (np.abs(b2).sum(1).max() + np.abs(b3).sum(1).max())
        best = 0.0
        for blk, width in ((b2, Q * Q), (b3, Q**3)):
            pass
        # row (a, b) of I(x)F + F(x)I: entries overlap where the trailing
        # factor of the first term meets the leading identity of the second
        def lift_rowsum(blk, a, b):
            cols = blk.shape[1] // Q   # trailing-index width after fixing one factor
            total = np.abs(blk[b]).sum() + np.abs(blk[a]).sum()
            first = blk[b].reshape(-1, Q)[:, b]          # cols ending at index b
            second = blk[a].reshape(Q, -1)[a, :]         # cols starting at index a
            overlap = np.abs(first + second).sum() - np.abs(first).sum() - np.abs(second).sum()
            return total + overlap

        rows2 = np.abs(b2).sum(1)
        i_star = int(rows2.argmax())
        combined = lift_rowsum(b2, i_star, i_star) + lift_rowsum(b3, i_star, i_star)
        assert combined == pytest.approx(target, rel=1e-12)
        # no row pair exceeds it
        rng = np.random.default_rng(3)
        for _ in range(200):
            a, b = rng.integers(0, Q, size=2)
            val = lift_rowsum(b2, a, b) + lift_rowsum(b3, a, b)
            assert val <= target * (1 + 1e-12)


class TestConvergence:
    def test_window_at_surveyed_parameters(self):
        w = cm.convergence_window(0.2958, 0.6)
        assert w.t_c_lower == pytest.approx(1.106e-4, rel=5e-4)
        assert w.t_c_upper == pytest.approx(1.237e-4, rel=5e-4)
        assert w.t_c_lower <= w.t_c_exact <= w.t_c_upper

    def test_upper_bound_diverges_for_small_states(self):
        values = [cm.convergence_window(p, 0.6).t_c_upper for p in (0.3, 0.1, 0.01, 1e-4)]
        assert all(b > a for a, b in zip(values, values[1:]))

    def test_rejects_nonpositive_state_norm(self):
        with pytest.raises(ValueError):
            cm.convergence_window(0.0, 0.6)

    def test_envelope_shape(self):
        w = cm.convergence_window(0.2958, 0.6)
        early, mid = w.envelope(1e-6), w.envelope(1e-4)
        assert 0 < early < mid
        assert w.envelope(10 * w.t_c_exact) == np.inf


class TestIntegration:
    def test_fixed_point_trajectory_constant(self):
        grid = GridSpec(1, 1, 1)
        sys1 = cm.CarlemanSystem(grid, AllFluid(), TAU)
        f = equilibrium(1.0, np.zeros(3))
        phi0 = sys1.embed(f)
        _, traj = cm.integrate_truncated(phi0, sys1, 1e-4, 1e-5)
        np.testing.assert_allclose(traj[-1], phi0, atol=1e-13)

    def test_zero_state_constant(self):
        grid = GridSpec(1, 1, 1)
        sys1 = cm.CarlemanSystem(grid, AllFluid(), TAU)
        _, traj = cm.integrate_truncated(np.zeros(sys1.dimension), sys1, 1e-4, 1e-5)
        assert np.all(traj == 0.0)

    def test_rk4_order_four_step_halving(self):
        # run over a relaxation-scale horizon so discretization error is
        # visible above roundoff
        grid = GridSpec(1, 1, 1)
        sys1 = cm.CarlemanSystem(grid, AllFluid(), TAU)
        phi0 = sys1.embed(random_state(scale=0.3))
        t_end = 0.5
        _, coarse = cm.integrate_truncated(phi0, sys1, t_end, t_end / 8)
        _, mid = cm.integrate_truncated(phi0, sys1, t_end, t_end / 16)
        _, ref = cm.integrate_truncated(phi0, sys1, t_end, t_end / 256)
        e1 = np.abs(coarse[-1] - ref[-1]).max()
        e2 = np.abs(mid[-1] - ref[-1]).max()
        assert e1 / e2 == pytest.approx(16.0, rel=0.35)

    def test_blowup_detection(self):
        grid = GridSpec(1, 1, 1)
        sys1 = cm.CarlemanSystem(grid, AllFluid(), TAU)
        phi0 = sys1.embed(random_state())
        with pytest.raises(cm.IntegrationBlowup):
            cm.integrate_truncated(phi0, sys1, 100.0, 5.0)   # far beyond stability

    def test_truncation_error_within_envelope_two_nodes(self):
        # with streaming active the truncation error is nonzero and must
        # stay inside the theorem envelope up to the convergence horizon
        grid = GridSpec(2, 1, 1)
        sys2 = cm.CarlemanSystem(grid, AllFluid(), TAU)
        rep = cm.norm_report(TAU)
        f1t = max(rep.s_norm + rep.f1_inf + rep.f2_inf, 2 * (rep.s_norm + rep.f1_inf))
        f2t = 2 * (rep.f2_inf + rep.f3_inf)
        rng = np.random.default_rng(9)
        for _ in range(3):
            f0 = random_state(scale=0.15, rng=rng, nodes=2)
            phi0_inf = max(np.abs(f0).max(), np.abs(f0).max() ** 2)
            t_c = np.log(1 + f1t / (phi0_inf * f2t)) / f1t
            t_end = 0.95 * t_c
            times, lin = cm.integrate_truncated(sys2.embed(f0), sys2, t_end, t_end / 150)
            _, non = cm.integrate_nonlinear(f0, grid, AllFluid(), TAU, t_end, t_end / 150)
            err = np.abs(lin[:, : grid.nq] - non).max(axis=1)
            env = np.array([cm.error_envelope(t, phi0_inf, f1t, f2t) for t in times])
            assert err.max() > 0.0
            assert np.all(err[1:] <= env[1:])
