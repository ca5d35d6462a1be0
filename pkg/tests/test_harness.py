"""Ground-truth equilibria and the screening-accuracy experiment."""

import numpy as np
import pytest

from uppkit import ces, effects, harness
from uppkit.diversion import quantity_to_revenue_diversion
from uppkit.errors import InputValidationError
from uppkit.market import MergerSpec


def ces_duopoly(eta=6.0, betas=((1.4, 1.1),), budgets=(1.0,), costs=(1.0, 1.0)):
    demand = harness.CESGroundTruth(np.array(betas), np.array(budgets), eta)
    return harness.SyntheticPrimitives(
        ids=("A", "B"), demand=demand, costs=np.array(costs),
        ownership=(0, 1), prices=np.array(costs) * 1.4,
    )


class TestBertrandSolver:
    def test_ces_monopolist_lerner(self):
        """Single CES product, one consumer: equilibrium margin is -1/eps with
        eps evaluated at the equilibrium share."""
        demand = harness.CESGroundTruth(np.array([[1.2]]), np.array([1.0]), eta=5.0)
        eq = harness.solve_bertrand(demand, np.array([1.0]), (0,))
        share = demand.share_rows(eq.prices)[0, 0]
        eps = (1.0 - 5.0) * (1.0 - share) - 1.0
        assert eq.margins[0] == pytest.approx(-1.0 / eps, abs=1e-10)
        assert eq.residual < 1e-10

    def test_symmetric_duopoly_equal_prices(self):
        demand = harness.CESGroundTruth(np.array([[1.3, 1.3]]), np.array([1.0]), eta=5.0)
        eq = harness.solve_bertrand(demand, np.array([0.8, 0.8]), (0, 1))
        assert eq.prices[0] == pytest.approx(eq.prices[1], rel=1e-10)

    @pytest.mark.parametrize("model", ["ces", "logit"])
    def test_random_four_product_market(self, model):
        config = harness.HarnessConfig(seed=99, n_markets=1, model=model,
                                       n_products=(4, 4))
        prim, _ = harness.random_primitives(config, 0)
        eq = harness.solve_pre_merger_equilibrium(prim)
        assert eq.residual < 1e-10
        np.testing.assert_allclose(eq.prices, prim.prices, rtol=1e-8)

    def test_generator_prices_are_equilibrium(self):
        """The inverse-design construction puts the drawn prices exactly on the
        pricing conditions."""
        for trial in range(5):
            config = harness.HarnessConfig(seed=1, n_markets=5, model="ces")
            prim, _ = harness.random_primitives(config, trial)
            groups = [[j] for j in range(len(prim.ids))]
            res = harness._margin_residual(prim.demand, prim.prices, prim.costs, groups)
            assert np.max(np.abs(res)) < 1e-12


class TestPostMerger:
    def test_no_ownership_change_zero_effect(self):
        prim = ces_duopoly()
        pre = harness.solve_pre_merger_equilibrium(prim)
        prim = harness.SyntheticPrimitives(prim.ids, prim.demand, prim.costs,
                                           prim.ownership, pre.prices)
        _, pdd = harness.solve_post_merger_equilibrium(prim, (0, 0))
        np.testing.assert_allclose(pdd, 0.0, atol=1e-9)

    def test_logit_symmetric_merger_raises_prices(self):
        demand = harness.LogitGroundTruth(np.array([1.0, 1.0]), price_coef=1.0)
        costs = np.array([1.0, 1.0])
        pre = harness.solve_bertrand(demand, costs, (0, 1))
        prim = harness.SyntheticPrimitives(("A", "B"), demand, costs, (0, 1), pre.prices)
        _, pdd = harness.solve_post_merger_equilibrium(prim, (0, 1))
        assert np.all(pdd > 0.0)
        assert pdd[0] == pytest.approx(pdd[1], rel=1e-8)

    def test_efficiencies_lower_post_prices(self):
        prim = ces_duopoly()
        pre = harness.solve_pre_merger_equilibrium(prim)
        prim = harness.SyntheticPrimitives(prim.ids, prim.demand, prim.costs,
                                           prim.ownership, pre.prices)
        _, pdd_bare = harness.solve_post_merger_equilibrium(prim, (0, 1))
        _, pdd_eff = harness.solve_post_merger_equilibrium(
            prim, (0, 1), efficiencies={0: -0.2, 1: -0.2})
        assert np.all(pdd_eff < pdd_bare)


class TestObservation:
    def test_end_to_end_guppi_identification(self):
        """GUPPI from the observable slice equals the direct price/quantity
        evaluation cdd(1-m) + sum m_k D_{j->k} p_k/p_j at the true equilibrium."""
        for trial in range(6):
            config = harness.HarnessConfig(seed=21, n_markets=6, model="ces")
            prim, pair = harness.random_primitives(config, trial)
            eq = harness.solve_pre_merger_equilibrium(prim)
            market, diversion = harness.observe(prim, eq.prices)
            merger = MergerSpec(f"f{pair[0]}", f"f{pair[1]}")
            g = effects.guppi(market, diversion, merger)

            _, qdiv, _ = harness._foc_objects(prim.demand, eq.prices)
            for j, k in (pair, pair[::-1]):
                pid = prim.ids[j]
                direct = eq.margins[k] * qdiv[j, k] * eq.prices[k] / eq.prices[j]
                assert g[pid] == pytest.approx(direct, abs=1e-8)

    def test_elasticity_identities_at_equilibrium(self):
        """Finite differences at every solved equilibrium: eps^R = eps + 1 and
        the revenue/quantity diversion bridge, to 1e-5 relative."""
        config = harness.HarnessConfig(seed=33, n_markets=3, model="ces")
        for trial in range(3):
            prim, _ = harness.random_primitives(config, trial)
            eq = harness.solve_pre_merger_equilibrium(prim)
            p = eq.prices
            n = len(p)
            market, diversion = harness.observe(prim, p)
            for j in range(n):
                h = 1e-5 * p[j]
                up, dn = p.copy(), p.copy()
                up[j] += h
                dn[j] -= h
                dq = (prim.demand.quantities(up) - prim.demand.quantities(dn)) / (2 * h)
                dr = (prim.demand.revenues(up) - prim.demand.revenues(dn)) / (2 * h)
                q = prim.demand.quantities(p)
                r = prim.demand.revenues(p)
                eps_q = dq[j] * p[j] / q[j]
                eps_r = dr[j] * p[j] / r[j]
                assert eps_r == pytest.approx(eps_q + 1.0, rel=1e-5)
                for k in range(n):
                    if k == j:
                        continue
                    d_r_fd = -dr[k] / dr[j]
                    d_q_fd = -dq[k] / dq[j]
                    assert diversion.get(prim.ids[j], prim.ids[k]) == pytest.approx(
                        d_r_fd, rel=1e-5, abs=1e-12
                    )
                    assert quantity_to_revenue_diversion(
                        d_q_fd, p[j], p[k], eps_q
                    ) == pytest.approx(d_r_fd, rel=1e-5, abs=1e-12)

    def test_ces_outside_column_completes_rows(self):
        prim = ces_duopoly()
        eq = harness.solve_pre_merger_equilibrium(prim)
        _, diversion = harness.observe(prim, eq.prices)
        totals = diversion.values.sum(axis=1) + 1.0 + diversion.outside
        np.testing.assert_allclose(totals, 1.0, atol=1e-10)


class TestCrossModuleEquivalence:
    def test_true_equilibrium_matches_percentage_space_simulation(self):
        """Key oracle: the percentage-space simulation on the observable slice
        reproduces the true post-merger price changes of the priced model."""
        from uppkit import simulation

        eta = 6.0
        demand = harness.CESGroundTruth(np.array([[2.2, 1.5]]), np.array([2.05]), eta)
        costs = np.array([1.0, 0.9])
        pre = harness.solve_bertrand(demand, costs, (0, 1))
        prim = harness.SyntheticPrimitives(("SP", "OD"), demand, costs, (0, 1), pre.prices)
        _, pdd_true = harness.solve_post_merger_equilibrium(prim, (0, 1))

        market, _ = harness.observe(prim, pre.prices)
        economy = prim.demand.economy(pre.prices, ["SP", "OD"])
        problem = simulation.merger_problem(market, economy, MergerSpec("f0", "f1"))
        result = simulation.simulate(problem)
        assert result.converged
        # consistent inputs: agreement far tighter than the 5e-3 band
        assert result.price_changes["SP"] == pytest.approx(pdd_true[0], abs=1e-8)
        assert result.price_changes["OD"] == pytest.approx(pdd_true[1], abs=1e-8)
        assert not any("not self-consistent" in w for w in result.warnings)

    @pytest.mark.parametrize("trial", range(4))
    def test_random_markets_agree(self, trial):
        from uppkit import simulation

        config = harness.HarnessConfig(seed=71, n_markets=4, model="ces")
        prim, pair = harness.random_primitives(config, trial)
        eq = harness.solve_pre_merger_equilibrium(prim)
        _, pdd_true = harness.solve_post_merger_equilibrium(prim, pair)
        market, _ = harness.observe(prim, eq.prices)
        economy = prim.demand.economy(eq.prices, list(prim.ids))
        merger = MergerSpec(f"f{pair[0]}", f"f{pair[1]}")
        result = simulation.simulate(simulation.merger_problem(market, economy, merger))
        assert result.converged
        for j, pid in enumerate(prim.ids):
            assert result.price_changes[pid] == pytest.approx(pdd_true[j], abs=1e-8)


class TestCmcrRoundTrip:
    @pytest.mark.parametrize("trial", range(5))
    def test_applying_cmcr_freezes_prices(self, trial):
        """Feed the screening CMCR back into the true cost vector: the
        post-merger equilibrium reproduces pre-merger prices to 1e-6."""
        config = harness.HarnessConfig(seed=55, n_markets=5, model="ces")
        prim, pair = harness.random_primitives(config, trial)
        eq = harness.solve_pre_merger_equilibrium(prim)
        market, diversion = harness.observe(prim, eq.prices)
        merger = MergerSpec(f"f{pair[0]}", f"f{pair[1]}")
        res = effects.cmcr(market, diversion, merger)
        pos = {pid: j for j, pid in enumerate(prim.ids)}
        eff = {pos[pid]: cdd for pid, cdd in res.efficiencies.items()}
        _, pdd = harness.solve_post_merger_equilibrium(prim, pair, efficiencies=eff)
        np.testing.assert_allclose(pdd, 0.0, atol=1e-6)


class TestMultiProductFirms:
    def multiproduct_primitives(self):
        demand = harness.CESGroundTruth(
            np.array([[1.8, 1.2, 1.5]]), np.array([1.0]), eta=5.5
        )
        costs = np.array([1.0, 0.8, 1.1])
        eq = harness.solve_bertrand(demand, costs, (0, 0, 1))
        return harness.SyntheticPrimitives(("A", "B", "C"), demand, costs, (0, 0, 1),
                                           eq.prices), eq

    def test_identified_elasticities_match_truth(self):
        """Within-firm margin/diversion sums recover the analytic own-price
        elasticities for the two-product firm too."""
        prim, eq = self.multiproduct_primitives()
        market, diversion = harness.observe(prim, eq.prices)
        merger = MergerSpec("f0", "f1")
        eps_hat = effects.own_price_elasticities(market, diversion, merger)
        jac = prim.demand.quantity_jacobian(eq.prices)
        q = prim.demand.quantities(eq.prices)
        for j, pid in enumerate(prim.ids):
            eps_true = jac[j, j] * eq.prices[j] / q[j]
            assert eps_hat[pid] == pytest.approx(eps_true, rel=1e-9)

    def test_cmcr_round_trip_with_multiproduct_firm(self):
        prim, eq = self.multiproduct_primitives()
        market, diversion = harness.observe(prim, eq.prices)
        res = effects.cmcr(market, diversion, MergerSpec("f0", "f1"))
        eff = {j: res.efficiencies[pid] for j, pid in enumerate(prim.ids)}
        _, pdd = harness.solve_post_merger_equilibrium(prim, (0, 1), efficiencies=eff)
        np.testing.assert_allclose(pdd, 0.0, atol=1e-6)

    def test_simulation_matches_truth(self):
        from uppkit import simulation

        prim, eq = self.multiproduct_primitives()
        _, pdd_true = harness.solve_post_merger_equilibrium(prim, (0, 1))
        market, _ = harness.observe(prim, eq.prices)
        economy = prim.demand.economy(eq.prices, list(prim.ids))
        result = simulation.simulate(
            simulation.merger_problem(market, economy, MergerSpec("f0", "f1")))
        assert result.converged
        for j, pid in enumerate(prim.ids):
            assert result.price_changes[pid] == pytest.approx(pdd_true[j], abs=1e-8)


class TestAccuracyExperiment:
    def test_ces_underprediction(self):
        result = harness.run_accuracy_experiment(
            harness.HarnessConfig(seed=17, n_markets=40, model="ces"))
        assert result.summary["n_failed"] == 0
        assert result.summary["share_conservative"] >= 0.95

    def test_logit_accuracy(self):
        result = harness.run_accuracy_experiment(
            harness.HarnessConfig(seed=17, n_markets=40, model="logit"))
        assert result.summary["median_relative_error"] < 0.15

    def test_same_seed_identical_output(self):
        config = harness.HarnessConfig(seed=9, n_markets=8, model="ces")
        a = harness.run_accuracy_experiment(config)
        b = harness.run_accuracy_experiment(config)
        assert list(a.to_csv_rows()) == list(b.to_csv_rows())

    def test_thread_count_does_not_change_output(self, monkeypatch):
        config = harness.HarnessConfig(seed=9, n_markets=8, model="ces")
        monkeypatch.setenv("UPPKIT_THREADS", "1")
        a = harness.run_accuracy_experiment(config)
        monkeypatch.setenv("UPPKIT_THREADS", "4")
        b = harness.run_accuracy_experiment(config)
        assert list(a.to_csv_rows()) == list(b.to_csv_rows())

    def test_config_validation(self):
        with pytest.raises(InputValidationError):
            harness.HarnessConfig(seed=1, model="blp")
        with pytest.raises(InputValidationError):
            harness.HarnessConfig(seed=1, n_products=(1, 3))
        with pytest.raises(InputValidationError):
            harness.HarnessConfig(seed=1, eta_range=(5.0, 5.0))

    def test_csv_rows_round_trip_floats(self):
        result = harness.run_accuracy_experiment(
            harness.HarnessConfig(seed=2, n_markets=2, model="ces"))
        rows = list(result.to_csv_rows())
        header, first = rows[0], rows[1]
        rec = dict(zip(header, first))
        assert float(rec["guppi"]) == result.records[0].guppi


class TestSpatialFixture:
    def test_out_of_radius_store_has_zero_revenue(self):
        fx = harness.generate_spatial_fixture(
            harness.SpatialConfig(seed=31, n_tracts=10, n_stores=8, radius=3.0,
                                  extent=60.0)
        )
        orphan = [s for j, s in enumerate(fx.store_ids) if not fx.mask[:, j].any()]
        if not orphan:
            pytest.skip("no orphan store in this draw")
        for sid in orphan:
            assert fx.revenues[sid] == 0.0

    def test_zero_distance_coefficient_equalizes_identical_stores(self):
        """theta_distance = 0 and no size/format variation: revenue differences
        across stores vanish (only location varied)."""
        fx = harness.generate_spatial_fixture(
            harness.SpatialConfig(seed=8, n_tracts=30, n_stores=6,
                                  theta=(1.0, 0.0, 0.0, 0.0), radius=1e9)
        )
        rev = np.array([fx.revenues[s] for s in fx.store_ids])
        same_nest = [j for j, s in enumerate(fx.store_ids)
                     if fx.nests[s] == fx.nests[fx.store_ids[0]]]
        np.testing.assert_allclose(rev[same_nest], rev[same_nest][0], rtol=1e-9)

    def test_fixture_file_round_trip(self, tmp_path):
        import json

        fx = harness.generate_spatial_fixture(
            harness.SpatialConfig(seed=3, n_tracts=6, n_stores=4))
        path = tmp_path / "fx.json"
        path.write_text(json.dumps(harness.spatial_fixture_to_dict(fx)))
        again = harness.load_spatial_fixture(path)
        np.testing.assert_array_equal(again.design, fx.design)
        np.testing.assert_array_equal(again.mask, fx.mask)
        assert again.revenues == fx.revenues
        assert again.mu == fx.mu
