import numpy as np
import pytest

import cfse
from cfse.entropy import EnsembleSettings, entropy_static
from cfse.errors import DimensionMismatch
from cfse.local import RegionSpec, entanglement_entropy, local_entropy

PARAMS = cfse.ModelParams(kappa=1.0, n=1)
SETTINGS = EnsembleSettings(k=32, verify=False)


@pytest.fixture(scope="module")
def beta(eta_rho, params):
    ens = cfse.build_ensemble(eta_rho, 4.0, 3, params, EnsembleSettings(k=16))
    return 1.0 / ens.gamma_scale


class TestRegionSpec:
    def test_from_sites(self, eta_rho):
        region = RegionSpec.from_sites(eta_rho, [0, 2])
        expected = np.isin(eta_rho.site_labels, [0, 2])
        np.testing.assert_array_equal(region.v_mask, expected)

    def test_complement_partitions(self, eta_rho):
        region = RegionSpec.from_sites(eta_rho, [1])
        both = region.v_mask | region.complement().v_mask
        assert both.all()

    def test_length_validated(self, eta_rho):
        with pytest.raises(DimensionMismatch):
            RegionSpec(v_mask=np.ones(3, dtype=bool)).validated(eta_rho)


class TestLocalEntropy:
    def test_full_region_bitwise_equals_global(self, eta_rho, params, beta):
        local = local_entropy(4.0, RegionSpec.full(eta_rho), beta, eta_rho,
                              eta_rho, 4.0, params, seed=11, settings=SETTINGS,
                              budget=4)
        standalone = entropy_static(4.0, beta, eta_rho, eta_rho, 4.0, params,
                                    seed=11, settings=SETTINGS, budget=4)
        assert local.value == standalone.value
        assert local.mc_error == standalone.mc_error

    def test_empty_region_exactly_zero(self, eta_rho, params, beta):
        empty = RegionSpec(v_mask=np.zeros(len(eta_rho.atoms), dtype=bool))
        rep = local_entropy(4.0, empty, beta, eta_rho, eta_rho, 4.0, params,
                            seed=12, settings=SETTINGS, budget=2)
        assert rep.value == 0.0

    def test_half_region_vacuum_small(self, eta_rho, params, beta):
        region = RegionSpec.from_sites(eta_rho, [0, 1])
        rep = local_entropy(4.0, region, beta, eta_rho, eta_rho, 4.0, params,
                            seed=13, settings=SETTINGS, budget=4)
        assert abs(rep.value) <= 3 * rep.mc_error + 1e-8
        assert rep.jensen_ok


class TestEntanglement:
    def test_component_consistency_bitwise(self, eta_rho, params, beta):
        region = RegionSpec.from_sites(eta_rho, [0, 1])
        rep = entanglement_entropy(4.0, region, beta, eta_rho, eta_rho, 4.0,
                                   params, seed=17, settings=SETTINGS, budget=4)
        standalone = entropy_static(4.0, beta, eta_rho, eta_rho, 4.0, params,
                                    seed=17, settings=SETTINGS, budget=4)
        assert rep.global_report.value == standalone.value

    def test_full_region(self, eta_rho, params, beta):
        rep = entanglement_entropy(4.0, RegionSpec.full(eta_rho), beta, eta_rho,
                                   eta_rho, 4.0, params, seed=18,
                                   settings=SETTINGS, budget=4)
        # complement is empty: its component is exactly zero
        assert rep.complement_report.value == 0.0
        assert abs(rep.e) <= 9 * rep.mc_error + 1e-8

    def test_vacuum_entanglement_small(self, eta_rho, params, beta):
        region = RegionSpec.from_sites(eta_rho, [0])
        rep = entanglement_entropy(4.0, region, beta, eta_rho, eta_rho, 4.0,
                                   params, seed=19, settings=SETTINGS, budget=4)
        assert abs(rep.e) <= 9 * rep.mc_error + 1e-8
        doc = rep.to_dict()
        assert set(doc) == {"e", "mc_error", "global", "region", "complement"}
