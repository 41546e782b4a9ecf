import numpy as np
import pytest

from pdm.core import gaussian
from pdm.errores import ScheduleError
from pdm.schedule import (ScheduleConfig, build_schedule, forward_marginal, forward_transition, from_betas,
                          linear_schedule, posterior_params, respace, split_point, to_frame)


class TestConstruccion:
    def test_alpha_es_producto_acumulado(self, schedule):
        np.testing.assert_array_equal(schedule.alpha_cum, np.cumprod(1.0 - schedule.betas))

    def test_alpha_cero_vale_uno(self, schedule):
        assert schedule.alpha(0) == 1.0

    def test_gamma(self, schedule):
        a = schedule.alpha_cum
        np.testing.assert_allclose(schedule.gamma, np.sqrt(a / (1 - a)))

    def test_alpha_decreciente(self, schedule):
        assert np.all(np.diff(schedule.alpha_cum) < 0)

    def test_extremos_del_lineal(self, schedule):
        assert schedule.beta(1) == pytest.approx(1e-4)
        assert schedule.beta(1000) == pytest.approx(0.02)

    @pytest.mark.parametrize("T,b1,bT", [(0, 1e-4, 0.02), (10, 0.0, 0.02), (10, 0.5, 0.1), (10, 1e-4, 1.0)])
    def test_rangos_invalidos(self, T, b1, bT):
        with pytest.raises(ScheduleError):
            linear_schedule(T, b1, bT)

    def test_betas_invalidos(self):
        with pytest.raises(ScheduleError):
            from_betas([0.1, 1.0])

    def test_timestep_fuera_de_rango(self, schedule):
        with pytest.raises(ScheduleError):
            schedule.beta(1001)
        with pytest.raises(ScheduleError):
            schedule.beta(0)

    def test_huella_estable(self):
        assert build_schedule(ScheduleConfig()).fingerprint == build_schedule(ScheduleConfig()).fingerprint
        assert build_schedule(ScheduleConfig(T=999)).fingerprint != build_schedule(ScheduleConfig()).fingerprint


class TestEspaciado:
    def test_mismo_numero_de_pasos_es_identidad(self, schedule):
        assert respace(schedule, schedule.T) is schedule

    def test_incluye_T_y_conserva_alpha(self, schedule):
        r = respace(schedule, 250)
        assert r.T == 250
        assert r.timesteps[-1] == 1000
        np.testing.assert_array_equal(r.alpha_cum, schedule.alpha_cum[r.timesteps - 1])
        np.testing.assert_allclose(np.cumprod(1 - r.betas), r.alpha_cum, rtol=1e-12)

    def test_pasos_invalidos(self, schedule):
        with pytest.raises(ScheduleError):
            respace(schedule, 1001)


class TestPosterior:
    def test_t1_colapsa_en_x(self, schedule, rng):
        x = gaussian((2, 2, 2, 1), rng)
        z = gaussian((2, 2, 2, 1), rng)
        media, var = posterior_params(z, x, np.array([1, 1]), schedule)
        np.testing.assert_array_equal(media, x)
        np.testing.assert_array_equal(var, 0.0)

    def test_varianza_menor_que_beta(self, schedule):
        t = np.arange(2, 1001)
        _, var = posterior_params(np.zeros((999, 1, 1, 1)), np.zeros((999, 1, 1, 1)), t, schedule)
        assert np.all(var <= schedule.beta(t))

    def test_marginal_empirica(self, schedule, rng):
        x = np.full((20000, 1, 1, 1), 0.5)
        t = np.full(20000, 300)
        z = forward_marginal(x, t, gaussian(x.shape, rng), schedule)
        a = schedule.alpha(300)
        assert z.mean() == pytest.approx(np.sqrt(a) * 0.5, abs=0.02)
        assert z.var() == pytest.approx(1 - a, rel=0.03)


class TestPuntoDeDivision:
    def test_snr_cuarto(self, schedule):
        S = split_point(schedule, 0.25)
        assert abs(S - 396) <= 3

    def test_tabla(self, schedule):
        df = to_frame(schedule)
        assert list(df.columns) == ["t", "beta", "alpha_cum", "snr", "gamma"]
        assert len(df) == 1000


class TestValoresDeReferencia:
    def test_un_solo_paso(self):
        np.testing.assert_allclose(linear_schedule(1, 0.02, 0.02).alpha_cum, [0.98])

    def test_producto_a_mano(self):
        np.testing.assert_allclose(from_betas([0.1, 0.2]).alpha_cum, [0.9, 0.72])

    def test_marginal_a_mano(self):
        sch = from_betas([0.75])
        z = forward_marginal(np.full((1, 1, 1, 1), 2.0), 1, np.ones((1, 1, 1, 1)), sch)
        assert z.item() == pytest.approx(1.8660, abs=1e-4)

    def test_transicion_a_mano(self):
        sch = from_betas([0.19])
        z = forward_transition(np.ones((1, 1, 1, 1)), 1, np.zeros((1, 1, 1, 1)), sch)
        assert z.item() == pytest.approx(0.9)

    def test_posterior_a_mano(self):
        sch = from_betas([0.5, 0.02])
        media, var = posterior_params(np.ones((1, 1, 1, 1)), np.ones((1, 1, 1, 1)), 2, sch)
        assert media.item() == pytest.approx(0.998270, abs=1e-6)
        assert float(var) == pytest.approx(0.019608, abs=1e-6)

    def test_snr(self):
        assert float(from_betas([0.5]).snr(1)) == pytest.approx(1.0)
        assert float(from_betas([0.8]).snr(1)) == pytest.approx(0.25)

    def test_espaciado_de_cuatro_a_dos(self):
        sch = linear_schedule(4, 0.1, 0.4)
        r = respace(sch, 2)
        np.testing.assert_array_equal(r.timesteps, [2, 4])
        assert r.betas[1] == pytest.approx(1 - sch.alpha_cum[3] / sch.alpha_cum[1])
