import numpy as np
import pytest

from pdm.core import gaussian
from pdm.errores import ConfigError, KindError
from pdm.param import (GuidanceConfig, Kind, Prediction, amplification_a, convert, eps_from_x, guide, target_for,
                       threshold, to_eps, to_v, to_x, v_from, x_error_amplification, x_from_v)
from pdm.schedule import forward_marginal, from_betas


@pytest.fixture
def triple(schedule, rng):
    x = gaussian((32, 2, 2, 3), rng) * 0.5
    eps = gaussian(x.shape, rng)
    t = rng.integers(1, 1001, (32,))
    return x, eps, t, forward_marginal(x, t, eps, schedule)


class TestConversiones:
    def test_ciclos_cierran(self, schedule, triple):
        x, eps, t, z = triple
        v = v_from(x, eps, t, schedule)
        for kind, valor in ((Kind.X, x), (Kind.EPS, eps), (Kind.V, v)):
            pred = Prediction(kind, valor)
            np.testing.assert_allclose(to_x(pred, z, t, schedule), x, atol=1e-12)
            np.testing.assert_allclose(to_eps(pred, z, t, schedule), eps, atol=1e-12)
            np.testing.assert_allclose(to_v(pred, z, t, schedule), v, atol=1e-12)

    def test_convert_no_modifica_la_original(self, schedule, triple):
        x, eps, t, z = triple
        pred = Prediction(Kind.EPS, eps)
        nueva = convert(pred, "x", z, t, schedule)
        assert nueva.kind is Kind.X and pred.kind is Kind.EPS

    def test_objetivos(self, schedule, triple):
        x, eps, t, _ = triple
        assert target_for(Kind.X, x, eps, t, schedule) is x
        assert target_for("eps", x, eps, t, schedule) is eps
        np.testing.assert_array_equal(target_for(Kind.V, x, eps, t, schedule), v_from(x, eps, t, schedule))


class TestAmplificacion:
    @pytest.mark.parametrize("kind", list(Kind))
    def test_coincide_con_perturbacion(self, schedule, triple, kind):
        x, eps, t, z = triple
        valor = target_for(kind, x, eps, t, schedule)
        delta = 1.0
        base = to_x(Prediction(kind, valor), z, t, schedule)
        movido = to_x(Prediction(kind, valor + delta), z, t, schedule)
        razon = np.abs(movido - base)[:, 0, 0, 0] / delta
        np.testing.assert_allclose(razon, x_error_amplification(kind, t, schedule), rtol=1e-10)

    def test_eps_fragil_v_acotado(self, schedule):
        a = schedule.alpha_cum
        assert np.all(amplification_a(Kind.EPS, a[a < 0.005]) > 10)
        assert np.all(amplification_a(Kind.V, a) <= 1.0)
        np.testing.assert_array_equal(amplification_a(Kind.X, a), 1.0)


class TestUmbralYGuia:
    def test_dinamico_acotado(self, rng):
        x = gaussian((8, 4, 4, 3), rng) * 10
        y = threshold(x, "dynamic", 99.5)
        assert np.all(np.abs(y) <= 1.0)

    def test_dinamico_no_toca_valores_en_rango(self, rng):
        x = np.clip(gaussian((2, 4, 4, 1), rng) * 0.3, -0.9, 0.9)
        np.testing.assert_array_equal(threshold(x, "dynamic"), x)

    def test_estatico(self):
        np.testing.assert_array_equal(threshold(np.array([[-3.0, 0.5, 2.0]]), "static"), [[-1.0, 0.5, 1.0]])

    def test_modo_desconocido(self):
        with pytest.raises(ConfigError):
            threshold(np.zeros((1, 2)), "raro")

    def test_puntos_fijos(self, rng):
        c = Prediction(Kind.EPS, gaussian((2, 2, 2, 1), rng))
        u = Prediction(Kind.EPS, gaussian((2, 2, 2, 1), rng))
        assert guide(c, u, 1.0) is c
        assert guide(c, u, 0.0) is u
        np.testing.assert_allclose(guide(c, u, 2.0).value, 2 * c.value - u.value)

    def test_tipos_distintos(self):
        with pytest.raises(KindError):
            guide(Prediction(Kind.X, np.zeros(2)), Prediction(Kind.V, np.zeros(2)), 2.0)

    def test_config(self):
        with pytest.raises(ConfigError):
            GuidanceConfig(w=-1)
        with pytest.raises(ConfigError):
            GuidanceConfig(threshold="otro")


class TestValoresDeReferencia:
    @pytest.fixture
    def cuarto(self):
        # un solo paso con α = 0.25
        return from_betas([0.75])

    def test_eps_desde_x(self, cuarto):
        eps = eps_from_x(np.full((1, 1), 1.8660), np.full((1, 1), 2.0), 1, cuarto)
        assert eps.item() == pytest.approx(1.0, abs=1e-4)

    def test_v_ida_y_vuelta(self, cuarto):
        v = v_from(np.full((1, 1), 2.0), np.ones((1, 1)), 1, cuarto)
        assert v.item() == pytest.approx(-1.2321, abs=1e-4)
        assert x_from_v(np.full((1, 1), 1.8660), v, 1, cuarto).item() == pytest.approx(2.0, abs=1e-4)

    def test_amplificacion_eps(self, cuarto):
        assert float(x_error_amplification(Kind.EPS, 1, cuarto)) == pytest.approx(1.7321, abs=1e-4)

    def test_umbral_dinamico_a_mano(self):
        np.testing.assert_array_equal(threshold(np.array([[0.0, 2.0]]), "dynamic", 100), [[0.0, 1.0]])

    def test_guia_a_mano(self):
        out = guide(Prediction(Kind.V, np.ones(1)), Prediction(Kind.V, np.zeros(1)), 1.5)
        np.testing.assert_allclose(out.value, [1.5])

    def test_orden_de_amplificacion(self, schedule):
        t = np.arange(1, 1001)
        eps = x_error_amplification(Kind.EPS, t, schedule)
        v = x_error_amplification(Kind.V, t, schedule)
        bajos = schedule.alpha(t) < 0.5
        assert np.all(eps[bajos] > 1) and np.all(v[bajos] < 1)
        assert np.all(np.diff(eps) > 0)
