import numpy as np
import pytest

from pdm.core import gaussian, stream
from pdm.errores import PatchError
from pdm.patching import PatchConfig, from_patches, patch_shape, to_patches


class TestParches:
    def test_mapeo_2x2_a_mano(self):
        x = np.arange(8.0).reshape(1, 2, 2, 2)
        p = to_patches(x, 2)
        assert p.shape == (1, 1, 1, 8)
        # canal j·P·C + i·C + c
        np.testing.assert_array_equal(p.reshape(-1), [0, 1, 2, 3, 4, 5, 6, 7])

    def test_mapeo_con_desplazamiento(self):
        x = np.arange(16.0).reshape(1, 4, 4, 1)
        p = to_patches(x, 2)
        np.testing.assert_array_equal(p[0, 0, 1], [2, 3, 6, 7])
        np.testing.assert_array_equal(p[0, 1, 0], [8, 9, 12, 13])

    @pytest.mark.parametrize("P", [1, 2, 3, 4, 8])
    def test_ida_y_vuelta_exacta(self, P):
        rng = stream(P, "parches")
        for _ in range(50):
            N, h, w, C = (int(v) for v in rng.integers(1, 4, (4,)))
            x = gaussian((N, h * P, w * P, C), rng)
            np.testing.assert_array_equal(from_patches(to_patches(x, P), P), x)

    def test_p1_identidad(self, images):
        np.testing.assert_array_equal(to_patches(images, 1), images)

    def test_no_divisible(self):
        with pytest.raises(PatchError) as e:
            to_patches(np.zeros((1, 5, 4, 1)), 2)
        assert "H=5" in str(e.value) and "P=2" in str(e.value)

    def test_canales_no_divisibles(self):
        with pytest.raises(PatchError):
            from_patches(np.zeros((1, 2, 2, 3)), 2)

    def test_forma(self):
        assert patch_shape((2, 8, 8, 3), 4) == (2, 2, 2, 48)

    def test_config_invalida(self):
        with pytest.raises(PatchError):
            PatchConfig(0)

    def test_referencia_2x2(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 2, 2, 1)
        p = to_patches(x, 2)
        np.testing.assert_array_equal(p.reshape(-1), [1, 2, 3, 4])
        np.testing.assert_array_equal(from_patches(p, 2), x)

    def test_forma_a_escala_completa(self):
        p = to_patches(np.zeros((1, 256, 256, 3)), 4)
        assert p.shape == (1, 64, 64, 48)
        assert from_patches(p, 4).shape == (1, 256, 256, 3)
