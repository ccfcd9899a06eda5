import subprocess
import sys

import numpy as np
import pytest

from adtp import _kernels

needs_numba = pytest.mark.skipif(not _kernels.USING_NUMBA,
                                 reason="numba lane not active")


def lstm_inputs(seed=0, L=20, w=6, h=4):
    rng = np.random.default_rng(seed)
    mats = [rng.standard_normal((h, h + w)) * 0.3 for _ in range(4)]
    biases = [rng.standard_normal(h) * 0.1 for _ in range(4)]
    wy = rng.standard_normal(h)
    by = 0.17
    xs = rng.uniform(4, 6, (L, w))
    return mats, biases, wy, by, xs, np.zeros(h), np.zeros(h)


@needs_numba
class TestLaneAgreement:
    def test_fft_lanes_agree(self):
        rng = np.random.default_rng(1)
        data = rng.standard_normal((9, 64)) + 1j * rng.standard_normal((9, 64))
        rev, tw = _kernels._tables(64)
        a = _kernels._fft_pow2_many_numba(data.astype(np.complex128), rev, tw)
        b = _kernels._fft_pow2_many_numpy(data.astype(np.complex128)[:, rev],
                                          rev, tw)
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_lstm_forward_lanes_agree(self):
        mats, biases, wy, by, xs, h0, c0 = lstm_inputs()
        got_nb = _kernels._lstm_seq_forward_numba(*mats, *biases, wy, by,
                                                  xs, h0, c0)
        got_np = _kernels._lstm_seq_forward_numpy(*mats, *biases, wy, by,
                                                  xs, h0, c0)
        for a, b in zip(got_nb, got_np):
            np.testing.assert_allclose(a, b, atol=1e-12)

    def test_lstm_backward_lanes_agree(self):
        mats, biases, wy, by, xs, h0, c0 = lstm_inputs()
        caches = _kernels.lstm_seq_forward(*mats, *biases, wy, by, xs, h0, c0)
        A, CT, GU, GF, GO, C, TC, H, _ = caches
        dy = np.random.default_rng(2).standard_normal(xs.shape[0])
        got_nb = _kernels._lstm_seq_backward_numba(*mats, wy, c0, A, CT, GU,
                                                   GF, GO, C, TC, H, dy)
        got_np = _kernels._lstm_seq_backward_numpy(*mats, wy, c0, A, CT, GU,
                                                   GF, GO, C, TC, H, dy)
        for a, b in zip(got_nb, got_np):
            np.testing.assert_allclose(a, b, atol=1e-10)

    def test_predict_kernel_matches_forward_kernel(self):
        mats, biases, wy, by, xs, h0, c0 = lstm_inputs(seed=3)
        *_, H, y_fwd = _kernels.lstm_seq_forward(*mats, *biases, wy, by,
                                                 xs, h0, c0)
        y_pred, h_last, c_last = _kernels.lstm_seq_predict(
            *mats, *biases, wy, by, xs, h0, c0)
        np.testing.assert_allclose(y_pred, y_fwd, atol=1e-12)
        np.testing.assert_allclose(h_last, H[-1], atol=1e-12)


class TestLaneSelection:
    def test_env_flag_disables_numba(self):
        code = ("import adtp._kernels as k; "
                "print('lane', k.USING_NUMBA)")
        out = subprocess.run([sys.executable, "-c", code],
                             env={"PATH": "/usr/bin:/bin",
                                  "ADTP_NUMBA": "0"},
                             capture_output=True, text=True)
        assert out.returncode == 0
        assert "lane False" in out.stdout

    def test_fft_kernel_rejects_non_power_of_two(self):
        with pytest.raises(ValueError, match="power of two"):
            _kernels.fft_pow2_many(np.zeros((1, 30), dtype=np.complex128))
