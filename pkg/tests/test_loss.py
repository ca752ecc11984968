import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from transfuse import metrics
from transfuse.errors import ConfigError, ShapeError
from transfuse.loss import (
    LossConfig,
    gaussian_window,
    loss_components,
    loss_mse,
    loss_ssim,
    loss_total,
    loss_tv,
    ssim,
)

SMALL_WINDOW = LossConfig(ssim_window_radius=3)


def t(a):
    return torch.from_numpy(np.asarray(a, dtype=np.float64))


def test_window_normalised():
    w = gaussian_window(1.5, 5)
    assert w.shape == (11, 11)
    assert abs(float(w.sum()) - 1) < 1e-12


def test_identical_pair_zero_loss(rng):
    x = t(rng.random((32, 32)))
    total, mse, ls, tv = loss_components(x, x.clone())
    assert abs(float(total)) < 1e-9
    assert abs(float(ssim(x, x)) - 1) < 1e-9
    assert float(mse) == 0 and float(tv) == 0


def test_constant_offset_has_zero_tv(rng):
    # 8-bit levels keep x + 0.25 - x exact in binary floating point
    x = t(rng.integers(0, 256, (16, 16)) / 256)
    assert float(loss_tv(x + 0.25, x)) == 0.0
    assert float(loss_tv(x + 0.25, x, normalize=True)) == 0.0


def test_tv_hand_examples():
    # residual [[0, 1], [0, 0]]: |1-0| horizontally, |0-1| vertically
    out = t([[0.0, 1.0], [0.0, 0.0]])
    assert float(loss_tv(out, torch.zeros(2, 2, dtype=torch.float64))) == 2.0
    assert float(loss_tv(out, torch.zeros(2, 2, dtype=torch.float64), normalize=True)) == 0.5
    # per-image sum, averaged over the batch
    batch = torch.stack([out, torch.zeros(2, 2, dtype=torch.float64)])
    assert float(loss_tv(batch, torch.zeros_like(batch))) == 1.0


def test_mse_hand_example():
    out = t([[0.5, 0.0], [0.0, 0.0]])
    assert float(loss_mse(out, torch.zeros(2, 2, dtype=torch.float64))) == 0.0625


def test_ssim_of_constants_matches_closed_form():
    # constant images a, b: zero variance, so SSIM = (2ab + C1) / (a^2 + b^2 + C1)
    cfg = LossConfig()
    a, b = 0.3, 0.7
    expect = (2 * a * b + cfg.ssim_c1) / (a * a + b * b + cfg.ssim_c1)
    got = float(ssim(torch.full((16, 16), a, dtype=torch.float64),
                     torch.full((16, 16), b, dtype=torch.float64)))
    assert abs(got - expect) < 1e-12
    # against black, a=0: C1 / (b^2 + C1)
    got0 = float(ssim(torch.zeros(16, 16, dtype=torch.float64),
                      torch.ones(16, 16, dtype=torch.float64)))
    assert abs(got0 - cfg.ssim_c1 / (1 + cfg.ssim_c1)) < 1e-12


def test_loss_weights_combine():
    rng = np.random.default_rng(5)
    x, y = t(rng.random((16, 16))), t(rng.random((16, 16)))
    total, mse, ls, tv = loss_components(x, y, LossConfig(lambda1=2.0, lambda2=3.0))
    assert abs(float(total - (mse + 2 * ls + 3 * tv))) < 1e-12
    assert abs(float(loss_total(x, y, LossConfig(lambda1=0, lambda2=0)) - mse)) < 1e-15


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_loss_properties(seed):
    rng = np.random.default_rng(seed)
    x, y = t(rng.random((16, 16))), t(rng.random((16, 16)))
    s = float(ssim(x, y))
    assert -1 <= s <= 1
    assert abs(s - float(ssim(y, x))) < 1e-12
    assert float(loss_total(x, y)) >= 0
    assert abs(float(loss_tv(x, y)) - float(loss_tv(y, x))) < 1e-12


def test_numpy_and_torch_ssim_agree(rng):
    x, y = rng.random((24, 24)), rng.random((24, 24))
    assert abs(float(ssim(t(x), t(y))) - metrics.ssim(x, y)) < 1e-10
    assert abs(float(ssim(t(x), t(y), SMALL_WINDOW)) - metrics.ssim(x, y, SMALL_WINDOW)) < 1e-10


def central_difference_check(cfg, seed):
    rng = np.random.default_rng(seed)
    out = rng.uniform(0.1, 0.9, (8, 8))
    ref = rng.uniform(0.1, 0.9, (8, 8))
    x = t(out).requires_grad_(True)
    loss_total(x, t(ref), cfg).backward()
    analytic = x.grad.numpy()
    h = 1e-6
    numeric = np.empty_like(out)
    for idx in np.ndindex(out.shape):
        p, m = out.copy(), out.copy()
        p[idx] += h
        m[idx] -= h
        numeric[idx] = (float(loss_total(t(p), t(ref), cfg)) - float(loss_total(t(m), t(ref), cfg))) / (2 * h)
    return analytic, numeric


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradient_matches_central_differences(seed):
    analytic, numeric = central_difference_check(SMALL_WINDOW, seed)
    rel = np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1e-8)
    assert rel.max() < 1e-3


def test_errors():
    with pytest.raises(ShapeError):
        loss_total(torch.zeros(8, 8), torch.zeros(8, 9))
    with pytest.raises(ShapeError):
        loss_mse(torch.zeros(2, 3, 8, 8), torch.zeros(2, 3, 8, 8))
    with pytest.raises(ConfigError):
        ssim(torch.zeros(8, 8), torch.zeros(8, 8))  # 11x11 window does not fit
    with pytest.raises(ConfigError):
        LossConfig(ssim_c1=0)
    with pytest.raises(ConfigError):
        LossConfig(lambda1=-1)


def test_loss_is_differentiable_through_batches(rng):
    x = t(rng.random((2, 1, 16, 16))).requires_grad_(True)
    loss_ssim(x, t(rng.random((2, 1, 16, 16)))).backward()
    assert x.grad.shape == x.shape and torch.isfinite(x.grad).all()
