import numpy as np
import pytest

from packedhe.conv import Kernel
from packedhe.engine import EngineError, LayoutError
from packedhe.oracle import oracle_conv
from packedhe.pipeline import pack_batch
from packedhe.virtual import (
    VirtualLayout,
    batched_conv,
    reform,
    tile_kernel_span,
    vadd,
    vmul,
    vrot,
)

from conftest import make_engine, rand_int_matrix


def pack_rows(eng, layout, rows):
    grid = np.zeros((layout.m, layout.f))
    grid[:, : rows.shape[1]] = rows
    return eng.enc(grid.reshape(-1), layout=layout.tag())


def test_layout_validation():
    with pytest.raises(EngineError):
        VirtualLayout(2, 12, 3, 4)  # stride not a power of two
    with pytest.raises(EngineError):
        VirtualLayout(2, 8, 3, 3)  # image exceeds stride
    lay = VirtualLayout(2, 16, 3, 4)
    assert lay.pad == 4 and lay.image_slots == 12


def test_vrot_example_two_images():
    eng = make_engine(32)
    lay = VirtualLayout(2, 16, 3, 4)
    rows = np.array([np.arange(1, 13), np.arange(13, 25)], dtype=float)
    ct = pack_rows(eng, lay, rows)
    out = eng.dec(vrot(eng, ct, lay, 4)).reshape(2, 16)
    np.testing.assert_array_equal(out[0, :12], np.roll(rows[0], -4))
    np.testing.assert_array_equal(out[1, :12], np.roll(rows[1], -4))
    assert np.count_nonzero(out[:, 12:]) == 0


def test_vrot_zero_keeps_values(rng):
    eng = make_engine(32)
    lay = VirtualLayout(2, 16, 3, 4)
    rows = rand_int_matrix(rng, 2, 12)
    ct = pack_rows(eng, lay, rows)
    out = eng.dec(vrot(eng, ct, lay, 0)).reshape(2, 16)
    np.testing.assert_array_equal(out[:, :12], rows)


def test_vrot_composition(rng):
    eng = make_engine(64)
    lay = VirtualLayout(4, 16, 4, 3)
    rows = rand_int_matrix(rng, 4, 12)
    ct = pack_rows(eng, lay, rows)
    hw = lay.image_slots
    for _ in range(10):
        r1, r2 = int(rng.integers(0, hw)), int(rng.integers(0, hw))
        two_step = vrot(eng, vrot(eng, ct, lay, r1), lay, r2)
        one_step = vrot(eng, ct, lay, (r1 + r2) % hw)
        np.testing.assert_array_equal(eng.dec(two_step), eng.dec(one_step))


def test_vrot_range_and_fit_errors(rng):
    eng = make_engine(64)
    lay = VirtualLayout(4, 16, 4, 3)
    ct = pack_rows(eng, lay, rand_int_matrix(rng, 4, 12))
    with pytest.raises(EngineError):
        vrot(eng, ct, lay, 12)
    small = VirtualLayout(2, 16, 4, 3)
    with pytest.raises(LayoutError):
        vrot(eng, ct, small, 1)


def test_vmul_vadd_per_image(rng):
    eng = make_engine(32)
    lay = VirtualLayout(2, 16, 3, 4)
    xs = rand_int_matrix(rng, 2, 12)
    ys = rand_int_matrix(rng, 2, 12)
    cx, cy = pack_rows(eng, lay, xs), pack_rows(eng, lay, ys)
    np.testing.assert_array_equal(eng.dec(vmul(eng, cx, cy)).reshape(2, 16)[:, :12], xs * ys)
    np.testing.assert_array_equal(eng.dec(vadd(eng, cx, cy)).reshape(2, 16)[:, :12], xs + ys)
    zero = pack_rows(eng, lay, np.zeros((2, 12)))
    np.testing.assert_array_equal(eng.dec(vadd(eng, cx, zero)), eng.dec(cx))


def test_vadd_layout_mismatch():
    eng = make_engine(32)
    a = eng.enc(np.ones(4), layout=("dataset", 2, 16, 3, 4))
    b = eng.enc(np.ones(4), layout=("dataset", 2, 16, 4, 3))
    with pytest.raises(LayoutError):
        vadd(eng, a, b)


def test_batched_conv_identical_images(rng):
    eng = make_engine(64)
    lay = VirtualLayout(2, 32, 4, 4)
    img = rand_int_matrix(rng, 4, 4)
    ct = pack_batch(eng, np.stack([img, img]), lay)
    kern = Kernel(rand_int_matrix(rng, 2, 2), bias=1.0)
    span = tile_kernel_span(eng, kern, lay)
    out = eng.dec(batched_conv(eng, ct, lay, span)).reshape(2, 32)
    np.testing.assert_array_equal(out[0], out[1])


def test_batched_conv_matches_per_image_oracle(rng):
    eng = make_engine(512)
    lay = VirtualLayout(4, 128, 8, 8)
    imgs = rng.integers(0, 6, size=(4, 8, 8)).astype(float)
    kern = Kernel(rand_int_matrix(rng, 3, 3), bias=0.5)
    ct = pack_batch(eng, imgs, lay)
    span = tile_kernel_span(eng, kern, lay)
    out = eng.dec(batched_conv(eng, ct, lay, span)).reshape(4, 128)
    for b in range(4):
        block = out[b, :64].reshape(8, 8)
        np.testing.assert_array_equal(block[:6, :6], oracle_conv(imgs[b], kern.weights, 0.5))


def test_batched_conv_margin_enforced(rng):
    eng = make_engine(32)
    lay = VirtualLayout(2, 16, 4, 4)  # pad 0 < (k-1)*(w+1)
    ct = pack_batch(eng, rng.integers(0, 3, size=(2, 4, 4)).astype(float), lay)
    kern = Kernel(np.ones((2, 2)))
    span = tile_kernel_span(eng, kern, lay)
    with pytest.raises(LayoutError):
        batched_conv(eng, ct, lay, span)


def test_batched_conv_amortization_meters(rng):
    def meters_for(m):
        eng = make_engine(m * 128)
        lay = VirtualLayout(m, 128, 8, 8)
        imgs = rng.integers(0, 4, size=(m, 8, 8)).astype(float)
        kern = Kernel(np.ones((3, 3)), bias=1.0)
        span = tile_kernel_span(eng, kern, lay)
        ct = pack_batch(eng, imgs, lay)
        before = eng.meter_snapshot()
        batched_conv(eng, ct, lay, span)
        return eng.meter_snapshot().delta_since(before)

    assert meters_for(1) == meters_for(8)


def test_reform_flattens_block():
    eng = make_engine(16)
    lay = VirtualLayout(1, 16, 3, 3)
    vals = np.zeros(16)
    vals[:9] = [11, 12, 0, 21, 22, 0, 0, 0, 0]
    out, new_lay = reform(eng, eng.enc(vals), lay, 2, 2)
    np.testing.assert_array_equal(eng.dec(out)[:6], [11, 12, 21, 22, 0, 0])
    assert (new_lay.h, new_lay.w) == (2, 2)


def test_reform_identity_when_full(rng):
    eng = make_engine(32)
    lay = VirtualLayout(2, 16, 4, 4)
    rows = rand_int_matrix(rng, 2, 16)
    ct = eng.enc(rows.reshape(-1))
    out, _ = reform(eng, ct, lay, 4, 4)
    np.testing.assert_array_equal(eng.dec(out), rows.reshape(-1))


def test_reform_per_image_and_costs(rng):
    eng = make_engine(64)
    lay = VirtualLayout(2, 32, 5, 5)
    rows = np.zeros((2, 32))
    rows[:, :25] = rand_int_matrix(rng, 2, 25)
    ct = eng.enc(rows.reshape(-1))
    before = eng.meter_snapshot()
    out, _ = reform(eng, ct, lay, 3, 3)
    delta = eng.meter_snapshot().delta_since(before)
    got = eng.dec(out).reshape(2, 32)
    for b in range(2):
        want = rows[b, :25].reshape(5, 5)[:3, :3].reshape(-1)
        np.testing.assert_array_equal(got[b, :9], want)
        assert np.count_nonzero(got[b, 9:]) == 0
    assert delta.rot_count <= 3 and delta.cmul_count <= 3 and delta.add_count <= 3


def test_reform_block_too_large():
    eng = make_engine(16)
    lay = VirtualLayout(1, 16, 3, 3)
    with pytest.raises(EngineError):
        reform(eng, eng.enc(np.ones(9)), lay, 4, 2)
