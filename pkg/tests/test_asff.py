import numpy as np
import pytest

from modalfuse import ops
from modalfuse.asff import asff_forward, asff_stages, attention_fusion, dfm_forward, fm_forward, fmb_forward
from modalfuse.autograd import Tape, backward, finite_diff_grad, relative_error
from modalfuse.errors import ConfigError, ShapeError
from modalfuse.gradcheck import module_check
from modalfuse.serialize import WeightArchive
from modalfuse.tensor import Tensor
from modalfuse.weights import asff_params, tie_modalities, zero_learnables

import oracles
from support import TEST_ASFF, archive, plain, rand, widen


def params(seed=0, groups=2, wide=False, tie=False):
    a = archive("asff", seed)
    if tie:
        a = tie_modalities(a)
    return asff_params(widen(a) if wide else a, groups)


def test_zero_weights_annihilate():
    p = asff_params(zero_learnables(archive("asff", 0)), 2)
    rng = np.random.default_rng(0)
    x, y = rand(rng, (2, 8, 8, 8)), rand(rng, (2, 8, 8, 8))
    f_a, f_b, f_c = asff_stages(x, y, p)
    assert not f_a.data.any() and not f_b.data.any() and not f_c.data.any()


def test_stage_zero_weight_examples():
    rng = np.random.default_rng(1)
    z = asff_params(zero_learnables(archive("asff", 1)), 2)
    x = rand(rng, (1, 8, 8, 8))
    assert not dfm_forward(x, z.dfm).data.any()
    p = params(1)
    merge_zero = zero_learnables(archive("asff", 1), prefixes=("fm.merge.",))
    assert not fm_forward(x, asff_params(merge_zero, 2).fm).data.any()
    assert fm_forward(x, p.fm).dims == x.dims


def test_residual_identity_bit_exact():
    a = zero_learnables(archive("asff", 2), prefixes=("dfm.", "fm."))
    rng = np.random.default_rng(2)
    x, y = rand(rng, (2, 8, 8, 8)), rand(rng, (2, 8, 8, 8))
    f_a, f_b, _ = asff_stages(x, y, asff_params(a, 2))
    assert f_b.bit_equal(f_a)


def test_fmb_equals_manual_composition():
    p = params(3)
    f_a = rand(np.random.default_rng(3), (1, 8, 8, 8))
    f_dr = ops.add(dfm_forward(f_a, p.dfm), f_a)
    manual = ops.add(fm_forward(f_dr, p.fm), f_dr)
    assert fmb_forward(f_a, p.dfm, p.fm).bit_equal(manual)


def test_shape_preservation():
    rng = np.random.default_rng(4)
    for dims, groups in (((2, 8, 16, 16), 4), ((1, 8, 8, 8), 2), ((3, 4, 2, 6), 2), ((1, 12, 4, 4), 3)):
        from modalfuse import ModuleConfig, init_weights

        cfg = ModuleConfig(dims[1], groups=groups)
        p = asff_params(init_weights(cfg, "asff", 0), groups)
        x, y = rand(rng, dims), rand(rng, dims)
        assert attention_fusion(x, y, p).dims == dims
        assert asff_forward(x, y, p).dims == dims


def test_shuffle_output_is_permutation_of_fb():
    p = params(5)
    rng = np.random.default_rng(5)
    _, f_b, f_c = asff_stages(rand(rng, (1, 8, 8, 8)), rand(rng, (1, 8, 8, 8)), p)
    assert np.array_equal(np.sort(f_b.data, axis=None), np.sort(f_c.data, axis=None))
    perm = ops.shuffle_permutation(8, 2)
    assert np.array_equal(f_c.data, f_b.data[:, perm])


def test_modality_symmetry_with_tied_weights():
    p = params(6, tie=True)
    assert p.cam_rgb.weight.bit_equal(p.cam_ir.weight) and p.dw_rgb.bias.bit_equal(p.dw_ir.bias)
    rng = np.random.default_rng(6)
    for _ in range(5):
        x, y = rand(rng, (2, 8, 8, 8)), rand(rng, (2, 8, 8, 8))
        assert relative_error(attention_fusion(x, y, p), attention_fusion(y, x, p)) <= 1e-6
        assert relative_error(asff_forward(x, y, p), asff_forward(y, x, p)) <= 1e-6


def test_errors():
    p = params(7)
    with pytest.raises(ShapeError, match=r"\(1, 8, 8, 8\).*\(1, 8, 4, 4\)"):
        asff_forward(Tensor.ones((1, 8, 8, 8)), Tensor.ones((1, 8, 4, 4)), p)
    with pytest.raises(ShapeError):
        asff_forward(Tensor.ones((1, 8, 7, 8)), Tensor.ones((1, 8, 7, 8)), p)
    with pytest.raises(ConfigError):
        dfm_forward(Tensor.ones((1, 7, 4, 4)), p.dfm)
    with pytest.raises(ShapeError):
        dfm_forward(Tensor.ones((1, 8, 1, 1)), p.dfm)
    with pytest.raises(ConfigError):
        fm_forward(Tensor.ones((1, 7, 4, 4)), p.fm)
    with pytest.raises(ConfigError):
        asff_params(archive("asff", 0), 3)


def test_oracle_equivalence_float64():
    rng = np.random.default_rng(8)
    for seed in range(5):
        a = archive("asff", seed)
        x, y = rng.standard_normal((2, 8, 8, 8)), rng.standard_normal((2, 8, 8, 8))
        got = asff_stages(Tensor(x, np.float64), Tensor(y, np.float64), asff_params(widen(a), 2))
        ref = oracles.asff(x, y, plain(a), 2)
        for g, r in zip(got, ref):
            assert relative_error(g, r) <= 1e-6


def test_float32_path_tracks_oracle():
    rng = np.random.default_rng(9)
    a = archive("asff", 9)
    x, y = rng.standard_normal((1, 8, 8, 8)), rng.standard_normal((1, 8, 8, 8))
    got = asff_forward(Tensor(x), Tensor(y), asff_params(a, 2))
    ref = oracles.asff(x.astype(np.float32).astype(np.float64), y.astype(np.float32).astype(np.float64), plain(a), 2)[2]
    assert relative_error(got, ref) <= 1e-4


def test_constant_input_dfm_matches_oracle():
    a = archive("asff", 10)
    vals = np.random.default_rng(10).standard_normal(8).reshape(1, 8, 1, 1)
    x = np.broadcast_to(vals, (1, 8, 6, 6)).copy()
    got = dfm_forward(Tensor(x, np.float64), asff_params(widen(a), 2).dfm)
    assert relative_error(got, oracles.dfm(x, plain(a))) <= 1e-6


def test_alpha_beta_gradients_match_fd():
    a = widen(archive("asff", 11))
    rng = np.random.default_rng(11)
    f_a = rand(rng, (1, 8, 8, 8), np.float64)
    base = asff_params(a, 2)
    for name in ("dfm.modulate.alpha", "dfm.modulate.beta"):
        def fn(v, name=name):
            return ops.mean_all(dfm_forward(f_a, asff_params(WeightArchive(a).replace({name: v}), 2).dfm))

        with Tape() as tape:
            p = asff_params(WeightArchive(a), 2)
            tape.watch(name, p.dfm.modulate.alpha if name.endswith("alpha") else p.dfm.modulate.beta)
            ops.mean_all(dfm_forward(f_a, p.dfm))
        g = backward(tape, Tensor.ones((1, 1, 1, 1), np.float64))[name]
        assert relative_error(g, finite_diff_grad(fn, a[name], pin_branches=True)) <= 1e-3
    assert base.channels == 8


def test_mean_output_gradient_wrt_inputs():
    p = params(12)
    rng = np.random.default_rng(12)
    x, y = rand(rng, (1, 8, 8, 8)), rand(rng, (1, 8, 8, 8))
    with Tape() as tape:
        tape.watch("rgb", x)
        tape.watch("ir", y)
        ops.mean_all(asff_forward(x, y, p))
    g = backward(tape, Tensor.ones((1, 1, 1, 1)))
    p64 = params(12, wide=True)
    fd_x = finite_diff_grad(lambda v: ops.mean_all(asff_forward(v, y.astype(np.float64), p64)), x, pin_branches=True)
    fd_y = finite_diff_grad(lambda v: ops.mean_all(asff_forward(x.astype(np.float64), v, p64)), y, pin_branches=True)
    assert relative_error(g["rgb"], fd_x) <= 1e-3
    assert relative_error(g["ir"], fd_y) <= 1e-3


@pytest.mark.parametrize("which", ["asff", "dfm", "fm"])
def test_full_gradient_check_every_group(which):
    r = module_check(which, seed=3)
    assert r.passed, r.summary()
    if which == "asff":
        prefixes = {k.split(".")[0] for k in r.errors}
        assert {"cam_rgb", "cam_ir", "dw_rgb", "dw_ir", "pam", "dfm", "fm", "rgb", "ir"} <= prefixes
        assert "dfm.modulate.alpha" in r.errors and "dfm.modulate.beta" in r.errors


def test_train_mode_updates_running_stats_infer_does_not():
    a = archive("asff", 13)
    rng = np.random.default_rng(13)
    x, y = rand(rng, (2, 8, 8, 8)), rand(rng, (2, 8, 8, 8))
    p = asff_params(a, 2)
    before = p.fm.cbs1_bn.running_mean
    asff_forward(x, y, p, bn_mode="infer")
    assert p.fm.cbs1_bn.running_mean is before
    asff_forward(x, y, p, bn_mode="train")
    assert not p.fm.cbs1_bn.running_mean.bit_equal(before)
    assert TEST_ASFF.groups == 2
