import numpy as np
import pytest

from nsexit import arch
from nsexit.arch import VARIANTS, build_model, extract_mask, slice_submodel
from nsexit.nn import FcLayer, GruLayer


def _feats(rng, frames=9, batch=None):
    shape = (frames, 257) if batch is None else (batch, frames, 257)
    return rng.standard_normal(shape).astype(np.float32)


# ------------------------------------------------------------------ counting

def test_param_counts_match_published_sizes():
    assert build_model("baseline", 0).param_count() == 2_783_657
    assert build_model("pretrain_6exits", 0).param_count() == 2_783_657
    assert build_model("split_layers_6exits", 0).param_count() == 1_621_152
    assert build_model("concat_layers_6exits", 0).param_count() == 1_884_320


def test_four_and_six_exit_variants_same_size():
    for a, b in (("pretrain_6exits", "pretrain_4exits"),
                 ("split_layers_6exits", "split_layers_4exits"),
                 ("concat_layers_6exits", "concat_layers_4exits")):
        assert build_model(a, 0).param_count() == build_model(b, 0).param_count()


def test_enumerated_counts_match_layer_formulas():
    for variant in VARIANTS:
        model = build_model(variant, 0)
        closed = 0
        for st in model.stages:
            for layer in (st.phi, st.aux):
                if layer is None:
                    continue
                if isinstance(layer, GruLayer):
                    h, i = layer.hidden, layer.in_dim
                    closed += 3 * (i * h + h * h + 2 * h)
                else:
                    closed += layer.in_dim * layer.out_dim + layer.out_dim
        assert model.param_count() == closed, variant


def test_exit_sets():
    assert VARIANTS["baseline"].exits == (5,)
    assert VARIANTS["pretrain_6exits"].exits == (0, 1, 2, 3, 4, 5)
    assert VARIANTS["split_layers_4exits"].exits == (0, 1, 3, 5)


def test_unknown_variant_rejected():
    with pytest.raises(ValueError, match="unknown variant"):
        build_model("nope", 0)


# -------------------------------------------------------------- extract_mask

def test_extract_mask_gru_scaling():
    vals = np.zeros((1, 257))
    vals[0, :3] = [-1.0, 0.0, 1.0]
    mask = extract_mask(vals, "gru")
    assert np.allclose(mask[0, :3], [0.0, 0.5, 1.0])


def test_extract_mask_fc_sigmoid_of_zero_is_half():
    assert np.allclose(extract_mask(np.zeros((2, 300)), "fc"), 0.5)


def test_extract_mask_range(rng):
    vals = rng.standard_normal((10, 400)) * 50
    for kind in ("fc",):
        assert np.all((extract_mask(vals, kind) >= 0) & (extract_mask(vals, kind) <= 1))
    gru_vals = np.tanh(vals)
    mask = extract_mask(gru_vals, "gru")
    assert np.all((mask >= 0) & (mask <= 1))


def test_extract_mask_rejects_narrow_input():
    with pytest.raises(ValueError, match="mask bins"):
        extract_mask(np.zeros((4, 256)), "fc")


# ------------------------------------------------------------------- forward

def test_forward_all_exits_shapes(rng):
    model = build_model("pretrain_6exits", 1, profile="tiny")
    feats = _feats(rng)
    masks, _ = model.forward_all_exits(feats)
    assert sorted(masks) == [0, 1, 2, 3, 4, 5]
    assert all(m.shape == (9, 257) for m in masks.values())


def test_four_exit_masks_only_at_kept_stages(rng):
    model = build_model("pretrain_4exits", 1, profile="tiny")
    masks, _ = model.forward_all_exits(_feats(rng))
    assert sorted(masks) == [0, 1, 3, 5]


def test_zero_weight_model_gives_half_masks(rng):
    for variant in ("pretrain_6exits", "split_layers_6exits", "concat_layers_6exits"):
        model = build_model(variant, 1, profile="tiny")
        for t in model.params():
            t.value[...] = 0
        masks, _ = model.forward_all_exits(_feats(rng))
        for i, m in masks.items():
            assert np.allclose(m, 0.5), (variant, i)


def test_mask_range_all_variants(rng):
    for variant in VARIANTS:
        model = build_model(variant, 2, profile="tiny")
        feats = _feats(rng) * 30
        masks, _ = model.forward_all_exits(feats)
        for m in masks.values():
            assert np.all((m >= 0) & (m <= 1))


def test_prefix_consistency_bit_exact(rng):
    for variant in ("pretrain_6exits", "split_layers_6exits", "concat_layers_6exits",
                    "pretrain_4exits", "baseline"):
        model = build_model(variant, 3, profile="tiny")
        feats = _feats(rng)
        masks, _ = model.forward_all_exits(feats)
        for i in model.exits:
            assert np.array_equal(model.forward_to_exit(feats, i), masks[i]), (variant, i)


def test_forward_to_exit_invalid_exit(rng):
    model = build_model("pretrain_4exits", 1, profile="tiny")
    with pytest.raises(ValueError, match="exit 2"):
        model.forward_to_exit(_feats(rng), 2)


def test_forward_to_exit_touches_only_needed_stages(rng):
    # poison every parameter of later stages; a lazy pass never reads them
    model = build_model("pretrain_6exits", 1, profile="tiny")
    feats = _feats(rng)
    for st in model.stages[1:]:
        for t in st.phi.params():
            t.value[...] = np.nan
    mask = model.forward_to_exit(feats, 0)
    assert np.all(np.isfinite(mask))


def test_forward_to_exit_skips_own_aux_stage(rng):
    model = build_model("split_layers_6exits", 1, profile="tiny")
    feats = _feats(rng)
    for t in model.stages[2].aux.params():   # aux of the exit stage itself
        t.value[...] = np.nan
    for st in model.stages[3:]:
        for layer in (st.phi, st.aux):
            if layer is not None:
                for t in layer.params():
                    t.value[...] = np.nan
    assert np.all(np.isfinite(model.forward_to_exit(feats, 2)))


def test_batched_forward_matches_shapes(rng):
    model = build_model("concat_layers_6exits", 1, profile="tiny")
    masks, _ = model.forward_all_exits(_feats(rng, frames=6, batch=3))
    assert masks[5].shape == (3, 6, 257)


def test_streaming_state_matches_full_pass(rng):
    model = build_model("pretrain_6exits", 4, profile="tiny")
    feats = _feats(rng, frames=12)
    full = model.forward_to_exit(feats, 5)
    state = {}
    rows = [model.forward_to_exit(feats[t:t + 1], 5, state=state) for t in range(12)]
    assert np.allclose(np.vstack(rows), full, atol=1e-6)


def test_postact_flag_changes_fc_exits_only(rng):
    pre = build_model("pretrain_6exits", 5, profile="tiny", exit_activation="preact")
    post = build_model("pretrain_6exits", 5, profile="tiny", exit_activation="postact")
    feats = _feats(rng)
    m_pre, _ = pre.forward_all_exits(feats)
    m_post, _ = post.forward_all_exits(feats)
    assert not np.allclose(m_pre[0], m_post[0])      # relu floor pushes mask >= 0.5
    assert np.all(m_post[0] >= 0.5 - 1e-7)
    assert np.array_equal(m_pre[1], m_post[1])       # gru exits unaffected
    assert np.array_equal(m_pre[5], m_post[5])       # final sigmoid stage unaffected


# --------------------------------------------------------------------- slices

def test_slice_zero_contains_only_first_stage():
    model = build_model("pretrain_6exits", 1, profile="tiny")
    names = {t.name for t in slice_submodel(model, 0).tensors()}
    assert names == {"stage0.phi.W", "stage0.phi.b"}


def test_slice_five_is_full_model():
    model = build_model("pretrain_6exits", 1, profile="tiny")
    assert len(slice_submodel(model, 5).tensors()) == len(model.params())


def test_slice_three_of_split_excludes_aux_three():
    model = build_model("split_layers_6exits", 1, profile="tiny")
    names = {t.name for t in slice_submodel(model, 3).tensors()}
    for i in range(4):
        assert any(n.startswith(f"stage{i}.phi") for n in names)
    for i in range(3):
        assert any(n.startswith(f"stage{i}.aux") for n in names)
    assert not any(n.startswith("stage3.aux") for n in names)
    assert not any(n.startswith("stage4") or n.startswith("stage5") for n in names)


def test_slice_invalid_stage():
    model = build_model("pretrain_4exits", 1, profile="tiny")
    with pytest.raises(ValueError, match="not an exit"):
        slice_submodel(model, 2)


def test_submodel_shares_storage(rng):
    model = build_model("pretrain_6exits", 1, profile="tiny")
    sub = slice_submodel(model, 1)
    t = sub.tensors()[0]
    t.value[...] = 42.0
    assert np.all(model.stages[0].phi.W.value == 42.0)
