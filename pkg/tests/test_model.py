import numpy as np
import pytest
from conftest import tiny_config
from hypothesis import given, strategies as st

from spacetime_mae import tensor as tc
from spacetime_mae.checkpoint import (
    CheckpointError,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from spacetime_mae.gradcheck import check_gradients
from spacetime_mae.masking import sample_agnostic, sample_mask
from spacetime_mae.model import (
    MaeConfig,
    MaeModel,
    block,
    classify,
    decode,
    decoder_input,
    embed_tokens,
    encode,
    forward_pretrain,
    init_head,
    loss,
    param_count,
    pooled_features,
    targets_for,
)
from spacetime_mae.tensor import ContractError, DimensionError, Tensor
from spacetime_mae.tokenizer import PatchSpec
from spacetime_mae.video import ConfigError, VideoClip


def clip_for(cfg, seed=0):
    T, H, W = cfg.input_size
    return VideoClip(np.random.default_rng(seed).uniform(size=(T, H, W, cfg.patch.in_channels)).astype(np.float32))


def test_config_invariants():
    with pytest.raises(ConfigError):
        tiny_config(heads_enc=3)
    with pytest.raises(ConfigError):
        tiny_config(d_dec=32)
    with pytest.raises(ConfigError):
        tiny_config(input_size=(4, 15, 16))


# sequence lengths ---------------------------------------------------------------------


def reference_grid_config(**kw):
    # the reference 8x14x14 token grid with a one-pixel, narrow model
    base = dict(patch=PatchSpec(2, 1, 1), input_size=(16, 14, 14), d_enc=8, depth_enc=1, heads_enc=1,
                d_dec=4, depth_dec=1, heads_dec=1, mlp_ratio=1)
    base.update(kw)
    return MaeConfig(**base)


def test_encoder_sees_156_of_1568():
    cfg = reference_grid_config()
    m = MaeModel(cfg)
    clip = clip_for(cfg)
    plan = sample_agnostic(cfg.grid, 0.9, 0)
    with tc.no_grad():
        enc = encode(clip, plan, m)
        assert enc.shape == (156, 8)
        assert decoder_input(enc, plan, m).shape == (1568, 4)
        assert decode(enc, plan, m).shape == (1412, 1)
        assert encode(clip, sample_agnostic(cfg.grid, 0.0, 0), m).shape == (1568, 8)


def test_geometry_mismatch_is_contract_error():
    cfg = tiny_config()
    m = MaeModel(cfg)
    with pytest.raises(ContractError):
        encode(clip_for(cfg), sample_agnostic((1, 4, 4), 0.5, 0), m)
    with pytest.raises(ContractError):
        encode(VideoClip(np.zeros((2, 16, 16, 1), np.float32)), sample_agnostic(cfg.grid, 0.5, 0), m)


def test_decode_count_mismatch():
    cfg = tiny_config()
    m = MaeModel(cfg)
    plan = sample_agnostic(cfg.grid, 0.5, 0)
    with pytest.raises(ContractError):
        decode(Tensor(np.zeros((3, cfg.d_enc), np.float32)), plan, m)


def test_zero_weights_predict_zero():
    cfg = tiny_config()
    m = MaeModel(cfg)
    for name, t in m.params.items():
        if not name.endswith("norm1.weight") and not name.endswith("norm2.weight"):
            t.data[...] = 0
    plan = sample_agnostic(cfg.grid, 0.75, 0)
    with tc.no_grad():
        preds = decode(encode(clip_for(cfg), plan, m), plan, m)
    assert not preds.data.any()


def test_masked_tokens_get_distinct_decoder_inputs():
    cfg = tiny_config(input_size=(4, 32, 16))  # 32 tokens
    m = MaeModel(cfg)
    plan = sample_agnostic(cfg.grid, 0.75, 1)
    with tc.no_grad():
        x = decoder_input(encode(clip_for(cfg), plan, m), plan, m).data
    a, b = plan.masked[:2]
    assert not np.allclose(x[a], x[b])
    # what differs is exactly the positional rows
    pos = m.dec_pos.materialize(cfg.grid)
    np.testing.assert_allclose(x[a] - pos[a], m["mask_token"].data, rtol=1e-6, atol=1e-7)


def _encoder_stack(model, tokens, order):
    x = tc.gather_rows(tokens, order)
    for i in range(model.cfg.depth_enc):
        x = block(model, f"enc.{i}", x, model.cfg.heads_enc)
    return x.data


@given(seed=st.integers(0, 1000))
def test_encoder_is_permutation_equivariant(seed):
    cfg = tiny_config(dtype="float64")
    m = MaeModel(cfg, seed=1)
    plan = sample_agnostic(cfg.grid, 0.5, seed)
    perm = np.random.default_rng(seed).permutation(plan.visible.size)
    with tc.no_grad():
        tokens = embed_tokens(m, clip_for(cfg, seed))
        base = _encoder_stack(m, tokens, plan.visible)
        shuffled = _encoder_stack(m, tokens, plan.visible[perm])
    np.testing.assert_allclose(shuffled, base[perm], rtol=1e-12, atol=1e-12)


def test_sparse_and_dense_agree_only_before_attention():
    cfg = tiny_config(dtype="float64")
    m = MaeModel(cfg)
    clip = clip_for(cfg)
    plan = sample_agnostic(cfg.grid, 0.75, 0)
    dense_plan = sample_agnostic(cfg.grid, 0.0, 0)
    with tc.no_grad():
        tokens = embed_tokens(m, clip).data
        sparse = encode(clip, plan, m).data
        dense = encode(clip, dense_plan, m).data
    # same embedding layer input
    np.testing.assert_array_equal(tc.gather_rows(Tensor(tokens), plan.visible).data, tokens[plan.visible])
    # restricted attention context changes the outputs
    assert not np.allclose(sparse, dense[plan.visible], atol=1e-6)


# loss ---------------------------------------------------------------------------------------


def _plan_and_targets(seed=0):
    cfg = tiny_config()
    plan = sample_agnostic(cfg.grid, 0.75, seed)
    tgt = np.random.default_rng(seed).normal(size=(cfg.num_tokens, cfg.patch.slice_dim)).astype(np.float32)
    return plan, tgt


def test_loss_closed_forms():
    plan, tgt = _plan_and_targets()
    assert float(loss(Tensor(tgt[plan.masked]), tgt, plan).data) == 0.0
    assert float(loss(Tensor(tgt[plan.masked] + 1), tgt, plan).data) == pytest.approx(1.0, abs=1e-6)


def test_visible_targets_do_not_matter():
    plan, tgt = _plan_and_targets(2)
    preds = Tensor(np.zeros((plan.masked.size, tgt.shape[1]), np.float32))
    before = loss(preds, tgt, plan).data.tobytes()
    tgt[plan.visible] += 123.0
    assert loss(preds, tgt, plan).data.tobytes() == before


def test_no_masked_tokens_is_an_error():
    cfg = tiny_config()
    plan = sample_agnostic(cfg.grid, 0.0, 0)
    with pytest.raises(ContractError, match="no masked tokens; ratio too low"):
        loss(Tensor(np.zeros((1, 16))), np.zeros((8, 16)), plan)
    with pytest.raises(ContractError, match="ratio too low"):
        forward_pretrain(clip_for(cfg), plan, MaeModel(cfg))


def test_loss_shape_mismatch():
    plan, tgt = _plan_and_targets()
    with pytest.raises(DimensionError):
        loss(Tensor(np.zeros((plan.masked.size, 3))), tgt, plan)


def test_loss_ignores_mask_order():
    plan, tgt = _plan_and_targets(3)
    preds = np.random.default_rng(0).normal(size=(plan.masked.size, tgt.shape[1]))
    perm = np.random.default_rng(1).permutation(plan.masked.size)
    a = float(loss(Tensor(preds), tgt, plan).data)
    b = float(np.mean((preds[perm] - tgt[plan.masked][perm]) ** 2))
    assert a == pytest.approx(b, rel=1e-6)


# gradients -------------------------------------------------------------------------------------


@pytest.mark.parametrize("normalize", [True, False])
def test_full_forward_gradcheck(normalize):
    cfg = tiny_config(d_enc=32, d_dec=16, heads_enc=4, heads_dec=2, dtype="float64", target_normalize=normalize)
    assert cfg.grid == (2, 4, 4) and cfg.depth_enc == 2
    m = MaeModel(cfg, seed=3)
    clip = clip_for(cfg, 5)
    plan = sample_agnostic(cfg.grid, 0.75, 7)
    names = list(m.params)
    errs = check_gradients(lambda: forward_pretrain(clip, plan, m)[0], [m[n] for n in names],
                           max_entries=12, rng=np.random.default_rng(0))
    worst = max(errs, key=errs.get)
    assert errs[worst] < 1e-4, names[worst]
    # every parameter receives a gradient
    assert all(m[n].grad is not None for n in names)


def test_normalize_toggle_changes_loss():
    cfg_a, cfg_b = tiny_config(), tiny_config(target_normalize=False)
    clip = clip_for(cfg_a)
    plan = sample_agnostic(cfg_a.grid, 0.75, 0)
    with tc.no_grad():
        a = float(forward_pretrain(clip, plan, MaeModel(cfg_a))[0].data)
        b = float(forward_pretrain(clip, plan, MaeModel(cfg_b))[0].data)
    assert a != b


def test_fixed_seed_loss_is_bit_identical():
    cfg = tiny_config()
    clip = clip_for(cfg)
    plan = sample_agnostic(cfg.grid, 0.75, 0)
    vals = []
    for _ in range(2):
        m = MaeModel(cfg, seed=11)
        loss_t, _ = forward_pretrain(clip, plan, m)
        tc.backward(loss_t)
        vals.append((loss_t.data.tobytes(), m["patch_embed.weight"].grad.tobytes()))
    assert vals[0] == vals[1]


# classification ----------------------------------------------------------------------------------


def test_zero_head_gives_zero_logits():
    cfg = tiny_config()
    head = init_head(cfg.d_enc, 5)
    head["head.weight"].data[...] = 0
    with tc.no_grad():
        assert not classify(clip_for(cfg), MaeModel(cfg), head).data.any()


def test_head_dim_mismatch():
    cfg = tiny_config()
    with pytest.raises(DimensionError):
        classify(clip_for(cfg), MaeModel(cfg), init_head(cfg.d_enc + 1, 3))


def test_pooling_is_order_invariant():
    cfg = tiny_config(dtype="float64")
    m = MaeModel(cfg)
    with tc.no_grad():
        enc = encode(clip_for(cfg), sample_agnostic(cfg.grid, 0.0, 0), m).data
        pooled = pooled_features(clip_for(cfg), m).data[0]
    np.testing.assert_allclose(pooled, enc[::-1].mean(axis=0), rtol=1e-12)


def test_masked_finetune_uses_half_the_tokens():
    cfg = tiny_config()
    m = MaeModel(cfg)
    plan = sample_mask("agnostic", cfg.grid, 0.5, 0)
    with tc.no_grad():
        assert encode(clip_for(cfg), plan, m).shape[0] == cfg.num_tokens // 2
        assert classify(clip_for(cfg), m, init_head(cfg.d_enc, 4), plan).shape == (1, 4)


# parameters and checkpoints -------------------------------------------------------------------------


@pytest.mark.parametrize("width,depth,heads,dec", [(48, 3, 3, 32), (64, 4, 4, 32), (80, 5, 5, 32)])
def test_param_count_matches_allocation(width, depth, heads, dec):
    # ViT-B/L/H proportions scaled down
    cfg = MaeConfig(PatchSpec(2, 4, 3), (4, 16, 16), width, depth, heads, dec, 2, 4)
    assert MaeModel(cfg).num_parameters() == param_count(cfg)


def test_checkpoint_roundtrip(tmp_path):
    m = MaeModel(tiny_config(), seed=4)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, m.state_dict())
    back = load_checkpoint(path)
    assert list(back) == list(m.params)
    assert all(back[k].tobytes() == m[k].data.tobytes() for k in back)
    assert encode_checkpoint(back) == path.read_bytes()
    other = MaeModel(tiny_config(), seed=5)
    other.load_state_dict(back)
    assert other["dec_embed.weight"].data.tobytes() == m["dec_embed.weight"].data.tobytes()


def test_checkpoint_layout():
    buf = encode_checkpoint({"ab": np.array([[1.0, 2.0]], np.float32)})
    assert buf == (b"MAECKPT1" + (1).to_bytes(4, "little") + (2).to_bytes(4, "little") + b"ab"
                   + (2).to_bytes(4, "little") + (1).to_bytes(4, "little") + (2).to_bytes(4, "little")
                   + np.array([1.0, 2.0], "<f4").tobytes())


def test_checkpoint_errors():
    buf = encode_checkpoint({"w": np.zeros(3, np.float32)})
    for bad in (b"MAECKPT2" + buf[8:], buf[:-2], buf + b"\0"):
        with pytest.raises(CheckpointError):
            decode_checkpoint(bad)
    m = MaeModel(tiny_config())
    with pytest.raises(KeyError):
        m.load_state_dict({"w": np.zeros(3)})


def test_targets_follow_config():
    cfg = tiny_config(target_normalize=False)
    clip = clip_for(cfg)
    t = targets_for(clip, sample_agnostic(cfg.grid, 0.5, 0), MaeModel(cfg))
    assert t.shape == (cfg.num_tokens, cfg.patch.slice_dim)
    assert t.min() >= 0.0 and t.max() <= 1.0
