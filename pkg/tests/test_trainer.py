import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seattn import checkpoint as ckpt
from seattn.config import DOCS, TrainConfig
from seattn.errors import ConfigurationError, ContractError, NumericError
from seattn.metrics import count_params
from seattn.nn import Parameter
from seattn.optim import Adam, adam_step
from seattn.tensor import Tensor
from seattn.train import Trainer, evaluate

TINY = dict(data_count=48, train_count=40, image_size=16, batch_size=8, epochs=2, pretrain_epochs=1,
            gen_channels=(32, 16, 8), disc_channels=(8, 16, 32), df_hidden=8, z_dim=16, ca_dim=16, eval_count=40)


def tiny_cfg(**kw):
    return TrainConfig(**{**TINY, **kw})


# -- Adam -------------------------------------------------------------------------------------------------
@pytest.mark.parametrize("g", [3.0, -0.5, 1e-3])
def test_adam_first_step_scalar_oracle(g):
    theta, m, v = np.zeros(1), np.zeros(1), np.zeros(1)
    adam_step(theta, np.array([g]), m, v, t=1, lr=0.1, beta1=0.0, beta2=0.9, eps=1e-8)
    # m_hat = g, v_hat = g^2, so the step is lr * sign(g) up to eps
    assert theta[0] == pytest.approx(-0.1 * g / (abs(g) + 1e-8), rel=1e-15)


def test_adam_two_steps_scalar_oracle():
    theta, m, v = np.array([1.0]), np.zeros(1), np.zeros(1)
    b1, b2, lr, eps = 0.5, 0.9, 0.01, 1e-8
    ref_theta, ref_m, ref_v = 1.0, 0.0, 0.0
    for t, g in ((1, 2.0), (2, -1.0)):
        adam_step(theta, np.array([g]), m, v, t, lr, b1, b2, eps)
        ref_m = b1 * ref_m + (1 - b1) * g
        ref_v = b2 * ref_v + (1 - b2) * g * g
        ref_theta -= lr * (ref_m / (1 - b1**t)) / ((ref_v / (1 - b2**t)) ** 0.5 + eps)
    assert theta[0] == pytest.approx(ref_theta, rel=1e-14)


def test_adam_zero_gradient_leaves_params():
    p = Parameter(np.arange(4.0))
    opt = Adam([("p", p)], lr=0.1)
    p.grad = Tensor(np.zeros(4))
    opt.step()
    np.testing.assert_array_equal(p.data, np.arange(4.0))


def test_adam_nan_names_parameter_and_changes_nothing():
    a, b = Parameter(np.ones(2)), Parameter(np.ones(2))
    opt = Adam([("good", a), ("bad", b)], lr=0.1)
    a.grad, b.grad = Tensor(np.ones(2)), Tensor(np.array([1.0, np.nan]))
    with pytest.raises(NumericError, match="bad"):
        opt.step()
    np.testing.assert_array_equal(a.data, 1.0)


@pytest.mark.parametrize("kw", [dict(lr=0.0), dict(lr=1e-3, betas=(1.0, 0.9)), dict(lr=1e-3, betas=(0.0, 1.0))])
def test_adam_rejects_bad_hyperparameters(kw):
    with pytest.raises(ConfigurationError):
        Adam([("p", Parameter(np.zeros(1)))], **kw)


def test_adam_deterministic():
    def trajectory():
        p = Parameter(np.ones(3))
        opt = Adam([("p", p)], lr=0.01)
        for g in np.random.default_rng(0).standard_normal((5, 3)):
            p.grad = Tensor(g)
            opt.step()
        return p.data.tobytes()

    assert trajectory() == trajectory()


# -- configuration ------------------------------------------------------------------------------------------
def test_config_defaults_match_optimizer_settings():
    c = TrainConfig()
    assert (c.lr_g, c.lr_d, c.beta1, c.beta2, c.adam_eps, c.batch_size) == (1e-4, 4e-4, 0.0, 0.9, 1e-8, 16)
    assert (c.gamma, c.lam, c.mu, c.mu1, c.gp_k, c.gp_p) == (5.0, 0.2, 5.0, 10.0, 2.0, 6.0)


def test_config_text_round_trip_and_every_key_documented():
    c = tiny_cfg(lam=0.35, seed=7)
    assert TrainConfig.from_text(c.to_text()) == c
    assert set(DOCS) == {k.split(" = ")[0] for k in c.to_text().splitlines() if not k.startswith("#")}


@pytest.mark.parametrize("text,match", [("lamda = 0.2", "unknown"), ("lam = 0.2\nlam = 0.3", "duplicate"),
                                        ("epochs = five", "bad value"), ("just words", "expected")])
def test_config_errors(text, match):
    with pytest.raises(ConfigurationError, match=match):
        TrainConfig.from_text(text)


@pytest.mark.parametrize("kw", [dict(lr_g=0.0), dict(beta2=1.0), dict(beta2=0.0), dict(image_size=16),
                                dict(batch_size=1), dict(lam=1.5)])
def test_config_invariants(kw):
    with pytest.raises(ConfigurationError):
        TrainConfig(**kw)


def test_config_comments_ignored():
    cfg = TrainConfig.from_text("# header\nseed = 9  # trailing\n\n")
    assert cfg.seed == 9


# -- checkpoint format -------------------------------------------------------------------------------------------
@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**40), st.lists(st.sampled_from(["float32", "float64", "int64"]), max_size=4))
def test_checkpoint_encode_decode(step, dtypes):
    rng = np.random.default_rng(step % 1000)
    tensors = {f"t{i}.w": (rng.standard_normal((2, i + 1)) * 100).astype(d) for i, d in enumerate(dtypes)}
    ck = ckpt.Checkpoint(step, "seed = 1\n", tensors, {"rng": ckpt.json_record({"b": 1, "a": [2]})})
    blob = ckpt.encode(ck)
    back = ckpt.decode(blob)
    assert back.step == step and back.config_text == "seed = 1\n"
    assert all(back.tensors[k].tobytes() == v.tobytes() and back.tensors[k].dtype == v.dtype
               for k, v in tensors.items())
    assert ckpt.encode(back) == blob


def test_checkpoint_magic_and_version():
    blob = ckpt.encode(ckpt.Checkpoint(3, "", {}))
    assert blob[:4] == b"SEAT" and int.from_bytes(blob[4:8], "little") == ckpt.VERSION
    bad = blob[:4] + (ckpt.VERSION + 1).to_bytes(4, "little") + blob[8:]
    with pytest.raises(ContractError, match="version"):
        ckpt.decode(bad)
    with pytest.raises(ContractError):
        ckpt.decode(b"NOPE" + blob[4:])
    with pytest.raises(ContractError):
        ckpt.decode(blob[:-1])
    with pytest.raises(ContractError):
        ckpt.decode(blob + b"\0")


# -- training ------------------------------------------------------------------------------------------------------
@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    tr = Trainer(tiny_cfg(checkpoint_every=5))
    lines = tr.run(out_dir=out)
    return tr, lines, out


def test_log_lines_and_invariants(tiny_run):
    tr, lines, out = tiny_run
    assert len(lines) == tr.total_steps == 15
    assert (out / "train.log").read_text().splitlines() == lines
    gan = [line for line in lines if not line.startswith("#")]
    assert len(gan) == 10
    for line in gan:
        kv = dict(item.split("=") for item in line.split())
        vals = {k: float(v) for k, v in kv.items()}
        assert abs(vals["l_d"] - (0.2 * vals["l_s"] + 0.8 * vals["l_w"])) < 1e-9 * max(1, abs(vals["l_d"]))
        assert abs(vals["l_total"] - (vals["l_g"] + 5 * vals["l_d"])) < 1e-9 * max(1, abs(vals["l_total"]))


def test_checkpoint_cadence(tiny_run):
    _, _, out = tiny_run
    assert sorted(p.name for p in out.glob("*.bin")) == ["ckpt_000005.bin", "ckpt_000010.bin", "ckpt_000015.bin",
                                                         "last.bin"]
    assert (out / "ckpt_000015.bin").read_bytes() == (out / "last.bin").read_bytes()


def test_identical_runs_bit_identical(tiny_run, tmp_path):
    _, lines, out = tiny_run
    again = Trainer(tiny_cfg(checkpoint_every=5))
    assert again.run(out_dir=tmp_path) == lines
    for name in ("ckpt_000005.bin", "last.bin"):
        assert (tmp_path / name).read_bytes() == (out / name).read_bytes()


def test_save_load_save_byte_identical(tiny_run, tmp_path):
    _, _, out = tiny_run
    tr = Trainer.from_checkpoint(out / "last.bin")
    tr.save(tmp_path / "again.bin")
    assert (tmp_path / "again.bin").read_bytes() == (out / "last.bin").read_bytes()
    assert count_params(tr.models) == count_params(tiny_run[0].models)


def test_resume_reproduces_next_ten_steps(tiny_run):
    _, lines, out = tiny_run
    tr = Trainer.from_checkpoint(out / "ckpt_000005.bin")
    assert tr.run(max_steps=10) == lines[5:15]
    assert ckpt.encode(tr.to_checkpoint()) == (out / "last.bin").read_bytes()


def test_checkpoint_holds_optimizer_state_and_config(tiny_run):
    _, _, out = tiny_run
    ck = ckpt.load(out / "last.bin")
    assert ck.step == 15 and TrainConfig.from_text(ck.config_text) == tiny_cfg(checkpoint_every=5)
    assert any(k.startswith("adam_d.m.") for k in ck.tensors) and any(k.startswith("adam_g.v.") for k in ck.tensors)
    assert ck.record_json("adam.t") == {"pre": 5, "g": 10, "d": 10}


def test_dataset_config_mismatch():
    from seattn.data import DatasetManifest, SynthDataset

    ds = SynthDataset.generate(DatasetManifest(seed=1, count=48, image_size=16, train_count=40))
    with pytest.raises(ContractError):
        Trainer(tiny_cfg(), ds)


def test_evaluate_deterministic_and_complete(tiny_run):
    tr = tiny_run[0]
    a, b = evaluate(tr), evaluate(tr)
    assert a == b
    assert a["finite"] == 1 and a["probe_real_val"] == 1.0 and a["proxy_fid"] >= 0


def test_nan_aborts_with_step_and_keeps_checkpoints(tmp_path):
    tr = Trainer(tiny_cfg(checkpoint_every=2, epochs=1))
    tr.run(out_dir=tmp_path, max_steps=6)
    before = (tmp_path / "ckpt_000006.bin").read_bytes()
    tr.models.G.to_rgb.weight.data[:] = np.nan
    with pytest.raises(NumericError, match="step 6"):
        tr.run(out_dir=tmp_path)
    assert (tmp_path / "ckpt_000006.bin").read_bytes() == before


@pytest.mark.slow
def test_smoke_config_progress(tmp_path):
    """200 training samples at 16x16 for 2 epochs: runs within budget and learns something."""
    cfg = TrainConfig(data_count=260, train_count=200, image_size=16, epochs=2,
                      gen_channels=(256, 128, 64), disc_channels=(32, 64, 128))
    t0 = time.perf_counter()
    tr = Trainer(cfg)
    tr.run(out_dir=tmp_path)
    rep = evaluate(tr)
    elapsed = time.perf_counter() - t0
    print(f"smoke: {elapsed:.0f}s {dict(rep)}")
    assert elapsed < 600
    assert rep["finite"] == 1
    assert rep["d_gap_val"] > 0
    assert rep["probe_generated_val"] > rep["probe_shuffled_val"]
