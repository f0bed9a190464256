"""End-to-end acceptance suite.

Each test prints one PASS line on success; failures surface as ordinary
assertion errors. Criterion 8 exercises an external pretrained backend and
auto-skips when the optional dependencies, weights or data are unavailable.
"""

import os
import time

import numpy as np
import pytest
from click.testing import CliRunner

from attrvr.attributes import (
    AttributeBank,
    FixtureClient,
    GenerationSettings,
    generate_bank,
    load_bank,
    precompute_embeddings,
    save_bank,
)
from attrvr.cli import main as cli_main
from attrvr.encoders import ToyDualEncoder
from attrvr.harness import make_shapes7, make_splits
from attrvr.reprogram import (
    ImageSample,
    frame_param_count,
    make_pattern,
    pad_and_apply,
)
from attrvr.scoring import ScoreConfig, knn_select, score_variant, sim_attr
from attrvr.separability import (
    LabeledEmbeddingSet,
    LemmaCheckConfig,
    attr_frequencies,
    cs,
    lemma_check,
)
from attrvr.training import TrainConfig, ce_loss_and_grad, select_attributes, train, evaluate

from conftest import BANK_PATH, RESPONSES_PATH
from test_reprogram import oracle_pad
from test_scoring import oracle_topk
from test_separability import oracle_cs, oracle_uv


def test_criterion_1_geometry():
    """Pad/apply geometry matches an elementwise oracle on 200 random cases."""
    t0 = time.time()
    rng = np.random.default_rng(0)
    for _ in range(200):
        f = int(rng.integers(0, 6))
        ih, iw = int(rng.integers(2, 14)), int(rng.integers(2, 14))
        c = int(rng.integers(1, 4))
        th, tw = ih + 2 * f, iw + 2 * f
        p = make_pattern((th, tw), c, f)
        p.delta = rng.normal(size=p.delta.shape)
        x = rng.random((c, ih, iw))
        got = pad_and_apply(ImageSample(x, 0), p, resize_interior=False)
        want = oracle_pad(x, f, (th, tw)) + p.delta * p.mask
        np.testing.assert_allclose(got, want, atol=1e-12)
        assert p.param_count == frame_param_count((th, tw), c, f)
        # interior invariance
        np.testing.assert_array_equal(got[:, f : th - f, f : tw - f], x)
    assert frame_param_count((224, 224), 3, 16) == 39936
    assert frame_param_count((224, 224), 3, 30) == 69840
    elapsed = time.time() - t0
    assert elapsed < 5.0, f"geometry suite took {elapsed:.1f}s"
    print(f"\nACCEPTANCE 1 geometry: PASS ({elapsed:.2f}s, 200 cases)")


def test_criterion_2_gradient():
    """Analytic pattern gradient matches central finite differences."""
    t0 = time.time()
    backend = ToyDualEncoder(seed=0)
    bank = precompute_embeddings(load_bank(BANK_PATH), backend)
    samples, _ = make_shapes7(n_per_class=2, seed=0)
    cfg = TrainConfig(frame=4, k=3, lam=0.5)
    eps = 1e-4
    for seed in range(5):
        rng = np.random.default_rng(seed)
        batch = [samples[int(i)] for i in rng.choice(len(samples), size=4, replace=False)]
        pattern = make_pattern((24, 24), 3, 4)
        pattern.delta = rng.normal(scale=0.05, size=pattern.delta.shape) * pattern.mask
        selections = [
            select_attributes(backend.encode_image(pad_and_apply(s, pattern)), bank, cfg, backend)
            for s in batch
        ]
        _, grad, _ = ce_loss_and_grad(batch, pattern, bank, cfg, backend, selections)

        def loss_at(delta):
            p2 = make_pattern((24, 24), 3, 4)
            p2.delta = delta
            return ce_loss_and_grad(batch, p2, bank, cfg, backend, selections)[0]

        mask_idx = np.flatnonzero(pattern.mask.ravel())
        for idx in rng.choice(mask_idx, size=16, replace=False):
            dp, dm = pattern.delta.ravel().copy(), pattern.delta.ravel().copy()
            dp[idx] += eps
            dm[idx] -= eps
            fd = (loss_at(dp.reshape(pattern.delta.shape)) -
                  loss_at(dm.reshape(pattern.delta.shape))) / (2 * eps)
            g = grad.ravel()[idx]
            denom = max(abs(fd), 1e-8)
            assert abs(g - fd) / denom < 1e-2, f"seed {seed} coord {idx}: {g} vs {fd}"
        interior = np.flatnonzero(1 - pattern.mask.ravel())
        assert np.all(grad.ravel()[interior] == 0.0)
    elapsed = time.time() - t0
    assert elapsed < 30.0, f"gradient suite took {elapsed:.1f}s"
    print(f"\nACCEPTANCE 2 gradient: PASS ({elapsed:.2f}s, 5 seeds x 16 coords)")


def _random_bank(rng, n_classes=3, m=8, dim=16):
    classes = [f"class {i}" for i in range(n_classes)]
    long = "synthetic attribute entry number"
    bank = AttributeBank(
        classes=classes,
        task_info="thing",
        des={c: [f"{long} {c} des {i}" for i in range(m)] for c in classes},
        dist={c: [f"{long} {c} dist {i}" for i in range(m)] for c in classes},
        m=m,
    )
    bank.embeddings = {
        (c, kind, i): rng.normal(size=dim)
        for c in classes
        for kind in ("des", "dist")
        for i in range(m)
    }
    return bank


def test_criterion_3_scoring_identities():
    """knn(k=1) == max and knn(k=m) == avg at 1e-12 over 100 random banks,
    plus the top-k selector against a full-sort oracle on 1000 vectors."""
    t0 = time.time()
    rng = np.random.default_rng(1)
    for _ in range(100):
        bank = _random_bank(rng, m=int(rng.integers(2, 12)))
        z = rng.normal(size=16)
        lam = float(rng.random())
        for cls in bank.classes:
            v1, _ = sim_attr(z, cls, bank, ScoreConfig(k=1, lam=lam))
            vmax = score_variant(z, cls, bank, ScoreConfig(variant="max", lam=lam))
            assert abs(v1 - vmax) < 1e-12
            vm, _ = sim_attr(z, cls, bank, ScoreConfig(k=bank.m, lam=lam))
            vavg = score_variant(z, cls, bank, ScoreConfig(variant="avg", lam=lam))
            assert abs(vm - vavg) < 1e-12
    for _ in range(1000):
        n = int(rng.integers(1, 40))
        sims = rng.choice([-1.0, -0.5, 0.0, 0.5, 0.5, 1.0], size=n)
        k = int(rng.integers(1, n + 1))
        assert knn_select(sims, k) == oracle_topk(list(sims), k)
    elapsed = time.time() - t0
    assert elapsed < 5.0, f"scoring suite took {elapsed:.1f}s"
    print(f"\nACCEPTANCE 3 scoring: PASS ({elapsed:.2f}s, 100 banks + 1000 sorts)")


def test_criterion_4_separability():
    """Separability score and attribute frequencies match counting oracles;
    the inequality checker holds with strict margins over 5 seeds."""
    t0 = time.time()
    rng = np.random.default_rng(2)
    for _ in range(50):
        n_cls = int(rng.integers(2, 5))
        Z = rng.normal(size=(n_cls * 6, 5))
        y = np.repeat(np.arange(n_cls), 6)
        got, _, _ = cs(LabeledEmbeddingSet(Z, y))
        assert abs(got - oracle_cs(Z, y)) < 1e-10
    for _ in range(50):
        n, A = int(rng.integers(4, 16)), int(rng.integers(1, 6))
        table = rng.integers(0, 2, size=(n, A))
        labels = np.array([0, 1] + list(rng.integers(0, 2, size=n - 2)))
        U, V = attr_frequencies(table, labels)
        Uo, Vo = oracle_uv(table, labels)
        np.testing.assert_allclose(U, Uo, atol=1e-12)
        np.testing.assert_allclose(V, Vo, atol=1e-12)
    for seed in range(5):
        report = lemma_check(LemmaCheckConfig(seed=seed))
        assert report["checks"]["lemma1"] is True
        assert report["checks"]["lemma2"]["holds"] is True
        assert report["checks"]["corollary"] is True
        assert report["cs"]["A"] > report["cs"]["L"]
    elapsed = time.time() - t0
    assert elapsed < 20.0, f"separability suite took {elapsed:.1f}s"
    print(f"\nACCEPTANCE 4 separability: PASS ({elapsed:.2f}s)")


def test_criterion_5_end_to_end_ordering():
    """Trained attribute patterns beat the label-template baseline, which
    beats no training at all; mismatched pattern/scorer pairs never beat the
    matched diagonals (desk-scale task, 16 shots, 50 epochs, 3 seeds)."""
    t0 = time.time()
    backend = ToyDualEncoder(seed=0)
    bank = precompute_embeddings(load_bank(BANK_PATH), backend)
    samples, _ = make_shapes7(n_per_class=48, seed=0)
    res = {k: [] for k in ("attr", "ar", "zs", "l2a", "a2l")}
    for seed in range(3):
        split = make_splits(samples, 16, seed=seed)
        cfg = TrainConfig(epochs=50, lr=0.1, frame=4, batch_size=64, seed=seed)
        pat, _ = train(split, bank, cfg, backend, trace_selections=False)
        cfg_ar = TrainConfig(epochs=50, lr=0.1, frame=4, batch_size=64, seed=seed, method="ar")
        pat_ar, _ = train(split, bank, cfg_ar, backend, trace_selections=False)
        pat0 = make_pattern((24, 24), 3, 4)
        res["attr"].append(evaluate(pat, split, "attrvr", bank, backend, cfg)[0])
        res["ar"].append(evaluate(pat_ar, split, "label", bank, backend, cfg_ar)[0])
        res["zs"].append(evaluate(pat0, split, "attrvr", bank, backend)[0])
        res["l2a"].append(evaluate(pat_ar, split, "attrvr", bank, backend, cfg_ar)[0])
        res["a2l"].append(evaluate(pat, split, "label", bank, backend, cfg)[0])
    mean = {k: float(np.mean(v)) for k, v in res.items()}
    assert mean["attr"] > mean["ar"] > mean["zs"], mean
    # cross combinations never beat the matched diagonals
    assert mean["l2a"] <= mean["ar"] + 1e-9, mean
    assert mean["a2l"] <= mean["attr"] + 1e-9, mean
    # trained attribute pattern is far above chance (1/7)
    assert mean["attr"] > 0.5, mean
    elapsed = time.time() - t0
    assert elapsed < 300.0, f"end-to-end suite took {elapsed:.1f}s"
    print(
        f"\nACCEPTANCE 5 end-to-end: PASS ({elapsed:.1f}s; "
        f"attr={mean['attr']:.3f} > label={mean['ar']:.3f} > none={mean['zs']:.3f}; "
        f"cross l2a={mean['l2a']:.3f}, a2l={mean['a2l']:.3f})"
    )


def test_criterion_6_reproducible_checkpoints(tmp_path):
    """Two identical CLI training runs write bit-identical checkpoints."""
    t0 = time.time()
    cfg = tmp_path / "cfg.toml"
    cfg.write_text("epochs = 3\nlr = 0.1\nframe = 4\nbatch_size = 16\nseed = 0\n")
    blobs = []
    for name in ("a", "b"):
        out = tmp_path / name
        result = CliRunner().invoke(cli_main, [
            "train", "--config", str(cfg), "--bank", BANK_PATH, "--out", str(out),
            "--shapes7-per-class", "8", "--shots", "4", "--backend", "toy",
        ])
        assert result.exit_code == 0, result.output
        blobs.append((out / "pattern.bin").read_bytes())
    assert blobs[0] == blobs[1]
    elapsed = time.time() - t0
    print(f"\nACCEPTANCE 6 reproducibility: PASS ({elapsed:.1f}s, bit-identical)")


def test_criterion_7_offline_bank(tmp_path):
    """The recorded-response pipeline regenerates the shipped bank byte for
    byte; the bank is schema-valid with m=20 entries all > 20 characters."""
    t0 = time.time()
    bank = load_bank(BANK_PATH)  # load_bank validates the schema
    assert bank.m == 20
    for cls in bank.classes:
        for kind in ("des", "dist"):
            entries = bank.entries(cls, kind)
            assert len(entries) == 20
            assert all(len(e) > 20 for e in entries)
    client = FixtureClient.from_file(RESPONSES_PATH)
    regen = generate_bank(bank.classes, bank.task_info, GenerationSettings(m=20, seed=0), client)
    out = tmp_path / "regen.json"
    save_bank(regen, out)
    assert out.read_bytes() == open(BANK_PATH, "rb").read()
    elapsed = time.time() - t0
    print(f"\nACCEPTANCE 7 offline bank: PASS ({elapsed:.2f}s, byte-identical)")


def test_criterion_8_external_backend():
    """Extended check against a pretrained ViT-B-16 dual encoder on the pets
    task; needs optional deps, weights, data and a pets attribute bank."""
    pytest.importorskip("torch", reason="external backend needs torch")
    pytest.importorskip("open_clip", reason="external backend needs open_clip_torch")
    torchvision = pytest.importorskip("torchvision", reason="pets data needs torchvision")

    bank_path = os.environ.get("ATTRVR_PETS_BANK")
    if not bank_path or not os.path.exists(bank_path):
        pytest.skip("set ATTRVR_PETS_BANK to a pets attribute bank JSON")
    data_root = os.environ.get("ATTRVR_PETS_ROOT")
    if not data_root or not os.path.exists(data_root):
        pytest.skip("set ATTRVR_PETS_ROOT to an OxfordIIITPet data directory")

    from attrvr.encoders import ExternalDualEncoder

    try:
        backend = ExternalDualEncoder()
    except Exception as exc:  # weights unavailable offline
        pytest.skip(f"could not build external backend: {exc}")

    dataset = torchvision.datasets.OxfordIIITPet(data_root, split="test", download=False)
    bank = precompute_embeddings(load_bank(bank_path), backend)
    samples = []
    for img, label in dataset:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64).transpose(2, 0, 1) / 255.0
        samples.append(ImageSample(arr, int(label)))
    trainset = torchvision.datasets.OxfordIIITPet(data_root, split="trainval", download=False)
    train_samples = []
    for img, label in trainset:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64).transpose(2, 0, 1) / 255.0
        train_samples.append(ImageSample(arr, int(label)))

    cfg = TrainConfig()  # full-scale defaults: 200 epochs, lr 40, frame 16
    pattern, _ = train(train_samples, bank, cfg, backend)
    acc, _ = evaluate(pattern, samples, "attrvr", bank, backend, cfg)
    assert abs(acc - 0.933) <= 0.015, f"pets accuracy {acc:.3f} outside 93.3 +/- 1.5pp"
    print(f"\nACCEPTANCE 8 external backend: PASS (pets accuracy {acc:.3f})")
