"""Smoke test for the ttseval_py extension module.

Build and run:
    maturin build --release -m crates/python/Cargo.toml
    pip install target/wheels/ttseval_py-*.whl
    python python/smoke_test.py
"""

import math
import os
import random
import tempfile

import ttseval_py as tt


def check_metrics():
    p, t = [3.0, 4.0], [4.0, 4.0]
    assert tt.mse(p, t) == 0.5
    assert abs(tt.rmse(p, t) - math.sqrt(0.5)) < 1e-12
    x = [1.0, 2.0, 3.0, 4.0]
    assert abs(tt.lcc(x, [2 * v + 1 for v in x]) - 1.0) < 1e-12
    assert abs(tt.srcc(x, [v ** 3 for v in x]) - 1.0) < 1e-12
    assert abs(tt.kendall_tau(x, x[::-1]) + 1.0) < 1e-12
    assert tt.accuracy([0.5, 0.5, 0.5], [0, 1, 0]) == 2 / 3
    assert tt.auc_roc([0.1, 0.9], [0, 1]) == 1.0
    try:
        tt.lcc([2.0, 2.0], [1.0, 3.0])
    except ValueError:
        pass
    else:
        raise AssertionError("zero variance must raise")


def check_ratings():
    rows = [("a", f"c{i}", "sys", s) for i, s in enumerate([1.0, 3.0, 5.0])]
    std = tt.standardize(rows)
    assert [r[5] for r in std] == [1.0, 3.0, 5.0]
    assert abs(std[2][4] - math.sqrt(1.5)) < 1e-12
    assert tt.inter_rater_rmse([("c", 3.0), ("c", 5.0)]) == 2.0


def check_sbs():
    m = tt.SbsModel([[0.0, 1.0], [0.0, 0.0]])
    assert m.score([1.0, 0.0], [0.0, 1.0]) == 1.0
    assert abs(m.predict([1.0, 0.0], [0.0, 1.0]) + m.predict([0.0, 1.0], [1.0, 0.0]) - 1.0) < 1e-15
    loss, gw, gp = m.loss_and_grad([([1.0, 0.0], [0.0, 1.0], 1)])
    assert gp is None and len(gw) == 2 and loss > 0

    rng = random.Random(0)
    mos = {f"c{i}": rng.uniform(1, 5) for i in range(40)}
    emb = {k: [v - 3.0, 1.0 + rng.gauss(0, 0.05)] for k, v in mos.items()}
    keys = sorted(mos)
    pairs = []
    while len(pairs) < 300:
        a, b = rng.sample(keys, 2)
        if abs(mos[a] - mos[b]) > 0.3:
            pairs.append((a, b, int(mos[a] > mos[b])))
    model, history = tt.SbsModel.train(pairs, emb, epochs=40, seed=1)
    assert history[-1] < history[0]
    correct = sum((model.predict(emb[a], emb[b]) > 0.5) == bool(y) for a, b, y in pairs)
    assert correct / len(pairs) >= 0.95, correct

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "sbs.json")
        model.save(path)
        back = tt.SbsModel.load(path)
        assert back.w == model.w


def check_mos():
    rng = random.Random(1)
    feats = {f"c{i:03}": [rng.uniform(-1, 1) for _ in range(3)] for i in range(60)}
    targets = {k: 3.0 + 0.8 * v[0] for k, v in feats.items()}
    model, oof = tt.MosModel.fit(feats, targets, k_folds=3, seed=2)
    assert len(oof) == 60 and model.feature_dim == 3
    err = max(abs(model.predict(v) - targets[k]) for k, v in feats.items())
    assert err < 0.3, err


def check_audio_and_batching():
    rate = 16000
    tone = [0.5 * math.sin(2 * math.pi * 220 * i / rate) for i in range(rate)]
    noisy = tt.add_white_noise(tone, rate, 10.0, 3)
    noise = [a - b for a, b in zip(noisy, tone)]
    snr = 10 * math.log10(sum(v * v for v in tone) / sum(v * v for v in noise))
    assert abs(snr - 10.0) < 0.1, snr
    assert abs(len(tt.time_stretch(tone, rate, 0.5)) / (2 * rate) - 1) < 0.02
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "tone.wav")
        tt.save_wav(tone, rate, path)
        back, r = tt.load_wav(path)
        assert r == rate and max(abs(a - b) for a, b in zip(back, tone)) <= 1 / 32768
    assert len(tt.text_embed("the quick brown fox", 16)) == 16

    batches, ratio = tt.length_sorted_batches([1.0, 10.0, 1.0, 10.0], 2)
    assert ratio == 0.0 and sorted(map(sorted, batches)) == [[0, 2], [1, 3]]
    assert tt.masked_sequence_pool([[1.0, 3.0, 99.0], [2.0]], [2, 1]) == [2.0, 2.0]


def check_pipeline():
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "pred.csv")
        with open(path, "w") as f:
            f.write("prediction,target\n1,1\n2,2\n3,3.5\n4,4\n")
        report = tt.run("evaluate", overrides=[f"predictions={path}", f"output_dir={d}"])
        assert abs(report["utterance"]["mse"] - 0.0625) < 1e-12
        try:
            tt.run("evaluate")
        except RuntimeError:
            pass
        else:
            raise AssertionError("missing predictions must raise")


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("check_"):
            fn()
            print(f"ok  {name[6:]}")
    print("smoke test passed")
