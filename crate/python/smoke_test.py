"""Smoke test for the pyfedbackdoor extension.

Build and install it first, e.g. `maturin develop -m crates/py/Cargo.toml`,
or copy target/release/libpyfedbackdoor.so to pyfedbackdoor.so on PYTHONPATH.
"""

import json
import math
import random
import tempfile
from pathlib import Path

import pyfedbackdoor as fb


def check_model():
    spec = fb.ModelSpec([4, 3, 2])
    assert spec.n_params == 23
    params = fb.init_params(spec, 7)
    assert len(params) == 23 and params == fb.init_params(spec, 7)

    zeros = [0.0] * spec.n_params
    loss, grad = fb.loss_and_grad(zeros, spec, [[0.1, 0.2, 0.3, 0.4]], [1])
    assert abs(loss - math.log(2)) < 1e-12
    assert len(grad) == spec.n_params

    loss, grad = fb.loss_and_grad(params, spec, [[0.0] * 4], [0], loss="combined", p=1.0, reference=params)
    assert loss == 0.0 and not any(grad)

    ones = [1.0] * 9
    assert fb.param_distance([0.0] * 9, ones) == 0.5


def check_finite_difference():
    rng = random.Random(0)
    spec = fb.ModelSpec([5, 4, 3])
    params = [rng.uniform(-1, 1) for _ in range(spec.n_params)]
    inputs = [[rng.random() for _ in range(5)] for _ in range(3)]
    labels = [0, 2, 1]
    _, grad = fb.loss_and_grad(params, spec, inputs, labels)
    h = 1e-5
    for k in range(0, spec.n_params, 5):
        up = list(params)
        dn = list(params)
        up[k] += h
        dn[k] -= h
        fd = (fb.loss_and_grad(up, spec, inputs, labels)[0] - fb.loss_and_grad(dn, spec, inputs, labels)[0]) / (2 * h)
        assert abs(fd - grad[k]) <= 1e-6 * max(1.0, abs(fd)), (k, fd, grad[k])


def check_data_and_attack():
    ds = fb.synth_digits(200, side=12, classes=10, seed=3)
    assert len(ds) == 200 and ds.height == 12 and ds.num_classes == 10

    images, labels = ds.to_idx_bytes()
    assert images[:4] == b"\x00\x00\x08\x03" and labels[:4] == b"\x00\x00\x08\x01"
    again = fb.Dataset.from_idx_bytes(images, labels)
    assert again.labels == ds.labels

    shards = fb.dirichlet_partition(ds, 5, 0.9, 11)
    assert sorted(i for s in shards for i in s) == list(range(200))

    assert "delta" in fb.glyph_names()
    trig = fb.Trigger("delta", 7, 7, 0)
    stamped = fb.apply_trigger(ds.image(0), 12, 12, trig)
    assert fb.apply_trigger(stamped, 12, 12, trig) == stamped

    clean, poisoned = fb.poison_split(ds, trig, 0.12, 5)
    assert len(poisoned) == 24 and not set(clean) & set(poisoned)


def check_server():
    g = [0.0, 2.0, -1.0]
    ups = [(0, 3.0, [1.0] * 3), (1, 1.0, [-1.0] * 3)]
    assert fb.aggregate_meta(g, ups) == [1.0, 3.0, 0.0]
    unit = [(0, 1.0, [0.5, 0.25, 1.0]), (3, 1.0, [0.125, -2.0, 0.0])]
    assert fb.aggregate_meta(g, unit) == fb.aggregate_fedavg(g, unit, 1.0)
    picked = fb.sample_clients(list(range(10)), 4, 1, 1)
    assert picked == sorted(picked) and len(set(picked)) == 4


def check_experiment():
    cfg = {
        "dataset": {"kind": "synth", "n_train": 400, "n_test": 200},
        "model": {"layer_sizes": [144, 16, 10]},
        "n_clients": 5,
        "clients_per_round": 3,
        "rounds": 3,
        "malicious": [
            {"client_id": 0, "schedule": [{"start_round": 1, "trigger": {"glyph": "x", "row": 7, "col": 7, "target_label": 1}}]}
        ],
    }
    config = fb.ExperimentConfig.from_json(json.dumps(cfg))
    out = fb.run_experiment(config)
    assert [r[0] for r in out.rows] == [1, 2, 3]
    assert out.metrics_csv().splitlines()[0] == "round,main_acc,backdoor_acc_x,mean_loss"
    again = fb.run_experiment(config)
    assert again.metrics_csv() == out.metrics_csv()
    with tempfile.TemporaryDirectory() as d:
        csv_path, summary_path = out.write(Path(d))
        assert json.loads(Path(summary_path).read_text())["rounds"] == 3

    try:
        fb.ExperimentConfig.from_json(json.dumps({**cfg, "n_clients": 0}))
    except ValueError as e:
        assert "n_clients" in str(e)
    else:
        raise AssertionError("bad config accepted")


if __name__ == "__main__":
    check_model()
    check_finite_difference()
    check_data_and_attack()
    check_server()
    check_experiment()
    print("python smoke test ok")
