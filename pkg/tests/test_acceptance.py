"""End-to-end acceptance checks, one test per criterion.

Each test carries a ``criterion`` marker; ``conftest.py`` prints one
PASS/FAIL line per criterion in the terminal summary.
"""

import time

import numpy as np
import pytest

from oracles import cnot, embed, noisy_pqc_superop_expvals, rot, rx, ry, rz
from qrecover.cli import main
from qrecover.data import synth_recovery
from qrecover.encoders import amplitude_encode
from qrecover.errors import DegenerateVariance
from qrecover.evaluation import cross_validate, dm_test, kfold_split
from qrecover.hybrid import ModelSpec, TrainConfig, backward, build_model, forward_batch, train
from qrecover.noise import (
    CHANNEL_KINDS,
    DensityMatrix,
    NoiseParams,
    apply_kraus,
    channel,
    kraus_completeness_error,
    noisy_grad_fn,
    noisy_pqc_expvals,
    noisy_predict_fn,
    noisy_train_gradient,
)
from qrecover.pqc import PqcParams, adjoint_gradient, parameter_shift_gradient, pqc_forward
from qrecover.statesim import Op, QuantumState, run_ops, z_expectations


def random_state(rng, n):
    v = rng.normal(size=2**n) + 1j * rng.normal(size=2**n)
    return v / np.linalg.norm(v)


def rel_error(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


# ---------------------------------------------------------------------------

PARAM_ROWS = [
    (["--kind", "FNN"], 67857),
    (["--kind", "QmlAngle"], 67873),
    (["--kind", "QmlAmplitude"], 65825),
    *[(["--kind", "FNN", "--second-hidden", str(h)], c) for h, c in
      [(16, 69921), (128, 98817), (512, 197889), (2048, 594177), (8192, 2179329)]],
    *[(["--kind", "QmlAngle", "--qubits", str(n)], c) for n, c in
      [(6, 67353), (7, 67613), (8, 67873), (10, 68393), (12, 68913), (14, 69433)]],
]


@pytest.mark.criterion(1, "parameter counts reproduce every reference row exactly")
def test_criterion_1_parameter_counts(capsys, detail):
    start = time.perf_counter()
    wrong = []
    for args, expected in PARAM_ROWS:
        assert main(["paramcount", *args]) == 0
        got = int(capsys.readouterr().out.strip())
        if got != expected:
            wrong.append((args, got, expected))
    elapsed = time.perf_counter() - start
    detail(f"{len(PARAM_ROWS) - len(wrong)}/{len(PARAM_ROWS)} rows exact in {elapsed:.3f}s")
    assert not wrong
    assert elapsed < 1.0


@pytest.mark.criterion(2, "amplitude encoding of 1000 random vectors within 1e-10")
def test_criterion_2_encoding_fidelity(detail):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        length = int(rng.integers(2, 257))
        n = int(np.ceil(np.log2(length)))
        v = rng.normal(size=length) * rng.choice([1e-3, 1.0, 1e3])
        expected = np.zeros(2**n)
        expected[:length] = v / np.linalg.norm(v)
        worst = max(worst, float(np.max(np.abs(amplitude_encode(v, n).amplitudes - expected))))
    elapsed = time.perf_counter() - start
    detail(f"max abs error {worst:.2e} in {elapsed:.1f}s")
    assert worst <= 1e-10
    assert elapsed < 30


def central_fd(f, x, h=1e-5):
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + h
        up = f()
        x[idx] = orig - h
        down = f()
        x[idx] = orig
        grad[idx] = (up - down) / (2 * h)
    return grad


def toy_batch(rng, d, m=5):
    return rng.normal(size=(m, d)), rng.uniform(0, 1, m)


@pytest.mark.criterion(3, "adjoint, parameter-shift and finite-difference gradients agree")
def test_criterion_3_gradient_suite(detail):
    rng = np.random.default_rng(3)
    start = time.perf_counter()
    worst_shift, worst_fd = 0.0, 0.0
    for _ in range(100):
        n, layers = int(rng.integers(1, 7)), int(rng.integers(1, 4))
        params = PqcParams.random(n, layers, rng)
        state = QuantumState(n, random_state(rng, n))
        upstream = rng.normal(size=n)

        def objective(p):
            return float(upstream @ z_expectations(pqc_forward(state, p).amplitudes, n))

        adj, _ = adjoint_gradient(state, params, upstream)
        shift = parameter_shift_gradient(objective, params)
        thetas = params.thetas.copy()
        fd = central_fd(lambda: objective(params.with_thetas(thetas)), thetas)
        worst_shift = max(worst_shift, float(np.max(np.abs(adj - shift))))
        worst_fd = max(worst_fd, rel_error(adj, fd), rel_error(shift, fd))

    for kind, extra in [("FNN", {"fnn_second_hidden": 4}), ("QmlAngle", {"n_qubits": 3}), ("QmlAmplitude", {"n_qubits": 3})]:
        model = build_model(ModelSpec(kind, input_dim=8, seed=1, **extra))
        X, y = toy_batch(rng, 8)
        grads, _ = backward(model, X, y)

        def loss():
            return float(np.mean((forward_batch(model, X) - y) ** 2))

        for name, value in model.params.items():
            fd = central_fd(loss, value)
            worst_fd = max(worst_fd, rel_error(grads[name], fd))
        if kind != "FNN":
            shifted, _ = noisy_train_gradient(model, X, y, NoiseParams.zero())
            worst_shift = max(worst_shift, float(np.max(np.abs(shifted["pqc.thetas"] - grads["pqc.thetas"]))))
            worst_fd = max(worst_fd, rel_error(shifted["pqc.thetas"], central_fd(loss, model.params["pqc.thetas"])))
    elapsed = time.perf_counter() - start
    detail(f"adjoint-shift {worst_shift:.1e}, vs FD rel {worst_fd:.1e}, {elapsed:.1f}s")
    assert worst_shift <= 1e-8
    assert worst_fd <= 1e-5
    assert elapsed < 120


def random_circuit(rng, n, depth):
    ops, dense = [], np.eye(2**n, dtype=complex)
    gates = {"RX": rx, "RY": ry, "RZ": rz}
    for _ in range(depth):
        if n > 1 and rng.random() < 0.3:
            c, t = (int(x) for x in rng.choice(n, size=2, replace=False))
            ops.append(Op("CNOT", (c, t)))
            dense = cnot(n, c, t) @ dense
            continue
        q = int(rng.integers(n))
        kind = str(rng.choice(["RX", "RY", "RZ", "ROT"]))
        if kind == "ROT":
            param = rng.uniform(-np.pi, np.pi, 3)
            dense = embed(n, q, rot(*param)) @ dense
        else:
            param = float(rng.uniform(-np.pi, np.pi))
            dense = embed(n, q, gates[kind](param)) @ dense
        ops.append(Op(kind, (q,), param))
    return ops, dense


@pytest.mark.criterion(4, "state-vector and noisy simulators match dense oracles within 1e-10")
def test_criterion_4_oracle_equivalence(detail):
    rng = np.random.default_rng(4)
    worst_pure = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 5))
        ops, dense = random_circuit(rng, n, int(rng.integers(1, 40)))
        psi = random_state(rng, n)
        worst_pure = max(worst_pure, float(np.max(np.abs(run_ops(psi, n, ops) - dense @ psi))))
    worst_noisy = 0.0
    for _ in range(20):
        n = int(rng.integers(1, 3))
        params = PqcParams.random(n, int(rng.integers(1, 4)), rng)
        psi = random_state(rng, n)
        noise = NoiseParams(*rng.uniform(0, 0.3, 4), p_readout=float(rng.uniform(0, 0.2)))
        got = noisy_pqc_expvals(QuantumState(n, psi), params, noise)
        want = noisy_pqc_superop_expvals(
            psi, n, params.thetas, noise.p_depol_1q, noise.p_depol_2q, noise.p_amp_damp, noise.p_dephase, noise.p_readout
        )
        worst_noisy = max(worst_noisy, float(np.max(np.abs(got - want))))
    detail(f"pure {worst_pure:.1e}, noisy {worst_noisy:.1e}")
    assert worst_pure <= 1e-10
    assert worst_noisy <= 1e-10


def random_rho(rng, n):
    a = rng.normal(size=(2**n, 2**n)) + 1j * rng.normal(size=(2**n, 2**n))
    rho = a @ a.conj().T
    return rho / np.trace(rho)


@pytest.mark.criterion(5, "channels are CPTP, zero noise is noiseless, readout scaling is exact")
def test_criterion_5_noise_properties(detail):
    rng = np.random.default_rng(5)
    completeness, drift = 0.0, 0.0
    for kind in CHANNEL_KINDS:
        for p in np.r_[0.0, 1.0, rng.uniform(0, 1, 20)]:
            kraus = channel(kind, p)
            completeness = max(completeness, kraus_completeness_error(kraus))
            rho = DensityMatrix(3, random_rho(rng, 3))
            wires = (0, 2) if kind == "Depol2Q" else 1
            drift = max(drift, abs(apply_kraus(rho, wires, kraus).trace() - 1.0))

    zero_gap, readout_gap = 0.0, 0.0
    for _ in range(20):
        n = int(rng.integers(1, 5))
        params = PqcParams.random(n, 2, rng)
        psi = random_state(rng, n)
        state = QuantumState(n, psi)
        clean = z_expectations(pqc_forward(state, params).amplitudes, n)
        zero_gap = max(zero_gap, float(np.max(np.abs(noisy_pqc_expvals(state, params, NoiseParams.zero()) - clean))))
        base = NoiseParams(*rng.uniform(0, 0.05, 4), p_readout=0.0)
        pr = float(rng.uniform(0, 0.5))
        scaled = NoiseParams(base.p_depol_1q, base.p_depol_2q, base.p_amp_damp, base.p_dephase, pr)
        expected = (1 - 2 * pr) * noisy_pqc_expvals(state, params, base)
        readout_gap = max(readout_gap, float(np.max(np.abs(noisy_pqc_expvals(state, params, scaled) - expected))))
    detail(f"completeness {completeness:.1e}, trace drift {drift:.1e}, p=0 gap {zero_gap:.1e}, readout gap {readout_gap:.1e}")
    assert completeness <= 1e-10
    assert drift <= 1e-12
    assert zero_gap <= 1e-12
    # readout scaling is a single multiply, so only the final rounding can differ
    assert readout_gap <= 4 * np.finfo(float).eps


@pytest.mark.criterion(6, "DM test: antisymmetry, scale invariance, fixtures, degenerate paths")
def test_criterion_6_dm_oracle(detail):
    rng = np.random.default_rng(6)
    antisym, scale = 0.0, 0.0
    for _ in range(200):
        a, b = rng.normal(0, rng.uniform(0.1, 2), size=(2, int(rng.integers(2, 200))))
        antisym = max(antisym, abs(dm_test(a, b).dm_statistic + dm_test(b, a).dm_statistic))
        c = float(rng.uniform(0.01, 100))
        scale = max(scale, abs(dm_test(c * a, c * b).dm_statistic - dm_test(a, b).dm_statistic))
    same = dm_test([0.3, -0.1, 0.2], [0.3, -0.1, 0.2])
    fixture = dm_test([0.1, 0.3, 0.2, 0.4], [0.2, 0.2, 0.3, 0.3])
    with pytest.raises(DegenerateVariance):
        dm_test([0.1, -0.1, 0.1, -0.1], [0.2, -0.2, 0.2, -0.2])
    detail(f"antisymmetry {antisym:.0e}, scale {scale:.1e}, fixture DM {fixture.dm_statistic:.1e}")
    assert antisym == 0.0
    assert scale <= 1e-12
    assert (same.dm_statistic, same.p_value) == (0.0, 1.0)
    assert abs(fixture.dm_statistic) <= 1e-12 and fixture.p_value == pytest.approx(1.0, abs=1e-12)


@pytest.mark.criterion(7, "QmlAmplitude best-average RMSE <= FNN in at least 3 of 5 seeds")
def test_criterion_7_amplitude_vs_fnn(detail):
    ds = synth_recovery()
    start = time.perf_counter()
    outcomes = []
    for seed in range(5):
        plan = kfold_split(ds.n_obs, 4, seed)
        best = {}
        for kind in ("QmlAmplitude", "FNN"):
            result = cross_validate(ModelSpec(kind, seed=seed), ds, plan, TrainConfig(shuffle_seed=seed))
            best[kind] = result.summary().best_mean
        outcomes.append((seed, best["QmlAmplitude"], best["FNN"]))
    elapsed = time.perf_counter() - start
    wins = sum(q <= f for _, q, f in outcomes)
    per_seed = "; ".join(f"seed {s}: amp {q:.4f} fnn {f:.4f}" for s, q, f in outcomes)
    detail(f"{wins}/5 seeds, {elapsed / 60:.1f} min [{per_seed}]")
    assert wins >= 3


@pytest.mark.criterion(8, "2-qubit noisy QmlAmplitude tracks its noiseless twin within 0.05 RMSE")
def test_criterion_8_noisy_twin(detail):
    ds = synth_recovery(n_obs=160, n_features=4, seed=8)
    plan = kfold_split(ds.n_obs, 4, seed=8)
    train_rows, test_rows = plan.train_rows(0), plan.test_rows(0)
    mean, std = ds.features[train_rows].mean(axis=0), ds.features[train_rows].std(axis=0)
    X = (ds.features - mean) / std
    train_set = (X[train_rows], ds.targets[train_rows])
    test_set = (X[test_rows], ds.targets[test_rows])
    config = TrainConfig(epochs=30, batch_size=16, learning_rate=1e-2, shuffle_seed=8)
    spec = ModelSpec("QmlAmplitude", input_dim=4, n_qubits=2, seed=8)
    start = time.perf_counter()
    clean = train(build_model(spec), train_set, test_set, config)
    noise = NoiseParams()
    noisy = train(build_model(spec), train_set, test_set, config, noisy_grad_fn(noise), noisy_predict_fn(noise))
    elapsed = time.perf_counter() - start
    mad = float(np.mean(np.abs(np.array(noisy.test_rmse) - np.array(clean.test_rmse))))
    detail(
        f"MAD {mad:.4f}; test RMSE {clean.test_rmse[0]:.3f}->{clean.test_rmse[-1]:.3f} clean, "
        f"{noisy.test_rmse[0]:.3f}->{noisy.test_rmse[-1]:.3f} noisy, {elapsed:.0f}s"
    )
    assert mad <= 0.05
    assert elapsed <= 300


def snapshot(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def run_all_commands(root, capsys):
    small = ["--set", "data.n_obs=40", "--set", "data.n_features=4", "--set", "train.batch_size=8",
             "--qubits", "2", "--epochs", "3", "--quiet", "--force"]
    outputs = []
    commands = [
        ["paramcount", "--table"],
        ["gen-data", "--out", str(root / "data.csv"), "--n-obs", "30", "--n-features", "6", "--seed", "3", "--force"],
        ["run", "--out", str(root / "amp"), *small],
        ["run", "--out", str(root / "fnn"), *small, "--kind", "fnn"],
        ["run", "--out", str(root / "noisy"), *small, "--set", "noise.enabled=true", "--epochs", "2"],
        ["compare", str(root / "amp"), str(root / "fnn"), "--out", str(root / "grid.csv"), "--force"],
        ["noise-eval", "--checkpoint", str(root / "amp" / "model_fold0.json"), "--out", str(root / "ne"), "--force"],
    ]
    for cmd in commands:
        assert main(cmd) == 0, cmd
        outputs.append(capsys.readouterr().out)
    return outputs


@pytest.mark.criterion(9, "re-running every command gives byte-identical reports")
def test_criterion_9_determinism(tmp_path, capsys, detail):
    out_a = run_all_commands(tmp_path, capsys)
    files_a = snapshot(tmp_path)
    out_b = run_all_commands(tmp_path, capsys)
    files_b = snapshot(tmp_path)
    differing = sorted(name for name in files_a if files_a[name] != files_b.get(name))
    detail(f"{len(files_a)} files, {len(differing)} differ, stdout identical: {out_a == out_b}")
    assert set(files_a) == set(files_b)
    assert not differing, differing
    assert out_a == out_b
