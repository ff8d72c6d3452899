import math

import numpy as np
import pytest

from qrouter.device import load_device
from qrouter.protocols import cz_target
from qrouter.qsim import xgate
from qrouter.xeb import (
    XebError,
    FULL_DEPTHS,
    XebNoise,
    bootstrap_decays,
    circuit_probabilities,
    decoherence_bound,
    fidelity_curve,
    fit_decay,
    generate_circuits,
    interleaved_fidelity,
    interleaved_xeb,
    oxebit_reward,
    propagate_sigma,
    sample_records,
    sequence_fidelity,
    xeb_kernel,
)


def test_kernel_values():
    p = np.array([0.5, 0.25, 0.25, 0.0])
    assert xeb_kernel(p, p) == 1.0
    # uniform outcomes against any ideal distribution give 1 / (d sum p^2)
    assert xeb_kernel(p, np.full(4, 0.25)) == pytest.approx(0.25 / np.dot(p, p))
    with pytest.raises(XebError):
        xeb_kernel(p, p[:3])


def test_circuits_are_reproducible_and_nested():
    a = generate_circuits(2, [1, 3], 4, seed=7)
    b = generate_circuits(2, [1, 3, 5], 6, seed=7)
    assert np.array_equal(a[0].layers, b[0].layers)
    assert np.array_equal(a[4].layers, b[6].layers)
    assert a[4].depth == 3
    with pytest.raises(XebError):
        generate_circuits(2, [], 3)
    with pytest.raises(XebError):
        generate_circuits(3, [1], 3, interleave=cz_target())


def test_ideal_records_give_unit_kernel():
    circ = generate_circuits(2, [3], 5, cz_target(), seed=1)
    recs = sample_records(circ, 10 ** 7, seed=2)
    assert sequence_fidelity(recs) == pytest.approx(1.0, abs=5e-3)
    assert oxebit_reward(recs) <= sequence_fidelity(recs)


def test_global_depolarizing_probabilities():
    circ = generate_circuits(2, [4], 1, cz_target(), seed=3)[0]
    lam = 0.05
    exact = circuit_probabilities(circ, noise=XebNoise(lam))
    ideal = circuit_probabilities(circ)
    f = (1 - lam) ** 4
    assert np.allclose(exact, f * ideal + (1 - f) / 4)
    # density-matrix path with a zero-strength layer entry must agree
    dm = circuit_probabilities(circ, noise=XebNoise(lam, (0.0, 0.0)))
    assert np.allclose(dm, exact)


def test_leakage_gate_needs_implementation():
    circ = generate_circuits(2, [1], 1, cz_target(), seed=0)[0]
    with pytest.raises(XebError):
        circuit_probabilities(circ, levels=3)
    gate = np.diag(np.r_[[1, 1, 1, 1, -1], np.ones(4)]).astype(complex)
    p = circuit_probabilities(circ, gate, levels=3)
    assert p.sum() == pytest.approx(1.0)


def test_wrong_gate_lowers_kernel():
    circ = generate_circuits(2, [5], 20, cz_target(), seed=4)
    recs = sample_records(circ, 20000, seed=5, gate=np.kron(np.eye(2), xgate()) @ cz_target().unitary)
    assert sequence_fidelity(recs) < 0.85


def test_fit_exact_decay():
    m = np.array([1, 2, 3, 5, 8, 12, 17, 23])
    f = 0.8 * 0.93 ** m + 0.1
    fit = fit_decay(m, f)
    assert fit.identifiable
    assert (fit.a, fit.b, fit.p) == pytest.approx((0.8, 0.1, 0.93), rel=1e-8)


def test_flat_data_not_identifiable():
    m = np.array([1, 2, 3, 5, 8])
    fit = fit_decay(m, np.full(5, 0.7))
    assert not fit.identifiable
    assert fit.message
    assert (fit.a, fit.b, fit.p) == (0.0, 0.7, 1.0)
    rng = np.random.default_rng(0)
    assert fit_decay([1, 2, 3, 5, 8, 12, 17, 23], 0.9 + 0.01 * rng.normal(size=8)).p == 1.0
    with pytest.raises(XebError):
        fit_decay([1, 2], [0.5, 0.4])


def test_interleaved_fidelity_formula():
    assert interleaved_fidelity(0.9, 0.9, 4) == 1.0
    assert interleaved_fidelity(0.8, 0.9, 4) == pytest.approx(1 - 0.75 * (1 - 0.8 / 0.9))
    with pytest.warns(UserWarning):
        interleaved_fidelity(0.95, 0.9, 4)


def test_propagate_sigma_matches_monte_carlo():
    rng = np.random.default_rng(0)
    mg, mr, sg, sr, d = 0.95, 0.98, 0.004, 0.003, 4
    pg = rng.normal(mg, sg, 400_000)
    pr = rng.normal(mr, sr, 400_000)
    f = 1 - (d - 1) / d * (1 - pg / pr)
    mean, sigma = propagate_sigma(mg, mr, sg, sr, d)
    assert mean == pytest.approx(f.mean(), abs=1e-4)
    assert sigma == pytest.approx(f.std(), rel=0.05)


def test_bootstrap_requires_two_circuits():
    recs = sample_records(generate_circuits(1, [1, 2, 3], 1, seed=0), 100)
    with pytest.raises(XebError):
        bootstrap_decays(recs, 5, np.random.default_rng(0))


@pytest.mark.parametrize("n", [1, 2])
@pytest.mark.parametrize("lam", [0.01, 0.03, 0.1])
def test_depolarizing_decay_recovered(n, lam):
    circ = generate_circuits(n, FULL_DEPTHS, 1000, seed=11)
    m, f = fidelity_curve(sample_records(circ, 1020, seed=12, noise=XebNoise(lam)))
    assert fit_decay(m, f).p == pytest.approx(1 - lam, rel=0.02)


def test_interleaved_xeb_report():
    report, rec, ref = interleaved_xeb(cz_target(), depths=(1, 2, 4, 8), k=10, shots=500, seed=3, resamples=20)
    assert abs(report.fidelity - 1.0) <= max(3 * report.sigma, 1e-12)
    assert len(rec) == len(ref) == 40
    d = report.to_dict()
    assert d["k"] == 10 and len(d["F_gate"]) == 4


def test_fidelity_curve_groups_by_depth():
    recs = sample_records(generate_circuits(1, [2, 1], 3, seed=0), 50)
    m, f = fidelity_curve(recs)
    assert list(m) == [1.0, 2.0]
    assert len(f) == 2


def test_decoherence_bound_values():
    dev = load_device()
    assert decoherence_bound(dev, ["Q1", "Q2", "Q4"], 40.0) == pytest.approx(0.0814, abs=5e-4)
    assert decoherence_bound(dev, ["Q1", "Q2", "Q4"], 50.0) == pytest.approx(0.1017, abs=5e-4)
    # single qubit: d = 2 gives tau (G1 + Gphi) / 3
    q = dev.qubits[0]
    assert decoherence_bound(dev, ["Q1"], 10.0) == pytest.approx(10.0 * (q.gamma1 + q.gamma_phi) / 3)
