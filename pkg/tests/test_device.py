import math

import numpy as np
import pytest

from qrouter.device import (
    DeviceError,
    DeviceModel,
    NoOscillationError,
    Qubit,
    binary_probabilities,
    bitstrings,
    device_from_dict,
    fit_swap,
    load_device,
    measure,
    measure_pairwise_coupling,
    readout_probabilities,
)
from qrouter.qsim import QuantumState


@pytest.fixture(scope="module")
def device():
    return load_device()


def test_fixture_values(device):
    assert [q.name for q in device.qubits] == ["Q1", "Q2", "Q3", "Q4"]
    q1 = device.qubits[0]
    assert q1.eta_mhz == -170
    assert q1.t1_us == 36.0
    assert device.g_mhz("Q1", "Q2") == 7.0
    assert device.g_mhz("Q4", "Q2") == 8.0
    assert device.g_mhz("Q3", "Q1") == 0.0


def test_rates(device):
    q = device.qubits[0]
    assert q.gamma1 == pytest.approx(1 / 36000)
    assert q.gamma_phi == pytest.approx(1 / 671 - 0.5 / 36000)


def test_coupling_matrix_symmetric(device):
    m = device.coupling_matrix_mhz(["Q1", "Q2", "Q4"])
    assert np.allclose(m, m.T)
    assert np.all(np.diag(m) == 0)
    assert m[1, 2] == 8.0


def _qubit(**kw):
    base = dict(name="A", omega_ghz=5.0, eta_mhz=-200.0, t1_us=10.0, t2star_ns=1000.0)
    return Qubit(**{**base, **kw})


@pytest.mark.parametrize("kw", [
    {"eta_mhz": 10.0},
    {"t1_us": 0.0},
    {"t2star_ns": 30000.0},
    {"f_g": 1.2},
    {"levels": 5},
])
def test_qubit_validation(kw):
    with pytest.raises(DeviceError):
        _qubit(**kw)


def test_model_validation():
    a, b = _qubit(name="A"), _qubit(name="B")
    with pytest.raises(DeviceError):
        DeviceModel((a, a))
    with pytest.raises(DeviceError):
        DeviceModel((a, b), {(0, 0): 1.0})
    with pytest.raises(DeviceError):
        DeviceModel((a, b), {(0, 1): 1.0, (1, 0): 2.0})
    with pytest.raises(DeviceError):
        DeviceModel((a, b), {(0, 2): 1.0})
    with pytest.raises(DeviceError):
        device_from_dict({"qubits": [], "couplings": []})
    with pytest.raises(DeviceError):
        device_from_dict({"qubits": [{"name": "A", "omega_ghz": 5, "eta_mhz": -200, "t1_us": 10,
                                      "t2star_ns": 100, "colour": "red"}]})
    with pytest.raises(DeviceError):
        load_device("/nonexistent/device.yaml")


def test_round_trip_dict(device):
    again = device_from_dict(device.to_dict())
    assert again == device


def test_confusion_columns_sum_to_one(device):
    for q in device.qubits:
        assert np.allclose(q.confusion().sum(axis=0), 1.0)


def test_leakage_reads_as_one():
    s = QuantumState.basis([3, 3], [2, 0])
    assert np.allclose(binary_probabilities(s), [0, 0, 1, 0])


def test_readout_confusion_applied(device):
    s = QuantumState.basis([2], [0])
    p = readout_probabilities(s, device, ["Q1"])
    assert p == pytest.approx([0.997, 0.003])
    s = QuantumState.basis([2, 2], [1, 1])
    p = readout_probabilities(s, device, ["Q1", "Q2"])
    assert p[3] == pytest.approx(0.974 * 0.982)
    with pytest.raises(DeviceError):
        readout_probabilities(s, device, ["Q1"])


def test_measure_counts(device):
    s = QuantumState.normalized([2, 2], [1, 0, 0, 1])
    counts = measure(s, device, 1000, seed=5, qubits=["Q1", "Q2"])
    assert list(counts) == bitstrings(2)
    assert sum(counts.values()) == 1000
    assert counts == measure(s, device, 1000, seed=5, qubits=["Q1", "Q2"])
    ideal = measure(s, None, 4000, seed=1)
    assert ideal["01"] == ideal["10"] == 0
    assert abs(ideal["00"] - 2000) < 200


@pytest.mark.parametrize("pair,expected", [(("Q1", "Q2"), 7.0), (("Q1", "Q4"), 6.2), (("Q2", "Q4"), 8.0)])
def test_pairwise_coupling_recovery(device, pair, expected):
    sub = DeviceModel(tuple(device.qubits[device.index(q)] for q in ("Q1", "Q2", "Q4")),
                      {(0, 1): 7.0, (0, 2): 6.2, (1, 2): 8.0})
    est = measure_pairwise_coupling(sub, pair)
    assert est.g_mhz == pytest.approx(expected, rel=1e-3)
    assert est.swap_period_ns == pytest.approx(1 / (2 * expected * 1e-3), rel=1e-3)


def test_fit_swap_oracle():
    # direct sin^2 trace with known coupling
    g = 2 * math.pi * 5e-3
    t = np.linspace(0, 300, 1501)
    est, w = fit_swap(t, np.sin(g * t) ** 2)
    assert est == pytest.approx(g, rel=1e-5)
    assert w == pytest.approx(2 * g, rel=1e-5)


def test_zero_coupling_raises(device):
    sub = device.with_couplings({(0, 2): 5.0})
    with pytest.raises(NoOscillationError):
        measure_pairwise_coupling(sub, ("Q1", "Q2"))
    with pytest.raises(DeviceError):
        measure_pairwise_coupling(sub, ("Q1", "Q1"))
