import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from delayed_choice.photonics import (
    ElementKind,
    EomState,
    InterferometerModel,
    JonesVector,
    ModelError,
    OpticalElement,
    apply_element,
    blocked_probabilities,
    blocker,
    detection_probabilities,
    element_chain,
    eom,
    half_wave_plate,
    incoherent_routing,
    input_state,
    phase_retarder,
    polarizing_splitter,
    propagate,
    wollaston,
)

R = 1 / np.sqrt(2)


def same_up_to_phase(a: JonesVector, b: JonesVector, tol=1e-12):
    va, vb = a.as_array(), b.as_array()
    return abs(abs(np.vdot(va, vb)) - np.linalg.norm(va) * np.linalg.norm(vb)) < tol


def test_identity_retarder():
    out = apply_element(JonesVector(1, 0), phase_retarder(0.0))
    assert out == JonesVector(1, 0)


def test_half_wave_plate_at_22_5_degrees():
    out = apply_element(JonesVector(1, 0), half_wave_plate(np.pi / 8))
    assert same_up_to_phase(out, JonesVector(R, R))


@pytest.mark.parametrize("delta", [0.3, 1.0, np.pi, -2.2])
def test_phase_retarder(delta):
    out = apply_element(JonesVector(R, R), phase_retarder(delta))
    assert abs(out.a_s - R) < 1e-15
    assert abs(out.a_p - np.exp(1j * delta) * R) < 1e-15


def test_non_unitary_matrix_rejected():
    with pytest.raises(ModelError):
        OpticalElement(ElementKind.PHASE_RETARDER, np.diag([1.0, 0.5]))
    with pytest.raises(ModelError):
        OpticalElement(ElementKind.BLOCKER, np.array([[1.0, 1.0], [0.0, 0.5]]))


def test_blocker_is_projector():
    for p in (1, 2):
        m = blocker(p).m
        assert np.allclose(m @ m, m)


@pytest.mark.parametrize(
    "config,m,phi,expected",
    [
        (EomState.CLOSED, 1.0, 0.0, (1.0, 0.0)),
        (EomState.CLOSED, 0.94, np.pi / 4, (0.5, 0.5)),
        (EomState.OPEN, 0.94, 1.3, (0.5, 0.5)),
        (EomState.CLOSED, 0.94, 0.0, (0.97, 0.03)),
    ],
)
def test_detection_probability_examples(config, m, phi, expected):
    p = detection_probabilities(InterferometerModel(phase=phi, overlap=m), config)
    assert p == pytest.approx(expected, abs=1e-12)


def test_closed_m094_cross_checked_against_chain():
    # brute-force Jones product: coherent part weighted by M, path-incoherent part by 1 - M
    chain = element_chain(0.0, EomState.CLOSED)
    coh = propagate(input_state(), chain)
    inc1 = propagate(JonesVector(R, 0), chain)
    inc2 = propagate(JonesVector(0, R), chain)
    p1 = 0.94 * coh[0] + 0.06 * (inc1[0] + inc2[0])
    assert p1 == pytest.approx(0.97, abs=1e-12)


def test_overlap_out_of_range():
    with pytest.raises(ModelError):
        InterferometerModel(overlap=1.2)
    with pytest.raises(ModelError):
        InterferometerModel(overlap=-0.1)
    with pytest.raises(ModelError):
        InterferometerModel(length=0.0)


@pytest.mark.parametrize(
    "config,blocked,expected",
    [(EomState.OPEN, 2, (0.5, 0.0)), (EomState.OPEN, 1, (0.0, 0.5))],
)
def test_blocked_open(config, blocked, expected):
    p = blocked_probabilities(InterferometerModel(phase=0.7), config, blocked)
    assert p == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("phi", np.linspace(0, np.pi, 7))
def test_blocked_closed_splits_equally(phi):
    p = blocked_probabilities(InterferometerModel(phase=phi, overlap=1.0), EomState.CLOSED, 2)
    assert p == pytest.approx((0.25, 0.25), abs=1e-12)


def test_blocking_both_paths_is_an_error():
    with pytest.raises(ModelError):
        blocked_probabilities(InterferometerModel(), EomState.OPEN, 3)
    with pytest.raises(ModelError):
        blocker(0)


def test_unitarity_on_random_inputs():
    rng = np.random.default_rng(0)
    elems = [polarizing_splitter(), wollaston(), eom(EomState.OPEN), eom(EomState.CLOSED)]
    elems += [half_wave_plate(a) for a in rng.uniform(0, np.pi, 5)]
    elems += [phase_retarder(d) for d in rng.uniform(-np.pi, np.pi, 5)]
    for _ in range(1000):
        v = rng.normal(size=2) + 1j * rng.normal(size=2)
        v /= np.linalg.norm(v) * rng.uniform(1, 3)
        s = JonesVector.from_array(v)
        for e in elems:
            assert abs(apply_element(s, e).intensity - s.intensity) < 1e-12


@pytest.mark.parametrize("config", [EomState.OPEN, EomState.CLOSED])
def test_analytic_matches_chain_on_grid(config):
    for phi in np.linspace(0, 2 * np.pi, 100):
        p = detection_probabilities(InterferometerModel(phase=phi, overlap=1.0), config)
        q = propagate(input_state(), element_chain(phi, config))
        assert p == pytest.approx(q, abs=1e-12)


@given(phi=st.floats(-10, 10), m=st.floats(0, 1))
@settings(max_examples=200, deadline=None)
def test_probability_closure(phi, m):
    for c in EomState:
        p = detection_probabilities(InterferometerModel(phase=phi, overlap=m), c)
        assert p[0] + p[1] == pytest.approx(1.0, abs=1e-15)
        for b in (1, 2):
            q = blocked_probabilities(InterferometerModel(phase=phi, overlap=m), c, b)
            assert q[0] + q[1] == pytest.approx(0.5, abs=1e-12)


def test_open_configuration_is_phase_independent():
    dev = max(
        abs(detection_probabilities(InterferometerModel(phase=phi, overlap=m), EomState.OPEN)[0] - 0.5)
        for phi in np.linspace(0, 2 * np.pi, 100) for m in (0.0, 0.5, 0.94, 1.0)
    )
    assert dev == 0.0


def test_unpolarized_background_routing():
    assert incoherent_routing(EomState.OPEN) == pytest.approx((0.5, 0.5))
    assert incoherent_routing(EomState.CLOSED) == pytest.approx((0.5, 0.5))
    assert incoherent_routing(EomState.OPEN, blocked=2) == pytest.approx((0.5, 0.0))
    assert incoherent_routing(EomState.CLOSED, blocked=2) == pytest.approx((0.25, 0.25))
