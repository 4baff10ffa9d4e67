"""Jones-calculus model of the polarization interferometer.

Jones vectors are written in the (S, P) basis of the input polarizing
splitter, so the S amplitude travels path 1 and the P amplitude path 2. The
output Wollaston prism sends S to detector D1 and P to detector D2.

The closed configuration puts the EOM at its half-wave voltage with eigenaxis
at 22.5 degrees, rotating the polarization by 45 degrees so the Wollaston
mixes the two paths. The open configuration leaves the EOM idle and each
detector sees exactly one path.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ModelError",
    "JonesVector",
    "ElementKind",
    "OpticalElement",
    "EomState",
    "InterferometerModel",
    "polarizing_splitter",
    "half_wave_plate",
    "phase_retarder",
    "eom",
    "wollaston",
    "blocker",
    "apply_element",
    "input_state",
    "propagate",
    "detection_probabilities",
    "blocked_probabilities",
    "incoherent_routing",
]

UNITARY_TOL = 1e-12
EOM_AXIS = np.pi / 8.0  # 22.5 degrees


class ModelError(ValueError):
    """Invalid optical model or parameters."""


@dataclass(frozen=True)
class JonesVector:
    a_s: complex
    a_p: complex

    @classmethod
    def from_array(cls, v) -> "JonesVector":
        return cls(complex(v[0]), complex(v[1]))

    def as_array(self) -> np.ndarray:
        return np.array([self.a_s, self.a_p], dtype=complex)

    @property
    def intensity(self) -> float:
        return abs(self.a_s) ** 2 + abs(self.a_p) ** 2


class ElementKind(enum.Enum):
    POLARIZING_SPLITTER = "polarizing_splitter"
    HALF_WAVE_PLATE = "half_wave_plate"
    PHASE_RETARDER = "phase_retarder"
    EOM = "eom"
    WOLLASTON = "wollaston"
    BLOCKER = "blocker"


class EomState(enum.IntEnum):
    """EOM drive state; the integer value is the logged configuration bit."""

    OPEN = 0  # V = 0
    CLOSED = 1  # V = V_pi

    @classmethod
    def from_bit(cls, bit: int) -> "EomState":
        return cls(int(bit))


@dataclass(frozen=True)
class OpticalElement:
    kind: ElementKind
    m: np.ndarray = field(repr=False)
    param: float | int | None = None

    def __post_init__(self):
        m = np.asarray(self.m, dtype=complex)
        if m.shape != (2, 2):
            raise ModelError(f"{self.kind.value}: Jones matrix must be 2x2, got {m.shape}")
        object.__setattr__(self, "m", m)
        if self.kind is ElementKind.BLOCKER:
            if not np.allclose(m @ m, m, atol=UNITARY_TOL, rtol=0):
                raise ModelError("blocker matrix is not a projector")
        elif not np.allclose(m.conj().T @ m, np.eye(2), atol=UNITARY_TOL, rtol=0):
            raise ModelError(f"{self.kind.value}: Jones matrix is not unitary")


def polarizing_splitter() -> OpticalElement:
    # Path separation is the basis labelling itself; the polarization is untouched.
    return OpticalElement(ElementKind.POLARIZING_SPLITTER, np.eye(2))


def half_wave_plate(axis: float) -> OpticalElement:
    c, s = np.cos(2 * axis), np.sin(2 * axis)
    return OpticalElement(ElementKind.HALF_WAVE_PLATE, np.array([[c, s], [s, -c]]), axis)


def phase_retarder(delta: float) -> OpticalElement:
    return OpticalElement(
        ElementKind.PHASE_RETARDER, np.diag([1.0, np.exp(1j * delta)]), delta
    )


def eom(state: EomState) -> OpticalElement:
    if EomState(state) is EomState.CLOSED:
        m = half_wave_plate(EOM_AXIS).m
    else:
        m = np.eye(2)
    return OpticalElement(ElementKind.EOM, m, int(state))


def wollaston() -> OpticalElement:
    # Separates S and P onto D1 and D2; the detector projection happens in
    # ``propagate``, so the element itself is the identity in this basis.
    return OpticalElement(ElementKind.WOLLASTON, np.eye(2))


def blocker(path: int) -> OpticalElement:
    if path not in (1, 2):
        raise ModelError(f"blocked path must be 1 or 2, got {path!r}")
    keep = [0.0, 1.0] if path == 1 else [1.0, 0.0]
    return OpticalElement(ElementKind.BLOCKER, np.diag(keep), path)


def apply_element(state: JonesVector, elem: OpticalElement) -> JonesVector:
    return JonesVector.from_array(elem.m @ state.as_array())


@dataclass(frozen=True)
class InterferometerModel:
    """Interferometer parameters.

    ``phase`` is the arm phase shift (the closed-configuration outputs go as
    cos^2 and sin^2 of it); ``overlap`` is the mode-matching factor multiplying
    the interference cross term.
    """

    phase: float = 0.0
    overlap: float = 1.0
    length: float = 48.0
    blocked: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.overlap <= 1.0:
            raise ModelError(f"overlap must lie in [0, 1], got {self.overlap}")
        if not self.length > 0:
            raise ModelError(f"interferometer length must be positive, got {self.length}")
        if self.blocked is not None and self.blocked not in (1, 2):
            raise ModelError(f"blocked path must be 1 or 2, got {self.blocked!r}")


def input_state() -> JonesVector:
    """Single photon linearly polarized at 45 degrees to the splitter axes."""
    r = 1.0 / np.sqrt(2.0)
    return JonesVector(r, r)


def element_chain(phase: float, config: EomState, blocked: int | None = None):
    chain = [polarizing_splitter()]
    if blocked is not None:
        chain.append(blocker(blocked))
    # retarder angle is twice the public phase so outputs follow cos^2 / sin^2
    chain += [phase_retarder(2.0 * phase), eom(config), wollaston()]
    return chain


def propagate(state: JonesVector, chain) -> tuple[float, float]:
    """Run ``state`` through ``chain`` and return the D1 / D2 intensities."""
    for elem in chain:
        state = apply_element(state, elem)
    return abs(state.a_s) ** 2, abs(state.a_p) ** 2


def _path_resolved(phase: float, config: EomState, blocked: int | None):
    """Coherent and incoherent (path-by-path) detector intensities."""
    chain = element_chain(phase, config, blocked)
    psi = input_state()
    coherent = propagate(psi, chain)
    via1 = propagate(JonesVector(psi.a_s, 0.0), chain)
    via2 = propagate(JonesVector(0.0, psi.a_p), chain)
    incoherent = (via1[0] + via2[0], via1[1] + via2[1])
    return coherent, incoherent


def _mixed(model: InterferometerModel, config: EomState, blocked: int | None):
    coherent, incoherent = _path_resolved(model.phase, EomState(config), blocked)
    m = model.overlap
    return (
        m * coherent[0] + (1.0 - m) * incoherent[0],
        m * coherent[1] + (1.0 - m) * incoherent[1],
    )


def detection_probabilities(
    model: InterferometerModel, config: EomState
) -> tuple[float, float]:
    """Per-photon probabilities of reaching D1 and D2.

    A fraction ``overlap`` of the photon's amplitude interferes; the rest adds
    path intensities, so closed gives ``(1 +/- M cos 2 phase) / 2`` and open
    gives one half at each detector.
    """
    if model.blocked is not None:
        return blocked_probabilities(model, config, model.blocked)
    config = EomState(config)
    c = np.cos(2.0 * model.phase)
    if config is EomState.CLOSED:
        p1 = 0.5 * (1.0 + model.overlap * c)
        return p1, 1.0 - p1
    return 0.5, 0.5


def blocked_probabilities(
    model: InterferometerModel, config: EomState, blocked: int
) -> tuple[float, float]:
    """Detector probabilities with one arm absorbed (before detector efficiency)."""
    if blocked not in (1, 2):
        raise ModelError(f"blocked path must be 1 or 2 (one arm only), got {blocked!r}")
    return _mixed(model, config, blocked)


def incoherent_routing(config: EomState, blocked: int | None = None) -> tuple[float, float]:
    """Detector probabilities for an unpolarized (background) photon.

    An unpolarized photon enters either arm with probability one half and never
    interferes, so only the path-by-path intensities matter.
    """
    _, incoherent = _path_resolved(0.0, EomState(config), blocked)
    return incoherent
