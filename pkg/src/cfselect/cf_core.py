"""Single correlation filter in Fourier form: solve, respond, update, localize.

A filter is kept as per-channel numerators ``A_c = conj(G) * conj(X_c)`` and the
shared denominator energy ``sum_c conj(X_c) * X_c``.  The regularizer is added
when the denominator is read, so moving-average updates never accumulate it.
"""

from dataclasses import dataclass

import numpy as np
import scipy.fft

from .spectral import dft2, idft2


@dataclass(frozen=True, eq=False)
class CfModel:
    numerator: np.ndarray  # (C, H, W) complex
    energy: np.ndarray  # (H, W) complex, imaginary part is zero up to rounding
    lam: float
    label_spectrum: np.ndarray  # (H, W) complex

    @property
    def denominator(self):
        return self.energy + self.lam

    @property
    def n_channels(self):
        return self.numerator.shape[0]

    def filter(self):
        """Per-channel filter spectra F_c = A_c / B."""
        return self.numerator / self.denominator

    def same_as(self, other):
        """Bit-exact equality of all stored arrays."""
        return (
            self.lam == other.lam
            and np.array_equal(self.numerator, other.numerator)
            and np.array_equal(self.energy, other.energy)
            and np.array_equal(self.label_spectrum, other.label_spectrum)
        )


@dataclass(frozen=True)
class ResponseMap:
    values: np.ndarray
    peak_y: int
    peak_x: int
    peak_value: float

    @classmethod
    def from_values(cls, values):
        # np.argmax returns the first row-major occurrence, which is the tie-break we want
        idx = int(np.argmax(values))
        py, px = divmod(idx, values.shape[1])
        return cls(values, py, px, float(values[py, px]))


def _as_stack(features):
    features = np.asarray(features)
    if features.ndim == 2:
        features = features[None]
    return features


def _spectra(features):
    return dft2(_as_stack(features))


def cf_init(features, label, lam=1e-4):
    if lam <= 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    features = _as_stack(features)
    label = np.asarray(label, dtype=np.float64)
    if features.shape[1:] != label.shape:
        raise ValueError(f"label shape {label.shape} does not match features {features.shape[1:]}")
    G = dft2(label)
    X = _spectra(features)
    Xc = np.conj(X)
    numerator = np.conj(G)[None] * Xc
    energy = np.sum(Xc * X, axis=0)
    return CfModel(numerator, energy, float(lam), G)


def response_from_spectra(model: CfModel, Z) -> ResponseMap:
    """:func:`cf_response` on precomputed search spectra ``Z`` of shape (C, H, W)."""
    return ResponseMap.from_values(_response_values(model, Z))


def _response_values(model: CfModel, Z):
    """Real response maps for spectra ``Z`` of shape (..., C, H, W)."""
    if Z.shape[-3] != model.n_channels:
        raise ValueError(f"model has {model.n_channels} channels, features have {Z.shape[-3]}")
    if Z.shape[-2:] != model.energy.shape:
        raise ValueError("feature grid size does not match the model")
    P = np.sum(model.numerator * Z, axis=-3) / model.denominator
    return np.real(idft2(P))


def cf_response(model: CfModel, features) -> ResponseMap:
    """Spatial response of ``model`` on a search stack.

    The response spectrum is ``sum_c F_c * Z_c`` (no conjugate on the search
    spectrum).  With the numerator already holding ``conj(X_c)`` this is a
    matched filter: a search stack circularly shifted by (dy, dx) from the
    training stack moves the peak by +(dy, dx) from the grid center.
    """
    return response_from_spectra(model, _spectra(features))


def cf_response_batch(model: CfModel, features):
    """Response maps (B, H, W) for a batch of real search stacks (B, C, H, W).

    Same maps as :func:`cf_response` up to rounding; every spectrum involved
    is Hermitian, so only the half spectrum is transformed.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 4:
        raise ValueError(f"expected a (B, C, H, W) batch, got shape {features.shape}")
    if features.shape[1] != model.n_channels:
        raise ValueError(f"model has {model.n_channels} channels, features have {features.shape[1]}")
    if features.shape[2:] != model.energy.shape:
        raise ValueError("feature grid size does not match the model")
    H, W = model.energy.shape
    half = W // 2 + 1
    Z = scipy.fft.rfft2(features)
    P = np.sum(model.numerator[..., :half] * Z, axis=1) / model.denominator[..., :half]
    return scipy.fft.irfft2(P, s=(H, W))


def cf_update(model: CfModel, features, eta) -> CfModel:
    """Moving-average blend of numerator and denominator energy with rate ``eta``."""
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must lie in [0, 1], got {eta}")
    if eta == 0.0:
        return model
    return update_from_spectra(model, _spectra(features), eta)


def update_from_spectra(model: CfModel, X, eta) -> CfModel:
    """:func:`cf_update` on precomputed feature spectra ``X``."""
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must lie in [0, 1], got {eta}")
    if eta == 0.0:
        return model
    if X.shape[0] != model.n_channels:
        raise ValueError(f"model has {model.n_channels} channels, features have {X.shape[0]}")
    Xc = np.conj(X)
    new_num = np.conj(model.label_spectrum)[None] * Xc
    new_energy = np.sum(Xc * X, axis=0)
    if eta == 1.0:
        return CfModel(new_num, new_energy, model.lam, model.label_spectrum)
    numerator = (1.0 - eta) * model.numerator + eta * new_num
    energy = (1.0 - eta) * model.energy + eta * new_energy
    return CfModel(numerator, energy, model.lam, model.label_spectrum)


def localize(resp: ResponseMap):
    """Peak displacement from the grid center, wrapped to [-H/2, H/2)."""
    H, W = resp.values.shape
    dy = (resp.peak_y - H // 2 + H // 2) % H - H // 2
    dx = (resp.peak_x - W // 2 + W // 2) % W - W // 2
    return int(dy), int(dx), resp.peak_value
