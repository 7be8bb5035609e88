"""Parameter containers for the five learnable arrays and gradient bundles."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ContractError

PARAM_FIELDS = ("w_ih", "w_hh", "w_ho", "b_h", "b_o")
WEIGHT_FIELDS = ("w_ih", "w_hh", "w_ho")


@dataclass
class RnnParams:
    """The learnable arrays: input-to-hidden, hidden-to-hidden, hidden-to-output
    weights plus hidden and output biases."""

    w_ih: np.ndarray  # [hidden, input]
    w_hh: np.ndarray  # [hidden, hidden]
    w_ho: np.ndarray  # [output, hidden]
    b_h: np.ndarray   # [hidden]
    b_o: np.ndarray   # [output]

    def __post_init__(self):
        for name in PARAM_FIELDS:
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        h, d = self.w_ih.shape
        if self.w_hh.shape != (h, h):
            raise ContractError(f"w_hh must be square [{h},{h}], got {self.w_hh.shape}")
        if self.w_ho.shape[1] != h:
            raise ContractError(f"w_ho must have {h} columns, got {self.w_ho.shape}")
        if self.b_h.shape != (h,):
            raise ContractError(f"b_h must have shape ({h},), got {self.b_h.shape}")
        if self.b_o.shape != (self.w_ho.shape[0],):
            raise ContractError(
                f"b_o must have shape ({self.w_ho.shape[0]},), got {self.b_o.shape}")
        for name in PARAM_FIELDS:
            if not np.all(np.isfinite(getattr(self, name))):
                raise ContractError(f"{name} contains non-finite entries")

    @property
    def n_input(self) -> int:
        return self.w_ih.shape[1]

    @property
    def n_hidden(self) -> int:
        return self.w_ih.shape[0]

    @property
    def n_output(self) -> int:
        return self.w_ho.shape[0]

    def copy(self) -> "RnnParams":
        return RnnParams(*(getattr(self, f).copy() for f in PARAM_FIELDS))

    def sha256(self) -> str:
        """Digest over all entries; used to assert clean-weight preservation."""
        digest = hashlib.sha256()
        for name in PARAM_FIELDS:
            arr = np.ascontiguousarray(getattr(self, name))
            digest.update(name.encode())
            digest.update(str(arr.shape).encode())
            digest.update(arr.tobytes())
        return digest.hexdigest()

    def save(self, path) -> None:
        np.savez(path, **{f: getattr(self, f) for f in PARAM_FIELDS})

    @classmethod
    def load(cls, path) -> "RnnParams":
        with np.load(path) as data:
            return cls(*(data[f] for f in PARAM_FIELDS))


@dataclass
class Gradients:
    """Derivatives with respect to each array in RnnParams (same shapes)."""

    w_ih: np.ndarray
    w_hh: np.ndarray
    w_ho: np.ndarray
    b_h: np.ndarray
    b_o: np.ndarray

    @classmethod
    def zeros_like(cls, params) -> "Gradients":
        return cls(*(np.zeros_like(getattr(params, f)) for f in PARAM_FIELDS))

    def copy(self) -> "Gradients":
        return Gradients(*(getattr(self, f).copy() for f in PARAM_FIELDS))

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(getattr(self, f))) for f in PARAM_FIELDS)

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(getattr(self, f)), initial=0.0))
                   for f in PARAM_FIELDS)


def param_map(fn, *bundles, cls=Gradients):
    """Apply fn elementwise across matching fields of one or more bundles."""
    return cls(*(fn(*(getattr(b, f) for b in bundles)) for f in PARAM_FIELDS))
