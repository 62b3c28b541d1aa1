"""Shared plumbing: error types, estimator parameter handling, input checks.

Estimators in this package follow the scikit-learn conventions: constructor
arguments are stored verbatim, ``fit`` learns state into trailing-underscore
attributes and returns ``self``, and ``get_params``/``set_params`` expose the
constructor arguments so instances compose with ecosystem tooling such as
``sklearn.base.clone``.
"""

from __future__ import annotations

import inspect
from typing import Any, Iterable

import numpy as np


class NorminferError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(NorminferError):
    """Operand dimensions are incompatible. The message names both shapes."""


class ContractError(NorminferError):
    """An argument violates a documented precondition."""


class ConfigError(NorminferError):
    """A configuration value or file is invalid."""


class IngestError(NorminferError):
    """A data file could not be read or parsed."""


class CheckpointError(NorminferError):
    """A checkpoint file failed validation."""


class CheckpointVersionError(CheckpointError):
    """The checkpoint format version is not supported by this reader."""


class NumericError(NorminferError):
    """A non-finite value appeared where the math requires finite numbers."""


class NotFittedError(NorminferError):
    """The estimator was used before ``fit``."""


class ParamsMixin:
    """get_params/set_params support in the scikit-learn style.

    Parameter names are discovered from the subclass ``__init__`` signature,
    so subclasses only need keyword arguments that are stored as attributes
    of the same name.
    """

    @classmethod
    def _param_names(cls) -> list[str]:
        sig = inspect.signature(cls.__init__)
        names = [
            name
            for name, p in sig.parameters.items()
            if name != "self" and p.kind not in (p.VAR_POSITIONAL, p.VAR_KEYWORD)
        ]
        return sorted(names)

    def get_params(self, deep: bool = True) -> dict[str, Any]:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params: Any) -> "ParamsMixin":
        valid = set(self._param_names())
        for name, value in params.items():
            if name not in valid:
                raise ConfigError(
                    f"unknown parameter {name!r} for {type(self).__name__}; "
                    f"valid parameters are {sorted(valid)}"
                )
            setattr(self, name, value)
        return self

    def __repr__(self) -> str:
        args = ", ".join(f"{k}={v!r}" for k, v in self.get_params().items())
        return f"{type(self).__name__}({args})"


def split_seed(master_seed: int, *path: int) -> int:
    """Derive an independent child seed from a master seed.

    The master seed plus the integer path feed a numpy SeedSequence, so
    distinct paths give statistically independent streams and the mapping
    is stable across runs and platforms.
    """
    ss = np.random.SeedSequence([int(master_seed), *map(int, path)])
    return int(ss.generate_state(1)[0])


def check_fitted(estimator: Any, attributes: Iterable[str]) -> None:
    """Raise NotFittedError unless every named attribute exists and is set."""
    missing = [a for a in attributes if getattr(estimator, a, None) is None]
    if missing:
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted; call fit first "
            f"(missing {missing})"
        )


def check_text(value: Any, name: str) -> str:
    if not isinstance(value, str):
        raise ContractError(f"{name} must be a string, got {type(value).__name__}")
    if not value.strip():
        raise ContractError(f"{name} must be a non-empty string")
    return value


def check_positive_int(value: Any, name: str) -> int:
    if not isinstance(value, int) or isinstance(value, bool) or value <= 0:
        raise ConfigError(f"{name} must be a positive integer, got {value!r}")
    return value


def check_pair_list(pairs: Any) -> list[tuple[str, str]]:
    """Normalize predict-style input to a list of (premise, hypothesis)."""
    out = []
    for i, item in enumerate(pairs):
        if hasattr(item, "premise") and hasattr(item, "hypothesis"):
            premise, hypothesis = item.premise, item.hypothesis
        else:
            try:
                premise, hypothesis = item
            except (TypeError, ValueError):
                raise ContractError(
                    f"pair {i} must be (premise, hypothesis) or have "
                    f".premise/.hypothesis attributes, got {item!r}"
                ) from None
        check_text(premise, f"pair {i} premise")
        check_text(hypothesis, f"pair {i} hypothesis")
        out.append((premise, hypothesis))
    return out
