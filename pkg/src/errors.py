# -*- coding: utf-8 -*-
"""
Declared failures of the stereo-UQ pipeline.

Every error carries a stable kebab-case ``code`` so the CLI can print a
one-line ``error[<code>]: <message>`` diagnostic.
"""
from typing import List

__all__: List[str] = [
    "StereoUQError",
    "InvalidRange",
    "InvalidLogRange",
    "TooFewBins",
    "DimensionMismatch",
    "InvalidPmf",
    "InvalidCoverage",
    "NonFiniteLabel",
    "EmptyMask",
    "ImageTooSmall",
    "NonUniformLayout",
    "EmptyDataset",
    "DivergentLoss",
    "EmptyBank",
    "InvalidKernelSpec",
    "EmptyInput",
    "ZeroNormalizer",
    "MissingArtifact",
    "OutOfRangeDisparity",
    "ConfigError",
    "StorageError",
    "BadMagic",
    "BadHeader",
    "TruncatedPayload",
    "VersionMismatch",
    "DimOverflow",
    "EmptyDims",
    "UnsupportedMaxval",
    "DuplicateSection",
]


class StereoUQError(ValueError):
    """Base class for every declared error."""

    code: str = "stereo-uq-error"


class InvalidRange(StereoUQError):
    code = "invalid-range"


class InvalidLogRange(StereoUQError):
    code = "invalid-log-range"


class TooFewBins(StereoUQError):
    code = "too-few-bins"


class DimensionMismatch(StereoUQError):
    code = "dimension-mismatch"


class InvalidPmf(StereoUQError):
    code = "invalid-pmf"


class InvalidCoverage(StereoUQError):
    code = "invalid-coverage"


class NonFiniteLabel(StereoUQError):
    code = "non-finite-label"


class EmptyMask(StereoUQError):
    code = "empty-mask"


class ImageTooSmall(StereoUQError):
    code = "image-too-small"


class NonUniformLayout(StereoUQError):
    code = "non-uniform-layout"


class EmptyDataset(StereoUQError):
    code = "empty-dataset"


class DivergentLoss(StereoUQError):
    code = "divergent-loss"


class EmptyBank(StereoUQError):
    code = "empty-bank"


class InvalidKernelSpec(StereoUQError):
    code = "invalid-kernel-spec"


class EmptyInput(StereoUQError):
    code = "empty-input"


class ZeroNormalizer(StereoUQError):
    code = "zero-normalizer"


class MissingArtifact(StereoUQError):
    code = "missing-artifact"


class OutOfRangeDisparity(StereoUQError):
    code = "out-of-range-disparity"


class ConfigError(StereoUQError):
    code = "invalid-config"


# --- File formats ---


class StorageError(StereoUQError):
    code = "storage-error"


class BadMagic(StorageError):
    code = "bad-magic"


class BadHeader(StorageError):
    code = "bad-header"


class TruncatedPayload(StorageError):
    code = "truncated-payload"


class VersionMismatch(StorageError):
    code = "version-mismatch"


class DimOverflow(StorageError):
    code = "dim-overflow"


class EmptyDims(StorageError):
    code = "empty-dims"


class UnsupportedMaxval(StorageError):
    code = "unsupported-maxval"


class DuplicateSection(StorageError):
    code = "duplicate-section"
