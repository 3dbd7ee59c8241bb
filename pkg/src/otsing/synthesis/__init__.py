from .codec import (
    AffineCodec,
    Codec,
    CodecError,
    CodecKind,
    ExternalCodec,
    ExternalCodecError,
    IdentityCodec,
    parse_codec,
)
from .otis import (
    InterpolationMode,
    SynthesisError,
    SynthesisSample,
    generate_otis,
    interpolation_baselines,
    interpolation_weights,
    smoothed_transport,
    stack_outputs,
)

__all__ = [
    "AffineCodec",
    "Codec",
    "CodecError",
    "CodecKind",
    "ExternalCodec",
    "ExternalCodecError",
    "IdentityCodec",
    "InterpolationMode",
    "SynthesisError",
    "SynthesisSample",
    "generate_otis",
    "interpolation_baselines",
    "interpolation_weights",
    "parse_codec",
    "smoothed_transport",
    "stack_outputs",
]
