"""Sliding-window cross-view matching: stereo and optical flow."""

from matchattn._core import (
    Decoder,
    attention,
    attention_flops,
    bilinear_softmax,
    bilinear_softmax_ref,
    compute_metrics,
    consistency_residual,
    decoder_flops,
    gen_scene,
    read_flo,
    read_pfm,
    write_flo,
    write_pfm,
)

__all__ = [
    "Decoder",
    "attention",
    "attention_flops",
    "bilinear_softmax",
    "bilinear_softmax_ref",
    "compute_metrics",
    "consistency_residual",
    "decoder_flops",
    "gen_scene",
    "read_flo",
    "read_pfm",
    "write_flo",
    "write_pfm",
]
