"""Hybrid FEM/network time stepping, its exchange channel and the stability harness."""
from .channel import CouplingChannel, FileTransport, InProcessTransport, channel_roundtrip, decode_block, encode_block
from .driver import (
    ConstantPredictor,
    IfennConfig,
    IfennResult,
    ModelPredictor,
    OraclePredictor,
    StabilityResult,
    compare_vs_monolithic,
    monolithic_reference,
    predictor_for,
    run_ifenn,
    run_stability_study,
    serve,
    state_components,
    write_error_vtk,
)

__all__ = [
    "CouplingChannel", "FileTransport", "InProcessTransport", "channel_roundtrip", "decode_block",
    "encode_block", "ConstantPredictor", "IfennConfig", "IfennResult", "ModelPredictor", "OraclePredictor",
    "StabilityResult", "compare_vs_monolithic", "monolithic_reference", "predictor_for", "run_ifenn",
    "run_stability_study", "serve", "state_components", "write_error_vtk",
]
