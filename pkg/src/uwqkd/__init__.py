"""Underwater decoy-state BB84: channel and detector simulation, decoy
analysis, and the sifting / LDPC / Toeplitz key-distillation stack."""

__version__ = "0.1.0"
