from .amplify import PaAccumulator, PaBlockPolicy, derive_seed, pa_output_length
from .ldpc import FixtureError, LdpcCode, ReconcileResult, default_code, ldpc_syndrome_reconcile
from .toeplitz import ToeplitzSeed, privacy_amplify, toeplitz_fft, toeplitz_naive, toeplitz_tag

__all__ = [
    "PaAccumulator", "PaBlockPolicy", "derive_seed", "pa_output_length", "FixtureError",
    "LdpcCode", "ReconcileResult", "default_code", "ldpc_syndrome_reconcile", "ToeplitzSeed",
    "privacy_amplify", "toeplitz_fft", "toeplitz_naive", "toeplitz_tag",
]
