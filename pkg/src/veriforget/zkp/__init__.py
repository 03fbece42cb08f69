from .backend import (
    MockBackend,
    Proof,
    UnsatisfiableWitnessError,
    get_backend,
    register_backend,
)
from .circuit import (
    CertificateCircuit,
    MockVerdict,
    PublicInputs,
    constraint_report,
    mock_prove,
    synthesize,
)
from .field import (
    MODULUS,
    Commitment,
    WraparoundError,
    commit_vector,
    from_field,
    merkle_root,
    permute,
    sponge,
    to_field,
    verify_commit,
)
from .witness import (
    DEFAULT_BOUND_C,
    DEFAULT_BOUND_LAM,
    DEFAULT_BOUND_W,
    DEFAULT_FRAC_BITS_C,
    DEFAULT_FRAC_BITS_W,
    FixedWitness,
    default_t_int,
    encode_fixed_witness,
    stationarity_bound_int,
)

__all__ = [
    "MODULUS",
    "CertificateCircuit",
    "Commitment",
    "FixedWitness",
    "MockBackend",
    "MockVerdict",
    "Proof",
    "PublicInputs",
    "UnsatisfiableWitnessError",
    "WraparoundError",
    "commit_vector",
    "constraint_report",
    "default_t_int",
    "encode_fixed_witness",
    "from_field",
    "get_backend",
    "merkle_root",
    "mock_prove",
    "permute",
    "register_backend",
    "sponge",
    "stationarity_bound_int",
    "synthesize",
    "to_field",
    "verify_commit",
]
