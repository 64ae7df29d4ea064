"""Multi-granular information-lossless downsampling blocks on a
from-scratch numpy autodiff core."""

import os as _os

# MGIL_THREADS caps internal (BLAS) parallelism; default 1 for bit-exact runs.
_threads = _os.environ.get("MGIL_THREADS", "1")
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
             "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
    _os.environ.setdefault(_var, _threads)

from .tensor import ContractError, Module, Parameter, Tape, Tensor  # noqa: E402
from .blocks import (  # noqa: E402
    MgilConfig,
    MgilDownsampler,
    MaxPoolDownsampler,
    SpdConvDownsampler,
    StridedConvDownsampler,
    make_downsampler,
    sct_forward,
    sct_inverse,
)
from .nets import NetSpec, build_net, decode_keypoints  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    "ContractError", "Module", "Parameter", "Tape", "Tensor",
    "MgilConfig", "MgilDownsampler", "MaxPoolDownsampler",
    "SpdConvDownsampler", "StridedConvDownsampler", "make_downsampler",
    "sct_forward", "sct_inverse",
    "NetSpec", "build_net", "decode_keypoints",
    "__version__",
]
