"""Packed-slot homomorphic evaluation toolkit (exact simulated backend)."""

from .engine import (
    CapacityError,
    Ciphertext,
    EngineError,
    EngineParams,
    LayoutError,
    OpMeter,
    PlainMask,
    SlotEngine,
)
from .encoding import (
    Encoding,
    MatrixShape,
    PackedMatrix,
    encode_db,
    encode_revolver,
    encode_row_major,
    incomplete_col_shift,
    matrix_from_csv,
    row_shift,
    sum_col_vec,
    sum_row_vec,
)
from .matmul import MatmulPlan, build_result_filter, matmul, matmul_tiled, row_shifter
from .conv import (
    ImageShape,
    Kernel,
    KernelSpan,
    build_offset_filter,
    conv,
    kernel_spanner,
    sum_for_conv,
)
from .virtual import VirtualLayout, batched_conv, reform, tile_kernel_span, vadd, vmul, vrot
from .multicipher import (
    ColumnEncodedImage,
    ColumnEncodedMatrix,
    conv_columns,
    encode_image_columns,
    encode_left,
    encode_right,
    matmul_outer,
    reassemble_columns,
)
from .pipeline import (
    BatchPlan,
    ChunkedDataset,
    EncodedModel,
    ModelWeights,
    PIPELINE_DEPTH,
    argmax_decide,
    encode_model,
    fc_layer,
    flatten_maps,
    forward,
    forward_encoded,
    pack_batch,
    poly_activation,
)
from .oracle import oracle_conv, oracle_forward, oracle_matmul, oracle_poly

__version__ = "0.1.0"
