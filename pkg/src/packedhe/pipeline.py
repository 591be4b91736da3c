"""End-to-end encrypted CNN inference.

Network: CONV (4 kernels 3x3 over 28x28 inputs) -> degree-3 polynomial
activation -> FC 2704->64 -> activation -> FC 64->10.  A batch of 32
images rides in one 32768-slot ciphertext (stride 1024 per image).

Layout strategy after the convolution: each activated feature map is
compacted to a contiguous 676-slot prefix per image, and the four map
ciphertexts then serve directly as the four inner-dimension chunks of the
first FC product (weight columns are mapped chunk-wise, preserving the
map-major flatten order).  FC output neurons are evaluated in
power-of-two blocks no wider than the batch row count, which keeps every
matmul on its single-rotation row-cycling path, then block results are
concatenated with one uniform rotation each.
"""

from dataclasses import dataclass

import numpy as np

from .conv import Kernel
from .encoding import Encoding, MatrixShape, PackedMatrix, encode_revolver
from .engine import Ciphertext, EngineError, LayoutError, SlotEngine, is_pow2, next_pow2
from .matmul import matmul
from .virtual import VirtualLayout, batched_conv, reform, tile_kernel_span

__all__ = [
    "IMAGE_SIDE",
    "IMAGE_SLOTS",
    "IMAGES_PER_CT",
    "KERNEL_COUNT",
    "KERNEL_SIZE",
    "MAP_SIDE",
    "MAP_FEATURES",
    "FC1_IN",
    "FC1_OUT",
    "FC2_IN",
    "FC2_OUT",
    "PIPELINE_DEPTH",
    "MNIST_LAYOUT",
    "ModelWeights",
    "BatchPlan",
    "ChunkedDataset",
    "EncodedModel",
    "poly_activation",
    "pack_batch",
    "conv_layer",
    "flatten_maps",
    "fc_layer",
    "encode_model",
    "forward",
    "forward_encoded",
    "argmax_decide",
]

IMAGE_SIDE = 28
IMAGE_SLOTS = 1024
IMAGES_PER_CT = 32
KERNEL_COUNT = 4
KERNEL_SIZE = 3
MAP_SIDE = IMAGE_SIDE - KERNEL_SIZE + 1  # 26
MAP_FEATURES = MAP_SIDE * MAP_SIDE  # 676
FC1_IN = KERNEL_COUNT * MAP_FEATURES  # 2704
FC1_OUT = 64
FC2_IN = 64
FC2_OUT = 10

# Multiplicative levels on the critical path at the standard layout:
# conv 2 (mul + offset filter), activation 2, reform 1, fc 3 each
# (mul + row-sum filter + result filter; the row cycle is rotation-only),
# activation 2.
PIPELINE_DEPTH = 2 + 2 + 1 + 3 + 2 + 3

MNIST_LAYOUT = VirtualLayout(IMAGES_PER_CT, IMAGE_SLOTS, IMAGE_SIDE, IMAGE_SIDE)


@dataclass(frozen=True, eq=False)
class ModelWeights:
    """Plaintext model parameters (ingested, not trained here)."""

    conv_kernels: list
    fc1_weight: np.ndarray
    fc1_bias: np.ndarray
    fc2_weight: np.ndarray
    fc2_bias: np.ndarray
    act1: tuple
    act2: tuple

    def validate(self) -> None:
        if len(self.conv_kernels) != KERNEL_COUNT:
            raise EngineError(f"expected {KERNEL_COUNT} kernels, got {len(self.conv_kernels)}")
        for kern in self.conv_kernels:
            if kern.k != KERNEL_SIZE:
                raise EngineError(f"expected {KERNEL_SIZE}x{KERNEL_SIZE} kernels, got k={kern.k}")
        if self.fc1_weight.shape != (FC1_OUT, FC1_IN):
            raise EngineError(f"fc1 weight must be {FC1_OUT}x{FC1_IN}, got {self.fc1_weight.shape}")
        if self.fc1_bias.shape != (FC1_OUT,):
            raise EngineError(f"fc1 bias must have {FC1_OUT} entries")
        if self.fc2_weight.shape != (FC2_OUT, FC2_IN):
            raise EngineError(f"fc2 weight must be {FC2_OUT}x{FC2_IN}, got {self.fc2_weight.shape}")
        if self.fc2_bias.shape != (FC2_OUT,):
            raise EngineError(f"fc2 bias must have {FC2_OUT} entries")
        if len(self.act1) != 4 or len(self.act2) != 4:
            raise EngineError("activation polynomials take exactly 4 coefficients")


@dataclass(frozen=True)
class BatchPlan:
    """How a dataset maps onto batch ciphertexts."""

    images_per_ct: int
    image_slots: int
    batch_count: int
    zero_fill: int

    @classmethod
    def for_dataset(
        cls, n_images: int, slots: int = 32768, image_slots: int = IMAGE_SLOTS
    ) -> "BatchPlan":
        if slots % image_slots != 0:
            raise EngineError(f"{slots} slots not divisible by image stride {image_slots}")
        per_ct = slots // image_slots
        batches = -(-n_images // per_ct) if n_images else 0
        return cls(
            images_per_ct=per_ct,
            image_slots=image_slots,
            batch_count=batches,
            zero_fill=batches * per_ct - n_images,
        )


@dataclass(frozen=True, eq=False)
class ChunkedDataset:
    """Dataset rows split column-wise across several packed ciphertexts.

    ``valid_widths[c]`` is the number of meaningful leading slots in each
    row of chunk c; the logical feature vector is the concatenation of the
    valid prefixes in chunk order.
    """

    chunks: list
    valid_widths: list

    @property
    def rows(self) -> int:
        return self.chunks[0].shape.m

    @property
    def chunk_width(self) -> int:
        return self.chunks[0].shape.n


@dataclass(frozen=True, eq=False)
class EncodedModel:
    """Model parameters in evaluation-ready encrypted form.

    fc tiles are indexed [neuron_block][input_chunk]; activation
    coefficients stay public plaintext.
    """

    kernel_spans: list
    fc1_tiles: list
    fc1_bias_cts: list
    fc1_block: int
    fc2_tiles: list
    fc2_bias_cts: list
    fc2_block: int
    act1: tuple
    act2: tuple
    layout: VirtualLayout

    @property
    def ciphertext_count(self) -> int:
        n = sum(len(s.span_cts) + 1 for s in self.kernel_spans)
        n += sum(len(row) for row in self.fc1_tiles) + len(self.fc1_bias_cts)
        n += sum(len(row) for row in self.fc2_tiles) + len(self.fc2_bias_cts)
        return n


def poly_activation(engine: SlotEngine, ct: Ciphertext, coeffs) -> Ciphertext:
    """Slot-wise c0 + c1 x + c2 x^2 + c3 x^3 in two multiplicative levels.

    x^2 is squared once; the cubic and quadratic terms share it through
    x^2 * (c3 x + c2).  Two ct-ct products, two constant products.
    """
    if len(coeffs) != 4:
        raise EngineError(f"expected 4 coefficients, got {len(coeffs)}")
    c0, c1, c2, c3 = (float(c) for c in coeffs)
    slots = engine.slots
    x2 = engine.mul(ct, ct)
    inner = engine.add(
        engine.cmul(engine.mask(np.full(slots, c3)), ct),
        engine.enc(np.full(slots, c2)),
    )
    out = engine.mul(x2, inner)
    out = engine.add(out, engine.cmul(engine.mask(np.full(slots, c1)), ct))
    return engine.add(out, engine.enc(np.full(slots, c0)))


def pack_batch(engine: SlotEngine, images, layout: VirtualLayout = MNIST_LAYOUT) -> Ciphertext:
    """Pack up to layout.m images row-wise at the layout stride."""
    arr = np.asarray(images, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None, :, :]
    b, h, w = arr.shape
    if (h, w) != (layout.h, layout.w):
        raise LayoutError(f"images are {h}x{w}, layout expects {layout.h}x{layout.w}")
    if b > layout.m:
        raise LayoutError(f"{b} images exceed {layout.m} blocks per ciphertext")
    grid = np.zeros((layout.m, layout.f), dtype=np.float64)
    grid[:b, : h * w] = arr.reshape(b, h * w)
    return engine.enc(grid.reshape(-1), layout=layout.tag())


def conv_layer(engine: SlotEngine, ct_x: Ciphertext, layout: VirtualLayout, spans):
    """One batched convolution per kernel; kernel branches are independent.

    Returns (map ciphertexts, layout, (out_h, out_w)).
    """
    outs = [batched_conv(engine, ct_x, layout, span) for span in spans]
    k = spans[0].k
    return outs, layout, (layout.h - k + 1, layout.w - k + 1)


def flatten_maps(
    engine: SlotEngine, map_cts, layout: VirtualLayout, out_h: int, out_w: int
) -> ChunkedDataset:
    """Compact each feature map to a contiguous per-image prefix.

    The compacted map ciphertexts are the inner-dimension chunks of the
    following FC layer, in map-major order (row-major within a map); the
    slots after each 676-value prefix are zero padding inside the chunk.
    """
    chunks = []
    for ct in map_cts:
        flat_ct, _ = reform(engine, ct, layout, out_h, out_w)
        chunks.append(
            PackedMatrix(flat_ct, MatrixShape(layout.m, layout.f), Encoding.DATABASE)
        )
    return ChunkedDataset(chunks, [out_h * out_w] * len(map_cts))


def _fc_blocking(m: int, out_dim: int) -> tuple[int, int]:
    """Split out_dim into power-of-two neuron blocks no wider than m."""
    p_pad = next_pow2(out_dim)
    if p_pad <= m:
        return p_pad, 1
    if not is_pow2(m):
        raise LayoutError(
            f"{out_dim} outputs with {m} rows need power-of-two rows for blocking"
        )
    return m, p_pad // m


def _encode_fc_tiles(
    engine: SlotEngine,
    weight: np.ndarray,
    bias: np.ndarray,
    rows: int,
    chunk_width: int,
    valid_widths,
) -> tuple[list, list, int]:
    """Revolver-encode an FC weight matrix against a chunked input layout.

    Tile (b, c): neurons of block b against input chunk c, padded to the
    chunk width.  Block bias is packed as the matmul accumulator seed.
    """
    out_dim, in_dim = weight.shape
    if in_dim != sum(valid_widths):
        raise LayoutError(
            f"weight expects {in_dim} inputs, chunks provide {sum(valid_widths)}"
        )
    block_p, n_blocks = _fc_blocking(rows, out_dim)
    starts = np.concatenate([[0], np.cumsum(valid_widths)])[:-1]
    tiles, bias_cts = [], []
    for b in range(n_blocks):
        row_tiles = []
        for c, width in enumerate(valid_widths):
            bmat = np.zeros((chunk_width, block_p), dtype=np.float64)
            for j in range(block_p):
                neuron = b * block_p + j
                if neuron < out_dim:
                    bmat[:width, j] = weight[neuron, starts[c] : starts[c] + width]
            row_tiles.append(encode_revolver(engine, bmat, target_m=rows))
        tiles.append(row_tiles)
        bias_grid = np.zeros((rows, chunk_width), dtype=np.float64)
        for j in range(block_p):
            neuron = b * block_p + j
            if neuron < out_dim:
                bias_grid[:, j] = bias[neuron]
        bias_cts.append(engine.enc(bias_grid.reshape(-1)))
    return tiles, bias_cts, block_p


def _fc_from_tiles(
    engine: SlotEngine, chunks, tiles, bias_cts, block_p: int
) -> PackedMatrix:
    """Evaluate an FC layer given encoded weight tiles.

    Accumulates over input chunks per neuron block, then concatenates the
    block results with one uniform right rotation per extra block.
    """
    rows = chunks[0].shape.m
    width = chunks[0].shape.n
    blocks = []
    for b, row_tiles in enumerate(tiles):
        acc = None
        for c, bbar in enumerate(row_tiles):
            seeded = bias_cts[b] if c == 0 else None
            r = matmul(engine, chunks[c], bbar, init=seeded)
            acc = r.ct if acc is None else engine.add(acc, r.ct)
        blocks.append(acc)
    out = blocks[0]
    for b in range(1, len(blocks)):
        out = engine.add(out, engine.rot(blocks[b], -b * block_p))
    return PackedMatrix(out, MatrixShape(rows, width), Encoding.ROW_MAJOR)


def fc_layer(engine: SlotEngine, x, weight, bias) -> PackedMatrix:
    """Affine layer: decodes to X @ weight.T + bias per dataset row.

    ``x`` is a single PackedMatrix (row width = weight input count) or a
    ChunkedDataset whose valid prefixes concatenate to the input vector.
    """
    weight = np.atleast_2d(np.asarray(weight, dtype=np.float64))
    bias = np.asarray(bias, dtype=np.float64).reshape(-1)
    if bias.shape[0] != weight.shape[0]:
        raise LayoutError(f"bias has {bias.shape[0]} entries for {weight.shape[0]} outputs")
    if isinstance(x, PackedMatrix):
        data = ChunkedDataset([x], [weight.shape[1]])
    else:
        data = x
    tiles, bias_cts, block_p = _encode_fc_tiles(
        engine, weight, bias, data.rows, data.chunk_width, data.valid_widths
    )
    return _fc_from_tiles(engine, data.chunks, tiles, bias_cts, block_p)


def encode_model(
    engine: SlotEngine, weights: ModelWeights, layout: VirtualLayout = MNIST_LAYOUT
) -> EncodedModel:
    """Provider-side encoding: kernel spans plus FC weight tiles."""
    weights.validate()
    spans = [tile_kernel_span(engine, kern, layout) for kern in weights.conv_kernels]
    fc1_tiles, fc1_bias, fc1_block = _encode_fc_tiles(
        engine,
        weights.fc1_weight,
        weights.fc1_bias,
        layout.m,
        layout.f,
        [MAP_FEATURES] * KERNEL_COUNT,
    )
    fc2_tiles, fc2_bias, fc2_block = _encode_fc_tiles(
        engine,
        weights.fc2_weight,
        weights.fc2_bias,
        layout.m,
        layout.f,
        [FC2_IN],
    )
    return EncodedModel(
        kernel_spans=spans,
        fc1_tiles=fc1_tiles,
        fc1_bias_cts=fc1_bias,
        fc1_block=fc1_block,
        fc2_tiles=fc2_tiles,
        fc2_bias_cts=fc2_bias,
        fc2_block=fc2_block,
        act1=tuple(weights.act1),
        act2=tuple(weights.act2),
        layout=layout,
    )


def forward_encoded(
    engine: SlotEngine,
    ct_x: Ciphertext,
    model: EncodedModel,
    stage_meters: dict | None = None,
) -> PackedMatrix:
    """Run the full pipeline on one packed batch of images.

    Pass a dict as ``stage_meters`` to collect per-stage operation-count
    deltas under keys conv/act1/flatten/fc1/act2/fc2.
    """
    layout = model.layout

    def note(stage, before):
        if stage_meters is not None:
            stage_meters[stage] = engine.meter_snapshot().delta_since(before)

    snap = engine.meter_snapshot()
    maps, _, (out_h, out_w) = conv_layer(engine, ct_x, layout, model.kernel_spans)
    note("conv", snap)

    snap = engine.meter_snapshot()
    maps = [poly_activation(engine, ct, model.act1) for ct in maps]
    note("act1", snap)

    snap = engine.meter_snapshot()
    data = flatten_maps(engine, maps, layout, out_h, out_w)
    note("flatten", snap)

    snap = engine.meter_snapshot()
    hidden = _fc_from_tiles(engine, data.chunks, model.fc1_tiles, model.fc1_bias_cts, model.fc1_block)
    note("fc1", snap)

    snap = engine.meter_snapshot()
    activated = poly_activation(engine, hidden.ct, model.act2)
    hidden = PackedMatrix(activated, hidden.shape, Encoding.DATABASE)
    note("act2", snap)

    snap = engine.meter_snapshot()
    scores = _fc_from_tiles(engine, [hidden], model.fc2_tiles, model.fc2_bias_cts, model.fc2_block)
    note("fc2", snap)
    return scores


def forward(
    engine: SlotEngine,
    ct_x: Ciphertext,
    weights: ModelWeights,
    layout: VirtualLayout = MNIST_LAYOUT,
) -> PackedMatrix:
    """Encode the model inline and run one batch (testing convenience)."""
    model = encode_model(engine, weights, layout)
    return forward_encoded(engine, ct_x, model)


def argmax_decide(engine: SlotEngine, scores: PackedMatrix, n_classes: int = FC2_OUT) -> np.ndarray:
    """Pick the highest-scoring class per row; ties go to the lowest index."""
    mat = scores.decode(engine)
    return np.argmax(mat[:, :n_classes], axis=1)
