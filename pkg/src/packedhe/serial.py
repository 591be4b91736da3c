"""On-disk formats for packed batches and encoded models.

A "ciphertext" file here is a SIMULATED plaintext slot vector, named and
tagged as such so nobody mistakes the artifact for real encryption:
magic, a little-endian uint32 header length, a JSON header (layout tag,
dims, depth, slot count, arbitrary metadata) and raw little-endian
float64 slots.  Round trips are bit-exact.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .conv import ImageShape, KernelSpan
from .encoding import Encoding, MatrixShape, PackedMatrix
from .engine import Ciphertext, SlotEngine
from .pipeline import EncodedModel
from .virtual import VirtualLayout

__all__ = [
    "SerialError",
    "CT_SUFFIX",
    "write_ciphertext",
    "read_ciphertext",
    "load_ciphertext",
    "write_batch",
    "load_batch",
    "write_model",
    "load_model",
]

MAGIC = b"SIMCT\x01"
FORMAT_NAME = "simulated-plaintext-slots-v1"
CT_SUFFIX = ".simct"  # SIMulated CipherText; contents are NOT encrypted


class SerialError(ValueError):
    """Corrupt or incompatible serialized file."""


def write_ciphertext(path, ct: Ciphertext, meta: dict | None = None) -> None:
    header = {
        "format": FORMAT_NAME,
        "slots": int(ct.slots.size),
        "depth": int(ct.depth),
        "layout": list(ct.layout) if ct.layout is not None else None,
        "meta": meta or {},
    }
    blob = json.dumps(header).encode("utf-8")
    payload = np.asarray(ct.slots, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(payload)


def read_ciphertext(path) -> tuple[np.ndarray, dict]:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise SerialError(f"{path}: not a {FORMAT_NAME} file")
    if len(data) < len(MAGIC) + 4:
        raise SerialError(f"{path}: truncated header")
    (hlen,) = struct.unpack_from("<I", data, len(MAGIC))
    hstart = len(MAGIC) + 4
    if len(data) < hstart + hlen:
        raise SerialError(f"{path}: truncated header")
    try:
        header = json.loads(data[hstart : hstart + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SerialError(f"{path}: unreadable header: {exc}") from exc
    slots = header.get("slots")
    payload = data[hstart + hlen :]
    if slots is None or len(payload) != 8 * slots:
        raise SerialError(f"{path}: payload size mismatch")
    vec = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    return vec, header


def load_ciphertext(engine: SlotEngine, path) -> tuple[Ciphertext, dict]:
    """Deserialize without touching the enc meter (the producer encrypted it)."""
    vec, header = read_ciphertext(path)
    if vec.size != engine.slots:
        raise SerialError(
            f"{path}: file has {vec.size} slots, engine expects {engine.slots}"
        )
    layout = tuple(header["layout"]) if header.get("layout") else None
    vec.flags.writeable = False
    return Ciphertext(vec, depth=int(header.get("depth", 0)), layout=layout), header


def write_batch(path, ct: Ciphertext, layout: VirtualLayout, valid_rows: int) -> None:
    write_ciphertext(
        path,
        ct,
        meta={
            "kind": "image-batch",
            "valid_rows": int(valid_rows),
            "m": layout.m,
            "f": layout.f,
            "h": layout.h,
            "w": layout.w,
        },
    )


def load_batch(engine: SlotEngine, path) -> tuple[Ciphertext, VirtualLayout, int]:
    ct, header = load_ciphertext(engine, path)
    meta = header.get("meta", {})
    if meta.get("kind") != "image-batch":
        raise SerialError(f"{path}: not an image batch file")
    layout = VirtualLayout(meta["m"], meta["f"], meta["h"], meta["w"])
    return ct, layout, int(meta["valid_rows"])


def _span_paths(directory: Path, ki: int, k: int) -> list:
    return [directory / f"kernel{ki}_span{si}{CT_SUFFIX}" for si in range(k * k)]


def write_model(directory, model: EncodedModel) -> int:
    """Write an encoded model as a directory of files plus a manifest.

    Returns the number of ciphertext files written.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    count = 0
    for ki, span in enumerate(model.kernel_spans):
        for si, ct in enumerate(span.span_cts):
            write_ciphertext(directory / f"kernel{ki}_span{si}{CT_SUFFIX}", ct)
            count += 1
        write_ciphertext(directory / f"kernel{ki}_bias{CT_SUFFIX}", span.bias_ct)
        count += 1
    for b, row in enumerate(model.fc1_tiles):
        for c, tile in enumerate(row):
            write_ciphertext(
                directory / f"fc1_w_b{b}_c{c}{CT_SUFFIX}",
                tile.ct,
                meta={"revolve_p": tile.revolve_p, "rows": tile.shape.m, "cols": tile.shape.n},
            )
            count += 1
        write_ciphertext(directory / f"fc1_bias_b{b}{CT_SUFFIX}", model.fc1_bias_cts[b])
        count += 1
    for b, row in enumerate(model.fc2_tiles):
        for c, tile in enumerate(row):
            write_ciphertext(
                directory / f"fc2_w_b{b}_c{c}{CT_SUFFIX}",
                tile.ct,
                meta={"revolve_p": tile.revolve_p, "rows": tile.shape.m, "cols": tile.shape.n},
            )
            count += 1
        write_ciphertext(directory / f"fc2_bias_b{b}{CT_SUFFIX}", model.fc2_bias_cts[b])
        count += 1
    manifest = {
        "format": FORMAT_NAME,
        "kernel_count": len(model.kernel_spans),
        "kernel_k": model.kernel_spans[0].k if model.kernel_spans else 0,
        "fc1_blocks": len(model.fc1_tiles),
        "fc1_chunks": len(model.fc1_tiles[0]) if model.fc1_tiles else 0,
        "fc1_block_p": model.fc1_block,
        "fc2_blocks": len(model.fc2_tiles),
        "fc2_chunks": len(model.fc2_tiles[0]) if model.fc2_tiles else 0,
        "fc2_block_p": model.fc2_block,
        "act1": list(map(float, model.act1)),
        "act2": list(map(float, model.act2)),
        "layout": {"m": model.layout.m, "f": model.layout.f, "h": model.layout.h, "w": model.layout.w},
        "ciphertext_count": count,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return count


def load_model(engine: SlotEngine, directory) -> EncodedModel:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise SerialError(f"missing model manifest: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    lay = manifest["layout"]
    layout = VirtualLayout(lay["m"], lay["f"], lay["h"], lay["w"])
    shape = ImageShape(layout.h, layout.w)
    k = manifest["kernel_k"]

    spans = []
    for ki in range(manifest["kernel_count"]):
        cts = [load_ciphertext(engine, p)[0] for p in _span_paths(directory, ki, k)]
        bias_ct, _ = load_ciphertext(engine, directory / f"kernel{ki}_bias{CT_SUFFIX}")
        spans.append(KernelSpan(cts, bias_ct, k, shape))

    def load_fc(prefix: str, blocks: int, chunks: int):
        tiles, bias_cts = [], []
        for b in range(blocks):
            row = []
            for c in range(chunks):
                ct, header = load_ciphertext(engine, directory / f"{prefix}_w_b{b}_c{c}{CT_SUFFIX}")
                meta = header["meta"]
                row.append(
                    PackedMatrix(
                        ct,
                        MatrixShape(meta["rows"], meta["cols"]),
                        Encoding.REVOLVER,
                        revolve_p=meta["revolve_p"],
                    )
                )
            tiles.append(row)
            bias_cts.append(load_ciphertext(engine, directory / f"{prefix}_bias_b{b}{CT_SUFFIX}")[0])
        return tiles, bias_cts

    fc1_tiles, fc1_bias = load_fc("fc1", manifest["fc1_blocks"], manifest["fc1_chunks"])
    fc2_tiles, fc2_bias = load_fc("fc2", manifest["fc2_blocks"], manifest["fc2_chunks"])
    return EncodedModel(
        kernel_spans=spans,
        fc1_tiles=fc1_tiles,
        fc1_bias_cts=fc1_bias,
        fc1_block=manifest["fc1_block_p"],
        fc2_tiles=fc2_tiles,
        fc2_bias_cts=fc2_bias,
        fc2_block=manifest["fc2_block_p"],
        act1=tuple(manifest["act1"]),
        act2=tuple(manifest["act2"]),
        layout=layout,
    )
