"""Binary containers and image export.

All formats are little-endian:

- scene  ".t3b":  "T3BIN\\0", u32 version=1, u32 height, u32 width,
                  height*width*9 float32 (row-major, fixed channel order)
- labels ".lbl":  "LBL\\0", u32 version=1, u32 height, u32 width,
                  u32 num_classes, height*width int32 (0 = unlabeled)
- patches ".pds": "PDS\\0", u32 version, u32 count, u32 channels,
                  u32 patch_size, count patches of float32
- params ".ckpt": "CKPT", u32 version, u32 tensor count, then per tensor:
                  u32 name length, name bytes, u32 rank, dims, float32 data
"""

import struct

import numpy as np

from pclnet.polsar import LabelMap, NUM_CHANNELS, PolSARScene

T3B_MAGIC = b"T3BIN\0"
LBL_MAGIC = b"LBL\0"
PDS_MAGIC = b"PDS\0"
CKPT_MAGIC = b"CKPT"

# Fixed class -> RGB palette for exported maps; class 0 (unlabeled) is black.
# Classes beyond 16 wrap around.
PALETTE = (
    (0, 0, 0),
    (230, 25, 75), (60, 180, 75), (0, 130, 200), (255, 225, 25),
    (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230),
    (210, 245, 60), (250, 190, 212), (0, 128, 128), (220, 190, 255),
    (170, 110, 40), (255, 250, 200), (128, 0, 0), (170, 255, 195),
)


def _read_exact(fh, count, what):
    data = fh.read(count)
    if len(data) != count:
        raise ValueError(f"truncated file while reading {what}")
    return data


def write_scene(path, scene):
    data = scene.data.astype("<f4")
    with open(path, "wb") as fh:
        fh.write(T3B_MAGIC)
        fh.write(struct.pack("<III", 1, scene.height, scene.width))
        fh.write(data.tobytes())


def read_scene(path):
    with open(path, "rb") as fh:
        if _read_exact(fh, len(T3B_MAGIC), "magic") != T3B_MAGIC:
            raise ValueError("not a .t3b scene file")
        version, height, width = struct.unpack("<III", _read_exact(fh, 12, "header"))
        if version != 1:
            raise ValueError(f"unsupported .t3b version {version}")
        count = height * width * NUM_CHANNELS
        data = np.frombuffer(_read_exact(fh, 4 * count, "payload"), dtype="<f4")
    return PolSARScene(data.astype(np.float64).reshape(height, width,
                                                       NUM_CHANNELS))


def write_labels(path, labelmap):
    with open(path, "wb") as fh:
        fh.write(LBL_MAGIC)
        fh.write(struct.pack("<IIII", 1, labelmap.height, labelmap.width,
                             labelmap.num_classes))
        fh.write(labelmap.labels.astype("<i4").tobytes())


def read_labels(path):
    with open(path, "rb") as fh:
        if _read_exact(fh, len(LBL_MAGIC), "magic") != LBL_MAGIC:
            raise ValueError("not a .lbl label file")
        version, height, width, num_classes = struct.unpack(
            "<IIII", _read_exact(fh, 16, "header"))
        if version != 1:
            raise ValueError(f"unsupported .lbl version {version}")
        labels = np.frombuffer(_read_exact(fh, 4 * height * width, "payload"),
                               dtype="<i4")
    return LabelMap(labels.reshape(height, width).astype(np.int32),
                    num_classes)


def write_patches(path, patches):
    patches = np.asarray(patches)
    count, channels, size, size2 = patches.shape
    if size != size2:
        raise ValueError("patches must be square")
    with open(path, "wb") as fh:
        fh.write(PDS_MAGIC)
        fh.write(struct.pack("<IIII", 1, count, channels, size))
        fh.write(patches.astype("<f4").tobytes())


def read_patches(path):
    with open(path, "rb") as fh:
        if _read_exact(fh, len(PDS_MAGIC), "magic") != PDS_MAGIC:
            raise ValueError("not a .pds patch container")
        version, count, channels, size = struct.unpack(
            "<IIII", _read_exact(fh, 16, "header"))
        if version != 1:
            raise ValueError(f"unsupported .pds version {version}")
        n = count * channels * size * size
        data = np.frombuffer(_read_exact(fh, 4 * n, "payload"), dtype="<f4")
    return data.astype(np.float64).reshape(count, channels, size, size)


def write_checkpoint(path, params):
    """Serialize a name -> array parameter dict; iteration order is sorted."""
    names = sorted(params)
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", 1, len(names)))
        for name in names:
            raw = name.encode("utf-8")
            arr = np.asarray(params[name])
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f4").tobytes())


def read_checkpoint(path):
    params = {}
    with open(path, "rb") as fh:
        if _read_exact(fh, len(CKPT_MAGIC), "magic") != CKPT_MAGIC:
            raise ValueError("not a .ckpt checkpoint")
        version, count = struct.unpack("<II", _read_exact(fh, 8, "header"))
        if version != 1:
            raise ValueError(f"unsupported .ckpt version {version}")
        for _ in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4, "name length"))
            name = _read_exact(fh, name_len, "name").decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(fh, 4, "rank"))
            dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, "dims"))
            n = int(np.prod(dims)) if rank else 1
            data = np.frombuffer(_read_exact(fh, 4 * n, name), dtype="<f4")
            params[name] = data.astype(np.float64).reshape(dims)
    return params


def write_label_png(path, labelmap):
    """8-bit RGB map using the fixed class palette."""
    from PIL import Image

    labels = labelmap.labels
    rgb = np.zeros(labels.shape + (3,), dtype=np.uint8)
    for cls in np.unique(labels):
        color = PALETTE[0] if cls == 0 else PALETTE[1 + (int(cls) - 1) % 16]
        rgb[labels == cls] = color
    Image.fromarray(rgb, mode="RGB").save(path, format="PNG")
