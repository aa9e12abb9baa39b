"""Binary little-endian PLY interchange in the standard 3DGS vertex layout.

Layout per vertex, all float32: x y z, nx ny nz, f_dc_0..2, f_rest_0..44,
opacity, scale_0..2, rot_0..3. The 45 f_rest properties are channel-major:
f_rest[c*15 + (k-1)] holds coefficient k (1..15) of color channel c. Normals
are vestigial: ignored on read, written as zeros.
"""

from __future__ import annotations

import numpy as np

from .model import GaussianModel, SH_COEFFS

PLY_PROPERTIES = (
    ["x", "y", "z", "nx", "ny", "nz"]
    + [f"f_dc_{i}" for i in range(3)]
    + [f"f_rest_{i}" for i in range(45)]
    + ["opacity"]
    + [f"scale_{i}" for i in range(3)]
    + [f"rot_{i}" for i in range(4)]
)


class PLYParseError(ValueError):
    pass


def _parse_header(raw: bytes, path) -> tuple[int, int]:
    """Returns (vertex_count, payload_offset); raises PLYParseError."""
    end_marker = b"end_header\n"
    end = raw.find(end_marker)
    if not raw.startswith(b"ply\n") or end < 0:
        raise PLYParseError(f"{path}: not a PLY file (missing ply/end_header)")
    lines = raw[:end].decode("ascii", errors="replace").splitlines()
    fmt = None
    count = None
    props: list[tuple[str, str]] = []
    in_vertex = False
    for line in lines[1:]:
        parts = line.split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            in_vertex = parts[1] == "vertex"
            if in_vertex:
                count = int(parts[2])
        elif parts[0] == "property" and in_vertex:
            props.append((parts[1], parts[2]))
    if fmt != "binary_little_endian":
        raise PLYParseError(f"{path}: format must be binary_little_endian, got {fmt!r}")
    if count is None:
        raise PLYParseError(f"{path}: no vertex element")
    for i, name in enumerate(PLY_PROPERTIES):
        if i >= len(props):
            raise PLYParseError(f"{path}: missing property '{name}'")
        got_type, got_name = props[i]
        if got_name != name:
            raise PLYParseError(f"{path}: expected property '{name}', found '{got_name}'")
        if got_type != "float":
            raise PLYParseError(f"{path}: property '{name}' has type '{got_type}', expected 'float'")
    if len(props) > len(PLY_PROPERTIES):
        raise PLYParseError(f"{path}: unexpected extra property '{props[len(PLY_PROPERTIES)][1]}'")
    return count, end + len(end_marker)


def load_ply(path) -> GaussianModel:
    with open(path, "rb") as fh:
        raw = fh.read()
    count, offset = _parse_header(raw, path)
    n_props = len(PLY_PROPERTIES)
    payload = raw[offset:]
    expected = count * n_props * 4
    if len(payload) < expected:
        raise PLYParseError(
            f"{path}: truncated payload, expected {expected} bytes, got {len(payload)}"
        )
    data = np.frombuffer(payload[:expected], dtype="<f4").reshape(count, n_props)
    data = data.astype(np.float64)

    sh = np.zeros((count, SH_COEFFS, 3))
    sh[:, 0, :] = data[:, 6:9]
    rest = data[:, 9:54].reshape(count, 3, 15)      # channel-major on disk
    sh[:, 1:, :] = rest.transpose(0, 2, 1)
    model = GaussianModel(
        positions=data[:, 0:3],
        sh_coeffs=sh,
        opacity_logit=data[:, 54],
        scale_log=data[:, 55:58],
        rotation=data[:, 58:62],
    )
    model.validate()
    return model


def save_ply(model: GaussianModel, path) -> None:
    n = model.n
    n_props = len(PLY_PROPERTIES)
    data = np.zeros((n, n_props), dtype="<f4")
    data[:, 0:3] = model.positions
    data[:, 6:9] = model.sh_coeffs[:, 0, :]
    data[:, 9:54] = model.sh_coeffs[:, 1:, :].transpose(0, 2, 1).reshape(n, 45)
    data[:, 54] = model.opacity_logit
    data[:, 55:58] = model.scale_log
    data[:, 58:62] = model.rotation

    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {name}" for name in PLY_PROPERTIES]
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(data.tobytes())
