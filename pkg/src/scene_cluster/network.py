"""Embedded convnet inference: a protobuf-wire-format network file and a
numpy executor for the three operators a VGG-style feature trunk needs
(Conv, Relu, MaxPool).

The file format is the open neural-network exchange layout, read and written
directly at the wire level so no external runtime or proto toolchain is
required.  Only the message fields this package uses are handled; everything
else is skipped on read.  Field numbers follow the published schema:

    Model:     ir_version=1, producer_name=2, graph=7, opset_import=8
    Graph:     node=1, name=2, initializer=5, input=11, output=12
    Node:      input=1, output=2, name=3, op_type=4, attribute=5
    Attribute: name=1, f=2, i=3, s=4, t=5, floats=7, ints=8, type=20
    Tensor:    dims=1, data_type=2, float_data=4, name=8, raw_data=9
    ValueInfo: name=1

All tensors are float32.  The executor works on (C, H, W) activations with
group-1, dilation-1 convolutions, which covers the VGG trunk.
"""

import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

FLOAT32_CODE = 1  # tensor data_type for IEEE float32

# attribute type enum values
_ATTR_FLOAT = 1
_ATTR_INT = 2
_ATTR_STRING = 3
_ATTR_TENSOR = 4
_ATTR_FLOATS = 6
_ATTR_INTS = 7


class NetworkFormatError(ValueError):
    """The network file is malformed or uses an unsupported feature."""


class UnsupportedOperatorError(RuntimeError):
    """The graph needs an operator the embedded executor does not provide."""


@dataclass
class NetworkNode:
    op_type: str
    name: str = ""
    inputs: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)
    attrs: dict = field(default_factory=dict)


@dataclass
class NetworkModel:
    nodes: list[NetworkNode]
    initializers: dict[str, np.ndarray]
    inputs: list[str]
    outputs: list[str]

    def conv_count(self) -> int:
        return sum(1 for n in self.nodes if n.op_type == "Conv")


# ---------------------------------------------------------------------------
# wire-level primitives


def _write_varint(n: int) -> bytes:
    if n < 0:
        raise NetworkFormatError("negative varint")
    out = bytearray()
    while True:
        b = n & 0x7F
        n >>= 7
        if n:
            out.append(b | 0x80)
        else:
            out.append(b)
            return bytes(out)


def _read_varint(buf, pos: int):
    result = 0
    shift = 0
    while True:
        if pos >= len(buf):
            raise NetworkFormatError("truncated varint")
        b = buf[pos]
        pos += 1
        result |= (b & 0x7F) << shift
        if not b & 0x80:
            return result, pos
        shift += 7
        if shift > 70:
            raise NetworkFormatError("varint too long")


def _tag(fieldno: int, wire: int) -> bytes:
    return _write_varint((fieldno << 3) | wire)


def _len_field(fieldno: int, payload: bytes) -> bytes:
    return _tag(fieldno, 2) + _write_varint(len(payload)) + payload


def _str_field(fieldno: int, text: str) -> bytes:
    return _len_field(fieldno, text.encode("utf-8"))


def _int_field(fieldno: int, value: int) -> bytes:
    return _tag(fieldno, 0) + _write_varint(value)


def _iter_fields(buf):
    """Yield (field_number, wire_type, value) triples from one message."""
    pos = 0
    n = len(buf)
    while pos < n:
        tag, pos = _read_varint(buf, pos)
        fieldno = tag >> 3
        wire = tag & 7
        if wire == 0:
            val, pos = _read_varint(buf, pos)
        elif wire == 2:
            ln, pos = _read_varint(buf, pos)
            if pos + ln > n:
                raise NetworkFormatError("truncated length-delimited field")
            val = buf[pos : pos + ln]
            pos += ln
        elif wire == 5:
            val = buf[pos : pos + 4]
            pos += 4
        elif wire == 1:
            val = buf[pos : pos + 8]
            pos += 8
        else:
            raise NetworkFormatError(f"unsupported wire type {wire}")
        yield fieldno, wire, val


def _packed_varints(buf) -> list[int]:
    out = []
    pos = 0
    while pos < len(buf):
        v, pos = _read_varint(buf, pos)
        out.append(v)
    return out


# ---------------------------------------------------------------------------
# reading


def _parse_tensor(buf) -> tuple[str, np.ndarray]:
    dims: list[int] = []
    dtype_code = None
    name = ""
    raw = None
    floats: list[float] = []
    for fieldno, wire, val in _iter_fields(buf):
        if fieldno == 1:
            if wire == 2:
                dims.extend(_packed_varints(val))
            else:
                dims.append(val)
        elif fieldno == 2:
            dtype_code = val
        elif fieldno == 4:
            if wire == 2:
                floats.extend(struct.unpack(f"<{len(val) // 4}f", bytes(val)))
            else:
                floats.append(struct.unpack("<f", bytes(val))[0])
        elif fieldno == 8:
            name = bytes(val).decode("utf-8")
        elif fieldno == 9:
            raw = bytes(val)
    if dtype_code != FLOAT32_CODE:
        raise NetworkFormatError(
            f"tensor {name!r}: data_type {dtype_code} (only float32 supported)"
        )
    shape = tuple(int(d) for d in dims)
    count = int(np.prod(shape)) if shape else 1
    if raw is not None:
        arr = np.frombuffer(raw, dtype="<f4")
    else:
        arr = np.asarray(floats, dtype=np.float32)
    if arr.size != count:
        raise NetworkFormatError(
            f"tensor {name!r}: payload has {arr.size} values, dims say {count}"
        )
    return name, arr.reshape(shape).astype(np.float32, copy=False)


def _parse_attribute(buf):
    name = ""
    atype = 0
    f_val = None
    i_val = None
    s_val = None
    t_val = None
    floats: list[float] = []
    ints: list[int] = []
    for fieldno, wire, val in _iter_fields(buf):
        if fieldno == 1:
            name = bytes(val).decode("utf-8")
        elif fieldno == 2:
            f_val = struct.unpack("<f", bytes(val))[0]
        elif fieldno == 3:
            i_val = int(val)
        elif fieldno == 4:
            s_val = bytes(val)
        elif fieldno == 5:
            t_val = _parse_tensor(val)[1]
        elif fieldno == 7:
            if wire == 2:
                floats.extend(struct.unpack(f"<{len(val) // 4}f", bytes(val)))
            else:
                floats.append(struct.unpack("<f", bytes(val))[0])
        elif fieldno == 8:
            if wire == 2:
                ints.extend(_packed_varints(val))
            else:
                ints.append(int(val))
        elif fieldno == 20:
            atype = int(val)
    if atype == _ATTR_FLOAT:
        return name, float(f_val)
    if atype == _ATTR_INT:
        return name, int(i_val)
    if atype == _ATTR_STRING:
        return name, s_val.decode("utf-8")
    if atype == _ATTR_TENSOR:
        return name, t_val
    if atype == _ATTR_FLOATS:
        return name, [float(x) for x in floats]
    if atype == _ATTR_INTS:
        return name, [int(x) for x in ints]
    # no type tag: infer from whichever field appeared
    for candidate in (ints or None, floats or None, i_val, f_val, s_val, t_val):
        if candidate is not None:
            return name, candidate
    return name, None


def _parse_node(buf) -> NetworkNode:
    node = NetworkNode(op_type="")
    for fieldno, _wire, val in _iter_fields(buf):
        if fieldno == 1:
            node.inputs.append(bytes(val).decode("utf-8"))
        elif fieldno == 2:
            node.outputs.append(bytes(val).decode("utf-8"))
        elif fieldno == 3:
            node.name = bytes(val).decode("utf-8")
        elif fieldno == 4:
            node.op_type = bytes(val).decode("utf-8")
        elif fieldno == 5:
            aname, aval = _parse_attribute(val)
            node.attrs[aname] = aval
    if not node.op_type:
        raise NetworkFormatError(f"node {node.name!r} has no op_type")
    return node


def _value_info_name(buf) -> str:
    for fieldno, _wire, val in _iter_fields(buf):
        if fieldno == 1:
            return bytes(val).decode("utf-8")
    return ""


def _parse_graph(buf) -> NetworkModel:
    nodes: list[NetworkNode] = []
    initializers: dict[str, np.ndarray] = {}
    inputs: list[str] = []
    outputs: list[str] = []
    for fieldno, _wire, val in _iter_fields(buf):
        if fieldno == 1:
            nodes.append(_parse_node(val))
        elif fieldno == 5:
            name, arr = _parse_tensor(val)
            initializers[name] = arr
        elif fieldno == 11:
            inputs.append(_value_info_name(val))
        elif fieldno == 12:
            outputs.append(_value_info_name(val))
    # older files list initializers among graph inputs; keep data inputs only
    inputs = [n for n in inputs if n and n not in initializers]
    return NetworkModel(
        nodes=nodes, initializers=initializers, inputs=inputs, outputs=outputs
    )


def load_network(path) -> NetworkModel:
    """Read a network file; raises :class:`NetworkFormatError` when invalid."""
    with open(path, "rb") as fh:
        buf = fh.read()
    graph_buf = None
    try:
        for fieldno, wire, val in _iter_fields(buf):
            if fieldno == 7 and wire == 2:
                graph_buf = val
    except NetworkFormatError:
        raise
    except Exception as exc:  # malformed container
        raise NetworkFormatError(f"cannot parse network file: {exc}") from exc
    if graph_buf is None:
        raise NetworkFormatError("file has no graph")
    model = _parse_graph(graph_buf)
    if not model.nodes:
        raise NetworkFormatError("graph has no nodes")
    if not model.inputs:
        raise NetworkFormatError("graph declares no data input")
    return model


# ---------------------------------------------------------------------------
# writing


def _encode_tensor(name: str, arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    out = bytearray()
    for d in arr.shape:
        out += _int_field(1, int(d))
    out += _int_field(2, FLOAT32_CODE)
    out += _str_field(8, name)
    out += _len_field(9, arr.tobytes())
    return bytes(out)


def _encode_attr_ints(name: str, values) -> bytes:
    payload = b"".join(_write_varint(int(v)) for v in values)
    out = _str_field(1, name) + _len_field(8, payload) + _int_field(20, _ATTR_INTS)
    return out


def _encode_attr_int(name: str, value: int) -> bytes:
    return _str_field(1, name) + _int_field(3, int(value)) + _int_field(20, _ATTR_INT)


def _encode_node(node: NetworkNode) -> bytes:
    out = bytearray()
    for s in node.inputs:
        out += _str_field(1, s)
    for s in node.outputs:
        out += _str_field(2, s)
    if node.name:
        out += _str_field(3, node.name)
    out += _str_field(4, node.op_type)
    for aname, aval in node.attrs.items():
        if isinstance(aval, (list, tuple)):
            out += _len_field(5, _encode_attr_ints(aname, aval))
        elif isinstance(aval, int):
            out += _len_field(5, _encode_attr_int(aname, aval))
        else:
            raise NetworkFormatError(f"cannot encode attribute {aname!r}")
    return bytes(out)


def _encode_value_info(name: str, dims=None) -> bytes:
    out = bytearray(_str_field(1, name))
    if dims is not None:
        shape = b"".join(
            _len_field(1, _int_field(1, int(d)))  # TensorShape.dim.dim_value
            for d in dims
        )
        tensor_type = _int_field(1, FLOAT32_CODE) + _len_field(2, shape)
        out += _len_field(2, _len_field(1, tensor_type))  # type.tensor_type
    return bytes(out)


def write_network(
    path,
    nodes: list[NetworkNode],
    initializers: dict[str, np.ndarray],
    input_name: str,
    output_name: str,
    input_dims=None,
) -> None:
    """Serialize a chain graph to the exchange wire format."""
    graph = bytearray()
    for node in nodes:
        graph += _len_field(1, _encode_node(node))
    graph += _str_field(2, "scene-cluster-net")
    for name, arr in initializers.items():
        graph += _len_field(5, _encode_tensor(name, arr))
    graph += _len_field(11, _encode_value_info(input_name, input_dims))
    graph += _len_field(12, _encode_value_info(output_name))
    model = bytearray()
    model += _int_field(1, 8)  # ir_version
    model += _str_field(2, "scene-cluster")
    model += _len_field(7, bytes(graph))
    model += _len_field(8, _str_field(1, "") + _int_field(2, 13))  # opset 13
    with open(path, "wb") as fh:
        fh.write(bytes(model))


# VGG16 trunk: (channels, convs) per block, 3x3 pad-1 convs, 2x2/2 pools.
VGG16_BLOCKS = ((64, 2), (128, 2), (256, 3), (512, 3), (512, 3))


def build_convnet(
    blocks=VGG16_BLOCKS, in_channels: int = 3, seed: int = 0
) -> tuple[list[NetworkNode], dict[str, np.ndarray]]:
    """Build a VGG-style trunk with seeded weights.

    Weights are He-scaled normals, biases small uniforms, both drawn from a
    single seeded generator so the same seed always yields the same network.
    """
    rng = np.random.default_rng(seed)
    nodes: list[NetworkNode] = []
    inits: dict[str, np.ndarray] = {}
    prev = "input"
    c_in = in_channels
    conv_i = 0
    for b, (width, reps) in enumerate(blocks):
        for _ in range(reps):
            conv_i += 1
            wname = f"conv{conv_i}_W"
            bname = f"conv{conv_i}_B"
            std = float(np.sqrt(2.0 / (c_in * 9)))
            inits[wname] = rng.normal(0.0, std, (width, c_in, 3, 3)).astype(np.float32)
            inits[bname] = rng.uniform(-0.05, 0.05, width).astype(np.float32)
            cout = f"conv{conv_i}_out"
            nodes.append(
                NetworkNode(
                    op_type="Conv",
                    name=f"conv{conv_i}",
                    inputs=[prev, wname, bname],
                    outputs=[cout],
                    attrs={
                        "kernel_shape": [3, 3],
                        "pads": [1, 1, 1, 1],
                        "strides": [1, 1],
                        "dilations": [1, 1],
                        "group": 1,
                    },
                )
            )
            rout = f"relu{conv_i}_out"
            nodes.append(
                NetworkNode(
                    op_type="Relu",
                    name=f"relu{conv_i}",
                    inputs=[cout],
                    outputs=[rout],
                )
            )
            prev = rout
            c_in = width
        pout = f"pool{b + 1}_out"
        nodes.append(
            NetworkNode(
                op_type="MaxPool",
                name=f"pool{b + 1}",
                inputs=[prev],
                outputs=[pout],
                attrs={"kernel_shape": [2, 2], "strides": [2, 2], "pads": [0, 0, 0, 0]},
            )
        )
        prev = pout
    return nodes, inits


def write_vgg16_network(path, seed: int = 0, blocks=VGG16_BLOCKS) -> None:
    """Write a seeded VGG16-shaped trunk as a network file."""
    nodes, inits = build_convnet(blocks=blocks, seed=seed)
    write_network(
        path,
        nodes,
        inits,
        input_name="input",
        output_name=nodes[-1].outputs[0],
        input_dims=(1, 3, 224, 224),
    )


# ---------------------------------------------------------------------------
# execution


def _attr_pair(node, key, default):
    v = node.attrs.get(key, default)
    if len(v) != 2:
        raise UnsupportedOperatorError(f"{node.op_type} {node.name!r}: bad {key} {v}")
    return int(v[0]), int(v[1])


def _op_conv(node: NetworkNode, tensors: dict) -> None:
    x = tensors[node.inputs[0]]
    w = tensors[node.inputs[1]]
    b = tensors[node.inputs[2]] if len(node.inputs) > 2 else None
    if node.attrs.get("group", 1) != 1:
        raise UnsupportedOperatorError("grouped convolution not supported")
    dil = node.attrs.get("dilations", [1, 1])
    if any(int(d) != 1 for d in dil):
        raise UnsupportedOperatorError("dilated convolution not supported")
    sh, sw = _attr_pair(node, "strides", [1, 1])
    pads = [int(p) for p in node.attrs.get("pads", [0, 0, 0, 0])]
    if len(pads) != 4:
        raise UnsupportedOperatorError(f"bad pads {pads}")
    pt, pl, pb, pr = pads
    c, h, wdt = x.shape
    k, cw, kh, kw = w.shape
    if cw != c:
        raise UnsupportedOperatorError(
            f"conv {node.name!r}: input has {c} channels, weight expects {cw}"
        )
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr)))
    ho = (xp.shape[1] - kh) // sh + 1
    wo = (xp.shape[2] - kw) // sw + 1
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::sh, ::sw]
    cols = np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(
        c * kh * kw, ho * wo
    )
    out = (w.reshape(k, -1) @ cols).reshape(k, ho, wo)
    if b is not None:
        out = out + b[:, None, None]
    tensors[node.outputs[0]] = out.astype(np.float32, copy=False)


def _op_relu(node: NetworkNode, tensors: dict) -> None:
    x = tensors[node.inputs[0]]
    tensors[node.outputs[0]] = np.maximum(x, np.float32(0.0))


def _op_maxpool(node: NetworkNode, tensors: dict) -> None:
    x = tensors[node.inputs[0]]
    kh, kw = _attr_pair(node, "kernel_shape", None)
    sh, sw = _attr_pair(node, "strides", [kh, kw])
    pads = [int(p) for p in node.attrs.get("pads", [0, 0, 0, 0])]
    pt, pl, pb, pr = pads
    if any(pads):
        x = np.pad(x, ((0, 0), (pt, pb), (pl, pr)), constant_values=-np.inf)
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::sh, ::sw]
    tensors[node.outputs[0]] = np.ascontiguousarray(
        win.max(axis=(3, 4)), dtype=np.float32
    )


_OPS = {"Conv": _op_conv, "Relu": _op_relu, "MaxPool": _op_maxpool}


def run_convnet(model: NetworkModel, x: np.ndarray, upto_conv: int) -> np.ndarray:
    """Execute the trunk and return the activation map of one conv layer.

    ``upto_conv`` counts Conv nodes from 1 in graph order; the returned map
    is that conv's output after its adjacent Relu (the activation), or the
    raw conv output when no Relu follows.  Nodes past that point are never
    executed, so classifier heads with unsupported ops do not matter.
    """
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 3:
        raise ValueError("input must be (C, H, W)")
    conv_positions = [i for i, n in enumerate(model.nodes) if n.op_type == "Conv"]
    if not 1 <= upto_conv <= len(conv_positions):
        raise ValueError(
            f"layer {upto_conv} out of range; network has"
            f" {len(conv_positions)} conv layers"
        )
    end = conv_positions[upto_conv - 1]
    target = model.nodes[end].outputs[0]
    nxt = end + 1
    if (
        nxt < len(model.nodes)
        and model.nodes[nxt].op_type == "Relu"
        and model.nodes[nxt].inputs
        and model.nodes[nxt].inputs[0] == target
    ):
        end = nxt
        target = model.nodes[nxt].outputs[0]
    tensors = dict(model.initializers)
    tensors[model.inputs[0]] = x
    for node in model.nodes[: end + 1]:
        fn = _OPS.get(node.op_type)
        if fn is None:
            raise UnsupportedOperatorError(
                f"operator {node.op_type!r} (node {node.name!r}) not supported"
            )
        missing = [t for t in node.inputs if t not in tensors]
        if missing:
            raise NetworkFormatError(
                f"node {node.name!r} consumes unknown tensor(s): {missing}"
            )
        fn(node, tensors)
    return tensors[target]
