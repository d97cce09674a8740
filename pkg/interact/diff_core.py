"""
InteRACT 意圖預測系統 - 可微分計算核心
numpy 張量上的反向模式自動微分、神經網路基本區塊 (linear / layer norm / 多頭注意力 /
前饋 / 編碼器與解碼器層) 以及有限差分梯度檢查
"""
import math
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import GradCheckError, ShapeError

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, 'grad_enabled', True)


def _debug_finite() -> bool:
    return getattr(_state, 'debug_finite', False)


@contextmanager
def no_grad():
    """推論模式：不記錄計算圖 (每個執行緒各自獨立)"""
    previous = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


@contextmanager
def debug_finite(enabled: bool = True):
    previous = _debug_finite()
    _state.debug_finite = enabled
    try:
        yield
    finally:
        _state.debug_finite = previous


class Tensor:
    __slots__ = ('data', 'grad', 'requires_grad', '_parents', '_backward', 'op')

    def __init__(self, data, requires_grad: bool = False, _parents: Tuple['Tensor', ...] = (),
                 _backward: Optional[Callable] = None, op: str = ''):
        array = np.asarray(data)
        if not np.issubdtype(array.dtype, np.floating):
            array = array.astype(np.float64)
        self.data = array
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def backward(self, grad: Optional[np.ndarray] = None):
        ComputationTape(self).backward(grad)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op='{self.op}')"

    # 運算子
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __pow__(self, exponent): return power(self, exponent)
    def __matmul__(self, other): return matmul(self, other)
    def __getitem__(self, index): return getitem(self, index)

    def sum(self, axis=None, keepdims=False): return tsum(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return mean(self, axis, keepdims)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 else shape)
    def transpose(self, *axes): return transpose(self, axes if axes else None)
    def relu(self): return relu(self)
    def sqrt(self): return sqrt(self)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    array = np.asarray(x, dtype=dtype) if dtype is not None else np.asarray(x)
    return Tensor(array)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    if _debug_finite() and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite output from op '{op}'")
    if _grad_enabled() and any(p.requires_grad for p in parents):
        return Tensor(data, True, tuple(parents), backward, op)
    return Tensor(data, op=op)


class ComputationTape:
    """由根節點展開的拓撲順序；反向時每個運算恰好走訪一次，梯度累加到葉節點"""

    def __init__(self, root: Tensor):
        self.root = root
        self.nodes: List[Tensor] = []
        visited = set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                self.nodes.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, grad: Optional[np.ndarray] = None):
        root = self.root
        if not root.requires_grad:
            return
        seed = np.ones_like(root.data) if grad is None else np.asarray(grad, dtype=root.dtype)
        grads: Dict[int, np.ndarray] = {id(root): seed}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _pair(a, b) -> Tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return a, b


# ---------------------------------------------------------------------------
# 基本運算
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), 'add')


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), 'sub')


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _result(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), 'mul')


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data

    def backward(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * out / b.data, b.shape))
    return _result(out, (a, b), backward, 'div')


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,), 'neg')


def power(a: Tensor, exponent: float) -> Tensor:
    if isinstance(exponent, Tensor):
        raise TypeError("power only supports constant exponents")
    return _result(a.data ** exponent, (a,),
                   lambda g: (g * exponent * a.data ** (exponent - 1),), 'pow')


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _result(out, (a,), lambda g: (g * 0.5 / out,), 'sqrt')


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,), 'relu')


def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >= 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def backward(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb
    return _result(np.matmul(a.data, b.data), (a, b), backward, 'matmul')


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)
    return _result(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), backward, 'sum')


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[i] for i in axes]))
    return tsum(a, axis, keepdims) * (1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), 'reshape')


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return _result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),), 'transpose')


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))
    return _result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward, 'concat')


def getitem(a: Tensor, index) -> Tensor:
    def backward(g):
        grad = np.zeros_like(a.data)
        np.add.at(grad, index, g)
        return (grad,)
    return _result(np.asarray(a.data[index]), (a,), backward, 'getitem')


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)
    return _result(out, (a,), backward, 'softmax')


# ---------------------------------------------------------------------------
# 參數與區塊
# ---------------------------------------------------------------------------

class ParameterStore:
    """具名參數；迭代順序等於註冊順序"""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._params: Dict[str, Tensor] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"parameter '{name}' registered twice")
        tensor = Tensor(np.asarray(value, dtype=self.dtype), requires_grad=True, op=name)
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> List[str]:
        return list(self._params)

    def num_parameters(self) -> int:
        return int(sum(t.data.size for t in self._params.values()))

    def zero_grad(self):
        for tensor in self._params.values():
            tensor.grad = None

    def cast(self, dtype):
        """就地轉換精度；區塊持有的 Tensor 參考不變"""
        self.dtype = np.dtype(dtype)
        for tensor in self._params.values():
            tensor.data = tensor.data.astype(self.dtype)
            tensor.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        missing = [name for name in self._params if name not in state]
        if missing:
            raise ShapeError(f"state is missing parameter '{missing[0]}'")
        for name, tensor in self._params.items():
            value = np.asarray(state[name])
            if value.shape != tensor.shape:
                raise ShapeError(f"parameter '{name}' has shape {value.shape}, expected {tensor.shape}")
            tensor.data = value.astype(self.dtype)


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def linear(x, W: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """y = xW + b，x 可以有任意前導維度"""
    x = as_tensor(x, W.dtype)
    if x.shape[-1] != W.shape[0]:
        raise ShapeError(f"linear shape mismatch: input {x.shape} vs weight {W.shape}")
    if b is not None and b.shape != (W.shape[1],):
        raise ShapeError(f"linear bias shape {b.shape} does not match weight {W.shape}")
    lead = x.shape[:-1]
    y = matmul(reshape(x, (-1, W.shape[0])), W)
    if b is not None:
        y = y + b
    return reshape(y, lead + (W.shape[1],))


class Linear:
    def __init__(self, store: ParameterStore, name: str, in_dim: int, out_dim: int,
                 rng: np.random.Generator, bias: bool = True):
        self.in_dim, self.out_dim = in_dim, out_dim
        self.weight = store.add(f"{name}.weight", _uniform(rng, in_dim, (in_dim, out_dim)))
        self.bias = store.add(f"{name}.bias", _uniform(rng, in_dim, (out_dim,))) if bias else None

    def __call__(self, x) -> Tensor:
        return linear(x, self.weight, self.bias)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    mu = mean(x, axis=-1, keepdims=True)
    centered = x - mu
    var = mean(centered * centered, axis=-1, keepdims=True)
    return centered / sqrt(var + eps) * gain + bias


class LayerNorm:
    def __init__(self, store: ParameterStore, name: str, dim: int):
        self.gain = store.add(f"{name}.gain", np.ones(dim))
        self.bias = store.add(f"{name}.bias", np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, length, dim = x.shape
    x = reshape(x, tuple(lead) + (length, heads, dim // heads))
    axes = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
    return transpose(x, axes)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, heads, length, head_dim = x.shape
    axes = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
    return reshape(transpose(x, axes), tuple(lead) + (length, heads * head_dim))


def attention(q: Tensor, k: Tensor, v: Tensor, heads: int) -> Tensor:
    """已投影的 Q/K/V 上做縮放點積多頭注意力；每個注意力列加總為 1"""
    dim = q.shape[-1]
    if dim % heads != 0:
        raise ShapeError(f"embedding dim {dim} is not divisible by {heads} heads")
    if k.shape[-1] != dim or v.shape[-1] != dim or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention shape mismatch: q {q.shape}, k {k.shape}, v {v.shape}")
    qh, kh, vh = (_split_heads(t, heads) for t in (q, k, v))
    scores = matmul(qh, transpose(kh, tuple(range(kh.ndim - 2)) + (kh.ndim - 1, kh.ndim - 2)))
    weights = softmax(scores * (1.0 / math.sqrt(dim // heads)), axis=-1)
    return _merge_heads(matmul(weights, vh))


class MultiHeadAttention:
    """鍵投影不含偏置：softmax 對每列加常數不變，偏置的梯度恆為 0"""

    def __init__(self, store: ParameterStore, name: str, dim: int, heads: int, rng: np.random.Generator):
        if dim % heads != 0:
            raise ShapeError(f"embedding dim {dim} is not divisible by {heads} heads")
        self.heads = heads
        self.q = Linear(store, f"{name}.q", dim, dim, rng)
        self.k = Linear(store, f"{name}.k", dim, dim, rng, bias=False)
        self.v = Linear(store, f"{name}.v", dim, dim, rng)
        self.out = Linear(store, f"{name}.out", dim, dim, rng)

    def __call__(self, query: Tensor, memory: Tensor) -> Tensor:
        return self.out(attention(self.q(query), self.k(memory), self.v(memory), self.heads))


def multi_head_attention(Q: Tensor, K: Tensor, V: Tensor, heads: int,
                         out_weight: Optional[Tensor] = None, out_bias: Optional[Tensor] = None) -> Tensor:
    """softmax(Q_h K_hᵀ/√(D/heads)) V_h，各頭串接後做輸出投影"""
    merged = attention(Q, K, V, heads)
    if out_weight is None:
        return merged
    return linear(merged, out_weight, out_bias)


class FeedForward:
    def __init__(self, store: ParameterStore, name: str, dim: int, ratio: int, rng: np.random.Generator):
        self.up = Linear(store, f"{name}.up", dim, ratio * dim, rng)
        self.down = Linear(store, f"{name}.down", ratio * dim, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.down(relu(self.up(x)))


class EncoderLayer:
    """pre-norm 殘差：x + MHA(LN(x))，再 x + FFN(LN(x))"""

    def __init__(self, store: ParameterStore, name: str, dim: int, heads: int, ffn_ratio: int,
                 rng: np.random.Generator):
        self.dim = dim
        self.norm_attn = LayerNorm(store, f"{name}.norm_attn", dim)
        self.attn = MultiHeadAttention(store, f"{name}.attn", dim, heads, rng)
        self.norm_ffn = LayerNorm(store, f"{name}.norm_ffn", dim)
        self.ffn = FeedForward(store, f"{name}.ffn", dim, ffn_ratio, rng)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.dim:
            raise ShapeError(f"encoder layer expects dim {self.dim}, got {x.shape[-1]}")
        h = self.norm_attn(x)
        x = x + self.attn(h, h)
        return x + self.ffn(self.norm_ffn(x))


class DecoderLayer:
    def __init__(self, store: ParameterStore, name: str, dim: int, heads: int, ffn_ratio: int,
                 rng: np.random.Generator):
        self.dim = dim
        self.norm_self = LayerNorm(store, f"{name}.norm_self", dim)
        self.self_attn = MultiHeadAttention(store, f"{name}.self_attn", dim, heads, rng)
        self.norm_cross = LayerNorm(store, f"{name}.norm_cross", dim)
        self.cross_attn = MultiHeadAttention(store, f"{name}.cross_attn", dim, heads, rng)
        self.norm_ffn = LayerNorm(store, f"{name}.norm_ffn", dim)
        self.ffn = FeedForward(store, f"{name}.ffn", dim, ffn_ratio, rng)

    def __call__(self, query: Tensor, memory: Tensor) -> Tensor:
        if query.shape[-1] != self.dim or memory.shape[-1] != self.dim:
            raise ShapeError(
                f"decoder layer expects dim {self.dim}, got query {query.shape} and memory {memory.shape}"
            )
        h = self.norm_self(query)
        x = query + self.self_attn(h, h)
        x = x + self.cross_attn(self.norm_cross(x), memory)
        return x + self.ffn(self.norm_ffn(x))


def encoder_layer(layer: EncoderLayer, x: Tensor) -> Tensor:
    return layer(x)


def decoder_layer(layer: DecoderLayer, query: Tensor, memory: Tensor) -> Tensor:
    return layer(query, memory)


def sinusoidal_positions(length: int, dim: int, start: int = 0) -> np.ndarray:
    position = np.arange(start, start + length, dtype=np.float64)[:, None]
    rate = np.exp(-math.log(10000.0) * (np.arange(0, dim, 2) / dim))
    table = np.zeros((length, dim))
    table[:, 0::2] = np.sin(position * rate)
    table[:, 1::2] = np.cos(position * rate[: dim // 2])
    return table


# ---------------------------------------------------------------------------
# 梯度檢查
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    op_name: str
    max_rel_error: float
    worst_index: Tuple[int, Tuple[int, ...]]
    checked: int = 0

    def passed(self, tolerance: float = 1e-4) -> bool:
        return self.max_rel_error <= tolerance


def grad_check(fn: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-5,
               op_name: str = 'fn', max_coords: Optional[int] = None, seed: int = 0) -> GradCheckReport:
    """中央差分對照反向傳播；fn 的輸出會先加總成純量

    max_coords 限制每個輸入抽查的座標數 (以 seed 固定抽樣)。
    """
    for tensor in inputs:
        if tensor.dtype != np.float64:
            raise GradCheckError(f"grad_check needs float64 inputs, got {tensor.dtype}")
        tensor.grad = None

    def scalar() -> Tensor:
        out = fn()
        return out if out.data.size == 1 and out.ndim == 0 else tsum(out)

    scalar().backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]
    rng = np.random.default_rng(seed)
    worst, worst_index, checked = 0.0, (0, ()), 0
    with no_grad():
        for i, tensor in enumerate(inputs):
            coords = list(np.ndindex(tensor.shape))
            if max_coords is not None and len(coords) > max_coords:
                picks = rng.choice(len(coords), size=max_coords, replace=False)
                coords = [coords[j] for j in sorted(picks)]
            for idx in coords:
                original = tensor.data[idx]
                tensor.data[idx] = original + h
                plus = scalar().item()
                tensor.data[idx] = original - h
                minus = scalar().item()
                tensor.data[idx] = original
                numeric = (plus - minus) / (2.0 * h)
                a = float(analytic[i][idx])
                if not (math.isfinite(a) and math.isfinite(numeric)):
                    raise GradCheckError(f"{op_name}: non-finite gradient at input {i} index {idx}")
                rel = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
                checked += 1
                if rel > worst:
                    worst, worst_index = rel, (i, tuple(int(j) for j in idx))
    return GradCheckReport(op_name, worst, worst_index, checked)
