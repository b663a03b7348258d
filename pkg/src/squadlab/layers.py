"""Task-specific layer library: highway, BiLSTM, GRU, attention variants,
char-CNN, and the combined embedding block.

Every layer is a plain parameter container with a pure ``forward``;
parameters are exposed through ``parameters()`` as a flat name -> Tensor
map so checkpoints use hierarchical names (e.g. ``highway.0.W_proj``).
"""

from __future__ import annotations

import numpy as np

from .autograd import (MASK_FILL, Rng, Tensor, concat, init_uniform, masked_fill,
                       matmul, softmax)


class Highway:
    """Gated residual: y = g * relu(x W_proj + b_proj) + (1 - g) * x."""

    def __init__(self, d: int, rng: Rng):
        self.d = d
        self.W_proj = init_uniform(rng, (d, d), d)
        self.b_proj = init_uniform(rng, (d,), d)
        self.W_gate = init_uniform(rng, (d, d), d)
        self.b_gate = init_uniform(rng, (d,), d)

    def parameters(self):
        return {"W_proj": self.W_proj, "b_proj": self.b_proj,
                "W_gate": self.W_gate, "b_gate": self.b_gate}

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d:
            raise ValueError(f"highway width {self.d}, input width {x.shape[-1]}")
        g = (matmul(x, self.W_gate) + self.b_gate).sigmoid()
        t = (matmul(x, self.W_proj) + self.b_proj).relu()
        return g * t + (g * -1.0 + 1.0) * x


class LSTMCell:
    """Standard LSTM gates; fused weight layout [input | forget | output | cand]."""

    def __init__(self, d_in: int, hidden: int, rng: Rng):
        self.d_in = d_in
        self.hidden = hidden
        self.W = init_uniform(rng, (d_in, 4 * hidden), d_in)
        self.U = init_uniform(rng, (hidden, 4 * hidden), hidden)
        self.b = init_uniform(rng, (4 * hidden,), hidden)

    def parameters(self):
        return {"W": self.W, "U": self.U, "b": self.b}


def lstm_forward(cell: LSTMCell, x: Tensor, reverse: bool = False) -> Tensor:
    """Run one direction over [seq, d_in]; zero initial h and c."""
    seq = x.shape[0]
    if x.shape[1] != cell.d_in:
        raise ValueError(f"lstm input width {x.shape[1]}, cell expects {cell.d_in}")
    h = cell.hidden
    xw = matmul(x, cell.W) + cell.b  # [seq, 4h]
    h_t = Tensor(np.zeros((1, h)))
    c_t = Tensor(np.zeros((1, h)))
    outputs = [None] * seq
    order = range(seq - 1, -1, -1) if reverse else range(seq)
    for t in order:
        gates = xw[t : t + 1] + matmul(h_t, cell.U)  # [1, 4h]
        i_g = gates[:, 0 * h : 1 * h].sigmoid()
        f_g = gates[:, 1 * h : 2 * h].sigmoid()
        o_g = gates[:, 2 * h : 3 * h].sigmoid()
        cand = gates[:, 3 * h : 4 * h].tanh()
        c_t = f_g * c_t + i_g * cand
        h_t = o_g * c_t.tanh()
        outputs[t] = h_t
    return concat(outputs, axis=0)


def bilstm_forward(fwd: LSTMCell, bwd: LSTMCell, x: Tensor) -> Tensor:
    """Concat of an independent forward and backward pass: [seq, 2h]."""
    return concat([lstm_forward(fwd, x, reverse=False),
                   lstm_forward(bwd, x, reverse=True)], axis=1)


class GRUCell:
    """Convention: h_t = (1 - u) * h_{t-1} + u * tanh(W x + U (r * h_{t-1}) + b)."""

    def __init__(self, d_in: int, hidden: int, rng: Rng):
        self.d_in = d_in
        self.hidden = hidden
        self.W_ur = init_uniform(rng, (d_in, 2 * hidden), d_in)
        self.U_ur = init_uniform(rng, (hidden, 2 * hidden), hidden)
        self.b_ur = init_uniform(rng, (2 * hidden,), hidden)
        self.W_c = init_uniform(rng, (d_in, hidden), d_in)
        self.U_c = init_uniform(rng, (hidden, hidden), hidden)
        self.b_c = init_uniform(rng, (hidden,), hidden)

    def parameters(self):
        return {"W_ur": self.W_ur, "U_ur": self.U_ur, "b_ur": self.b_ur,
                "W_c": self.W_c, "U_c": self.U_c, "b_c": self.b_c}


def gru_forward(cell: GRUCell, x: Tensor, reverse: bool = False) -> Tensor:
    seq = x.shape[0]
    if x.shape[1] != cell.d_in:
        raise ValueError(f"gru input width {x.shape[1]}, cell expects {cell.d_in}")
    h = cell.hidden
    x_ur = matmul(x, cell.W_ur) + cell.b_ur
    x_c = matmul(x, cell.W_c) + cell.b_c
    h_t = Tensor(np.zeros((1, h)))
    outputs = [None] * seq
    order = range(seq - 1, -1, -1) if reverse else range(seq)
    for t in order:
        ur = x_ur[t : t + 1] + matmul(h_t, cell.U_ur)
        u_g = ur[:, :h].sigmoid()
        r_g = ur[:, h:].sigmoid()
        cand = (x_c[t : t + 1] + matmul(r_g * h_t, cell.U_c)).tanh()
        h_t = (u_g * -1.0 + 1.0) * h_t + u_g * cand
        outputs[t] = h_t
    return concat(outputs, axis=0)


def bigru_forward(fwd: GRUCell, bwd: GRUCell, x: Tensor) -> Tensor:
    return concat([gru_forward(fwd, x, reverse=False),
                   gru_forward(bwd, x, reverse=True)], axis=1)


def dot_product_attention(x: Tensor, attend_mask=None,
                          causal: bool = False) -> Tensor:
    """Scaled dot-product self-attention; queries=keys=values=x.

    ``attend_mask`` marks positions that may be attended to (True = live).
    With ``causal``, position i only sees positions <= i.
    """
    seq, d = x.shape
    if seq == 0:
        raise ValueError("attention over an empty sequence")
    scores = matmul(x, x.transpose()) * (1.0 / np.sqrt(d))
    blocked = np.zeros((seq, seq), dtype=bool)
    if attend_mask is not None:
        blocked |= ~np.asarray(attend_mask, dtype=bool)[None, :]
    if causal:
        blocked |= np.triu(np.ones((seq, seq), dtype=bool), k=1)
    if blocked.any():
        scores = masked_fill(scores, blocked, MASK_FILL)
    return matmul(softmax(scores, axis=1), x)


class WeightedAvgAttention:
    """Softmax-pooled context vector added back to every row."""

    def __init__(self, d: int, rng: Rng):
        self.d = d
        self.W = init_uniform(rng, (d, 1), d)

    def parameters(self):
        return {"W": self.W}

    def forward(self, E: Tensor) -> Tensor:
        if E.shape[1] != self.d:
            raise ValueError(f"attention width {self.d}, input width {E.shape[1]}")
        a = softmax(matmul(E, self.W), axis=0)  # [seq, 1]
        c = matmul(a.transpose(), E)  # [1, d]
        return E + c


class CharCNN:
    """Width-k convolution over a token's character vectors, relu, max-pool."""

    def __init__(self, d_char: int, d_out: int, rng: Rng, kernel_width: int = 3):
        self.d_char = d_char
        self.d_out = d_out
        self.kernel_width = kernel_width
        self.K = init_uniform(rng, (kernel_width * d_char, d_out),
                              kernel_width * d_char)
        self.b = init_uniform(rng, (d_out,), d_char)

    def parameters(self):
        return {"K": self.K, "b": self.b}

    def windows(self, token: str, table) -> np.ndarray:
        """Constant [n_windows, k * d_char] matrix for one token's characters."""
        if len(token) == 0:
            raise ValueError("token with zero characters")
        chars = [table.vector(c) for c in token]
        while len(chars) < self.kernel_width:
            chars.append(np.zeros(self.d_char))
        mat = np.asarray(chars)
        k = self.kernel_width
        return np.asarray([
            mat[i : i + k].ravel() for i in range(len(chars) - k + 1)
        ])

    def forward(self, windows: np.ndarray) -> Tensor:
        h = (matmul(Tensor(windows), self.K) + self.b).relu()
        return h.max(axis=0)  # [d_out]


class EmbeddingCombiner:
    """Token branch + char branch, concatenated, refined by 2 highway layers.

    Token branch: weighted-average attention over the provider embedding.
    Char branch: per-token char-CNN pool, then weighted-average attention
    over the pooled sequence.  A zero-width char config degenerates to the
    token branch alone.
    """

    def __init__(self, d_model: int, d_char: int, d_char_out: int, rng: Rng,
                 char_table=None):
        self.d_model = d_model
        self.d_char_out = d_char_out
        self.char_table = char_table
        self.wavg_tok = WeightedAvgAttention(d_model, rng.spawn(1))
        if d_char_out > 0:
            self.char_cnn = CharCNN(d_char, d_char_out, rng.spawn(2))
            self.wavg_char = WeightedAvgAttention(d_char_out, rng.spawn(3))
        else:
            self.char_cnn = None
            self.wavg_char = None
        d_comb = d_model + d_char_out
        self.d_comb = d_comb
        self.highway = [Highway(d_comb, rng.spawn(4)),
                        Highway(d_comb, rng.spawn(5))]
        self._window_cache = {}

    def parameters(self):
        params = {}
        for n, p in self.wavg_tok.parameters().items():
            params[f"wavg_tok.{n}"] = p
        if self.char_cnn is not None:
            for n, p in self.char_cnn.parameters().items():
                params[f"char_cnn.{n}"] = p
            for n, p in self.wavg_char.parameters().items():
                params[f"wavg_char.{n}"] = p
        for i, hw in enumerate(self.highway):
            for n, p in hw.parameters().items():
                params[f"highway.{i}.{n}"] = p
        return params

    def _token_windows(self, token: str) -> np.ndarray:
        w = self._window_cache.get(token)
        if w is None:
            w = self.char_cnn.windows(token, self.char_table)
            self._window_cache[token] = w
        return w

    def forward(self, token_embedding: Tensor, tokens) -> Tensor:
        branch = self.wavg_tok.forward(token_embedding)
        if self.char_cnn is not None:
            pooled = concat([
                self.char_cnn.forward(self._token_windows(t)).reshape(1, -1)
                for t in tokens
            ], axis=0)  # [seq, d_char_out]
            char_branch = self.wavg_char.forward(pooled)
            branch = concat([branch, char_branch], axis=1)
        for hw in self.highway:
            branch = hw.forward(branch)
        return branch


def dropout(x: Tensor, rate: float, rng: Rng) -> Tensor:
    """Inverted dropout; identity when rate is 0."""
    if rate <= 0.0:
        return x
    keep = (rng.uniform(0.0, 1.0, x.shape) >= rate) / (1.0 - rate)
    return x * Tensor(keep)
