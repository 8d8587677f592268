"""One-hidden-layer MLP, single-layer LSTM and a linear baseline.

All models regress a single z-scored target and expose ``forward(X)`` and
``gradient(X, y)`` for the mean-squared loss ``J = mean((y - yhat)**2)``.
Parameters live in an ordered ``params`` dict so optimisers and the
serialiser can treat every family alike.
"""

from __future__ import annotations

import json

import numpy as np

from ..errors import InputError


def glorot(rng, fan_in, fan_out, shape):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class _Model:
    family = ""
    param_names: tuple = ()

    def __init__(self, **params):
        self.params = {k: np.asarray(params[k], dtype=np.float64) for k in self.param_names}

    def __getattr__(self, name):
        params = self.__dict__.get("params", {})
        if name in params:
            return params[name]
        raise AttributeError(name)

    def copy(self):
        return type(self)(**{k: v.copy() for k, v in self.params.items()})

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.params.values())

    def to_json(self) -> str:
        d = {"family": self.family, "input_width": self.input_width, "hidden_width": self.hidden_width}
        d["params"] = {k: {"shape": list(v.shape), "values": v.ravel().tolist()} for k, v in self.params.items()}
        return json.dumps(d)

    @staticmethod
    def from_json(text: str) -> "_Model":
        d = json.loads(text)
        cls = FAMILIES[d["family"]]
        params = {k: np.asarray(p["values"], dtype=np.float64).reshape(p["shape"]) for k, p in d["params"].items()}
        return cls(**params)


class MlpModel(_Model):
    """``yhat = W2 . tanh(W1 x + b1) + b2``."""

    family = "mlp"
    param_names = ("W1", "b1", "W2", "b2")

    @property
    def input_width(self):
        return self.W1.shape[1]

    @property
    def hidden_width(self):
        return self.W1.shape[0]

    @classmethod
    def init(cls, input_width, hidden_width, rng):
        return cls(
            W1=glorot(rng, input_width, hidden_width, (hidden_width, input_width)),
            b1=np.zeros(hidden_width),
            W2=glorot(rng, hidden_width, 1, (hidden_width,)),
            b2=np.zeros(()),
        )

    def _check(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.input_width:
            raise InputError(f"input width {X.shape[-1]} != model width {self.input_width}")
        return X

    def forward(self, X):
        X = self._check(X)
        return np.tanh(X @ self.W1.T + self.b1) @ self.W2 + self.b2

    def gradient(self, X, y):
        X = np.atleast_2d(self._check(X))
        y = np.asarray(y, dtype=np.float64)
        m = len(y)
        hid = np.tanh(X @ self.W1.T + self.b1)
        yhat = hid @ self.W2 + self.b2
        dy = 2.0 * (yhat - y) / m
        dhid = np.outer(dy, self.W2) * (1.0 - hid * hid)
        return {
            "W1": dhid.T @ X,
            "b1": dhid.sum(axis=0),
            "W2": hid.T @ dy,
            "b2": np.asarray(dy.sum()),
        }


class LinearModel(_Model):
    """Affine regressor; the convex reference used to sanity-check training."""

    family = "linear"
    param_names = ("w", "b")

    @property
    def input_width(self):
        return self.w.shape[0]

    hidden_width = 0

    @classmethod
    def init(cls, input_width, hidden_width, rng):
        return cls(w=glorot(rng, input_width, 1, (input_width,)), b=np.zeros(()))

    def forward(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.input_width:
            raise InputError(f"input width {X.shape[-1]} != model width {self.input_width}")
        return X @ self.w + self.b

    def gradient(self, X, y):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        dy = 2.0 * (self.forward(X) - y) / len(y)
        return {"w": X.T @ dy, "b": np.asarray(dy.sum())}


class LstmModel(_Model):
    """Single LSTM layer read out by a dense head on the last hidden state.

    Gate weights act on ``[h_prev, x_t]`` (hidden part first). Inputs are
    batches of sequences shaped ``(batch, steps, input_width)``; ``h`` and
    ``C`` start at zero.
    """

    family = "lstm"
    param_names = ("Wf", "bf", "Wi", "bi", "Wc", "bc", "Wo", "bo", "w_head", "b_head")

    @property
    def input_width(self):
        return self.Wf.shape[1] - self.Wf.shape[0]

    @property
    def hidden_width(self):
        return self.Wf.shape[0]

    @classmethod
    def init(cls, input_width, hidden_width, rng):
        fan = hidden_width + input_width
        p = {}
        for g in "fico":
            p[f"W{g}"] = glorot(rng, fan, hidden_width, (hidden_width, fan))
            p[f"b{g}"] = np.zeros(hidden_width)
        p["w_head"] = glorot(rng, hidden_width, 1, (hidden_width,))
        p["b_head"] = np.zeros(())
        return cls(**p)

    def _check(self, seqs):
        s = np.asarray(seqs, dtype=np.float64)
        if s.ndim == 2:
            s = s[None]
        if s.shape[1] == 0:
            raise InputError("empty input sequence")
        if s.shape[2] != self.input_width:
            raise InputError(f"input width {s.shape[2]} != model width {self.input_width}")
        return s

    def _stacked(self):
        W = np.concatenate([self.Wf, self.Wi, self.Wo, self.Wc])
        b = np.concatenate([self.bf, self.bi, self.bo, self.bc])
        return W, b

    def run(self, seqs):
        """Forward pass; returns ``(yhat, per-step cache, inputs)``."""
        s = self._check(seqs)
        m, steps, _ = s.shape
        hw = self.hidden_width
        W, b = self._stacked()
        Wx = W[:, hw:]
        Wh = W[:, :hw]
        # input projections for every step at once
        xproj = s @ Wx.T + b
        h = np.zeros((m, hw))
        c = np.zeros((m, hw))
        cache = []
        for t in range(steps):
            a = xproj[:, t, :] + h @ Wh.T
            sig = sigmoid(a[:, :3 * hw])
            f, i, o = sig[:, :hw], sig[:, hw:2 * hw], sig[:, 2 * hw:]
            g = np.tanh(a[:, 3 * hw:])
            c_prev = c
            c = f * c_prev + i * g
            tc = np.tanh(c)
            h_prev = h
            h = o * tc
            cache.append({"h_prev": h_prev, "f": f, "i": i, "g": g, "o": o, "c_prev": c_prev, "c": c, "tc": tc, "h": h})
        yhat = h @ self.w_head + self.b_head
        return yhat, cache, s

    def forward(self, seqs):
        return self.run(seqs)[0]

    def gradient(self, seqs, y):
        yhat, cache, s = self.run(seqs)
        y = np.asarray(y, dtype=np.float64)
        m = len(y)
        hw = self.hidden_width
        W, _ = self._stacked()
        Wh = W[:, :hw]
        dy = 2.0 * (yhat - y) / m
        dh = np.outer(dy, self.w_head)
        dc_next = np.zeros((m, hw))
        da = np.empty((m, len(cache), 4 * hw))
        for t in range(len(cache) - 1, -1, -1):
            st = cache[t]
            f, i, g, o, tc = st["f"], st["i"], st["g"], st["o"], st["tc"]
            dc = dc_next + dh * o * (1.0 - tc * tc)
            a = da[:, t, :]
            a[:, :hw] = dc * st["c_prev"] * f * (1.0 - f)
            a[:, hw:2 * hw] = dc * g * i * (1.0 - i)
            a[:, 2 * hw:3 * hw] = dh * tc * o * (1.0 - o)
            a[:, 3 * hw:] = dc * i * (1.0 - g * g)
            dh = a @ Wh
            dc_next = dc * f
        # parameter gradients from all steps at once
        hprev = np.stack([st["h_prev"] for st in cache], axis=1)
        z = np.concatenate([hprev, s], axis=2).reshape(-1, W.shape[1])
        flat = da.reshape(-1, 4 * hw)
        dW = flat.T @ z
        db = flat.sum(axis=0)
        grads = {"w_head": cache[-1]["h"].T @ dy, "b_head": np.asarray(dy.sum())}
        for k, gate in enumerate("fioc"):
            grads[f"W{gate}"] = dW[k * hw:(k + 1) * hw]
            grads[f"b{gate}"] = db[k * hw:(k + 1) * hw]
        return {k: grads[k] for k in self.param_names}


FAMILIES = {"mlp": MlpModel, "lstm": LstmModel, "linear": LinearModel}


def mlp_forward(model: MlpModel, x):
    return model.forward(x)


def mlp_gradient(model: MlpModel, X, y):
    return model.gradient(X, y)


def lstm_forward(model: LstmModel, seq):
    return model.forward(seq)


def lstm_gradient(model: LstmModel, seqs, y):
    return model.gradient(seqs, y)


def load_model(text: str):
    return _Model.from_json(text)
