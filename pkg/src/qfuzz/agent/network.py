"""Recurrent Q-network in plain numpy with hand-written backpropagation.

Layout: affine embedding of the observation bits, one LSTM layer (gate
order input, forget, cell, output), and an affine head producing one
Q-value per mutation operator.  ``recurrent=False`` drops the LSTM and
feeds the embedding straight into the head.

Inputs may be narrower than ``n_in``: columns past ``X.shape[-1]`` are
taken to be zero.  Observations of short test inputs are mostly zero
padding, so this keeps the embedding cost proportional to input length.
"""

import numpy as np

PARAM_ORDER = ("W_embed", "b_embed", "W_x", "W_h", "b_lstm", "W_q", "b_q")


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class QNetwork:
    def __init__(self, n_in, n_actions=13, embed=64, hidden=64, recurrent=True,
                 seed=0, dtype=np.float64):
        self.n_in = int(n_in)
        self.n_actions = int(n_actions)
        self.embed = int(embed)
        self.hidden = int(hidden) if recurrent else 0
        self.recurrent = bool(recurrent)
        self.dtype = np.dtype(dtype)
        self.params = self._init_params(np.random.default_rng(seed))

    def _init_params(self, rng):
        def uniform(shape, fan_in):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape).astype(self.dtype)

        n_in, h, H, A = self.n_in, self.embed, self.hidden, self.n_actions
        p = {
            "W_embed": uniform((n_in, h), n_in),
            "b_embed": uniform((h,), n_in),
        }
        if self.recurrent:
            p["W_x"] = uniform((h, 4 * H), h + H)
            p["W_h"] = uniform((H, 4 * H), h + H)
            p["b_lstm"] = uniform((4 * H,), h + H)
            p["W_q"] = uniform((H, A), H)
        else:
            p["W_q"] = uniform((h, A), h)
        p["b_q"] = uniform((A,), p["W_q"].shape[0])
        return p

    @property
    def param_names(self):
        return [k for k in PARAM_ORDER if k in self.params]

    def zero_params(self):
        for v in self.params.values():
            v[...] = 0
        return self

    def copy(self):
        new = QNetwork.__new__(QNetwork)
        new.__dict__.update(self.__dict__)
        new.params = {k: v.copy() for k, v in self.params.items()}
        return new

    def load_params(self, params):
        for k, v in params.items():
            if self.params[k].shape != v.shape:
                raise ValueError(f"shape mismatch for {k}: {v.shape} vs {self.params[k].shape}")
            self.params[k][...] = v
        return self

    def dims(self):
        return self.n_in, self.embed, self.hidden, self.n_actions, int(self.recurrent)

    def initial_state(self, batch=1):
        z = np.zeros((batch, self.hidden), dtype=self.dtype)
        return z, z.copy()

    # -- forward -----------------------------------------------------------

    def _check(self, X, state):
        if X.ndim != 3:
            raise ValueError(f"expected (T, B, n_bits) input, got shape {X.shape}")
        if X.shape[-1] > self.n_in:
            raise ValueError(f"observation has {X.shape[-1]} bits, network takes {self.n_in}")
        if self.recurrent:
            h0, c0 = state
            if h0.shape != (X.shape[1], self.hidden) or c0.shape != h0.shape:
                raise ValueError(f"recurrent state shape {h0.shape} does not match "
                                 f"batch {X.shape[1]} x {self.hidden}")

    def forward(self, X, state=None, keep_cache=False):
        """Run a ``(T, B, bits)`` sequence; return ``(Q, final_state[, cache])``."""
        X = np.asarray(X)
        if state is None:
            state = self.initial_state(X.shape[1])
        self._check(X, state)
        p = self.params
        width = X.shape[-1]
        Xf = X.astype(self.dtype, copy=False)
        E = Xf @ p["W_embed"][:width] + p["b_embed"]
        if not self.recurrent:
            Q = E @ p["W_q"] + p["b_q"]
            cache = (Xf, E, None)
            return (Q, state, cache) if keep_cache else (Q, state)

        T, B = X.shape[:2]
        H = self.hidden
        h, c = state
        hs, cs, gates = [h], [c], []
        for t in range(T):
            z = E[t] @ p["W_x"] + h @ p["W_h"] + p["b_lstm"]
            i = _sigmoid(z[:, :H])
            f = _sigmoid(z[:, H:2 * H])
            g = np.tanh(z[:, 2 * H:3 * H])
            o = _sigmoid(z[:, 3 * H:])
            c = f * c + i * g
            h = o * np.tanh(c)
            hs.append(h)
            cs.append(c)
            gates.append((i, f, g, o))
        Hs = np.stack(hs[1:])
        Q = Hs @ p["W_q"] + p["b_q"]
        cache = (Xf, E, (hs, cs, gates))
        return (Q, (h, c), cache) if keep_cache else (Q, (h, c))

    def q_values(self, X, state=None):
        return self.forward(X, state)[0]

    # -- backward ----------------------------------------------------------

    def backward(self, dQ, cache):
        """Parameter gradients for upstream ``dQ`` of shape ``(T, B, A)``.

        ``W_embed``'s gradient only covers the rows the input actually used.
        """
        p = self.params
        Xf, E, rec = cache
        grads = {}
        if not self.recurrent:
            grads["W_q"] = np.einsum("tbh,tba->ha", E, dQ)
            grads["b_q"] = dQ.sum(axis=(0, 1))
            dE = dQ @ p["W_q"].T
        else:
            hs, cs, gates = rec
            H = self.hidden
            T = dQ.shape[0]
            Hs = np.stack(hs[1:])
            grads["W_q"] = np.einsum("tbh,tba->ha", Hs, dQ)
            grads["b_q"] = dQ.sum(axis=(0, 1))
            dHs = dQ @ p["W_q"].T
            dWx = np.zeros_like(p["W_x"])
            dWh = np.zeros_like(p["W_h"])
            db = np.zeros_like(p["b_lstm"])
            dE = np.empty_like(E)
            dh_next = np.zeros_like(hs[0])
            dc_next = np.zeros_like(cs[0])
            for t in range(T - 1, -1, -1):
                i, f, g, o = gates[t]
                c = cs[t + 1]
                tc = np.tanh(c)
                dh = dHs[t] + dh_next
                do = dh * tc
                dc = dh * o * (1.0 - tc * tc) + dc_next
                di = dc * g
                df = dc * cs[t]
                dg = dc * i
                dc_next = dc * f
                dz = np.concatenate([
                    di * i * (1.0 - i),
                    df * f * (1.0 - f),
                    dg * (1.0 - g * g),
                    do * o * (1.0 - o),
                ], axis=1)
                dWx += E[t].T @ dz
                dWh += hs[t].T @ dz
                db += dz.sum(axis=0)
                dE[t] = dz @ p["W_x"].T
                dh_next = dz @ p["W_h"].T
            grads["W_x"], grads["W_h"], grads["b_lstm"] = dWx, dWh, db
        width = Xf.shape[-1]
        grads["W_embed"] = Xf.reshape(-1, width).T @ dE.reshape(-1, self.embed)
        grads["b_embed"] = dE.sum(axis=(0, 1))
        return grads


class Adam:
    """Adam with lazy updates for embedding rows that received no gradient."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr = np.sqrt(1.0 - b2 ** self.t) / (1.0 - b1 ** self.t)
        for k, g in grads.items():
            rows = g.shape[0] if k == "W_embed" else None
            P = params[k] if rows is None else params[k][:rows]
            m = self.m[k] if rows is None else self.m[k][:rows]
            v = self.v[k] if rows is None else self.v[k][:rows]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            P -= self.lr * corr * m / (np.sqrt(v) + self.eps)
