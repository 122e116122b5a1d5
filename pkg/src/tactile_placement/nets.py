"""Recurrent stochastic policy/value network in plain numpy.

Architecture: rectified input projection, one gated recurrent (GRU) layer,
a tanh-bounded diagonal-Gaussian action head with a state-independent
log-std, and a scalar value head. Forward and backward passes are written
explicitly so gradients can be verified against finite differences at
64-bit precision and training stays bit-reproducible per seed.

Actions: the network parameterizes a Gaussian over a pre-squash variable u;
the executed action is tanh(u) * delta, so both the mean action and every
sample lie inside the per-step delta limit. The tanh log-det correction is
constant in the parameters for a stored u, so PPO ratios reduce to Gaussian
ratios.
"""

import math
from dataclasses import dataclass

import numpy as np

PARAM_NAMES = (
    "w_in", "b_in",
    "w_z", "u_z", "b_z",
    "w_r", "u_r", "b_r",
    "w_n", "u_n", "b_n",
    "w_mu", "b_mu", "log_std",
    "w_v", "b_v",
)

LOG_2PI = math.log(2.0 * math.pi)


class PolicyDiverged(RuntimeError):
    pass


@dataclass
class PolicyParams:
    obs_dim: int
    hidden_in: int
    hidden_rec: int
    act_dim: int
    delta: float
    dtype: np.dtype
    tensors: dict

    def __getitem__(self, name):
        return self.tensors[name]

    def copy(self) -> "PolicyParams":
        return PolicyParams(
            self.obs_dim, self.hidden_in, self.hidden_rec, self.act_dim,
            self.delta, self.dtype, {k: v.copy() for k, v in self.tensors.items()},
        )

    def zeros_like(self) -> dict:
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}

    def astype(self, dtype) -> "PolicyParams":
        dtype = np.dtype(dtype)
        return PolicyParams(
            self.obs_dim, self.hidden_in, self.hidden_rec, self.act_dim,
            self.delta, dtype, {k: v.astype(dtype) for k, v in self.tensors.items()},
        )

    def flat(self) -> np.ndarray:
        return np.concatenate([self.tensors[k].ravel() for k in PARAM_NAMES])

    def set_flat(self, vec):
        off = 0
        for k in PARAM_NAMES:
            t = self.tensors[k]
            t[...] = np.asarray(vec[off:off + t.size]).reshape(t.shape).astype(self.dtype)
            off += t.size


def _orthogonal(rng, shape, gain, dtype):
    a = rng.standard_normal(shape)
    if shape[0] < shape[1]:
        q, _ = np.linalg.qr(a.T)
        q = q.T
    else:
        q, _ = np.linalg.qr(a)
    return (gain * q[: shape[0], : shape[1]]).astype(dtype)


def init_policy(
    obs_dim, hidden_in, hidden_rec, act_dim, delta,
    seed=0, init_log_std=-0.7, dtype=np.float32,
) -> PolicyParams:
    rng = np.random.default_rng(seed)
    dtype = np.dtype(dtype)
    t = {
        "w_in": _orthogonal(rng, (hidden_in, obs_dim), math.sqrt(2.0), dtype),
        "b_in": np.zeros(hidden_in, dtype=dtype),
        "w_z": _orthogonal(rng, (hidden_rec, hidden_in), 1.0, dtype),
        "u_z": _orthogonal(rng, (hidden_rec, hidden_rec), 1.0, dtype),
        "b_z": np.zeros(hidden_rec, dtype=dtype),
        "w_r": _orthogonal(rng, (hidden_rec, hidden_in), 1.0, dtype),
        "u_r": _orthogonal(rng, (hidden_rec, hidden_rec), 1.0, dtype),
        "b_r": np.zeros(hidden_rec, dtype=dtype),
        "w_n": _orthogonal(rng, (hidden_rec, hidden_in), 1.0, dtype),
        "u_n": _orthogonal(rng, (hidden_rec, hidden_rec), 1.0, dtype),
        "b_n": np.zeros(hidden_rec, dtype=dtype),
        "w_mu": _orthogonal(rng, (act_dim, hidden_rec), 0.01, dtype),
        "b_mu": np.zeros(act_dim, dtype=dtype),
        "log_std": np.full(act_dim, init_log_std, dtype=dtype),
        "w_v": _orthogonal(rng, (1, hidden_rec), 1.0, dtype),
        "b_v": np.zeros(1, dtype=dtype),
    }
    return PolicyParams(obs_dim, hidden_in, hidden_rec, act_dim, float(delta), dtype, t)


def _sigmoid(x):
    # exact for both signs without overflow in exp
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _cell(params, obs, h):
    """One recurrent step. Returns (h_new, cache) with everything the
    backward pass needs."""
    t = params.tensors
    s1 = obs @ t["w_in"].T + t["b_in"]
    x = np.maximum(s1, 0.0)
    z = _sigmoid(x @ t["w_z"].T + h @ t["u_z"].T + t["b_z"])
    r = _sigmoid(x @ t["w_r"].T + h @ t["u_r"].T + t["b_r"])
    hr = r * h
    n = np.tanh(x @ t["w_n"].T + hr @ t["u_n"].T + t["b_n"])
    h_new = (1.0 - z) * n + z * h
    return h_new, (obs, s1, x, z, r, hr, n, h)


@dataclass(frozen=True)
class ActionDistribution:
    """Diagonal Gaussian over the pre-squash variable u; executed actions
    are tanh(u) * delta."""

    mean: np.ndarray  # pre-squash mean (B, A)
    log_std: np.ndarray  # (A,)
    delta: float

    @property
    def std(self):
        return np.exp(self.log_std)

    def mean_action(self):
        return np.tanh(self.mean) * self.delta

    def sample(self, rng):
        """Returns (action, u)."""
        u = self.mean + self.std * rng.standard_normal(self.mean.shape)
        return np.tanh(u) * self.delta, u

    def log_prob(self, u):
        """Log density of the squashed action corresponding to u."""
        return gaussian_log_prob(u, self.mean, self.log_std) - squash_correction(u, self.delta)

    def entropy(self):
        """Base-Gaussian entropy (per sample scalar)."""
        return float(np.sum(self.log_std + 0.5 * (1.0 + LOG_2PI)))


def gaussian_log_prob(u, mean, log_std):
    std = np.exp(log_std)
    zn = (u - mean) / std
    return -0.5 * np.sum(zn * zn, axis=-1) - np.sum(log_std) - 0.5 * u.shape[-1] * LOG_2PI


def squash_correction(u, delta):
    """log |d action / d u| summed over dims, constant w.r.t. parameters."""
    # log(delta * (1 - tanh(u)^2)) written stably
    return np.sum(
        math.log(delta) + np.log1p(-np.tanh(u) ** 2 + 1e-12), axis=-1
    )


def policy_forward(params: PolicyParams, obs, h):
    """Single step: (action distribution, value, h').

    Deterministic given (params, obs, h); raises PolicyDiverged on
    non-finite outputs.
    """
    obs = np.asarray(obs, dtype=params.dtype)
    squeeze = obs.ndim == 1
    if squeeze:
        obs = obs[None]
        h = np.asarray(h, dtype=params.dtype)[None]
    h_new, _ = _cell(params, obs, np.asarray(h, dtype=params.dtype))
    t = params.tensors
    mu = h_new @ t["w_mu"].T + t["b_mu"]
    value = (h_new @ t["w_v"].T + t["b_v"])[:, 0]
    if not (np.isfinite(mu).all() and np.isfinite(value).all() and np.isfinite(h_new).all()):
        raise PolicyDiverged("non-finite policy output")
    dist = ActionDistribution(mu[0] if squeeze else mu, t["log_std"], params.delta)
    if squeeze:
        return dist, float(value[0]), h_new[0]
    return dist, value, h_new


def sequence_forward(params: PolicyParams, obs_seq, h0, done):
    """Run the cell over a (T, B, D) sequence, resetting the hidden state
    after done flags. Returns (mu (T,B,A), value (T,B), h_last, caches)."""
    t = params.tensors
    T, B, _ = obs_seq.shape
    obs_seq = np.asarray(obs_seq, dtype=params.dtype)
    done = np.asarray(done, dtype=params.dtype)
    h = np.asarray(h0, dtype=params.dtype).copy()
    caches = []
    hs = np.empty((T, B, params.hidden_rec), dtype=params.dtype)
    for step in range(T):
        if step > 0:
            h = h * (1.0 - done[step - 1])[:, None]
        h, cache = _cell(params, obs_seq[step], h)
        caches.append(cache)
        hs[step] = h
    mu = hs @ t["w_mu"].T + t["b_mu"]
    value = (hs @ t["w_v"].T + t["b_v"])[..., 0]
    return mu, value, h, (caches, hs, done)


def sequence_backward(params: PolicyParams, fwd_cache, d_mu, d_value):
    """Backpropagate through time: gradients of a scalar loss given its
    derivatives w.r.t. mu (T,B,A) and value (T,B). Returns a grads dict
    matching the parameter tensors (log_std gradient left at zero for the
    caller to fill)."""
    t = params.tensors
    caches, hs, done = fwd_cache
    T, B, H = hs.shape
    g = {k: np.zeros_like(v) for k, v in t.items()}

    d_mu = np.asarray(d_mu, dtype=params.dtype)
    d_value = np.asarray(d_value, dtype=params.dtype)

    # head gradients accumulated over all steps at once
    hs2 = hs.reshape(T * B, H)
    g["w_mu"] += d_mu.reshape(T * B, -1).T @ hs2
    g["b_mu"] += d_mu.sum(axis=(0, 1))
    g["w_v"] += (d_value.reshape(T * B, 1)).T @ hs2
    g["b_v"] += np.array([d_value.sum()], dtype=params.dtype)

    dh_next = np.zeros((B, H), dtype=params.dtype)
    for step in range(T - 1, -1, -1):
        obs, s1, x, z, r, hr, n, h_prev = caches[step]
        dh = d_mu[step] @ t["w_mu"] + d_value[step][:, None] * t["w_v"] + dh_next

        dz = dh * (h_prev - n)
        dn = dh * (1.0 - z)
        dh_prev = dh * z

        dan = dn * (1.0 - n * n)
        g["w_n"] += dan.T @ x
        g["u_n"] += dan.T @ hr
        g["b_n"] += dan.sum(axis=0)
        dx = dan @ t["w_n"]
        dhr = dan @ t["u_n"]
        dr = dhr * h_prev
        dh_prev = dh_prev + dhr * r

        daz = dz * z * (1.0 - z)
        g["w_z"] += daz.T @ x
        g["u_z"] += daz.T @ h_prev
        g["b_z"] += daz.sum(axis=0)
        dx += daz @ t["w_z"]
        dh_prev = dh_prev + daz @ t["u_z"]

        dar = dr * r * (1.0 - r)
        g["w_r"] += dar.T @ x
        g["u_r"] += dar.T @ h_prev
        g["b_r"] += dar.sum(axis=0)
        dx += dar @ t["w_r"]
        dh_prev = dh_prev + dar @ t["u_r"]

        ds1 = dx * (s1 > 0.0)
        g["w_in"] += ds1.T @ obs
        g["b_in"] += ds1.sum(axis=0)

        if step > 0:
            dh_prev = dh_prev * (1.0 - done[step - 1])[:, None]
        dh_next = dh_prev
    return g
