"""Minimal MLP stack: forward/backward passes, Adam, and the Gaussian policy head.

The networks are fixed-shape dense MLPs (two tanh hidden layers) with a
hand-written reverse-mode backward pass; no autodiff graph is built.  The
policy's 4-value head (charge price, discharge price, charge power,
discharge power, all in tanh range) is turned into a signed power with a
zero band between the two price thresholds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHECKPOINT_VERSION = 1

SIGMA_INITIAL = 0.6
SIGMA_FINAL = 0.25
SIGMA_DECAY = 2e-7  # per environment step


@dataclass
class Mlp:
    """Dense multilayer perceptron with tanh hidden activations.

    ``weights[i]`` has shape (fan_in, fan_out); ``output_tanh`` selects
    whether the final layer is squashed (policy head) or linear (critic).
    """

    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    output_tanh: bool = True

    @property
    def n_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    @property
    def dtype(self):
        return self.weights[0].dtype


def init_mlp(layer_sizes, rng: np.random.Generator, output_tanh: bool = True,
             dtype=np.float64) -> Mlp:
    """Uniform fan-in initialization: W, b ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).

    float64 by default; pass float32 to trade gradient-check precision for
    training throughput.
    """
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype))
        biases.append(rng.uniform(-bound, bound, size=fan_out).astype(dtype))
    return Mlp(list(layer_sizes), weights, biases, output_tanh)


def forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    """Forward pass; accepts a single input vector or a (batch, dim) matrix."""
    x = np.asarray(x, dtype=net.dtype)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.shape[1] != net.layer_sizes[0]:
        raise ValueError(f"input dim {h.shape[1]} != {net.layer_sizes[0]}")
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w
        h += b
        if i < last or net.output_tanh:
            np.tanh(h, out=h)
    return h[0] if single else h


def forward_cache(net: Mlp, x: np.ndarray):
    """Forward pass returning (output, per-layer activations for backward)."""
    x = np.asarray(x, dtype=net.dtype)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.shape[1] != net.layer_sizes[0]:
        raise ValueError(f"input dim {h.shape[1]} != {net.layer_sizes[0]}")
    acts = [h]
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w + b
        h = np.tanh(z) if (i < last or net.output_tanh) else z
        acts.append(h)
    return (h[0] if single else h), (acts, single)


def backward(net: Mlp, x: np.ndarray, grad_out: np.ndarray):
    """Gradient of sum(grad_out * forward(net, x)) w.r.t. every parameter.

    Returns a list of (dW, db) matching the layer order.  ``grad_out`` must
    match the forward output's shape.
    """
    _, cache = forward_cache(net, x)
    return backward_from_cache(net, cache, grad_out)


def backward_from_cache(net: Mlp, cache, grad_out: np.ndarray):
    acts, single = cache
    g = np.asarray(grad_out, dtype=net.dtype)
    g = g[None, :] if single else g
    if g.shape != acts[-1].shape:
        raise ValueError(f"upstream gradient shape {g.shape} != output {acts[-1].shape}")
    grads = [None] * len(net.weights)
    last = len(net.weights) - 1
    delta = g
    for i in range(last, -1, -1):
        if i < last or net.output_tanh:
            delta = delta * (1.0 - acts[i + 1] ** 2)  # tanh'(z) = 1 - tanh(z)^2
        grads[i] = (acts[i].T @ delta, delta.sum(axis=0))
        if i > 0:
            delta = delta @ net.weights[i].T
    return grads


def flat_params(net: Mlp) -> np.ndarray:
    parts = []
    for w, b in zip(net.weights, net.biases):
        parts.append(w.ravel())
        parts.append(b)
    return np.concatenate(parts)


def set_flat_params(net: Mlp, vec: np.ndarray) -> None:
    vec = np.asarray(vec, dtype=net.dtype)
    if vec.size != net.n_params:
        raise ValueError(f"parameter vector has {vec.size} entries, net needs {net.n_params}")
    ofs = 0
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        net.weights[i] = vec[ofs:ofs + w.size].reshape(w.shape).copy()
        ofs += w.size
        net.biases[i] = vec[ofs:ofs + b.size].copy()
        ofs += b.size


@dataclass
class AdamState:
    """First/second moment accumulators, one pair per parameter array."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def for_net(cls, net: Mlp) -> "AdamState":
        arrs = [a for pair in zip(net.weights, net.biases) for a in pair]
        return cls([np.zeros_like(a) for a in arrs], [np.zeros_like(a) for a in arrs])


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> list[np.ndarray]:
    """One Adam update, in place on ``params``; rejects non-finite gradients.

    Bias correction is folded into the step constants: the update equals
    lr * m_hat / (sqrt(v_hat) + eps) with m_hat = m / (1 - b1^t) and
    v_hat = v / (1 - b2^t).
    """
    for g in grads:
        if not np.isfinite(g).all():
            raise FloatingPointError("non-finite gradient passed to adam_step")
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    sq2 = np.sqrt(1.0 - beta2 ** state.t)
    scale = lr * sq2 / c1
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * np.square(g)
        denom = np.sqrt(v)
        denom += eps * sq2
        step = m / denom
        step *= scale
        p -= step
    return params


def net_param_list(net: Mlp) -> list[np.ndarray]:
    return [a for pair in zip(net.weights, net.biases) for a in pair]


def net_grad_list(grads) -> list[np.ndarray]:
    return [a for pair in grads for a in pair]


def gaussian_sample(mean: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Independent normal draw around ``mean`` with shared scalar std."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    mean = np.asarray(mean, dtype=np.float64)
    return mean + sigma * rng.standard_normal(mean.shape)


def gaussian_logprob(mean: np.ndarray, sigma: float, action: np.ndarray) -> np.ndarray:
    """Summed per-dimension normal log-density; batched over leading axis."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    mean = np.asarray(mean, dtype=np.float64)
    action = np.asarray(action, dtype=np.float64)
    z = (action - mean) / sigma
    per_dim = -0.5 * z * z - np.log(sigma) - 0.5 * np.log(2.0 * np.pi)
    return per_dim.sum(axis=-1)


def std_schedule(step: int, cfg) -> float:
    """Linearly decayed action std, clamped at its floor.

    ``cfg`` needs sigma_initial / sigma_final / sigma_decay attributes.
    """
    if step < 0:
        raise ValueError("step must be >= 0")
    return max(cfg.sigma_final, cfg.sigma_initial - cfg.sigma_decay * step)


def nnsf_power(head: np.ndarray, lam_norm: float) -> float:
    """Signed power (normalized) from the 4-value head at one price.

    Head layout: (charge price, discharge price, charge power, discharge
    power), all in [-1, 1]; power entries act as magnitudes.  At or above
    the discharge price the discharge power applies; otherwise at or below
    the charge price the (negated) charge power applies; between the two
    the output is exactly zero.  The discharge branch is checked first, so
    it wins when the thresholds overlap.
    """
    lam_c, lam_d, p_c, p_d = head
    if lam_norm >= lam_d:
        return float(abs(p_d))
    if lam_norm <= lam_c:
        return float(-abs(p_c))
    return 0.0


def nnsf_power_batch(heads: np.ndarray, lam_norms: np.ndarray) -> np.ndarray:
    heads = np.atleast_2d(np.asarray(heads, dtype=np.float64))
    lam_norms = np.asarray(lam_norms, dtype=np.float64)
    discharge = lam_norms >= heads[:, 1]
    charge = lam_norms <= heads[:, 0]
    return np.where(discharge, np.abs(heads[:, 3]),
                    np.where(charge, -np.abs(heads[:, 2]), 0.0))


def direct_power_batch(heads: np.ndarray, lam_norms: np.ndarray) -> np.ndarray:
    """1-value head variant: the head output is already the signed power."""
    heads = np.atleast_2d(np.asarray(heads, dtype=np.float64))
    return heads[:, 0].copy()


HEAD_KINDS = {"zero_band": 4, "power": 1}


class PolicyNet:
    """Actor network: tanh MLP whose head parameterizes a supply function.

    ``head`` selects the action-to-power rule: "zero_band" (4-dim head with
    a zero output band between price thresholds) or "power" (1-dim direct
    power head).  ``sigma`` is the shared action std driven by the schedule.
    """

    def __init__(self, mlp: Mlp, lam_min: float, lam_max: float,
                 head: str = "zero_band", sigma: float = SIGMA_INITIAL):
        if head not in ("zero_band", "power", "direct_hdb"):
            raise ValueError(f"unknown head kind {head!r}")
        self.mlp = mlp
        self.lam_min = float(lam_min)
        self.lam_max = float(lam_max)
        self.head = head
        self.sigma = float(sigma)

    @property
    def action_dim(self) -> int:
        return self.mlp.layer_sizes[-1]

    @property
    def obs_dim(self) -> int:
        return self.mlp.layer_sizes[0]

    def mean(self, x: np.ndarray) -> np.ndarray:
        return forward(self.mlp, x)

    def normalize_price(self, lam) -> np.ndarray:
        x = (np.asarray(lam, dtype=np.float64) - self.lam_min) \
            * (2.0 / (self.lam_max - self.lam_min)) - 1.0
        return np.clip(x, -1.0, 1.0)

    def head_to_power(self, heads: np.ndarray, lam_norms: np.ndarray) -> np.ndarray:
        if self.head == "zero_band":
            return nnsf_power_batch(heads, lam_norms)
        if self.head == "power":
            return direct_power_batch(heads, lam_norms)
        raise ValueError(f"head kind {self.head!r} has no direct power mapping")


class ValueNet:
    """Critic network: tanh MLP with a linear scalar output."""

    def __init__(self, mlp: Mlp):
        if mlp.output_tanh or mlp.layer_sizes[-1] != 1:
            raise ValueError("value net needs a linear 1-dim output")
        self.mlp = mlp

    def value(self, x: np.ndarray) -> np.ndarray:
        out = forward(self.mlp, x)
        return out[..., 0]


def make_policy(obs_dim: int, action_dim: int, rng: np.random.Generator,
                lam_min: float, lam_max: float, head: str = "zero_band",
                hidden: int = 256, dtype=np.float64) -> PolicyNet:
    mlp = init_mlp([obs_dim, hidden, hidden, action_dim], rng, output_tanh=True,
                   dtype=dtype)
    return PolicyNet(mlp, lam_min, lam_max, head=head)


def make_value(obs_dim: int, rng: np.random.Generator, hidden: int = 256,
               dtype=np.float64) -> ValueNet:
    return ValueNet(init_mlp([obs_dim, hidden, hidden, 1], rng,
                             output_tanh=False, dtype=dtype))


def _mlp_to_obj(net: Mlp) -> dict:
    return {
        "layer_sizes": list(net.layer_sizes),
        "output_tanh": net.output_tanh,
        "dtype": net.dtype.name,
        "params": flat_params(net).astype(np.float64).tolist(),
    }


def _mlp_from_obj(obj: dict) -> Mlp:
    sizes = [int(s) for s in obj["layer_sizes"]]
    dtype = np.dtype(obj.get("dtype", "float64"))
    net = Mlp(sizes,
              [np.zeros((a, b), dtype=dtype) for a, b in zip(sizes[:-1], sizes[1:])],
              [np.zeros(b, dtype=dtype) for b in sizes[1:]],
              output_tanh=bool(obj["output_tanh"]))
    params = np.asarray(obj["params"], dtype=np.float64)
    if params.size != net.n_params:
        raise ValueError(f"checkpoint has {params.size} parameters, "
                         f"architecture {sizes} needs {net.n_params}")
    set_flat_params(net, params)
    return net


def _adam_to_obj(state: AdamState) -> dict:
    return {"t": state.t,
            "m": [a.ravel().astype(np.float64).tolist() for a in state.m],
            "v": [a.ravel().astype(np.float64).tolist() for a in state.v]}


def _adam_from_obj(obj: dict, net: Mlp) -> AdamState:
    state = AdamState.for_net(net)
    shapes = [a.shape for a in state.m]
    if len(obj["m"]) != len(shapes):
        raise ValueError("optimizer state does not match architecture")
    state.t = int(obj["t"])
    state.m = [np.asarray(m, dtype=net.dtype).reshape(s) for m, s in zip(obj["m"], shapes)]
    state.v = [np.asarray(v, dtype=net.dtype).reshape(s) for v, s in zip(obj["v"], shapes)]
    return state


def save_checkpoint(path, policy: PolicyNet, value: ValueNet, step: int,
                    adam_policy: AdamState | None = None,
                    adam_value: AdamState | None = None) -> None:
    obj = {
        "version": CHECKPOINT_VERSION,
        "step": int(step),
        "sigma": policy.sigma,
        "head": policy.head,
        "lam_min": policy.lam_min,
        "lam_max": policy.lam_max,
        "policy": _mlp_to_obj(policy.mlp),
        "value": _mlp_to_obj(value.mlp),
    }
    if adam_policy is not None:
        obj["adam_policy"] = _adam_to_obj(adam_policy)
    if adam_value is not None:
        obj["adam_value"] = _adam_to_obj(adam_value)
    Path(path).write_text(json.dumps(obj))


def load_checkpoint(path):
    """Returns (policy, value, step, adam_policy, adam_value); optimizer
    states are None when the checkpoint carries none."""
    obj = json.loads(Path(path).read_text())
    if obj.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {obj.get('version')!r}")
    policy_mlp = _mlp_from_obj(obj["policy"])
    value_mlp = _mlp_from_obj(obj["value"])
    policy = PolicyNet(policy_mlp, obj["lam_min"], obj["lam_max"],
                       head=obj["head"], sigma=obj["sigma"])
    value = ValueNet(value_mlp)
    adam_p = _adam_from_obj(obj["adam_policy"], policy_mlp) if "adam_policy" in obj else None
    adam_v = _adam_from_obj(obj["adam_value"], value_mlp) if "adam_value" in obj else None
    return policy, value, int(obj["step"]), adam_p, adam_v
