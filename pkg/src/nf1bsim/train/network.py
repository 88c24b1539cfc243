"""Dense stage models with versioned parameters."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from ..errors import DomainError, StructuralError


def _tanh_grad(z, a):
    return 1.0 - a * a


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def _sigmoid_grad(z, a):
    return a * (1.0 - a)


def _relu_grad(z, a):
    return (z > 0).astype(z.dtype)


# name -> (f(z), f'(z) given z and f(z))
ACTIVATIONS = {
    "tanh": (np.tanh, _tanh_grad),
    "sigmoid": (_sigmoid, _sigmoid_grad),
    "relu": (lambda z: np.maximum(z, 0.0), _relu_grad),
    "linear": (lambda z: z, lambda z, a: np.ones_like(z)),
}
SMOOTH_ACTIVATIONS = ("tanh", "sigmoid", "linear")


def mse_loss(y: np.ndarray, t: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean over samples of the mean squared error; returns (loss, dloss/dy)."""
    n, d = y.shape
    diff = y - t
    return float(np.mean(np.sum(diff * diff, axis=1) / d)), (2.0 / (n * d)) * diff


def xent_loss(y: np.ndarray, t: np.ndarray) -> tuple[float, np.ndarray]:
    """Softmax cross-entropy against one-hot (or soft) targets."""
    n = y.shape[0]
    shifted = y - y.max(axis=1, keepdims=True)
    logz = np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
    logp = shifted - logz
    loss = float(-np.sum(t * logp) / n)
    return loss, (np.exp(logp) - t) / n


LOSSES = {"mse": mse_loss, "xent": xent_loss}


@dataclass(frozen=True)
class LayerSpec:
    fan_in: int
    fan_out: int
    activation: str

    @property
    def parameter_count(self) -> int:
        return self.fan_in * self.fan_out + self.fan_out


Params = list  # list[tuple[np.ndarray, np.ndarray]] : (weight (out, in), bias (out,))


def copy_params(params: Params) -> Params:
    return [(w.copy(), b.copy()) for w, b in params]


def params_digest(params: Params) -> str:
    h = hashlib.sha256()
    for w, b in params:
        h.update(np.ascontiguousarray(w, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return h.hexdigest()


@dataclass
class StageModel:
    """Layers owned by one pipeline stage and every resident weight version."""

    stage_id: int
    layers: list[LayerSpec]
    version_store: dict[int, Params] = field(default_factory=dict)
    current_version: int = 0
    loss: str = "mse"

    @property
    def fan_in(self) -> int:
        return self.layers[0].fan_in

    @property
    def fan_out(self) -> int:
        return self.layers[-1].fan_out

    @property
    def parameter_count(self) -> int:
        return sum(layer.parameter_count for layer in self.layers)

    def params(self, version: int | None = None) -> Params:
        version = self.current_version if version is None else version
        try:
            return self.version_store[version]
        except KeyError:
            raise StructuralError(
                f"stage {self.stage_id}: version {version} is not resident (have {sorted(self.version_store)})"
            ) from None

    def forward(self, x: np.ndarray, params: Params):
        """Returns the stage output and the per-layer cache (input, z, output)."""
        if x.shape[1] != self.fan_in:
            raise StructuralError(f"stage {self.stage_id}: input width {x.shape[1]} != {self.fan_in}")
        cache = []
        a = x
        for spec, (w, b) in zip(self.layers, params):
            z = a @ w.T + b
            out = ACTIVATIONS[spec.activation][0](z)
            cache.append((a, z, out))
            a = out
        return a, cache

    def backward(self, delta: np.ndarray, cache, params: Params):
        """Back-propagate ``delta`` (d loss / d stage output) through the stage.

        ``params`` supplies the weights that multiply the propagated deltas;
        activations come from ``cache``. Returns (d loss / d stage input, grads).
        """
        grads = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            a_in, z, out = cache[i]
            dz = delta * ACTIVATIONS[self.layers[i].activation][1](z, out)
            grads[i] = (dz.T @ a_in, dz.sum(axis=0))
            delta = dz @ params[i][0]
        return delta, grads

    def commit(self, version: int, params: Params) -> None:
        if version in self.version_store:
            raise StructuralError(f"stage {self.stage_id}: version {version} already committed")
        self.version_store[version] = params
        self.current_version = version

    def sgd_step(self, grads, lr: float, version: int) -> None:
        """Apply ``grads`` to the newest resident weights, committing ``version``."""
        base = self.params()
        self.commit(version, [(w - lr * gw, b - lr * gb) for (w, b), (gw, gb) in zip(base, grads)])

    def free(self, version: int) -> None:
        if version == self.current_version:
            raise StructuralError(f"stage {self.stage_id}: refusing to free the current version")
        del self.version_store[version]

    def digest(self) -> str:
        return params_digest(self.params())


def layer_specs(widths: list[int], activations: list[str] | None = None) -> list[LayerSpec]:
    if len(widths) < 2:
        raise DomainError("widths", widths, "at least two widths (one layer)")
    n = len(widths) - 1
    if activations is None:
        activations = ["tanh"] * (n - 1) + ["linear"]
    if len(activations) != n:
        raise StructuralError(f"{n} layers but {len(activations)} activation tags")
    for tag in activations:
        if tag not in ACTIVATIONS:
            raise DomainError("activation", tag, f"one of {sorted(ACTIVATIONS)}")
    return [LayerSpec(widths[i], widths[i + 1], activations[i]) for i in range(n)]


def partition_layers(specs: list[LayerSpec], W: int) -> list[list[LayerSpec]]:
    """Contiguous split balanced by parameter count.

    Greedy: a stage keeps taking layers until it holds at least total/W
    parameters, while leaving at least one layer for every later stage.
    """
    if W < 1:
        raise DomainError("workers", W, ">= 1")
    if len(specs) < W:
        raise StructuralError(f"cannot split {len(specs)} layer(s) across {W} stages")
    target = sum(s.parameter_count for s in specs) / W
    groups: list[list[LayerSpec]] = []
    i = 0
    for stage in range(W):
        stages_after = W - stage - 1
        if stages_after == 0:
            groups.append(specs[i:])
            break
        group = [specs[i]]
        count = specs[i].parameter_count
        i += 1
        while count < target and len(specs) - i > stages_after:
            group.append(specs[i])
            count += specs[i].parameter_count
            i += 1
        groups.append(group)
    return groups


def init_params(specs: list[LayerSpec], rng: np.random.Generator) -> Params:
    out = []
    for s in specs:
        bound = 1.0 / np.sqrt(s.fan_in)
        w = rng.uniform(-bound, bound, size=(s.fan_out, s.fan_in))
        b = rng.uniform(-bound, bound, size=s.fan_out)
        out.append((w, b))
    return out


def partition_model(
    widths: list[int],
    W: int,
    activations: list[str] | None = None,
    seed: int = 0,
    loss: str = "mse",
) -> list[StageModel]:
    """Build a dense network and split it into ``W`` stage models at version 0."""
    if loss not in LOSSES:
        raise DomainError("loss", loss, f"one of {sorted(LOSSES)}")
    specs = layer_specs(widths, activations)
    groups = partition_layers(specs, W)
    rng = np.random.default_rng(seed)
    stages = []
    for sid, group in enumerate(groups, start=1):
        stages.append(StageModel(sid, group, {0: init_params(group, rng)}, 0, loss))
    return stages


def network_forward(stages: list[StageModel], x: np.ndarray, versions=None):
    caches = []
    a = x
    for i, st in enumerate(stages):
        params = st.params(None if versions is None else versions[i])
        a, cache = st.forward(a, params)
        caches.append(cache)
    return a, caches


def network_loss_and_grads(stages: list[StageModel], x: np.ndarray, t: np.ndarray):
    """Loss and per-stage gradients at each stage's current weights."""
    y, caches = network_forward(stages, x)
    loss, delta = LOSSES[stages[-1].loss](y, t)
    grads = [None] * len(stages)
    for i in range(len(stages) - 1, -1, -1):
        delta, grads[i] = stages[i].backward(delta, caches[i], stages[i].params())
    return loss, grads


def gradient_check(
    stages: list[StageModel], x: np.ndarray, t: np.ndarray, step: float = 1e-6, floor: float = 1e-4
) -> float:
    """Largest relative gap between analytic and central-difference gradients.

    Relative error is ``|a - n| / max(|a|, |n|, floor)``. Central differences
    at step 1e-6 carry roundoff near eps*|loss|/step, about 2e-10 for an O(1)
    loss; the floor stops that noise from reading as a large relative error on
    parameters whose gradient is nearly zero.
    """
    _, grads = network_loss_and_grads(stages, x, t)
    loss_fn = LOSSES[stages[-1].loss]
    worst = 0.0
    for si, st in enumerate(stages):
        for li, (w, b) in enumerate(st.params()):
            for arr, g in ((w, grads[si][li][0]), (b, grads[si][li][1])):
                flat, gflat = arr.reshape(-1), g.reshape(-1)
                for j in range(flat.size):
                    keep = flat[j]
                    flat[j] = keep + step
                    up = loss_fn(network_forward(stages, x)[0], t)[0]
                    flat[j] = keep - step
                    down = loss_fn(network_forward(stages, x)[0], t)[0]
                    flat[j] = keep
                    num = (up - down) / (2 * step)
                    err = abs(num - gflat[j]) / max(abs(num), abs(gflat[j]), floor)
                    worst = max(worst, err)
    return worst
