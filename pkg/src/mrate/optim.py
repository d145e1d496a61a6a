import numpy as np

from .params import ParamSet


class Adam:
    def __init__(self, lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def _moments(self, params) -> tuple[np.ndarray, np.ndarray] | None:
        """Flat moment buffers when params and moments can share one layout."""
        if not isinstance(params, ParamSet):
            return None
        if not isinstance(self.m, ParamSet):
            m = ParamSet(params.shapes)
            v = ParamSet(params.shapes)
            for k in self.m:
                m[k] = self.m[k]
                v[k] = self.v[k]
            self.m, self.v = m, v
        return self.m.flat, self.v.flat

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """In-place update of ``params``."""
        for k, p in params.items():
            if grads[k].shape != p.shape:
                raise ValueError(f"shape mismatch for {k}: grad {grads[k].shape} vs param {p.shape}")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        flat = self._moments(params)
        if flat is not None and isinstance(grads, ParamSet):
            pairs = [(params.flat, grads.flat, *flat)]
        else:
            pairs = []
            for k, p in params.items():
                if k not in self.m:
                    self.m[k] = np.zeros_like(p)
                    self.v[k] = np.zeros_like(p)
                pairs.append((p, np.asarray(grads[k], dtype=float), self.m[k], self.v[k]))
        for p, g, m, v in pairs:
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            denom = np.sqrt(v / bc2)
            denom += self.eps
            np.divide(m, denom, out=denom)
            denom *= self.lr / bc1
            p -= denom

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"adam_t": np.array(self.t)}
        for k in self.m:
            out[f"adam_m/{k}"] = self.m[k]
            out[f"adam_v/{k}"] = self.v[k]
        return out

    def load_state_arrays(self, arrays) -> None:
        self.t = int(arrays["adam_t"])
        m, v = {}, {}
        for key, value in arrays.items():
            if key.startswith("adam_m/"):
                m[key[len("adam_m/"):]] = np.array(value)
            elif key.startswith("adam_v/"):
                v[key[len("adam_v/"):]] = np.array(value)
        self.m, self.v = m, v


def adam_step(params, grads, optimizer: Adam, lr: float | None = None):
    if lr is not None:
        optimizer.lr = lr
    optimizer.step(params, grads)
    return params
