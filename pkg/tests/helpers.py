"""Shared test oracles.

Independent implementations used to cross-check the package: a central
finite-difference gradient checker and a from-scratch (raw numpy, no package
imports beyond reading initial parameters) centralized SGD trainer for the
composed split model.
"""

from __future__ import annotations

import numpy as np

FD_STEP = 1e-5


def flatten_grads(grads) -> np.ndarray:
    parts = [g.ravel() for g in grads.weights] + [g.ravel() for g in grads.biases]
    return np.concatenate(parts)


def fd_param_grads(net, loss_fn, step: float = FD_STEP) -> np.ndarray:
    """Central finite differences of loss_fn() w.r.t. every parameter of `net`.

    Mutates parameter arrays in place and restores them. Returns the gradient
    flattened in the same order as flatten_grads.
    """
    chunks = []
    for arrays in (
        [layer.weight for layer in net.layers],
        [layer.bias for layer in net.layers],
    ):
        for arr in arrays:
            g = np.zeros_like(arr)
            it = np.nditer(arr, flags=["multi_index"])
            while not it.finished:
                idx = it.multi_index
                orig = arr[idx]
                arr[idx] = orig + step
                up = loss_fn()
                arr[idx] = orig - step
                down = loss_fn()
                arr[idx] = orig
                g[idx] = (up - down) / (2 * step)
                it.iternext()
            chunks.append(g.ravel())
    return np.concatenate(chunks)


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(float(np.linalg.norm(b)), 1e-12)
    return float(np.linalg.norm(a - b)) / denom


# ---------------------------------------------------------------------------
# Independent centralized trainer for the composed model: tanh MLP parties,
# summed embeddings, linear softmax cross-entropy server head. Written from
# scratch so it shares no forward/backward code with the package.
# ---------------------------------------------------------------------------


def _copy_params(net) -> list[tuple[np.ndarray, np.ndarray, str]]:
    return [(l.weight.copy(), l.bias.copy(), l.activation) for l in net.layers]


class CentralizedComposedModel:
    """Monolithic trainer for server(h1+...+hM) with manual backprop."""

    def __init__(self, party_nets, server_net):
        self.parties = [_copy_params(n) for n in party_nets]
        self.server = _copy_params(server_net)

    @staticmethod
    def _forward_stack(params, x):
        acts = [x]
        for w, b, kind in params:
            z = acts[-1] @ w + b
            acts.append(np.tanh(z) if kind == "tanh" else z)
        return acts

    def loss(self, feature_blocks, labels):
        h = sum(
            self._forward_stack(p, xb)[-1] for p, xb in zip(self.parties, feature_blocks)
        )
        logits = self._forward_stack(self.server, h)[-1]
        shifted = logits - logits.max(axis=1, keepdims=True)
        logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        return float(-logp[np.arange(len(labels)), labels].mean())

    def step(self, feature_blocks, labels, eta):
        """One SGD step on the full composed model; returns the pre-step loss."""
        party_acts = [
            self._forward_stack(p, xb) for p, xb in zip(self.parties, feature_blocks)
        ]
        h = sum(acts[-1] for acts in party_acts)
        server_acts = self._forward_stack(self.server, h)
        logits = server_acts[-1]
        shifted = logits - logits.max(axis=1, keepdims=True)
        expz = np.exp(shifted)
        probs = expz / expz.sum(axis=1, keepdims=True)
        batch = len(labels)
        loss = float(-np.log(probs[np.arange(batch), labels]).mean())

        grad = probs.copy()
        grad[np.arange(batch), labels] -= 1.0
        grad /= batch
        new_server, grad_h = self._backprop_stack(self.server, server_acts, grad, eta)
        self.server = new_server
        new_parties = []
        for params, acts in zip(self.parties, party_acts):
            new_params, _ = self._backprop_stack(params, acts, grad_h, eta)
            new_parties.append(new_params)
        self.parties = new_parties
        return loss

    @staticmethod
    def _backprop_stack(params, acts, grad_out, eta):
        grad = grad_out
        updated = list(params)
        for i in range(len(params) - 1, -1, -1):
            w, b, kind = params[i]
            if kind == "tanh":
                grad = grad * (1.0 - acts[i + 1] ** 2)
            dw = acts[i].T @ grad
            db = grad.sum(axis=0)
            grad = grad @ w.T
            updated[i] = (w - eta * dw, b - eta * db, kind)
        return updated, grad
