"""Split-model training orchestration over the secure-aggregation channel.

One iteration: every party and the server draw the same minibatch from a
shared seed; each party embeds its feature block; depending on the mode the
embeddings are quantized and masked (pbm), sent exactly (npq), or perturbed
with Gaussian noise (ldp); the server recovers the (noisy) embedding sum,
takes a gradient step on the fusion head, and broadcasts the loss gradient
with respect to the embedding sum; every party then updates its own network.

Parties are logically concurrent actors: all inter-actor data flows through a
CommChannel, every actor owns its randomness, and nothing depends on delivery
order across senders. Evaluation passes bypass the privacy mechanism — they
measure the trained model, not the protocol.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from . import metrics, privacy
from .data import VerticalDataset
from .errors import ProtocolError
from .metrics import CommLedger
from .nn import (
    DenseNet,
    backward_party,
    backward_server,
    forward_party,
    forward_server,
    make_party_net,
    make_server_net,
    sgd_step,
)
from .pbm import PbmParams, estimate_sum_array, quantize_array
from .secureagg import (
    CommChannel,
    MaskedShare,
    PairwiseSeed,
    deal_pairwise_seeds,
    mask_batch,
    unmask_sum_batch,
    write_transcript,
)

__all__ = [
    "MODES",
    "Seeds",
    "VflConfig",
    "TrainRecord",
    "TrainTrace",
    "TrainState",
    "sample_minibatch",
    "init_state",
    "train_step",
    "evaluate",
    "run_experiment",
]

MODES = ("pbm", "npq", "ldp")

# Domain-separation tags for deriving independent random streams from the
# mechanism seed.
_TAG_PAIR_SETUP = 0
_TAG_PARTY_MECH = 1


@dataclass(frozen=True)
class Seeds:
    """The four independent seeds that determine a run."""

    data: int
    model: int
    mechanism: int
    minibatch: int

    def __post_init__(self) -> None:
        for name in ("data", "model", "mechanism", "minibatch"):
            value = getattr(self, name)
            if not 0 <= value < 2**63:
                raise ValueError(f"{name} seed must be a non-negative 63-bit integer")


@dataclass(frozen=True)
class VflConfig:
    """Everything that defines a training run apart from the dataset itself."""

    parties: int
    embed_dim: int
    batch: int
    iters: int
    eta: float
    mode: Literal["pbm", "npq", "ldp"]
    pbm: PbmParams
    seeds: Seeds
    hidden: tuple[int, ...] = (16,)
    float_bits: int = metrics.DEFAULT_FLOAT_BITS
    ldp_sigma: float | None = None  # override for the derived noise level

    def __post_init__(self) -> None:
        if self.parties < 1:
            raise ValueError(f"parties must be positive, got {self.parties}")
        if self.embed_dim < 1:
            raise ValueError(f"embed_dim must be positive, got {self.embed_dim}")
        if self.batch < 1:
            raise ValueError(f"batch must be positive, got {self.batch}")
        if self.iters < 0:
            raise ValueError(f"iters must be non-negative, got {self.iters}")
        if self.eta < 0:
            raise ValueError(f"eta must be non-negative, got {self.eta}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.ldp_sigma is not None and self.ldp_sigma < 0:
            raise ValueError(f"ldp_sigma must be non-negative, got {self.ldp_sigma}")
        if any(h < 1 for h in self.hidden):
            raise ValueError(f"hidden layer sizes must be positive, got {self.hidden}")

    def ldp_noise_sigma(self) -> float:
        """Noise scale calibrated to match the quantizer's feature-privacy level."""
        if self.ldp_sigma is not None:
            return self.ldp_sigma
        variance = 2.0 * self.parties / (self.pbm.trials * self.pbm.beta**2)
        return float(np.sqrt(variance))


@dataclass
class TrainRecord:
    """One iteration's trace row (wall_ms is informational, not serialized)."""

    iteration: int
    epoch: float
    loss: float
    train_acc: float | None
    test_acc: float | None
    up_bits: int
    down_bits: int
    cum_bits: int
    eps_feat_alpha2: float | None
    eps_sample_alpha2: float | None
    wall_ms: float = 0.0


@dataclass
class TrainTrace:
    records: list[TrainRecord] = field(default_factory=list)

    @property
    def final(self) -> TrainRecord:
        if not self.records:
            raise ValueError("trace is empty")
        return self.records[-1]

    def losses(self) -> list[float]:
        return [r.loss for r in self.records]


def sample_minibatch(seed: int, t: int, n: int, batch: int) -> np.ndarray:
    """The shared minibatch for iteration t: `batch` distinct rows out of n.

    Every actor calls this with the same seed and gets the same sorted index
    array; draws are uniform without replacement and independent across t.
    """
    if batch > n:
        raise ValueError(f"batch {batch} exceeds population {n}")
    if t < 0:
        raise ValueError(f"iteration must be non-negative, got {t}")
    rng = np.random.default_rng(np.random.SeedSequence((seed, t)))
    return np.sort(rng.choice(n, size=batch, replace=False))


class _Party:
    """One feature-holding participant: its net, its randomness, its seeds."""

    def __init__(
        self,
        idx: int,
        config: VflConfig,
        features: np.ndarray,
        net: DenseNet,
        pair_seeds: list[PairwiseSeed],
        mech_rng: np.random.Generator,
    ) -> None:
        self.idx = idx
        self.config = config
        self.features = features
        self.net = net
        self.pair_seeds = pair_seeds
        self.mech_rng = mech_rng
        self._cache = None
        self.last_quantized: np.ndarray | None = None  # debug hook

    def send_embeddings(self, channel: CommChannel, t: int, rows: np.ndarray) -> None:
        config = self.config
        emb, self._cache = forward_party(self.net, self.features[rows])
        float_payload_bits = config.batch * config.embed_dim * config.float_bits
        if config.mode == "pbm":
            quantized = quantize_array(emb, config.pbm, self.mech_rng)
            self.last_quantized = quantized
            masked = mask_batch(
                quantized.ravel(),
                self.idx,
                config.parties,
                self.pair_seeds,
                round_idx=t,
                mask_range=config.pbm.trials,
            )
            width = metrics.masked_value_bits(config.parties, config.pbm.trials)
            channel.send_to_server(
                self.idx, masked, bits=config.batch * config.embed_dim * width
            )
        elif config.mode == "npq":
            channel.send_to_server(self.idx, emb, bits=float_payload_bits)
        else:  # ldp
            noisy = emb + self.mech_rng.normal(
                0.0, config.ldp_noise_sigma(), size=emb.shape
            )
            channel.send_to_server(self.idx, noisy, bits=float_payload_bits)

    def apply_gradient(self, channel: CommChannel) -> None:
        grad_embed = channel.recv_at_party(self.idx)
        if self._cache is None:
            raise ProtocolError(f"party {self.idx} received a gradient before embedding")
        grads = backward_party(self._cache, grad_embed)
        sgd_step(self.net, grads, self.config.eta)
        self._cache = None


class _Server:
    """The label holder: recovers embedding sums and trains the fusion head."""

    def __init__(self, config: VflConfig, labels: np.ndarray, net: DenseNet) -> None:
        self.config = config
        self.labels = labels
        self.net = net
        self.last_q_hat: np.ndarray | None = None  # debug hook
        self.last_h_tilde: np.ndarray | None = None

    def aggregate_and_update(
        self, channel: CommChannel, t: int, rows: np.ndarray
    ) -> float:
        config = self.config
        payloads = channel.recv_all_at_server(expected=config.parties)
        if config.mode == "pbm":
            q_hat = unmask_sum_batch(
                payloads, config.parties, mask_range=config.pbm.trials
            ).reshape(config.batch, config.embed_dim)
            h_tilde = estimate_sum_array(q_hat, config.parties, config.pbm)
            self.last_q_hat = q_hat
            self.last_h_tilde = h_tilde
        else:
            h_tilde = sum(payloads[m] for m in range(config.parties))
        loss, _, cache = forward_server(self.net, h_tilde, self.labels[rows])
        grads, grad_h = backward_server(cache, self.labels[rows])
        grad_bits = config.batch * config.embed_dim * config.float_bits
        for m in range(config.parties):
            channel.send_to_party(m, grad_h, bits=grad_bits)
        sgd_step(self.net, grads, config.eta)
        return loss


@dataclass
class TrainState:
    """Everything a run owns: actors, channel, meter, and bookkeeping."""

    config: VflConfig
    data: VerticalDataset
    parties: list[_Party]
    server: _Server
    channel: CommChannel
    ledger: CommLedger
    transcript: list[MaskedShare] = field(default_factory=list)
    keep_transcript: bool = False

    @property
    def party_nets(self) -> list[DenseNet]:
        return [p.net for p in self.parties]

    @property
    def server_net(self) -> DenseNet:
        return self.server.net


def init_state(
    config: VflConfig, data: VerticalDataset, keep_transcript: bool = False
) -> TrainState:
    """Build nets, deal seeds, and wire the channel for a fresh run."""
    if data.parties != config.parties:
        raise ValueError(
            f"config has {config.parties} parties but dataset has {data.parties}"
        )
    if config.batch > data.n_train:
        raise ValueError(
            f"batch {config.batch} exceeds {data.n_train} training rows"
        )
    if data.n_classes < 2:
        raise ValueError("need at least 2 classes to train a classifier")
    seeds = config.seeds
    party_nets = [
        make_party_net(
            block.shape[1],
            config.hidden,
            config.embed_dim,
            np.random.default_rng(np.random.SeedSequence((seeds.model, m))),
        )
        for m, block in enumerate(data.train_features)
    ]
    server_net = make_server_net(
        config.embed_dim,
        data.n_classes,
        np.random.default_rng(np.random.SeedSequence((seeds.model, config.parties))),
    )
    pair_rng = np.random.default_rng(
        np.random.SeedSequence((seeds.mechanism, _TAG_PAIR_SETUP))
    )
    all_pairs = list(deal_pairwise_seeds(config.parties, pair_rng).values())
    ledger = CommLedger()
    channel = CommChannel(meter=ledger.charge)
    parties = [
        _Party(
            idx=m,
            config=config,
            features=data.train_features[m],
            net=party_nets[m],
            pair_seeds=[s for s in all_pairs if m in (s.party_a, s.party_b)],
            mech_rng=np.random.default_rng(
                np.random.SeedSequence((seeds.mechanism, _TAG_PARTY_MECH, m))
            ),
        )
        for m in range(config.parties)
    ]
    server = _Server(config=config, labels=data.train_labels, net=server_net)
    return TrainState(
        config=config,
        data=data,
        parties=parties,
        server=server,
        channel=channel,
        ledger=ledger,
        keep_transcript=keep_transcript,
    )


def train_step(state: TrainState, t: int) -> float:
    """Run iteration t; returns the minibatch loss before the update."""
    config = state.config
    rows = sample_minibatch(
        config.seeds.minibatch, t, state.data.n_train, config.batch
    )
    for party in state.parties:
        party.send_embeddings(state.channel, t, rows)
    if state.keep_transcript and config.mode == "pbm":
        _capture_shares(state, t, rows)
    loss = state.server.aggregate_and_update(state.channel, t, rows)
    for party in state.parties:
        party.apply_gradient(state.channel)
    return loss


def _capture_shares(state: TrainState, t: int, rows: np.ndarray) -> None:
    """Copy the in-flight masked payloads into transcript records."""
    embed_dim = state.config.embed_dim
    for sender, payload in state.channel.peek_server_inbox():
        values = np.asarray(payload).ravel()
        for flat_idx, value in enumerate(values):
            row, coord = divmod(flat_idx, embed_dim)
            state.transcript.append(
                MaskedShare(
                    party=sender,
                    value=int(value),
                    round_idx=t,
                    sample=int(rows[row]),
                    coord=coord,
                )
            )


def evaluate(
    party_nets: list[DenseNet],
    server_net: DenseNet,
    feature_blocks: list[np.ndarray],
    labels: np.ndarray,
) -> tuple[float, float] | None:
    """Noiseless loss/accuracy of the composed model; None on an empty split."""
    if labels.size == 0:
        return None
    h = None
    for net, block in zip(party_nets, feature_blocks):
        emb, _ = forward_party(net, block)
        h = emb if h is None else h + emb
    loss, probs, _ = forward_server(server_net, h, labels)
    accuracy = float((probs.argmax(axis=1) == labels).mean())
    return loss, accuracy


def _privacy_columns(
    config: VflConfig, data: VerticalDataset, t: int
) -> tuple[float | None, float | None]:
    """Cumulative feature/sample budgets at alpha=2 after t+1 iterations."""
    if config.mode == "npq":
        return None, None
    alpha = 2.0
    feat = privacy.feature_budget(
        alpha=alpha,
        iters=t + 1,
        batch=config.batch,
        embed_dim=config.embed_dim,
        trials=config.pbm.trials,
        beta=config.pbm.beta,
        parties=config.parties,
        samples=data.n_train,
    ).eps
    if config.parties < 2:
        return feat, None
    factor = privacy.sample_group_factor(config.parties, alpha)
    return feat, feat * factor / alpha


def run_experiment(
    config: VflConfig,
    data: VerticalDataset,
    eval_every: int = 10,
    transcript_path: str | None = None,
) -> TrainTrace:
    """Train for config.iters iterations and return the per-iteration trace."""
    if eval_every < 1:
        raise ValueError(f"eval_every must be positive, got {eval_every}")
    state = init_state(config, data, keep_transcript=transcript_path is not None)
    trace = TrainTrace()
    for t in range(config.iters):
        started = time.perf_counter()
        loss = train_step(state, t)
        snap = state.ledger.end_iteration()
        train_eval = test_eval = None
        if (t + 1) % eval_every == 0 or t == config.iters - 1:
            train_eval = evaluate(
                state.party_nets, state.server_net, data.train_features, data.train_labels
            )
            test_eval = evaluate(
                state.party_nets, state.server_net, data.test_features, data.test_labels
            )
        eps_feat, eps_sample = _privacy_columns(config, data, t)
        trace.records.append(
            TrainRecord(
                iteration=t,
                epoch=(t + 1) * config.batch / data.n_train,
                loss=loss,
                train_acc=train_eval[1] if train_eval else None,
                test_acc=test_eval[1] if test_eval else None,
                up_bits=snap.up,
                down_bits=snap.down,
                cum_bits=snap.cumulative,
                eps_feat_alpha2=eps_feat,
                eps_sample_alpha2=eps_sample,
                wall_ms=(time.perf_counter() - started) * 1e3,
            )
        )
    if transcript_path is not None:
        write_transcript(transcript_path, state.transcript)
    return trace
