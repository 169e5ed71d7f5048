"""Detector training objectives over the tabular scoring model.

Two objectives are implemented, both differentiated in closed form with
respect to every logit of the table:

* the direct-discrepancy loss, which drives the analytic discrepancy of
  human text toward 0 and of machine text toward a margin ``gamma``:

      loss = mean_pairs( |d(x_h)| + |gamma - d(x_m)| )

* the preference loss with implicit KL-regularization of strength ``beta``
  against a frozen reference copy of the model:

      loss = -mean_pairs log sigmoid( beta * [ (log f(x_m) - log f_ref(x_m))
                                             - (log f(x_h) - log f_ref(x_h)) ] )

The discrepancy inside the first loss uses the analytic moments, which keeps
the objective deterministic and differentiable; sequences whose moment
standard deviation hits the degeneracy floor contribute a zero gradient.

The backward pass goes through the log-softmax, the per-position moment
sums, and the division by sigma.  With ``p`` the softmax row, ``l`` its log,
``m = sum p*l`` and ``e2 = sum p*l^2``, the per-row derivatives are

    d l_obs / d z_u = 1[u = obs] - p_u
    d m     / d z_u = p_u (l_u - m)
    d s2    / d z_u = p_u [ (l_u^2 - e2) + 2 (l_u - m)(1 - m) ]

and per-sequence sums chain through ``d = (L - mu)/sigma``.  Correctness is
pinned by central finite differences in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .discrepancy import EPSILON_SIGMA
from .logprob import TokenSequence
from .toymodel import ToyScoringModel, context_indices

Batch = list[TokenSequence]


class DegenerateBatch(RuntimeError):
    """Every sequence in the batch hit the sigma floor; no gradient exists."""


class NonFiniteLoss(RuntimeError):
    """Training aborted on a NaN/inf loss."""


@dataclass(frozen=True)
class SGD:
    pass


@dataclass(frozen=True)
class Adam:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


Optimizer = SGD | Adam


@dataclass(frozen=True)
class DDLConfig:
    gamma: float
    learning_rate: float = 0.01
    epochs: int = 200
    optimizer: Optimizer = field(default_factory=Adam)
    seed: int = 0

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be > 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")


@dataclass(frozen=True)
class DPOConfig:
    beta: float
    reference: ToyScoringModel | None = None  # None: snapshot the initial model
    learning_rate: float = 0.01
    epochs: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be > 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    mean_d_human: float
    mean_d_machine: float
    delta_d: float
    loss: float


@dataclass(frozen=True)
class TrainTrace:
    records: tuple[EpochRecord, ...]

    def __len__(self) -> int:
        return len(self.records)

    def delta_ds(self) -> np.ndarray:
        return np.array([r.delta_d for r in self.records])


# ---------------------------------------------------------------------------
# Batched forward/backward over the logits table.


def _batch_context_indices(order: int, vocab: int, toks: np.ndarray) -> np.ndarray:
    """Table row index per position for a (B, s) token batch."""
    b, s = toks.shape
    idx = np.zeros((b, s), dtype=np.int64)
    base = 1
    for back in range(1, order + 1):
        digit = np.full((b, s), vocab, dtype=np.int64)
        if s > back:
            digit[:, back:] = toks[:, :-back]
        idx += digit * base
        base *= vocab + 1
    return idx


class _PreparedGroup:
    """Constant per-batch tensors for the sequences of one common length."""

    __slots__ = ("indices", "tok", "ctx", "flat")

    def __init__(self, order: int, vocab: int, seqs: Batch, indices: list[int]):
        self.indices = indices
        self.tok = np.stack([seqs[i].as_array() for i in indices])
        self.ctx = _batch_context_indices(order, vocab, self.tok)
        # Flattened logits-table indices for bincount gradient accumulation.
        self.flat = (self.ctx[..., None] * vocab + np.arange(vocab)).ravel()


def _prepare(model: ToyScoringModel, seqs: Batch) -> list[_PreparedGroup]:
    by_len: dict[int, list[int]] = {}
    for i, s in enumerate(seqs):
        by_len.setdefault(len(s), []).append(i)
    return [
        _PreparedGroup(model.order, model.vocab, seqs, by_len[length])
        for length in sorted(by_len)
    ]


class _GroupState:
    """Forward intermediates for one prepared group."""

    __slots__ = ("prep", "P", "DLM", "S2", "L", "mu", "sigma", "degenerate")

    def __init__(self, logits: np.ndarray, prep: _PreparedGroup):
        self.prep = prep
        Z = logits[prep.ctx]
        m = Z.max(axis=-1, keepdims=True)
        LS = Z - (m + np.log(np.sum(np.exp(Z - m), axis=-1, keepdims=True)))
        P = np.exp(LS)
        self.P = P
        l_obs = np.take_along_axis(LS, prep.tok[..., None], axis=-1)[..., 0]
        self.L = l_obs.sum(axis=1)
        M = np.sum(P * LS, axis=-1)
        # centered log-probs keep constant rows at an exact zero variance
        self.DLM = LS - M[..., None]
        self.S2 = np.sum(P * self.DLM * self.DLM, axis=-1)
        self.mu = M.sum(axis=1)
        self.sigma = np.sqrt(self.S2.sum(axis=1))
        self.degenerate = self.sigma < EPSILON_SIGMA


def _scatter(grad: np.ndarray, prep: _PreparedGroup, rows: np.ndarray) -> None:
    grad += np.bincount(prep.flat, weights=rows.ravel(), minlength=grad.size).reshape(
        grad.shape
    )


class _Forward:
    """Analytic discrepancies of a batch, retaining what backward needs."""

    def __init__(self, model: ToyScoringModel, seqs: Batch, prepared=None):
        self.vocab = model.vocab
        prepared = prepared if prepared is not None else _prepare(model, seqs)
        self.groups = [_GroupState(model.logits, p) for p in prepared]
        n = sum(len(g.prep.indices) for g in self.groups)
        self.d = np.zeros(n)
        self.loglik = np.zeros(n)
        self.degenerate = np.zeros(n, dtype=bool)
        for g in self.groups:
            safe_sigma = np.where(g.degenerate, 1.0, g.sigma)
            d = np.where(g.degenerate, 0.0, (g.L - g.mu) / safe_sigma)
            self.d[g.prep.indices] = d
            self.loglik[g.prep.indices] = g.L
            self.degenerate[g.prep.indices] = g.degenerate

    def add_discrepancy_grad(self, grad: np.ndarray, g_d: np.ndarray) -> None:
        """Accumulate d(loss)/d(logits) given upstream d(loss)/d(d) per sequence."""
        for g in self.groups:
            up = np.asarray(g_d)[g.prep.indices].copy()
            up[g.degenerate] = 0.0  # degenerate rule: flat zero
            if not np.any(up):
                continue
            sigma = np.where(g.degenerate, 1.0, g.sigma)
            gL = up / sigma
            gmu = -gL
            gvar = -up * (g.L - g.mu) / (2.0 * sigma**3)
            one_hot = np.zeros_like(g.P)
            np.put_along_axis(one_hot, g.prep.tok[..., None], 1.0, axis=-1)
            rows = (
                gL[:, None, None] * (one_hot - g.P)
                + gmu[:, None, None] * g.P * g.DLM
                + gvar[:, None, None]
                * g.P
                * (g.DLM * g.DLM + 2.0 * g.DLM - g.S2[..., None])
            )
            _scatter(grad, g.prep, rows)

    def add_loglik_grad(self, grad: np.ndarray, g_L: np.ndarray) -> None:
        """Accumulate gradients through the sequence log-likelihood only."""
        for g in self.groups:
            up = np.asarray(g_L)[g.prep.indices]
            if not np.any(up):
                continue
            one_hot = np.zeros_like(g.P)
            np.put_along_axis(one_hot, g.prep.tok[..., None], 1.0, axis=-1)
            rows = up[:, None, None] * (one_hot - g.P)
            _scatter(grad, g.prep, rows)


def batch_discrepancies(model: ToyScoringModel, seqs: Batch) -> np.ndarray:
    """Analytic discrepancy of every sequence under the toy model."""
    return _Forward(model, seqs).d


def batch_logliks(model: ToyScoringModel, seqs: Batch) -> np.ndarray:
    """Sequence log-likelihood of every sequence under the toy model."""
    return _Forward(model, seqs).loglik


# ---------------------------------------------------------------------------
# Losses.


def _ddl_terms(d_h: np.ndarray, d_m: np.ndarray, gamma: float):
    """Loss plus per-sequence upstream gradients for the direct loss."""
    n_h, n_m = len(d_h), len(d_m)
    loss = float(np.abs(d_h).sum() / n_h + np.abs(gamma - d_m).sum() / n_m)
    g_h = np.sign(d_h) / n_h
    g_m = -np.sign(gamma - d_m) / n_m
    return loss, g_h, g_m


def ddl_loss(
    model: ToyScoringModel,
    hwt_batch: Batch,
    mgt_batch: Batch,
    gamma: float,
    _prepared: tuple | None = None,
) -> tuple[float, np.ndarray]:
    """Direct-discrepancy loss and its exact gradient w.r.t. every logit.

    With equal batch sizes the loss is the mean over pairs of
    ``|d(x_h)| + |gamma - d(x_m)|``; unequal sizes average each side
    separately (identical when sizes match).
    """
    if gamma <= 0:
        raise ValueError("gamma must be > 0")
    if not hwt_batch or not mgt_batch:
        raise ValueError("batches must be nonempty")
    prep_h, prep_m = _prepared if _prepared else (None, None)
    fw_h = _Forward(model, hwt_batch, prep_h)
    fw_m = _Forward(model, mgt_batch, prep_m)
    if fw_h.degenerate.all() and fw_m.degenerate.all():
        raise DegenerateBatch("every sequence hit the sigma floor")
    loss, g_h, g_m = _ddl_terms(fw_h.d, fw_m.d, gamma)
    grad = np.zeros_like(model.logits)
    fw_h.add_discrepancy_grad(grad, g_h)
    fw_m.add_discrepancy_grad(grad, g_m)
    return loss, grad


def dpo_loss(
    model: ToyScoringModel,
    reference: ToyScoringModel,
    hwt_batch: Batch,
    mgt_batch: Batch,
    beta: float,
    _prepared: tuple | None = None,
) -> tuple[float, np.ndarray]:
    """Preference loss with implicit KL strength ``beta``; gradients w.r.t.
    the model logits only (the reference stays frozen)."""
    if beta <= 0:
        raise ValueError("beta must be > 0")
    if len(hwt_batch) != len(mgt_batch):
        raise ValueError("preference pairs need equally sized batches")
    if not hwt_batch:
        raise ValueError("batches must be nonempty")
    if (reference.order, reference.vocab) != (model.order, model.vocab):
        raise ValueError("reference must share the model's shape")
    prep_h, prep_m = _prepared if _prepared else (None, None)
    fw_h = _Forward(model, hwt_batch, prep_h)
    fw_m = _Forward(model, mgt_batch, prep_m)
    ref_h = _Forward(reference, hwt_batch, prep_h).loglik
    ref_m = _Forward(reference, mgt_batch, prep_m).loglik
    margin = beta * ((fw_m.loglik - ref_m) - (fw_h.loglik - ref_h))
    loss = float(np.mean(np.logaddexp(0.0, -margin)))  # -log sigmoid(margin)
    g_margin = -_sigmoid(-margin) / len(hwt_batch)
    grad = np.zeros_like(model.logits)
    fw_m.add_loglik_grad(grad, g_margin * beta)
    fw_h.add_loglik_grad(grad, -g_margin * beta)
    return loss, grad


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


# ---------------------------------------------------------------------------
# Training loop.


class _AdamState:
    def __init__(self, shape, params: Adam):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0
        self.params = params

    def step(self, table: np.ndarray, grad: np.ndarray, lr: float) -> None:
        p = self.params
        self.t += 1
        self.m = p.beta1 * self.m + (1 - p.beta1) * grad
        self.v = p.beta2 * self.v + (1 - p.beta2) * grad * grad
        m_hat = self.m / (1 - p.beta1**self.t)
        v_hat = self.v / (1 - p.beta2**self.t)
        table -= lr * m_hat / (np.sqrt(v_hat) + p.eps)


def _as_batches(data) -> tuple[Batch, Batch]:
    if isinstance(data, tuple):
        human, machine = data
    else:
        human, machine = data.human, data.machine
    return list(human), list(machine)


def train(
    model: ToyScoringModel, data, config: DDLConfig | DPOConfig
) -> tuple[ToyScoringModel, TrainTrace]:
    """Full-batch training; deterministic given the config and seed.

    ``data`` is a (human, machine) pair of sequence lists or any object with
    ``human`` / ``machine`` attributes.  Returns a trained copy of the model
    (the input is untouched) and a per-epoch trace of the batch mean
    discrepancies, their gap, and the loss, all evaluated after each update.
    """
    human, machine = _as_batches(data)
    if not human or not machine:
        raise ValueError("training data must provide both corpora")
    trained = model.copy()
    prep_h = _prepare(trained, human)
    prep_m = _prepare(trained, machine)
    if isinstance(config, DPOConfig):
        reference = (config.reference or model).copy()
        ref_h = _Forward(reference, human, prep_h).loglik
        ref_m = _Forward(reference, machine, prep_m).loglik
        optimizer: Optimizer = Adam()
    else:
        reference = None
        optimizer = config.optimizer
    adam = _AdamState(trained.logits.shape, optimizer) if isinstance(optimizer, Adam) else None

    records: list[EpochRecord] = []
    for epoch in range(config.epochs):
        if isinstance(config, DDLConfig):
            loss, grad = ddl_loss(
                trained, human, machine, config.gamma, _prepared=(prep_h, prep_m)
            )
        else:
            loss, grad = dpo_loss(
                trained, reference, human, machine, config.beta,
                _prepared=(prep_h, prep_m),
            )
        if not math.isfinite(loss):
            raise NonFiniteLoss(f"loss became {loss} at epoch {epoch}")
        if adam is not None:
            adam.step(trained.logits, grad, config.learning_rate)
        else:
            trained.logits -= config.learning_rate * grad

        fw_h = _Forward(trained, human, prep_h)
        fw_m = _Forward(trained, machine, prep_m)
        if isinstance(config, DDLConfig):
            post_loss, _, _ = _ddl_terms(fw_h.d, fw_m.d, config.gamma)
        else:
            margin = config.beta * ((fw_m.loglik - ref_m) - (fw_h.loglik - ref_h))
            post_loss = float(np.mean(np.logaddexp(0.0, -margin)))
        records.append(
            EpochRecord(
                epoch=epoch,
                mean_d_human=float(fw_h.d.mean()),
                mean_d_machine=float(fw_m.d.mean()),
                delta_d=float(fw_m.d.mean() - fw_h.d.mean()),
                loss=post_loss,
            )
        )
    return trained, TrainTrace(tuple(records))


# ---------------------------------------------------------------------------
# Synthetic paired corpora.


@dataclass(frozen=True)
class SynthCorpora:
    """Paired sequences: ``machine`` sampled sharp, ``human`` sampled flat."""

    human: list[TokenSequence]
    machine: list[TokenSequence]
    generator: ToyScoringModel


def _sample_corpus(
    rng: np.random.Generator,
    table: np.ndarray,
    order: int,
    vocab: int,
    s: int,
    count: int,
    temperature: float,
) -> list[TokenSequence]:
    window = np.full((count, max(order, 1)), vocab, dtype=np.int64)  # pad-filled
    out = np.empty((count, s), dtype=np.int64)
    powers = (vocab + 1) ** np.arange(order, dtype=np.int64)
    for i in range(s):
        idx = (window[:, :order] * powers).sum(axis=1) if order else np.zeros(count, np.int64)
        z = table[idx] / temperature
        z = z - z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        u = rng.random((count, 1))
        tok = (np.cumsum(p, axis=1) < u).sum(axis=1)
        tok = np.minimum(tok, vocab - 1)
        out[:, i] = tok
        if order:
            window = np.roll(window, 1, axis=1)
            window[:, 0] = tok
    return [TokenSequence(tuple(row)) for row in out]


def synth_task(
    seed: int,
    v: int = 16,
    order: int = 1,
    s: int = 64,
    count: int = 200,
    machine_temp: float = 0.5,
    human_temp: float = 1.5,
    logit_scale: float = 1.0,
) -> SynthCorpora:
    """Desk-scale stand-in for paired human/machine corpora.

    One random generator table is drawn per seed; "machine" sequences come
    from a sharpened (low-temperature) version of it and "human" sequences
    from a flattened (high-temperature) one.  Temperature 1.0 on both sides
    makes the corpora distributionally identical.  Byte-identical per seed.
    """
    if v < 2:
        raise ValueError("v must be >= 2")
    rng = np.random.default_rng(seed)
    table = rng.normal(0.0, logit_scale, size=((v + 1) ** order, v))
    machine = _sample_corpus(rng, table, order, v, s, count, machine_temp)
    human = _sample_corpus(rng, table, order, v, s, count, human_temp)
    return SynthCorpora(human=human, machine=machine, generator=ToyScoringModel(order, v, table))
