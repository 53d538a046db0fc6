"""Pathwise gradients of the minibatch ELBO, Adam, the training loop and checkpoints."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import zipfile
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .corpus import Corpus, Vocabulary
from .decoder import PROB_FLOOR, ModelParams, word_topic_backward
from .elbo import KL_C_MODES, CstemParams, ElboBreakdown, minibatch_elbo
from .encoder import EncoderParams, encode_backward
from .priors import Priors, default_priors

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    num_topics: int = 20
    embed_dim: int = 50
    hidden: int = 100
    batch_size: int = 100
    epochs: int = 100
    learning_rate: float = 2e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    mc_samples: int = 1
    alpha: float | list | None = None
    gamma: float | list | None = None
    kl_c_scaling: str = "full"
    epsilon: float = 1e-4
    normalize_input: bool = False
    init_scale: float = 0.1
    c_init_offset: float = 0.0

    def __post_init__(self):
        for name in ("num_topics", "embed_dim", "hidden", "batch_size", "mc_samples"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1 and self.adam_eps > 0):
            raise ValueError("invalid Adam hyperparameters")
        if self.kl_c_scaling not in KL_C_MODES:
            raise ValueError(f"kl_c_scaling must be one of {KL_C_MODES}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# gradient
# ---------------------------------------------------------------------------

def gradient(batch, params: CstemParams, priors: Priors, n_total: int, eps_c, zeta,
             kl_c_scaling: str = "full", normalize_input: bool = False
             ) -> tuple[ElboBreakdown, dict[str, np.ndarray]]:
    """ELBO and its exact gradient with respect to every trainable array, for fixed noise.

    Gradient keys match :meth:`CstemParams.named_arrays`.
    """
    out, cache = minibatch_elbo(batch, params, priors, n_total, eps_c, zeta, kl_c_scaling,
                                normalize_input, return_cache=True)
    model = params.model
    x, post = cache.x, cache.post
    L = len(cache.samples)
    scale = cache.scale
    w = scale / L

    pt = priors.theta
    d_mu = -scale * (post.mu - pt.mean) / pt.var
    d_ls = -scale * (np.exp(2.0 * post.log_sigma) / pt.var - 1.0)
    sigma = np.exp(post.log_sigma)

    g_model = {k: np.zeros_like(v) for k, v in model.arrays().items()}
    sigma_c = np.exp(params.log_sigma_c)
    d_mu_c = np.zeros_like(params.mu_c)
    d_lsc = np.zeros_like(params.log_sigma_c)

    for l, (dec_cache, pi, p) in enumerate(cache.samples):
        G = np.where(p >= PROB_FLOOR, w * x / np.maximum(p, PROB_FLOOR), 0.0)
        A = dec_cache.A
        dA = G.T @ pi
        dpi = G @ A
        dtheta = pi * (dpi - np.sum(dpi * pi, axis=1, keepdims=True))
        d_mu += dtheta
        d_ls += dtheta * sigma * cache.zeta[l]
        gm, dc = word_topic_backward(dec_cache, model, dA)
        for k in g_model:
            g_model[k] += gm[k]
        d_mu_c += dc
        d_lsc += dc * sigma_c * cache.eps_c[l]

    pc = priors.c
    d_mu_c -= cache.kl_c_weight * (params.mu_c - pc.mean) / pc.var
    d_lsc -= cache.kl_c_weight * (sigma_c**2 / pc.var - 1.0)

    grads = dict(g_model)
    enc = encode_backward(cache.enc_cache, params.encoder, d_mu, d_ls)
    grads.update({f"enc.{k}": v for k, v in enc.items()})
    grads["mu_c"] = d_mu_c
    grads["log_sigma_c"] = d_lsc
    return out, grads


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

class Adam:
    """Adam with bias correction, taking ascent steps (the ELBO is maximized)."""

    def __init__(self, lr=2e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """Update ``params`` in place."""
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in params.items():
            g = grads[name]
            if p.shape != g.shape:
                raise ValueError(f"gradient shape mismatch for {name}: {g.shape} vs {p.shape}")
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p += self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def adam_step(params, grads, moments, t, config: TrainConfig):
    """Functional form of one Adam step: returns (new_params, (m, v), t + 1)."""
    opt = Adam(config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps)
    opt.m = {k: np.array(v) for k, v in moments[0].items()}
    opt.v = {k: np.array(v) for k, v in moments[1].items()}
    opt.t = t
    new = {k: np.array(v, dtype=float) for k, v in params.items()}
    opt.step(new, grads)
    return new, (opt.m, opt.v), opt.t


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

_FIXED_ZIP_TIME = (1980, 1, 1, 0, 0, 0)


def _write_npz(path, arrays: dict[str, np.ndarray]) -> None:
    # Fixed timestamps and order keep the file byte-for-byte reproducible.
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            info = zipfile.ZipInfo(name + ".npy", date_time=_FIXED_ZIP_TIME)
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            zf.writestr(info, buf.getvalue())


@dataclass
class Checkpoint:
    params: CstemParams
    config: TrainConfig
    vocab: Vocabulary
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    epoch: int = 0
    position: int = 0
    perm: np.ndarray | None = None
    rng_state: dict | None = None
    history: list[dict] = field(default_factory=list)

    def priors(self) -> Priors:
        return default_priors(self.config.num_topics, self.vocab.size, self.config.alpha, self.config.gamma)

    def save(self, path) -> None:
        meta = {
            "format": "cstem-checkpoint",
            "version": CHECKPOINT_VERSION,
            "config": self.config.to_dict(),
            "config_hash": self.config.digest(),
            "vocab": list(self.vocab.tokens),
            "epsilon": self.params.model.epsilon,
            "distance": self.params.model.distance.value,
            "step": self.step,
            "epoch": self.epoch,
            "position": self.position,
            "rng_state": self.rng_state,
            "history": self.history,
        }
        arrays = {f"param/{k}": v for k, v in self.params.named_arrays().items()}
        arrays.update({f"adam_m/{k}": v for k, v in self.adam_m.items()})
        arrays.update({f"adam_v/{k}": v for k, v in self.adam_v.items()})
        if self.perm is not None:
            arrays["state/perm"] = np.asarray(self.perm, dtype=np.int64)
        arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
        _write_npz(path, arrays)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(data["meta"].tobytes().decode())
            if meta.get("format") != "cstem-checkpoint":
                raise ValueError(f"{path} is not a checkpoint")
            if meta["version"] != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {meta['version']}")
            groups: dict[str, dict[str, np.ndarray]] = {"param": {}, "adam_m": {}, "adam_v": {}, "state": {}}
            for key in data.files:
                if "/" in key:
                    group, name = key.split("/", 1)
                    groups[group][name] = data[key]
        config = TrainConfig.from_dict(meta["config"])
        if config.digest() != meta["config_hash"]:
            raise ValueError("config hash mismatch")
        p = groups["param"]
        model = ModelParams(p["word_emb"], p["topic_mu"], p["topic_log_scale"], meta["epsilon"], meta["distance"])
        enc = EncoderParams(**{k[4:]: v for k, v in p.items() if k.startswith("enc.")})
        params = CstemParams(model, enc, p["mu_c"], p["log_sigma_c"])
        return cls(params, config, Vocabulary(tuple(meta["vocab"])), groups["adam_m"], groups["adam_v"],
                   meta["step"], meta["epoch"], meta["position"], groups["state"].get("perm"),
                   meta["rng_state"], meta["history"])


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

class Trainer:
    """Stateful runner for minibatch training; every random draw comes from one seeded generator."""

    def __init__(self, corpus: Corpus, config: TrainConfig, word_emb: np.ndarray | None = None,
                 dump_dir=None):
        if len(corpus) == 0:
            raise ValueError("cannot train on an empty corpus")
        self.corpus = corpus
        self.config = config
        self.dump_dir = dump_dir
        self.rng = np.random.default_rng(config.seed)
        V = corpus.vocab.size
        self.priors = default_priors(config.num_topics, V, config.alpha, config.gamma)
        if word_emb is None:
            word_emb = config.init_scale * self.rng.standard_normal((V, config.embed_dim))
        elif word_emb.shape != (V, config.embed_dim):
            raise ValueError(f"embedding matrix has shape {word_emb.shape}, expected {(V, config.embed_dim)}")
        self.params = CstemParams.init(word_emb, config.num_topics, config.hidden, self.priors, self.rng,
                                       config.epsilon)
        self.params.mu_c += config.c_init_offset
        self.opt = Adam(config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps)
        self.epoch = 0
        self.position = 0
        self.perm: np.ndarray | None = None
        self.history: list[dict] = []
        self.clamp_events = 0
        self.floor_events = 0
        self._X = corpus.dense()

    @classmethod
    def resume(cls, ckpt: Checkpoint, corpus: Corpus, dump_dir=None) -> "Trainer":
        if tuple(ckpt.vocab.tokens) != tuple(corpus.vocab.tokens):
            raise ValueError("corpus vocabulary differs from the checkpoint's")
        self = cls.__new__(cls)
        self.corpus = corpus
        self.config = ckpt.config
        self.dump_dir = dump_dir
        self.rng = np.random.default_rng()
        self.rng.bit_generator.state = ckpt.rng_state
        self.priors = ckpt.priors()
        self.params = ckpt.params.copy()
        cfg = ckpt.config
        self.opt = Adam(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
        self.opt.m = {k: v.copy() for k, v in ckpt.adam_m.items()}
        self.opt.v = {k: v.copy() for k, v in ckpt.adam_v.items()}
        self.opt.t = ckpt.step
        self.epoch = ckpt.epoch
        self.position = ckpt.position
        self.perm = None if ckpt.perm is None else np.array(ckpt.perm)
        self.history = [dict(h) for h in ckpt.history]
        self.clamp_events = 0
        self.floor_events = 0
        self._X = corpus.dense()
        return self

    def checkpoint(self) -> Checkpoint:
        p = self.params.copy()
        return Checkpoint(p, self.config, self.corpus.vocab,
                          {k: v.copy() for k, v in self.opt.m.items()},
                          {k: v.copy() for k, v in self.opt.v.items()},
                          self.opt.t, self.epoch, self.position,
                          None if self.perm is None else self.perm.copy(),
                          self.rng.bit_generator.state, [dict(h) for h in self.history])

    @property
    def step_count(self) -> int:
        return self.opt.t

    def _next_batch(self) -> np.ndarray:
        N = len(self.corpus)
        if self.perm is None or self.position >= N:
            self.perm = self.rng.permutation(N)
            self.position = 0
        rows = self.perm[self.position:self.position + self.config.batch_size]
        self.position += len(rows)
        return rows

    def step(self) -> ElboBreakdown:
        """One training iteration: draw noise, differentiate, take an Adam step."""
        cfg = self.config
        rows = self._next_batch()
        x = self._X[rows]
        L, V, K = cfg.mc_samples, self.corpus.vocab.size, cfg.num_topics
        eps_c = self.rng.standard_normal((L, V))
        zeta = self.rng.standard_normal((L, len(rows), K))
        out, grads = gradient(x, self.params, self.priors, len(self.corpus), eps_c, zeta,
                              cfg.kl_c_scaling, cfg.normalize_input)
        self.clamp_events += out.clamped
        self.floor_events += out.floored
        if not np.isfinite(out.total) or not all(np.all(np.isfinite(g)) for g in grads.values()):
            self._diverged("non-finite objective or gradient", out, rows)
        named = self.params.named_arrays()
        self.opt.step(named, grads)
        bad = [k for k, v in named.items() if not np.all(np.isfinite(v))]
        if bad:
            self._diverged(f"non-finite parameters after update: {bad}", out, rows)
        return out

    def _diverged(self, why, out, rows):
        msg = (f"training diverged at step {self.opt.t} (epoch {self.epoch}): {why}; "
               f"elbo={out.total!r} kl_c={out.kl_c!r} kl_theta={out.kl_theta_batch!r} recon={out.recon_batch!r}")
        if self.dump_dir is not None:
            dump = Path(self.dump_dir) / f"diverged-step{self.opt.t}.npz"
            self.checkpoint().save(dump)
            np.save(Path(self.dump_dir) / f"diverged-step{self.opt.t}-rows.npy", rows)
            msg += f"; state dumped to {dump}"
        raise TrainingDiverged(msg)

    def run_epoch(self) -> dict:
        """Finish the current pass over the corpus and return its metrics row.

        Each minibatch total is an estimate of the corpus ELBO, so the row
        reports their mean over the epoch.
        """
        N = len(self.corpus)
        sums = np.zeros(4)
        n_batches = 0
        while True:
            out = self.step()
            sums += (out.total, out.kl_c, out.kl_theta_batch, out.recon_batch)
            n_batches += 1
            if self.position >= N:
                break
        self.epoch += 1
        elbo, kl_c, kl_theta, recon = (float(v) for v in sums / n_batches)
        row = {"epoch": self.epoch, "elbo": elbo, "elbo_per_token": elbo / self.corpus.num_tokens,
               "kl_c": kl_c, "kl_theta": kl_theta, "recon": recon}
        self.history.append(row)
        return row


METRIC_FIELDS = ("epoch", "elbo", "elbo_per_token", "kl_c", "kl_theta", "recon", "heldout_perplexity")


def write_metrics(history: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_FIELDS, extrasaction="ignore")
        writer.writeheader()
        for row in history:
            writer.writerow({k: row.get(k, "") for k in METRIC_FIELDS})


def train(corpus: Corpus, config: TrainConfig, word_emb: np.ndarray | None = None,
          heldout: Corpus | None = None, metrics_path=None, dump_dir=None) -> Checkpoint:
    """Run ``config.epochs`` epochs and return the final checkpoint."""
    from .evaluate import perplexity

    trainer = Trainer(corpus, config, word_emb, dump_dir=dump_dir)
    for _ in range(config.epochs):
        row = trainer.run_epoch()
        if heldout is not None and len(heldout):
            row["heldout_perplexity"] = perplexity(heldout, trainer.params, trainer.priors,
                                                   seed=config.seed, normalize_input=config.normalize_input)
        logger.info("epoch %d elbo/token %.4f kl_c %.3f", row["epoch"], row["elbo_per_token"], row["kl_c"])
        if metrics_path is not None:
            write_metrics(trainer.history, metrics_path)
    return trainer.checkpoint()
