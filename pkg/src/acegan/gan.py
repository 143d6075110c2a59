"""Conditional generator, dual-head discriminator and their training procedures.

Label conventions: the generator is conditioned on 0-3 (N, S, V, F). The
discriminator's softmax head has five outputs, the fifth (index 4) meaning
"generated"; ``classify`` reports that outcome as ``GENERATED`` (5) so it
lines up with AAMI label arrays where 4 is Q.
"""
from __future__ import annotations

import copy
import csv
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .beatgrid import GENERATED, M_DEFAULT, CouplingSet
from .errors import EmptyDataset, MissingClass
from .evalkit import frechet_distance
from .tensornet import (
    Adam,
    AvgPool,
    BatchNorm,
    Conv2d,
    Dense,
    Dropout,
    ElementwiseMultiply,
    Embedding,
    Flatten,
    MaxPool,
    ReLU,
    Sequential,
    container,
    cross_entropy,
    mse,
)

log = logging.getLogger(__name__)

NOISE_DIM = 100
GEN_CLASSES = 4
HEAD_CLASSES = 5
GENERATED_HEAD = 4
FEATURE_DIM = 150
CLASS_NAMES = ("N", "S", "V", "F")
# Generator outputs scale roughly with std**4, so 0.01 keeps generated matrices
# at the mV**2 scale of real ones. The discriminator needs 0.1: at 0.01 its
# class head stays at chance for thousands of iterations.
G_INIT_STD = 0.01
D_INIT_STD = 0.1


# ------------------------------------------------------------------ networks


class Generator:
    """label embedding * noise -> Dense(256, relu) -> BatchNorm -> two branches
    Dense(256, relu) -> Dense(M, linear); output is the outer product of the branches."""

    def __init__(self, seed: int = 0, M: int = M_DEFAULT, noise_dim: int = NOISE_DIM, hidden: int = 256,
                 n_classes: int = GEN_CLASSES, init_std: float = G_INIT_STD):
        rng = np.random.default_rng(seed)
        self.M, self.noise_dim, self.n_classes = M, noise_dim, n_classes
        self.embed = Embedding(n_classes, noise_dim, rng, init_std)
        self.merge = ElementwiseMultiply()
        self.fc = Dense(noise_dim, hidden, "relu", rng, init_std)
        self.bn = BatchNorm(hidden, momentum=0.8)
        self.branch_u = Sequential([Dense(hidden, hidden, "relu", rng, init_std), Dense(hidden, M, "linear", rng, init_std)])
        self.branch_v = Sequential([Dense(hidden, hidden, "relu", rng, init_std), Dense(hidden, M, "linear", rng, init_std)])
        self._uv = None

    def _parts(self):
        return {"embed": self.embed, "fc": self.fc, "bn": self.bn, "u": self.branch_u, "v": self.branch_v}

    def params(self):
        return {f"{n}.{k}": p for n, part in self._parts().items() for k, p in part.params().items()}

    def buffers(self):
        return {f"{n}.{k}": b for n, part in self._parts().items() for k, b in part.buffers().items()}

    def forward_factors(self, z, c, training=False):
        h = self.merge.forward(self.embed.forward(c), np.asarray(z, dtype=np.float64))
        h = self.bn.forward(self.fc.forward(h, training), training)
        u = self.branch_u.forward(h, training)
        v = self.branch_v.forward(h, training)
        self._uv = (u, v)
        return u, v

    def forward(self, z, c, training=False):
        u, v = self.forward_factors(z, c, training)
        return u[:, :, None] * v[:, None, :]

    def backward(self, grad):
        """``grad`` is d loss / d output matrix, shape ``(batch, M, M)``."""
        u, v = self._uv
        self._uv = None
        du = np.einsum("bij,bj->bi", grad, v)
        dv = np.einsum("bij,bi->bj", grad, u)
        self.backward_factors(du, dv)

    def backward_factors(self, du, dv):
        dh = self.branch_u.backward(du) + self.branch_v.backward(dv)
        dz_emb, _ = self.merge.backward(self.fc.backward(self.bn.backward(dh)))
        self.embed.backward(dz_emb)


class Discriminator:
    """Conv(8) -> MaxPool(2) -> Conv(10) -> AvgPool(3) -> Conv(5) -> Flatten -> Dense(150),
    ReLU after every hidden layer, dropout on the flatten output and the 150-unit layer;
    a softmax class head and (optionally) a linear validity unit share the 150 features."""

    def __init__(self, seed: int = 0, M: int = M_DEFAULT, n_classes: int = HEAD_CLASSES, validity: bool = True,
                 channels=(6, 16, 120), feature_dim: int = FEATURE_DIM, dropout: float = 0.5,
                 init_std: float = D_INIT_STD):
        rng = np.random.default_rng(seed)
        drop_rng = np.random.default_rng(rng.integers(2**63))
        c1, c2, c3 = channels
        self.M, self.n_classes, self.has_validity = M, n_classes, validity
        self.channels, self.feature_dim, self.dropout_rate = tuple(channels), feature_dim, dropout
        convs = Sequential([
            Conv2d(1, c1, 8, rng, init_std), ReLU(), MaxPool(2),
            Conv2d(c1, c2, 10, rng, init_std), ReLU(), AvgPool(3),
            Conv2d(c2, c3, 5, rng, init_std), ReLU(), Flatten(),
        ])
        flat = convs.output_shapes((1, 1, M, M))[-1][1]
        self.trunk = Sequential(convs.layers + [Dropout(dropout, drop_rng), Dense(flat, feature_dim, "relu", rng, init_std)])
        self.drop = Dropout(dropout, drop_rng)
        self.class_head = Dense(feature_dim, n_classes, "softmax", rng, init_std)
        self.validity_head = Dense(feature_dim, 1, "linear", rng, init_std) if validity else None

    def _parts(self):
        parts = {"trunk": self.trunk, "cls": self.class_head}
        if self.validity_head is not None:
            parts["val"] = self.validity_head
        return parts

    def params(self):
        return {f"{n}.{k}": p for n, part in self._parts().items() for k, p in part.params().items()}

    def buffers(self):
        return {}

    def forward(self, x, training=False):
        """Returns ``(class probabilities, validity or None, 150-d features)``."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 3:
            x = x[:, None]
        feats = self.trunk.forward(x, training)
        h = self.drop.forward(feats, training)
        probs = self.class_head.forward(h, training)
        validity = self.validity_head.forward(h, training)[:, 0] if self.validity_head is not None else None
        return probs, validity, feats

    def backward(self, dprobs, dvalidity=None, input_grad: bool = True):
        """Backpropagate head gradients; returns d loss / d input, shape ``(batch, M, M)``,
        or None when ``input_grad`` is false."""
        dh = self.class_head.backward(dprobs)
        if self.validity_head is not None:
            if dvalidity is None:
                dvalidity = np.zeros(dprobs.shape[0])
            dh = dh + self.validity_head.backward(np.asarray(dvalidity)[:, None])
        first = self.trunk.layers[0]
        first.skip_input_grad = not input_grad
        try:
            dx = self.trunk.backward(self.drop.backward(dh))
        finally:
            first.skip_input_grad = False
        return None if dx is None else dx[:, 0]

    def features(self, x, batch: int = 256):
        return self.predict(x, batch)[1]

    def predict(self, x, batch: int = 256):
        """Inference-mode class probabilities and features, in chunks."""
        probs, feats = [], []
        for s in range(0, len(x), batch):
            p, _, f = self.forward(x[s : s + batch], training=False)
            probs.append(p)
            feats.append(f)
        if not probs:
            return np.zeros((0, self.n_classes)), np.zeros((0, self.feature_dim))
        return np.concatenate(probs), np.concatenate(feats)


def build_generator(seed: int = 0, **kw) -> Generator:
    return Generator(seed, **kw)


def build_discriminator(seed: int = 0, **kw) -> Discriminator:
    return Discriminator(seed, **kw)


# ------------------------------------------------------------------ objectives


def head_loss(probs, validity, class_targets, validity_target):
    """MSE on the validity unit plus cross-entropy on the class head."""
    l_cls, d_probs = cross_entropy(probs, class_targets)
    if validity is None:
        return l_cls, d_probs, None
    l_val, d_val = mse(validity, validity_target)
    return l_val + l_cls, d_probs, d_val


def d_loss(D: Discriminator, real_x, real_labels, fake_x, s_real: float = 1.0, s_fake: float = 0.0,
           training: bool = False) -> float:
    pr, vr, _ = D.forward(real_x, training)
    pf, vf, _ = D.forward(fake_x, training)
    lr, _, _ = head_loss(pr, vr, real_labels, s_real)
    lf, _, _ = head_loss(pf, vf, np.full(len(fake_x), GENERATED_HEAD), s_fake)
    return lr + lf


def g_loss(G: Generator, D: Discriminator, z, c, s_real: float = 1.0, training: bool = False) -> float:
    x = G.forward(z, c, training)
    p, v, _ = D.forward(x, training)
    return head_loss(p, v, c, s_real)[0]


# ---------------------------------------------------------------- checkpoints


def network_state(net) -> dict[str, np.ndarray]:
    state = {f"param.{k}": p.data for k, p in net.params().items()}
    state.update({f"buffer.{k}": b for k, b in net.buffers().items()})
    return state


def load_network_state(net, state: dict[str, np.ndarray]) -> None:
    for k, p in net.params().items():
        arr = state[f"param.{k}"]
        if arr.shape != p.data.shape:
            raise ValueError(f"checkpoint entry {k} has shape {arr.shape}, expected {p.data.shape}")
        p.data[...] = arr
    for k, b in net.buffers().items():
        b[...] = state[f"buffer.{k}"]


def save_discriminator(path, D: Discriminator, optimizer: Adam | None = None, extra=None) -> None:
    state = network_state(D)
    state["meta.M"] = np.array(float(D.M))
    state["meta.n_classes"] = np.array(float(D.n_classes))
    state["meta.validity"] = np.array(float(D.has_validity))
    state["meta.channels"] = np.array(D.channels, dtype=float)
    state["meta.feature_dim"] = np.array(float(D.feature_dim))
    if optimizer is not None:
        state.update({f"adam.{k}": v for k, v in optimizer.state_dict().items()})
    state.update(extra or {})
    container.save(path, state)


def load_discriminator(path) -> Discriminator:
    state = container.load(path)
    D = Discriminator(
        0, M=int(state["meta.M"]), n_classes=int(state["meta.n_classes"]), validity=bool(state["meta.validity"]),
        channels=tuple(int(c) for c in state["meta.channels"]), feature_dim=int(state["meta.feature_dim"]),
    )
    load_network_state(D, state)
    return D


def save_generator(path, G: Generator, optimizer: Adam | None = None, extra=None) -> None:
    state = network_state(G)
    state["meta.M"] = np.array(float(G.M))
    state["meta.noise_dim"] = np.array(float(G.noise_dim))
    state["meta.hidden"] = np.array(float(G.fc.W.shape[1]))
    if optimizer is not None:
        state.update({f"adam.{k}": v for k, v in optimizer.state_dict().items()})
    state.update(extra or {})
    container.save(path, state)


def load_generator(path) -> Generator:
    state = container.load(path)
    G = Generator(0, M=int(state["meta.M"]), noise_dim=int(state["meta.noise_dim"]), hidden=int(state["meta.hidden"]))
    load_network_state(G, state)
    return G


# -------------------------------------------------------------------- training


@dataclass
class GanTrainConfig:
    iterations: int = 10000
    batch_size: int = 128
    lr: float = 0.0002
    beta1: float = 0.5
    beta2: float = 0.999
    g_updates: int = 2
    s_real: float = 1.0
    s_fake: float = 0.0
    telemetry_every: int = 100
    fd_samples_per_class: int = 400
    g_init_std: float = G_INIT_STD
    d_init_std: float = D_INIT_STD
    seed: int = 0

    def __post_init__(self):
        if self.batch_size % GEN_CLASSES:
            raise ValueError("batch_size must be divisible by 4")


TELEMETRY_FIELDS = ("iteration", "g_loss", "d_loss", "fd", "acc_N", "acc_S", "acc_V", "acc_F")


@dataclass
class GanResult:
    G: Generator
    D: Discriminator
    telemetry: list[dict] = field(default_factory=list)
    g_opt: Adam | None = None
    d_opt: Adam | None = None


def _sample_per_class(rng, class_idx, per_class):
    return np.concatenate([rng.choice(ix, size=per_class, replace=ix.size < per_class) for ix in class_idx])


def write_telemetry(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TELEMETRY_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(r[k])) if k != "iteration" else int(r[k])) for k in TELEMETRY_FIELDS})


def train_gan(pool: CouplingSet, config: GanTrainConfig, G: Generator | None = None, D: Discriminator | None = None,
              checkpoint_dir=None, progress=None) -> GanResult:
    """Adversarial training on a labelled common pool.

    Per iteration: one D update on a class-balanced real batch, one D update on
    a generated batch labelled "generated", then ``g_updates`` G updates that
    reuse the same noise and labels.
    """
    class_idx = [pool.indices_of(c) for c in range(GEN_CLASSES)]
    missing = [CLASS_NAMES[c] for c, ix in enumerate(class_idx) if ix.size == 0]
    if missing:
        raise MissingClass(f"common pool lacks classes {missing}")
    seeds = np.random.SeedSequence(config.seed).generate_state(3)
    G = G if G is not None else Generator(int(seeds[0]), M=pool.M, init_std=config.g_init_std)
    D = D if D is not None else Discriminator(int(seeds[1]), M=pool.M, init_std=config.d_init_std)
    rng = np.random.default_rng(int(seeds[2]))
    g_opt = Adam(G.params(), config.lr, config.beta1, config.beta2)
    d_opt = Adam(D.params(), config.lr, config.beta1, config.beta2)
    per_class = config.batch_size // GEN_CLASSES
    B = config.batch_size

    n_eval = config.fd_samples_per_class
    eval_real = _sample_per_class(rng, class_idx, n_eval)
    eval_z = rng.standard_normal((n_eval * GEN_CLASSES, G.noise_dim))
    eval_c = np.repeat(np.arange(GEN_CLASSES), n_eval)

    result = GanResult(G, D, [], g_opt, d_opt)
    t0 = time.time()
    for it in range(config.iterations):
        # D on real data
        idx = _sample_per_class(rng, class_idx, per_class)
        p, v, _ = D.forward(pool.matrices(idx), training=True)
        l_real, dp, dv = head_loss(p, v, pool.labels[idx], config.s_real)
        D.backward(dp, dv, input_grad=False)
        d_opt.step()

        # D on generated data
        z = rng.standard_normal((B, G.noise_dim))
        c = rng.integers(0, GEN_CLASSES, size=B)
        fake = G.forward(z, c, training=True)
        p, v, _ = D.forward(fake, training=True)
        l_fake, dp, dv = head_loss(p, v, np.full(B, GENERATED_HEAD), config.s_fake)
        D.backward(dp, dv, input_grad=False)
        d_opt.step()

        # G, twice on the same batch; D parameters are not stepped
        g_losses = []
        for _ in range(config.g_updates):
            fake = G.forward(z, c, training=True)
            p, v, _ = D.forward(fake, training=True)
            lg, dp, dv = head_loss(p, v, c, config.s_real)
            G.backward(D.backward(dp, dv))
            g_opt.step()
            g_losses.append(lg)

        if config.telemetry_every and (it + 1) % config.telemetry_every == 0:
            row = {"iteration": it + 1, "g_loss": float(np.mean(g_losses)), "d_loss": l_real + l_fake}
            row.update(_evaluate_gan(G, D, pool, eval_real, eval_z, eval_c))
            result.telemetry.append(row)
            log.info("it %d  g %.4f  d %.4f  fd %.4g  acc %s  (%.0fs)", it + 1, row["g_loss"], row["d_loss"],
                     row["fd"], [round(row[f"acc_{n}"], 3) for n in CLASS_NAMES], time.time() - t0)
            if progress is not None:
                progress(row)

    if checkpoint_dir is not None:
        save_gan(checkpoint_dir, result)
    return result


def _evaluate_gan(G, D, pool, eval_real, eval_z, eval_c) -> dict:
    probs, real_feats = D.predict(pool.matrices(eval_real))
    gen = G.forward(eval_z, eval_c, training=False)
    _, gen_feats = D.predict(gen)
    pred = np.argmax(probs, axis=1)
    labels = pool.labels[eval_real]
    out = {"fd": frechet_distance(real_feats, gen_feats)}
    for c, name in enumerate(CLASS_NAMES):
        m = labels == c
        out[f"acc_{name}"] = float(np.mean(pred[m] == c)) if m.any() else float("nan")
    return out


def save_gan(directory, result: GanResult) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_generator(directory / "generator.tnet", result.G, result.g_opt)
    save_discriminator(directory / "discriminator.tnet", result.D, result.d_opt)
    write_telemetry(directory / "telemetry.csv", result.telemetry)


# ------------------------------------------------------------------ sampling


def generate(G: Generator, c: int, n: int, seed: int = 0) -> CouplingSet:
    """``n`` coupling matrices conditioned on class ``c`` (inference-mode batch norm)."""
    if n == 0:
        return CouplingSet.empty(G.M)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, G.noise_dim))
    labels = np.full(n, int(c))
    u, v = G.forward_factors(z, labels, training=False)
    return CouplingSet(u, v, labels, ["generated"] * n, np.arange(n), ["generated"] * n)


# ------------------------------------------------------------------- fine-tune


@dataclass
class FinetuneConfig:
    target_accuracy: float = 0.99
    plateau_delta: float = 0.01
    plateau_epochs: int = 10
    max_epochs: int = 500
    batch_size: int = 128
    lr: float = 0.0002
    beta1: float = 0.5
    beta2: float = 0.999
    seed: int = 0


def should_stop(history: list[float], config: FinetuneConfig) -> bool:
    """Stop at the target accuracy, on a plateau (every accuracy in the last
    ``plateau_epochs`` epoch-to-epoch span within ``plateau_delta``), or at the cap."""
    if not history:
        return False
    if history[-1] >= config.target_accuracy or len(history) >= config.max_epochs:
        return True
    if len(history) > config.plateau_epochs:
        window = history[-(config.plateau_epochs + 1):]
        return max(window) - min(window) < config.plateau_delta
    return False


@dataclass
class FinetuneResult:
    classifier: Discriminator
    history: list[float]


def finetune(D: Discriminator, dataset: CouplingSet, config: FinetuneConfig) -> FinetuneResult:
    """Supervised training of a copy of ``D``; every sample is treated as real."""
    if len(dataset) == 0:
        raise EmptyDataset("fine-tune dataset is empty")
    clf = copy.deepcopy(D)
    rng = np.random.default_rng(config.seed)
    opt = Adam(clf.params(), config.lr, config.beta1, config.beta2)
    labels = dataset.labels
    history: list[float] = []
    while not should_stop(history, config):
        order = rng.permutation(len(dataset))
        for s in range(0, len(order), config.batch_size):
            idx = order[s : s + config.batch_size]
            p, v, _ = clf.forward(dataset.matrices(idx), training=True)
            _, dp, dv = head_loss(p, v, labels[idx], 1.0)
            clf.backward(dp, dv, input_grad=False)
            opt.step()
        pred, _ = classify(clf, dataset)
        history.append(float(np.mean(pred == labels)))
        log.debug("fine-tune epoch %d accuracy %.4f", len(history), history[-1])
    return FinetuneResult(clf, history)


def classify(classifier: Discriminator, data) -> tuple[np.ndarray, np.ndarray]:
    """Predicted labels (AAMI values, ``GENERATED`` for the fifth output) and 150-d features.

    ``data`` is a CouplingSet or an array of ``(n, M, M)`` matrices. Ties go to
    the lowest output index.
    """
    if isinstance(data, CouplingSet):
        probs, feats = [], []
        for s in range(0, len(data), 256):
            p, f = classifier.predict(data.matrices(np.arange(s, min(s + 256, len(data)))))
            probs.append(p)
            feats.append(f)
        probs = np.concatenate(probs) if probs else np.zeros((0, classifier.n_classes))
        feats = np.concatenate(feats) if feats else np.zeros((0, classifier.feature_dim))
    else:
        data = np.asarray(data, dtype=np.float64)
        if data.ndim == 2:
            data = data[None]
        probs, feats = classifier.predict(data)
    return head_to_label(np.argmax(probs, axis=1)), feats


def head_to_label(idx: np.ndarray) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.int64)
    return np.where(idx == GENERATED_HEAD, GENERATED, idx)


def config_dict(cfg) -> dict:
    return asdict(cfg)
