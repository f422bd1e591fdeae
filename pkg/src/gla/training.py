"""Training loops for the alignment variants, plus the optimizer and suites.

All loops follow the same shape: named seed sub-streams, per-epoch shuffled
minibatch schedules (one pass over the larger domain, cycling the smaller),
a single taped forward/backward per update, and a per-epoch report row. The
adversarial variant splits each minibatch into three phased updates instead
of one.
"""

from dataclasses import dataclass, asdict, replace

import numpy as np

from .autodiff import Tape, add, backward, constant, scale_by_constant, softmax_rows
from .datasets import DomainPair
from .losses import (
    dal,
    dal_direct,
    entropy_loss,
    feature_norms,
    kld_direct,
    kld_to_prior,
    mcd_discrepancy,
    recon,
    safn_feature_norm,
    softmax_cross_entropy,
)
from .metrics import RunReport, accuracy, energy_distance, moment_distance
from .model import build_model


class TrainError(ValueError):
    """Raised for invalid configs, schedules, or optimizer inputs."""


_OPTIMIZERS = ("adam", "sgd")
_DECODER_FINALS = ("relu", "none")

# Variants sharing the single-backward loop (classification + entropy core
# with an optional alignment pair); the adversarial and feature-norm variants
# have dedicated loops, and dal_only trains the autoencoder alone.
_ENT_FAMILY = (
    "dfa_ent",
    "source_only",
    "source_only_ent",
    "ablation_untied",
    "ablation_kld_both",
    "ablation_daldir",
    "ablation_klddir",
    "ablation_klddir_recon",
)
_VARIANTS = _ENT_FAMILY + ("dfa_mcd", "dfa_safn", "dal_only")

# Ablation study rows, numbered in the reporting order used by the suite.
ABLATION_VARIANTS = {
    1: "dfa_ent",
    2: "ablation_untied",
    3: "ablation_kld_both",
    4: "ablation_daldir",
    5: "ablation_klddir",
    6: "ablation_klddir_recon",
}

_ADAM_BETA1 = 0.9
_ADAM_BETA2 = 0.999
_ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    alpha: float = 0.01
    beta: float = 10.0
    kappa: float = 1.0
    delta_r: float = 1.0
    lr: float = 2e-4
    batch: int = 128
    epochs: int = 300
    seed: int = 0
    optimizer: str = "adam"
    mcd_inner_n: int = 4
    variant: str = "dfa_ent"
    decoder_final: str = "none"
    hidden_widths: tuple = (56, 128, 256)
    classifier_hidden: int = 64

    def __post_init__(self):
        if self.lr <= 0:
            raise TrainError("lr must be positive")
        if self.batch < 2:
            raise TrainError("batch must be at least 2")
        if self.epochs < 1:
            raise TrainError("epochs must be at least 1")
        if self.mcd_inner_n < 1:
            raise TrainError("mcd_inner_n must be at least 1")
        if self.optimizer not in _OPTIMIZERS:
            raise TrainError(f"unknown optimizer {self.optimizer!r}")
        if self.variant not in _VARIANTS:
            raise TrainError(f"unknown variant {self.variant!r}")
        if self.decoder_final not in _DECODER_FINALS:
            raise TrainError(f"unknown decoder_final {self.decoder_final!r}")
        for name in ("alpha", "beta", "kappa", "delta_r"):
            if getattr(self, name) < 0:
                raise TrainError(f"{name} must be non-negative")
        self.hidden_widths = tuple(int(w) for w in self.hidden_widths)

    def echo(self) -> dict:
        d = asdict(self)
        d["hidden_widths"] = list(self.hidden_widths)
        return d


def make_streams(seed: int) -> dict:
    """Named independent sub-streams derived from one master seed."""
    children = np.random.SeedSequence(seed).spawn(4)
    return dict(zip(("data", "init", "batch", "prior"), children))


class OptimizerState:
    """Per-parameter first/second moment slots for adam; empty for sgd."""

    def __init__(self, kind: str = "adam"):
        if kind not in _OPTIMIZERS:
            raise TrainError(f"unknown optimizer {kind!r}")
        self.kind = kind
        self.slots = {}


def optimizer_step(state: OptimizerState, params, grads, lr: float):
    """Apply one update in place; parameters absent from ``grads`` are skipped."""
    for p in params:
        g = grads.get(p.node)
        if g is None:
            continue
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.data.shape:
            raise TrainError(
                f"gradient shape {g.shape} does not match parameter shape {p.data.shape}"
            )
        if state.kind == "sgd":
            p.data -= lr * g
            continue
        slot = state.slots.get(p.node)
        if slot is None:
            slot = {"m": np.zeros_like(p.data), "v": np.zeros_like(p.data), "t": 0}
            state.slots[p.node] = slot
        slot["t"] += 1
        slot["m"] = _ADAM_BETA1 * slot["m"] + (1.0 - _ADAM_BETA1) * g
        slot["v"] = _ADAM_BETA2 * slot["v"] + (1.0 - _ADAM_BETA2) * g * g
        m_hat = slot["m"] / (1.0 - _ADAM_BETA1 ** slot["t"])
        v_hat = slot["v"] / (1.0 - _ADAM_BETA2 ** slot["t"])
        p.data -= lr * m_hat / (np.sqrt(v_hat) + _ADAM_EPS)
    return params


def _weighted_sum(terms):
    """Sum of (scalar tensor, weight) pairs. Zero weights stay in the graph
    so their values are reported while contributing exactly zero gradient."""
    total = None
    for t, w in terms:
        node = t if w == 1.0 else scale_by_constant(t, float(w))
        total = node if total is None else add(total, node)
    return total


def _epoch_schedules(rng, n_source: int, n_target: int, m: int):
    """Shuffled index schedules for one epoch: ``steps`` batches of exactly
    ``m`` rows per domain. The larger domain is passed once (tail dropped),
    the smaller cycles through fresh shuffles."""
    big = max(n_source, n_target)
    if m > big:
        raise TrainError(f"batch size {m} larger than the bigger domain ({big} samples)")
    steps = big // m
    total = steps * m

    def schedule(n):
        chunks = []
        count = 0
        while count < total:
            chunks.append(rng.permutation(n))
            count += n
        return np.concatenate(chunks)[:total]

    return schedule(n_source), schedule(n_target), steps


def variant_losses(bundle, variant, xs, ys, xt, alpha, beta, prior_batch=None):
    """Single-backward objective for the entropy-family variants.

    Returns the total loss tensor plus the unweighted component values. Must
    run inside a Tape. ``prior_batch`` pins the noise draw (used by gradient
    checks); training lets the bundle's own prior stream sample.
    """
    comps = {"loss_cls": 0.0, "loss_ent": 0.0, "loss_kld": 0.0, "loss_dal": 0.0, "loss_recon": 0.0}
    z_s = bundle.encode(xs, mode="train")
    l_cls = softmax_cross_entropy(bundle.classify(z_s), ys)
    terms = [(l_cls, 1.0)]
    comps["loss_cls"] = l_cls.item()

    if variant == "source_only":
        return _weighted_sum(terms), comps

    z_t = bundle.encode(xt, mode="train")
    l_ent = entropy_loss(bundle.classify(z_t))
    terms.append((l_ent, 1.0))
    comps["loss_ent"] = l_ent.item()

    if variant in ("dfa_ent", "ablation_untied"):
        l_kld = kld_to_prior(z_s)
        terms.append((l_kld, alpha))
        comps["loss_kld"] = l_kld.item()
        xhat_t = bundle.decode(z_t, mode="train")
        noise = constant(np.asarray(prior_batch)) if prior_batch is not None else bundle.sample_prior(len(xt))
        xhat_n = bundle.decode(noise, mode="train")
        l_dal = dal(xhat_t, xhat_n)
        terms.append((l_dal, beta))
        comps["loss_dal"] = l_dal.item()
    elif variant == "ablation_kld_both":
        l_kld_s = kld_to_prior(z_s)
        l_kld_t = kld_to_prior(z_t)
        terms += [(l_kld_s, alpha), (l_kld_t, alpha)]
        comps["loss_kld"] = l_kld_s.item() + l_kld_t.item()
    elif variant == "ablation_daldir":
        xhat_s = bundle.decode(z_s, mode="train")
        xhat_t = bundle.decode(z_t, mode="train")
        l_dir = dal_direct(xhat_s, xhat_t)
        terms.append((l_dir, beta))
        comps["loss_dal"] = l_dir.item()
    elif variant in ("ablation_klddir", "ablation_klddir_recon"):
        l_kd = kld_direct(z_s, z_t)
        terms.append((l_kd, alpha))
        comps["loss_kld"] = l_kd.item()
        if variant == "ablation_klddir_recon":
            xhat_s = bundle.decode(z_s, mode="train")
            xhat_t = bundle.decode(z_t, mode="train")
            l_rec_s = recon(xhat_s, constant(np.asarray(xs, dtype=np.float64)))
            l_rec_t = recon(xhat_t, constant(np.asarray(xt, dtype=np.float64)))
            terms += [(l_rec_s, 1.0), (l_rec_t, 1.0)]
            comps["loss_recon"] = l_rec_s.item() + l_rec_t.item()
    # source_only_ent adds nothing beyond the entropy term
    return _weighted_sum(terms), comps


def evaluate_target_accuracy(bundle, data: DomainPair, head: int = 1) -> float:
    """Eval-mode accuracy on the full target set (counted label read)."""
    labels = data.evaluation_target_labels()
    if labels is None:
        raise TrainError("dataset has no target labels to evaluate")
    classify = bundle.classify if head == 1 else bundle.classify2
    logits = classify(bundle.encode(data.target_points, mode="eval"))
    return accuracy(logits, labels)


def repair_dead_units(bundle, points) -> int:
    """Sign-flip encoder weight rows whose unit never fires on ``points``.

    He-initialized relu stacks leave roughly 10-20% of hidden units inactive
    on every input of a dataset (the weight row is anti-aligned with the
    non-negative activation cone of the previous layer), and an inactive unit
    receives no gradient, so it stays dead for the whole run and contributes
    a collapsed latent dimension. Negating such a row makes the unit fire on
    at least one point while preserving the initialization law exactly
    (zero-mean normals are sign-symmetric). Untied decoder copies are flipped
    in lockstep so construction equality survives. Layers are repaired in
    forward order so each decision sees the repaired activations of the
    previous stage. Returns the number of rows flipped.
    """
    enc = bundle.encoder
    mirrors = {} if bundle.decoder.tied else {
        id(enc.fc3.W): bundle.decoder.stage_W[0],
        id(enc.fc2.W): bundle.decoder.stage_W[1],
        id(enc.fc1.W): bundle.decoder.stage_W[2],
    }
    h = np.asarray(points, dtype=np.float64)
    flipped = 0
    for layer in (enc.fc1, enc.fc2, enc.fc3):
        pre = h @ layer.W.data.T + layer.b.data
        dead = pre.max(axis=0) <= 0.0
        if dead.any():
            layer.W.data[dead] *= -1.0
            mirror = mirrors.get(id(layer.W))
            if mirror is not None:
                mirror.data[dead] *= -1.0
            pre[:, dead] *= -1.0
            flipped += int(dead.sum())
        h = np.maximum(pre, 0.0)
    return flipped


def _build_bundle(data_or_width, cfg, *, two_classifiers=False, tied=True, streams=None, n_classes=None):
    streams = streams if streams is not None else make_streams(cfg.seed)
    if isinstance(data_or_width, DomainPair):
        n_classes = data_or_width.n_classes
        input_width = data_or_width.source_points.shape[1]
    else:
        input_width = int(data_or_width)
    bundle = build_model(
        n_classes,
        streams["init"],
        input_width=input_width,
        hidden_widths=cfg.hidden_widths,
        classifier_hidden=cfg.classifier_hidden,
        decoder_final=cfg.decoder_final,
        tied=tied,
        two_classifiers=two_classifiers,
        seed_label=cfg.seed,
    )
    if isinstance(data_or_width, DomainPair):
        repair_dead_units(
            bundle,
            np.vstack([data_or_width.source_points, data_or_width.target_points]),
        )
    return bundle


def initial_bundle(data: DomainPair, cfg: TrainConfig):
    """The exact model state a run with ``cfg`` would start from (same init
    stream, same dead-unit repair), for before/after comparisons."""
    return _build_bundle(
        data,
        cfg,
        tied=(cfg.variant != "ablation_untied"),
        two_classifiers=(cfg.variant == "dfa_mcd"),
    )


def _finish_report(report, cfg):
    accs = [row["accuracy"] for row in report.rows]
    report.summary.update(
        variant=cfg.variant,
        final_accuracy=accs[-1],
        best_accuracy=max(accs),
    )
    return report


def train_dfa_ent(data: DomainPair, cfg: TrainConfig):
    """Single-backward loop covering dfa_ent, the baselines, and ablations."""
    if cfg.variant not in _ENT_FAMILY:
        raise TrainError(f"variant {cfg.variant!r} does not use the entropy-family loop")
    view = data.train_view()
    if view.source_labels is None:
        raise TrainError("training requires source labels")
    streams = make_streams(cfg.seed)
    bundle = _build_bundle(data, cfg, tied=(cfg.variant != "ablation_untied"), streams=streams)
    params = bundle.parameters()
    state = OptimizerState(cfg.optimizer)
    batch_rng = np.random.default_rng(streams["batch"])
    report = RunReport(cfg.echo(), cfg.seed)
    n_s, n_t = len(view.source_points), len(view.target_points)

    for epoch in range(cfg.epochs):
        sched_s, sched_t, steps = _epoch_schedules(batch_rng, n_s, n_t, cfg.batch)
        sums = {"loss_cls": 0.0, "loss_ent": 0.0, "loss_kld": 0.0, "loss_dal": 0.0, "loss_recon": 0.0}
        for k in range(steps):
            rows_s = sched_s[k * cfg.batch : (k + 1) * cfg.batch]
            rows_t = sched_t[k * cfg.batch : (k + 1) * cfg.batch]
            xs, ys = view.source_points[rows_s], view.source_labels[rows_s]
            xt = view.target_points[rows_t]
            with Tape():
                total, comps = variant_losses(bundle, cfg.variant, xs, ys, xt, cfg.alpha, cfg.beta)
                grads = backward(total)
            optimizer_step(state, params, grads, cfg.lr)
            for key in sums:
                sums[key] += comps[key]
        report.add_row(
            epoch=epoch,
            **{key: sums[key] / steps for key in sums},
            accuracy=evaluate_target_accuracy(bundle, data),
        )
    report.summary["tying_gap_max"] = max(bundle.tying_gaps())
    return bundle, _finish_report(report, cfg)


# ------------------------------------------------------------------ mcd

def _classifier_params(bundle):
    named = bundle.classifier.named_parameters("classifier")
    named += bundle.classifier2.named_parameters("classifier2")
    return [p for _, p in named]


def _both_heads_cross_entropy(bundle, z_s, ys):
    return add(
        softmax_cross_entropy(bundle.classify(z_s), ys),
        softmax_cross_entropy(bundle.classify2(z_s), ys),
    )


def _head_disagreement(bundle, z_t):
    p1 = softmax_rows(bundle.classify(z_t))
    p2 = softmax_rows(bundle.classify2(z_t))
    return mcd_discrepancy(p1, p2)


def mcd_phase1(bundle, state, xs, ys, alpha, lr):
    """Supervised step: update encoder and both heads on source."""
    with Tape():
        z_s = bundle.encode(xs, mode="train")
        l_cls = _both_heads_cross_entropy(bundle, z_s, ys)
        l_kld = kld_to_prior(z_s)
        total = _weighted_sum([(l_cls, 1.0), (l_kld, alpha)])
        grads = backward(total)
    optimizer_step(state, bundle.encoder.parameters() + _classifier_params(bundle), grads, lr)
    return {"loss_cls": l_cls.item(), "loss_kld": l_kld.item()}


def mcd_phase2(bundle, state, xs, ys, xt, alpha, lr):
    """Head step with the encoder frozen: stay accurate on source while
    maximizing the heads' disagreement on target."""
    with Tape():
        z_s = bundle.encode(xs, mode="train")
        l_cls = _both_heads_cross_entropy(bundle, z_s, ys)
        z_t = bundle.encode(xt, mode="train")
        l_adv = _head_disagreement(bundle, z_t)
        l_kld = kld_to_prior(z_s)
        total = _weighted_sum([(l_cls, 1.0), (l_adv, -1.0), (l_kld, alpha)])
        grads = backward(total)
    optimizer_step(state, _classifier_params(bundle), grads, lr)
    return {"loss_cls": l_cls.item(), "loss_adv": l_adv.item()}


def mcd_phase3(bundle, state, xt, beta, lr, prior_batch=None):
    """Generator step with the heads frozen: shrink the disagreement and pull
    decoded target toward decoded noise."""
    with Tape():
        z_t = bundle.encode(xt, mode="train")
        l_adv = _head_disagreement(bundle, z_t)
        xhat_t = bundle.decode(z_t, mode="train")
        noise = constant(np.asarray(prior_batch)) if prior_batch is not None else bundle.sample_prior(len(xt))
        xhat_n = bundle.decode(noise, mode="train")
        l_dal = dal(xhat_t, xhat_n)
        total = _weighted_sum([(l_adv, 1.0), (l_dal, beta)])
        grads = backward(total)
    optimizer_step(state, bundle.encoder.parameters() + bundle.decoder.parameters(), grads, lr)
    return {"loss_adv": l_adv.item(), "loss_dal": l_dal.item()}


def train_dfa_mcd(data: DomainPair, cfg: TrainConfig):
    """Three-phase adversarial loop; target accuracy is read from head 1."""
    if cfg.variant != "dfa_mcd":
        raise TrainError(f"variant {cfg.variant!r} does not use the adversarial loop")
    view = data.train_view()
    if view.source_labels is None:
        raise TrainError("training requires source labels")
    streams = make_streams(cfg.seed)
    bundle = _build_bundle(data, cfg, two_classifiers=True, streams=streams)
    state = OptimizerState(cfg.optimizer)
    batch_rng = np.random.default_rng(streams["batch"])
    report = RunReport(cfg.echo(), cfg.seed)
    n_s, n_t = len(view.source_points), len(view.target_points)
    f_params = _classifier_params(bundle)
    g_params = bundle.encoder.parameters()
    first_step = True

    for epoch in range(cfg.epochs):
        sched_s, sched_t, steps = _epoch_schedules(batch_rng, n_s, n_t, cfg.batch)
        sums = {"loss_cls": 0.0, "loss_kld": 0.0, "loss_adv": 0.0, "loss_dal": 0.0}
        for k in range(steps):
            rows_s = sched_s[k * cfg.batch : (k + 1) * cfg.batch]
            rows_t = sched_t[k * cfg.batch : (k + 1) * cfg.batch]
            xs, ys = view.source_points[rows_s], view.source_labels[rows_s]
            xt = view.target_points[rows_t]

            if first_step:
                g_before = [p.data.copy() for p in g_params]
            p1 = mcd_phase1(bundle, state, xs, ys, cfg.alpha, cfg.lr)
            if first_step:
                g_before = [p.data.copy() for p in g_params]
            mcd_phase2(bundle, state, xs, ys, xt, cfg.alpha, cfg.lr)
            if first_step:
                assert all(
                    np.array_equal(p.data, b) for p, b in zip(g_params, g_before)
                ), "encoder moved during the head-only phase"
                f_before = [p.data.copy() for p in f_params]
            adv = dal_sum = 0.0
            for _ in range(cfg.mcd_inner_n):
                p3 = mcd_phase3(bundle, state, xt, cfg.beta, cfg.lr)
                adv += p3["loss_adv"]
                dal_sum += p3["loss_dal"]
            if first_step:
                assert all(
                    np.array_equal(p.data, b) for p, b in zip(f_params, f_before)
                ), "heads moved during the generator phase"
                first_step = False
            sums["loss_cls"] += p1["loss_cls"]
            sums["loss_kld"] += p1["loss_kld"]
            sums["loss_adv"] += adv / cfg.mcd_inner_n
            sums["loss_dal"] += dal_sum / cfg.mcd_inner_n
        disc = _head_disagreement(bundle, bundle.encode(data.target_points, mode="eval")).item()
        report.add_row(
            epoch=epoch,
            **{key: sums[key] / steps for key in sums},
            discrepancy=disc,
            accuracy=evaluate_target_accuracy(bundle, data, head=1),
        )
    report.summary["tying_gap_max"] = max(bundle.tying_gaps())
    return bundle, _finish_report(report, cfg)


# ------------------------------------------------------------------ safn

def _feature_norm_values(bundle, points):
    """Per-sample classifier hidden norms under current weights; train-mode
    batch statistics without touching the running estimates."""
    z = bundle.encode(points, mode="train", track=False)
    _, hidden = bundle.classify(z, return_hidden=True)
    return np.sqrt(np.sum(hidden.data**2, axis=1) + 1e-12)


def train_dfa_safn(data: DomainPair, cfg: TrainConfig):
    """Feature-norm loop: norms are pulled up by delta_r from per-sample
    cached values; caches start lazy (first visit targets the current norm)
    and are refreshed with post-step weights after every update."""
    if cfg.variant != "dfa_safn":
        raise TrainError(f"variant {cfg.variant!r} does not use the feature-norm loop")
    view = data.train_view()
    if view.source_labels is None:
        raise TrainError("training requires source labels")
    streams = make_streams(cfg.seed)
    bundle = _build_bundle(data, cfg, streams=streams)
    params = bundle.parameters()
    state = OptimizerState(cfg.optimizer)
    batch_rng = np.random.default_rng(streams["batch"])
    report = RunReport(cfg.echo(), cfg.seed)
    n_s, n_t = len(view.source_points), len(view.target_points)
    cache_s = np.full(n_s, np.nan)
    cache_t = np.full(n_t, np.nan)

    for epoch in range(cfg.epochs):
        sched_s, sched_t, steps = _epoch_schedules(batch_rng, n_s, n_t, cfg.batch)
        sums = {"loss_cls": 0.0, "loss_ent": 0.0, "loss_safn": 0.0, "loss_kld": 0.0, "loss_dal": 0.0}
        norm_total = 0.0
        norm_count = 0
        for k in range(steps):
            rows_s = sched_s[k * cfg.batch : (k + 1) * cfg.batch]
            rows_t = sched_t[k * cfg.batch : (k + 1) * cfg.batch]
            xs, ys = view.source_points[rows_s], view.source_labels[rows_s]
            xt = view.target_points[rows_t]
            m_s, m_t = len(rows_s), len(rows_t)
            with Tape():
                z_s = bundle.encode(xs, mode="train")
                logits_s, hidden_s = bundle.classify(z_s, return_hidden=True)
                l_cls = softmax_cross_entropy(logits_s, ys)
                z_t = bundle.encode(xt, mode="train")
                logits_t, hidden_t = bundle.classify(z_t, return_hidden=True)
                l_ent = entropy_loss(logits_t)
                h_s = feature_norms(hidden_s)
                h_t = feature_norms(hidden_t)
                prev_s = np.where(np.isnan(cache_s[rows_s]), h_s.data[:, 0], cache_s[rows_s])
                prev_t = np.where(np.isnan(cache_t[rows_t]), h_t.data[:, 0], cache_t[rows_t])
                l_d_s = safn_feature_norm(prev_s, h_s, cfg.delta_r)
                l_d_t = safn_feature_norm(prev_t, h_t, cfg.delta_r)
                l_d = _weighted_sum([(l_d_s, m_s / (m_s + m_t)), (l_d_t, m_t / (m_s + m_t))])
                l_kld = kld_to_prior(z_s)
                xhat_t = bundle.decode(z_t, mode="train")
                xhat_n = bundle.decode(bundle.sample_prior(m_t), mode="train")
                l_dal = dal(xhat_t, xhat_n)
                total = _weighted_sum(
                    [(l_cls, 1.0), (l_ent, 1.0), (l_d, cfg.kappa), (l_kld, cfg.alpha), (l_dal, cfg.beta)]
                )
                grads = backward(total)
            optimizer_step(state, params, grads, cfg.lr)
            new_s = _feature_norm_values(bundle, xs)
            new_t = _feature_norm_values(bundle, xt)
            cache_s[rows_s] = new_s
            cache_t[rows_t] = new_t
            norm_total += new_s.sum() + new_t.sum()
            norm_count += m_s + m_t
            sums["loss_cls"] += l_cls.item()
            sums["loss_ent"] += l_ent.item()
            sums["loss_safn"] += l_d.item()
            sums["loss_kld"] += l_kld.item()
            sums["loss_dal"] += l_dal.item()
        report.add_row(
            epoch=epoch,
            **{key: sums[key] / steps for key in sums},
            mean_norm=norm_total / norm_count,
            accuracy=evaluate_target_accuracy(bundle, data),
        )
    report.summary["tying_gap_max"] = max(bundle.tying_gaps())
    return bundle, _finish_report(report, cfg)


# ------------------------------------------------------------------ dal_only

def train_dal_only(source_points, target_points, cfg: TrainConfig):
    """Distribution alignment alone: push decoded target latents onto the raw
    source cloud through the mean row-wise L1, no labels anywhere.

    Rows are paired by a fixed index bijection (target row j with source row
    j mod n_source), not re-paired per epoch.
    """
    if cfg.variant != "dal_only":
        raise TrainError(f"variant {cfg.variant!r} does not use the alignment-only loop")
    source_points = np.asarray(source_points, dtype=np.float64)
    target_points = np.asarray(target_points, dtype=np.float64)
    streams = make_streams(cfg.seed)
    bundle = _build_bundle(source_points.shape[1], cfg, streams=streams, n_classes=2)
    repair_dead_units(bundle, np.vstack([source_points, target_points]))
    params = bundle.parameters()
    state = OptimizerState(cfg.optimizer)
    batch_rng = np.random.default_rng(streams["batch"])
    report = RunReport(cfg.echo(), cfg.seed)
    n_s, n_t = len(source_points), len(target_points)

    def predicted():
        return bundle.decode(bundle.encode(target_points, mode="eval"), mode="eval").data

    def clouds(pred):
        return {"source": source_points.copy(), "target": target_points.copy(), "predicted": pred}

    pred0 = predicted()
    report.artifacts["initial"] = clouds(pred0)

    for epoch in range(cfg.epochs):
        _, sched_t, steps = _epoch_schedules(batch_rng, n_s, n_t, cfg.batch)
        loss_sum = 0.0
        for k in range(steps):
            rows_t = sched_t[k * cfg.batch : (k + 1) * cfg.batch]
            xt = target_points[rows_t]
            xs_pair = source_points[rows_t % n_s]
            with Tape():
                xhat = bundle.decode(bundle.encode(xt, mode="train"), mode="train")
                loss = dal(xhat, constant(xs_pair))
                grads = backward(loss)
            optimizer_step(state, params, grads, cfg.lr)
            loss_sum += loss.item()
        report.add_row(epoch=epoch, loss_dal=loss_sum / steps)

    pred1 = predicted()
    report.artifacts["final"] = clouds(pred1)
    mean0, cov0 = moment_distance(pred0, source_points)
    mean1, cov1 = moment_distance(pred1, source_points)
    report.summary.update(
        variant=cfg.variant,
        initial_energy=energy_distance(pred0, source_points),
        final_energy=energy_distance(pred1, source_points),
        initial_mean_gap=mean0,
        final_mean_gap=mean1,
        initial_cov_gap=cov0,
        final_cov_gap=cov1,
        final_loss=report.rows[-1]["loss_dal"],
    )
    return bundle, report


# ------------------------------------------------------------------ suites

def run_ablation_suite(data: DomainPair, cfg: TrainConfig, variants=None):
    """Train every requested ablation variant under identical budgets and
    seed; returns one row per variant in the requested order."""
    ids = tuple(variants) if variants is not None else tuple(sorted(ABLATION_VARIANTS))
    rows = []
    for vid in ids:
        if vid not in ABLATION_VARIANTS:
            raise TrainError(f"unknown ablation variant id {vid!r}")
        name = ABLATION_VARIANTS[vid]
        _, rep = train_dfa_ent(data, replace(cfg, variant=name))
        rows.append({
            "id": int(vid),
            "variant": name,
            "accuracy": rep.summary["final_accuracy"],
            "best_accuracy": rep.summary["best_accuracy"],
        })
    return rows


def sensitivity_sweep(data: DomainPair, alphas, betas, cfg: TrainConfig):
    """Grid of (alpha, beta) runs; returns accuracy per grid point."""
    alphas = list(alphas)
    betas = list(betas)
    if not alphas or not betas:
        raise TrainError("sweep grids must be non-empty")
    rows = []
    for a in alphas:
        for b in betas:
            _, rep = train_dfa_ent(data, replace(cfg, alpha=float(a), beta=float(b)))
            rows.append({"alpha": float(a), "beta": float(b), "accuracy": rep.summary["final_accuracy"]})
    return rows
