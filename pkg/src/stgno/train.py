"""Class-balanced training, metrics, the multi-seed runner and checkpoints."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tape
from .errors import (CheckpointError, ContractError, DataError,
                     DivergenceError, ParameterError)
from .ioutil import atomic_write_text, dump_json, read_json
from .models import (DISPLAY_NAMES, ModelConfig, ModelParams, init_params,
                     model_forward)
from .pipeline import GraphSample

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    num_runs: int = 10
    class_weighting: bool = True

    def validate(self) -> None:
        if self.epochs < 1 or self.num_runs < 1:
            raise ParameterError("epochs and num_runs must be >= 1")
        if not self.learning_rate > 0:
            raise ParameterError("learning_rate must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ParameterError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class Metrics:
    """Evaluation of one pass: confusion rows are true classes, columns
    predicted."""

    confusion: np.ndarray
    accuracy: float
    per_class_f1: tuple[float, ...]
    macro_f1: float
    weighted_f1: float

    def to_json_dict(self) -> dict:
        return {
            "confusion": self.confusion.tolist(),
            "accuracy": self.accuracy,
            "per_class_f1": list(self.per_class_f1),
            "macro_f1": self.macro_f1,
            "weighted_f1": self.weighted_f1,
        }


def metrics_from_confusion(confusion) -> Metrics:
    """Accuracy and F1 flavors as pure functions of the confusion matrix."""
    conf = np.asarray(confusion, dtype=np.int64)
    if conf.ndim != 2 or conf.shape[0] != conf.shape[1]:
        raise ContractError(f"confusion matrix must be square, got {conf.shape}")
    total = conf.sum()
    accuracy = float(np.trace(conf) / total) if total else 0.0
    f1s = []
    for c in range(conf.shape[0]):
        tp = conf[c, c]
        predicted = conf[:, c].sum()
        actual = conf[c, :].sum()
        precision = tp / predicted if predicted else 0.0
        recall = tp / actual if actual else 0.0
        f1s.append(2.0 * precision * recall / (precision + recall)
                   if precision + recall > 0 else 0.0)
    support = conf.sum(axis=1)
    weighted = float((support / total) @ np.array(f1s)) if total else 0.0
    return Metrics(confusion=conf, accuracy=accuracy,
                   per_class_f1=tuple(float(f) for f in f1s),
                   macro_f1=float(np.mean(f1s)), weighted_f1=weighted)


def class_weights(labels, num_classes: int = 3) -> np.ndarray:
    """Balanced weights w_c = N / (K * N_c); every class must be present."""
    labels = np.asarray(labels, dtype=np.int64)
    counts = np.bincount(labels, minlength=num_classes)
    if (counts == 0).any():
        missing = np.nonzero(counts == 0)[0].tolist()
        raise DataError(f"class(es) {missing} absent from the training labels")
    return counts.sum() / (num_classes * counts.astype(np.float64))


def weighted_cross_entropy(tape: Tape, logits: ad.Value, labels,
                           weights) -> ad.Value:
    """loss = -(sum_i w_{y_i} logsoftmax(logits_i)[y_i]) / sum_i w_{y_i}."""
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.data.shape
    if labels.shape != (n,):
        raise ContractError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise IndexError(f"label out of range [0, {c})")
    w = np.asarray(weights, dtype=np.float64)[labels]
    pick = np.zeros((n, c))
    pick[np.arange(n), labels] = -w / w.sum()
    logp = ad.log_softmax_rows(tape, logits)
    return ad.sum_all(tape, ad.mul_const(tape, logp, pick))


class Adam:
    """First/second-moment update with bias correction; eps is added to the
    square root, so the first step from zero moments is exactly
    -lr * g / (|g| + eps). Grads are zeroed after each step."""

    def __init__(self, params: ModelParams, learning_rate: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in self.params.items():
            g = p.grad
            self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            self.v[name] = b2 * self.v[name] + (1.0 - b2) * g * g
            m_hat = self.m[name] / (1.0 - b1 ** self.t)
            v_hat = self.v[name] / (1.0 - b2 ** self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            p.zero_grad()


class Sgd:
    def __init__(self, params: ModelParams, learning_rate: float):
        self.params = params
        self.lr = learning_rate

    def step(self) -> None:
        for _name, p in self.params.items():
            p.data -= self.lr * p.grad
            p.zero_grad()


def make_optimizer(config: TrainConfig, params: ModelParams):
    if config.optimizer == "adam":
        return Adam(params, config.learning_rate, config.beta1, config.beta2,
                    config.eps)
    return Sgd(params, config.learning_rate)


def forward_sample(tape: Tape, config: ModelConfig, params: ModelParams,
                   sample: GraphSample) -> ad.Value:
    return model_forward(tape, config, params, sample.node_features,
                         graph=sample.graph, positions=sample.positions)


def train(model_config: ModelConfig, graphs: list[GraphSample],
          train_config: TrainConfig,
          epoch_callback=None) -> tuple[ModelParams, list[float]]:
    """Full-graph steps in a seeded shuffled order, one optimizer step per
    graph; returns the trained parameters and the mean-loss-per-epoch
    history. Deterministic per (configs, seed). ``epoch_callback``, when
    given, is called with (epoch_index, mean_loss) after every epoch."""
    train_config.validate()
    model_config.validate()
    if not graphs:
        raise ContractError("training requires a non-empty graph list")
    all_labels = np.concatenate([g.labels for g in graphs])
    if train_config.class_weighting:
        weights = class_weights(all_labels, model_config.num_classes)
    else:
        weights = np.ones(model_config.num_classes)
    params = init_params(model_config)
    optimizer = make_optimizer(train_config, params)
    rng = np.random.default_rng(train_config.seed)
    history: list[float] = []
    for epoch in range(train_config.epochs):
        order = rng.permutation(len(graphs))
        epoch_losses = []
        for idx in order:
            sample = graphs[idx]
            tape = Tape()
            logits = forward_sample(tape, model_config, params, sample)
            loss = weighted_cross_entropy(tape, logits, sample.labels, weights)
            value = float(loss.data[0, 0])
            if not math.isfinite(value):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, sample {sample.sample_id!r}")
            tape.backward(loss)
            optimizer.step()
            epoch_losses.append(value)
        history.append(float(np.mean(epoch_losses)))
        if epoch_callback is not None:
            epoch_callback(epoch, history[-1])
    return params, history


def evaluate(params: ModelParams, config: ModelConfig,
             graphs: list[GraphSample]) -> Metrics:
    """Argmax predictions per spot (ties go to the lowest class index),
    aggregated into one confusion matrix over all graphs."""
    if not graphs:
        raise ContractError("evaluate requires a non-empty graph list")
    c = config.num_classes
    confusion = np.zeros((c, c), dtype=np.int64)
    for sample in graphs:
        tape = Tape()
        logits = forward_sample(tape, config, params, sample)
        pred = logits.data.argmax(axis=1)
        np.add.at(confusion, (sample.labels, pred), 1)
    return metrics_from_confusion(confusion)


@dataclass
class RunReport:
    """Per-model mean and sample standard deviation over repeated runs."""

    rows: list[dict]
    base_seed: int
    num_runs: int
    f1_flavor: str = "macro"

    def to_json_dict(self) -> dict:
        return {
            "base_seed": self.base_seed,
            "num_runs": self.num_runs,
            "f1_flavor": self.f1_flavor,
            "models": self.rows,
        }

    def table(self) -> str:
        f1_label = "Macro-F1" if self.f1_flavor == "macro" else "Weighted-F1"
        header = ["Model", "Accuracy", f1_label, "Params"]
        lines = []
        for row in self.rows:
            lines.append([
                row["model"],
                f"{100 * row['mean_accuracy']:.2f} ± {100 * row['std_accuracy']:.2f} %",
                f"{100 * row['mean_f1']:.2f} ± {100 * row['std_f1']:.2f} %",
                str(row["param_count"]),
            ])
        widths = [max(len(header[i]), *(len(l[i]) for l in lines)) if lines
                  else len(header[i]) for i in range(4)]
        fmt = "  ".join(f"{{:<{w}}}" for w in widths)
        out = [fmt.format(*header)]
        out.extend(fmt.format(*line) for line in lines)
        return "\n".join(out) + "\n"


def _sample_std(values: list[float]) -> float:
    return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0


def run_experiment(model_configs: list[ModelConfig], train_graphs,
                   holdout_graphs, train_config: TrainConfig,
                   f1_flavor: str = "macro"):
    """num_runs independent train+evaluate cycles per model on a fixed
    split (run r uses seed base + r for both init and shuffling). Returns
    (RunReport, trained params per model per run)."""
    train_config.validate()
    if f1_flavor not in ("macro", "weighted"):
        raise ParameterError(f"unknown f1 flavor {f1_flavor!r}")
    rows = []
    trained: dict[str, list[ModelParams]] = {}
    for mc in model_configs:
        runs = []
        params_per_run = []
        for r in range(train_config.num_runs):
            seed = train_config.seed + r
            mc_r = replace(mc, init_seed=seed)
            tc_r = replace(train_config, seed=seed, num_runs=1)
            params, history = train(mc_r, train_graphs, tc_r)
            metrics = evaluate(params, mc_r, holdout_graphs)
            params_per_run.append(params)
            runs.append({
                "seed": seed,
                "accuracy": metrics.accuracy,
                "macro_f1": metrics.macro_f1,
                "weighted_f1": metrics.weighted_f1,
                "per_class_f1": list(metrics.per_class_f1),
                "confusion": metrics.confusion.tolist(),
                "loss_history": history,
            })
        f1_key = "macro_f1" if f1_flavor == "macro" else "weighted_f1"
        accs = [run["accuracy"] for run in runs]
        f1s = [run[f1_key] for run in runs]
        rows.append({
            "model": DISPLAY_NAMES[mc.kind],
            "kind": mc.kind,
            "param_count": init_params(mc).count(),
            "mean_accuracy": float(np.mean(accs)),
            "std_accuracy": _sample_std(accs),
            "mean_f1": float(np.mean(f1s)),
            "std_f1": _sample_std(f1s),
            "single_run": train_config.num_runs == 1,
            "runs": runs,
        })
        trained[mc.kind] = params_per_run
    report = RunReport(rows=rows, base_seed=train_config.seed,
                       num_runs=train_config.num_runs, f1_flavor=f1_flavor)
    return report, trained


# ---------------------------------------------------------------------------
# checkpoints


def _config_to_json(config: ModelConfig) -> dict:
    doc = asdict(config)
    doc["kernel_net_hidden"] = list(doc["kernel_net_hidden"])
    return doc


def _config_from_json(doc: dict) -> ModelConfig:
    doc = dict(doc)
    doc["kernel_net_hidden"] = tuple(doc.get("kernel_net_hidden", ()))
    try:
        return ModelConfig(**doc)
    except TypeError as exc:
        raise CheckpointError(f"bad model config in checkpoint: {exc}") from None


def save_checkpoint(path, params: ModelParams, config: ModelConfig,
                    preprocess: dict | None = None) -> None:
    """Versioned JSON: config block plus named parameter arrays. The
    optional preprocess block carries whatever the prediction path needs
    (gene list, radius, scaler, class names)."""
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "config": _config_to_json(config),
        "preprocess": preprocess or {},
        "params": {name: p.data.tolist() for name, p in params.items()},
    }
    atomic_write_text(path, dump_json(doc))


def load_checkpoint(path):
    """Load and validate -> (params, config, preprocess). Values reproduce
    the saved ones bit-for-bit."""
    doc = read_json(path)
    version = doc.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {version!r} (expected {CHECKPOINT_VERSION})")
    config = _config_from_json(doc.get("config", {}))
    config.validate()
    from .models import parameter_shapes  # local import to avoid cycle noise
    stored = doc.get("params", {})
    params = []
    expected = parameter_shapes(config)
    for name, shape in expected:
        if name not in stored:
            raise CheckpointError(f"checkpoint is missing parameter {name!r}")
        arr = np.array(stored[name], dtype=np.float64)
        if arr.shape != shape:
            raise CheckpointError(
                f"parameter {name!r} has shape {arr.shape}, config implies {shape}")
        params.append(Parameter(name, arr))
    extra = set(stored) - {name for name, _ in expected}
    if extra:
        raise CheckpointError(f"checkpoint has unexpected parameter(s) {sorted(extra)}")
    return ModelParams(params), config, doc.get("preprocess", {})
