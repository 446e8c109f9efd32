"""Output heads, the differentiable prediction pipeline and committee training.

A head turns the switch logits into probabilities (sigmoid, clamp or InSi)
and optionally rounds them with PhyR. The remaining outputs are scaled and
completed into a full decision vector whose loss is backpropagated through
the completion map, the rounding layer and the network.
"""
from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.special import expit

from .completion import (FLOW_CAP, CompletionModel, DecisionVector, assemble_independents,
                         raw_gradient)
from .constraints import DEFAULT_BIG_M
from .errors import ConfigError, MissingLabels
from .grid import GridModel, cutoff_L
from .metrics import eval_metrics
from .nn import MLP, Adam
from .phyr import insi, insi_active, insi_grad, phyr_round

HEADS = ("InSi", "InSi2R", "ClaPhyR", "SiPhyR", "InSiPhyR")
PHYR_HEADS = ("ClaPhyR", "SiPhyR", "InSiPhyR")
MODES = ("unsupervised", "supervised", "supervised-pen")


@dataclass(frozen=True)
class TrainConfig:
    head: str = "SiPhyR"
    mode: str = "unsupervised"
    epochs: int = 1500
    batch_size: int = 200
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lambda_h: float = 100.0
    hidden: int = 5
    committee: int = 10
    seed: int = 0
    big_m: float = DEFAULT_BIG_M
    no_export: bool = False
    flow_cap: float = FLOW_CAP

    def __post_init__(self):
        if self.head not in HEADS:
            raise ConfigError(f"head must be one of {HEADS}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        for name in ("epochs", "batch_size", "lr", "hidden", "committee", "big_m", "flow_cap", "adam_eps"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.lambda_h < 0:
            raise ConfigError("lambda_h must be non-negative")
        if self.batch_size < 2:
            raise ConfigError("batch normalization needs batch_size >= 2")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("ADAM betas must lie in [0, 1)")

    @classmethod
    def for_grid(cls, grid_name: str, head: str = "SiPhyR", **overrides) -> "TrainConfig":
        """Width, epochs and learning rate used for each feeder and head family."""
        big = grid_name == "tpc94"
        base = dict(head=head, hidden=300 if big else 5, epochs=2500 if big else 1500,
                    lr=1e-3 if head in PHYR_HEADS else 1e-4)
        base.update(overrides)
        return cls(**base)

    def replace(self, **kw) -> "TrainConfig":
        return TrainConfig(**{**asdict(self), **kw})


def head_probs(head: str, logits):
    """Switch probabilities and their elementwise derivative."""
    if head == "SiPhyR":
        p = expit(logits)
        return p, p * (1.0 - p)
    if head == "ClaPhyR":
        return np.clip(logits, 0.0, 1.0), ((logits > 0.0) & (logits < 1.0)).astype(float)
    return insi(logits), insi_grad(logits)


def switch_states(head: str, p, L: int, mode: str):
    """Switch states from probabilities; returns ``(y, dy/dp, plan)``."""
    if head in PHYR_HEADS:
        y, plan = phyr_round(p, L, mode)
        return y, plan.free.astype(float), plan
    if head == "InSi2R" and mode == "inference":
        return (p >= 0.5).astype(float), np.zeros_like(p), None
    return p, np.ones_like(p), None


@dataclass
class HeadOutputs:
    """What committee members average: probabilities, InSi directions, raw continuous outputs."""

    p_y: np.ndarray
    z_ji: np.ndarray
    raw: np.ndarray


def _bounds(data):
    return data.p_gen_min, data.p_gen_max, data.q_gen_min, data.q_gen_max


def _supervised(cm: CompletionModel, dv: DecisionVector, labels):
    """Squared errors on voltage magnitude, dispatch and switch states; value and psi-gradient."""
    st = dv.state
    g = cm.grid
    vmag = np.sqrt(st.v)
    dv_err = vmag - np.sqrt(labels.v)
    dp = st.p_gen - labels.p_gen
    dq = st.q_gen - labels.q_gen
    dy = dv.topology.y - labels.y
    value = np.sum(dv_err**2 + dp**2 + dq**2, axis=-1) + np.sum(dy**2, axis=-1)
    grad = np.zeros(np.shape(st.v)[:-1] + (cm.imap.n_psi,))
    grad[..., cm.psi_slice("v")] = (dv_err / vmag)[..., g.non_pcc]
    grad[..., cm.psi_slice("p_gen")] = 2.0 * dp
    grad[..., cm.psi_slice("q_gen")] = 2.0 * dq
    grad[..., cm.psi_slice("y")] = 2.0 * dy
    return value, grad


def supervised_loss(grid: GridModel, dv: DecisionVector, labels, data=None, penalty: bool = False,
                    lambda_h: float = 100.0, model: CompletionModel | None = None):
    """Per-instance supervised loss; the penalty variant adds the squared hinge."""
    cm = model or CompletionModel(grid)
    value, _ = _supervised(cm, dv, labels)
    if penalty:
        if data is None:
            raise ValueError("the penalty variant needs scenario bounds")
        value = value + cm.penalty_and_grad(dv, _bounds(data), lambda_h)[0]
    return value


class Predictor:
    """One trained network plus its head configuration."""

    def __init__(self, grid: GridModel, config: TrainConfig, mlp: MLP, model: CompletionModel | None = None):
        self.grid = grid
        self.config = config
        self.mlp = mlp
        self.cm = model or CompletionModel(grid, config.big_m, config.no_export)
        self.imap = self.cm.imap
        self.L = cutoff_L(grid)
        n_in, _, n_out = mlp.shapes
        if n_in != 2 * (grid.node_count - 1) or n_out != self.imap.n_raw:
            raise ConfigError("network shape does not match the grid")

    @classmethod
    def create(cls, grid: GridModel, config: TrainConfig, seed: int, model=None) -> "Predictor":
        imap_raw = CompletionModel(grid, config.big_m, config.no_export) if model is None else model
        mlp = MLP.create(2 * (grid.node_count - 1), config.hidden, imap_raw.imap.n_raw, seed)
        return cls(grid, config, mlp, imap_raw)

    def head_outputs(self, x) -> HeadOutputs:
        raw, _ = self.mlp.forward(x, train=False)
        rs = self.imap.raw_slices
        p, _ = head_probs(self.config.head, raw[:, rs["y"]])
        return HeadOutputs(p, insi(raw[:, rs["z_ji"]]), raw)

    def decode(self, outs: HeadOutputs, data) -> DecisionVector:
        return decode(self.grid, self.config, self.cm, outs, data)

    def predict(self, data) -> DecisionVector:
        return self.decode(self.head_outputs(data.x), data)

    def batch_loss_and_grads(self, x, p_load, q_load, bounds, labels=None, update_stats: bool = True,
                             with_pattern: bool = False):
        """Mean training loss on a batch, parameter gradients and an activation-pattern key.

        The key changes whenever a piecewise branch of the pipeline flips,
        which is what a finite-difference check needs to know.
        """
        cfg = self.config
        g = self.grid
        rs = self.imap.raw_slices
        out, cache = self.mlp.forward(x, train=True, update_stats=update_stats)
        logits = out[:, rs["y"]]
        p, dp = head_probs(cfg.head, logits)
        y, dy, plan = switch_states(cfg.head, p, self.L, "train")
        pcc = g.pcc_node
        z, acache = assemble_independents(g, out, y, self.imap, p_load[:, pcc], q_load[:, pcc], cfg.flow_cap)
        psi, dv = self.cm.decision_flat(z, p_load, q_load)
        pen_h = None
        if cfg.mode == "unsupervised":
            f, gpsi = self.cm.objective_and_grad(dv)
            pen, gp = self.cm.penalty_and_grad(dv, bounds, cfg.lambda_h, psi)
            loss, gpsi = f + pen, gpsi + gp
            pen_h = True
        else:
            if labels is None:
                raise MissingLabels("supervised training needs oracle labels")
            loss, gpsi = _supervised(self.cm, dv, labels)
            if cfg.mode == "supervised-pen":
                pen, gp = self.cm.penalty_and_grad(dv, bounds, cfg.lambda_h, psi)
                loss, gpsi = loss + pen, gpsi + gp
                pen_h = True
        n = len(x)
        gz = self.cm.pullback(gpsi) / n
        graw, gy = raw_gradient(self.imap, gz, acache)
        graw[:, rs["y"]] = gy * dy * dp
        grads = self.mlp.backward(cache, graw)
        if not with_pattern:
            return float(loss.mean()), grads, None

        parts = [self.mlp.relu_pattern(cache), insi_active(out[:, rs["z_ji"]]).tobytes()]
        if cfg.head == "ClaPhyR":
            parts.append(dp.astype(bool).tobytes())
        elif cfg.head not in ("SiPhyR",):
            parts.append(insi_active(logits).tobytes())
        if plan is not None:
            parts += [plan.order.tobytes(), plan.free.tobytes()]
        if pen_h:
            parts.append((self.cm.inequalities_flat(psi, bounds) > 0).tobytes())
        return float(loss.mean()), grads, b"|".join(parts)


def decode(grid: GridModel, config: TrainConfig, cm: CompletionModel, outs: HeadOutputs, data) -> DecisionVector:
    """Inference-mode decision vectors from (possibly averaged) head outputs."""
    L = cutoff_L(grid)
    y, _, _ = switch_states(config.head, outs.p_y, L, "inference")
    z_ji = outs.z_ji
    if config.head == "InSi2R":
        z_ji = (z_ji >= 0.5).astype(float)
    pcc = grid.pcc_node
    z, _ = assemble_independents(grid, outs.raw, y, cm.imap, data.p_load[:, pcc], data.q_load[:, pcc],
                                 config.flow_cap, z_ji=z_ji)
    return cm.decision(z, data.p_load, data.q_load)


def average_outputs(outs: list[HeadOutputs]) -> HeadOutputs:
    if len(outs) == 1:
        return outs[0]
    return HeadOutputs(np.mean([o.p_y for o in outs], axis=0), np.mean([o.z_ji for o in outs], axis=0),
                       np.mean([o.raw for o in outs], axis=0))


CURVE_COLUMNS = ("member", "epoch", "loss", "disp_err", "volt_err", "top_err", "ineq_mean", "ineq_max", "ineq_count")


def train_member(grid: GridModel, config: TrainConfig, train, seed: int, val=None, val_labels=None,
                 train_labels=None, eps: float = 1e-3, model: CompletionModel | None = None,
                 member: int = 0, progress=None, eval_every: int = 1):
    """Train one network; returns ``(predictor, curve rows)``.

    A curve row is recorded after every epoch with the mean training loss.
    Validation metrics are added every ``eval_every`` epochs and at the last
    one when a validation set is given.
    """
    if config.mode != "unsupervised" and train_labels is None:
        raise MissingLabels("supervised training needs labels for the training split")
    pred = Predictor.create(grid, config, seed, model)
    adam = Adam(config.lr, config.beta1, config.beta2, config.adam_eps)
    rng = np.random.default_rng([seed, 1])
    x_all = train.x
    bounds_all = _bounds(train)
    curves = []
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(len(train))
        total, count = 0.0, 0
        for start in range(0, len(perm), config.batch_size):
            idx = perm[start:start + config.batch_size]
            if len(idx) < 2:
                continue
            lab = None
            if train_labels is not None:
                lab = _LabelView(train_labels, idx)
            loss, grads, _ = pred.batch_loss_and_grads(
                x_all[idx], train.p_load[idx], train.q_load[idx], tuple(b[idx] for b in bounds_all), lab)
            adam.step(pred.mlp.params, grads)
            total += loss * len(idx)
            count += len(idx)
        row = {"member": member, "epoch": epoch, "loss": total / max(count, 1)}
        if val is not None and (epoch % eval_every == 0 or epoch == config.epochs):
            rec = eval_metrics(grid, val, pred.predict(val), val_labels, eps, pred.cm)
            row.update(disp_err=rec.disp_err, volt_err=rec.volt_err, top_err=rec.top_err,
                       ineq_mean=rec.ineq_mean, ineq_max=rec.ineq_max, ineq_count=rec.ineq_count)
        curves.append(row)
        if progress:
            progress(member, epoch, row)
    return pred, curves


class _LabelView:
    def __init__(self, labels, idx):
        self.y = labels.y[idx]
        self.v = labels.v[idx]
        self.p_gen = labels.p_gen[idx]
        self.q_gen = labels.q_gen[idx]


class Committee:
    """Independently initialized members whose head outputs are averaged."""

    def __init__(self, grid: GridModel, config: TrainConfig, members: list[Predictor], curves=None,
                 info: dict | None = None):
        if not members:
            raise ConfigError("a committee needs at least one member")
        self.grid = grid
        self.config = config
        self.members = members
        self.curves = curves or []
        self.cm = members[0].cm
        self.info = dict(info or {})

    def head_outputs(self, x) -> HeadOutputs:
        return average_outputs([m.head_outputs(x) for m in self.members])

    def predict(self, data) -> DecisionVector:
        return decode(self.grid, self.config, self.cm, self.head_outputs(data.x), data)

    def member_predictions(self, data) -> list[DecisionVector]:
        return [m.predict(data) for m in self.members]

    def save(self, path) -> None:
        arrays = {}
        for k, m in enumerate(self.members):
            arrays.update({f"m{k}_param_{n}": a for n, a in m.mlp.params.items()})
            arrays.update({f"m{k}_running_{n}": a for n, a in m.mlp.running.items()})
        meta = {"format": 1, "grid": self.grid.name, "members": len(self.members), "config": asdict(self.config),
                "info": self.info}
        arrays["meta"] = np.array(json.dumps(meta, sort_keys=True))
        buf = io.BytesIO()
        np.savez(buf, **arrays)
        with open(path, "wb") as fh:
            fh.write(buf.getvalue())

    @classmethod
    def load(cls, path, grid: GridModel) -> "Committee":
        with np.load(path, allow_pickle=False) as npz:
            meta = json.loads(str(npz["meta"]))
            if meta.get("grid") != grid.name:
                raise ConfigError(f"checkpoint was trained on {meta.get('grid')!r}, not {grid.name!r}")
            known = {f.name for f in fields(TrainConfig)}
            config = TrainConfig(**{k: v for k, v in meta["config"].items() if k in known})
            cm = CompletionModel(grid, config.big_m, config.no_export)
            members = []
            for k in range(meta["members"]):
                pre = f"m{k}_"
                params = {n[len(pre) + 6:]: npz[n] for n in npz.files if n.startswith(pre + "param_")}
                running = {n[len(pre) + 8:]: npz[n] for n in npz.files if n.startswith(pre + "running_")}
                members.append(Predictor(grid, config, MLP(params, running), cm))
        return cls(grid, config, members, info=meta.get("info"))


def train_committee(grid: GridModel, config: TrainConfig, train, val=None, val_labels=None,
                    train_labels=None, eps: float = 1e-3, progress=None, eval_every: int = 1) -> Committee:
    """Train ``config.committee`` members seeded ``seed, seed+1, ...``."""
    cm = CompletionModel(grid, config.big_m, config.no_export)
    members, curves = [], []
    for k in range(config.committee):
        pred, rows = train_member(grid, config, train, config.seed + k, val, val_labels, train_labels,
                                  eps, cm, k, progress, eval_every)
        members.append(pred)
        curves += rows
    return Committee(grid, config, members, curves)
