"""Reference training loop for every supported objective.

The 2-D mixture uses small fully-connected networks; the moving-dot videos
use the progressive 3-D networks and grow through the configured ladder.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import autodiff as ad
from .. import layers as L
from .. import losses as lo
from ..progressive import (STABLE, GrowthSchedule, TRANSITION, PhaseState, advance, alpha, blend,
                           minibatch_for_rung, real_pyramid)
from ..rng import stream
from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig
from .data import SyntheticDataset, sample_dataset
from .optim import AdamHyper, AdamState, adam_step

log = logging.getLogger(__name__)

LOSS_LIMIT = 1e6
HELDOUT_OFFSET = 1 << 40  # index range reserved for evaluation samples


class TrainingAborted(RuntimeError):
    def __init__(self, message: str, report: dict):
        super().__init__(message)
        self.report = report


@dataclass
class _Model:
    """One compiled graph for a (rung, mode) pair."""

    g: ad.Graph
    rung_index: int
    mode: str
    fake: ad.NodeId
    loss_d: ad.NodeId | None
    loss_g: ad.NodeId
    d_names: list[str]
    d_grads: list[ad.NodeId]
    g_names: list[str]
    g_grads: list[ad.NodeId]
    extras: dict


def dataset_for(cfg: TrainConfig) -> SyntheticDataset:
    if cfg.progressive:
        return SyntheticDataset("moving_dot_video", rung=cfg.ladder[-1], max_speed=cfg.dot_max_speed)
    return SyntheticDataset("gauss_mix_2d", cfg.mixture_components, cfg.mixture_radius, cfg.mixture_std)


class Trainer:
    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.loss_cfg = cfg.loss_config()
        self.sched = cfg.schedule()
        if not cfg.progressive:
            self.sched = GrowthSchedule(cfg.ladder[:1], cfg.images_per_phase)
        self.data = dataset_for(cfg)
        self.hyper = AdamHyper(cfg.step_size, cfg.beta1, cfg.beta2, cfg.adam_eps)
        self.opt = {"G": AdamState(), "D": AdamState()}
        self.state = PhaseState()
        self.step = 0
        self.real_cursor = 0
        self.params: dict[str, np.ndarray] = {}
        if cfg.progressive:
            latent = cfg.latent_dim or None
            self.gspec = L.generator_spec(cfg.base_channels, cfg.ladder, latent_dim=latent)
            self.dspec = L.discriminator_spec(self.gspec)
            self.latent_dim = self.gspec.latent_dim
        else:
            self.latent_dim = cfg.latent_dim or 2
        self.model = self._build(0, STABLE)
        self.report = {"config": cfg.to_dict(), "step": [], "images": [], "rung": [], "alpha": [],
                       "loss_d": [], "loss_g": [], "eval": [], "aborted": False}

    # -- graph construction ---------------------------------------------------

    def _mlp_sizes(self, role: str) -> list[int]:
        h = self.cfg.hidden
        if role == "G":
            return [self.latent_dim, h, 2]
        out = self.cfg.encoder_dim if self.cfg.loss == "swgan" else 1
        return [2, h, h, out]

    def _fresh_params(self, k: int, mode: str) -> dict[str, np.ndarray]:
        seed = self.cfg.seed
        if self.cfg.progressive:
            t = mode == TRANSITION
            p = L.init_params(self.gspec, k, seed, t, existing=self.params)
            if self.cfg.loss != "swd_direct":
                p.update(L.init_params(self.dspec, k, seed, t, existing=self.params))
        else:
            p = L.init_mlp("G", self._mlp_sizes("G"), seed)
            if self.cfg.loss != "swd_direct":
                p.update(L.init_mlp("D", self._mlp_sizes("D"), seed))
            p.update({n: v for n, v in self.params.items() if n in p})
        if self.cfg.loss == "swgan":
            kdim = self._encoder_width()
            proj = lo.ProjectionSet.random(kdim, seed).as_params("F")
            p.update({n: self.params.get(n, v) for n, v in proj.items()})
        return p

    def _encoder_width(self) -> int:
        if self.cfg.progressive:
            return self.dspec.block_channels(0)
        return self.cfg.encoder_dim

    def _build(self, k: int, mode: str) -> _Model:
        cfg = self.cfg
        params = self._fresh_params(k, mode)
        g = ad.Graph(cfg.precision)
        a = g.input("alpha") if mode == TRANSITION else None
        z, x_real = g.input("z"), g.input("x_real")
        if cfg.progressive:
            fake = L.apply_generator(g, self.gspec, k, z, params, a)
            critic_full = lambda x: L.apply_discriminator(g, self.dspec, k, x, params, a)
            critic = lambda x: critic_full(x)[0]
            features = lambda x: critic_full(x)[1]
            flat = lambda x: ad.reshape(x, (-1, self._flat_dim(k)))
        else:
            fake = L.apply_mlp(g, "G", self._mlp_sizes("G"), z, params)
            critic = lambda x: L.apply_mlp(g, "D", self._mlp_sizes("D"), x, params)
            hidden = self._mlp_sizes("D")[:-1]
            features = lambda x: ad.leaky_relu(L.apply_mlp(g, "D", hidden, x, params))
            flat = lambda x: x

        extras: dict = {}
        kind = cfg.loss
        loss_d = None
        if kind == "gan":
            loss_d, loss_g = lo.gan_loss(critic(x_real), critic(fake))
        elif kind == "feature_matching":
            loss_d, _ = lo.gan_loss(critic(x_real), critic(fake))
            loss_g = lo.feature_matching_loss(features(x_real), features(fake))
        elif kind == "wgan_clip":
            loss_d, loss_g = lo.wgan_loss(critic(x_real), critic(fake))
        elif kind == "wgan_gp":
            loss_d, loss_g = lo.wgan_loss(critic(x_real), critic(fake))
            pen = lo.gradient_penalty(critic, x_real, fake, g.input("u_x"), cfg.k_lipschitz)
            loss_d = loss_d + cfg.lambda1 * pen
            extras["penalty"] = pen
        elif kind == "swgan":
            proj = lo.ProjectionSet(params["F/theta"], params["F/lambda"], params["F/bias"])
            f = lo.projection_nodes(g, proj)
            encoder = features if cfg.progressive else critic
            terms = lo.swgan_objective(encoder, f, x_real, fake, g.input("u_x"), g.input("u_y"), self.loss_cfg)
            loss_d, loss_g = terms.loss_d, terms.loss_g
            extras.update(wasserstein=terms.wasserstein, encoder_penalty=terms.encoder_penalty,
                          lipschitz_penalty=terms.lipschitz_penalty)
        else:  # swd_direct
            loss_g = lo.swd_node(flat(x_real), flat(fake), g.input("directions"))

        def grads_of(loss, prefixes, frozen=()):
            names = [n for n in sorted(g.params) if n.startswith(prefixes) and n not in frozen]
            nodes = ad.grad(loss, [g.params[n] for n in names])
            keep = [(n, d) for n, d in zip(names, nodes) if not g.is_structural_zero(d)]
            return [n for n, _ in keep], [d for _, d in keep]

        g_names, g_grads = grads_of(loss_g, ("G/",))
        d_names, d_grads = [], []
        if loss_d is not None:
            frozen = ("F/theta",) if cfg.theta_mode == "fixed_random" else ()
            d_names, d_grads = grads_of(loss_d, ("D/", "F/"), frozen)
        return _Model(g, k, mode, fake, loss_d, loss_g, d_names, d_grads, g_names, g_grads, extras)

    def _flat_dim(self, k: int) -> int:
        return 3 * self.sched.ladder[k].volume

    def _rebuild(self) -> None:
        self.params.update(self.model.g.param_values)
        k, mode = self.state.rung_index, self.state.mode
        log.info("phase change: rung %s (%s) at %d images", self.sched.ladder[k], mode, self.state.images_seen)
        self.model = self._build(k, mode)

    # -- batches ------------------------------------------------------------

    @property
    def batch(self) -> int:
        return minibatch_for_rung(self.state.rung_index, self.cfg.batch_size)

    def _real(self, n: int, start: int | None = None) -> np.ndarray:
        if start is None:
            start, self.real_cursor = self.real_cursor, self.real_cursor + n
        x = sample_dataset(self.data, n, self.cfg.seed, start)
        if not self.cfg.progressive:
            return x
        current, previous = real_pyramid(x, self.sched, self.state)
        if previous is None:
            return current
        return blend(previous, current, alpha(self.state, self.sched))

    def _feed(self, purpose: str, sub: int = 0, need_real: bool = True) -> dict:
        b = self.batch
        rng = stream(self.cfg.seed, purpose, self.step, sub)
        feed = {"z": rng.standard_normal((b, self.latent_dim))}
        if need_real:
            feed["x_real"] = self._real(b)
        g = self.model.g
        if "alpha" in g.inputs:
            feed["alpha"] = np.array(alpha(self.state, self.sched))
        ushape = (b, 1, 1, 1, 1) if self.cfg.progressive else (b, 1)
        if "u_x" in g.inputs:
            feed["u_x"] = rng.uniform(size=ushape)
        if "u_y" in g.inputs:
            feed["u_y"] = rng.uniform(size=(b, 1))
        if "directions" in g.inputs:
            dim = self._flat_dim(self.state.rung_index) if self.cfg.progressive else 2
            feed["directions"] = lo.random_directions(dim, self.cfg.n_projections, rng)
        return feed

    # -- updates ------------------------------------------------------------

    def _apply(self, group: str, names: list[str], grads: list[np.ndarray]) -> None:
        g = self.model.g
        current = {n: g.param_values[n] for n in names}
        new, self.opt[group] = adam_step(current, dict(zip(names, grads)), self.opt[group], self.hyper)
        g.param_values.update(new)

    def _critic_step(self, sub: int) -> float:
        m, cfg = self.model, self.cfg
        if cfg.theta_mode == "fixed_random" and "F/theta" in m.g.params:
            k = m.g.param_values["F/theta"].shape[0]
            m.g.set_param("F/theta", lo.random_orthogonal(k, stream(cfg.seed, "theta", self.step, sub)))
        out = m.g.forward([m.loss_d, *m.d_grads], self._feed("critic", sub))
        self._guard(float(out[0]), "loss_d")
        self._apply("D", m.d_names, out[1:])
        if cfg.loss == "wgan_clip":
            lo.clip_weights(m.g, cfg.clip_bound, prefix="D/")
        if cfg.loss == "swgan" and cfg.theta_mode == "learned":
            m.g.set_param("F/theta", lo.gram_schmidt(m.g.param_values["F/theta"]))
        return float(out[0])

    def _generator_step(self) -> float:
        m = self.model
        out = m.g.forward([m.loss_g, *m.g_grads], self._feed("generator", need_real=self.cfg.loss in ("swd_direct", "feature_matching")))
        self._guard(float(out[0]), "loss_g")
        self._apply("G", m.g_names, out[1:])
        return float(out[0])

    def _guard(self, value: float, what: str) -> None:
        if np.isfinite(value) and abs(value) <= LOSS_LIMIT:
            return
        self.report["aborted"] = True
        self.report["abort_reason"] = f"{what} = {value!r} at step {self.step}"
        self.report["abort_state"] = {"step": self.step, "images": self.state.images_seen,
                                      "rung": str(self.sched.ladder[self.state.rung_index]),
                                      "mode": self.state.mode}
        if self.cfg.checkpoint_dir:
            self.save(Path(self.cfg.checkpoint_dir) / "abort_snapshot")
        self._write_report()
        raise TrainingAborted(self.report["abort_reason"], self.report)

    # -- evaluation and persistence -------------------------------------------

    def evaluate(self) -> float:
        """Sliced W1 between generated samples and held-out real samples."""
        cfg, m = self.cfg, self.model
        n = cfg.eval_samples
        z = stream(cfg.seed, "eval", "z").standard_normal((n, self.latent_dim))
        feed = {"z": z}
        if "alpha" in m.g.inputs:
            feed["alpha"] = np.array(alpha(self.state, self.sched))
        (fake,) = m.g.forward([m.fake], feed)
        real = self._real(n, start=HELDOUT_OFFSET)
        dim = real[0].size
        dirs = lo.random_directions(dim, cfg.eval_projections, stream(cfg.seed, "eval", "dirs", dim))
        return lo.swd(real.reshape(n, -1), np.asarray(fake, dtype=float).reshape(n, -1), dirs)

    def all_params(self) -> dict[str, np.ndarray]:
        p = dict(self.params)
        p.update(self.model.g.param_values)
        return p

    def save(self, directory) -> Path:
        meta = {"step": self.step, "images": self.state.images_seen, "rung_index": self.state.rung_index,
                "mode": self.state.mode, "phase_start": self.state.phase_start,
                "real_cursor": self.real_cursor}
        return save_checkpoint(directory, self.all_params(), self.opt, meta)

    def _write_report(self) -> None:
        if self.cfg.report_path:
            Path(self.cfg.report_path).write_text(json.dumps(self.report, indent=1))

    def _record_eval(self) -> None:
        self.report["eval"].append({"step": self.step, "images": self.state.images_seen,
                                    "rung": str(self.sched.ladder[self.state.rung_index]),
                                    "swd": self.evaluate()})

    def restore(self, directory) -> None:
        """Resume from a checkpoint written by :meth:`save`."""
        params, opts, meta = load_checkpoint(directory)
        self.params = params
        self.opt = {"G": opts.get("G", AdamState()), "D": opts.get("D", AdamState())}
        self.state = PhaseState(meta["rung_index"], meta["images"], meta["mode"], meta["phase_start"])
        self.step = meta["step"]
        self.real_cursor = meta["real_cursor"]
        self.model = self._build(self.state.rung_index, self.state.mode)

    def iteration(self) -> None:
        """``n_critic`` critic updates, one generator update, then advance the schedule."""
        cfg, rep = self.cfg, self.report
        a = alpha(self.state, self.sched)
        b = self.batch
        loss_d = None
        n_images = b
        if self.model.loss_d is not None:
            for sub in range(cfg.n_critic):
                loss_d = self._critic_step(sub)
            n_images = b * cfg.n_critic
        loss_g = self._generator_step()
        self.step += 1
        rep["step"].append(self.step)
        rep["images"].append(self.state.images_seen + n_images)
        rep["rung"].append(str(self.sched.ladder[self.state.rung_index]))
        rep["alpha"].append(a)
        rep["loss_d"].append(loss_d)
        rep["loss_g"].append(loss_g)

        before = (self.state.rung_index, self.state.mode)
        self.state = advance(self.state, self.sched, n_images)
        if (self.state.rung_index, self.state.mode) != before:
            self._rebuild()

    def run(self) -> dict:
        cfg, rep = self.cfg, self.report
        if cfg.total_images == 0:
            self._write_report()
            return rep
        self._record_eval()
        while self.state.images_seen < cfg.total_images:
            self.iteration()
            if cfg.eval_every and self.step % cfg.eval_every == 0:
                self._record_eval()
            if cfg.checkpoint_every and cfg.checkpoint_dir and self.step % cfg.checkpoint_every == 0:
                self.save(Path(cfg.checkpoint_dir) / f"step_{self.step:07d}")
        if rep["eval"][-1]["step"] != self.step:
            self._record_eval()
        rep["final"] = {"step": self.step, "images": self.state.images_seen,
                        "rung": str(self.sched.ladder[self.state.rung_index]), "mode": self.state.mode,
                        "swd": rep["eval"][-1]["swd"], "initial_swd": rep["eval"][0]["swd"]}
        if cfg.checkpoint_dir:
            self.save(Path(cfg.checkpoint_dir) / "final")
        self._write_report()
        return rep


def train(cfg: TrainConfig) -> dict:
    """Run a full training job and return its report (also written to ``report_path``)."""
    return Trainer(cfg).run()
