"""The grounding network: point/text encoders, instance-bounded cross
injection (grouping, region-language attention, gated propagation), the
per-point affordance head, and the training-only contrastive projections.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..synth.queries import tokenize
from .config import ModelConfig
from .scene_geometry import ENCODER_INPUT_DIM, SceneGeometry

GROUP_LR_DEFAULTS = {
    "backbone": 3e-4,
    "text_encoder": 1e-6,
    "ici": 3e-4,
    "bcr": 1e-4,
    "head": 3e-4,
}
GROUP_CLIP_DEFAULTS = {
    "backbone": 1.0,
    "text_encoder": 1.0,
    "head": 1.0,
    "ici": 5.0,
    "bcr": 5.0,
}


@dataclass
class TextEmbedding:
    tokens: ad.DiffValue   # (N_t, D)
    cls: ad.DiffValue      # (1, D)


@dataclass
class ForwardOutputs:
    mode: str
    heatmap: ad.DiffValue                # (N, 1) in [0, 1]
    features: ad.DiffValue               # F  (N, D)
    features_prop: ad.DiffValue          # F' (N, D)
    geom: SceneGeometry
    model_cfg: ModelConfig | None = None
    group_scores: ad.DiffValue | None = None    # s_hat (G, 1)
    group_enhanced: ad.DiffValue | None = None  # G_hat (G, D)
    z: ad.DiffValue | None = None               # projected groups (G, D)
    t_tg: ad.DiffValue | None = None            # (1, D)
    t_tp: ad.DiffValue | None = None            # (1, D)

    @property
    def heatmap_values(self) -> np.ndarray:
        return self.heatmap.value[:, 0]


class Model:
    """Parameter container plus the full forward path."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        cfg.validate()
        self.cfg = cfg
        self.params: "OrderedDict[str, ad.DiffValue]" = OrderedDict()
        rng = np.random.default_rng(np.random.PCG64(seed))
        d = cfg.feature_dim

        def linear(name, fan_in, fan_out):
            w = ad.parameter(ad.xavier_uniform(rng, fan_in, fan_out), f"{name}.w")
            b = ad.parameter(np.zeros(fan_out), f"{name}.b")
            self.params[w.name] = w
            self.params[b.name] = b
            return w, b

        def ln(name, dim):
            g = ad.parameter(np.ones(dim), f"{name}.g")
            b = ad.parameter(np.zeros(dim), f"{name}.b")
            self.params[g.name] = g
            self.params[b.name] = b
            return g, b

        def attention(name):
            wq, bq = linear(f"{name}.q", d, d)
            wk = ad.parameter(ad.xavier_uniform(rng, d, d), f"{name}.k.w")
            self.params[wk.name] = wk
            wv, bv = linear(f"{name}.v", d, d)
            wo, bo = linear(f"{name}.o", d, d)
            return ad.AttentionParams(wq, wk, wv, wo, bq, bv, bo)

        def token(name, fan_in=1):
            t = ad.parameter(ad.xavier_uniform(rng, fan_in, d)[:1], f"{name}")
            self.params[t.name] = t
            return t

        # point encoder ("backbone" group)
        self.enc_w1, self.enc_b1 = linear("backbone/enc1", ENCODER_INPUT_DIM, d)
        self.enc_w2, self.enc_b2 = linear("backbone/enc2", d, d)
        self.enc_ln = ln("backbone/enc_ln", d)

        # text encoder
        # no positional embeddings: intent is lexical at desk scale and a
        # set-style encoder transfers to held-out phrasings far better
        vocab_rows = len(cfg.vocab) + 1  # final row is UNK
        emb = ad.parameter(ad.xavier_uniform(rng, vocab_rows, d), "text_encoder/tok")
        self.params[emb.name] = emb
        self.tok_emb = emb
        self.cls_emb = token("text_encoder/cls")
        self.txt_ln1 = ln("text_encoder/ln1", d)
        self.txt_attn = attention("text_encoder/attn")
        self.txt_ln2 = ln("text_encoder/ln2", d)
        self._vocab_index = {w: i for i, w in enumerate(cfg.vocab)}

        # instance-bounded cross injection
        self.grp_w1, self.grp_b1 = linear("ici/group1", d, d)
        self.grp_w2, self.grp_b2 = linear("ici/group2", d, d)
        self.ici_ln = ln("ici/attn_ln", d)
        self.ici_attn = attention("ici/attn")
        self.ici_bg = token("ici/bg")
        self.score_w, self.score_b = linear("ici/score", d, 1)
        self.gate_w1, self.gate_b1 = linear("ici/gate1", d, d)
        self.gate_w2, self.gate_b2 = linear("ici/gate2", d, d)
        alpha = ad.parameter(np.array(0.1), "ici/alpha")
        self.params[alpha.name] = alpha
        self.alpha = alpha

        # affordance head
        self.head_ln = ln("head/attn_ln", d)
        self.head_attn = attention("head/attn")
        self.head_bg = token("head/bg")
        self.head_w1, self.head_b1 = linear("head/mlp1", d, cfg.head_hidden)
        self.head_w2, self.head_b2 = linear("head/mlp2", cfg.head_hidden, 1)

        # contrastive refinement heads (training only)
        self.adapter_w, self.adapter_b = linear("bcr/adapter", d, d)
        self.tg_w, self.tg_b = linear("bcr/tg", d, d)
        self.tp_w, self.tp_b = linear("bcr/tp", d, d)
        self.zproj_w1, self.zproj_b1 = linear("bcr/zproj1", d, d)
        self.zproj_w2, self.zproj_b2 = linear("bcr/zproj2", d, d)

        self.groups = {
            name: ad.ParamGroup(
                name,
                [p for p in self.params.values() if p.name.startswith(f"{name}/")],
                lr=GROUP_LR_DEFAULTS[name],
                clip_norm=GROUP_CLIP_DEFAULTS[name],
            )
            for name in ("backbone", "text_encoder", "ici", "bcr", "head")
        }

    # ------------------------------------------------------------------
    # encoders

    def encode_points(self, geom: SceneGeometry,
                      external: np.ndarray | None = None) -> ad.DiffValue:
        """Per-point features from coordinates + neighborhood statistics.

        `external` short-circuits the trainable encoder with precomputed
        N x D features (import path for real backbones).
        """
        if external is not None:
            feats = np.asarray(external, dtype=np.float64)
            if feats.shape != (geom.n_points, self.cfg.feature_dim):
                raise ValueError(
                    f"external features must be ({geom.n_points}, "
                    f"{self.cfg.feature_dim}), got {feats.shape}")
            return ad.constant(feats)
        if geom.n_points < self.cfg.group_size:
            raise ValueError("scene smaller than one group")
        x = ad.constant(geom.enc_x)
        h = ad.tanh(ad.add_bias(ad.matmul(x, self.enc_w1), self.enc_b1))
        h = ad.add_bias(ad.matmul(h, self.enc_w2), self.enc_b2)
        return ad.layer_norm(h, *self.enc_ln)

    def token_ids(self, text: str) -> list:
        words = tokenize(text)
        if not words:
            raise ValueError("empty query text")
        unk = len(self.cfg.vocab)
        ids = [self._vocab_index.get(w, unk) for w in words[: self.cfg.max_tokens]]
        return ids

    def encode_text(self, text: str) -> TextEmbedding:
        ids = self.token_ids(text)
        tok = ad.take_rows(self.tok_emb, np.asarray(ids, dtype=np.int64))
        rows = ad.concat_rows([self.cls_emb, tok])
        normed = ad.layer_norm(rows, *self.txt_ln1)
        attn = ad.multi_head_attention(normed, normed, normed,
                                       self.cfg.heads, self.txt_attn)
        encoded = ad.layer_norm(ad.add(rows, attn), *self.txt_ln2)
        return TextEmbedding(tokens=ad.row_slice(encoded, 1, len(ids) + 1),
                             cls=ad.row_slice(encoded, 0, 1))

    # ------------------------------------------------------------------
    # instance-bounded cross injection

    def instance_grouping(self, geom: SceneGeometry, feats: ad.DiffValue) -> ad.DiffValue:
        """Mean-pool instance-bounded groups and project them."""
        pooled = ad.group_mean(feats, geom.group_idx)
        h = ad.tanh(ad.add_bias(ad.matmul(pooled, self.grp_w1), self.grp_b1))
        return ad.add_bias(ad.matmul(h, self.grp_w2), self.grp_b2)

    def _text_kv(self, text: TextEmbedding, bg: ad.DiffValue | None) -> ad.DiffValue:
        if bg is None:
            return text.tokens
        return ad.concat_rows([text.tokens, bg])

    def region_language_attention(self, groups: ad.DiffValue,
                                  text: TextEmbedding):
        """Inject query semantics into region features; score relevance."""
        bg = self.ici_bg if self.cfg.use_background_token else None
        kv = self._text_kv(text, bg)
        attn = ad.multi_head_attention(ad.layer_norm(groups, *self.ici_ln),
                                       kv, kv, self.cfg.heads, self.ici_attn)
        enhanced = ad.add(groups, attn)
        scores = ad.sigmoid(ad.add_bias(ad.matmul(enhanced, self.score_w),
                                        self.score_b))
        return enhanced, scores

    def gated_propagation(self, geom: SceneGeometry, feats: ad.DiffValue,
                          enhanced: ad.DiffValue) -> ad.DiffValue:
        """Pull each point toward its nearest query-informed regions."""
        lang = self._interpolate_regions(geom, feats, enhanced)
        h = ad.tanh(ad.add_bias(ad.matmul(lang, self.gate_w1), self.gate_b1))
        gate = ad.sigmoid(ad.add_bias(ad.matmul(h, self.gate_w2), self.gate_b2))
        return ad.add(feats, ad.mul(self.alpha, ad.mul(feats, gate)))

    def _interpolate_regions(self, geom: SceneGeometry, feats: ad.DiffValue,
                             enhanced: ad.DiffValue) -> ad.DiffValue:
        if not self.cfg.idw_feature_space:
            parts = None
            for t in range(self.cfg.k_prop):
                rows = ad.take_rows(enhanced, geom.prop_idx[:, t])
                term = ad.scale_rows(rows, ad.constant(geom.prop_w[:, t:t + 1]))
                parts = term if parts is None else ad.add(parts, term)
            return parts
        # feature-space variant: squared distances between point and region
        # features; the neighbor choice is frozen per forward (like hard
        # attention routing) but the weights stay differentiable
        f2 = ad.row_sum(ad.mul(feats, feats))                       # (N, 1)
        g2 = ad.row_sum(ad.mul(enhanced, enhanced))                 # (G, 1)
        cross = ad.matmul(feats, ad.transpose(enhanced))            # (N, G)
        d2_vals = (f2.value - 2.0 * cross.value) + g2.value[:, 0][None, :]
        if not self.cfg.idw_cross_object:
            blocked = geom.object_index_of[:, None] != geom.group_object[None, :]
            d2_vals = np.where(blocked, np.inf, d2_vals)
        order = np.argsort(d2_vals, axis=1, kind="stable")[:, : self.cfg.k_prop]
        weights, picks = [], []
        for t in range(self.cfg.k_prop):
            sel = np.zeros((geom.n_points, enhanced.value.shape[0]))
            sel[np.arange(geom.n_points), order[:, t]] = 1.0
            sel_c = ad.constant(sel)
            d2_t = ad.sub(ad.add(f2, ad.matmul(sel_c, g2)),
                          ad.mul(ad.row_sum(ad.mul(cross, sel_c)), 2.0))
            weights.append(ad.div(1.0, ad.add(d2_t, 1e-8)))
            picks.append(order[:, t])
        total = weights[0]
        for w_t in weights[1:]:
            total = ad.add(total, w_t)
        out = None
        for w_t, idx in zip(weights, picks):
            term = ad.scale_rows(ad.take_rows(enhanced, idx), ad.div(w_t, total))
            out = term if out is None else ad.add(out, term)
        return out

    # ------------------------------------------------------------------
    # head and training projections

    def predict_heatmap(self, feats: ad.DiffValue,
                        text: TextEmbedding) -> ad.DiffValue:
        if self.cfg.head_text_attention:
            kv = self._text_kv(text, self.head_bg)
            attn = ad.multi_head_attention(ad.layer_norm(feats, *self.head_ln),
                                           kv, kv, self.cfg.heads, self.head_attn)
            feats = ad.add(feats, attn)
        h = ad.tanh(ad.add_bias(ad.matmul(feats, self.head_w1), self.head_b1))
        return ad.sigmoid(ad.add_bias(ad.matmul(h, self.head_w2), self.head_b2))

    def bcr_projections(self, text: TextEmbedding,
                        enhanced: ad.DiffValue | None):
        adapted = ad.tanh(ad.add_bias(ad.matmul(text.cls, self.adapter_w),
                                      self.adapter_b))
        t_tg = ad.add_bias(ad.matmul(adapted, self.tg_w), self.tg_b)
        t_tp = ad.add_bias(ad.matmul(adapted, self.tp_w), self.tp_b)
        z = None
        if enhanced is not None:
            h = ad.tanh(ad.add_bias(ad.matmul(enhanced, self.zproj_w1),
                                    self.zproj_b1))
            z = ad.add_bias(ad.matmul(h, self.zproj_w2), self.zproj_b2)
        return t_tg, t_tp, z

    # ------------------------------------------------------------------

    def forward(self, geom: SceneGeometry, query: str, mode: str = "train",
                external_features: np.ndarray | None = None) -> ForwardOutputs:
        """Full pass; `mode="infer"` never evaluates the contrastive heads."""
        if mode not in ("train", "infer"):
            raise ValueError(f"unknown mode {mode!r}")
        feats = self.encode_points(geom, external=external_features)
        text = self.encode_text(query)
        enhanced = scores = None
        prop = feats
        if self.cfg.use_ici:
            grouped = self.instance_grouping(geom, feats)
            enhanced, scores = self.region_language_attention(grouped, text)
            if self.cfg.use_gated_propagation:
                prop = self.gated_propagation(geom, feats, enhanced)
        heatmap = self.predict_heatmap(prop, text)
        out = ForwardOutputs(mode=mode, heatmap=heatmap, features=feats,
                             features_prop=prop, geom=geom, model_cfg=self.cfg,
                             group_scores=scores, group_enhanced=enhanced)
        if mode == "train" and self.cfg.use_bcr:
            need_tg = self.cfg.use_tg and enhanced is not None
            need_tp = self.cfg.use_tp
            if need_tg or need_tp:
                t_tg, t_tp, z = self.bcr_projections(
                    text, enhanced if need_tg else None)
                out.t_tg = t_tg if need_tg else None
                out.z = z if need_tg else None
                out.t_tp = t_tp if need_tp else None
        return out

    # ------------------------------------------------------------------
    # parameter I/O

    def state_tensors(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((name, p.value) for name, p in self.params.items())

    def load_state_tensors(self, tensors):
        missing = [n for n in self.params if n not in tensors]
        extra = [n for n in tensors if n not in self.params]
        if missing or extra:
            raise ValueError(f"checkpoint mismatch: missing={missing[:3]} "
                             f"extra={extra[:3]}")
        for name, p in self.params.items():
            arr = np.asarray(tensors[name], dtype=np.float64)
            if arr.shape != p.value.shape:
                raise ValueError(f"shape mismatch for {name}: "
                                 f"{arr.shape} vs {p.value.shape}")
            p.value = np.ascontiguousarray(arr) if arr.ndim else np.asarray(arr)
            p.grad = None

    def all_groups(self) -> list:
        return [self.groups[n] for n in ("backbone", "text_encoder", "ici",
                                         "bcr", "head")]
