"""Group-equivariant graph transformer policy.

Every node stores its feature in its own pose frame, so the stored
numbers are invariant under a global rigid motion of the swarm. When
node v attends to node j, j's vector channels are re-expressed in v's
frame through the relative pose g_v^-1 g_j; scalar channels pass through
untouched. Two vector channels (relative position and relative target)
are flagged positional and pick up the relative translation, which is
how the attention sees geometry; they are passed through each layer
unchanged while the learned channels update.

The trunk consumes the canonicalized ego state plus the mean of all node
features re-expressed in the ego frame, and its typed output, mapped out
by the ego frame, is the equivariant stage of the policy. A plain MLP
head reads that output in the co-moving frame and produces the Gaussian
action parameters; a sibling scalar head produces the value estimate.

Setting ``equivariant=False`` replaces every frame with the identity:
same parameter count, same dataflow, but features live in the world
frame and all equivariance claims fail. That is the ablation baseline.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, xavier_uniform
from .env import LocalGraph
from .groups import GroupElement
from .quad import QuadState, act_on_state

RAW_VECTOR_CHANNELS = 7   # position, target, velocity, world rate, 3 attitude columns
RAW_SCALAR_CHANNELS = 7 + 21  # norms + pairwise dots
N_POSITIONAL = 2
EGO_STATE_SIZE = 21


@dataclass(frozen=True)
class GraphormerConfig:
    layers: int = 3
    mult0: int = 60               # type-0 (scalar) channel count
    mult1: int = 60               # type-1 (vector) channel count
    heads: int = 1
    layer_norm: bool = True
    equivariant: bool = True
    attn_temperature: bool = True  # scale logits by 1/sqrt(d_head)
    trunk_sizes: tuple = (256, 128, 256, 256)
    head_hidden: int = 256
    embed_type0: int = 64          # typed split of the trunk output
    log_std_init: float = math.log(0.5)
    action_dim: int = 4
    head_gain: float = 1.0         # Xavier gain of the final action/value maps
    action_bias_init: float = 0.0  # raw-action origin of exploration (hover = 2*a_h - 1)
    # feature units (powers of two keep canonicalization exactly cancellable):
    # positions and targets are stored per pos_scale meters, velocities per
    # vel_scale m/s, angular rates per omega_scale rad/s, so every channel
    # stays O(1) for the tanh stacks
    pos_scale: float = 2.0
    vel_scale: float = 2.0
    omega_scale: float = 8.0
    dtype: str = "float64"

    def __post_init__(self):
        if self.mult0 % self.heads or self.mult1 % self.heads:
            raise ValueError("channel multiplicities must divide evenly across heads")
        out = self.trunk_sizes[-1]
        if (out - self.embed_type0) % 3:
            raise ValueError("trunk output minus type-0 width must be divisible by 3")

    @property
    def width(self) -> int:
        return self.mult0 + 3 * self.mult1

    @property
    def embed_type1(self) -> int:
        return (self.trunk_sizes[-1] - self.embed_type0) // 3

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def to_json(self) -> str:
        d = self.__dict__.copy()
        d["trunk_sizes"] = list(self.trunk_sizes)
        return json.dumps(d, indent=2)

    @staticmethod
    def from_json(text: str) -> "GraphormerConfig":
        d = json.loads(text)
        d["trunk_sizes"] = tuple(d["trunk_sizes"])
        return GraphormerConfig(**d)


def init_params(cfg: GraphormerConfig, rng: np.random.Generator) -> dict:
    """Xavier-uniform weights, zero biases, named by role."""
    dt = cfg.np_dtype
    m0, m1, d = cfg.mult0, cfg.mult1, cfg.width
    p: dict[str, Tensor] = {}

    def mat(name, fi, fo):
        p[name] = xavier_uniform(rng, fi, fo, dtype=dt)

    def vec(name, n):
        p[name] = Tensor(np.zeros(n), requires_grad=True, dtype=dt)

    mat("lift.scalars", RAW_SCALAR_CHANNELS, m0)
    vec("lift.scalars_bias", m0)
    mat("lift.vectors", RAW_VECTOR_CHANNELS - N_POSITIONAL, m1 - N_POSITIONAL)
    for l in range(cfg.layers):
        mat(f"layer{l}.wq", d, d)
        mat(f"layer{l}.wk", d, d)
        mat(f"layer{l}.wv_s", m0, m0)
        mat(f"layer{l}.wv_v", m1, m1)
        mat(f"layer{l}.mu_s1", m0, m0)
        vec(f"layer{l}.mu_s1_bias", m0)
        mat(f"layer{l}.mu_s2", m0, m0)
        vec(f"layer{l}.mu_s2_bias", m0)
        mat(f"layer{l}.mu_v1", m1, m1)
        mat(f"layer{l}.mu_v2", m1, m1)
        if cfg.layer_norm:
            p[f"layer{l}.ln_gamma_s"] = Tensor(np.ones(m0), requires_grad=True, dtype=dt)
            vec(f"layer{l}.ln_beta_s", m0)
            p[f"layer{l}.ln_gamma_v"] = Tensor(np.ones(m1), requires_grad=True, dtype=dt)
    sizes = [EGO_STATE_SIZE] + list(cfg.trunk_sizes)
    for i in range(len(cfg.trunk_sizes)):
        fan_in = sizes[i] + (cfg.width if i == 2 else 0)  # mean embedding joins here
        mat(f"trunk.w{i}", fan_in, sizes[i + 1])
        vec(f"trunk.b{i}", sizes[i + 1])
    out = cfg.trunk_sizes[-1]
    mat("action.w0", out, cfg.head_hidden)
    vec("action.b0", cfg.head_hidden)
    p["action.w1"] = xavier_uniform(rng, cfg.head_hidden, cfg.action_dim,
                                    gain=cfg.head_gain, dtype=dt)
    p["action.b1"] = Tensor(np.full(cfg.action_dim, cfg.action_bias_init),
                            requires_grad=True, dtype=dt)
    mat("value.w0", out, cfg.head_hidden)
    vec("value.b0", cfg.head_hidden)
    p["value.w1"] = xavier_uniform(rng, cfg.head_hidden, 1, gain=cfg.head_gain, dtype=dt)
    vec("value.b1", 1)
    p["log_std"] = Tensor(np.full(cfg.action_dim, cfg.log_std_init), requires_grad=True, dtype=dt)
    return p


# ---------------------------------------------------------------------------
# graph packing


@dataclass
class GraphBatch:
    """Mask-padded arrays for a batch of local graphs (ego is node 0)."""

    mask: np.ndarray          # (B, N) valid-node mask
    rot: np.ndarray           # (B, N, 3, 3) node frames (identity in ablation mode)
    trans: np.ndarray         # (B, N, 3)
    vecs: np.ndarray          # (B, N, 7, 3) canonical vector channels, own frame
    scalars: np.ndarray       # (B, N, 28) rotation-invariant combinations
    ego_state: np.ndarray     # (B, 21) canonicalized ego state
    ego_rot: np.ndarray       # (B, 3, 3) ego frame rotation (for mapping outputs out)

    def __len__(self):
        return self.mask.shape[0]

    def take(self, idx) -> "GraphBatch":
        return GraphBatch(self.mask[idx], self.rot[idx], self.trans[idx],
                          self.vecs[idx], self.scalars[idx],
                          self.ego_state[idx], self.ego_rot[idx])


def _canonical_node_arrays(states, frame_rot, frame_trans, cfg: GraphormerConfig):
    """Vector channels of each node expressed through the given frames.

    states: tuple of stacked arrays (pos, vel, att, rates, tgt) with leading
    node axis; frame arrays broadcast against them. Point-like channels are
    stored per cfg.pos_scale meters so the whole feature stays O(1).
    """
    pos, vel, att, rates, tgt = states
    Rt = np.swapaxes(frame_rot, -1, -2)

    def rot(v):
        return np.einsum("...ij,...j->...i", Rt, v)

    p_c = rot(pos - frame_trans) / cfg.pos_scale
    t_c = rot(tgt - frame_trans) / cfg.pos_scale
    v_c = rot(vel) / cfg.vel_scale
    w_world = np.einsum("...ij,...j->...i", att, rates)
    w_c = rot(w_world) / cfg.omega_scale
    att_c = np.einsum("...ij,...jk->...ik", Rt, att)
    cols = att_c.swapaxes(-1, -2)  # three column vectors as channels
    return np.stack([p_c, t_c, v_c, w_c, cols[..., 0, :], cols[..., 1, :], cols[..., 2, :]],
                    axis=-2)


_TRIU = np.triu_indices(RAW_VECTOR_CHANNELS, k=1)


def _invariant_scalars(vecs: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(vecs, axis=-1)
    dots = np.einsum("...ci,...di->...cd", vecs, vecs)
    return np.concatenate([norms, dots[..., _TRIU[0], _TRIU[1]]], axis=-1)


def positional_mask(cfg: GraphormerConfig) -> np.ndarray:
    m = np.zeros(cfg.mult1, dtype=bool)
    m[:N_POSITIONAL] = True
    return m


def pack_graphs(graphs: list, cfg: GraphormerConfig) -> GraphBatch:
    """Pad a list of LocalGraph into batch arrays; frames are node poses
    in equivariant mode and the identity in ablation mode."""
    b = len(graphs)
    n = max(g.num_nodes for g in graphs)
    dt = cfg.np_dtype
    mask = np.zeros((b, n), dtype=bool)
    rot = np.tile(np.eye(3), (b, n, 1, 1))
    trans = np.zeros((b, n, 3))
    pos = np.zeros((b, n, 3))
    vel = np.zeros((b, n, 3))
    att = np.tile(np.eye(3), (b, n, 1, 1))
    rates = np.zeros((b, n, 3))
    tgt = np.zeros((b, n, 3))
    for k, g in enumerate(graphs):
        m = g.num_nodes
        mask[k, :m] = True
        for i, st in enumerate(g.states):
            pos[k, i] = st.position
            vel[k, i] = st.velocity
            att[k, i] = st.attitude
            rates[k, i] = st.body_rates
            tgt[k, i] = st.target
        if cfg.equivariant:
            for i, pose in enumerate(g.poses):
                rot[k, i] = pose.rotation
                trans[k, i] = pose.translation
    vecs = _canonical_node_arrays((pos, vel, att, rates, tgt), rot, trans, cfg)
    scalars = _invariant_scalars(vecs)
    ego_att_c = np.einsum("...ij,...jk->...ik", np.swapaxes(rot[:, 0], -1, -2), att[:, 0])
    ego_state = np.concatenate([
        vecs[:, 0, 0], vecs[:, 0, 2], ego_att_c.reshape(b, 9), vecs[:, 0, 3], vecs[:, 0, 1],
    ], axis=-1)
    return GraphBatch(mask, rot.astype(dt), trans.astype(dt), vecs.astype(dt),
                      scalars.astype(dt), ego_state.astype(dt), rot[:, 0].astype(dt))


# ---------------------------------------------------------------------------
# forward pass


def _relative_frames(batch: GraphBatch):
    """R_rel[b,v,j] = R_v^T R_j and t_rel[b,v,j] = R_v^T (t_j - t_v)."""
    rot, trans = batch.rot, batch.trans
    Rt = np.swapaxes(rot, -1, -2)
    R_rel = np.einsum("bvik,bjkl->bvjil", Rt, rot)
    dt_ = trans[:, None, :, :] - trans[:, :, None, :]
    t_rel = np.einsum("bvik,bvjk->bvji", Rt, dt_)
    return R_rel, t_rel


def _reexpress(V: Tensor, R_rel: np.ndarray, t_rel: np.ndarray, pos_mask: np.ndarray) -> Tensor:
    """Vector channels of every node j mapped into each target frame v:
    (B,N,C,3) with frames (B,V,N,3,3) -> (B,V,N,C,3)."""
    b, n = V.shape[:2]
    Vb = ad.reshape(V, (b, 1, n) + tuple(V.shape[2:]))
    rotated = ad.matmul(Vb, np.swapaxes(R_rel, -1, -2))
    shift = t_rel[:, :, :, None, :] * pos_mask[None, None, None, :, None]
    return ad.add(rotated, Tensor(shift.astype(R_rel.dtype)))


def _channel_mix(V: Tensor, W: Tensor) -> Tensor:
    """Mix vector channels with a scalar matrix, never across x/y/z."""
    perm = tuple(range(V.ndim - 2)) + (V.ndim - 1, V.ndim - 2)
    vt = ad.transpose(V, perm)          # (..., 3, C)
    out = ad.matmul(vt, W)              # (..., 3, C')
    return ad.transpose(out, perm)


def _flatten_feature(S: Tensor, V: Tensor) -> Tensor:
    flat = ad.reshape(V, tuple(V.shape[:-2]) + (V.shape[-2] * 3,))
    return ad.concat([S, flat], axis=-1)


def graphormer_layer(S: Tensor, V: Tensor, params: dict, cfg: GraphormerConfig,
                     layer: int, R_rel: np.ndarray, t_rel: np.ndarray,
                     mask: np.ndarray) -> tuple:
    """One attention + feedforward update; features stay in own frames."""
    b, n = mask.shape
    if n == 0:
        raise ValueError("graphormer_layer: empty graph")
    m0, m1, H = cfg.mult0, cfg.mult1, cfg.heads
    pos_mask = positional_mask(cfg)
    pfx = f"layer{layer}."
    wq, wk = params[pfx + "wq"], params[pfx + "wk"]

    V_in_v = _reexpress(V, R_rel, t_rel, pos_mask)           # (B,N,N,m1,3)
    V_in_v_flat = ad.reshape(V_in_v, (b, n, n, 3 * m1))
    z_own = _flatten_feature(S, V)                            # (B,N,D)

    q = ad.matmul(z_own, wq)                                  # (B,N,D)
    k_s = ad.matmul(S, ad.narrow(wk, 0, 0, m0))               # (B,N,D), frame-free part
    k_v = ad.matmul(V_in_v_flat, ad.narrow(wk, 0, m0, 3 * m1))  # (B,N,N,D)
    k = ad.add(ad.reshape(k_s, (b, 1, n, cfg.width)), k_v)    # (B,N,N,D)

    neg = np.where(mask, 0.0, -1e30).astype(q.dtype)[:, None, :]  # (B,1,N) over source axis

    msg_s = ad.matmul(S, params[pfx + "wv_s"])                # (B,N,m0)
    msg_v = _channel_mix(V_in_v, params[pfx + "wv_v"])        # (B,N,N,m1,3)

    dh = cfg.width // H
    s_h, v_h = m0 // H, m1 // H
    attn_s_parts, attn_v_parts = [], []
    for h in range(H):
        qh = ad.narrow(q, -1, h * dh, dh)                     # (B,N,dh)
        kh = ad.narrow(k, -1, h * dh, dh)                     # (B,N,N,dh)
        logits = ad.matmul(ad.reshape(qh, (b, n, 1, dh)),
                           ad.transpose(kh, (0, 1, 3, 2)))    # (B,N,1,N)
        logits = ad.reshape(logits, (b, n, n))
        if cfg.attn_temperature:
            logits = logits * (1.0 / math.sqrt(dh))
        alpha = ad.softmax(ad.add(logits, Tensor(neg)), axis=-1)  # (B,N,N) over j
        ms = ad.narrow(msg_s, -1, h * s_h, s_h)               # (B,N,s_h)
        part_s = ad.matmul(ad.reshape(alpha, (b, n, 1, n)),
                           ad.reshape(ms, (b, 1, n, s_h)))    # (B,N,1,s_h)
        attn_s_parts.append(ad.reshape(part_s, (b, n, s_h)))
        mv = ad.narrow(msg_v, 3, h * v_h, v_h)                # (B,N,N,v_h,3)
        weighted = ad.mul(mv, ad.reshape(alpha, (b, n, n, 1, 1)))
        attn_v_parts.append(ad.tsum(weighted, axis=2))        # (B,N,v_h,3)
    attn_s = attn_s_parts[0] if H == 1 else ad.concat(attn_s_parts, axis=-1)
    attn_v = attn_v_parts[0] if H == 1 else ad.concat(attn_v_parts, axis=2)

    u_s = ad.add(S, attn_s)
    u_v = ad.add(V, attn_v)

    h_s = ad.tanh(ad.add(ad.matmul(u_s, params[pfx + "mu_s1"]), params[pfx + "mu_s1_bias"]))
    out_s = ad.add(ad.matmul(h_s, params[pfx + "mu_s2"]), params[pfx + "mu_s2_bias"])
    h_v = ad.tanh(_channel_mix(u_v, params[pfx + "mu_v1"]))
    out_v = _channel_mix(h_v, params[pfx + "mu_v2"])

    if cfg.layer_norm:
        out_s = ad.add(ad.mul(ad.layer_norm(out_s), params[pfx + "ln_gamma_s"]),
                       params[pfx + "ln_beta_s"])
        sq = ad.tsum(ad.mul(out_v, out_v), axis=-1)           # (B,N,m1) channel norms^2
        inv = ad.pow_const(ad.add(ad.mean(sq, axis=-1, keepdims=True), 1e-5), -0.5)
        out_v = ad.mul(out_v, ad.reshape(inv, (b, n, 1, 1)))
        gamma = ad.reshape(params[pfx + "ln_gamma_v"], (1, 1, m1, 1))
        out_v = ad.mul(out_v, gamma)

    # geometry channels (relative position / target) persist across layers
    out_v = ad.concat([ad.narrow(V, 2, 0, N_POSITIONAL),
                       ad.narrow(out_v, 2, N_POSITIONAL, m1 - N_POSITIONAL)], axis=2)
    return out_s, out_v


def _lift_nodes(batch: GraphBatch, params: dict, cfg: GraphormerConfig) -> tuple:
    scal = Tensor(batch.scalars)
    vecs = Tensor(batch.vecs)
    S = ad.add(ad.matmul(scal, params["lift.scalars"]), params["lift.scalars_bias"])
    geo = ad.narrow(vecs, 2, 0, N_POSITIONAL)
    learned = _channel_mix(ad.narrow(vecs, 2, N_POSITIONAL, RAW_VECTOR_CHANNELS - N_POSITIONAL),
                           params["lift.vectors"])
    V = ad.concat([geo, learned], axis=2)
    return S, V


def forward_batch(batch: GraphBatch, params: dict, cfg: GraphormerConfig) -> dict:
    """Full policy pass on a packed batch.

    Returns tensors: action mean (B,4), log_std (4,), value (B,),
    trunk output (B, out), pooled embedding (B, width).
    """
    b, n = batch.mask.shape
    R_rel, t_rel = _relative_frames(batch)
    R_rel = R_rel.astype(batch.rot.dtype)
    # positional channels are stored per pos_scale meters, so relative
    # translations re-enter in the same units
    t_rel = (t_rel / cfg.pos_scale).astype(batch.rot.dtype)
    S, V = _lift_nodes(batch, params, cfg)
    for l in range(cfg.layers):
        S, V = graphormer_layer(S, V, params, cfg, l, R_rel, t_rel, batch.mask)

    # equivariant mean embedding: every node re-expressed in the ego frame
    pos_mask = positional_mask(cfg)
    V_in_ego = _reexpress(V, R_rel[:, :1], t_rel[:, :1], pos_mask)  # (B,1,N,m1,3)
    V_in_ego = ad.reshape(V_in_ego, (b, n, cfg.mult1, 3))
    w = (batch.mask / batch.mask.sum(axis=1, keepdims=True)).astype(batch.rot.dtype)
    pooled_v = ad.tsum(ad.mul(V_in_ego, Tensor(w[:, :, None, None])), axis=1)
    pooled_s = ad.tsum(ad.mul(S, Tensor(w[:, :, None])), axis=1)
    pooled = ad.concat([pooled_s, ad.reshape(pooled_v, (b, 3 * cfg.mult1))], axis=-1)

    h = Tensor(batch.ego_state)
    for i in range(len(cfg.trunk_sizes)):
        if i == 2:
            h = ad.concat([h, pooled], axis=-1)
        h = ad.tanh(ad.add(ad.matmul(h, params[f"trunk.w{i}"]), params[f"trunk.b{i}"]))

    a = ad.tanh(ad.add(ad.matmul(h, params["action.w0"]), params["action.b0"]))
    mean = ad.add(ad.matmul(a, params["action.w1"]), params["action.b1"])
    v = ad.tanh(ad.add(ad.matmul(h, params["value.w0"]), params["value.b0"]))
    value = ad.reshape(ad.add(ad.matmul(v, params["value.w1"]), params["value.b1"]), (b,))
    return {"mean": mean, "log_std": params["log_std"], "value": value,
            "trunk": h, "pooled": pooled}


def policy_forward(graph: LocalGraph, params: dict, cfg: GraphormerConfig) -> tuple:
    """Gaussian action parameters for one local graph: (mean (4,), log_std (4,))."""
    out = forward_batch(pack_graphs([graph], cfg), params, cfg)
    return out["mean"].data[0], out["log_std"].data.copy()


def embed(graph: LocalGraph, params: dict, cfg: GraphormerConfig) -> tuple:
    """The equivariant stage's typed output: invariant part (t0,) and
    vector part (t1, 3) mapped to the world frame by the ego rotation."""
    batch = pack_graphs([graph], cfg)
    out = forward_batch(batch, params, cfg)
    flat = out["trunk"].data[0]
    t0 = cfg.embed_type0
    y0 = flat[:t0].copy()
    y1 = flat[t0:].reshape(cfg.embed_type1, 3)
    if cfg.equivariant:
        y1 = y1 @ batch.ego_rot[0].T
    return y0, y1


def transform_local_graph(g: GroupElement, graph: LocalGraph) -> LocalGraph:
    """Apply one rigid motion to every state (and hence frame) in a graph."""
    states = [act_on_state(g, s) for s in graph.states]
    poses = [GroupElement(s.attitude, s.position) for s in states]
    return LocalGraph(graph.ego_index, graph.node_indices.copy(), states, poses)


# ---------------------------------------------------------------------------
# Gaussian machinery + actor-critic bundle

LOG_2PI = math.log(2.0 * math.pi)


def gaussian_log_prob(mean: Tensor, log_std: Tensor, actions: np.ndarray) -> Tensor:
    """Diagonal-Gaussian log density of pre-clip samples, summed over dims."""
    inv_std = ad.exp(ad.neg(log_std))
    z = ad.mul(ad.sub(Tensor(actions.astype(mean.dtype)), mean), inv_std)
    per_dim = ad.add(ad.mul(ad.mul(z, z), 0.5), log_std)
    return ad.neg(ad.add(ad.tsum(per_dim, axis=-1), 0.5 * LOG_2PI * mean.shape[-1]))


def gaussian_entropy(log_std: Tensor) -> Tensor:
    k = log_std.shape[-1]
    return ad.add(ad.tsum(log_std), 0.5 * k * (1.0 + LOG_2PI))


class ActorCritic:
    """Policy + value bundle over the shared equivariant trunk."""

    def __init__(self, cfg: GraphormerConfig, seed: int = 0, params: dict | None = None):
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg, np.random.default_rng(seed))

    def named_parameters(self) -> dict:
        return self.params

    def snapshot(self) -> "ActorCritic":
        frozen = {k: Tensor(v.data.copy(), requires_grad=False) for k, v in self.params.items()}
        return ActorCritic(self.cfg, params=frozen)

    def act(self, graphs: list, rng: np.random.Generator, deterministic: bool = False):
        """Sample raw actions for a batch of graphs (no tape).

        Returns (actions (B,4), log_probs (B,), values (B,))."""
        batch = pack_graphs(graphs, self.cfg)
        out = forward_batch(batch, self.params, self.cfg)
        mean = out["mean"].data
        log_std = out["log_std"].data
        if deterministic:
            u = mean.copy()
        else:
            u = mean + np.exp(log_std) * rng.standard_normal(mean.shape).astype(mean.dtype)
        z = (u - mean) * np.exp(-log_std)
        logp = -0.5 * (z * z).sum(axis=-1) - log_std.sum() - 0.5 * LOG_2PI * mean.shape[-1]
        return u.astype(np.float64), logp.astype(np.float64), out["value"].data.astype(np.float64)

    def evaluate(self, batch: GraphBatch, actions: np.ndarray):
        """Tape-recorded log-probs, entropy, and values for PPO updates."""
        out = forward_batch(batch, self.params, self.cfg)
        logp = gaussian_log_prob(out["mean"], out["log_std"], actions)
        entropy = gaussian_entropy(out["log_std"])
        return logp, entropy, out["value"]

    def values(self, graphs: list) -> np.ndarray:
        batch = pack_graphs(graphs, self.cfg)
        return forward_batch(batch, self.params, self.cfg)["value"].data.astype(np.float64)

    def pack(self, graphs: list) -> GraphBatch:
        return pack_graphs(graphs, self.cfg)

    @staticmethod
    def take(batch: GraphBatch, idx) -> GraphBatch:
        return batch.take(idx)

    # -- persistence ---------------------------------------------------------

    def save(self, path) -> None:
        from .autodiff import save_checkpoint
        save_checkpoint(path, self.params)
        with open(str(path) + ".json", "w") as fh:
            fh.write(self.cfg.to_json())

    @staticmethod
    def load(path) -> "ActorCritic":
        from .autodiff import load_checkpoint
        with open(str(path) + ".json") as fh:
            cfg = GraphormerConfig.from_json(fh.read())
        raw = load_checkpoint(path)
        ref = init_params(cfg, np.random.default_rng(0))
        if set(raw) != set(ref):
            missing = set(ref) ^ set(raw)
            raise ValueError(f"checkpoint does not match configuration; mismatched tensors: {sorted(missing)}")
        params = {}
        for k, v in raw.items():
            if v.shape != ref[k].shape:
                raise ValueError(f"checkpoint tensor {k!r} has shape {v.shape}, expected {ref[k].shape}")
            params[k] = Tensor(v.astype(cfg.np_dtype), requires_grad=True)
        return ActorCritic(cfg, params=params)
