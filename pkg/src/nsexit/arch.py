"""Model variants with intermediate mask exits.

Seven configurations share one 6-stage backbone layout (FC, GRU, GRU, FC,
FC, FC). The dense family (baseline / pretrain_*) is a plain chain whose
exits read the first 257 activations of a stage. The split/concat families
give every stage except the last a mask head of width 257 plus a narrow
auxiliary layer that carries features forward; in the concat family the
auxiliary layer also sees the previous mask layer's output.

Exit masks come from sigmoid on FC pre-activations and from the affine map
0.5*(1+h) on GRU hidden states, so they always land in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from nsexit.dsp import N_BINS
from nsexit.nn import FcLayer, GruLayer, ParamTensor, init_tensor, sigmoid

STAGE_KINDS = ("fc", "gru", "gru", "fc", "fc", "fc")

DENSE_DIMS_FULL = (400, 400, 400, 600, 600, N_BINS)
# desk-scale: widths/4, clamped so every exit still has >= 257 features
DENSE_DIMS_TINY = (N_BINS,) * 6
AUX_DIM_FULL = 128
AUX_DIM_TINY = 32


@dataclass(frozen=True)
class VariantSpec:
    name: str
    family: str          # "dense" | "split" | "concat"
    exits: tuple[int, ...]


VARIANTS = {
    "baseline": VariantSpec("baseline", "dense", (5,)),
    "pretrain_6exits": VariantSpec("pretrain_6exits", "dense", (0, 1, 2, 3, 4, 5)),
    "pretrain_4exits": VariantSpec("pretrain_4exits", "dense", (0, 1, 3, 5)),
    "split_layers_6exits": VariantSpec("split_layers_6exits", "split", (0, 1, 2, 3, 4, 5)),
    "split_layers_4exits": VariantSpec("split_layers_4exits", "split", (0, 1, 3, 5)),
    "concat_layers_6exits": VariantSpec("concat_layers_6exits", "concat", (0, 1, 2, 3, 4, 5)),
    "concat_layers_4exits": VariantSpec("concat_layers_4exits", "concat", (0, 1, 3, 5)),
}


def extract_mask(stage_output: np.ndarray, stage_kind: str) -> np.ndarray:
    """Mask from the first 257 stage values: sigmoid for FC pre-activations,
    0.5*(1+h) for GRU hidden states."""
    if stage_output.shape[-1] < N_BINS:
        raise ValueError(f"stage width {stage_output.shape[-1]} < {N_BINS} mask bins")
    sub = stage_output[..., :N_BINS]
    if stage_kind == "fc":
        return sigmoid(sub)
    if stage_kind == "gru":
        return 0.5 * (1.0 + sub)
    raise ValueError(f"unknown stage kind {stage_kind!r}")


@dataclass
class Stage:
    index: int
    kind: str
    phi: FcLayer | GruLayer
    aux: FcLayer | GruLayer | None = None


class ModelGraph:
    """One built variant: stages, exit set, and graph forward/backward."""

    def __init__(self, spec: VariantSpec, stages: list[Stage], meta: dict):
        self.spec = spec
        self.stages = stages
        self.meta = meta           # variant, stage_dims, aux_dim, exit_activation, seed
        self.exit_activation = meta["exit_activation"]

    @property
    def variant(self) -> str:
        return self.spec.name

    @property
    def exits(self) -> tuple[int, ...]:
        return self.spec.exits

    def params(self) -> list[ParamTensor]:
        out = []
        for st in self.stages:
            out.extend(st.phi.params())
            if st.aux is not None:
                out.extend(st.aux.params())
        return out

    def param_count(self) -> int:
        return sum(t.size for t in self.params())

    def init_params(self, seed: int):
        for t in self.params():
            init_tensor(t, seed)

    # ------------------------------------------------------------------ forward

    def _fc_mask(self, tape: dict, stage_index: int) -> np.ndarray:
        # the last stage's own sigmoid is the mask; the flag affects earlier FC exits
        if self.exit_activation == "postact" and stage_index != 5:
            return extract_mask(tape["y"], "fc")
        return extract_mask(tape["z"], "fc")

    def _run(self, features: np.ndarray, upto: int, collect, want_tape: bool,
             state: dict | None = None):
        """Compute stages 0..upto, extracting masks for stage indices in `collect`.

        The stage-i auxiliary layer is skipped when i == upto (it only feeds
        later stages). `state` optionally carries GRU hidden states between
        calls for frame-by-frame streaming.
        """
        spec = self.spec
        masks: dict[int, np.ndarray] = {}
        stage_tapes: list[dict] = []

        def fwd(layer, x, key):
            if isinstance(layer, GruLayer):
                h0 = None if state is None else state.get(key)
                out, tape = layer.forward(x, h0=h0, want_tape=want_tape)
                if state is not None:
                    state[key] = out[..., -1, :].copy()
                return out, tape
            return layer.forward(x, want_tape=want_tape)

        if spec.family == "dense":
            cur = features
            for i in range(upto + 1):
                st = self.stages[i]
                out, tape = fwd(st.phi, cur, (i, "phi"))
                if i in collect:
                    masks[i] = extract_mask(out, "gru") if st.kind == "gru" \
                        else self._fc_mask(tape, i)
                stage_tapes.append({"phi": tape, "aux": None})
                cur = out
        else:
            phi_out = None
            star_out = None
            for i in range(upto + 1):
                st = self.stages[i]
                pin = features if i == 0 else np.concatenate([phi_out, star_out], axis=-1)
                out, tape = fwd(st.phi, pin, (i, "phi"))
                if i in collect:
                    masks[i] = extract_mask(out, "gru") if st.kind == "gru" \
                        else self._fc_mask(tape, i)
                entry = {"phi": tape, "aux": None}
                if st.aux is not None and i < upto:
                    if i == 0:
                        sin = features
                    elif spec.family == "concat":
                        sin = pin
                    else:
                        sin = star_out
                    star_out, entry["aux"] = fwd(st.aux, sin, (i, "aux"))
                phi_out = out
                stage_tapes.append(entry)

        tapes = {"stage_tapes": stage_tapes, "masks": masks, "upto": upto}
        return masks, tapes

    def forward_all_exits(self, features: np.ndarray, want_tape: bool = True):
        """All exit masks in one pass; returns (masks dict, tapes)."""
        masks, tapes = self._run(features, upto=5, collect=set(self.exits),
                                 want_tape=want_tape)
        return masks, tapes

    def forward_to_exit(self, features: np.ndarray, exit_i: int,
                        state: dict | None = None) -> np.ndarray:
        """Truncated pass: stages 0..exit_i only, stage-exit_i aux skipped."""
        if exit_i not in self.exits:
            raise ValueError(f"exit {exit_i} not available in {self.variant} "
                             f"(exits {self.exits})")
        masks, _ = self._run(features, upto=exit_i, collect={exit_i},
                             want_tape=False, state=state)
        return masks[exit_i]

    def forward_tapes_to_exit(self, features: np.ndarray, exit_i: int):
        """forward_to_exit with tapes kept, for stage-wise training."""
        if exit_i not in self.exits:
            raise ValueError(f"exit {exit_i} not available in {self.variant}")
        return self._run(features, upto=exit_i, collect={exit_i}, want_tape=True)

    # ----------------------------------------------------------------- backward

    def backward(self, tapes: dict, mask_grads: dict[int, np.ndarray]):
        """Accumulate parameter grads from per-exit mask gradients."""
        upto = tapes["upto"]
        stage_tapes = tapes["stage_tapes"]
        masks = tapes["masks"]
        for i in mask_grads:
            if i > upto or masks.get(i) is None:
                raise ValueError(f"no tape for exit {i}")

        def out_shape(st, tape):
            """Zeros shaped like the stage's propagated output (unbatched view)."""
            if st.kind == "gru":
                h = tape["h_seq"]
                return np.zeros_like(h[0] if tape["squeeze"] else h)
            return np.zeros_like(tape["y"])

        def exit_contrib(i, st, tape):
            """(dy_extra, d_preact) pair for the stage's phi layer."""
            g = mask_grads.get(i)
            if g is None:
                return None, None
            if st.kind == "gru":
                dh = out_shape(st, tape)
                dh[..., :N_BINS] += 0.5 * g
                return dh, None
            m = masks[i]
            if self.exit_activation == "postact" and i != 5:
                dy = np.zeros_like(tape["y"])
                dy[..., :N_BINS] += g * m * (1.0 - m)
                return dy, None
            dz = np.zeros_like(tape["z"])
            dz[..., :N_BINS] += g * m * (1.0 - m)
            return None, dz

        if self.spec.family == "dense":
            g_out = None
            for i in range(upto, -1, -1):
                st = self.stages[i]
                tape = stage_tapes[i]["phi"]
                dy_extra, d_preact = exit_contrib(i, st, tape)
                if st.kind == "gru":
                    dh = g_out if g_out is not None else out_shape(st, tape)
                    if dy_extra is not None:
                        dh = dh + dy_extra
                    g_out = st.phi.backward(tape, dh)
                else:
                    dy = g_out if g_out is not None else np.zeros_like(tape["y"])
                    if dy_extra is not None:
                        dy = dy + dy_extra
                    g_out = st.phi.backward(tape, dy, d_preact=d_preact)
            return

        # split / concat graphs
        g_phi = [None] * 6
        g_star = [None] * 6

        def add(buf, i, val):
            buf[i] = val if buf[i] is None else buf[i] + val

        for i in range(upto, -1, -1):
            st = self.stages[i]
            entry = stage_tapes[i]
            tape = entry["phi"]
            dy_extra, d_preact = exit_contrib(i, st, tape)
            gp = g_phi[i]
            if st.kind == "gru":
                dh = gp if gp is not None else out_shape(st, tape)
                if dy_extra is not None:
                    dh = dh + dy_extra
                dx_phi = st.phi.backward(tape, dh)
            else:
                dy = gp if gp is not None else np.zeros_like(tape["y"])
                if dy_extra is not None:
                    dy = dy + dy_extra
                dx_phi = st.phi.backward(tape, dy, d_preact=d_preact)
            if i > 0:
                add(g_phi, i - 1, dx_phi[..., :N_BINS])
                add(g_star, i - 1, dx_phi[..., N_BINS:])

            if entry["aux"] is not None and g_star[i] is not None:
                dx_star = st.aux.backward(entry["aux"], g_star[i])
                if i > 0:
                    if self.spec.family == "concat":
                        add(g_phi, i - 1, dx_star[..., :N_BINS])
                        add(g_star, i - 1, dx_star[..., N_BINS:])
                    else:
                        add(g_star, i - 1, dx_star)


# ---------------------------------------------------------------------- builders

def _dense_stages(stage_dims, dtype) -> list[Stage]:
    stages = []
    in_dim = N_BINS
    for i, (kind, width) in enumerate(zip(STAGE_KINDS, stage_dims)):
        name = f"stage{i}.phi"
        if kind == "gru":
            layer = GruLayer(in_dim, width, name=name, dtype=dtype)
        else:
            act = "sigmoid" if i == 5 else "relu"
            layer = FcLayer(in_dim, width, act, name=name, dtype=dtype)
        stages.append(Stage(i, kind, layer))
        in_dim = width
    return stages


def _split_stages(aux_dim, family, dtype) -> list[Stage]:
    stages = []
    for i, kind in enumerate(STAGE_KINDS):
        phi_in = N_BINS if i == 0 else N_BINS + aux_dim
        name = f"stage{i}.phi"
        if kind == "gru":
            phi = GruLayer(phi_in, N_BINS, name=name, dtype=dtype)
        else:
            act = "sigmoid" if i == 5 else "relu"
            phi = FcLayer(phi_in, N_BINS, act, name=name, dtype=dtype)
        aux = None
        if i < 5:
            if i == 0:
                aux_in = N_BINS
            elif family == "concat":
                aux_in = N_BINS + aux_dim
            else:
                aux_in = aux_dim
            aname = f"stage{i}.aux"
            if kind == "gru":
                aux = GruLayer(aux_in, aux_dim, name=aname, dtype=dtype)
            else:
                aux = FcLayer(aux_in, aux_dim, "relu", name=aname, dtype=dtype)
        stages.append(Stage(i, kind, phi, aux))
    return stages


def build_model(variant: str, seed: int = 0, profile: str = "full",
                exit_activation: str = "preact", dtype=np.float32) -> ModelGraph:
    """Construct and initialise one of the seven variants.

    profile "full" uses the published layer widths; "tiny" is the desk-scale
    configuration (hidden widths / 4, floored at the 257 mask bins).
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}")
    if profile not in ("full", "tiny"):
        raise ValueError(f"unknown profile {profile!r}")
    if exit_activation not in ("preact", "postact"):
        raise ValueError(f"exit_activation must be 'preact' or 'postact'")
    spec = VARIANTS[variant]
    if spec.family == "dense":
        stage_dims = DENSE_DIMS_FULL if profile == "full" else DENSE_DIMS_TINY
        aux_dim = None
        stages = _dense_stages(stage_dims, dtype)
    else:
        stage_dims = (N_BINS,) * 6
        aux_dim = AUX_DIM_FULL if profile == "full" else AUX_DIM_TINY
        stages = _split_stages(aux_dim, spec.family, dtype)
    meta = {"variant": variant, "stage_dims": list(stage_dims), "aux_dim": aux_dim,
            "exit_activation": exit_activation, "seed": seed, "profile": profile}
    model = ModelGraph(spec, stages, meta)
    model.init_params(seed)
    return model


def build_model_from_meta(meta: dict, dtype=np.float32) -> ModelGraph:
    """Rebuild a model skeleton from checkpoint metadata (values not loaded)."""
    spec = VARIANTS[meta["variant"]]
    if spec.family == "dense":
        stages = _dense_stages(tuple(meta["stage_dims"]), dtype)
    else:
        stages = _split_stages(meta["aux_dim"], spec.family, dtype)
    return ModelGraph(spec, stages, dict(meta))


# ------------------------------------------------------------------- submodels

class SubModel:
    """View of stages 0..stage_i plus the stage_i exit head (shared storage)."""

    def __init__(self, model: ModelGraph, stage_i: int):
        if stage_i not in model.exits:
            raise ValueError(f"stage {stage_i} is not an exit of {model.variant}")
        self.model = model
        self.stage_i = stage_i

    def tensors(self) -> list[ParamTensor]:
        out = []
        for st in self.model.stages[:self.stage_i + 1]:
            out.extend(st.phi.params())
            if st.aux is not None and st.index < self.stage_i:
                out.extend(st.aux.params())
        return out

    def forward(self, features: np.ndarray):
        return self.model.forward_tapes_to_exit(features, self.stage_i)

    def backward(self, tapes: dict, mask_grad: np.ndarray):
        self.model.backward(tapes, {self.stage_i: mask_grad})

    def freeze(self):
        for t in self.tensors():
            t.frozen = True


def slice_submodel(model: ModelGraph, stage_i: int) -> SubModel:
    return SubModel(model, stage_i)
