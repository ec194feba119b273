"""The full set of trainable networks for both stages, with stage/freeze metadata."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import networks as nn
from .autodiff import AdamState, Tensor

SHARED_ROLES = ("shared_encoder", "shared_global", "shared_local")
EXCLUSIVE_ROLES = ("exclusive_encoder", "exclusive_global", "exclusive_local")
DISC_ROLES = ("discriminator",)
ROLES = SHARED_ROLES + EXCLUSIVE_ROLES + DISC_ROLES
DOMAINS = ("x", "y")

# optimizer name -> roles it updates
OPTIMIZER_ROLES = {
    "shared": SHARED_ROLES,
    "exclusive": EXCLUSIVE_ROLES,
    "discriminator": DISC_ROLES,
}


@dataclass
class ModelBundle:
    image_shape: tuple[int, int, int]
    shared_dim: int
    exclusive_dim: int
    weight_sharing: bool
    nets: dict[str, nn.Params]
    stage: int = 0
    optim: dict[str, AdamState] = field(default_factory=dict)

    @classmethod
    def create(cls, image_shape=(32, 32, 3), shared_dim=64, exclusive_dim=8,
               weight_sharing=False, seed=0, lr=1e-4) -> "ModelBundle":
        image_shape = tuple(int(v) for v in image_shape)
        sh_cfg = nn.EncoderConfig(image_shape, shared_dim)
        ex_cfg = nn.EncoderConfig(image_shape, exclusive_dim)
        fshape = sh_cfg.feature_shape
        r_dim = shared_dim + exclusive_dim
        builders = {
            "shared_encoder": lambda rng: nn.init_encoder(sh_cfg, rng),
            "shared_global": lambda rng: nn.init_global_scorer(fshape, shared_dim, rng),
            "shared_local": lambda rng: nn.init_local_scorer(fshape[2], shared_dim, rng),
            "exclusive_encoder": lambda rng: nn.init_encoder(ex_cfg, rng),
            "exclusive_global": lambda rng: nn.init_global_scorer(fshape, r_dim, rng),
            "exclusive_local": lambda rng: nn.init_local_scorer(fshape[2], r_dim, rng),
            "discriminator": lambda rng: nn.init_discriminator(shared_dim, exclusive_dim, rng),
        }
        nets: dict[str, nn.Params] = {}
        for role in ROLES:
            for d in DOMAINS:
                key = f"{role}_{d}"
                if weight_sharing and d == "y":
                    nets[key] = nets[f"{role}_x"]
                else:
                    nets[key] = builders[role](nn.network_rng(seed, key))
        optim = {name: AdamState(lr=lr) for name in OPTIMIZER_ROLES}
        return cls(image_shape, shared_dim, exclusive_dim, bool(weight_sharing), nets, 0, optim)

    def net(self, role: str, domain: str) -> nn.Params:
        return self.nets[f"{role}_{domain}"]

    def unique_net_keys(self, roles=ROLES) -> list[str]:
        keys, seen = [], set()
        for role in roles:
            for d in DOMAINS:
                key = f"{role}_{d}"
                if id(self.nets[key]) not in seen:
                    seen.add(id(self.nets[key]))
                    keys.append(key)
        return keys

    def flat_params(self, roles=ROLES) -> dict[str, Tensor]:
        """``net_key/param`` -> tensor, each storage listed once."""
        return {f"{k}/{p}": t for k in self.unique_net_keys(roles) for p, t in self.nets[k].items()}

    def trainable_networks(self, optimizer: str) -> list[str]:
        return [k for k in self.unique_net_keys(OPTIMIZER_ROLES[optimizer])
                if any(t.requires_grad for t in self.nets[k].values())]

    def set_trainable(self, roles, flag: bool) -> None:
        for k in self.unique_net_keys(roles):
            for t in self.nets[k].values():
                t.requires_grad = flag

    def freeze_shared(self) -> None:
        self.set_trainable(SHARED_ROLES, False)

    @property
    def frozen(self) -> set[str]:
        return {k for k in self.unique_net_keys() if not any(t.requires_grad for t in self.nets[k].values())}

    def checksum(self, roles=ROLES) -> str:
        h = hashlib.sha256()
        for name, t in self.flat_params(roles).items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(t.data).tobytes())
        return h.hexdigest()
