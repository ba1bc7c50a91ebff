"""Global affine modulation of fused features.

Each modality stream owns a small head that turns the global average
descriptor of the *original* (pre-pruning) features into a per-channel
scale and shift: [gamma, beta] = conv1x1(relu(conv1x1(descriptor))).
The fused stream is then modulated as out = fuse * (1 + gamma) + beta.
The final projection starts at zero, so an untrained module is an exact
identity.
"""

from __future__ import annotations

from . import autodiff as ad
from .autodiff import DimensionError
from .blocks import Conv1x1


def global_descriptor(features):
    """(n,c,h,w) -> (n,c,1,1) spatial mean."""
    return ad.global_avg_pool(features)


def modulate(fused, gamma, beta):
    """fused * (1 + gamma) + beta with spatial broadcast."""
    if gamma.shape[1] != fused.shape[1] or beta.shape[1] != fused.shape[1]:
        raise DimensionError(
            f"modulation params for {gamma.shape[1]} channels, features have {fused.shape[1]}")
    return ad.add(ad.mul(fused, ad.add(gamma, 1.0)), beta)


class GlobalAffineModulation:
    def __init__(self, store, name, channels, init):
        self.channels = channels
        self.fc1 = Conv1x1(store, f"{name}.fc1", channels, channels, init)
        self.fc2 = Conv1x1(store, f"{name}.fc2", channels, 2 * channels, init, zero=True)

    def affine_params(self, descriptor):
        """Descriptor (n,c,1,1) -> (gamma, beta), each (n,c,1,1)."""
        both = self.fc2(ad.relu(self.fc1(descriptor)))
        if both.shape[1] != 2 * self.channels:
            raise ad.ContractError(
                f"affine head must emit {2 * self.channels} channels, got {both.shape[1]}")
        return ad.split_channels(both, self.channels)

    def __call__(self, fused, original):
        gamma, beta = self.affine_params(global_descriptor(original))
        return modulate(fused, gamma, beta)
