"""Tour of the three channel-manipulation modules on tiny tensors.

Shows the ranking weights and kept channels of the pruning module, the
per-channel scale/shift of affine modulation, and the text-driven
permutation of the perturbation module.
"""

import numpy as np

from mmfuse.autodiff import ParamStore, Tape, constant
from mmfuse.blocks import Initializer
from mmfuse.modulation import GlobalAffineModulation, global_descriptor
from mmfuse.perturbation import TextGuidedPerturbation, perturbation_index
from mmfuse.providers import StubSemanticProvider, StubTextProvider
from mmfuse.pruning import SemanticChannelPruning


def main():
    rng = np.random.default_rng(0)
    store = ParamStore()
    init = Initializer(seed=0)

    # --- channel pruning: rank, keep 70%, re-expand, partition -----------
    pruning = SemanticChannelPruning(store, "prune", 8, init, keep_ratio=0.7)
    x = rng.uniform(0, 1, (1, 8, 6, 6)).astype(np.float32)
    embedding = StubSemanticProvider(seed=0).semantic_vector(x)
    plan = {}
    with Tape():
        stream_a, stream_b, selection = pruning(constant(x), embedding, plan)
    print("pruning ranks channels:", np.round(selection.ranking_weights, 3))
    print(f"  kept {len(selection.kept)}/8 -> {selection.kept}")
    print(f"  partitioned into {stream_a.value.shape} + {stream_b.value.shape}")

    # --- affine modulation: descriptor -> (scale, shift) ------------------
    modulation = GlobalAffineModulation(store, "affine", 4, init)
    original = rng.uniform(0, 1, (1, 4, 6, 6)).astype(np.float32)
    fused = rng.uniform(0, 1, (1, 4, 6, 6)).astype(np.float32)
    with Tape():
        descriptor = global_descriptor(constant(original))
        gamma, beta = modulation.affine_params(descriptor)
        out = modulation(constant(fused), constant(original))
    print("\nmodulation descriptor:", np.round(descriptor.value.reshape(-1), 3))
    print("  fresh module is an identity:", bool(np.array_equal(out.value, fused)))
    print("  gamma/beta start at zero:", float(np.abs(gamma.value).max()),
          float(np.abs(beta.value).max()))

    # --- perturbation: text-derived channel shuffle -----------------------
    perturbation = TextGuidedPerturbation(store, "mix", 8, 2, init, keep_ratio=0.5)
    text = StubTextProvider(seed=0)
    fa = rng.uniform(0, 1, (1, 4, 4, 4)).astype(np.float32)
    fb = rng.uniform(0, 1, (1, 4, 4, 4)).astype(np.float32)
    print()
    for prompt in ("infrared and visible image fusion", "medical image fusion"):
        with Tape():
            guide = perturbation.guide_weights(text.text_vector(prompt))
        perm = perturbation_index(guide.value[0]).perm
        print(f"perturbation for {prompt!r}: {perm}")


if __name__ == "__main__":
    main()
