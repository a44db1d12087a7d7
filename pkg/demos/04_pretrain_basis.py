"""Learn a rotated filter basis offline, then inspect what it learned.

Only the orientations below one quarter turn are free parameters; the rest
are exact 90 degree copies. Training drives three losses: the rotated-filter
commutation gap, row orthonormality, and image reconstruction through the
transposed filters. The 45 degree probe below is the honest summary number:
it compares convolve-then-rotate against rotate-then-convolve.
"""

from rotoconv import save_basis
from rotoconv.basis import orthogonality_defect, render_basis_pgm
from rotoconv.datasets import synthetic_image_corpus
from rotoconv.pretrain import PretrainConfig, pretrain

corpus = synthetic_image_corpus(256, 20, seed=0)
config = PretrainConfig(n_elements=9, partial=True, epochs=120, batch_size=32,
                        learning_rate=5e-3, loss_weights=(10.0, 1.0, 1.0), seed=0)
result = pretrain(corpus, config)

print("epoch  L_equiv  L_orth  L_rec")
for row in result.epochs[::20]:
    print(f"{row['epoch']:5d}  {row['L_equiv']:7.3f}  {row['L_orth']:6.3f}  "
          f"{row['L_rec']:6.3f}")

ratio = result.final_equiv_45 / result.initial_equiv_45
print(f"\n45 degree probe: {result.initial_equiv_45:.3f} -> "
      f"{result.final_equiv_45:.3f}  (x{ratio:.2f})")
worst = max(orthogonality_defect(result.basis, r) for r in range(8))
print(f"worst per-orientation orthogonality defect: {worst:.3f}")

save_basis(result.basis, "learned_partial.rcbs")
render_basis_pgm(result.basis, "learned_partial.pgm")
print("\nwrote learned_partial.rcbs and learned_partial.pgm")
print("(rows of the image are orientations; rows 2/4/6 are exact turns of row 0)")
